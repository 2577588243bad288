#pragma once

#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include <json.hpp>

namespace floodgen {

// Shapes below use N for the batch. Masks are float tensors [N, 1, H, W]
// holding 0 or 1; 1 marks floodable pixels.

// Mean over kept pixels of the channel-averaged L1 distance. Kept pixels have
// weight 1 where mask = 0 and inside_weight where mask = 1. Returns exactly 0
// when the total weight is 0.
torch::Tensor masked_cycle_loss(const torch::Tensor& x, const torch::Tensor& x_cycled,
                                const torch::Tensor& mask, double inside_weight = 0.0);

// Cross-entropy of softmax(seg_translated) against argmax(seg_source), with
// the same weighting as masked_cycle_loss. Scores are logits [N, K, H, W].
torch::Tensor semantic_consistency_loss(const torch::Tensor& seg_source,
                                        const torch::Tensor& seg_translated,
                                        const torch::Tensor& mask, double inside_weight = 0.0);

// Least-squares GAN objectives averaged over discriminator scales.
torch::Tensor gan_generator_loss(const std::vector<torch::Tensor>& fake_scores);
torch::Tensor gan_discriminator_loss(const std::vector<torch::Tensor>& real_scores,
                                     const std::vector<torch::Tensor>& fake_scores);

struct ReconstructionLosses {
  torch::Tensor image, content, style;
};
ReconstructionLosses reconstruction_losses(const torch::Tensor& x, const torch::Tensor& x_recon,
                                           const torch::Tensor& c, const torch::Tensor& c_recon,
                                           const torch::Tensor& s, const torch::Tensor& s_recon);

// Mean L1; throws DimensionMismatch on differing shapes.
torch::Tensor mean_l1(const torch::Tensor& a, const torch::Tensor& b);

inline constexpr double kProbClamp = 1e-7;

// Binary cross-entropy of prob_sim against is_sim (1 = simulated), with the
// probability clamped to [1e-7, 1 - 1e-7].
torch::Tensor domain_adv_loss(const torch::Tensor& prob_sim, const torch::Tensor& is_sim);

// Mean pixel-wise cross-entropy; labels [N, H, W] int64. An empty batch gives 0.
torch::Tensor seg_supervised_loss(const torch::Tensor& logits, const torch::Tensor& labels);

// Mean squared error over pixels where sky_mask = 0; 0 when every pixel is sky.
torch::Tensor height_l2_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                             const torch::Tensor& sky_mask);

struct LossWeights {
  double gan = 1.0;
  double recon_image = 10.0;
  double recon_content = 1.0;
  double recon_style = 1.0;
  double cycle_masked = 10.0;
  double semantic_consistency = 1.0;
  double domain_adv = 0.5;
  double seg_sup = 1.0;
  double height_l2 = 1.0;

  double of(const std::string& name) const;  // throws InvalidConfig on unknown names
  static LossWeights from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Generator-side terms that enter the total, in reporting order.
inline const std::vector<std::string> kLossNames = {
    "gan_A",        "gan_B",        "recon_image",          "recon_content", "recon_style",
    "cycle_masked", "semantic_consistency", "domain_adv", "seg_sup",       "height_l2"};

struct LossReport {
  double gan_A = 0, gan_B = 0, recon_image = 0, recon_content = 0, recon_style = 0,
         cycle_masked = 0, semantic_consistency = 0, domain_adv = 0, seg_sup = 0, height_l2 = 0;
  double total = 0;
  // Discriminator objective of the same step; reported, not part of total.
  double disc = 0;
  double grl_lambda = 0;

  double get(const std::string& name) const;
  void set(const std::string& name, double value);
  nlohmann::json to_json(long step) const;
};

// Weighted sum of the named parts; throws NonFiniteLoss naming the first
// non-finite part.
double total_loss(const LossReport& parts, const LossWeights& weights);

// Same for tensors: returns Σ weight · term and records each value in report.
torch::Tensor weighted_total(const std::vector<std::pair<std::string, torch::Tensor>>& terms,
                             const LossWeights& weights, LossReport& report);

}  // namespace floodgen
