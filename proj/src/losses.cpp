#include "floodgen/losses.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "floodgen/errors.hpp"

namespace floodgen {

using torch::Tensor;

namespace {

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    throw DimensionMismatch(std::string(what) + ": " + shape_str(a) + " vs " + shape_str(b));
  }
}

void require_mask(const Tensor& mask, const Tensor& like, const char* what) {
  if (mask.dim() != 4 || mask.size(1) != 1 || mask.size(0) != like.size(0) ||
      mask.size(2) != like.size(2) || mask.size(3) != like.size(3)) {
    throw DimensionMismatch(std::string(what) + ": mask " + shape_str(mask) +
                            " does not match " + shape_str(like));
  }
}

// Weighted mean of per-pixel values [N, H, W]. Pixels with zero weight are
// dropped through where(), so their values cannot leak in, not even NaN.
Tensor weighted_pixel_mean(const Tensor& per_pixel, const Tensor& mask, double inside_weight) {
  auto m = mask.squeeze(1).to(per_pixel.dtype());
  auto w = (1.0 - m) + inside_weight * m;
  auto kept = w > 0;
  auto contrib = torch::where(kept, w * per_pixel, torch::zeros_like(per_pixel));
  auto denom = w.sum();
  if (denom.item<double>() <= 0.0) return contrib.sum() * 0.0;
  return contrib.sum() / denom;
}

}  // namespace

Tensor masked_cycle_loss(const Tensor& x, const Tensor& x_cycled, const Tensor& mask,
                         double inside_weight) {
  require_same(x, x_cycled, "masked_cycle_loss");
  require_mask(mask, x, "masked_cycle_loss");
  auto per_pixel = (x - x_cycled).abs().mean(1);
  return weighted_pixel_mean(per_pixel, mask, inside_weight);
}

Tensor semantic_consistency_loss(const Tensor& seg_source, const Tensor& seg_translated,
                                 const Tensor& mask, double inside_weight) {
  require_same(seg_source, seg_translated, "semantic_consistency_loss");
  require_mask(mask, seg_source, "semantic_consistency_loss");
  auto labels = seg_source.detach().argmax(1);
  auto logp = torch::log_softmax(seg_translated, 1);
  auto per_pixel = -logp.gather(1, labels.unsqueeze(1)).squeeze(1);
  return weighted_pixel_mean(per_pixel, mask, inside_weight);
}

Tensor gan_generator_loss(const std::vector<Tensor>& fake_scores) {
  if (fake_scores.empty()) throw DimensionMismatch("gan_generator_loss: no score maps");
  Tensor sum;
  for (const auto& f : fake_scores) {
    auto term = (f - 1.0).pow(2).mean();
    sum = sum.defined() ? sum + term : term;
  }
  return sum / static_cast<double>(fake_scores.size());
}

Tensor gan_discriminator_loss(const std::vector<Tensor>& real_scores,
                              const std::vector<Tensor>& fake_scores) {
  if (real_scores.size() != fake_scores.size() || real_scores.empty()) {
    throw DimensionMismatch("gan_discriminator_loss: scale counts differ");
  }
  Tensor sum;
  for (std::size_t i = 0; i < real_scores.size(); ++i) {
    auto term = (real_scores[i] - 1.0).pow(2).mean() + fake_scores[i].pow(2).mean();
    sum = sum.defined() ? sum + term : term;
  }
  return sum / static_cast<double>(real_scores.size());
}

Tensor mean_l1(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mean_l1");
  return (a - b).abs().mean();
}

ReconstructionLosses reconstruction_losses(const Tensor& x, const Tensor& x_recon, const Tensor& c,
                                           const Tensor& c_recon, const Tensor& s,
                                           const Tensor& s_recon) {
  return {mean_l1(x, x_recon), mean_l1(c, c_recon), mean_l1(s, s_recon)};
}

Tensor domain_adv_loss(const Tensor& prob_sim, const Tensor& is_sim) {
  require_same(prob_sim, is_sim, "domain_adv_loss");
  auto p = prob_sim.clamp(kProbClamp, 1.0 - kProbClamp);
  auto y = is_sim.to(p.dtype());
  return -(y * p.log() + (1.0 - y) * (1.0 - p).log()).mean();
}

Tensor seg_supervised_loss(const Tensor& logits, const Tensor& labels) {
  if (logits.dim() != 4 || labels.dim() != 3 || logits.size(0) != labels.size(0) ||
      logits.size(2) != labels.size(1) || logits.size(3) != labels.size(2)) {
    throw DimensionMismatch("seg_supervised_loss: logits " + shape_str(logits) + " vs labels " +
                            shape_str(labels));
  }
  if (labels.numel() == 0) return logits.sum() * 0.0;
  const auto lo = labels.min().item<int64_t>();
  const auto hi = labels.max().item<int64_t>();
  if (lo < 0 || hi >= logits.size(1)) {
    throw LabelOutOfRange("label " + std::to_string(lo < 0 ? lo : hi) + " outside [0, " +
                          std::to_string(logits.size(1) - 1) + "]");
  }
  auto logp = torch::log_softmax(logits, 1);
  return -logp.gather(1, labels.unsqueeze(1)).mean();
}

Tensor height_l2_loss(const Tensor& pred, const Tensor& gt, const Tensor& sky_mask) {
  require_same(pred, gt, "height_l2_loss");
  require_mask(sky_mask, pred, "height_l2_loss");
  auto per_pixel = (pred - gt).pow(2).mean(1);
  return weighted_pixel_mean(per_pixel, sky_mask, 0.0);
}

// ---------------------------------------------------------------------------
// weights and reports

namespace {

template <typename W>
auto weight_fields(W& w) {
  return std::map<std::string, decltype(&w.gan)>{
      {"gan", &w.gan},
      {"recon_image", &w.recon_image},
      {"recon_content", &w.recon_content},
      {"recon_style", &w.recon_style},
      {"cycle_masked", &w.cycle_masked},
      {"semantic_consistency", &w.semantic_consistency},
      {"domain_adv", &w.domain_adv},
      {"seg_sup", &w.seg_sup},
      {"height_l2", &w.height_l2},
  };
}

template <typename R>
auto report_fields(R& r) {
  return std::map<std::string, decltype(&r.gan_A)>{
      {"gan_A", &r.gan_A},
      {"gan_B", &r.gan_B},
      {"recon_image", &r.recon_image},
      {"recon_content", &r.recon_content},
      {"recon_style", &r.recon_style},
      {"cycle_masked", &r.cycle_masked},
      {"semantic_consistency", &r.semantic_consistency},
      {"domain_adv", &r.domain_adv},
      {"seg_sup", &r.seg_sup},
      {"height_l2", &r.height_l2},
  };
}

}  // namespace

double LossWeights::of(const std::string& name) const {
  const std::string key = (name == "gan_A" || name == "gan_B") ? "gan" : name;
  auto fields = weight_fields(*this);
  auto it = fields.find(key);
  if (it == fields.end()) throw InvalidConfig("unknown loss '" + name + "'");
  return *it->second;
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
  LossWeights w;
  if (!j.is_object()) throw InvalidConfig("loss weights: expected an object");
  auto fields = weight_fields(w);
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) throw InvalidConfig("loss weights: unknown key '" + key + "'");
    if (!value.is_number() || value.get<double>() < 0.0 || !std::isfinite(value.get<double>())) {
      throw InvalidConfig("loss weights: " + key + " must be a finite number >= 0");
    }
    *it->second = value.get<double>();
  }
  return w;
}

nlohmann::json LossWeights::to_json() const {
  nlohmann::json j;
  for (const auto& [key, ptr] : weight_fields(*this)) j[key] = *ptr;
  return j;
}

double LossReport::get(const std::string& name) const {
  auto fields = report_fields(*this);
  auto it = fields.find(name);
  if (it == fields.end()) throw InvalidConfig("unknown loss '" + name + "'");
  return *it->second;
}

void LossReport::set(const std::string& name, double value) {
  auto fields = report_fields(*this);
  auto it = fields.find(name);
  if (it == fields.end()) throw InvalidConfig("unknown loss '" + name + "'");
  *it->second = value;
}

nlohmann::json LossReport::to_json(long step) const {
  nlohmann::json j;
  j["step"] = step;
  for (const auto& name : kLossNames) j[name] = get(name);
  j["total"] = total;
  j["disc"] = disc;
  j["grl_lambda"] = grl_lambda;
  return j;
}

double total_loss(const LossReport& parts, const LossWeights& weights) {
  double total = 0.0;
  for (const auto& name : kLossNames) {
    const double v = parts.get(name);
    if (!std::isfinite(v)) throw NonFiniteLoss("loss term '" + name + "' is not finite");
    total += weights.of(name) * v;
  }
  return total;
}

Tensor weighted_total(const std::vector<std::pair<std::string, Tensor>>& terms,
                      const LossWeights& weights, LossReport& report) {
  Tensor total;
  for (const auto& [name, t] : terms) {
    const double v = t.item<double>();
    if (!std::isfinite(v)) throw NonFiniteLoss("loss term '" + name + "' is not finite");
    report.set(name, v);
    auto term = weights.of(name) * t;
    total = total.defined() ? total + term : term;
  }
  if (!total.defined()) throw InvalidConfig("weighted_total: no terms");
  report.total = total.item<double>();
  if (!std::isfinite(report.total)) throw NonFiniteLoss("total loss is not finite");
  return total;
}

}  // namespace floodgen
