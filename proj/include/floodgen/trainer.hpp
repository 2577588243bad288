#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include <json.hpp>

#include "floodgen/geometry.hpp"
#include "floodgen/losses.hpp"
#include "floodgen/networks.hpp"
#include "floodgen/sim_dataset.hpp"

namespace floodgen {

enum class MaskSource { Annotation, GeometryMetric, GeometryPercentile };
std::string to_string(MaskSource s);
MaskSource mask_source_from_string(const std::string& s);

// GradientReversal trains the domain classifier jointly with the generator
// through the reversal layer. Alternating moves the classifier to the
// discriminator-side optimizer and has the encoders minimize the loss against
// flipped domain labels.
enum class DomainMode { GradientReversal, Alternating };

// Linear ramp from initial to final over warmup_steps, constant afterwards.
struct GrlSchedule {
  double initial = 0.0;
  double final = 1.0;
  long warmup_steps = 10000;
  double at(long step) const;
};

struct TrainConfig {
  ArchConfig arch = ArchConfig::desk_scale();
  LossWeights weights;
  double lr_generator = 1e-4;
  double lr_discriminator = 1e-4;
  double lr_height = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 1;
  long total_steps = 10000;
  GrlSchedule grl;
  double sim_fraction = 0.5;
  int image_size = 256;
  std::uint64_t seed = 0;
  long checkpoint_every = 1000;
  MaskSource mask_source = MaskSource::Annotation;
  std::optional<double> flood_level_m;
  std::optional<double> flood_fraction;
  double default_fraction = 0.3;
  double inside_weight = 0.0;
  bool semantic_both_directions = true;
  DomainMode domain_mode = DomainMode::GradientReversal;

  void validate() const;  // throws InvalidConfig
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

// FLOODGEN_SEED, when set, replaces config.seed.
TrainConfig apply_env_overrides(TrainConfig config);

// Batch as tensors. Rows of images/masks follow batch order; labels only
// exist for simulated rows, listed in sim_rows.
struct TensorBatch {
  torch::Tensor images;  // [N, 3, S, S]
  torch::Tensor masks;   // [N, 1, S, S]
  torch::Tensor is_sim;  // [N] float
  torch::Tensor sim_rows;  // [K] int64
  torch::Tensor labels;    // [K, S, S] int64

  int64_t size() const { return images.size(0); }
  int64_t sim_count() const { return sim_rows.numel(); }
};

// Loads, squares and caches samples. Real-image masks follow mask_source;
// simulated items always use their capture mask.
class TrainingData {
 public:
  TrainingData(const DatasetIndex& index, const TrainConfig& config);
  TensorBatch load(const Batch& batch);

  // For the height loop: non-flooded image, metric height map and sky mask of
  // a simulated capture. Throws MissingMetadata without camera metadata.
  struct HeightSample {
    torch::Tensor image;    // [3, S, S]
    torch::Tensor heights;  // [1, S, S]
    torch::Tensor sky;      // [1, S, S]
  };
  HeightSample height_sample(std::size_t sim_index);

 private:
  struct Prepared {
    torch::Tensor image, mask, labels;
  };
  const Prepared& prepare(const BatchItem& item);
  torch::Tensor real_mask(const fs::path& path, const Image& squared);

  const DatasetIndex& index_;
  TrainConfig config_;
  std::map<std::tuple<int, int, std::size_t>, Prepared> cache_;
  std::map<std::size_t, HeightSample> height_cache_;
};

class Trainer {
 public:
  Trainer(TrainConfig config, NetworkBundle bundle);

  // One discriminator update, then one generator-side update.
  LossReport train_step(const TensorBatch& a, const TensorBatch& b, long step);

  // Generator-side terms for a batch pair, with autograd graphs attached.
  // seg_sup is a constant zero when neither batch has simulated rows.
  std::vector<std::pair<std::string, torch::Tensor>> generator_losses(const TensorBatch& a,
                                                                      const TensorBatch& b,
                                                                      double grl_lambda);

  // Height-estimator update on a batch of samples; returns the final-stack
  // sky-masked MSE before the update.
  double height_step(const torch::Tensor& images, const torch::Tensor& heights,
                     const torch::Tensor& sky);

  void save(const std::filesystem::path& path, long step);
  // Restores parameters, optimizer moments and RNG state; returns the step.
  long restore(const std::filesystem::path& path);

  NetworkBundle& bundle() { return bundle_; }
  const TrainConfig& config() const { return config_; }
  torch::optim::Adam& generator_optimizer() { return *gen_opt_; }
  torch::optim::Adam& discriminator_optimizer() { return *dis_opt_; }
  torch::optim::Adam& height_optimizer() { return *height_opt_; }

 private:
  torch::Tensor sample_style(int64_t n);

  TrainConfig config_;
  NetworkBundle bundle_;
  std::unique_ptr<torch::optim::Adam> gen_opt_;
  std::unique_ptr<torch::optim::Adam> dis_opt_;
  std::unique_ptr<torch::optim::Adam> height_opt_;
};

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  std::function<void(long, const LossReport&)> on_step;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  long steps = 0;
  std::optional<LossReport> last;
};

// Output layout: checkpoint_<step>.pt every checkpoint_every steps and at the
// start, final.pt at the end, metrics.jsonl with one line per step.
TrainResult train(const TrainConfig& config, const DatasetIndex& index, const TrainOptions& options);
TrainResult train_height(const TrainConfig& config, const DatasetIndex& index,
                         const TrainOptions& options);

// Checkpoint file name for a step.
std::string checkpoint_name(long step);

}  // namespace floodgen
