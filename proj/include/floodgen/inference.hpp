#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/script.h>
#include <torch/torch.h>

#include <json.hpp>

#include "floodgen/geometry.hpp"
#include "floodgen/networks.hpp"

namespace floodgen {

struct FloodRequest {
  Image image;
  std::optional<double> flood_level_m;
  std::optional<double> flood_fraction;  // default 0.3 when neither is set
  std::optional<std::uint64_t> style_seed;
  bool return_mask = true;
  // Take the style from a flooded exemplar instead of the prior.
  std::optional<Image> style_reference;
  // Overrides the configured detector for this request.
  std::optional<std::vector<RawDetection>> detections;
  std::optional<CameraModel> camera;

  void validate() const;  // throws BadRequest
};

struct FloodResult {
  Image flooded;
  FloodMask mask;
  nlohmann::json diagnostics;
};

struct InferenceConfig {
  bool composite = true;
  // Longest side fed to the networks; 0 keeps the input size. The generated
  // image is resized back before compositing.
  int model_side = 0;
  bool exclude_sky = true;  // keep pixels the seg head labels as sky dry
  PipelineConfig pipeline;
};

// Loaded model plus providers. Read-only after construction; flood() may be
// called concurrently when the providers are thread-safe.
class Flooder {
 public:
  Flooder(NetworkBundle bundle, std::shared_ptr<DepthProvider> depth,
          std::shared_ptr<DetectorProvider> detector, InferenceConfig config = {});
  // Throws ModelLoadError.
  static Flooder from_checkpoint(const std::filesystem::path& path,
                                 std::shared_ptr<DepthProvider> depth = nullptr,
                                 std::shared_ptr<DetectorProvider> detector = nullptr,
                                 InferenceConfig config = {});

  FloodResult flood(const FloodRequest& request) const;

  // Domain-B rendering of the whole image (no mask, no compositing).
  Image translate(const Image& image, std::uint64_t style_seed) const;

  const ArchConfig& arch() const { return bundle_->arch(); }
  const InferenceConfig& config() const { return config_; }

 private:
  Image translate_with(const Image& image, const torch::Tensor& style) const;
  // Network input plus the rows/cols of it that correspond to the image.
  struct Prepared {
    torch::Tensor x;
    int64_t valid_h = 0, valid_w = 0;
  };
  Prepared prepare(const Image& image) const;
  FloodMask sky_mask(const Image& image) const;

  // Forward passes are const in effect (eval mode, no grad).
  mutable NetworkBundle bundle_;
  std::shared_ptr<DepthProvider> depth_;
  std::shared_ptr<DetectorProvider> detector_;
  InferenceConfig config_;
};

// Reflection-pads [N, C, H, W] on the bottom/right to multiples of factor.
torch::Tensor pad_to_multiple(const torch::Tensor& x, int factor);

// Generated pixels inside the mask, original pixels elsewhere.
Image composite(const Image& original, const Image& generated, const FloodMask& mask);

struct BatchSummary {
  int ok = 0;
  int failed = 0;
  std::vector<std::pair<std::string, std::string>> failures;  // file, reason
  nlohmann::json to_json() const;
};

// Floods every image file in dir_in into dir_out/<stem>.png (and
// <stem>_mask.png with emit_mask). A <stem>.detections.json next to an image
// supplies its reference objects. Failures are recorded per file.
BatchSummary flood_batch(const std::filesystem::path& dir_in, const std::filesystem::path& dir_out,
                         const FloodRequest& defaults, const Flooder& flooder, bool emit_mask);

// Depth network exported as TorchScript: [1, 3, H, W] in [0,1] ->
// [1, 1, H, W] or [1, H, W] depth.
class TorchScriptDepthProvider : public DepthProvider {
 public:
  TorchScriptDepthProvider(const std::filesystem::path& path, bool metric);
  DepthMap infer(const Image& image) override;
  std::string name() const override { return name_; }

 private:
  mutable torch::jit::Module module_;
  bool metric_;
  std::string name_;
};

}  // namespace floodgen
