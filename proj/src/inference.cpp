#include "floodgen/inference.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "floodgen/errors.hpp"
#include "floodgen/image_io.hpp"

namespace floodgen {

namespace F = torch::nn::functional;
using torch::Tensor;

void FloodRequest::validate() const {
  if (flood_level_m && flood_fraction) {
    throw BadRequest("give either a flood level or a flood fraction, not both");
  }
  if (flood_level_m && !std::isfinite(*flood_level_m)) throw BadRequest("flood level must be finite");
  if (flood_fraction && !(*flood_fraction >= 0.0 && *flood_fraction <= 1.0)) {
    throw BadRequest("flood fraction must lie in [0,1]");
  }
  if (image.height() == 0 || image.width() == 0) throw BadRequest("empty image");
}

Tensor pad_to_multiple(const Tensor& x, int factor) {
  const int64_t h = x.size(2), w = x.size(3);
  const int64_t ph = (factor - h % factor) % factor;
  const int64_t pw = (factor - w % factor) % factor;
  if (ph == 0 && pw == 0) return x;
  // Reflection needs pad < size; replicate covers tiny inputs.
  const bool reflect = ph < h && pw < w;
  auto opts = F::PadFuncOptions({0, pw, 0, ph});
  if (reflect) return F::pad(x, opts.mode(torch::kReflect));
  return F::pad(x, opts.mode(torch::kReplicate));
}

Image composite(const Image& original, const Image& generated, const FloodMask& mask) {
  require_same_extent(original.pixels, generated.pixels, "composite");
  require_same_extent(original.pixels, mask.bits, "composite");
  Image out = original;
  for (int v = 0; v < original.height(); ++v)
    for (int u = 0; u < original.width(); ++u) {
      if (!mask.bits.at(v, u)) continue;
      for (int c = 0; c < 3; ++c) out.at(v, u, c) = generated.at(v, u, c);
    }
  return out;
}

Flooder::Flooder(NetworkBundle bundle, std::shared_ptr<DepthProvider> depth,
                 std::shared_ptr<DetectorProvider> detector, InferenceConfig config)
    : bundle_(std::move(bundle)),
      depth_(depth ? std::move(depth) : std::make_shared<GroundPlanePrior>()),
      detector_(detector ? std::move(detector) : std::make_shared<NoDetector>()),
      config_(config) {
  bundle_->eval();
  if (config_.model_side < 0) throw InvalidConfig("model_side must be >= 0");
}

Flooder Flooder::from_checkpoint(const std::filesystem::path& path,
                                 std::shared_ptr<DepthProvider> depth,
                                 std::shared_ptr<DetectorProvider> detector, InferenceConfig config) {
  return Flooder(load_bundle(path), std::move(depth), std::move(detector), config);
}

Flooder::Prepared Flooder::prepare(const Image& image) const {
  const int f = arch().downsampling_factor();
  const int min_side = 1 << arch().style_downsample;
  Image input = image;
  if (config_.model_side > 0 && std::max(image.height(), image.width()) != config_.model_side) {
    const double k = static_cast<double>(config_.model_side) / std::max(image.height(), image.width());
    const int h = std::max(f, static_cast<int>(std::lround(image.height() * k / f)) * f);
    const int w = std::max(f, static_cast<int>(std::lround(image.width() * k / f)) * f);
    input = resize_bilinear(image, h, w);
  }
  Prepared p{pad_to_multiple(to_tensor(input), f), input.height(), input.width()};
  // Tiny inputs are upsampled so every encoder stage has pixels to work on.
  if (p.x.size(2) < min_side || p.x.size(3) < min_side) {
    p.x = F::interpolate(p.x, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{std::max<int64_t>(p.x.size(2), min_side),
                                                             std::max<int64_t>(p.x.size(3), min_side)})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
    p.valid_h = p.x.size(2);
    p.valid_w = p.x.size(3);
  }
  return p;
}

// Crops the padding off a network output and resizes it to h x w.
static Tensor restore_extent(Tensor y, int64_t valid_h, int64_t valid_w, int h, int w, bool nearest) {
  y = y.slice(2, 0, valid_h).slice(3, 0, valid_w);
  if (y.size(2) == h && y.size(3) == w) return y;
  auto opts = F::InterpolateFuncOptions().size(std::vector<int64_t>{h, w});
  if (nearest) return F::interpolate(y, opts.mode(torch::kNearest));
  return F::interpolate(y, opts.mode(torch::kBilinear).align_corners(false));
}

Image Flooder::translate_with(const Image& image, const Tensor& style) const {
  torch::NoGradGuard no_grad;
  const auto p = prepare(image);
  auto y = bundle_->decode(bundle_->encode_content(p.x, Side::A), style, Side::B);
  y = restore_extent(y, p.valid_h, p.valid_w, image.height(), image.width(), false);
  return image_from_tensor(y.clamp(0.0, 1.0));
}

Image Flooder::translate(const Image& image, std::uint64_t style_seed) const {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(style_seed);
  return translate_with(image, torch::randn({1, arch().style_dim}, gen));
}

FloodMask Flooder::sky_mask(const Image& image) const {
  torch::NoGradGuard no_grad;
  const auto p = prepare(image);
  auto labels = bundle_->seg_forward(bundle_->encode_content(p.x, Side::A)).argmax(1, true);
  auto sky = (labels == Palette::defaults().sky_index()).to(torch::kFloat32);
  return mask_from_tensor(restore_extent(sky, p.valid_h, p.valid_w, image.height(), image.width(), true));
}

FloodResult Flooder::flood(const FloodRequest& request) const {
  request.validate();
  const Image& image = request.image;
  image.validate();

  FloodTarget target;
  target.level_m = request.flood_level_m;
  target.fraction = request.flood_fraction;
  const auto camera = request.camera.value_or(CameraModel::default_for(image.width(), image.height()));

  std::optional<FloodMask> exclude;
  if (config_.exclude_sky) exclude = sky_mask(image);

  PipelineResult geo;
  if (request.detections) {
    FixedDetector fixed(*request.detections);
    geo = mask_from_pipeline(image, *depth_, fixed, camera, target, config_.pipeline,
                             exclude ? &*exclude : nullptr);
  } else {
    geo = mask_from_pipeline(image, *depth_, *detector_, camera, target, config_.pipeline,
                             exclude ? &*exclude : nullptr);
  }

  const std::uint64_t seed = request.style_seed.value_or(0);
  Tensor style;
  if (request.style_reference) {
    torch::NoGradGuard no_grad;
    style = bundle_->encode_style(prepare(*request.style_reference).x, Side::B);
  } else {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    style = torch::randn({1, arch().style_dim}, gen);
  }

  FloodResult result;
  result.mask = geo.mask;
  const auto flooded_pixels = geo.mask.count();
  if (flooded_pixels == 0 && config_.composite) {
    result.flooded = image;
  } else {
    const auto generated = translate_with(image, style);
    result.flooded = config_.composite ? composite(image, generated, geo.mask) : generated;
  }

  auto& d = result.diagnostics;
  d["mask_mode"] = to_string(geo.mode);
  d["depth_source"] = geo.depth_source;
  d["n_reference_objects"] = geo.scale ? geo.scale->n_objects : 0;
  d["scale_estimate"] = geo.scale ? nlohmann::json(geo.scale->scale) : nlohmann::json();
  d["mask_fraction"] = static_cast<double>(flooded_pixels) / static_cast<double>(geo.mask.bits.pixel_count());
  d["composited"] = config_.composite;
  d["style"] = request.style_reference ? nlohmann::json("reference") : nlohmann::json(seed);
  if (request.flood_level_m) d["flood_level_m"] = *request.flood_level_m;
  if (geo.mode == MaskMode::Percentile) {
    d["flood_fraction"] = request.flood_fraction.value_or(config_.pipeline.default_fraction);
  }
  if (!request.return_mask) result.mask = FloodMask();
  return result;
}

// ---------------------------------------------------------------------------
// batch

nlohmann::json BatchSummary::to_json() const {
  nlohmann::json f = nlohmann::json::array();
  for (const auto& [file, reason] : failures) f.push_back({{"file", file}, {"reason", reason}});
  return {{"ok", ok}, {"failed", failed}, {"failures", f}};
}

BatchSummary flood_batch(const std::filesystem::path& dir_in, const std::filesystem::path& dir_out,
                         const FloodRequest& defaults, const Flooder& flooder, bool emit_mask) {
  if (!std::filesystem::is_directory(dir_in)) throw MissingFile(dir_in.string());
  std::vector<std::filesystem::path> inputs;
  for (const auto& entry : std::filesystem::directory_iterator(dir_in)) {
    if (!entry.is_regular_file()) continue;
    const auto name = entry.path().filename().string();
    if (name.empty() || name[0] == '.' || entry.path().extension() == ".json") continue;
    inputs.push_back(entry.path());
  }
  if (inputs.empty()) throw EmptyInput("no input images in " + dir_in.string());
  std::sort(inputs.begin(), inputs.end());
  std::filesystem::create_directories(dir_out);

  BatchSummary summary;
  for (const auto& path : inputs) {
    try {
      FloodRequest request = defaults;
      request.image = load_image(path);
      const auto sidecar = path.parent_path() / (path.stem().string() + ".detections.json");
      if (std::filesystem::exists(sidecar)) request.detections = load_detections(sidecar);
      request.return_mask = emit_mask;
      const auto result = flooder.flood(request);
      const auto stem = path.stem().string();
      save_image(dir_out / (stem + ".png"), result.flooded);
      if (emit_mask) save_mask(dir_out / (stem + "_mask.png"), result.mask);
      ++summary.ok;
    } catch (const std::exception& e) {
      ++summary.failed;
      summary.failures.emplace_back(path.filename().string(), e.what());
    }
  }
  return summary;
}

// ---------------------------------------------------------------------------
// TorchScript depth

namespace {
std::mutex script_mutex;
}

TorchScriptDepthProvider::TorchScriptDepthProvider(const std::filesystem::path& path, bool metric)
    : metric_(metric), name_("torchscript:" + path.filename().string()) {
  try {
    module_ = torch::jit::load(path.string());
    module_.eval();
  } catch (const std::exception& e) {
    throw ModelLoadError("cannot load depth model " + path.string() + ": " + e.what());
  }
}

DepthMap TorchScriptDepthProvider::infer(const Image& image) {
  Tensor out;
  {
    std::lock_guard lock(script_mutex);
    torch::NoGradGuard no_grad;
    out = module_.forward({to_tensor(image)}).toTensor();
  }
  while (out.dim() > 2 && out.size(0) == 1) out = out[0];
  if (out.dim() != 2) throw DepthProviderFailure("depth model returned a non-map tensor");
  out = out.to(torch::kDouble).contiguous();
  DepthMap depth{Grid<double>(static_cast<int>(out.size(0)), static_cast<int>(out.size(1))), metric_};
  std::copy_n(out.data_ptr<double>(), depth.values.size(), depth.values.data().begin());
  return depth;
}

}  // namespace floodgen
