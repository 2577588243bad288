#include "floodgen/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace floodgen {

// ---------------------------------------------------------------------------
// camera

CameraModel CameraModel::from_fov(int width, int height, double hfov_deg, double camera_height_m) {
  if (!(hfov_deg > 0.0 && hfov_deg < 180.0)) throw InvalidMetadata("fov must lie in (0, 180)");
  CameraModel cam;
  cam.width = width;
  cam.height = height;
  cam.fx = (width / 2.0) / std::tan(hfov_deg * std::numbers::pi / 360.0);
  cam.fy = cam.fx;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.camera_height_m = camera_height_m;
  cam.validate();
  return cam;
}

CameraModel CameraModel::default_for(int width, int height) {
  return from_fov(width, height, kDefaultFovDeg, kDefaultHeightM);
}

CameraModel CameraModel::from_meta(const CaptureMeta& meta, int width, int height) {
  if (!meta.camera_fov_deg) throw MissingMetadata("camera_fov_deg");
  if (!meta.camera_height_m) throw MissingMetadata("camera_height_m");
  return from_fov(width, height, *meta.camera_fov_deg, *meta.camera_height_m);
}

CameraModel CameraModel::fitted(const SquareFit& fit) const {
  CameraModel cam = *this;
  cam.fx *= fit.scale;
  cam.fy *= fit.scale;
  cam.cx = cx * fit.scale - fit.offset_u;
  cam.cy = cy * fit.scale - fit.offset_v;
  cam.width = fit.size;
  cam.height = fit.size;
  return cam;
}

void CameraModel::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) throw InvalidMetadata("focal lengths must be positive");
  if (width < 1 || height < 1) throw InvalidMetadata("camera resolution must be positive");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw InvalidMetadata("principal point outside the image");
  }
  if (!(camera_height_m > 0.0)) throw InvalidMetadata("camera height must be positive");
}

// ---------------------------------------------------------------------------
// heights and scale

HeightMap backproject_heights(const DepthMap& depth, const CameraModel& camera) {
  if (depth.width() != camera.width || depth.height() != camera.height) {
    throw DimensionMismatch("depth " + std::to_string(depth.width()) + "x" +
                            std::to_string(depth.height()) + " vs camera " +
                            std::to_string(camera.width) + "x" + std::to_string(camera.height));
  }
  HeightMap out{Grid<double>(depth.height(), depth.width()), depth.is_metric};
  const double base = depth.is_metric ? camera.camera_height_m : 0.0;
  for (int v = 0; v < depth.height(); ++v) {
    const double ray = (v - camera.cy) / camera.fy;
    for (int u = 0; u < depth.width(); ++u) {
      out.values.at(v, u) = base - ray * depth.values.at(v, u);
    }
  }
  return out;
}

ScaleEstimate estimate_scale(std::span<const ReferenceDetection> detections) {
  if (detections.empty()) throw NoReferenceObjects("no reference objects to scale the scene");
  ScaleEstimate est;
  est.n_objects = detections.size();
  for (const auto& d : detections) {
    if (!(d.estimated_height_m > 0.0 && d.relative_height > 0.0)) {
      throw OutOfRange("reference detection heights must be positive");
    }
    est.per_object_scales.push_back(d.estimated_height_m / d.relative_height);
  }
  std::vector<double> sorted = est.per_object_scales;
  std::sort(sorted.begin(), sorted.end());
  est.scale = sorted[(sorted.size() - 1) / 2];
  return est;
}

HeightMap metricize(const HeightMap& heights, const ScaleEstimate& scale, double anchor_height_m) {
  if (heights.is_metric) throw AlreadyMetric("height map is already metric");
  HeightMap out{heights.values, true};
  for (double& h : out.values.storage()) h = h * scale.scale + anchor_height_m;
  return out;
}

FloodMask flood_mask_metric(const HeightMap& heights, double flood_level_m) {
  if (!heights.is_metric) throw NotMetric("a metric flood level needs metric heights");
  FloodMask mask(heights.height(), heights.width());
  for (std::size_t i = 0; i < heights.values.size(); ++i) {
    mask.bits[i] = heights.values[i] < flood_level_m ? 1 : 0;
  }
  return mask;
}

double linear_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw OutOfRange("quantile of an empty set");
  q = std::clamp(q, 0.0, 1.0);
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double t = pos - static_cast<double>(lo);
  return values[lo] + t * (values[hi] - values[lo]);
}

FloodMask flood_mask_percentile(const HeightMap& heights, double fraction,
                                const FloodMask* exclude) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw OutOfRange("fraction must lie in [0,1]");
  if (exclude) require_same_extent(heights.values, exclude->bits, "exclusion mask");
  auto excluded = [&](std::size_t i) { return exclude && exclude->bits[i]; };

  FloodMask mask(heights.height(), heights.width());
  std::vector<double> kept;
  kept.reserve(heights.values.size());
  for (std::size_t i = 0; i < heights.values.size(); ++i) {
    if (!excluded(i)) kept.push_back(heights.values[i]);
  }
  if (kept.empty() || fraction == 0.0) return mask;
  if (fraction == 1.0) {
    for (std::size_t i = 0; i < mask.bits.size(); ++i) mask.bits[i] = excluded(i) ? 0 : 1;
    return mask;
  }
  const double threshold = linear_quantile(std::move(kept), fraction);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    mask.bits[i] = (!excluded(i) && heights.values[i] < threshold) ? 1 : 0;
  }
  return mask;
}

double relative_height_in_bbox(const HeightMap& heights, const BoundingBox& bbox) {
  const double w = bbox.u_max - bbox.u_min;
  const int u0 = std::max(0, static_cast<int>(std::ceil(bbox.u_min + 0.25 * w)));
  const int u1 = std::min(heights.width() - 1, static_cast<int>(std::floor(bbox.u_max - 0.25 * w)));
  const int v0 = std::max(0, static_cast<int>(std::ceil(bbox.v_min)));
  const int v1 = std::min(heights.height() - 1, static_cast<int>(std::floor(bbox.v_max)));
  if (u0 > u1 || v0 > v1) return 0.0;
  double lo = heights.values.at(v0, u0);
  double hi = lo;
  for (int v = v0; v <= v1; ++v) {
    for (int u = u0; u <= u1; ++u) {
      lo = std::min(lo, heights.values.at(v, u));
      hi = std::max(hi, heights.values.at(v, u));
    }
  }
  return hi - lo;
}

std::vector<ReferenceDetection> measure_references(const HeightMap& relative_heights,
                                                   std::span<const RawDetection> raw,
                                                   const ClassPriors& priors) {
  std::vector<ReferenceDetection> out;
  for (const auto& d : raw) {
    const double rel = relative_height_in_bbox(relative_heights, d.image_bbox);
    const double est = d.estimated_height_m.value_or(priors(d.object_class));
    if (rel > 0.0 && est > 0.0) out.push_back({d.object_class, d.image_bbox, est, rel});
  }
  return out;
}

std::string to_string(ReferenceClass c) {
  switch (c) {
    case ReferenceClass::Pedestrian: return "pedestrian";
    case ReferenceClass::Car: return "car";
    case ReferenceClass::Truck: return "truck";
  }
  return "unknown";
}

ReferenceClass reference_class_from_string(const std::string& name) {
  if (name == "pedestrian" || name == "person") return ReferenceClass::Pedestrian;
  if (name == "car") return ReferenceClass::Car;
  if (name == "truck") return ReferenceClass::Truck;
  throw InvalidMetadata("unknown reference class '" + name + "'");
}

double ClassPriors::operator()(ReferenceClass c) const {
  switch (c) {
    case ReferenceClass::Pedestrian: return pedestrian_m;
    case ReferenceClass::Car: return car_m;
    case ReferenceClass::Truck: return truck_m;
  }
  return car_m;
}

// ---------------------------------------------------------------------------
// providers

DepthMap FixedDepthProvider::infer(const Image& image) {
  DepthMap out = depth_;
  if (out.height() != image.height() || out.width() != image.width()) {
    out.values = resize_bilinear(out.values, image.height(), image.width());
  }
  return out;
}

DepthMap GroundPlanePrior::infer(const Image& image) {
  const auto cam = CameraModel::default_for(image.width(), image.height());
  DepthMap out{Grid<double>(image.height(), image.width()), true};
  for (int v = 0; v < image.height(); ++v) {
    // Ground at height grade * z seen along a ray of slope (v - cy) / fy.
    const double denom = (v - cam.cy) / cam.fy + grade_;
    double z = denom > 0.0 ? cam.camera_height_m / denom : far_m_;
    z = std::min(z, far_m_);
    for (int u = 0; u < image.width(); ++u) out.values.at(v, u) = z;
  }
  return out;
}

std::vector<RawDetection> load_detections(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path.string());
  std::vector<RawDetection> out;
  try {
    for (const auto& rec : nlohmann::json::parse(in)) {
      RawDetection d;
      d.object_class = reference_class_from_string(rec.at("class").get<std::string>());
      auto b = rec.at("bbox").get<std::vector<double>>();
      if (b.size() != 4) throw InvalidMetadata("bbox needs 4 values");
      d.image_bbox = {b[0], b[1], b[2], b[3]};
      if (rec.contains("height_m") && !rec.at("height_m").is_null()) {
        d.estimated_height_m = rec.at("height_m").get<double>();
      }
      out.push_back(d);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw InvalidMetadata(path.string() + ": " + ex.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// pipeline

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::MetricDepth: return "metric_depth";
    case MaskMode::ScaledReferences: return "scaled_references";
    case MaskMode::Percentile: return "percentile";
  }
  return "unknown";
}

PipelineResult mask_from_pipeline(const Image& image, DepthProvider& depth_provider,
                                  DetectorProvider& detector, const CameraModel& camera,
                                  const FloodTarget& target, const PipelineConfig& config,
                                  const FloodMask* exclude) {
  if (target.level_m && target.fraction) {
    throw BadRequest("flood level and flood fraction are mutually exclusive");
  }
  PipelineResult result;
  result.depth_source = depth_provider.name();

  DepthMap depth;
  try {
    depth = depth_provider.infer(image);
  } catch (const std::exception& ex) {
    throw DepthProviderFailure(depth_provider.name() + ": " + ex.what());
  }
  if (depth.height() != image.height() || depth.width() != image.width()) {
    if (depth.values.empty()) throw DepthProviderFailure(depth_provider.name() + ": empty depth");
    depth.values = resize_bilinear(depth.values, image.height(), image.width());
  }
  for (double z : depth.values.data()) {
    if (!(z >= 0.0) || !std::isfinite(z)) {
      throw DepthProviderFailure(depth_provider.name() + ": depth must be finite and >= 0");
    }
  }

  result.heights = backproject_heights(depth, camera);
  if (target.level_m && !result.heights.is_metric) {
    auto refs = measure_references(result.heights, detector.detect(image), config.priors);
    if (!refs.empty()) {
      result.scale = estimate_scale(refs);
      result.heights = metricize(result.heights, *result.scale, camera.camera_height_m);
    }
  }

  if (target.level_m && result.heights.is_metric) {
    result.mode = result.scale ? MaskMode::ScaledReferences : MaskMode::MetricDepth;
    result.mask = flood_mask_metric(result.heights, *target.level_m);
    if (exclude) {
      for (std::size_t i = 0; i < result.mask.bits.size(); ++i) {
        if (exclude->bits[i]) result.mask.bits[i] = 0;
      }
    }
  } else {
    result.mode = MaskMode::Percentile;
    result.mask = flood_mask_percentile(result.heights, target.fraction.value_or(config.default_fraction),
                                        exclude);
  }
  return result;
}

}  // namespace floodgen
