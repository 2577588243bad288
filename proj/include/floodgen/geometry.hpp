#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "floodgen/image_io.hpp"
#include "floodgen/sim_dataset.hpp"

namespace floodgen {

// Pinhole camera with a horizontal optical axis and zero roll. Pixel rows grow
// downward; camera_height_m is measured above the ground plane.
struct CameraModel {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double camera_height_m = 2.5;
  int width = 1;
  int height = 1;

  static constexpr double kDefaultFovDeg = 90.0;
  static constexpr double kDefaultHeightM = 2.5;

  // Horizontal field of view, square pixels, principal point at (W/2, H/2).
  static CameraModel from_fov(int width, int height, double hfov_deg, double camera_height_m);
  static CameraModel default_for(int width, int height);
  // Throws MissingMetadata when fov or camera height is absent.
  static CameraModel from_meta(const CaptureMeta& meta, int width, int height);

  // Camera seen through a resize + center crop.
  CameraModel fitted(const SquareFit& fit) const;
  void validate() const;
};

struct HeightMap {
  Grid<double> values;
  bool is_metric = false;

  int height() const noexcept { return values.height(); }
  int width() const noexcept { return values.width(); }
};

enum class ReferenceClass { Pedestrian, Car, Truck };

std::string to_string(ReferenceClass c);
ReferenceClass reference_class_from_string(const std::string& name);

struct BoundingBox {
  double u_min = 0, v_min = 0, u_max = 0, v_max = 0;
};

struct ReferenceDetection {
  ReferenceClass object_class = ReferenceClass::Car;
  BoundingBox image_bbox;
  double estimated_height_m = 0.0;
  double relative_height = 0.0;
};

// What a detector reports before the relative extent has been measured. A
// missing height falls back to the class prior.
struct RawDetection {
  ReferenceClass object_class = ReferenceClass::Car;
  BoundingBox image_bbox;
  std::optional<double> estimated_height_m;
};

struct ClassPriors {
  double pedestrian_m = 1.7;
  double car_m = 1.5;
  double truck_m = 3.0;
  double operator()(ReferenceClass c) const;
};

struct ScaleEstimate {
  double scale = 1.0;
  std::vector<double> per_object_scales;
  std::size_t n_objects = 0;
};

HeightMap backproject_heights(const DepthMap& depth, const CameraModel& camera);

// Median of estimated_height_m / relative_height; lower middle for even counts.
ScaleEstimate estimate_scale(std::span<const ReferenceDetection> detections);

// values * scale + anchor_height_m. Relative heights from backproject_heights
// are zero on the principal row, so anchoring at the camera height puts the
// ground plane at zero.
HeightMap metricize(const HeightMap& heights, const ScaleEstimate& scale, double anchor_height_m);

// bit = height < level (strict).
FloodMask flood_mask_metric(const HeightMap& heights, double flood_level_m);

// Threshold at the linear-interpolation quantile of non-excluded heights.
FloodMask flood_mask_percentile(const HeightMap& heights, double fraction,
                                const FloodMask* exclude = nullptr);

// Linear-interpolation quantile of unsorted values; q in [0,1].
double linear_quantile(std::vector<double> values, double q);

// max - min of heights over the bbox rows and its central 50% of columns.
// Returns 0 when the clipped region is empty.
double relative_height_in_bbox(const HeightMap& heights, const BoundingBox& bbox);

std::vector<ReferenceDetection> measure_references(const HeightMap& relative_heights,
                                                   std::span<const RawDetection> raw,
                                                   const ClassPriors& priors = {});

// ---------------------------------------------------------------------------
// providers

class DepthProvider {
 public:
  virtual ~DepthProvider() = default;
  virtual DepthMap infer(const Image& image) = 0;
  virtual std::string name() const = 0;
};

class DetectorProvider {
 public:
  virtual ~DetectorProvider() = default;
  virtual std::vector<RawDetection> detect(const Image& image) = 0;
  virtual std::string name() const = 0;
};

// Serves a known depth map (e.g. simulator ground truth), resampled to the
// query image size.
class FixedDepthProvider : public DepthProvider {
 public:
  explicit FixedDepthProvider(DepthMap depth, std::string name = "ground_truth")
      : depth_(std::move(depth)), name_(std::move(name)) {}
  DepthMap infer(const Image& image) override;
  std::string name() const override { return name_; }

 private:
  DepthMap depth_;
  std::string name_;
};

// Depth of an ideal ground plane rising with a small grade away from the
// camera, with a far field above it. Used when no depth model is configured.
class GroundPlanePrior : public DepthProvider {
 public:
  explicit GroundPlanePrior(double grade = 0.01, double far_m = 200.0)
      : grade_(grade), far_m_(far_m) {}
  DepthMap infer(const Image& image) override;
  std::string name() const override { return "ground_plane_prior"; }

 private:
  double grade_;
  double far_m_;
};

class FunctionDepthProvider : public DepthProvider {
 public:
  FunctionDepthProvider(std::function<DepthMap(const Image&)> fn, std::string name)
      : fn_(std::move(fn)), name_(std::move(name)) {}
  DepthMap infer(const Image& image) override { return fn_(image); }
  std::string name() const override { return name_; }

 private:
  std::function<DepthMap(const Image&)> fn_;
  std::string name_;
};

class NoDetector : public DetectorProvider {
 public:
  std::vector<RawDetection> detect(const Image&) override { return {}; }
  std::string name() const override { return "none"; }
};

class FixedDetector : public DetectorProvider {
 public:
  explicit FixedDetector(std::vector<RawDetection> detections)
      : detections_(std::move(detections)) {}
  std::vector<RawDetection> detect(const Image&) override { return detections_; }
  std::string name() const override { return "fixed"; }

 private:
  std::vector<RawDetection> detections_;
};

// Detections exported by an external 3D box detector:
// [{"class": "car", "bbox": [u_min, v_min, u_max, v_max], "height_m": 1.4}, ...]
std::vector<RawDetection> load_detections(const fs::path& path);

// ---------------------------------------------------------------------------
// pipeline

struct FloodTarget {
  std::optional<double> level_m;
  std::optional<double> fraction;
};

struct PipelineConfig {
  double default_fraction = 0.3;
  ClassPriors priors;
};

enum class MaskMode { MetricDepth, ScaledReferences, Percentile };
std::string to_string(MaskMode mode);

struct PipelineResult {
  FloodMask mask;
  HeightMap heights;
  MaskMode mode = MaskMode::Percentile;
  std::optional<ScaleEstimate> scale;
  std::string depth_source;
};

// depth -> heights -> (scale from references) -> mask. A level is honored when
// the heights are metric (metric depth, or relative depth plus at least one
// usable reference object); otherwise the percentile rule applies with the
// requested or default fraction. exclude (e.g. sky) is never flooded.
PipelineResult mask_from_pipeline(const Image& image, DepthProvider& depth_provider,
                                  DetectorProvider& detector, const CameraModel& camera,
                                  const FloodTarget& target, const PipelineConfig& config = {},
                                  const FloodMask* exclude = nullptr);

}  // namespace floodgen
