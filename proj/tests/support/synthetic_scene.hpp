#pragma once

#include <cstdint>
#include <filesystem>

#include "floodgen/geometry.hpp"
#include "floodgen/sim_dataset.hpp"

namespace floodgen::testing {

// Analytic street scene: flat ground at height 0, a building facade whose
// distance varies across columns, sky above the roofline. Water fills every
// non-sky pixel below water_level_m in the flooded view.
struct SceneSpec {
  int width = 128;
  int height = 128;
  double fov_deg = 90.0;
  double camera_height_m = 2.5;
  double water_level_m = 0.6;
  double wall_near_m = 6.0;
  double wall_far_m = 14.0;
  double building_height_m = 9.0;
  double sky_depth_m = 600.0;
  std::uint64_t seed = 1;
};

struct Scene {
  SimSample sample;
  CameraModel camera;
  Grid<double> true_depth;    // unquantized
  Grid<double> true_heights;  // metric, unquantized
};

Scene make_scene(const SceneSpec& spec);

// Writes root/sim/<id>/ for n scenes and, when n_real > 0, real/{flooded,
// nonflooded} images (plus masks for flooded ones).
void write_dataset(const std::filesystem::path& root, int n_sim, int n_real, int size = 64,
                   std::uint64_t seed = 1);

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace floodgen::testing
