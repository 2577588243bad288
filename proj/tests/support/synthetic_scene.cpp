#include "synthetic_scene.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include <unistd.h>

#include "floodgen/image_io.hpp"

namespace floodgen::testing {
namespace fs = std::filesystem;

namespace {

constexpr int kGround = 0, kSidewalk = 1, kBuilding = 2, kSky = 4, kPole = 7, kWater = 8;

std::array<float, 3> base_color(int cls) {
  switch (cls) {
    case kGround: return {0.35F, 0.33F, 0.32F};
    case kSidewalk: return {0.62F, 0.60F, 0.56F};
    case kBuilding: return {0.72F, 0.52F, 0.40F};
    case kSky: return {0.55F, 0.72F, 0.92F};
    case kPole: return {0.20F, 0.22F, 0.20F};
    case kWater: return {0.18F, 0.30F, 0.38F};
    default: return {0.5F, 0.5F, 0.5F};
  }
}

}  // namespace

Scene make_scene(const SceneSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  const double waves = 1.0 + std::floor(unit(rng) * 2.0);
  const float tint = static_cast<float>(unit(rng) * 0.1 - 0.05);

  Scene scene;
  scene.camera = CameraModel::from_fov(spec.width, spec.height, spec.fov_deg, spec.camera_height_m);
  const auto& cam = scene.camera;
  auto palette = std::make_shared<const Palette>(Palette::defaults());

  SimSample& s = scene.sample;
  s.id = "scene" + std::to_string(spec.seed);
  s.non_flooded = Image(spec.height, spec.width);
  s.flooded = Image(spec.height, spec.width);
  s.depth = DepthMap{Grid<double>(spec.height, spec.width), true};
  s.seg_non_flooded = SegMap{Grid<std::uint8_t>(spec.height, spec.width), palette};
  s.seg_flooded = SegMap{Grid<std::uint8_t>(spec.height, spec.width), palette};
  s.water_mask = FloodMask(spec.height, spec.width);
  scene.true_depth = Grid<double>(spec.height, spec.width);
  scene.true_heights = Grid<double>(spec.height, spec.width);

  std::normal_distribution<float> noise(0.0F, 0.02F);
  for (int u = 0; u < spec.width; ++u) {
    const double t = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * waves * u / spec.width + phase);
    const double wall = spec.wall_near_m + (spec.wall_far_m - spec.wall_near_m) * t;
    const bool pole_column = (u + static_cast<int>(spec.seed * 7)) % 37 < 2;
    for (int v = 0; v < spec.height; ++v) {
      const double ray = (v - cam.cy) / cam.fy;
      double z;
      int cls;
      if (ray > 0.0 && spec.camera_height_m / ray < wall) {
        z = spec.camera_height_m / ray;
        cls = z > 0.8 * wall ? kSidewalk : kGround;
      } else {
        z = wall;
        const double h = spec.camera_height_m - ray * wall;
        cls = h > spec.building_height_m ? kSky : kBuilding;
        if (cls == kBuilding && pole_column && h < 4.0) cls = kPole;
        if (cls == kSky) z = spec.sky_depth_m;
      }
      const double height = spec.camera_height_m - ray * z;
      scene.true_depth.at(v, u) = z;
      scene.true_heights.at(v, u) = height;
      s.seg_non_flooded.labels.at(v, u) = static_cast<std::uint8_t>(cls);

      const bool water = cls != kSky && height < spec.water_level_m;
      s.water_mask.bits.at(v, u) = water ? 1 : 0;
      s.seg_flooded.labels.at(v, u) = static_cast<std::uint8_t>(water ? kWater : cls);

      const auto dry = base_color(cls);
      const auto wet = base_color(kWater);
      const float stripe = (cls == kBuilding && (v / 6) % 3 == 0) ? -0.12F : 0.0F;
      for (int c = 0; c < 3; ++c) {
        const float n = noise(rng);
        const float dry_px = std::clamp(dry[c] + stripe + tint + n, 0.0F, 1.0F);
        s.non_flooded.at(v, u, c) = dry_px;
        s.flooded.at(v, u, c) =
            water ? std::clamp(wet[c] + 0.25F * dry_px + n, 0.0F, 1.0F) : dry_px;
      }
    }
  }
  // Depth as the capture stores it.
  s.depth = decode_depth(encode_depth(DepthMap{scene.true_depth, true}));
  s.meta.camera_fov_deg = spec.fov_deg;
  s.meta.camera_height_m = spec.camera_height_m;
  s.meta.width = spec.width;
  s.meta.height = spec.height;
  s.meta.water_level_m = spec.water_level_m;
  return scene;
}

void write_dataset(const fs::path& root, int n_sim, int n_real, int size, std::uint64_t seed) {
  for (int i = 0; i < n_sim; ++i) {
    SceneSpec spec;
    spec.width = spec.height = size;
    spec.seed = seed + i;
    spec.water_level_m = 0.4 + 0.2 * (i % 3);
    auto scene = make_scene(spec);
    char id[16];
    std::snprintf(id, sizeof id, "s%03d", i);
    scene.sample.id = id;
    save_sim_sample(scene.sample, root / "sim" / id);
  }
  for (int i = 0; i < n_real; ++i) {
    SceneSpec spec;
    spec.width = size + 16;  // real photos are not square
    spec.height = size;
    spec.seed = seed + 1000 + i;
    spec.fov_deg = 80.0;
    auto scene = make_scene(spec);
    char name[16];
    std::snprintf(name, sizeof name, "r%03d.png", i);
    save_image(root / "real" / "nonflooded" / name, scene.sample.non_flooded);
    save_image(root / "real" / "flooded" / name, scene.sample.flooded);
    save_mask(root / "real" / "masks" / "flooded" / name, scene.sample.water_mask);
  }
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("floodgen-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

}  // namespace floodgen::testing
