#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "floodgen/grid.hpp"

namespace floodgen {

namespace fs = std::filesystem;

// RGB image, values in [0,1].
struct Image {
  Grid<float> pixels;

  Image() = default;
  Image(int height, int width, float fill = 0.0F) : pixels(height, width, 3, fill) {}
  explicit Image(Grid<float> p);

  int height() const noexcept { return pixels.height(); }
  int width() const noexcept { return pixels.width(); }
  float& at(int v, int u, int c) { return pixels.at(v, u, c); }
  float at(int v, int u, int c) const { return pixels.at(v, u, c); }

  // Throws OutOfRange when a value leaves [0,1] (or is NaN).
  void validate() const;
  friend bool operator==(const Image&, const Image&) = default;
};

// Simulator depth: 24-bit code spread over RGB, covering [0, 655.36] m.
inline constexpr double kDepthRangeM = 655.36;
inline constexpr std::uint32_t kMaxDepthCode = (1U << 24) - 1;
inline constexpr double kDepthQuantumM = kDepthRangeM / kMaxDepthCode;

struct DepthMap {
  Grid<double> values;
  bool is_metric = false;

  int height() const noexcept { return values.height(); }
  int width() const noexcept { return values.width(); }
};

double depth_from_code(std::uint32_t code);
std::uint32_t code_from_depth(double meters);  // nearest code; throws OutOfRange

// depth_image: H×W×3 8-bit (R, G, B).
DepthMap decode_depth(const Grid<std::uint8_t>& depth_image);
Grid<std::uint8_t> encode_depth(const DepthMap& depth);

inline constexpr int kNumClasses = 10;

struct PaletteEntry {
  int index = 0;
  std::string name;
  std::array<std::uint8_t, 3> rgb{};
};

// The 10 merged segmentation classes and their display colors.
class Palette {
 public:
  static Palette defaults();
  static Palette load(const fs::path& path);
  static Palette from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  const std::array<PaletteEntry, kNumClasses>& entries() const noexcept { return entries_; }
  const PaletteEntry& operator[](int index) const { return entries_.at(index); }
  int index_of(const std::string& name) const;  // throws InvalidMetadata
  int water_index() const { return index_of("water"); }
  int sky_index() const { return index_of("sky"); }
  std::optional<int> lookup(std::array<std::uint8_t, 3> rgb) const;

 private:
  std::array<PaletteEntry, kNumClasses> entries_{};
};

struct SegMap {
  Grid<std::uint8_t> labels;
  std::shared_ptr<const Palette> palette;

  int height() const noexcept { return labels.height(); }
  int width() const noexcept { return labels.width(); }
};

// 1 = pixel may be altered (floodable).
struct FloodMask {
  Grid<std::uint8_t> bits;

  FloodMask() = default;
  FloodMask(int height, int width, std::uint8_t fill = 0) : bits(height, width, 1, fill) {}

  int height() const noexcept { return bits.height(); }
  int width() const noexcept { return bits.width(); }
  std::size_t count() const;
  bool subset_of(const FloodMask& other) const;
  FloodMask complement() const;
  friend bool operator==(const FloodMask&, const FloodMask&) = default;
};

FloodMask class_mask(const SegMap& seg, int class_index);

struct CaptureMeta {
  std::optional<double> camera_fov_deg;
  std::optional<double> camera_height_m;
  std::array<double, 3> camera_position{};
  std::array<double, 3> camera_rotation{};
  int width = 0;
  int height = 0;
  std::optional<double> water_level_m;

  static CaptureMeta from_json(const nlohmann::json& j);  // throws InvalidMetadata
  nlohmann::json to_json() const;
};

struct SimSample {
  std::string id;
  Image non_flooded;
  Image flooded;
  DepthMap depth;
  SegMap seg_non_flooded;
  SegMap seg_flooded;
  FloodMask water_mask;
  CaptureMeta meta;
};

// File names inside a simulated capture directory.
namespace sim_files {
inline constexpr const char* kNonFlooded = "nonflooded.png";
inline constexpr const char* kFlooded = "flooded.png";
inline constexpr const char* kDepth = "depth.png";
inline constexpr const char* kSegNonFlooded = "seg_nonflooded.png";
inline constexpr const char* kSegFlooded = "seg_flooded.png";
inline constexpr const char* kMask = "mask.png";
inline constexpr const char* kMeta = "meta.json";
}  // namespace sim_files

SimSample load_sim_sample(const fs::path& dir,
                          std::shared_ptr<const Palette> palette = nullptr);

// Writes a capture in the on-disk layout load_sim_sample reads. Segmentation
// maps are written as palette colors.
void save_sim_sample(const SimSample& sample, const fs::path& dir);

struct SimRef {
  std::string id;
  fs::path dir;
  friend bool operator==(const SimRef&, const SimRef&) = default;
};

struct DatasetIndex {
  fs::path root;
  std::vector<fs::path> real_flooded;
  std::vector<fs::path> real_non_flooded;
  std::map<fs::path, fs::path> real_water_masks;
  std::vector<SimRef> sim_samples;
  std::shared_ptr<const Palette> palette;

  struct Counts {
    std::size_t real_flooded, real_non_flooded, sim;
    friend bool operator==(const Counts&, const Counts&) = default;
  };
  Counts counts() const {
    return {real_flooded.size(), real_non_flooded.size(), sim_samples.size()};
  }
};

struct IndexConfig {
  bool require_real = true;
  bool require_sim = false;
  std::optional<fs::path> palette_file;
};

DatasetIndex build_index(const fs::path& root, const IndexConfig& config = {});

// Translation domains: A = non-flooded, B = flooded.
enum class Side { A, B };
enum class Source { Real, Sim };

struct BatchItem {
  Source source = Source::Real;
  Side side = Side::A;
  std::size_t index = 0;  // into real_{flooded,non_flooded} or sim_samples

  bool has_labels() const noexcept { return source == Source::Sim; }
  friend bool operator==(const BatchItem&, const BatchItem&) = default;
};

struct Batch {
  std::vector<BatchItem> items;
  std::size_t sim_count() const;
  friend bool operator==(const Batch&, const Batch&) = default;
};

struct DomainSpec {
  Side side = Side::A;
  double sim_fraction = 0.5;
};

// Infinite, seeded stream of batches for one translation side. Each draw picks
// the simulated pool with probability sim_fraction (when both pools are
// non-empty) and then the next entry of that pool's shuffled order.
class BatchIterator {
 public:
  BatchIterator(const DatasetIndex& index, int batch_size, std::uint64_t seed, DomainSpec spec);

  Batch next();
  void skip(std::size_t n_batches);
  std::size_t batches_per_epoch() const noexcept;
  int batch_size() const noexcept { return batch_size_; }

 private:
  struct Pool {
    Source source;
    std::size_t size = 0;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
  };
  BatchItem draw(Pool& pool);

  int batch_size_;
  DomainSpec spec_;
  std::mt19937_64 rng_;
  Pool real_;
  Pool sim_;
};

}  // namespace floodgen
