#include "floodgen/sim_dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "floodgen/image_io.hpp"

namespace floodgen {

Image::Image(Grid<float> p) : pixels(std::move(p)) {
  if (pixels.channels() != 3) throw DimensionMismatch("image must have 3 channels");
}

void Image::validate() const {
  if (height() < 1 || width() < 1) throw DimensionMismatch("image must be at least 1x1");
  for (float x : pixels.data()) {
    if (!(x >= 0.0F && x <= 1.0F)) throw OutOfRange("image value outside [0,1]");
  }
}

// ---------------------------------------------------------------------------
// depth codec

double depth_from_code(std::uint32_t code) {
  return static_cast<double>(code) / kMaxDepthCode * kDepthRangeM;
}

std::uint32_t code_from_depth(double meters) {
  if (!(meters >= 0.0 && meters <= kDepthRangeM)) {
    throw OutOfRange("depth " + std::to_string(meters) + " m outside [0, 655.36]");
  }
  return static_cast<std::uint32_t>(std::llround(meters / kDepthRangeM * kMaxDepthCode));
}

DepthMap decode_depth(const Grid<std::uint8_t>& depth_image) {
  if (depth_image.channels() != 3) throw DimensionMismatch("depth image must have 3 channels");
  DepthMap out{Grid<double>(depth_image.height(), depth_image.width()), true};
  for (int v = 0; v < depth_image.height(); ++v) {
    for (int u = 0; u < depth_image.width(); ++u) {
      const std::uint32_t code = (std::uint32_t{depth_image.at(v, u, 0)} << 16) |
                                 (std::uint32_t{depth_image.at(v, u, 1)} << 8) |
                                 std::uint32_t{depth_image.at(v, u, 2)};
      out.values.at(v, u) = depth_from_code(code);
    }
  }
  return out;
}

Grid<std::uint8_t> encode_depth(const DepthMap& depth) {
  if (!depth.is_metric) throw NotMetric("only metric depth can be encoded");
  Grid<std::uint8_t> out(depth.height(), depth.width(), 3);
  for (int v = 0; v < depth.height(); ++v) {
    for (int u = 0; u < depth.width(); ++u) {
      const std::uint32_t code = code_from_depth(depth.values.at(v, u));
      out.at(v, u, 0) = static_cast<std::uint8_t>(code >> 16);
      out.at(v, u, 1) = static_cast<std::uint8_t>((code >> 8) & 0xFF);
      out.at(v, u, 2) = static_cast<std::uint8_t>(code & 0xFF);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// palette

Palette Palette::defaults() {
  Palette p;
  p.entries_ = {{
      {0, "ground", {128, 64, 128}},
      {1, "sidewalk", {244, 35, 232}},
      {2, "building", {70, 70, 70}},
      {3, "vegetation", {107, 142, 35}},
      {4, "sky", {70, 130, 180}},
      {5, "person", {220, 20, 60}},
      {6, "vehicle", {0, 0, 142}},
      {7, "pole", {220, 220, 0}},
      {8, "water", {0, 191, 255}},
      {9, "other", {0, 0, 0}},
  }};
  return p;
}

Palette Palette::from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != kNumClasses) {
    throw InvalidMetadata("palette must list exactly 10 classes");
  }
  Palette p;
  std::set<int> seen_index;
  std::set<std::string> seen_name;
  std::set<std::array<std::uint8_t, 3>> seen_rgb;
  for (const auto& rec : j) {
    PaletteEntry e;
    try {
      e.index = rec.at("index").get<int>();
      e.name = rec.at("name").get<std::string>();
      auto rgb = rec.at("rgb").get<std::vector<int>>();
      if (rgb.size() != 3) throw InvalidMetadata("palette rgb needs 3 components");
      for (int c = 0; c < 3; ++c) {
        if (rgb[c] < 0 || rgb[c] > 255) throw InvalidMetadata("palette rgb outside [0,255]");
        e.rgb[c] = static_cast<std::uint8_t>(rgb[c]);
      }
    } catch (const nlohmann::json::exception& ex) {
      throw InvalidMetadata(std::string("palette record: ") + ex.what());
    }
    if (e.index < 0 || e.index >= kNumClasses || !seen_index.insert(e.index).second) {
      throw InvalidMetadata("palette indices must be a permutation of 0..9");
    }
    if (!seen_name.insert(e.name).second) throw InvalidMetadata("duplicate class " + e.name);
    if (!seen_rgb.insert(e.rgb).second) throw InvalidMetadata("duplicate color for " + e.name);
    p.entries_[e.index] = e;
  }
  p.water_index();
  return p;
}

Palette Palette::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& ex) {
    throw InvalidMetadata(path.string() + ": " + ex.what());
  }
}

nlohmann::json Palette::to_json() const {
  auto j = nlohmann::json::array();
  for (const auto& e : entries_) {
    j.push_back({{"index", e.index}, {"name", e.name}, {"rgb", {e.rgb[0], e.rgb[1], e.rgb[2]}}});
  }
  return j;
}

int Palette::index_of(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.index;
  }
  throw InvalidMetadata("palette has no class named '" + name + "'");
}

std::optional<int> Palette::lookup(std::array<std::uint8_t, 3> rgb) const {
  for (const auto& e : entries_) {
    if (e.rgb == rgb) return e.index;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// masks

std::size_t FloodMask::count() const {
  return static_cast<std::size_t>(std::count(bits.data().begin(), bits.data().end(), 1));
}

bool FloodMask::subset_of(const FloodMask& other) const {
  require_same_extent(bits, other.bits, "mask inclusion");
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] && !other.bits[i]) return false;
  }
  return true;
}

FloodMask FloodMask::complement() const {
  FloodMask out(height(), width());
  for (std::size_t i = 0; i < bits.size(); ++i) out.bits[i] = bits[i] ? 0 : 1;
  return out;
}

FloodMask class_mask(const SegMap& seg, int class_index) {
  FloodMask out(seg.height(), seg.width());
  for (std::size_t i = 0; i < seg.labels.size(); ++i) {
    out.bits[i] = seg.labels[i] == class_index ? 1 : 0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// metadata

namespace {

std::array<double, 3> vec3(const nlohmann::json& j, const char* key) {
  std::array<double, 3> out{};
  if (!j.contains(key) || j.at(key).is_null()) return out;
  const auto& a = j.at(key);
  if (a.is_array() && a.size() == 3) {
    for (int i = 0; i < 3; ++i) out[i] = a[i].get<double>();
  } else if (a.is_object()) {
    out = {a.at("x").get<double>(), a.at("y").get<double>(), a.at("z").get<double>()};
  } else {
    throw InvalidMetadata(std::string(key) + " must be a 3-vector");
  }
  return out;
}

std::optional<double> optional_number(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

CaptureMeta CaptureMeta::from_json(const nlohmann::json& j) {
  CaptureMeta m;
  try {
    m.camera_fov_deg = optional_number(j, "camera_fov_deg");
    m.camera_height_m = optional_number(j, "camera_height_m");
    m.water_level_m = optional_number(j, "water_level_m");
    m.camera_position = vec3(j, "camera_position");
    m.camera_rotation = vec3(j, "camera_rotation");
    const auto& res = j.at("resolution");
    if (res.is_array() && res.size() == 2) {
      m.width = res[0].get<int>();
      m.height = res[1].get<int>();
    } else {
      m.width = res.at("width").get<int>();
      m.height = res.at("height").get<int>();
    }
  } catch (const nlohmann::json::exception& ex) {
    throw InvalidMetadata(std::string("meta.json: ") + ex.what());
  }
  if (m.camera_fov_deg && !(*m.camera_fov_deg > 0.0 && *m.camera_fov_deg < 180.0)) {
    throw InvalidMetadata("camera_fov_deg must lie in (0, 180)");
  }
  if (m.camera_height_m && !(*m.camera_height_m > 0.0)) {
    throw InvalidMetadata("camera_height_m must be positive");
  }
  if (m.width < 1 || m.height < 1) throw InvalidMetadata("resolution must be positive");
  return m;
}

nlohmann::json CaptureMeta::to_json() const {
  nlohmann::json j;
  j["camera_fov_deg"] = camera_fov_deg ? nlohmann::json(*camera_fov_deg) : nlohmann::json();
  j["camera_height_m"] = camera_height_m ? nlohmann::json(*camera_height_m) : nlohmann::json();
  j["camera_position"] = camera_position;
  j["camera_rotation"] = camera_rotation;
  j["resolution"] = {width, height};
  j["water_level_m"] = water_level_m ? nlohmann::json(*water_level_m) : nlohmann::json();
  return j;
}

// ---------------------------------------------------------------------------
// simulated captures

namespace {

constexpr std::array<const char*, 7> kSimFiles = {
    sim_files::kNonFlooded,   sim_files::kFlooded, sim_files::kDepth, sim_files::kSegNonFlooded,
    sim_files::kSegFlooded,   sim_files::kMask,    sim_files::kMeta};

void require_sim_files(const fs::path& dir) {
  for (const char* name : kSimFiles) {
    if (!fs::is_regular_file(dir / name)) throw MissingFile(name);
  }
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& ex) {
    throw InvalidMetadata(path.string() + ": " + ex.what());
  }
}

SegMap load_seg(const fs::path& path, const std::shared_ptr<const Palette>& palette) {
  auto raw = load_raw8(path, 0);
  SegMap seg{Grid<std::uint8_t>(raw.height(), raw.width()), palette};
  for (int v = 0; v < raw.height(); ++v) {
    for (int u = 0; u < raw.width(); ++u) {
      int label;
      if (raw.channels() == 1) {
        label = raw.at(v, u);
        if (label >= kNumClasses) {
          throw LabelOutOfRange(path.filename().string() + ": label " + std::to_string(label));
        }
      } else {
        auto found = palette->lookup({raw.at(v, u, 0), raw.at(v, u, 1), raw.at(v, u, 2)});
        if (!found) {
          throw BadLabelColor(path.filename().string() + ": unknown color at (" +
                              std::to_string(u) + ", " + std::to_string(v) + ")");
        }
        label = *found;
      }
      seg.labels.at(v, u) = static_cast<std::uint8_t>(label);
    }
  }
  return seg;
}

Grid<std::uint8_t> seg_colors(const SegMap& seg) {
  const Palette& palette = *seg.palette;
  Grid<std::uint8_t> out(seg.height(), seg.width(), 3);
  for (int v = 0; v < seg.height(); ++v) {
    for (int u = 0; u < seg.width(); ++u) {
      const auto& rgb = palette[seg.labels.at(v, u)].rgb;
      for (int c = 0; c < 3; ++c) out.at(v, u, c) = rgb[c];
    }
  }
  return out;
}

std::string sim_id(const fs::path& dir, const nlohmann::json& meta) {
  if (meta.contains("id") && meta.at("id").is_string()) return meta.at("id").get<std::string>();
  return dir.filename().string();
}

}  // namespace

SimSample load_sim_sample(const fs::path& dir, std::shared_ptr<const Palette> palette) {
  if (!palette) palette = std::make_shared<const Palette>(Palette::defaults());
  require_sim_files(dir);

  const auto meta_json = read_json(dir / sim_files::kMeta);
  SimSample s;
  s.id = sim_id(dir, meta_json);
  s.meta = CaptureMeta::from_json(meta_json);
  s.non_flooded = load_image(dir / sim_files::kNonFlooded);
  s.flooded = load_image(dir / sim_files::kFlooded);
  s.depth = decode_depth(load_raw8(dir / sim_files::kDepth, 3));
  s.seg_non_flooded = load_seg(dir / sim_files::kSegNonFlooded, palette);
  s.seg_flooded = load_seg(dir / sim_files::kSegFlooded, palette);
  const FloodMask file_mask = load_mask(dir / sim_files::kMask);

  const auto& ref = s.non_flooded.pixels;
  require_same_extent(ref, s.flooded.pixels, "flooded.png");
  require_same_extent(ref, s.depth.values, "depth.png");
  require_same_extent(ref, s.seg_non_flooded.labels, "seg_nonflooded.png");
  require_same_extent(ref, s.seg_flooded.labels, "seg_flooded.png");
  require_same_extent(ref, file_mask.bits, "mask.png");

  s.water_mask = class_mask(s.seg_flooded, palette->water_index());
  std::size_t mismatched = 0;
  for (std::size_t i = 0; i < file_mask.bits.size(); ++i) {
    mismatched += file_mask.bits[i] != s.water_mask.bits[i];
  }
  if (mismatched != 0) {
    throw MaskInconsistent(s.id + ": mask.png disagrees with water pixels of seg_flooded.png at " +
                           std::to_string(mismatched) + " pixels");
  }
  return s;
}

void save_sim_sample(const SimSample& sample, const fs::path& dir) {
  fs::create_directories(dir);
  save_image(dir / sim_files::kNonFlooded, sample.non_flooded);
  save_image(dir / sim_files::kFlooded, sample.flooded);
  save_raw8(dir / sim_files::kDepth, encode_depth(sample.depth));
  save_raw8(dir / sim_files::kSegNonFlooded, seg_colors(sample.seg_non_flooded));
  save_raw8(dir / sim_files::kSegFlooded, seg_colors(sample.seg_flooded));
  save_mask(dir / sim_files::kMask, sample.water_mask);
  auto meta = sample.meta.to_json();
  if (!sample.id.empty() && sample.id != dir.filename().string()) meta["id"] = sample.id;
  std::ofstream(dir / sim_files::kMeta) << meta.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// index

namespace {

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

DatasetIndex build_index(const fs::path& root, const IndexConfig& config) {
  DatasetIndex index;
  index.root = root;
  if (config.palette_file) {
    index.palette = std::make_shared<const Palette>(Palette::load(*config.palette_file));
  } else if (fs::is_regular_file(root / "palette.json")) {
    index.palette = std::make_shared<const Palette>(Palette::load(root / "palette.json"));
  } else {
    index.palette = std::make_shared<const Palette>(Palette::defaults());
  }

  index.real_flooded = list_images(root / "real" / "flooded");
  index.real_non_flooded = list_images(root / "real" / "nonflooded");
  const fs::path mask_dir = root / "real" / "masks" / "flooded";
  for (const auto& img : index.real_flooded) {
    auto mask = mask_dir / img.filename().replace_extension(".png");
    if (fs::is_regular_file(mask)) index.real_water_masks.emplace(img, mask);
  }

  if (fs::is_directory(root / "sim")) {
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root / "sim")) {
      if (entry.is_directory()) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    std::set<std::string> ids;
    for (const auto& dir : dirs) {
      require_sim_files(dir);
      auto id = sim_id(dir, read_json(dir / sim_files::kMeta));
      if (!ids.insert(id).second) throw DuplicateId("simulated sample id '" + id + "'");
      index.sim_samples.push_back({id, dir});
    }
  }

  if (config.require_real) {
    if (index.real_flooded.empty()) throw EmptyDomain("no images in real/flooded");
    if (index.real_non_flooded.empty()) throw EmptyDomain("no images in real/nonflooded");
  }
  if (config.require_sim && index.sim_samples.empty()) throw EmptyDomain("no simulated samples");
  return index;
}

// ---------------------------------------------------------------------------
// batches

std::size_t Batch::sim_count() const {
  return static_cast<std::size_t>(
      std::count_if(items.begin(), items.end(), [](const BatchItem& i) { return i.has_labels(); }));
}

BatchIterator::BatchIterator(const DatasetIndex& index, int batch_size, std::uint64_t seed,
                             DomainSpec spec)
    : batch_size_(batch_size), spec_(spec), rng_(seed) {
  if (batch_size < 1) throw InvalidConfig("batch_size must be at least 1");
  if (!(spec.sim_fraction >= 0.0 && spec.sim_fraction <= 1.0)) {
    throw InvalidConfig("sim_fraction must lie in [0,1]");
  }
  real_.source = Source::Real;
  real_.size = spec.side == Side::A ? index.real_non_flooded.size() : index.real_flooded.size();
  sim_.source = Source::Sim;
  sim_.size = index.sim_samples.size();
  if (spec.sim_fraction == 0.0) sim_.size = 0;
  if (spec.sim_fraction == 1.0) real_.size = 0;
  if (real_.size + sim_.size == 0) {
    throw EmptyDomain(std::string("no samples for side ") + (spec.side == Side::A ? "A" : "B"));
  }
  for (Pool* pool : {&real_, &sim_}) {
    pool->order.resize(pool->size);
    std::iota(pool->order.begin(), pool->order.end(), std::size_t{0});
    std::shuffle(pool->order.begin(), pool->order.end(), rng_);
  }
}

BatchItem BatchIterator::draw(Pool& pool) {
  if (pool.cursor == pool.order.size()) {
    std::shuffle(pool.order.begin(), pool.order.end(), rng_);
    pool.cursor = 0;
  }
  return {pool.source, spec_.side, pool.order[pool.cursor++]};
}

Batch BatchIterator::next() {
  Batch batch;
  batch.items.reserve(batch_size_);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < batch_size_; ++i) {
    bool use_sim;
    if (sim_.size == 0) {
      use_sim = false;
    } else if (real_.size == 0) {
      use_sim = true;
    } else {
      use_sim = unit(rng_) < spec_.sim_fraction;
    }
    batch.items.push_back(draw(use_sim ? sim_ : real_));
  }
  return batch;
}

void BatchIterator::skip(std::size_t n_batches) {
  for (std::size_t i = 0; i < n_batches; ++i) next();
}

std::size_t BatchIterator::batches_per_epoch() const noexcept {
  const std::size_t total = real_.size + sim_.size;
  return (total + batch_size_ - 1) / batch_size_;
}

}  // namespace floodgen
