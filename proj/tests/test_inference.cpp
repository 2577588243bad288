#include <doctest.h>

#include <fstream>
#include <random>
#include <thread>

#include "floodgen/errors.hpp"
#include "floodgen/image_io.hpp"
#include "floodgen/inference.hpp"
#include "support/synthetic_scene.hpp"

using namespace floodgen;
using floodgen::testing::make_scene;
using floodgen::testing::SceneSpec;
using floodgen::testing::TempDir;

namespace {

ArchConfig small_arch() {
  ArchConfig a = ArchConfig::desk_scale();
  a.base_channels = 8;
  a.n_residual_blocks = 1;
  a.mlp_dim = 16;
  a.disc_channels = 8;
  a.seg_channels = 8;
  a.domain_channels = 8;
  a.height_channels = 8;
  return a;
}

Flooder make_flooder(InferenceConfig config = {}, std::shared_ptr<DepthProvider> depth = nullptr) {
  return Flooder(make_bundle(small_arch(), 3), std::move(depth), nullptr, config);
}

Image noise_image(int h, int w, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> d(0.0F, 1.0F);
  Image im(h, w);
  for (auto& v : im.pixels.storage()) v = d(rng);
  return im;
}

std::size_t outside_mask_differences(const Image& a, const Image& b, const FloodMask& mask) {
  std::size_t n = 0;
  for (int v = 0; v < a.height(); ++v)
    for (int u = 0; u < a.width(); ++u)
      for (int c = 0; c < 3; ++c)
        if (!mask.bits.at(v, u) && a.at(v, u, c) != b.at(v, u, c)) ++n;
  return n;
}

}  // namespace

TEST_CASE("request validation") {
  FloodRequest r;
  r.image = noise_image(8, 8, 1);
  CHECK_NOTHROW(r.validate());
  r.flood_level_m = 1.0;
  r.flood_fraction = 0.2;
  CHECK_THROWS_AS(r.validate(), BadRequest);
  r.flood_level_m.reset();
  r.flood_fraction = 1.5;
  CHECK_THROWS_AS(r.validate(), BadRequest);
  r.flood_fraction.reset();
  r.image = Image();
  CHECK_THROWS_AS(r.validate(), BadRequest);

  auto flooder = make_flooder();
  FloodRequest both;
  both.image = noise_image(16, 16, 2);
  both.flood_level_m = 0.5;
  both.flood_fraction = 0.5;
  CHECK_THROWS_AS(flooder.flood(both), BadRequest);
}

TEST_CASE("pad_to_multiple reflects and keeps the original block") {
  auto x = torch::arange(2 * 5 * 7, torch::kFloat32).reshape({1, 2, 5, 7});
  auto y = pad_to_multiple(x, 4);
  CHECK(y.sizes() == torch::IntArrayRef({1, 2, 8, 8}));
  CHECK(torch::equal(y.slice(2, 0, 5).slice(3, 0, 7), x));
  // reflection: padded row 5 mirrors row 3
  CHECK(torch::equal(y.select(2, 5).slice(2, 0, 7), x.select(2, 3)));
  CHECK(pad_to_multiple(y, 4).data_ptr() == y.data_ptr());
  auto tiny = pad_to_multiple(torch::rand({1, 3, 1, 2}), 4);
  CHECK(tiny.sizes() == torch::IntArrayRef({1, 3, 4, 4}));
}

TEST_CASE("composite takes generated pixels only inside the mask") {
  auto a = noise_image(6, 5, 3), g = noise_image(6, 5, 4);
  FloodMask m(6, 5);
  m.bits.at(2, 1) = 1;
  m.bits.at(5, 4) = 1;
  auto out = composite(a, g, m);
  CHECK(outside_mask_differences(a, out, m) == 0);
  for (int c = 0; c < 3; ++c) {
    CHECK(out.at(2, 1, c) == g.at(2, 1, c));
    CHECK(out.at(5, 4, c) == g.at(5, 4, c));
  }
  CHECK_THROWS_AS(composite(a, noise_image(5, 5, 1), m), DimensionMismatch);
}

TEST_CASE("fraction 0 is a passthrough") {
  auto flooder = make_flooder();
  FloodRequest r;
  r.image = noise_image(40, 52, 5);
  r.flood_fraction = 0.0;
  auto res = flooder.flood(r);
  CHECK(res.mask.count() == 0);
  CHECK(res.flooded == r.image);
}

TEST_CASE("outside-mask pixels are bit-identical to the input") {
  auto flooder = make_flooder();
  for (unsigned trial = 0; trial < 6; ++trial) {
    CAPTURE(trial);
    FloodRequest r;
    const int h = 24 + 7 * static_cast<int>(trial), w = 60 - 5 * static_cast<int>(trial);
    r.image = noise_image(h, w, 10 + trial);
    if (trial % 2 == 0) r.flood_fraction = 0.1 + 0.15 * trial;
    else r.flood_level_m = 0.2 * trial;
    r.style_seed = trial;
    auto res = flooder.flood(r);
    REQUIRE(res.flooded.height() == h);
    REQUIRE(res.flooded.width() == w);
    CHECK(outside_mask_differences(r.image, res.flooded, res.mask) == 0);
    CHECK(res.mask.count() > 0);
    CHECK_NOTHROW(res.flooded.validate());
  }
}

TEST_CASE("same style seed gives identical output, different seeds differ") {
  auto flooder = make_flooder();
  FloodRequest r;
  r.image = noise_image(32, 48, 7);
  r.flood_fraction = 0.5;
  r.style_seed = 42;
  auto a = flooder.flood(r), b = flooder.flood(r);
  CHECK(a.flooded == b.flooded);
  CHECK(a.mask == b.mask);
  CHECK(a.diagnostics == b.diagnostics);
  r.style_seed = 43;
  auto c = flooder.flood(r);
  CHECK(c.mask == a.mask);
  CHECK_FALSE(c.flooded == a.flooded);

  // a second bundle from the same checkpoint bytes behaves the same
  TempDir dir("inference_ckpt");
  auto path = dir.path() / "m.pt";
  auto bundle = make_bundle(small_arch(), 3);
  save_bundle(bundle, path);
  auto loaded = Flooder::from_checkpoint(path);
  r.style_seed = 42;
  CHECK(loaded.flood(r).flooded == a.flooded);
}

TEST_CASE("missing or bad checkpoint is a ModelLoadError") {
  TempDir dir("inference_bad");
  CHECK_THROWS_AS(Flooder::from_checkpoint(dir.path() / "nope.pt"), ModelLoadError);
  std::ofstream(dir.path() / "junk.pt") << "not a checkpoint";
  CHECK_THROWS_AS(Flooder::from_checkpoint(dir.path() / "junk.pt"), ModelLoadError);
}

TEST_CASE("mask grows with the flood level end to end") {
  SceneSpec spec;
  spec.width = 64;
  spec.height = 48;
  const auto scene = make_scene(spec);
  auto depth = std::make_shared<FixedDepthProvider>(scene.sample.depth);
  InferenceConfig config;
  config.exclude_sky = false;
  for (auto cfg : {config, InferenceConfig{}}) {
    auto flooder = make_flooder(cfg, depth);
    FloodRequest r;
    r.image = scene.sample.non_flooded;
    r.camera = scene.camera;
    FloodMask previous(spec.height, spec.width);
    for (double level : {0.0, 0.25, 0.5, 1.0, 1.5, 3.0}) {
      CAPTURE(level);
      r.flood_level_m = level;
      auto res = flooder.flood(r);
      CHECK(res.diagnostics["mask_mode"] == "metric_depth");
      CHECK(previous.subset_of(res.mask));
      CHECK(outside_mask_differences(r.image, res.flooded, res.mask) == 0);
      previous = res.mask;
    }
    CHECK(previous.count() > 0);
  }

  // prior depth on an arbitrary photo
  auto flooder = make_flooder();
  FloodRequest r;
  r.image = noise_image(48, 64, 9);
  r.flood_level_m = 0.5;
  auto low = flooder.flood(r);
  r.flood_level_m = 1.5;
  auto high = flooder.flood(r);
  CHECK(low.mask.subset_of(high.mask));
  CHECK(high.diagnostics["depth_source"] == "ground_plane_prior");
}

TEST_CASE("sky exclusion comes from the seg head and only shrinks the mask") {
  const auto image = noise_image(32, 32, 11);
  InferenceConfig open;
  open.exclude_sky = false;
  auto without = make_flooder(open), with = make_flooder();
  FloodRequest r;
  r.image = image;
  r.flood_fraction = 0.6;
  auto a = without.flood(r), b = with.flood(r);
  CHECK(b.mask.count() <= a.mask.count());
}

TEST_CASE("diagnostics and return_mask") {
  auto flooder = make_flooder();
  FloodRequest r;
  r.image = noise_image(20, 28, 12);
  auto res = flooder.flood(r);
  for (const char* key : {"mask_mode", "depth_source", "n_reference_objects", "scale_estimate",
                          "mask_fraction", "composited", "style"}) {
    CAPTURE(key);
    CHECK(res.diagnostics.contains(key));
  }
  CHECK(res.diagnostics["mask_mode"] == "percentile");
  CHECK(res.diagnostics["flood_fraction"] == doctest::Approx(0.3));
  CHECK(res.diagnostics["n_reference_objects"] == 0);
  r.return_mask = false;
  CHECK(flooder.flood(r).mask.bits.empty());
}

TEST_CASE("per-request detections scale a relative depth map") {
  SceneSpec spec;
  spec.width = 64;
  spec.height = 48;
  const auto scene = make_scene(spec);
  auto rel = scene.sample.depth;
  for (auto& v : rel.values.storage()) v *= 0.1;
  rel.is_metric = false;
  auto flooder = make_flooder({}, std::make_shared<FixedDepthProvider>(rel, "relative"));
  FloodRequest r;
  r.image = scene.sample.non_flooded;
  r.camera = scene.camera;
  r.flood_level_m = 1.0;
  CHECK(flooder.flood(r).diagnostics["mask_mode"] == "percentile");
  RawDetection det;
  det.object_class = ReferenceClass::Car;
  det.image_bbox = {20, 30, 34, 40};
  det.estimated_height_m = 1.5;
  r.detections = std::vector<RawDetection>{det};
  auto res = flooder.flood(r);
  CHECK(res.diagnostics["n_reference_objects"] == 1);
  CHECK(res.diagnostics["mask_mode"] == "scaled_references");
}

TEST_CASE("odd and tiny sizes, model_side and raw mode") {
  for (auto [h, w] : {std::pair{37, 53}, std::pair{5, 7}, std::pair{1, 1}}) {
    CAPTURE(h);
    CAPTURE(w);
    auto flooder = make_flooder();
    FloodRequest r;
    r.image = noise_image(h, w, 13);
    r.flood_fraction = 1.0;
    auto res = flooder.flood(r);
    CHECK(res.flooded.height() == h);
    CHECK(res.flooded.width() == w);
  }
  InferenceConfig resized;
  resized.model_side = 32;
  auto flooder = make_flooder(resized);
  FloodRequest r;
  r.image = noise_image(50, 90, 14);
  auto res = flooder.flood(r);
  CHECK(res.flooded.height() == 50);
  CHECK(res.flooded.width() == 90);
  CHECK(outside_mask_differences(r.image, res.flooded, res.mask) == 0);

  InferenceConfig raw;
  raw.composite = false;
  auto raw_flooder = make_flooder(raw);
  auto full = raw_flooder.flood(r);
  CHECK(full.flooded == raw_flooder.translate(r.image, 0));
  CHECK(outside_mask_differences(r.image, full.flooded, full.mask) > 0);
  CHECK(full.diagnostics["composited"] == false);
  CHECK_THROWS_AS(make_flooder(InferenceConfig{.model_side = -1}), InvalidConfig);
}

TEST_CASE("style from a reference image") {
  auto flooder = make_flooder();
  FloodRequest r;
  r.image = noise_image(32, 32, 15);
  r.flood_fraction = 0.5;
  r.style_reference = noise_image(24, 40, 16);
  auto a = flooder.flood(r), b = flooder.flood(r);
  CHECK(a.flooded == b.flooded);
  CHECK(a.diagnostics["style"] == "reference");
  r.style_reference = noise_image(24, 40, 17);
  CHECK_FALSE(flooder.flood(r).flooded == a.flooded);
}

TEST_CASE("concurrent floods match the sequential result") {
  auto flooder = make_flooder();
  FloodRequest r;
  r.image = noise_image(32, 40, 18);
  r.style_seed = 9;
  const auto expected = flooder.flood(r).flooded;
  std::vector<Image> out(4);
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) threads.emplace_back([&, i] { out[i] = flooder.flood(r).flooded; });
  for (auto& t : threads) t.join();
  for (const auto& o : out) CHECK(o == expected);
}

TEST_CASE("depth provider failures propagate") {
  auto failing = std::make_shared<FunctionDepthProvider>(
      [](const Image&) -> DepthMap { throw DepthProviderFailure("boom"); }, "failing");
  auto flooder = make_flooder({}, failing);
  FloodRequest r;
  r.image = noise_image(16, 16, 19);
  CHECK_THROWS_AS(flooder.flood(r), DepthProviderFailure);
}

TEST_CASE("flood_batch isolates per-file failures") {
  TempDir in("batch_in"), out("batch_out");
  auto flooder = make_flooder();
  FloodRequest defaults;
  defaults.flood_fraction = 0.4;

  SUBCASE("empty directory") {
    CHECK_THROWS_AS(flood_batch(in.path(), out.path(), defaults, flooder, false), EmptyInput);
  }
  SUBCASE("three valid images") {
    for (int i = 0; i < 3; ++i) save_image(in.path() / ("im" + std::to_string(i) + ".png"), noise_image(20, 24, 20 + i));
    auto s = flood_batch(in.path(), out.path(), defaults, flooder, true);
    CHECK(s.ok == 3);
    CHECK(s.failed == 0);
    for (int i = 0; i < 3; ++i) {
      const auto stem = "im" + std::to_string(i);
      CHECK(std::filesystem::exists(out.path() / (stem + ".png")));
      auto mask = load_mask(out.path() / (stem + "_mask.png"));
      CHECK(mask.height() == 20);
      CHECK(mask.count() > 0);
    }
    CHECK(s.to_json()["ok"] == 3);
  }
  SUBCASE("two valid and one corrupt") {
    save_image(in.path() / "a.png", noise_image(20, 24, 30));
    save_image(in.path() / "b.png", noise_image(20, 24, 31));
    std::ofstream(in.path() / "c.png") << "definitely not a png";
    auto s = flood_batch(in.path(), out.path(), defaults, flooder, false);
    CHECK(s.ok == 2);
    CHECK(s.failed == 1);
    REQUIRE(s.failures.size() == 1);
    CHECK(s.failures[0].first == "c.png");
    CHECK_FALSE(s.failures[0].second.empty());
    CHECK_FALSE(std::filesystem::exists(out.path() / "a_mask.png"));
    CHECK(s.to_json()["failures"][0]["file"] == "c.png");
  }
  SUBCASE("detections sidecar is picked up and not treated as an image") {
    save_image(in.path() / "street.png", noise_image(20, 24, 32));
    std::ofstream(in.path() / "street.detections.json")
        << R"([{"class": "car", "bbox": [4, 10, 12, 16], "height_m": 1.5}])";
    auto s = flood_batch(in.path(), out.path(), defaults, flooder, false);
    CHECK(s.ok == 1);
    CHECK(s.failed == 0);
  }
}

TEST_CASE("TorchScript depth provider") {
  TempDir dir("script_depth");
  torch::jit::Module m("Depth");
  m.define(R"(
def forward(self, x):
    return x.mean(1, keepdim=True) * 10.0 + 1.0
)");
  const auto path = dir.path() / "depth.pt";
  m.save(path.string());
  TorchScriptDepthProvider provider(path, true);
  auto image = noise_image(6, 9, 40);
  auto depth = provider.infer(image);
  REQUIRE(depth.height() == 6);
  REQUIRE(depth.width() == 9);
  CHECK(depth.is_metric);
  const double mean = (image.at(2, 3, 0) + image.at(2, 3, 1) + image.at(2, 3, 2)) / 3.0;
  CHECK(depth.values.at(2, 3) == doctest::Approx(mean * 10.0 + 1.0).epsilon(1e-5));
  CHECK(provider.name() == "torchscript:depth.pt");
  CHECK_THROWS_AS(TorchScriptDepthProvider(dir.path() / "missing.pt", false), ModelLoadError);

  torch::jit::Module bad("Bad");
  bad.define(R"(
def forward(self, x):
    return x
)");
  bad.save((dir.path() / "bad.pt").string());
  TorchScriptDepthProvider wrong(dir.path() / "bad.pt", true);
  CHECK_THROWS_AS(wrong.infer(image), DepthProviderFailure);
}
