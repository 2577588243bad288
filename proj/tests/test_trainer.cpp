#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <set>

#include "floodgen/errors.hpp"
#include "floodgen/trainer.hpp"
#include "support/synthetic_scene.hpp"

using namespace floodgen;
using floodgen::testing::TempDir;
using floodgen::testing::write_dataset;
using torch::Tensor;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.arch.base_channels = 8;
  c.arch.n_residual_blocks = 1;
  c.arch.mlp_dim = 16;
  c.arch.disc_channels = 8;
  c.arch.seg_channels = 8;
  c.arch.domain_channels = 8;
  c.arch.height_channels = 8;
  c.image_size = 32;
  c.total_steps = 3;
  c.checkpoint_every = 2;
  c.grl.warmup_steps = 4;
  c.seed = 5;
  return c;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

bool same_parameters(torch::nn::Module& a, torch::nn::Module& b) {
  auto pb = b.named_parameters();
  for (const auto& item : a.named_parameters()) {
    if (!torch::equal(item.value(), pb[item.key()])) return false;
  }
  return true;
}

std::set<const void*> param_ptrs(torch::optim::Optimizer& opt) {
  std::set<const void*> out;
  for (const auto& group : opt.param_groups())
    for (const auto& p : group.params()) out.insert(p.unsafeGetTensorImpl());
  return out;
}

}  // namespace

TEST_CASE("train config json") {
  auto c = tiny_config();
  c.flood_fraction = 0.4;
  c.mask_source = MaskSource::GeometryPercentile;
  c.domain_mode = DomainMode::Alternating;
  auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  CHECK_THROWS_AS(TrainConfig::from_json({{"lr_generator", 0.0}}), InvalidConfig);
  CHECK_THROWS_AS(TrainConfig::from_json({{"total_steps", -1}}), InvalidConfig);
  CHECK_THROWS_AS(TrainConfig::from_json({{"sim_fraction", 1.5}}), InvalidConfig);
  CHECK_THROWS_AS(TrainConfig::from_json({{"flood_level_m", 1.0}, {"flood_fraction", 0.2}}),
                  InvalidConfig);
  CHECK_THROWS_AS(TrainConfig::from_json({{"mask_source", "geometry_metric"}}), InvalidConfig);
  CHECK_THROWS_AS(TrainConfig::from_json({{"mask_source", "guess"}}), InvalidConfig);
  CHECK_THROWS_AS(TrainConfig::from_json({{"image_size", 30}}), InvalidConfig);
  CHECK_THROWS_AS(TrainConfig::from_json({{"learning_rate", 1e-3}}), InvalidConfig);
  CHECK_THROWS_AS(TrainConfig::from_json({{"batch_size", "two"}}), InvalidConfig);

  TrainConfig d;
  CHECK(d.lr_generator == 1e-4);
  CHECK(d.lr_discriminator == 1e-4);
  CHECK(d.grl.warmup_steps == 10000);
  CHECK(d.default_fraction == 0.3);
  CHECK(d.inside_weight == 0.0);
}

TEST_CASE("seed environment override") {
  auto c = tiny_config();
  ::unsetenv("FLOODGEN_SEED");
  CHECK(apply_env_overrides(c).seed == 5);
  ::setenv("FLOODGEN_SEED", "1234", 1);
  CHECK(apply_env_overrides(c).seed == 1234);
  ::setenv("FLOODGEN_SEED", "12x", 1);
  CHECK_THROWS_AS(apply_env_overrides(c), InvalidConfig);
  ::unsetenv("FLOODGEN_SEED");
}

TEST_CASE("grl schedule") {
  GrlSchedule g{0.0, 1.0, 100};
  CHECK(g.at(0) == 0.0);
  CHECK(g.at(50) == doctest::Approx(0.5));
  CHECK(g.at(100) == 1.0);
  CHECK(g.at(5000) == 1.0);
  double prev = -1;
  for (long s = 0; s < 150; ++s) {
    CHECK(g.at(s) >= prev);
    prev = g.at(s);
  }
  CHECK(GrlSchedule{0.2, 0.7, 0}.at(0) == 0.7);
}

TEST_CASE("optimizers own disjoint parameter sets") {
  for (auto mode : {DomainMode::GradientReversal, DomainMode::Alternating}) {
    auto c = tiny_config();
    c.domain_mode = mode;
    Trainer t(c, make_bundle(c.arch, 1));
    auto g = param_ptrs(t.generator_optimizer());
    auto d = param_ptrs(t.discriminator_optimizer());
    auto h = param_ptrs(t.height_optimizer());
    for (auto* p : d) CHECK(g.count(p) == 0);
    for (auto* p : h) CHECK((g.count(p) == 0 && d.count(p) == 0));
    CHECK(g.size() + d.size() + h.size() == t.bundle()->parameters().size());
  }
}

TEST_CASE("supervised segmentation only sees simulated rows") {
  TempDir dir("segsup");
  write_dataset(dir.path(), 2, 2, 32, 3);
  auto index = build_index(dir.path());
  auto c = tiny_config();
  TrainingData data(index, c);
  Trainer t(c, make_bundle(c.arch, 2));

  auto seg_params = t.bundle()->seg_head->parameters();
  auto enc_params = t.bundle()->content_encoder_A->parameters();
  auto grad_norm = [](const Tensor& loss, const std::vector<Tensor>& params) {
    auto grads = torch::autograd::grad({loss}, params, {}, true, false, true);
    double norm = 0;
    for (const auto& g : grads) norm += g.defined() ? g.abs().sum().item<double>() : 0.0;
    return norm;
  };
  auto seg_term = [&](const TensorBatch& a, const TensorBatch& b) {
    for (auto& [name, term] : t.generator_losses(a, b, 1.0)) {
      if (name == "seg_sup") return term;
    }
    return Tensor();
  };

  auto real_a = data.load({{{Source::Real, Side::A, 0}, {Source::Real, Side::A, 1}}});
  auto real_b = data.load({{{Source::Real, Side::B, 0}}});
  CHECK(real_a.sim_count() == 0);
  auto term = seg_term(real_a, real_b);
  CHECK(term.item<double>() == 0.0);
  CHECK_FALSE(term.requires_grad());

  // Nothing in the generator objective trains the head on real images; the
  // semantic term still reaches the encoder through the translated branch.
  Tensor total, semantic;
  for (auto& [name, loss] : t.generator_losses(real_a, real_b, 1.0)) {
    if (name == "semantic_consistency") semantic = loss;
    total = total.defined() ? total + loss : loss;
  }
  CHECK(grad_norm(total, seg_params) == 0.0);
  CHECK(grad_norm(semantic, enc_params) > 0.0);

  auto mixed_a = data.load({{{Source::Real, Side::A, 0}, {Source::Sim, Side::A, 1}}});
  CHECK(mixed_a.sim_count() == 1);
  CHECK(mixed_a.sim_rows[0].item<int64_t>() == 1);
  term = seg_term(mixed_a, real_b);
  CHECK(term.item<double>() > 0.0);
  auto grads = torch::autograd::grad({term}, seg_params, {}, true, false, true);
  double norm = 0;
  for (const auto& g : grads) norm += g.defined() ? g.abs().sum().item<double>() : 0.0;
  CHECK(norm > 0.0);
}

TEST_CASE("real masks follow the configured source") {
  TempDir dir("masks");
  write_dataset(dir.path(), 1, 2, 32, 4);
  auto index = build_index(dir.path());
  auto c = tiny_config();

  c.mask_source = MaskSource::Annotation;
  TrainingData annotated(index, c);
  auto b = annotated.load({{{Source::Real, Side::B, 0}}});
  auto expected = to_tensor(fit_square(load_mask(index.real_water_masks.begin()->second), 32));
  CHECK(torch::equal(b.masks, expected));

  c.mask_source = MaskSource::GeometryPercentile;
  c.flood_fraction = 0.25;
  TrainingData pct(index, c);
  auto m = pct.load({{{Source::Real, Side::A, 0}}}).masks;
  CHECK(m.mean().item<double>() == doctest::Approx(0.25).epsilon(0.05));

  c.flood_fraction.reset();
  c.mask_source = MaskSource::GeometryMetric;
  // At 32 px the prior's first ground row below the horizon sits near 0.34 m.
  c.flood_level_m = 0.25;
  TrainingData metric(index, c);
  auto low = metric.load({{{Source::Real, Side::A, 0}}}).masks;
  c.flood_level_m = 1.5;
  TrainingData metric_hi(index, c);
  auto high = metric_hi.load({{{Source::Real, Side::A, 0}}}).masks;
  CHECK((low <= high).all().item<bool>());
  CHECK(high.sum().item<double>() > low.sum().item<double>());

  // Simulated rows keep their capture mask whatever the source.
  auto sim = metric.load({{{Source::Sim, Side::A, 0}}});
  auto sample = load_sim_sample(index.sim_samples[0].dir, index.palette);
  CHECK(torch::equal(sim.masks, to_tensor(fit_square(sample.water_mask, 32))));
}

TEST_CASE("zero steps leave parameters unchanged") {
  TempDir data_dir("zdata");
  TempDir out("zout");
  write_dataset(data_dir.path(), 2, 2, 32, 6);
  auto index = build_index(data_dir.path());
  auto c = tiny_config();
  c.total_steps = 0;
  auto r = train(c, index, {out.path()});
  CHECK(r.steps == 0);
  auto first = load_bundle(out.path() / checkpoint_name(0));
  auto last = load_bundle(r.final_checkpoint);
  CHECK(same_parameters(*first, *last));
  CHECK(read_lines(out.path() / "metrics.jsonl").empty());

  auto h = train_height(c, index, {out.path() / "height"});
  CHECK(same_parameters(*load_bundle(h.final_checkpoint), *first));
}

TEST_CASE("training is deterministic and resumable") {
  TempDir data_dir("ddata");
  TempDir out1("d1"), out2("d2"), out3("d3");
  write_dataset(data_dir.path(), 2, 2, 32, 8);
  auto index = build_index(data_dir.path());
  auto c = tiny_config();
  c.total_steps = 4;
  std::vector<double> totals;
  auto r1 = train(c, index, {out1.path(), std::nullopt,
                             [&](long, const LossReport& rep) { totals.push_back(rep.total); }});
  CHECK(r1.steps == 4);
  CHECK(totals.size() == 4);
  train(c, index, {out2.path()});
  const auto log1 = read_lines(out1.path() / "metrics.jsonl");
  CHECK(log1.size() == 4);
  CHECK(log1 == read_lines(out2.path() / "metrics.jsonl"));
  CHECK(std::filesystem::exists(out1.path() / checkpoint_name(2)));
  CHECK(std::filesystem::exists(out1.path() / checkpoint_name(4)));

  auto j = nlohmann::json::parse(log1[0]);
  for (const auto& name : kLossNames) CHECK(j.contains(name));
  CHECK(j["step"] == 1);
  CHECK(j["grl_lambda"].get<double>() == doctest::Approx(0.25));

  // Resume from step 2 into a fresh directory: steps 3 and 4 match.
  auto r3 = train(c, index, {out3.path(), out1.path() / checkpoint_name(2)});
  CHECK(r3.steps == 4);
  const auto log3 = read_lines(out3.path() / "metrics.jsonl");
  REQUIRE(log3.size() == 2);
  CHECK(log3[0] == log1[2]);
  CHECK(log3[1] == log1[3]);
  CHECK(same_parameters(*load_bundle(r1.final_checkpoint), *load_bundle(r3.final_checkpoint)));

  // Resuming in place rewrites the tail of the log identically.
  train(c, index, {out2.path(), out2.path() / checkpoint_name(2)});
  CHECK(read_lines(out2.path() / "metrics.jsonl") == log1);
}

TEST_CASE("alternating domain mode trains") {
  TempDir data_dir("adata");
  TempDir out("aout");
  write_dataset(data_dir.path(), 2, 2, 32, 9);
  auto c = tiny_config();
  c.domain_mode = DomainMode::Alternating;
  c.total_steps = 2;
  auto r = train(c, build_index(data_dir.path()), {out.path()});
  REQUIRE(r.last);
  CHECK(std::isfinite(r.last->total));
}

TEST_CASE("missing domain fails before any step") {
  TempDir data_dir("edata");
  TempDir out("eout");
  write_dataset(data_dir.path(), 2, 0, 32, 10);
  IndexConfig ic;
  ic.require_real = false;
  auto index = build_index(data_dir.path(), ic);
  auto c = tiny_config();
  c.sim_fraction = 0.0;
  CHECK_THROWS_AS(train(c, index, {out.path() / "run"}), EmptyDomain);
  CHECK_FALSE(std::filesystem::exists(out.path() / "run"));
}

TEST_CASE("height training needs camera metadata") {
  TempDir data_dir("hdata");
  TempDir out("hout");
  write_dataset(data_dir.path(), 1, 0, 32, 12);
  const auto meta_path = data_dir.path() / "sim" / "s000" / "meta.json";
  nlohmann::json meta;
  std::ifstream(meta_path) >> meta;
  meta.erase("camera_fov_deg");
  std::ofstream(meta_path) << meta.dump();
  IndexConfig ic;
  ic.require_real = false;
  auto index = build_index(data_dir.path(), ic);
  auto c = tiny_config();
  c.total_steps = 1;
  CHECK_THROWS_AS(train_height(c, index, {out.path()}), MissingMetadata);
}

TEST_CASE("height training lowers the masked error") {
  TempDir data_dir("hdata2");
  TempDir out("hout2");
  write_dataset(data_dir.path(), 2, 0, 32, 13);
  IndexConfig ic;
  ic.require_real = false;
  auto index = build_index(data_dir.path(), ic);
  auto c = tiny_config();
  c.total_steps = 30;
  c.batch_size = 2;
  c.checkpoint_every = 100;
  std::vector<double> losses;
  auto r = train_height(c, index, {out.path(), std::nullopt,
                                   [&](long, const LossReport& rep) { losses.push_back(rep.height_l2); }});
  REQUIRE(losses.size() == 30);
  CHECK(losses.back() < 0.5 * losses.front());
  // The translation networks are untouched by the height loop.
  auto before = load_bundle(out.path() / checkpoint_name(0));
  auto after = load_bundle(r.final_checkpoint);
  CHECK(same_parameters(*before->content_encoder_A, *after->content_encoder_A));
  CHECK_FALSE(same_parameters(*before->height_net, *after->height_net));
}
