#include "floodgen/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "floodgen/errors.hpp"
#include "floodgen/image_io.hpp"

namespace floodgen {

using torch::Tensor;
namespace ser = torch::serialize;

// ---------------------------------------------------------------------------
// config

std::string to_string(MaskSource s) {
  switch (s) {
    case MaskSource::Annotation: return "annotation";
    case MaskSource::GeometryMetric: return "geometry_metric";
    case MaskSource::GeometryPercentile: return "geometry_percentile";
  }
  return "annotation";
}

MaskSource mask_source_from_string(const std::string& s) {
  if (s == "annotation") return MaskSource::Annotation;
  if (s == "geometry_metric") return MaskSource::GeometryMetric;
  if (s == "geometry_percentile") return MaskSource::GeometryPercentile;
  throw InvalidConfig("unknown mask_source '" + s + "'");
}

double GrlSchedule::at(long step) const {
  if (warmup_steps <= 0 || step >= warmup_steps) return final;
  const double t = static_cast<double>(std::max(step, 0L)) / static_cast<double>(warmup_steps);
  return initial + (final - initial) * t;
}

void TrainConfig::validate() const {
  arch.validate();
  if (!(lr_generator > 0) || !(lr_discriminator > 0) || !(lr_height > 0)) {
    throw InvalidConfig("learning rates must be positive");
  }
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw InvalidConfig("adam betas must lie in [0,1)");
  }
  if (batch_size < 1) throw InvalidConfig("batch_size must be at least 1");
  if (total_steps < 0) throw InvalidConfig("total_steps must be >= 0");
  if (!(sim_fraction >= 0 && sim_fraction <= 1)) throw InvalidConfig("sim_fraction must lie in [0,1]");
  if (image_size < 1 || image_size % arch.downsampling_factor() != 0) {
    throw InvalidConfig("image_size must be a positive multiple of the downsampling factor");
  }
  if (checkpoint_every < 1) throw InvalidConfig("checkpoint_every must be at least 1");
  if (!(grl.initial >= 0) || !(grl.final >= 0) || grl.warmup_steps < 0) {
    throw InvalidConfig("grl schedule values must be >= 0");
  }
  if (grl.final < grl.initial) throw InvalidConfig("grl schedule must be nondecreasing");
  if (flood_level_m && flood_fraction) {
    throw InvalidConfig("flood_level_m and flood_fraction are mutually exclusive");
  }
  if (flood_fraction && !(*flood_fraction >= 0 && *flood_fraction <= 1)) {
    throw InvalidConfig("flood_fraction must lie in [0,1]");
  }
  if (!(default_fraction >= 0 && default_fraction <= 1)) {
    throw InvalidConfig("default_fraction must lie in [0,1]");
  }
  if (mask_source == MaskSource::GeometryMetric && !flood_level_m) {
    throw InvalidConfig("mask_source geometry_metric needs flood_level_m");
  }
  if (!(inside_weight >= 0 && inside_weight <= 1)) throw InvalidConfig("inside_weight must lie in [0,1]");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {
      {"arch", arch.to_json()},
      {"weights", weights.to_json()},
      {"lr_generator", lr_generator},
      {"lr_discriminator", lr_discriminator},
      {"lr_height", lr_height},
      {"beta1", beta1},
      {"beta2", beta2},
      {"batch_size", batch_size},
      {"total_steps", total_steps},
      {"grl", {{"initial", grl.initial}, {"final", grl.final}, {"warmup_steps", grl.warmup_steps}}},
      {"sim_fraction", sim_fraction},
      {"image_size", image_size},
      {"seed", seed},
      {"checkpoint_every", checkpoint_every},
      {"mask_source", to_string(mask_source)},
      {"default_fraction", default_fraction},
      {"inside_weight", inside_weight},
      {"semantic_both_directions", semantic_both_directions},
      {"domain_mode", domain_mode == DomainMode::Alternating ? "alternating" : "gradient_reversal"},
  };
  if (flood_level_m) j["flood_level_m"] = *flood_level_m;
  if (flood_fraction) j["flood_fraction"] = *flood_fraction;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidConfig("train config: expected an object");
  TrainConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "arch") c.arch = ArchConfig::from_json(v);
      else if (key == "weights") c.weights = LossWeights::from_json(v);
      else if (key == "lr_generator") c.lr_generator = v.get<double>();
      else if (key == "lr_discriminator") c.lr_discriminator = v.get<double>();
      else if (key == "lr_height") c.lr_height = v.get<double>();
      else if (key == "beta1") c.beta1 = v.get<double>();
      else if (key == "beta2") c.beta2 = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "total_steps") c.total_steps = v.get<long>();
      else if (key == "grl") {
        for (const auto& [gk, gv] : v.items()) {
          if (gk == "initial") c.grl.initial = gv.get<double>();
          else if (gk == "final") c.grl.final = gv.get<double>();
          else if (gk == "warmup_steps") c.grl.warmup_steps = gv.get<long>();
          else throw InvalidConfig("grl: unknown key '" + gk + "'");
        }
      } else if (key == "sim_fraction") c.sim_fraction = v.get<double>();
      else if (key == "image_size") c.image_size = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "checkpoint_every") c.checkpoint_every = v.get<long>();
      else if (key == "mask_source") c.mask_source = mask_source_from_string(v.get<std::string>());
      else if (key == "flood_level_m") c.flood_level_m = v.get<double>();
      else if (key == "flood_fraction") c.flood_fraction = v.get<double>();
      else if (key == "default_fraction") c.default_fraction = v.get<double>();
      else if (key == "inside_weight") c.inside_weight = v.get<double>();
      else if (key == "semantic_both_directions") c.semantic_both_directions = v.get<bool>();
      else if (key == "domain_mode") {
        const auto mode = v.get<std::string>();
        if (mode == "gradient_reversal") c.domain_mode = DomainMode::GradientReversal;
        else if (mode == "alternating") c.domain_mode = DomainMode::Alternating;
        else throw InvalidConfig("unknown domain_mode '" + mode + "'");
      } else {
        throw InvalidConfig("train config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(path.string() + ": " + e.what());
  }
  return from_json(j);
}

TrainConfig apply_env_overrides(TrainConfig config) {
  if (const char* s = std::getenv("FLOODGEN_SEED"); s != nullptr && *s != '\0') {
    char* end = nullptr;
    const auto v = std::strtoull(s, &end, 10);
    if (end == s || *end != '\0') throw InvalidConfig("FLOODGEN_SEED must be an unsigned integer");
    config.seed = v;
  }
  return config;
}

// ---------------------------------------------------------------------------
// data

TrainingData::TrainingData(const DatasetIndex& index, const TrainConfig& config)
    : index_(index), config_(config) {}

Tensor TrainingData::real_mask(const fs::path& path, const Image& squared) {
  const int s = config_.image_size;
  if (config_.mask_source == MaskSource::Annotation) {
    if (auto it = index_.real_water_masks.find(path); it != index_.real_water_masks.end()) {
      return to_tensor(fit_square(load_mask(it->second), s))[0];
    }
  }
  GroundPlanePrior depth;
  NoDetector detector;
  FloodTarget target;
  if (config_.mask_source == MaskSource::GeometryMetric) {
    target.level_m = config_.flood_level_m;
  } else {
    target.fraction = config_.flood_fraction.value_or(config_.default_fraction);
  }
  PipelineConfig pc;
  pc.default_fraction = config_.default_fraction;
  auto result = mask_from_pipeline(squared, depth, detector, CameraModel::default_for(s, s), target, pc);
  return to_tensor(result.mask)[0];
}

const TrainingData::Prepared& TrainingData::prepare(const BatchItem& item) {
  const auto key = std::make_tuple(static_cast<int>(item.source), static_cast<int>(item.side), item.index);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  const int s = config_.image_size;
  Prepared p;
  if (item.source == Source::Sim) {
    const auto sample = load_sim_sample(index_.sim_samples.at(item.index).dir, index_.palette);
    const bool a = item.side == Side::A;
    p.image = to_tensor(fit_square(a ? sample.non_flooded : sample.flooded, s))[0];
    p.mask = to_tensor(fit_square(sample.water_mask, s))[0];
    const auto& seg = a ? sample.seg_non_flooded : sample.seg_flooded;
    p.labels = to_tensor(SegMap{fit_square_nearest(seg.labels, s), seg.palette})[0];
  } else {
    const auto& paths = item.side == Side::A ? index_.real_non_flooded : index_.real_flooded;
    const auto& path = paths.at(item.index);
    const auto squared = fit_square(load_image(path), s);
    p.image = to_tensor(squared)[0];
    p.mask = real_mask(path, squared);
  }
  return cache_.emplace(key, std::move(p)).first->second;
}

TensorBatch TrainingData::load(const Batch& batch) {
  std::vector<Tensor> images, masks, labels;
  std::vector<int64_t> sim_rows;
  std::vector<float> is_sim;
  for (std::size_t i = 0; i < batch.items.size(); ++i) {
    const auto& p = prepare(batch.items[i]);
    images.push_back(p.image);
    masks.push_back(p.mask);
    is_sim.push_back(p.labels.defined() ? 1.0F : 0.0F);
    if (p.labels.defined()) {
      sim_rows.push_back(static_cast<int64_t>(i));
      labels.push_back(p.labels);
    }
  }
  TensorBatch out;
  out.images = torch::stack(images);
  out.masks = torch::stack(masks);
  out.is_sim = torch::tensor(is_sim);
  out.sim_rows = torch::tensor(sim_rows, torch::kInt64);
  const int s = config_.image_size;
  out.labels = labels.empty() ? torch::zeros({0, s, s}, torch::kInt64) : torch::stack(labels);
  return out;
}

TrainingData::HeightSample TrainingData::height_sample(std::size_t sim_index) {
  if (auto it = height_cache_.find(sim_index); it != height_cache_.end()) return it->second;
  const int s = config_.image_size;
  const auto sample = load_sim_sample(index_.sim_samples.at(sim_index).dir, index_.palette);
  const auto camera =
      CameraModel::from_meta(sample.meta, sample.depth.width(), sample.depth.height());
  const auto heights = backproject_heights(sample.depth, camera);
  const auto sky = class_mask(sample.seg_non_flooded, sample.seg_non_flooded.palette
                                                          ? sample.seg_non_flooded.palette->sky_index()
                                                          : Palette::defaults().sky_index());
  HeightSample h;
  h.image = to_tensor(fit_square(sample.non_flooded, s))[0];
  const auto hv = fit_square(heights.values, s);
  h.heights = torch::from_blob(const_cast<double*>(hv.data().data()), {1, s, s}, torch::kDouble)
                  .to(torch::kFloat32);
  h.sky = to_tensor(fit_square(sky, s))[0];
  return height_cache_.emplace(sim_index, h).first->second;
}

// ---------------------------------------------------------------------------
// trainer

namespace {

torch::optim::AdamOptions adam(double lr, const TrainConfig& c) {
  return torch::optim::AdamOptions(lr).betas({c.beta1, c.beta2});
}

std::vector<Tensor> without(const std::vector<Tensor>& all, const std::vector<Tensor>& drop) {
  std::vector<Tensor> out;
  for (const auto& t : all) {
    bool skip = false;
    for (const auto& d : drop) skip = skip || t.is_same(d);
    if (!skip) out.push_back(t);
  }
  return out;
}

Tensor classifier_logits_plain(NetworkBundle& net, const Tensor& content) {
  auto& dc = net->domain_classifier;
  return dc->out(dc->features->forward(content)).flatten();
}

// Seg head as a fixed segmenter: gradients reach the content tensor but not
// the head's parameters, which only learn from simulated labels.
Tensor seg_forward_frozen(NetworkBundle& net, const Tensor& content) {
  auto params = net->seg_head->parameters();
  for (auto& p : params) p.set_requires_grad(false);
  Tensor out;
  try {
    out = net->seg_forward(content);
  } catch (...) {
    for (auto& p : params) p.set_requires_grad(true);
    throw;
  }
  for (auto& p : params) p.set_requires_grad(true);
  return out;
}

}  // namespace

Trainer::Trainer(TrainConfig config, NetworkBundle bundle)
    : config_(std::move(config)), bundle_(std::move(bundle)) {
  config_.validate();
  auto gen = bundle_->generator_parameters();
  auto dis = bundle_->discriminator_parameters();
  if (config_.domain_mode == DomainMode::Alternating) {
    auto cls = bundle_->domain_classifier->parameters();
    gen = without(gen, cls);
    dis.insert(dis.end(), cls.begin(), cls.end());
  }
  gen_opt_ = std::make_unique<torch::optim::Adam>(gen, adam(config_.lr_generator, config_));
  dis_opt_ = std::make_unique<torch::optim::Adam>(dis, adam(config_.lr_discriminator, config_));
  height_opt_ = std::make_unique<torch::optim::Adam>(bundle_->height_parameters(),
                                                     adam(config_.lr_height, config_));
}

Tensor Trainer::sample_style(int64_t n) {
  return torch::randn({n, config_.arch.style_dim});
}

std::vector<std::pair<std::string, Tensor>> Trainer::generator_losses(const TensorBatch& a,
                                                                      const TensorBatch& b,
                                                                      double grl_lambda) {
  auto& net = bundle_;
  const auto& xa = a.images;
  const auto& xb = b.images;
  // Encode once per image; decode, seg head and domain classifier all see
  // the same content tensors.
  auto code_a = net->encode(xa, Side::A);
  auto code_b = net->encode(xb, Side::B);
  auto& ca = code_a.content;
  auto& cb = code_b.content;

  auto xa_recon = net->decode(ca, code_a.style, Side::A);
  auto xb_recon = net->decode(cb, code_b.style, Side::B);
  auto sa = sample_style(xb.size(0));
  auto sb = sample_style(xa.size(0));
  auto x_ba = net->decode(cb, sa, Side::A);
  auto x_ab = net->decode(ca, sb, Side::B);
  auto code_ba = net->encode(x_ba, Side::A);
  auto code_ab = net->encode(x_ab, Side::B);
  auto x_aba = net->decode(code_ab.content, code_a.style, Side::A);
  auto x_bab = net->decode(code_ba.content, code_b.style, Side::B);

  std::vector<std::pair<std::string, Tensor>> terms;
  terms.emplace_back("gan_A", gan_generator_loss(net->discriminate(x_ba, Side::A)));
  terms.emplace_back("gan_B", gan_generator_loss(net->discriminate(x_ab, Side::B)));
  terms.emplace_back("recon_image", mean_l1(xa_recon, xa) + mean_l1(xb_recon, xb));
  terms.emplace_back("recon_content",
                     mean_l1(code_ba.content, cb) + mean_l1(code_ab.content, ca));
  terms.emplace_back("recon_style", mean_l1(code_ba.style, sa) + mean_l1(code_ab.style, sb));
  terms.emplace_back("cycle_masked", masked_cycle_loss(xa, x_aba, a.masks, config_.inside_weight) +
                                         masked_cycle_loss(xb, x_bab, b.masks, config_.inside_weight));

  auto seg_a = net->seg_forward(ca);
  auto seg_b = net->seg_forward(cb);
  auto semantic = semantic_consistency_loss(seg_a.detach(), seg_forward_frozen(net, code_ab.content),
                                            a.masks, config_.inside_weight);
  if (config_.semantic_both_directions) {
    semantic = semantic + semantic_consistency_loss(seg_b.detach(),
                                                    seg_forward_frozen(net, code_ba.content), b.masks,
                                                    config_.inside_weight);
  }
  terms.emplace_back("semantic_consistency", semantic);

  auto content = torch::cat({ca, cb});
  auto is_sim = torch::cat({a.is_sim, b.is_sim});
  Tensor domain;
  if (config_.domain_mode == DomainMode::GradientReversal) {
    domain = domain_adv_loss(torch::sigmoid(net->domain_logits(content, grl_lambda)), is_sim);
  } else {
    domain = domain_adv_loss(torch::sigmoid(classifier_logits_plain(net, content)), 1.0 - is_sim);
  }
  terms.emplace_back("domain_adv", domain);

  Tensor seg_sup;
  for (const auto* pair : {&a, &b}) {
    if (pair->sim_count() == 0) continue;
    const auto& seg = pair == &a ? seg_a : seg_b;
    auto term = seg_supervised_loss(seg.index_select(0, pair->sim_rows), pair->labels);
    seg_sup = seg_sup.defined() ? seg_sup + term : term;
  }
  terms.emplace_back("seg_sup", seg_sup.defined() ? seg_sup : torch::zeros({}));
  return terms;
}

LossReport Trainer::train_step(const TensorBatch& a, const TensorBatch& b, long step) {
  auto& net = bundle_;
  net->train();
  LossReport report;
  report.grl_lambda = config_.grl.at(step);

  // Discriminator side.
  dis_opt_->zero_grad();
  {
    Tensor x_ba, x_ab, content, is_sim;
    {
      torch::NoGradGuard no_grad;
      auto ca = net->encode_content(a.images, Side::A);
      auto cb = net->encode_content(b.images, Side::B);
      x_ba = net->decode(cb, sample_style(b.size()), Side::A);
      x_ab = net->decode(ca, sample_style(a.size()), Side::B);
      content = torch::cat({ca, cb});
      is_sim = torch::cat({a.is_sim, b.is_sim});
    }
    auto d_loss = gan_discriminator_loss(net->discriminate(a.images, Side::A),
                                         net->discriminate(x_ba, Side::A)) +
                  gan_discriminator_loss(net->discriminate(b.images, Side::B),
                                         net->discriminate(x_ab, Side::B));
    if (config_.domain_mode == DomainMode::Alternating) {
      d_loss = d_loss + config_.weights.domain_adv *
                            domain_adv_loss(torch::sigmoid(classifier_logits_plain(net, content)), is_sim);
    }
    report.disc = d_loss.item<double>();
    if (!std::isfinite(report.disc)) throw NonFiniteLoss("discriminator loss is not finite");
    d_loss.backward();
    dis_opt_->step();
  }

  // Generator side.
  gen_opt_->zero_grad();
  auto terms = generator_losses(a, b, report.grl_lambda);
  auto total = weighted_total(terms, config_.weights, report);
  total.backward();
  gen_opt_->step();
  return report;
}

double Trainer::height_step(const Tensor& images, const Tensor& heights, const Tensor& sky) {
  auto& net = bundle_;
  net->train();
  height_opt_->zero_grad();
  auto preds = net->height_net->forward_stacks(images);
  Tensor loss;
  for (const auto& p : preds) {
    auto term = height_l2_loss(p, heights, sky);
    loss = loss.defined() ? loss + term : term;
  }
  loss = loss / static_cast<double>(preds.size());
  const double final_stack = height_l2_loss(preds.back(), heights, sky).item<double>();
  if (!std::isfinite(final_stack)) throw NonFiniteLoss("loss term 'height_l2' is not finite");
  loss.backward();
  height_opt_->step();
  return final_stack;
}

void Trainer::save(const std::filesystem::path& path, long step) {
  ser::OutputArchive archive;
  write_bundle(archive, bundle_);
  ser::OutputArchive state;
  state.write("step", c10::IValue(static_cast<int64_t>(step)));
  state.write("train_config", c10::IValue(config_.to_json().dump()));
  state.write("rng_state", at::detail::getDefaultCPUGenerator().get_state());
  ser::OutputArchive gen, dis, height;
  gen_opt_->save(gen);
  dis_opt_->save(dis);
  height_opt_->save(height);
  state.write("gen_optimizer", gen);
  state.write("dis_optimizer", dis);
  state.write("height_optimizer", height);
  archive.write("trainer", state);
  auto tmp = path;
  tmp += ".tmp";
  archive.save_to(tmp.string());
  std::filesystem::rename(tmp, path);
}

long Trainer::restore(const std::filesystem::path& path) {
  ser::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const std::exception& e) {
    throw ModelLoadError("cannot open checkpoint " + path.string() + ": " + e.what());
  }
  auto loaded = read_bundle(archive);
  if (!(loaded->arch() == config_.arch)) {
    throw ModelLoadError("checkpoint architecture differs from the configured one");
  }
  {
    torch::NoGradGuard no_grad;
    auto dst = bundle_->named_parameters();
    for (const auto& item : loaded->named_parameters()) dst[item.key()].copy_(item.value());
    auto dst_buf = bundle_->named_buffers();
    for (const auto& item : loaded->named_buffers()) dst_buf[item.key()].copy_(item.value());
  }
  try {
    ser::InputArchive state;
    archive.read("trainer", state);
    c10::IValue step;
    state.read("step", step);
    Tensor rng;
    state.read("rng_state", rng);
    ser::InputArchive gen, dis, height;
    state.read("gen_optimizer", gen);
    state.read("dis_optimizer", dis);
    state.read("height_optimizer", height);
    gen_opt_->load(gen);
    dis_opt_->load(dis);
    height_opt_->load(height);
    auto generator = at::detail::getDefaultCPUGenerator();
    generator.set_state(rng);
    return static_cast<long>(step.toInt());
  } catch (const std::exception& e) {
    throw ModelLoadError(std::string("checkpoint has no usable trainer state: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// loops

std::string checkpoint_name(long step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "checkpoint_%06ld.pt", step);
  return buf;
}

namespace {

struct Loop {
  Trainer trainer;
  long start = 0;
  std::ofstream metrics;
};

Loop open_loop(const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  std::filesystem::create_directories(options.out_dir);
  Loop loop{Trainer(config, make_bundle(config.arch, config.seed))};
  // Style noise and any other torch sampling run off the global generator.
  torch::manual_seed(config.seed + 1);
  const auto metrics_path = options.out_dir / "metrics.jsonl";
  if (options.resume) {
    loop.start = loop.trainer.restore(*options.resume);
    // Drop lines past the resume point so the log matches an uninterrupted run.
    std::vector<std::string> kept;
    if (std::ifstream in(metrics_path); in) {
      for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        if (nlohmann::json::parse(line).value("step", 0L) <= loop.start) kept.push_back(line);
      }
    }
    loop.metrics.open(metrics_path, std::ios::trunc);
    for (const auto& line : kept) loop.metrics << line << '\n';
  } else {
    loop.metrics.open(metrics_path, std::ios::trunc);
    loop.trainer.save(options.out_dir / checkpoint_name(0), 0);
  }
  return loop;
}

void dump_nonfinite(const TrainOptions& options, long step, const std::string& what) {
  std::ofstream out(options.out_dir / ("nonfinite_step_" + std::to_string(step) + ".json"));
  out << nlohmann::json{{"step", step}, {"error", what}}.dump(2) << '\n';
  std::cerr << "floodgen: non-finite loss at step " << step << ": " << what << '\n';
}

TrainResult finish(Loop& loop, const TrainOptions& options, long steps,
                   const std::optional<LossReport>& last) {
  TrainResult result;
  result.final_checkpoint = options.out_dir / "final.pt";
  loop.trainer.save(result.final_checkpoint, steps);
  result.steps = steps;
  result.last = last;
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& config, const DatasetIndex& index, const TrainOptions& options) {
  // Validate domains before any work.
  BatchIterator it_a(index, config.batch_size, config.seed * 2 + 11, {Side::A, config.sim_fraction});
  BatchIterator it_b(index, config.batch_size, config.seed * 2 + 12, {Side::B, config.sim_fraction});
  auto loop = open_loop(config, options);
  it_a.skip(static_cast<std::size_t>(loop.start));
  it_b.skip(static_cast<std::size_t>(loop.start));
  TrainingData data(index, config);

  std::optional<LossReport> last;
  for (long step = loop.start + 1; step <= config.total_steps; ++step) {
    const auto a = data.load(it_a.next());
    const auto b = data.load(it_b.next());
    LossReport report;
    try {
      report = loop.trainer.train_step(a, b, step);
    } catch (const NonFiniteLoss& e) {
      dump_nonfinite(options, step, e.what());
      throw;
    }
    loop.metrics << report.to_json(step).dump() << '\n' << std::flush;
    if (options.on_step) options.on_step(step, report);
    if (step % config.checkpoint_every == 0) {
      loop.trainer.save(options.out_dir / checkpoint_name(step), step);
    }
    last = report;
  }
  return finish(loop, options, std::max(config.total_steps, loop.start), last);
}

TrainResult train_height(const TrainConfig& config, const DatasetIndex& index,
                         const TrainOptions& options) {
  BatchIterator it(index, config.batch_size, config.seed * 2 + 13, {Side::A, 1.0});
  auto loop = open_loop(config, options);
  it.skip(static_cast<std::size_t>(loop.start));
  TrainingData data(index, config);

  std::optional<LossReport> last;
  for (long step = loop.start + 1; step <= config.total_steps; ++step) {
    std::vector<Tensor> images, heights, sky;
    for (const auto& item : it.next().items) {
      auto s = data.height_sample(item.index);
      images.push_back(s.image);
      heights.push_back(s.heights);
      sky.push_back(s.sky);
    }
    LossReport report;
    try {
      report.height_l2 = loop.trainer.height_step(torch::stack(images), torch::stack(heights),
                                                  torch::stack(sky));
    } catch (const NonFiniteLoss& e) {
      dump_nonfinite(options, step, e.what());
      throw;
    }
    report.total = config.weights.height_l2 * report.height_l2;
    loop.metrics << report.to_json(step).dump() << '\n' << std::flush;
    if (options.on_step) options.on_step(step, report);
    if (step % config.checkpoint_every == 0) {
      loop.trainer.save(options.out_dir / checkpoint_name(step), step);
    }
    last = report;
  }
  return finish(loop, options, std::max(config.total_steps, loop.start), last);
}

}  // namespace floodgen
