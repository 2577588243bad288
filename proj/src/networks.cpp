#include "floodgen/networks.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "floodgen/errors.hpp"

namespace floodgen {

namespace F = torch::nn::functional;
using torch::Tensor;

// ---------------------------------------------------------------------------
// ArchConfig

void ArchConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw InvalidConfig(std::string("arch: ") + name + " must be positive");
  };
  positive(base_channels, "base_channels");
  positive(style_dim, "style_dim");
  positive(n_downsample, "n_downsample");
  positive(n_residual_blocks, "n_residual_blocks");
  positive(mlp_dim, "mlp_dim");
  positive(style_downsample, "style_downsample");
  positive(disc_channels, "disc_channels");
  positive(disc_layers, "disc_layers");
  positive(disc_scales, "disc_scales");
  positive(seg_channels, "seg_channels");
  positive(domain_channels, "domain_channels");
  positive(height_channels, "height_channels");
  positive(hourglass_stacks, "hourglass_stacks");
  positive(hourglass_depth, "hourglass_depth");
  if (seg_classes != kNumClasses) {
    throw InvalidConfig("arch: seg_classes must be " + std::to_string(kNumClasses));
  }
  if (!(grl_lambda >= 0.0)) throw InvalidConfig("arch: grl_lambda must be >= 0");
  if (n_downsample > 6) throw InvalidConfig("arch: n_downsample too large");
}

ArchConfig ArchConfig::desk_scale() {
  ArchConfig a;
  a.base_channels = 16;
  a.mlp_dim = 64;
  a.disc_channels = 16;
  a.disc_layers = 3;
  a.seg_channels = 32;
  a.domain_channels = 32;
  a.height_channels = 24;
  return a;
}

nlohmann::json ArchConfig::to_json() const {
  return {
      {"base_channels", base_channels},
      {"style_dim", style_dim},
      {"n_downsample", n_downsample},
      {"n_residual_blocks", n_residual_blocks},
      {"mlp_dim", mlp_dim},
      {"style_downsample", style_downsample},
      {"disc_channels", disc_channels},
      {"disc_layers", disc_layers},
      {"disc_scales", disc_scales},
      {"seg_channels", seg_channels},
      {"seg_classes", seg_classes},
      {"domain_channels", domain_channels},
      {"grl_lambda", grl_lambda},
      {"height_channels", height_channels},
      {"hourglass_stacks", hourglass_stacks},
      {"hourglass_depth", hourglass_depth},
      {"content_channels", content_channels()},
      {"downsampling_factor", downsampling_factor()},
  };
}

ArchConfig ArchConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidConfig("arch: expected an object");
  ArchConfig a;
  const std::map<std::string, int*> ints = {
      {"base_channels", &a.base_channels},     {"style_dim", &a.style_dim},
      {"n_downsample", &a.n_downsample},       {"n_residual_blocks", &a.n_residual_blocks},
      {"mlp_dim", &a.mlp_dim},                 {"style_downsample", &a.style_downsample},
      {"disc_channels", &a.disc_channels},     {"disc_layers", &a.disc_layers},
      {"disc_scales", &a.disc_scales},         {"seg_channels", &a.seg_channels},
      {"seg_classes", &a.seg_classes},         {"domain_channels", &a.domain_channels},
      {"height_channels", &a.height_channels}, {"hourglass_stacks", &a.hourglass_stacks},
      {"hourglass_depth", &a.hourglass_depth},
  };
  for (const auto& [key, value] : j.items()) {
    if (auto it = ints.find(key); it != ints.end()) {
      if (!value.is_number_integer()) throw InvalidConfig("arch: " + key + " must be an integer");
      *it->second = value.get<int>();
    } else if (key == "grl_lambda") {
      if (!value.is_number()) throw InvalidConfig("arch: grl_lambda must be a number");
      a.grl_lambda = value.get<double>();
    } else if (key != "content_channels" && key != "downsampling_factor") {
      throw InvalidConfig("arch: unknown key '" + key + "'");
    }
  }
  a.validate();
  // Derived fields are accepted for readability but must agree.
  if (j.contains("content_channels") && j["content_channels"] != a.content_channels()) {
    throw InvalidConfig("arch: content_channels disagrees with base_channels/n_downsample");
  }
  if (j.contains("downsampling_factor") && j["downsampling_factor"] != a.downsampling_factor()) {
    throw InvalidConfig("arch: downsampling_factor disagrees with n_downsample");
  }
  return a;
}

// ---------------------------------------------------------------------------
// gradient reversal

namespace {

struct GradientReversalFn : torch::autograd::Function<GradientReversalFn> {
  static Tensor forward(torch::autograd::AutogradContext* ctx, const Tensor& x, double lambda) {
    ctx->saved_data["lambda"] = lambda;
    return x.clone();
  }
  static torch::autograd::variable_list backward(torch::autograd::AutogradContext* ctx,
                                                 torch::autograd::variable_list grad) {
    const double lambda = ctx->saved_data["lambda"].toDouble();
    return {grad[0] * -lambda, Tensor()};
  }
};

}  // namespace

Tensor gradient_reversal(const Tensor& x, double lambda) {
  return GradientReversalFn::apply(x, lambda);
}

// ---------------------------------------------------------------------------
// blocks

LayerNorm2dImpl::LayerNorm2dImpl(int channels) {
  gamma = register_parameter("gamma", torch::rand({channels}));
  beta = register_parameter("beta", torch::zeros({channels}));
}

Tensor LayerNorm2dImpl::forward(const Tensor& x) {
  const auto n = x.size(0);
  auto flat = x.reshape({n, -1});
  auto mean = flat.mean(1).view({n, 1, 1, 1});
  auto std = flat.std(1).view({n, 1, 1, 1});
  auto y = (x - mean) / (std + 1e-5);
  return y * gamma.view({1, -1, 1, 1}) + beta.view({1, -1, 1, 1});
}

ConvBlockImpl::ConvBlockImpl(int in, int out, int kernel, int stride, int padding, Norm norm,
                             Act act_, int dilation, bool zero_pad)
    : act(act_) {
  auto opts = torch::nn::Conv2dOptions(in, out, kernel).stride(stride).dilation(dilation);
  if (zero_pad) {
    opts.padding(padding);
  } else if (padding > 0) {
    pad = register_module("pad", torch::nn::ReflectionPad2d(padding));
  }
  conv = register_module("conv", torch::nn::Conv2d(opts));
  if (norm == Norm::Instance) {
    instance = register_module("norm", torch::nn::InstanceNorm2d(
                                           torch::nn::InstanceNorm2dOptions(out).affine(false)));
  } else if (norm == Norm::Layer) {
    layer = register_module("norm", LayerNorm2d(out));
  }
}

Tensor ConvBlockImpl::forward(Tensor x) {
  if (pad) x = pad(x);
  x = conv(x);
  if (instance) x = instance(x);
  if (layer) x = layer(x);
  switch (act) {
    case Act::ReLU: return torch::relu(x);
    case Act::LeakyReLU: return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2));
    case Act::None: break;
  }
  return x;
}

ResBlockImpl::ResBlockImpl(int channels, Norm norm, bool zero_pad) {
  first = register_module("first",
                          ConvBlock(channels, channels, 3, 1, 1, norm, Act::ReLU, 1, zero_pad));
  second = register_module("second",
                           ConvBlock(channels, channels, 3, 1, 1, norm, Act::None, 1, zero_pad));
}

Tensor ResBlockImpl::forward(const Tensor& x) { return x + second(first(x)); }

AdaResBlockImpl::AdaResBlockImpl(int c) : channels(c) {
  pad = register_module("pad", torch::nn::ReflectionPad2d(1));
  conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 3)));
  conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 3)));
}

namespace {

Tensor adain(const Tensor& x, const Tensor& beta, const Tensor& gamma) {
  auto y = torch::instance_norm(x, {}, {}, {}, {}, true, 0.1, 1e-5, false);
  return y * gamma.unsqueeze(-1).unsqueeze(-1) + beta.unsqueeze(-1).unsqueeze(-1);
}

}  // namespace

Tensor AdaResBlockImpl::forward(const Tensor& x, const Tensor& params) {
  auto p = params.split(channels, 1);
  auto y = torch::relu(adain(conv1(pad(x)), p[0], p[1]));
  y = adain(conv2(pad(y)), p[2], p[3]);
  return x + y;
}

// ---------------------------------------------------------------------------
// translation networks

ContentEncoderImpl::ContentEncoderImpl(const ArchConfig& a) {
  body = torch::nn::Sequential();
  int dim = a.base_channels;
  body->push_back(ConvBlock(3, dim, 7, 1, 3, Norm::Instance, Act::ReLU));
  for (int i = 0; i < a.n_downsample; ++i) {
    body->push_back(ConvBlock(dim, dim * 2, 4, 2, 1, Norm::Instance, Act::ReLU));
    dim *= 2;
  }
  for (int i = 0; i < a.n_residual_blocks; ++i) body->push_back(ResBlock(dim, Norm::Instance));
  register_module("body", body);
}

Tensor ContentEncoderImpl::forward(const Tensor& x) { return body->forward(x); }

StyleEncoderImpl::StyleEncoderImpl(const ArchConfig& a) {
  body = torch::nn::Sequential();
  int dim = a.base_channels;
  body->push_back(ConvBlock(3, dim, 7, 1, 3, Norm::None, Act::ReLU));
  for (int i = 0; i < a.style_downsample; ++i) {
    const int next = i < 2 ? dim * 2 : dim;
    body->push_back(ConvBlock(dim, next, 4, 2, 1, Norm::None, Act::ReLU, 1, true));
    dim = next;
  }
  body->push_back(torch::nn::AdaptiveAvgPool2d(1));
  body->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(dim, a.style_dim, 1)));
  register_module("body", body);
}

Tensor StyleEncoderImpl::forward(const Tensor& x) { return body->forward(x).flatten(1); }

DecoderImpl::DecoderImpl(const ArchConfig& a)
    : content_channels(a.content_channels()), style_dim(a.style_dim) {
  const int c = content_channels;
  res_blocks = torch::nn::ModuleList();
  for (int i = 0; i < a.n_residual_blocks; ++i) res_blocks->push_back(AdaResBlock(c));
  register_module("res_blocks", res_blocks);

  mlp = torch::nn::Sequential(torch::nn::Linear(a.style_dim, a.mlp_dim), torch::nn::ReLU(),
                              torch::nn::Linear(a.mlp_dim, a.mlp_dim), torch::nn::ReLU(),
                              torch::nn::Linear(a.mlp_dim, 4 * c * a.n_residual_blocks));
  register_module("mlp", mlp);

  upsample = torch::nn::Sequential();
  int dim = c;
  for (int i = 0; i < a.n_downsample; ++i) {
    upsample->push_back(torch::nn::Upsample(
        torch::nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
    upsample->push_back(ConvBlock(dim, dim / 2, 5, 1, 2, Norm::Layer, Act::ReLU));
    dim /= 2;
  }
  upsample->push_back(ConvBlock(dim, 3, 7, 1, 3, Norm::None, Act::None));
  upsample->push_back(torch::nn::Sigmoid());
  register_module("upsample", upsample);
}

Tensor DecoderImpl::forward(const Tensor& content, const Tensor& style) {
  auto params = mlp->forward(style);
  auto chunks = params.split(4 * content_channels, 1);
  Tensor x = content;
  for (std::size_t i = 0; i < res_blocks->size(); ++i) {
    x = res_blocks[i]->as<AdaResBlockImpl>()->forward(x, chunks[i]);
  }
  return upsample->forward(x);
}

MsImageDisImpl::MsImageDisImpl(const ArchConfig& a) {
  scales = torch::nn::ModuleList();
  for (int s = 0; s < a.disc_scales; ++s) {
    torch::nn::Sequential net;
    int dim = a.disc_channels;
    net->push_back(ConvBlock(3, dim, 4, 2, 1, Norm::None, Act::LeakyReLU));
    for (int l = 1; l < a.disc_layers; ++l) {
      net->push_back(ConvBlock(dim, dim * 2, 4, 2, 1, Norm::None, Act::LeakyReLU));
      dim *= 2;
    }
    net->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(dim, 1, 1)));
    scales->push_back(net);
  }
  register_module("scales", scales);
  downsample = register_module(
      "downsample",
      torch::nn::AvgPool2d(torch::nn::AvgPool2dOptions(3).stride(2).padding(1).count_include_pad(false)));
}

int MsImageDisImpl::min_side(const ArchConfig& a) {
  auto fits = [&](int side) {
    int s = side;
    for (int k = 0; k < a.disc_scales; ++k) {
      int t = s;
      for (int l = 0; l < a.disc_layers; ++l) {
        if (t < 2) return false;
        t /= 2;
      }
      s = (s + 1) / 2;
    }
    return true;
  };
  int side = 1;
  while (!fits(side)) ++side;
  return side;
}

std::vector<Tensor> MsImageDisImpl::forward(Tensor x) {
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < scales->size(); ++s) {
    out.push_back(scales[s]->as<torch::nn::SequentialImpl>()->forward(x));
    x = downsample(x);
  }
  return out;
}

SegHeadImpl::SegHeadImpl(const ArchConfig& a) : factor(a.downsampling_factor()) {
  const int c = a.content_channels();
  const int k = a.seg_channels;
  branches = torch::nn::ModuleList();
  for (int d : {1, 2, 4}) {
    branches->push_back(ConvBlock(c, k, 3, 1, d, Norm::None, Act::ReLU, d, true));
  }
  register_module("branches", branches);
  global_branch = torch::nn::Sequential(torch::nn::AdaptiveAvgPool2d(1),
                                        torch::nn::Conv2d(torch::nn::Conv2dOptions(c, k, 1)),
                                        torch::nn::ReLU());
  register_module("global_branch", global_branch);
  project = torch::nn::Sequential(torch::nn::Conv2d(torch::nn::Conv2dOptions(4 * k, k, 1)),
                                  torch::nn::ReLU(),
                                  torch::nn::Conv2d(torch::nn::Conv2dOptions(k, a.seg_classes, 1)));
  register_module("project", project);
}

Tensor SegHeadImpl::forward(const Tensor& content) {
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < branches->size(); ++i) {
    parts.push_back(branches[i]->as<ConvBlockImpl>()->forward(content));
  }
  parts.push_back(global_branch->forward(content).expand_as(parts.front()));
  auto logits = project->forward(torch::cat(parts, 1));
  return F::interpolate(logits, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{content.size(2) * factor,
                                                               content.size(3) * factor})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
}

DomainClassifierImpl::DomainClassifierImpl(const ArchConfig& a) {
  const int k = a.domain_channels;
  features = torch::nn::Sequential(
      ConvBlock(a.content_channels(), k, 3, 2, 1, Norm::None, Act::LeakyReLU, 1, true),
      ConvBlock(k, k, 3, 2, 1, Norm::None, Act::LeakyReLU, 1, true),
      torch::nn::AdaptiveAvgPool2d(1), torch::nn::Flatten());
  register_module("features", features);
  out = register_module("out", torch::nn::Linear(k, 1));
}

Tensor DomainClassifierImpl::forward(const Tensor& content, double grl_lambda) {
  return out(features->forward(gradient_reversal(content, grl_lambda))).flatten();
}

// ---------------------------------------------------------------------------
// height estimation

HourglassImpl::HourglassImpl(int depth, int channels) {
  skip = register_module("skip", ResBlock(channels, Norm::None, true));
  down = register_module("down", ResBlock(channels, Norm::None, true));
  up = register_module("up", ResBlock(channels, Norm::None, true));
  if (depth > 1) {
    inner = std::make_shared<HourglassImpl>(depth - 1, channels);
    register_module("inner", inner);
  } else {
    bottom = register_module("bottom", ResBlock(channels, Norm::None, true));
  }
}

Tensor HourglassImpl::forward(const Tensor& x) {
  auto high = skip(x);
  auto low = down(F::max_pool2d(x, F::MaxPool2dFuncOptions(2).stride(2)));
  low = inner ? inner->forward(low) : bottom(low);
  low = up(low);
  low = F::interpolate(low, F::InterpolateFuncOptions()
                                .size(std::vector<int64_t>{x.size(2), x.size(3)})
                                .mode(torch::kNearest));
  return high + low;
}

HeightNetImpl::HeightNetImpl(const ArchConfig& a) : depth(a.hourglass_depth) {
  const int c = a.height_channels;
  stem = torch::nn::Sequential(ConvBlock(3, c, 7, 1, 3, Norm::None, Act::ReLU, 1, true),
                               ResBlock(c, Norm::None, true));
  register_module("stem", stem);
  hourglasses = torch::nn::ModuleList();
  heads = torch::nn::ModuleList();
  merge_features = torch::nn::ModuleList();
  merge_preds = torch::nn::ModuleList();
  for (int s = 0; s < a.hourglass_stacks; ++s) {
    hourglasses->push_back(torch::nn::Sequential(Hourglass(a.hourglass_depth, c),
                                                 ConvBlock(c, c, 1, 1, 0, Norm::None, Act::ReLU)));
    heads->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(c, 1, 1)));
    if (s + 1 < a.hourglass_stacks) {
      merge_features->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 1)));
      merge_preds->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(1, c, 1)));
    }
  }
  register_module("hourglasses", hourglasses);
  register_module("heads", heads);
  register_module("merge_features", merge_features);
  register_module("merge_preds", merge_preds);
}

std::vector<Tensor> HeightNetImpl::forward_stacks(const Tensor& x) {
  std::vector<Tensor> preds;
  auto feat = stem->forward(x);
  for (std::size_t s = 0; s < hourglasses->size(); ++s) {
    auto y = hourglasses[s]->as<torch::nn::SequentialImpl>()->forward(feat);
    auto pred = heads[s]->as<torch::nn::Conv2dImpl>()->forward(y);
    preds.push_back(pred);
    if (s + 1 < hourglasses->size()) {
      feat = feat + merge_features[s]->as<torch::nn::Conv2dImpl>()->forward(y) +
             merge_preds[s]->as<torch::nn::Conv2dImpl>()->forward(pred);
    }
  }
  return preds;
}

// ---------------------------------------------------------------------------
// bundle

NetworkBundleImpl::NetworkBundleImpl(const ArchConfig& arch) : arch_(arch) {
  arch_.validate();
  content_encoder_A = register_module("content_encoder_A", ContentEncoder(arch_));
  content_encoder_B = register_module("content_encoder_B", ContentEncoder(arch_));
  style_encoder_A = register_module("style_encoder_A", StyleEncoder(arch_));
  style_encoder_B = register_module("style_encoder_B", StyleEncoder(arch_));
  decoder_A = register_module("decoder_A", Decoder(arch_));
  decoder_B = register_module("decoder_B", Decoder(arch_));
  discriminator_A = register_module("discriminator_A", MsImageDis(arch_));
  discriminator_B = register_module("discriminator_B", MsImageDis(arch_));
  seg_head = register_module("seg_head", SegHead(arch_));
  domain_classifier = register_module("domain_classifier", DomainClassifier(arch_));
  height_net = register_module("height_net", HeightNet(arch_));
}

void NetworkBundleImpl::check_image(const Tensor& x) const {
  if (x.dim() != 4 || x.size(1) != 3) {
    throw BadDims("expected an [N, 3, H, W] image batch");
  }
  const int f = arch_.downsampling_factor();
  const int64_t h = x.size(2), w = x.size(3);
  if (h % f != 0 || w % f != 0) {
    throw BadDims("image " + std::to_string(h) + "x" + std::to_string(w) +
                  " is not divisible by the downsampling factor " + std::to_string(f));
  }
  const int64_t min_side = int64_t{1} << arch_.style_downsample;
  if (h < min_side || w < min_side) {
    throw BadDims("image sides must be at least " + std::to_string(min_side));
  }
}

void NetworkBundleImpl::check_content(const Tensor& c) const {
  if (c.dim() != 4 || c.size(1) != arch_.content_channels()) {
    throw ShapeMismatch("content code must be [N, " + std::to_string(arch_.content_channels()) +
                        ", h, w]");
  }
}

LatentCode NetworkBundleImpl::encode(const Tensor& x, Side domain) {
  return {encode_content(x, domain), encode_style(x, domain)};
}

Tensor NetworkBundleImpl::encode_content(const Tensor& x, Side domain) {
  check_image(x);
  return domain == Side::A ? content_encoder_A(x) : content_encoder_B(x);
}

Tensor NetworkBundleImpl::encode_style(const Tensor& x, Side domain) {
  check_image(x);
  return domain == Side::A ? style_encoder_A(x) : style_encoder_B(x);
}

Tensor NetworkBundleImpl::decode(const Tensor& content, const Tensor& style, Side domain) {
  check_content(content);
  if (style.dim() != 2 || style.size(1) != arch_.style_dim) {
    throw ShapeMismatch("style code must be [N, " + std::to_string(arch_.style_dim) + "]");
  }
  if (style.size(0) != content.size(0)) {
    throw ShapeMismatch("content and style batch sizes differ");
  }
  return domain == Side::A ? decoder_A(content, style) : decoder_B(content, style);
}

std::vector<Tensor> NetworkBundleImpl::discriminate(const Tensor& x, Side domain) {
  if (x.dim() != 4 || x.size(1) != 3) throw BadDims("expected an [N, 3, H, W] image batch");
  const int min_side = MsImageDisImpl::min_side(arch_);
  if (x.size(2) < min_side || x.size(3) < min_side) {
    throw BadDims("discriminator needs sides of at least " + std::to_string(min_side));
  }
  return domain == Side::A ? discriminator_A(x) : discriminator_B(x);
}

Tensor NetworkBundleImpl::seg_forward(const Tensor& content) {
  check_content(content);
  return seg_head(content);
}

Tensor NetworkBundleImpl::domain_logits(const Tensor& content, double grl_lambda) {
  check_content(content);
  return domain_classifier(content, grl_lambda);
}

Tensor NetworkBundleImpl::domain_classify(const Tensor& content, double grl_lambda) {
  return torch::sigmoid(domain_logits(content, grl_lambda));
}

Tensor NetworkBundleImpl::height_forward(const Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3) throw BadDims("expected an [N, 3, H, W] image batch");
  return height_net(x);
}

namespace {

std::vector<Tensor> collect(std::initializer_list<torch::nn::Module*> modules) {
  std::vector<Tensor> out;
  for (auto* m : modules) {
    auto p = m->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

}  // namespace

std::vector<Tensor> NetworkBundleImpl::generator_parameters() {
  return collect({content_encoder_A.get(), content_encoder_B.get(), style_encoder_A.get(),
                  style_encoder_B.get(), decoder_A.get(), decoder_B.get(), seg_head.get(),
                  domain_classifier.get()});
}

std::vector<Tensor> NetworkBundleImpl::discriminator_parameters() {
  return collect({discriminator_A.get(), discriminator_B.get()});
}

std::vector<Tensor> NetworkBundleImpl::height_parameters() { return collect({height_net.get()}); }

std::vector<std::pair<std::string, std::shared_ptr<torch::nn::Module>>>
NetworkBundleImpl::components() {
  return {
      {"content_encoder_A", content_encoder_A.ptr()},
      {"content_encoder_B", content_encoder_B.ptr()},
      {"style_encoder_A", style_encoder_A.ptr()},
      {"style_encoder_B", style_encoder_B.ptr()},
      {"decoder_A", decoder_A.ptr()},
      {"decoder_B", decoder_B.ptr()},
      {"discriminator_A", discriminator_A.ptr()},
      {"discriminator_B", discriminator_B.ptr()},
      {"seg_head", seg_head.ptr()},
      {"domain_classifier", domain_classifier.ptr()},
      {"height_net", height_net.ptr()},
  };
}

NetworkBundle make_bundle(const ArchConfig& arch, std::uint64_t seed) {
  torch::manual_seed(seed);
  return NetworkBundle(arch);
}

// ---------------------------------------------------------------------------
// checkpoints

void write_bundle(torch::serialize::OutputArchive& archive, NetworkBundle& bundle) {
  archive.write("format_version", c10::IValue(static_cast<int64_t>(kCheckpointFormatVersion)));
  archive.write("arch_config", c10::IValue(bundle->arch().to_json().dump()));
  torch::serialize::OutputArchive components;
  for (auto& [name, module] : bundle->components()) {
    torch::serialize::OutputArchive sub;
    module->save(sub);
    components.write(name, sub);
  }
  archive.write("components", components);
}

NetworkBundle read_bundle(torch::serialize::InputArchive& archive) {
  try {
    c10::IValue version;
    if (!archive.try_read("format_version", version) || !version.isInt()) {
      throw ModelLoadError("checkpoint has no format_version");
    }
    if (version.toInt() != kCheckpointFormatVersion) {
      throw ModelLoadError("unsupported checkpoint format_version " +
                           std::to_string(version.toInt()));
    }
    c10::IValue arch_ivalue;
    if (!archive.try_read("arch_config", arch_ivalue) || !arch_ivalue.isString()) {
      throw ModelLoadError("checkpoint has no arch_config");
    }
    const auto arch = ArchConfig::from_json(nlohmann::json::parse(arch_ivalue.toStringRef()));
    NetworkBundle bundle(arch);
    torch::serialize::InputArchive components;
    archive.read("components", components);
    for (auto& [name, module] : bundle->components()) {
      torch::serialize::InputArchive sub;
      components.read(name, sub);
      module->load(sub);
    }
    return bundle;
  } catch (const ModelLoadError&) {
    throw;
  } catch (const std::exception& e) {
    throw ModelLoadError(std::string("cannot read checkpoint: ") + e.what());
  }
}

void save_bundle(NetworkBundle& bundle, const std::filesystem::path& path) {
  torch::serialize::OutputArchive archive;
  write_bundle(archive, bundle);
  auto tmp = path;
  tmp += ".tmp";
  archive.save_to(tmp.string());
  std::filesystem::rename(tmp, path);
}

NetworkBundle load_bundle(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ModelLoadError("no checkpoint at " + path.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const std::exception& e) {
    throw ModelLoadError("cannot open checkpoint " + path.string() + ": " + e.what());
  }
  return read_bundle(archive);
}

// ---------------------------------------------------------------------------
// conversion

Tensor to_tensor(const Image& image) {
  auto t = torch::from_blob(const_cast<float*>(image.pixels.data().data()),
                            {image.height(), image.width(), 3}, torch::kFloat32);
  return t.permute({2, 0, 1}).unsqueeze(0).clone();
}

Tensor to_tensor(const FloodMask& mask) {
  auto t = torch::from_blob(const_cast<std::uint8_t*>(mask.bits.data().data()),
                            {1, 1, mask.height(), mask.width()}, torch::kUInt8);
  return t.to(torch::kFloat32);
}

Tensor to_tensor(const SegMap& seg) {
  auto t = torch::from_blob(const_cast<std::uint8_t*>(seg.labels.data().data()),
                            {1, seg.height(), seg.width()}, torch::kUInt8);
  return t.to(torch::kInt64);
}

Image image_from_tensor(const Tensor& t) {
  auto x = t.detach();
  if (x.dim() == 4) {
    if (x.size(0) != 1) throw ShapeMismatch("image tensor batch must be 1");
    x = x[0];
  }
  if (x.dim() != 3 || x.size(0) != 3) throw ShapeMismatch("expected a [3, H, W] tensor");
  x = x.to(torch::kFloat32).permute({1, 2, 0}).contiguous();
  Image img(static_cast<int>(x.size(0)), static_cast<int>(x.size(1)));
  std::memcpy(img.pixels.data().data(), x.data_ptr<float>(), img.pixels.size() * sizeof(float));
  return img;
}

FloodMask mask_from_tensor(const Tensor& t) {
  auto x = t.detach();
  while (x.dim() > 2) {
    if (x.size(0) != 1) throw ShapeMismatch("mask tensor must have singleton leading dims");
    x = x[0];
  }
  if (x.dim() != 2) throw ShapeMismatch("expected an [H, W] mask tensor");
  x = (x != 0).to(torch::kUInt8).contiguous();
  FloodMask mask(static_cast<int>(x.size(0)), static_cast<int>(x.size(1)));
  std::memcpy(mask.bits.data().data(), x.data_ptr<std::uint8_t>(), mask.bits.size());
  return mask;
}

}  // namespace floodgen
