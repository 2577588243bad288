#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include <json.hpp>

#include "floodgen/sim_dataset.hpp"

namespace floodgen {

// Architecture hyperparameters. Defaults follow the MUNIT reference setup;
// desk_scale() shrinks widths for CPU-sized experiments.
struct ArchConfig {
  int base_channels = 64;     // width of the first encoder conv
  int style_dim = 8;
  int n_downsample = 2;
  int n_residual_blocks = 4;
  int mlp_dim = 256;
  int style_downsample = 4;
  int disc_channels = 64;
  int disc_layers = 4;
  int disc_scales = 3;
  int seg_channels = 64;
  int seg_classes = kNumClasses;
  int domain_channels = 64;
  double grl_lambda = 1.0;
  int height_channels = 32;
  int hourglass_stacks = 2;
  int hourglass_depth = 3;

  int content_channels() const { return base_channels << n_downsample; }
  int downsampling_factor() const { return 1 << n_downsample; }
  void validate() const;  // throws InvalidConfig

  static ArchConfig desk_scale();
  static ArchConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct LatentCode {
  torch::Tensor content;  // [N, C_c, H/f, W/f]
  torch::Tensor style;    // [N, S]
};

// Identity on the forward pass; multiplies the incoming gradient by -lambda.
torch::Tensor gradient_reversal(const torch::Tensor& x, double lambda);

// ---------------------------------------------------------------------------
// building blocks

// Per-sample normalization over (C, H, W) with a per-channel affine.
struct LayerNorm2dImpl : torch::nn::Module {
  explicit LayerNorm2dImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor gamma, beta;
};
TORCH_MODULE(LayerNorm2d);

enum class Norm { None, Instance, Layer };
enum class Act { None, ReLU, LeakyReLU };

struct ConvBlockImpl : torch::nn::Module {
  // zero_pad selects zero padding inside the conv instead of reflection.
  ConvBlockImpl(int in, int out, int kernel, int stride, int padding, Norm norm, Act act,
                int dilation = 1, bool zero_pad = false);
  torch::Tensor forward(torch::Tensor x);

  torch::nn::ReflectionPad2d pad{nullptr};
  torch::nn::Conv2d conv{nullptr};
  torch::nn::InstanceNorm2d instance{nullptr};
  LayerNorm2d layer{nullptr};
  Act act;
};
TORCH_MODULE(ConvBlock);

struct ResBlockImpl : torch::nn::Module {
  ResBlockImpl(int channels, Norm norm, bool zero_pad = false);
  torch::Tensor forward(const torch::Tensor& x);
  ConvBlock first{nullptr}, second{nullptr};
};
TORCH_MODULE(ResBlock);

// Residual block whose two normalizations are adaptive instance norms driven
// by externally supplied (mean, std) parameters.
struct AdaResBlockImpl : torch::nn::Module {
  explicit AdaResBlockImpl(int channels);
  // params: [N, 4 * channels] = (beta1, gamma1, beta2, gamma2)
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& params);
  torch::nn::ReflectionPad2d pad{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  int channels;
};
TORCH_MODULE(AdaResBlock);

// ---------------------------------------------------------------------------
// translation networks

struct ContentEncoderImpl : torch::nn::Module {
  explicit ContentEncoderImpl(const ArchConfig& arch);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(ContentEncoder);

struct StyleEncoderImpl : torch::nn::Module {
  explicit StyleEncoderImpl(const ArchConfig& arch);
  torch::Tensor forward(const torch::Tensor& x);  // [N, S]
  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(StyleEncoder);

struct DecoderImpl : torch::nn::Module {
  explicit DecoderImpl(const ArchConfig& arch);
  torch::Tensor forward(const torch::Tensor& content, const torch::Tensor& style);

  torch::nn::Sequential mlp{nullptr};
  torch::nn::ModuleList res_blocks{nullptr};
  torch::nn::Sequential upsample{nullptr};
  int content_channels;
  int style_dim;
};
TORCH_MODULE(Decoder);

// Least-squares patch discriminator evaluated at several scales.
struct MsImageDisImpl : torch::nn::Module {
  explicit MsImageDisImpl(const ArchConfig& arch);
  std::vector<torch::Tensor> forward(torch::Tensor x);
  // Smallest side every scale can still process.
  static int min_side(const ArchConfig& arch);
  torch::nn::ModuleList scales{nullptr};
  torch::nn::AvgPool2d downsample{nullptr};
};
TORCH_MODULE(MsImageDis);

// Atrous-pyramid head on content codes, upsampled to input resolution.
struct SegHeadImpl : torch::nn::Module {
  explicit SegHeadImpl(const ArchConfig& arch);
  torch::Tensor forward(const torch::Tensor& content);  // [N, classes, H, W] logits
  torch::nn::ModuleList branches{nullptr};
  torch::nn::Sequential global_branch{nullptr};
  torch::nn::Sequential project{nullptr};
  int factor;
};
TORCH_MODULE(SegHead);

struct DomainClassifierImpl : torch::nn::Module {
  explicit DomainClassifierImpl(const ArchConfig& arch);
  // Logit that the code comes from the simulated domain. The reversal layer
  // sits in front of the first conv.
  torch::Tensor forward(const torch::Tensor& content, double grl_lambda);
  torch::nn::Sequential features{nullptr};
  torch::nn::Linear out{nullptr};
};
TORCH_MODULE(DomainClassifier);

// ---------------------------------------------------------------------------
// height estimation

struct HourglassImpl : torch::nn::Module {
  HourglassImpl(int depth, int channels);
  torch::Tensor forward(const torch::Tensor& x);
  ResBlock skip{nullptr}, down{nullptr}, up{nullptr};
  ResBlock bottom{nullptr};
  std::shared_ptr<HourglassImpl> inner;
};
TORCH_MODULE(Hourglass);

struct HeightNetImpl : torch::nn::Module {
  explicit HeightNetImpl(const ArchConfig& arch);
  // One prediction per stack, [N, 1, H, W] each; the last one is the output.
  std::vector<torch::Tensor> forward_stacks(const torch::Tensor& x);
  torch::Tensor forward(const torch::Tensor& x) { return forward_stacks(x).back(); }

  torch::nn::Sequential stem{nullptr};
  torch::nn::ModuleList hourglasses{nullptr}, heads{nullptr}, merge_features{nullptr},
      merge_preds{nullptr};
  int depth;
};
TORCH_MODULE(HeightNet);

// ---------------------------------------------------------------------------
// bundle

struct NetworkBundleImpl : torch::nn::Module {
  explicit NetworkBundleImpl(const ArchConfig& arch);

  // x: [N, 3, H, W] in [0,1]; H and W divisible by the downsampling factor.
  LatentCode encode(const torch::Tensor& x, Side domain);
  torch::Tensor encode_content(const torch::Tensor& x, Side domain);
  torch::Tensor encode_style(const torch::Tensor& x, Side domain);
  torch::Tensor decode(const torch::Tensor& content, const torch::Tensor& style, Side domain);
  std::vector<torch::Tensor> discriminate(const torch::Tensor& x, Side domain);
  torch::Tensor seg_forward(const torch::Tensor& content);
  torch::Tensor domain_logits(const torch::Tensor& content, double grl_lambda);
  torch::Tensor domain_classify(const torch::Tensor& content, double grl_lambda);
  torch::Tensor height_forward(const torch::Tensor& x);

  std::vector<torch::Tensor> generator_parameters();
  std::vector<torch::Tensor> discriminator_parameters();
  std::vector<torch::Tensor> height_parameters();

  // Component name -> module, in a fixed order.
  std::vector<std::pair<std::string, std::shared_ptr<torch::nn::Module>>> components();

  const ArchConfig& arch() const { return arch_; }

  ContentEncoder content_encoder_A{nullptr}, content_encoder_B{nullptr};
  StyleEncoder style_encoder_A{nullptr}, style_encoder_B{nullptr};
  Decoder decoder_A{nullptr}, decoder_B{nullptr};
  MsImageDis discriminator_A{nullptr}, discriminator_B{nullptr};
  SegHead seg_head{nullptr};
  DomainClassifier domain_classifier{nullptr};
  HeightNet height_net{nullptr};

 private:
  void check_image(const torch::Tensor& x) const;
  void check_content(const torch::Tensor& c) const;
  ArchConfig arch_;
};
TORCH_MODULE(NetworkBundle);

// Seeds torch's generator before constructing so initialization is reproducible.
NetworkBundle make_bundle(const ArchConfig& arch, std::uint64_t seed);

// Checkpoint archive layout: "format_version" (int), "arch_config" (JSON
// string), and one sub-archive per component under "components/<name>".
inline constexpr int kCheckpointFormatVersion = 1;
void write_bundle(torch::serialize::OutputArchive& archive, NetworkBundle& bundle);
NetworkBundle read_bundle(torch::serialize::InputArchive& archive);
void save_bundle(NetworkBundle& bundle, const std::filesystem::path& path);
NetworkBundle load_bundle(const std::filesystem::path& path);  // throws ModelLoadError

// ---------------------------------------------------------------------------
// tensor conversion

torch::Tensor to_tensor(const Image& image);          // [1, 3, H, W]
torch::Tensor to_tensor(const FloodMask& mask);       // [1, 1, H, W] float
torch::Tensor to_tensor(const SegMap& seg);           // [1, H, W] int64
Image image_from_tensor(const torch::Tensor& t);      // [1,3,H,W] or [3,H,W]
FloodMask mask_from_tensor(const torch::Tensor& t);   // nonzero -> 1

}  // namespace floodgen
