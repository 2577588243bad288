#include "loss_gradient_suite.hpp"

#include "floodgen/losses.hpp"
#include "fd_oracle.hpp"

namespace floodgen::testing {

using torch::Tensor;

namespace {

auto dbl() { return torch::TensorOptions().dtype(torch::kDouble); }

}  // namespace

std::vector<GradientCase> run_loss_gradient_suite(std::uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const auto long_opts = torch::TensorOptions().dtype(torch::kLong);
  auto x = torch::rand({1, 3, 4, 4}, gen, dbl());
  auto y = torch::rand({1, 3, 4, 4}, gen, dbl());
  auto mask = (torch::rand({1, 1, 4, 4}, gen, dbl()) < 0.4).to(torch::kDouble);
  auto src = torch::randn({1, 10, 4, 4}, gen, dbl());
  auto tr = torch::randn({1, 10, 4, 4}, gen, dbl());
  auto c = torch::randn({1, 8, 4, 4}, gen, dbl());
  auto c2 = torch::randn({1, 8, 4, 4}, gen, dbl());
  auto s = torch::randn({1, 8}, gen, dbl());
  auto s2 = torch::randn({1, 8}, gen, dbl());
  auto scores = torch::randn({1, 1, 4, 4}, gen, dbl());
  auto scores_small = torch::randn({1, 1, 2, 2}, gen, dbl());
  auto prob = torch::rand({4}, gen, dbl()) * 0.9 + 0.05;
  auto domain = torch::tensor({1.0, 0.0, 1.0, 0.0}, dbl());
  auto labels = torch::randint(0, 10, {1, 4, 4}, gen, long_opts);
  auto hp = torch::randn({1, 1, 4, 4}, gen, dbl());
  auto hg = torch::randn({1, 1, 4, 4}, gen, dbl());

  std::vector<GradientCase> out;
  auto add = [&](const std::string& name, auto f, const Tensor& at) {
    out.push_back({name, gradient_check(f, at)});
  };
  add("masked_cycle", [&](const Tensor& t) { return masked_cycle_loss(x, t, mask); }, y);
  add("masked_cycle_soft", [&](const Tensor& t) { return masked_cycle_loss(x, t, mask, 0.25); }, y);
  add("semantic_consistency",
      [&](const Tensor& t) { return semantic_consistency_loss(src, t, mask); }, tr);
  add("gan_generator",
      [&](const Tensor& t) { return gan_generator_loss({t, scores_small}); }, scores);
  add("gan_discriminator_real",
      [&](const Tensor& t) { return gan_discriminator_loss({t}, {scores}); }, scores);
  add("gan_discriminator_fake",
      [&](const Tensor& t) { return gan_discriminator_loss({scores}, {t}); }, scores);
  add("recon_image",
      [&](const Tensor& t) { return reconstruction_losses(x, t, c, c2, s, s2).image; }, y);
  add("recon_content",
      [&](const Tensor& t) { return reconstruction_losses(x, y, c, t, s, s2).content; }, c2);
  add("recon_style",
      [&](const Tensor& t) { return reconstruction_losses(x, y, c, c2, s, t).style; }, s2);
  add("domain_adv", [&](const Tensor& t) { return domain_adv_loss(t, domain); }, prob);
  add("seg_supervised", [&](const Tensor& t) { return seg_supervised_loss(t, labels); }, src);
  add("height_l2", [&](const Tensor& t) { return height_l2_loss(t, hg, mask); }, hp);
  return out;
}

int count_mask_invariance_violations(int trials, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  int violations = 0;
  for (int i = 0; i < trials; ++i) {
    auto mask = (torch::rand({2, 1, 4, 4}, gen, dbl()) < 0.5).to(torch::kDouble);
    auto x = torch::rand({2, 3, 4, 4}, gen, dbl());
    auto y = torch::rand({2, 3, 4, 4}, gen, dbl());
    auto y2 = y + torch::randn({2, 3, 4, 4}, gen, dbl()) * 10.0 * mask;
    if (masked_cycle_loss(x, y, mask).item<double>() != masked_cycle_loss(x, y2, mask).item<double>())
      ++violations;
    auto src = torch::randn({2, 10, 4, 4}, gen, dbl());
    auto tr = torch::randn({2, 10, 4, 4}, gen, dbl());
    auto tr2 = tr + torch::randn({2, 10, 4, 4}, gen, dbl()) * 10.0 * mask;
    if (semantic_consistency_loss(src, tr, mask).item<double>() !=
        semantic_consistency_loss(src, tr2, mask).item<double>())
      ++violations;
    auto h = torch::randn({2, 1, 4, 4}, gen, dbl());
    auto g = torch::randn({2, 1, 4, 4}, gen, dbl());
    auto h2 = h + torch::randn({2, 1, 4, 4}, gen, dbl()) * 10.0 * mask;
    if (height_l2_loss(h, g, mask).item<double>() != height_l2_loss(h2, g, mask).item<double>())
      ++violations;
  }
  return violations;
}

}  // namespace floodgen::testing
