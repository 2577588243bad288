// Writes a small synthetic dataset and a matching tiny training config for the
// command line smoke test: <out>/data, <out>/config.json.

#include <fstream>
#include <iostream>

#include "floodgen/trainer.hpp"
#include "support/synthetic_scene.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixture <out_dir>\n";
    return 2;
  }
  const std::filesystem::path out = argv[1];
  std::filesystem::remove_all(out);
  floodgen::testing::write_dataset(out / "data", 3, 4, 32, 7);

  floodgen::TrainConfig c;
  c.arch.base_channels = 8;
  c.arch.n_residual_blocks = 1;
  c.arch.mlp_dim = 16;
  c.arch.disc_channels = 8;
  c.arch.seg_channels = 8;
  c.arch.domain_channels = 8;
  c.arch.height_channels = 8;
  c.image_size = 32;
  c.total_steps = 2;
  c.checkpoint_every = 1;
  c.grl.warmup_steps = 2;
  std::ofstream(out / "config.json") << c.to_json().dump(2) << "\n";
  return 0;
}
