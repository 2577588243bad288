#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace floodgen::testing {

struct GradientCase {
  std::string name;
  double relative_error;
};

// Every loss against central finite differences on 4x4 double inputs.
std::vector<GradientCase> run_loss_gradient_suite(std::uint64_t seed);

// Perturbs inputs inside random masks; returns the number of trials where a
// masked loss changed (expected 0).
int count_mask_invariance_violations(int trials, std::uint64_t seed);

}  // namespace floodgen::testing
