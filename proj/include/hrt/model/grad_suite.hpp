#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hrt::model {

struct GradResult {
  std::string name;
  double error = 0.0;
};

// 64-bit central-difference checks of every differentiable op, then of each
// parameter of a 2-layer model under the summed causal + full-mode loss.
std::vector<GradResult> op_gradient_checks(std::uint64_t seed = 2024, double eps = 1e-5);
std::vector<GradResult> model_gradient_checks(std::uint64_t seed = 99, double eps = 1e-5);

}  // namespace hrt::model
