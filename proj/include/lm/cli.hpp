#pragma once

#include <string>
#include <vector>

#include "lm/tensor.hpp"

namespace lm::cli {

// Entry point shared by main() and the tests; `args` excludes argv[0].
int run_cli(const std::vector<std::string>& args);

// Inverse of artifacts::points_csv; errors name the offending line.
Tensor<float> parse_points_csv(const std::string& text);

}  // namespace lm::cli
