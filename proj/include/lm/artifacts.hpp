#pragma once

#include <string>
#include <vector>

#include "lm/metrics.hpp"
#include "lm/tensor.hpp"

namespace lm::artifacts {

void write_text_atomic(const std::string& path, const std::string& content);

// Rows of coordinates under a header "x0,x1,...". n = 0 gives header only.
std::string points_csv(const Tensor<float>& pts);

// Side-by-side input/reconstruction rows plus a per-row squared-error column
// (mean over coordinates, so the column mean equals the aggregate MSE).
std::string reconstruction_csv(const Tensor<float>& x, const Tensor<float>& xh);

// "run_id,step,key,value" rows.
std::string report_csv(const metrics::MetricReport& rep, const std::string& run_id,
                       int64_t step);

// Scatter plot of up to two point groups (first gray, second colored). Points
// with 3 columns are projected onto their (x0, x2) plane — for the swiss roll
// that is the rolled cross-section; 2 columns plot as-is.
std::string svg_scatter(const std::vector<const Tensor<float>*>& groups);

}  // namespace lm::artifacts
