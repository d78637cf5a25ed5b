#pragma once

#include <cstdint>
#include <vector>

#include "lm/tensor.hpp"

namespace lm {

struct FdReport {
  double max_rel_err = 0.0;
  int64_t checked = 0;
  int64_t skipped = 0;

  double coverage() const {
    int64_t total = checked + skipped;
    return total == 0 ? 0.0 : static_cast<double>(checked) / static_cast<double>(total);
  }
};

// Central-difference comparison against analytic gradients. `f` evaluates the
// scalar objective from `inputs` (building a fresh tape internally). When
// `skip_kinks` is set, each coordinate is also evaluated at step h/2 and the
// two estimates must agree; coordinates that straddle a non-smooth point
// (relu/clamp corners) disagree strongly between step sizes and are skipped
// rather than reported as gradient errors. Callers assert on coverage() so a
// broken objective can't silently skip everything.
template <typename T, typename F>
FdReport fd_compare(F&& f, std::vector<Tensor<T>>& inputs,
                    const std::vector<Tensor<T>>& analytic, double h, double rel_floor,
                    bool skip_kinks = false) {
  require(inputs.size() == analytic.size(), "fd_compare: analytic count mismatch");
  FdReport rep;
  for (size_t t = 0; t < inputs.size(); ++t) {
    require(inputs[t].shape == analytic[t].shape, "fd_compare: analytic shape mismatch");
    for (size_t k = 0; k < inputs[t].data.size(); ++k) {
      const T saved = inputs[t].data[k];
      auto probe = [&](double step) {
        inputs[t].data[k] = static_cast<T>(saved + step);
        double up = f(const_cast<const std::vector<Tensor<T>>&>(inputs));
        inputs[t].data[k] = static_cast<T>(saved - step);
        double dn = f(const_cast<const std::vector<Tensor<T>>&>(inputs));
        inputs[t].data[k] = saved;
        return (up - dn) / (2.0 * step);
      };
      double fd = probe(h);
      if (skip_kinks) {
        // For smooth coordinates the two step sizes agree to O(h^2) plus
        // rounding noise (~1e-10 relative for 64-bit probes at h=1e-5). A
        // coordinate near a corner (relu/clamp) can make the two estimates
        // agree with each other while both miss the one-sided analytic
        // gradient, so the gate must sit well below the error level it is
        // meant to filter; 1e-6 leaves four orders of headroom above smooth
        // rounding noise.
        double fd_half = probe(h / 2.0);
        double scale = std::max({std::abs(fd), std::abs(fd_half), 1.0});
        if (std::abs(fd - fd_half) > 1e-6 * scale) {
          ++rep.skipped;
          continue;
        }
      }
      double an = static_cast<double>(analytic[t].data[k]);
      double denom = std::max({std::abs(an), std::abs(fd), rel_floor});
      double rel = std::abs(an - fd) / denom;
      rep.max_rel_err = std::max(rep.max_rel_err, rel);
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace lm
