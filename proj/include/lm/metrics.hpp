#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "lm/rng.hpp"
#include "lm/tensor.hpp"

namespace lm::metrics {

struct MetricReport {
  std::vector<std::pair<std::string, double>> values;
  int64_t n_data = 0;
  int64_t n_gen = 0;
  uint64_t seed = 0;

  void set(const std::string& key, double v) {
    for (auto& [k, old] : values)
      if (k == key) {
        old = v;
        return;
      }
    values.emplace_back(key, v);
  }

  double get(const std::string& key) const {
    for (const auto& [k, v] : values)
      if (k == key) return v;
    throw std::invalid_argument("metric report: no value named " + key);
  }

  bool all_finite() const {
    for (const auto& [k, v] : values)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

template <typename T>
double mse_metric(const Tensor<T>& x, const Tensor<T>& xh) {
  require(x.shape == xh.shape, "mse_metric: shape mismatch " + shape_str(x.shape) + " vs " +
                                   shape_str(xh.shape));
  require(x.numel() > 0, "mse_metric: empty input");
  double s = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    double d = static_cast<double>(x[i]) - xh[i];
    s += d * d;
  }
  return s / x.numel();
}

// Exact 1-D 2-Wasserstein: sort both samples, RMS of the paired differences.
template <typename T>
double wasserstein_1d(std::vector<T> a, std::vector<T> b) {
  require(a.size() == b.size(), "wasserstein_1d: length mismatch " + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()));
  require(!a.empty(), "wasserstein_1d: empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return std::sqrt(s / a.size());
}

// Root-mean over seeded random unit directions of the squared 1-D W2 of the
// projections. A pseudometric on same-size sample sets; with a shared seed the
// triangle inequality holds projection by projection.
template <typename T>
double sliced_w2(const Tensor<T>& A, const Tensor<T>& B, int64_t n_proj, uint64_t seed) {
  require(A.rank() == 2 && B.rank() == 2 && A.shape == B.shape,
          "sliced_w2: need equal [n x d] shapes, got " + shape_str(A.shape) + " vs " +
              shape_str(B.shape));
  require(n_proj >= 1, "sliced_w2: need at least one projection");
  const int64_t n = A.shape[0], d = A.shape[1];
  require(n >= 1, "sliced_w2: empty sample sets");
  Rng rng(seed, "sliced-w2");
  std::vector<double> dir(static_cast<size_t>(d));
  std::vector<T> pa(static_cast<size_t>(n)), pb(static_cast<size_t>(n));
  double acc = 0;
  for (int64_t p = 0; p < n_proj; ++p) {
    double norm = 0;
    do {
      norm = 0;
      for (auto& c : dir) {
        c = rng.normal();
        norm += c * c;
      }
    } while (norm < 1e-24);
    norm = std::sqrt(norm);
    for (auto& c : dir) c /= norm;
    for (int64_t i = 0; i < n; ++i) {
      double sa = 0, sb = 0;
      for (int64_t j = 0; j < d; ++j) {
        sa += dir[static_cast<size_t>(j)] * A.at(i, j);
        sb += dir[static_cast<size_t>(j)] * B.at(i, j);
      }
      pa[static_cast<size_t>(i)] = static_cast<T>(sa);
      pb[static_cast<size_t>(i)] = static_cast<T>(sb);
    }
    double w = wasserstein_1d(pa, pb);
    acc += w * w;
  }
  return std::sqrt(acc / n_proj);
}

namespace detail {

// ranks[i*n + j] = 1-based rank of j among i's neighbors (by distance, ties by
// index); diagonal entries unused. knn[i] = first k columns of the argsort.
template <typename T>
void neighbor_ranks(const Tensor<T>& X, std::vector<int32_t>& ranks,
                    std::vector<int32_t>& order) {
  const int64_t n = X.shape[0], d = X.shape[1];
  std::vector<double> dist(static_cast<size_t>(n));
  std::vector<int32_t> idx(static_cast<size_t>(n));
  ranks.assign(static_cast<size_t>(n * n), 0);
  order.assign(static_cast<size_t>(n * n), 0);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double s = 0;
      for (int64_t c = 0; c < d; ++c) {
        double df = static_cast<double>(X.at(i, c)) - X.at(j, c);
        s += df * df;
      }
      dist[static_cast<size_t>(j)] = s;
      idx[static_cast<size_t>(j)] = static_cast<int32_t>(j);
    }
    idx.erase(std::remove(idx.begin(), idx.end(), static_cast<int32_t>(i)), idx.end());
    std::stable_sort(idx.begin(), idx.end(), [&](int32_t a, int32_t b) {
      return dist[static_cast<size_t>(a)] != dist[static_cast<size_t>(b)]
                 ? dist[static_cast<size_t>(a)] < dist[static_cast<size_t>(b)]
                 : a < b;
    });
    for (size_t r = 0; r < idx.size(); ++r) {
      ranks[static_cast<size_t>(i * n) + idx[r]] = static_cast<int32_t>(r + 1);
      order[static_cast<size_t>(i * n) + static_cast<int64_t>(r)] = idx[r];
    }
    idx.resize(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) idx[static_cast<size_t>(j)] = static_cast<int32_t>(j);
  }
}

}  // namespace detail

// Venna-Kaski trustworthiness/continuity over k-NN sets, brute force O(n^2).
template <typename T>
std::pair<double, double> trustworthiness_continuity(const Tensor<T>& X, const Tensor<T>& Z,
                                                     int64_t k) {
  require(X.rank() == 2 && Z.rank() == 2 && X.shape[0] == Z.shape[0],
          "trustworthiness: X and Z must have the same number of rows");
  const int64_t n = X.shape[0];
  require(k >= 1 && 2 * k < n, "trustworthiness: need 1 <= k < n/2, got k=" + std::to_string(k) +
                                   " n=" + std::to_string(n));

  std::vector<int32_t> rank_x, ord_x, rank_z, ord_z;
  detail::neighbor_ranks(X, rank_x, ord_x);
  detail::neighbor_ranks(Z, rank_z, ord_z);

  const double norm = 2.0 / (static_cast<double>(n) * k * (2.0 * n - 3.0 * k - 1.0));
  double t_pen = 0, c_pen = 0;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t r = 0; r < k; ++r) {
      // in Z's k-NN but not in X's: penalize by the X-space rank excess
      int32_t j = ord_z[static_cast<size_t>(i * n + r)];
      int32_t rx = rank_x[static_cast<size_t>(i * n) + j];
      if (rx > k) t_pen += rx - k;
      // in X's k-NN but not in Z's: penalize by the Z-space rank excess
      int32_t jj = ord_x[static_cast<size_t>(i * n + r)];
      int32_t rz = rank_z[static_cast<size_t>(i * n) + jj];
      if (rz > k) c_pen += rz - k;
    }
  }
  return {1.0 - norm * t_pen, 1.0 - norm * c_pen};
}

// Exact min-cost assignment (Hungarian algorithm with potentials), O(n^3).
inline double hungarian_min_cost(const std::vector<double>& a, int64_t n) {
  require(static_cast<int64_t>(a.size()) == n * n && n >= 1, "hungarian: need a square matrix");
  const double kInf = 1e100;
  std::vector<double> u(static_cast<size_t>(n + 1)), v(static_cast<size_t>(n + 1));
  std::vector<int64_t> p(static_cast<size_t>(n + 1)), way(static_cast<size_t>(n + 1));
  for (int64_t i = 1; i <= n; ++i) {
    p[0] = i;
    int64_t j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n + 1), kInf);
    std::vector<char> used(static_cast<size_t>(n + 1), 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      int64_t i0 = p[static_cast<size_t>(j0)], j1 = 0;
      double delta = kInf;
      for (int64_t j = 1; j <= n; ++j)
        if (!used[static_cast<size_t>(j)]) {
          double cur = a[static_cast<size_t>((i0 - 1) * n + (j - 1))] -
                       u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
          if (cur < minv[static_cast<size_t>(j)]) {
            minv[static_cast<size_t>(j)] = cur;
            way[static_cast<size_t>(j)] = j0;
          }
          if (minv[static_cast<size_t>(j)] < delta) {
            delta = minv[static_cast<size_t>(j)];
            j1 = j;
          }
        }
      for (int64_t j = 0; j <= n; ++j)
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      int64_t j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  double cost = 0;
  for (int64_t j = 1; j <= n; ++j)
    cost += a[static_cast<size_t>((p[static_cast<size_t>(j)] - 1) * n + (j - 1))];
  return cost;
}

// Two independent uniform samples on the radius-r sphere in dimension d; the
// root of the optimal-assignment total squared cost against the high-dimension
// prediction sqrt(2n)*r (near-orthogonal pairs each contribute about 2 r^2).
inline std::pair<double, double> sphere_concentration_check(int64_t n, int64_t d, double r,
                                                            uint64_t seed) {
  require(n >= 1 && n <= 256, "sphere check: exact assignment capped at n <= 256");
  require(d >= 2, "sphere check: need dimension at least 2");
  Rng rng(seed, "sphere");
  auto draw = [&](int64_t count) {
    Tensor<double> pts({count, d});
    for (int64_t i = 0; i < count; ++i) {
      double norm = 0;
      for (int64_t j = 0; j < d; ++j) {
        pts.at(i, j) = rng.normal();
        norm += pts.at(i, j) * pts.at(i, j);
      }
      norm = std::sqrt(norm);
      for (int64_t j = 0; j < d; ++j) pts.at(i, j) = pts.at(i, j) / norm * r;
    }
    return pts;
  };
  auto A = draw(n), B = draw(n);
  std::vector<double> cost(static_cast<size_t>(n * n));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0;
      for (int64_t c = 0; c < d; ++c) {
        double df = A.at(i, c) - B.at(j, c);
        s += df * df;
      }
      cost[static_cast<size_t>(i * n + j)] = s;
    }
  double empirical = std::sqrt(hungarian_min_cost(cost, n));
  double predicted = std::sqrt(2.0 * n) * r;
  return {empirical, predicted};
}

// Spearman rank correlation (ties get averaged ranks).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && a.size() >= 2, "spearman: need two equal-length samples");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t i, size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    size_t i = 0;
    while (i < idx.size()) {
      size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      double avg = (static_cast<double>(i) + j) / 2.0 + 1.0;
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  auto ra = ranks(a), rb = ranks(b);
  double ma = 0, mb = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= ra.size();
  mb /= rb.size();
  double num = 0, da = 0, db = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  require(da > 0 && db > 0, "spearman: constant input has no rank correlation");
  return num / std::sqrt(da * db);
}

// (norm of the per-dimension mean vector, max_j |population var_j - 1|).
template <typename T>
std::pair<double, double> latent_moments(const Tensor<T>& Z) {
  require(Z.rank() == 2 && Z.shape[0] >= 2, "latent_moments: need at least two rows");
  const int64_t n = Z.shape[0], d = Z.shape[1];
  double mean_sq = 0, worst = 0;
  for (int64_t j = 0; j < d; ++j) {
    double m = 0;
    for (int64_t i = 0; i < n; ++i) m += Z.at(i, j);
    m /= n;
    double var = 0;
    for (int64_t i = 0; i < n; ++i) var += (Z.at(i, j) - m) * (Z.at(i, j) - m);
    var /= n;
    mean_sq += m * m;
    worst = std::max(worst, std::abs(var - 1.0));
  }
  return {std::sqrt(mean_sq), worst};
}

}  // namespace lm::metrics
