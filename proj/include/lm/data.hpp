#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "lm/rng.hpp"
#include "lm/tensor.hpp"

namespace lm::data {

inline constexpr double kPi = 3.14159265358979323846;

// t = 1.5*pi*(1+2u); point = (t cos t, t sin t) / (4.5*pi). The roll fills the
// unit disk with inner radius 1/3 (u=0 lands on (0,-1/3), u=1 on (0,1)).
inline std::pair<double, double> swiss_roll_curve(double u) {
  double t = 1.5 * kPi * (1.0 + 2.0 * u);
  return {t * std::cos(t) / (4.5 * kPi), t * std::sin(t) / (4.5 * kPi)};
}

// The 3d variant inserts a height coordinate h ~ U[-1,1] between the two.
template <typename T>
Tensor<T> sample_swiss_roll(int64_t n, int ambient_dim, double noise, uint64_t seed) {
  require(n > 0, "sample_swiss_roll: n must be positive");
  require(ambient_dim == 2 || ambient_dim == 3, "sample_swiss_roll: ambient dim must be 2 or 3");
  require(noise >= 0, "sample_swiss_roll: noise must be nonnegative");
  Tensor<T> out({n, ambient_dim});
  Rng rng(seed, "swiss-roll");
  for (int64_t i = 0; i < n; ++i) {
    auto [px, py] = swiss_roll_curve(rng.uniform());
    if (ambient_dim == 2) {
      out.at(i, 0) = static_cast<T>(px + noise * rng.normal());
      out.at(i, 1) = static_cast<T>(py + noise * rng.normal());
    } else {
      double h = rng.uniform(-1.0, 1.0);
      out.at(i, 0) = static_cast<T>(px + noise * rng.normal());
      out.at(i, 1) = static_cast<T>(h + noise * rng.normal());
      out.at(i, 2) = static_cast<T>(py + noise * rng.normal());
    }
  }
  return out;
}

template <typename T>
Tensor<T> sample_prior(int64_t n, int64_t dim, uint64_t seed) {
  require(n >= 0 && dim > 0, "sample_prior: bad n or dim");
  Tensor<T> out({n, dim});
  Rng rng(seed, "prior");
  rng.fill_normal(out);
  return out;
}

template <typename T>
Tensor<T> sample_gaussian_mixture(int64_t n, const std::vector<std::vector<double>>& means,
                                  const std::vector<double>& weights, double sigma,
                                  uint64_t seed) {
  require(n > 0 && !means.empty(), "gaussian_mixture: need n > 0 and at least one component");
  require(means.size() == weights.size(), "gaussian_mixture: one weight per mean required");
  const int64_t d = static_cast<int64_t>(means.front().size());
  double wsum = 0;
  for (size_t k = 0; k < means.size(); ++k) {
    require(static_cast<int64_t>(means[k].size()) == d, "gaussian_mixture: mean dims differ");
    require(weights[k] >= 0, "gaussian_mixture: negative weight");
    wsum += weights[k];
  }
  require(wsum > 0, "gaussian_mixture: weights sum to zero");

  Tensor<T> out({n, d});
  Rng rng(seed, "gaussian-mixture");
  for (int64_t i = 0; i < n; ++i) {
    double u = rng.uniform() * wsum;
    size_t k = 0;
    for (double acc = weights[0]; k + 1 < weights.size() && u > acc; acc += weights[++k]) {
    }
    for (int64_t j = 0; j < d; ++j)
      out.at(i, j) = static_cast<T>(means[k][static_cast<size_t>(j)] + sigma * rng.normal());
  }
  return out;
}

// --- IDX (byte variant only): magic 00 00 08 <rank>, big-endian u32 dims, raw payload.

namespace detail {
inline uint32_t read_be32(const unsigned char* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}
}  // namespace detail

inline Tensor<float> load_idx(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "load_idx: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  require(bytes.size() >= 4, "load_idx: file shorter than the 4-byte magic, got " +
                                 std::to_string(bytes.size()) + " bytes");
  require(bytes[0] == 0 && bytes[1] == 0, "load_idx: bad magic prefix at offset 0");
  require(bytes[2] == 0x08, "load_idx: unsupported data type byte 0x" +
                                std::to_string(bytes[2]) + " at offset 2 (only 0x08 = ubyte)");
  const int rank = bytes[3];
  require(rank == 1 || rank == 3,
          "load_idx: unsupported rank " + std::to_string(rank) + " at offset 3");
  const size_t header = 4 + 4 * static_cast<size_t>(rank);
  require(bytes.size() >= header, "load_idx: truncated dimension header, expected " +
                                      std::to_string(header) + " bytes, got " +
                                      std::to_string(bytes.size()));
  int64_t dims[3] = {1, 1, 1};
  int64_t total = 1;
  for (int k = 0; k < rank; ++k) {
    dims[k] = detail::read_be32(&bytes[4 + 4 * static_cast<size_t>(k)]);
    total *= dims[k];
  }
  require(static_cast<int64_t>(bytes.size() - header) == total,
          "load_idx: truncated payload, expected " + std::to_string(total) + " bytes, got " +
              std::to_string(bytes.size() - header));

  const int64_t n = dims[0];
  const int64_t width = rank == 1 ? 1 : dims[1] * dims[2];
  Tensor<float> out({n, width});
  for (int64_t i = 0; i < total; ++i)
    out[i] = static_cast<float>(bytes[header + static_cast<size_t>(i)]) / 255.0f;
  return out;
}

// Test-support writer for the round-trip oracle.
inline void write_idx(const std::string& path, const std::vector<unsigned char>& payload,
                      const std::vector<uint32_t>& dims) {
  require(dims.size() == 1 || dims.size() == 3, "write_idx: rank must be 1 or 3");
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "write_idx: cannot open " + path);
  unsigned char magic[4] = {0, 0, 0x08, static_cast<unsigned char>(dims.size())};
  f.write(reinterpret_cast<char*>(magic), 4);
  for (uint32_t d : dims) {
    unsigned char be[4] = {static_cast<unsigned char>(d >> 24), static_cast<unsigned char>(d >> 16),
                           static_cast<unsigned char>(d >> 8), static_cast<unsigned char>(d)};
    f.write(reinterpret_cast<char*>(be), 4);
  }
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size()));
}

// --- dataset spec + minibatching

struct DatasetSpec {
  enum class Kind { SwissRoll2d, SwissRoll3d, GaussianMixture, IdxFile };
  Kind kind = Kind::SwissRoll3d;
  int64_t n = 5000;
  double noise = 0.0;
  uint64_t seed = 0;
  bool normalize = false;  // per-coordinate min-max map onto [-1, 1]
  std::string idx_path;
  std::vector<std::vector<double>> mixture_means;
  std::vector<double> mixture_weights;
  double mixture_sigma = 0.05;
};

template <typename T>
Tensor<T> materialize(const DatasetSpec& s) {
  require(s.n > 0, "dataset: n must be positive");
  require(s.noise >= 0, "dataset: noise must be nonnegative");
  Tensor<T> x;
  switch (s.kind) {
    case DatasetSpec::Kind::SwissRoll2d:
      x = sample_swiss_roll<T>(s.n, 2, s.noise, s.seed);
      break;
    case DatasetSpec::Kind::SwissRoll3d:
      x = sample_swiss_roll<T>(s.n, 3, s.noise, s.seed);
      break;
    case DatasetSpec::Kind::GaussianMixture:
      x = sample_gaussian_mixture<T>(s.n, s.mixture_means, s.mixture_weights, s.mixture_sigma,
                                     s.seed);
      break;
    case DatasetSpec::Kind::IdxFile: {
      auto loaded = load_idx(s.idx_path);
      require(loaded.shape[0] >= s.n, "dataset: idx file has " + std::to_string(loaded.shape[0]) +
                                          " rows, config asks for " + std::to_string(s.n));
      x = Tensor<T>({s.n, loaded.shape[1]});
      for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(loaded[i]);
      break;
    }
  }
  if (s.normalize) {
    for (int64_t j = 0; j < x.cols(); ++j) {
      T lo = x.at(0, j), hi = x.at(0, j);
      for (int64_t i = 1; i < x.rows(); ++i) {
        lo = std::min(lo, x.at(i, j));
        hi = std::max(hi, x.at(i, j));
      }
      T span = hi - lo;
      if (span <= T(0)) span = T(1);
      for (int64_t i = 0; i < x.rows(); ++i)
        x.at(i, j) = T(2) * (x.at(i, j) - lo) / span - T(1);
    }
  }
  return x;
}

// Epoch-wise shuffled minibatches, last short batch dropped (latent BN needs a
// constant batch size). Each epoch's permutation is keyed by (seed, epoch), so
// the iterator's position (epoch, cursor) is its entire state — resume just
// re-derives the permutation.
template <typename T>
class BatchIterator {
 public:
  BatchIterator(Tensor<T> dataset, int64_t batch, uint64_t seed)
      : data_(std::move(dataset)), batch_(batch), seed_(seed) {
    require(data_.rank() == 2 && data_.rows() > 0, "batch iterator: need a non-empty dataset");
    require(batch >= 1 && batch <= data_.rows(),
            "batch iterator: batch size " + std::to_string(batch) + " exceeds dataset size " +
                std::to_string(data_.rows()));
    reshuffle();
  }

  Tensor<T> next_batch() {
    if (cursor_ + batch_ > data_.rows()) {
      ++epoch_;
      cursor_ = 0;
      reshuffle();
    }
    Tensor<T> out({batch_, data_.cols()});
    for (int64_t i = 0; i < batch_; ++i) {
      int64_t src = perm_[static_cast<size_t>(cursor_ + i)];
      for (int64_t j = 0; j < data_.cols(); ++j) out.at(i, j) = data_.at(src, j);
    }
    cursor_ += batch_;
    return out;
  }

  int64_t epoch() const { return epoch_; }
  int64_t cursor() const { return cursor_; }
  int64_t batches_per_epoch() const { return data_.rows() / batch_; }

  void set_position(int64_t epoch, int64_t cursor) {
    require(cursor >= 0 && cursor % batch_ == 0 && cursor <= data_.rows(),
            "batch iterator: bad cursor");
    epoch_ = epoch;
    cursor_ = cursor;
    reshuffle();
  }

 private:
  void reshuffle() {
    perm_.resize(static_cast<size_t>(data_.rows()));
    for (int64_t i = 0; i < data_.rows(); ++i) perm_[static_cast<size_t>(i)] = i;
    Rng rng(seed_, "epoch-shuffle", static_cast<uint64_t>(epoch_));
    rng.shuffle(perm_);
  }

  Tensor<T> data_;
  int64_t batch_;
  uint64_t seed_;
  int64_t epoch_ = 0;
  int64_t cursor_ = 0;
  std::vector<int64_t> perm_;
};

}  // namespace lm::data
