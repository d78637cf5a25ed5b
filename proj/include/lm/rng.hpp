#pragma once

#include <cstdint>
#include <string_view>

#include "lm/tensor.hpp"

namespace lm {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

// Counter-based generator: the state is exactly (key, counter), and the key is
// a pure function of (seed, purpose, stream). Re-creating the generator with
// the same triple replays the same sequence, which is what makes mid-run
// resume bit-exact: every consumer keys its stream by (seed, name, step).
class Rng {
 public:
  Rng(uint64_t seed, std::string_view purpose, uint64_t stream = 0)
      : key_(splitmix64(splitmix64(seed ^ fnv1a64(purpose)) ^ stream)), counter_(0) {}

  Rng(uint64_t raw_key, uint64_t counter) : key_(raw_key), counter_(counter) {}

  uint64_t next_u64() { return splitmix64(key_ + 0x632be59bd9b4e019ull * ++counter_); }

  // [0,1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Box-Muller; consumes two draws per call so the state stays a plain counter.
  double normal() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0,1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  int64_t below(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

  template <typename T>
  void fill_uniform(Tensor<T>& t, double a, double b) {
    for (auto& v : t.data) v = static_cast<T>(uniform(a, b));
  }

  template <typename T>
  void fill_normal(Tensor<T>& t, double mean = 0.0, double stddev = 1.0) {
    for (auto& v : t.data) v = static_cast<T>(mean + stddev * normal());
  }

  template <typename I>
  void shuffle(std::vector<I>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i)
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(below(i + 1))]);
  }

  uint64_t key() const { return key_; }
  uint64_t counter() const { return counter_; }
  void set_counter(uint64_t c) { counter_ = c; }

 private:
  uint64_t key_;
  uint64_t counter_;
};

}  // namespace lm
