#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lm {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor. Rank is 1 or 2 everywhere in this codebase;
// dims may be zero (empty batches are legal).
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(Shape s) : shape(std::move(s)) {
    validate_shape();
    data.assign(static_cast<size_t>(shape_numel(shape)), T(0));
  }

  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    validate_shape();
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      throw std::invalid_argument("tensor: data size " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
  }

  void validate_shape() const {
    if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
    for (int64_t d : shape)
      if (d < 0) throw std::invalid_argument("tensor: negative dim in shape " + shape_str(shape));
  }

  int64_t numel() const { return shape_numel(shape); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  int64_t rows() const { return shape.at(0); }
  int64_t cols() const { return rank() == 1 ? int64_t(1) : shape.at(1); }

  T& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols() + j)]; }
  const T& at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols() + j)]; }
  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> d(data.size());
    for (size_t i = 0; i < data.size(); ++i) d[i] = static_cast<U>(data[i]);
    return Tensor<U>(shape, std::move(d));
  }
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace lm
