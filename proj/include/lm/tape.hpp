#pragma once

#include <cblas.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "lm/tensor.hpp"

namespace lm {

using NodeId = int32_t;

enum class Op {
  Leaf,
  Add,
  Sub,
  Mul,
  Scale,
  AddConst,
  AddBias,
  MatMul,
  Relu,
  LeakyRelu,
  Tanh,
  Sigmoid,
  Exp,
  Log,
  Clamp,
  MeanAll,
  VarAll,
  SumSq,
  RowSum,
  Lerp,
  BatchNormBatch,
  BatchNormGiven,
  BatchNormShared,
  SliceCols,
  ReverseRows,
};

namespace detail {

template <typename T>
void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, T alpha, const T* a, int64_t lda,
          const T* b, int64_t ldb, T beta, T* c, int64_t ldc);

template <>
inline void gemm<float>(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
                        const float* a, int64_t lda, const float* b, int64_t ldb, float beta,
                        float* c, int64_t ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

template <>
inline void gemm<double>(bool ta, bool tb, int64_t m, int64_t n, int64_t k, double alpha,
                         const double* a, int64_t lda, const double* b, int64_t ldb, double beta,
                         double* c, int64_t ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

}  // namespace detail

// Reference kernel, kept independent of BLAS so tests can cross-check.
template <typename T>
Tensor<T> naive_matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.shape[1] == b.shape[0],
          "matmul: incompatible shapes " + shape_str(a.shape) + " and " + shape_str(b.shape));
  Tensor<T> c({a.shape[0], b.shape[1]});
  for (int64_t i = 0; i < a.shape[0]; ++i)
    for (int64_t k = 0; k < a.shape[1]; ++k) {
      T aik = a.at(i, k);
      for (int64_t j = 0; j < b.shape[1]; ++j) c.at(i, j) += aik * b.at(k, j);
    }
  return c;
}

// Reverse-mode tape over rank-1/2 tensors. Nodes are appended in execution
// order, so ids already form a topological order; backward() is a single
// reverse sweep from the (scalar) root. Gradient buffers start zeroed and all
// rules accumulate, so shared subexpressions combine correctly.
template <typename T>
class Tape {
 public:
  struct Node {
    Op op = Op::Leaf;
    NodeId a = -1, b = -1, c = -1;
    T alpha = T(0), beta = T(0);  // op constants (scale factor, clamp bounds, bn eps, ...)
    int64_t i0 = 0, i1 = 0;       // integer attributes (column slice range)
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<T> bn_mean, bn_var, bn_inv_std;  // per-column stats for batch-norm nodes
  };

  NodeId leaf(Tensor<T> v) { return push(Op::Leaf, std::move(v)); }

  NodeId add(NodeId x, NodeId y) { return binary_same(Op::Add, x, y); }
  NodeId sub(NodeId x, NodeId y) { return binary_same(Op::Sub, x, y); }
  NodeId mul(NodeId x, NodeId y) { return binary_same(Op::Mul, x, y); }

  NodeId scale(NodeId x, T c) {
    Tensor<T> out = val(x);
    for (auto& v : out.data) v *= c;
    return push(Op::Scale, std::move(out), x, -1, -1, c);
  }

  NodeId add_const(NodeId x, T c) {
    Tensor<T> out = val(x);
    for (auto& v : out.data) v += c;
    return push(Op::AddConst, std::move(out), x, -1, -1, c);
  }

  // [B x d] + [d], broadcast down the batch axis (the only broadcast we allow).
  NodeId add_bias(NodeId x, NodeId bias) {
    const Tensor<T>&m = val(x), &bv = val(bias);
    require(m.rank() == 2 && bv.rank() == 1 && bv.shape[0] == m.shape[1],
            "add_bias: shapes " + shape_str(m.shape) + " and " + shape_str(bv.shape));
    Tensor<T> out = m;
    for (int64_t i = 0; i < m.shape[0]; ++i)
      for (int64_t j = 0; j < m.shape[1]; ++j) out.at(i, j) += bv[j];
    return push(Op::AddBias, std::move(out), x, bias);
  }

  NodeId matmul(NodeId x, NodeId y) {
    const Tensor<T>&a = val(x), &b = val(y);
    require(a.rank() == 2 && b.rank() == 2 && a.shape[1] == b.shape[0],
            "matmul: incompatible shapes " + shape_str(a.shape) + " and " + shape_str(b.shape));
    Tensor<T> out({a.shape[0], b.shape[1]});
    if (out.numel() > 0 && a.shape[1] > 0)
      detail::gemm<T>(false, false, a.shape[0], b.shape[1], a.shape[1], T(1), a.data.data(),
                      a.shape[1], b.data.data(), b.shape[1], T(0), out.data.data(), b.shape[1]);
    return push(Op::MatMul, std::move(out), x, y);
  }

  NodeId relu(NodeId x) {
    Tensor<T> out = val(x);
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return push(Op::Relu, std::move(out), x);
  }

  NodeId leaky_relu(NodeId x, T slope) {
    Tensor<T> out = val(x);
    for (auto& v : out.data) v = v > T(0) ? v : slope * v;
    return push(Op::LeakyRelu, std::move(out), x, -1, -1, slope);
  }

  NodeId tanh_(NodeId x) {
    Tensor<T> out = val(x);
    for (auto& v : out.data) v = std::tanh(v);
    return push(Op::Tanh, std::move(out), x);
  }

  NodeId sigmoid(NodeId x) {
    Tensor<T> out = val(x);
    for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    return push(Op::Sigmoid, std::move(out), x);
  }

  NodeId exp_(NodeId x) {
    Tensor<T> out = val(x);
    for (auto& v : out.data) v = std::exp(v);
    return push(Op::Exp, std::move(out), x);
  }

  NodeId log_(NodeId x) {
    Tensor<T> out = val(x);
    for (auto& v : out.data) v = std::log(v);
    return push(Op::Log, std::move(out), x);
  }

  NodeId clamp(NodeId x, T lo, T hi) {
    Tensor<T> out = val(x);
    for (auto& v : out.data) v = v < lo ? lo : (v > hi ? hi : v);
    return push(Op::Clamp, std::move(out), x, -1, -1, lo, hi);
  }

  NodeId mean_all(NodeId x) {
    const Tensor<T>& a = val(x);
    require(a.numel() > 0, "mean_all: empty tensor");
    double s = 0;
    for (T v : a.data) s += static_cast<double>(v);
    return push(Op::MeanAll, Tensor<T>::scalar(static_cast<T>(s / a.numel())), x);
  }

  // Population variance over every entry.
  NodeId var_all(NodeId x) {
    const Tensor<T>& a = val(x);
    require(a.numel() > 0, "var_all: empty tensor");
    double m = 0;
    for (T v : a.data) m += static_cast<double>(v);
    m /= a.numel();
    double s = 0;
    for (T v : a.data) s += (v - m) * (v - m);
    auto id = push(Op::VarAll, Tensor<T>::scalar(static_cast<T>(s / a.numel())), x);
    nodes_[id].alpha = static_cast<T>(m);
    return id;
  }

  NodeId sum_sq(NodeId x) {
    const Tensor<T>& a = val(x);
    double s = 0;
    for (T v : a.data) s += static_cast<double>(v) * v;
    return push(Op::SumSq, Tensor<T>::scalar(static_cast<T>(s)), x);
  }

  // [B x d] -> [B x 1]
  NodeId row_sum(NodeId x) {
    const Tensor<T>& a = val(x);
    require(a.rank() == 2, "row_sum: need rank 2, got " + shape_str(a.shape));
    Tensor<T> out({a.shape[0], 1});
    for (int64_t i = 0; i < a.shape[0]; ++i) {
      double s = 0;
      for (int64_t j = 0; j < a.shape[1]; ++j) s += static_cast<double>(a.at(i, j));
      out.at(i, 0) = static_cast<T>(s);
    }
    return push(Op::RowSum, std::move(out), x);
  }

  // Per-row convex blend: out[i,:] = mu[i]*a[i,:] + (1-mu[i])*b[i,:], mu is [B x 1].
  NodeId lerp(NodeId x, NodeId y, NodeId mu) {
    const Tensor<T>&a = val(x), &b = val(y), &m = val(mu);
    require(a.rank() == 2 && a.shape == b.shape, "lerp: endpoint shapes differ");
    require(m.rank() == 2 && m.shape[0] == a.shape[0] && m.shape[1] == 1,
            "lerp: weights must be [B x 1], got " + shape_str(m.shape));
    Tensor<T> out(a.shape);
    for (int64_t i = 0; i < a.shape[0]; ++i) {
      T w = m.at(i, 0);
      for (int64_t j = 0; j < a.shape[1]; ++j)
        out.at(i, j) = w * a.at(i, j) + (T(1) - w) * b.at(i, j);
    }
    return push(Op::Lerp, std::move(out), x, y, mu);
  }

  // Normalize each column by this batch's own statistics (population variance,
  // no learned affine). The stats used are retrievable for running averages.
  NodeId batch_norm(NodeId x, T eps) {
    const Tensor<T>& a = val(x);
    require(a.rank() == 2 && a.shape[0] > 0, "batch_norm: need non-empty rank-2 input");
    int64_t B = a.shape[0], d = a.shape[1];
    std::vector<T> mean(static_cast<size_t>(d)), var(static_cast<size_t>(d)),
        inv(static_cast<size_t>(d));
    for (int64_t j = 0; j < d; ++j) {
      double m = 0;
      for (int64_t i = 0; i < B; ++i) m += static_cast<double>(a.at(i, j));
      m /= B;
      double s = 0;
      for (int64_t i = 0; i < B; ++i) {
        double c = a.at(i, j) - m;
        s += c * c;
      }
      s /= B;
      mean[j] = static_cast<T>(m);
      var[j] = static_cast<T>(s);
      inv[j] = static_cast<T>(1.0 / std::sqrt(s + static_cast<double>(eps)));
    }
    Tensor<T> out(a.shape);
    for (int64_t i = 0; i < B; ++i)
      for (int64_t j = 0; j < d; ++j) out.at(i, j) = (a.at(i, j) - mean[j]) * inv[j];
    auto id = push(Op::BatchNormBatch, std::move(out), x, -1, -1, eps);
    nodes_[id].bn_mean = std::move(mean);
    nodes_[id].bn_var = std::move(var);
    nodes_[id].bn_inv_std = std::move(inv);
    return id;
  }

  // Normalize with externally supplied statistics (running averages at eval,
  // or the real batch's stats when normalizing interpolants). The stats are
  // constants as far as the gradient is concerned.
  NodeId batch_norm_given(NodeId x, const std::vector<T>& mean, const std::vector<T>& var, T eps) {
    const Tensor<T>& a = val(x);
    require(a.rank() == 2, "batch_norm_given: need rank-2 input");
    int64_t d = a.shape[1];
    require(static_cast<int64_t>(mean.size()) == d && static_cast<int64_t>(var.size()) == d,
            "batch_norm_given: stats size mismatch");
    std::vector<T> inv(static_cast<size_t>(d));
    for (int64_t j = 0; j < d; ++j)
      inv[j] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[j]) + static_cast<double>(eps)));
    Tensor<T> out(a.shape);
    for (int64_t i = 0; i < a.shape[0]; ++i)
      for (int64_t j = 0; j < d; ++j) out.at(i, j) = (a.at(i, j) - mean[j]) * inv[j];
    auto id = push(Op::BatchNormGiven, std::move(out), x, -1, -1, eps);
    nodes_[id].bn_mean = mean;
    nodes_[id].bn_var = var;
    nodes_[id].bn_inv_std = std::move(inv);
    return id;
  }

  // Normalize x column-wise by the batch statistics of src's value. Gradients
  // flow into both x and src (the statistics are differentiated exactly).
  NodeId batch_norm_shared(NodeId x, NodeId src, T eps) {
    const Tensor<T>&a = val(x), &s = val(src);
    require(a.rank() == 2 && s.rank() == 2 && a.shape[1] == s.shape[1] && s.shape[0] >= 2,
            "batch_norm_shared: need rank-2 inputs with matching width and src rows >= 2");
    const int64_t Bz = s.shape[0], d = s.shape[1];
    std::vector<T> mean(static_cast<size_t>(d)), var(static_cast<size_t>(d)),
        inv(static_cast<size_t>(d));
    for (int64_t j = 0; j < d; ++j) {
      double m = 0;
      for (int64_t i = 0; i < Bz; ++i) m += static_cast<double>(s.at(i, j));
      m /= Bz;
      double v = 0;
      for (int64_t i = 0; i < Bz; ++i) {
        double c = s.at(i, j) - m;
        v += c * c;
      }
      v /= Bz;
      mean[static_cast<size_t>(j)] = static_cast<T>(m);
      var[static_cast<size_t>(j)] = static_cast<T>(v);
      inv[static_cast<size_t>(j)] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
    }
    Tensor<T> out(a.shape);
    for (int64_t i = 0; i < a.shape[0]; ++i)
      for (int64_t j = 0; j < d; ++j)
        out.at(i, j) = (a.at(i, j) - mean[static_cast<size_t>(j)]) * inv[static_cast<size_t>(j)];
    auto id = push(Op::BatchNormShared, std::move(out), x, src, -1, eps);
    nodes_[id].bn_mean = std::move(mean);
    nodes_[id].bn_var = std::move(var);
    nodes_[id].bn_inv_std = std::move(inv);
    return id;
  }

  NodeId slice_cols(NodeId x, int64_t from, int64_t to) {
    const Tensor<T>& a = val(x);
    require(a.rank() == 2 && from >= 0 && from < to && to <= a.shape[1],
            "slice_cols: bad range on " + shape_str(a.shape));
    Tensor<T> out({a.shape[0], to - from});
    for (int64_t i = 0; i < a.shape[0]; ++i)
      for (int64_t j = from; j < to; ++j) out.at(i, j - from) = a.at(i, j);
    auto id = push(Op::SliceCols, std::move(out), x);
    nodes_[id].i0 = from;
    nodes_[id].i1 = to;
    return id;
  }

  NodeId reverse_rows(NodeId x) {
    const Tensor<T>& a = val(x);
    require(a.rank() == 2, "reverse_rows: need rank 2");
    Tensor<T> out(a.shape);
    for (int64_t i = 0; i < a.shape[0]; ++i)
      for (int64_t j = 0; j < a.shape[1]; ++j) out.at(i, j) = a.at(a.shape[0] - 1 - i, j);
    return push(Op::ReverseRows, std::move(out), x);
  }

  const Tensor<T>& value(NodeId id) const { return nodes_[check(id)].value; }

  // Nodes that don't feed the root keep a zero gradient, per the backward contract.
  const Tensor<T>& grad(NodeId id) {
    require(backward_run_, "grad: backward() has not run");
    Node& n = nodes_[check(id)];
    if (n.grad.data.empty() && n.value.numel() > 0) n.grad = Tensor<T>::zeros(n.value.shape);
    if (n.grad.shape.empty()) n.grad.shape = n.value.shape;
    return n.grad;
  }

  const std::vector<T>& bn_batch_mean(NodeId id) const { return nodes_[check(id)].bn_mean; }
  const std::vector<T>& bn_batch_var(NodeId id) const { return nodes_[check(id)].bn_var; }

  size_t size() const { return nodes_.size(); }

  bool value_finite(NodeId id) const { return nodes_[check(id)].value.all_finite(); }

  void backward(NodeId root) {
    Node& r = nodes_[check(root)];
    require(r.value.numel() == 1, "backward: root must be scalar, got " + shape_str(r.value.shape));
    for (auto& n : nodes_) n.grad = Tensor<T>();
    r.grad = Tensor<T>::scalar(T(1));
    r.grad.shape = r.value.shape;  // keep {1} vs {1,1} consistent with the value
    for (NodeId id = root; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.data.empty()) continue;  // not on a path to the root
      step_back(n);
    }
    backward_run_ = true;
  }

 private:
  std::vector<Node> nodes_;
  bool backward_run_ = false;

  NodeId check(NodeId id) const {
    require(id >= 0 && static_cast<size_t>(id) < nodes_.size(), "tape: bad node id");
    return id;
  }

  const Tensor<T>& val(NodeId id) const { return nodes_[check(id)].value; }

  NodeId push(Op op, Tensor<T> v, NodeId a = -1, NodeId b = -1, NodeId c = -1, T alpha = T(0),
              T beta = T(0)) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.c = c;
    n.alpha = alpha;
    n.beta = beta;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId binary_same(Op op, NodeId x, NodeId y) {
    const Tensor<T>&a = val(x), &b = val(y);
    require(a.shape == b.shape, "elementwise op: shape mismatch " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    Tensor<T> out = a;
    switch (op) {
      case Op::Add:
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
        break;
      case Op::Sub:
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
        break;
      case Op::Mul:
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
        break;
      default:
        require(false, "binary_same: bad op");
    }
    return push(op, std::move(out), x, y);
  }

  Tensor<T>& grad_slot(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.data.empty() && n.value.numel() > 0) n.grad = Tensor<T>::zeros(n.value.shape);
    if (n.grad.data.empty()) n.grad.shape = n.value.shape;
    return n.grad;
  }

  void step_back(Node& n) {
    const Tensor<T>& g = n.grad;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Add: {
        auto &ga = grad_slot(n.a), &gb = grad_slot(n.b);
        for (size_t i = 0; i < g.data.size(); ++i) {
          ga.data[i] += g.data[i];
          gb.data[i] += g.data[i];
        }
        break;
      }
      case Op::Sub: {
        auto &ga = grad_slot(n.a), &gb = grad_slot(n.b);
        for (size_t i = 0; i < g.data.size(); ++i) {
          ga.data[i] += g.data[i];
          gb.data[i] -= g.data[i];
        }
        break;
      }
      case Op::Mul: {
        auto &ga = grad_slot(n.a), &gb = grad_slot(n.b);
        const auto &va = nodes_[n.a].value, &vb = nodes_[n.b].value;
        for (size_t i = 0; i < g.data.size(); ++i) {
          ga.data[i] += g.data[i] * vb.data[i];
          gb.data[i] += g.data[i] * va.data[i];
        }
        break;
      }
      case Op::Scale: {
        auto& ga = grad_slot(n.a);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * n.alpha;
        break;
      }
      case Op::AddConst: {
        auto& ga = grad_slot(n.a);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
        break;
      }
      case Op::AddBias: {
        auto &ga = grad_slot(n.a), &gb = grad_slot(n.b);
        int64_t B = n.value.shape[0], d = n.value.shape[1];
        for (int64_t i = 0; i < B; ++i)
          for (int64_t j = 0; j < d; ++j) {
            ga.at(i, j) += g.at(i, j);
            gb[j] += g.at(i, j);
          }
        break;
      }
      case Op::MatMul: {
        const auto &va = nodes_[n.a].value, &vb = nodes_[n.b].value;
        auto &ga = grad_slot(n.a), &gb = grad_slot(n.b);
        int64_t m = va.shape[0], k = va.shape[1], p = vb.shape[1];
        if (m > 0 && k > 0 && p > 0) {
          // dA += G * B^T ; dB += A^T * G
          detail::gemm<T>(false, true, m, k, p, T(1), g.data.data(), p, vb.data.data(), p, T(1),
                          ga.data.data(), k);
          detail::gemm<T>(true, false, k, p, m, T(1), va.data.data(), k, g.data.data(), p, T(1),
                          gb.data.data(), p);
        }
        break;
      }
      case Op::Relu: {
        auto& ga = grad_slot(n.a);
        const auto& va = nodes_[n.a].value;
        for (size_t i = 0; i < g.data.size(); ++i)
          if (va.data[i] > T(0)) ga.data[i] += g.data[i];
        break;
      }
      case Op::LeakyRelu: {
        auto& ga = grad_slot(n.a);
        const auto& va = nodes_[n.a].value;
        for (size_t i = 0; i < g.data.size(); ++i)
          ga.data[i] += g.data[i] * (va.data[i] > T(0) ? T(1) : n.alpha);
        break;
      }
      case Op::Tanh: {
        auto& ga = grad_slot(n.a);
        for (size_t i = 0; i < g.data.size(); ++i)
          ga.data[i] += g.data[i] * (T(1) - n.value.data[i] * n.value.data[i]);
        break;
      }
      case Op::Sigmoid: {
        auto& ga = grad_slot(n.a);
        for (size_t i = 0; i < g.data.size(); ++i)
          ga.data[i] += g.data[i] * n.value.data[i] * (T(1) - n.value.data[i]);
        break;
      }
      case Op::Exp: {
        auto& ga = grad_slot(n.a);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * n.value.data[i];
        break;
      }
      case Op::Log: {
        auto& ga = grad_slot(n.a);
        const auto& va = nodes_[n.a].value;
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] / va.data[i];
        break;
      }
      case Op::Clamp: {
        auto& ga = grad_slot(n.a);
        const auto& va = nodes_[n.a].value;
        for (size_t i = 0; i < g.data.size(); ++i)
          if (va.data[i] >= n.alpha && va.data[i] <= n.beta) ga.data[i] += g.data[i];
        break;
      }
      case Op::MeanAll: {
        auto& ga = grad_slot(n.a);
        T s = g.data[0] / static_cast<T>(nodes_[n.a].value.numel());
        for (auto& v : ga.data) v += s;
        break;
      }
      case Op::VarAll: {
        auto& ga = grad_slot(n.a);
        const auto& va = nodes_[n.a].value;
        T c = g.data[0] * T(2) / static_cast<T>(va.numel());
        for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += c * (va.data[i] - n.alpha);
        break;
      }
      case Op::SumSq: {
        auto& ga = grad_slot(n.a);
        const auto& va = nodes_[n.a].value;
        for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g.data[0] * T(2) * va.data[i];
        break;
      }
      case Op::RowSum: {
        auto& ga = grad_slot(n.a);
        int64_t B = ga.shape[0], d = ga.shape[1];
        for (int64_t i = 0; i < B; ++i)
          for (int64_t j = 0; j < d; ++j) ga.at(i, j) += g.at(i, 0);
        break;
      }
      case Op::Lerp: {
        auto &ga = grad_slot(n.a), &gb = grad_slot(n.b), &gm = grad_slot(n.c);
        const auto &va = nodes_[n.a].value, &vb = nodes_[n.b].value, &vm = nodes_[n.c].value;
        int64_t B = g.shape[0], d = g.shape[1];
        for (int64_t i = 0; i < B; ++i) {
          T w = vm.at(i, 0);
          for (int64_t j = 0; j < d; ++j) {
            ga.at(i, j) += g.at(i, j) * w;
            gb.at(i, j) += g.at(i, j) * (T(1) - w);
            gm.at(i, 0) += g.at(i, j) * (va.at(i, j) - vb.at(i, j));
          }
        }
        break;
      }
      case Op::BatchNormBatch: {
        // dx_i = s * (g_i - mean(g) - xhat_i * mean(g .* xhat)), per column
        auto& ga = grad_slot(n.a);
        int64_t B = g.shape[0], d = g.shape[1];
        for (int64_t j = 0; j < d; ++j) {
          double mg = 0, mgx = 0;
          for (int64_t i = 0; i < B; ++i) {
            mg += static_cast<double>(g.at(i, j));
            mgx += static_cast<double>(g.at(i, j)) * n.value.at(i, j);
          }
          mg /= B;
          mgx /= B;
          T s = n.bn_inv_std[static_cast<size_t>(j)];
          for (int64_t i = 0; i < B; ++i)
            ga.at(i, j) += s * static_cast<T>(g.at(i, j) - mg - n.value.at(i, j) * mgx);
        }
        break;
      }
      case Op::BatchNormGiven: {
        auto& ga = grad_slot(n.a);
        int64_t B = g.shape[0], d = g.shape[1];
        for (int64_t i = 0; i < B; ++i)
          for (int64_t j = 0; j < d; ++j)
            ga.at(i, j) += g.at(i, j) * n.bn_inv_std[static_cast<size_t>(j)];
        break;
      }
      case Op::BatchNormShared: {
        // dx_ij = g_ij / sigma_j
        // dsrc_kj = -(S1_j + zhat_kj * S2_j) / (Bz * sigma_j)
        //   with S1 = sum_i g_ij, S2 = sum_i g_ij * out_ij, zhat the normalized src
        auto& gx = grad_slot(n.a);
        auto& gz = grad_slot(n.b);
        const auto& zv = nodes_[n.b].value;
        const int64_t Bx = g.shape[0], Bz = zv.shape[0], d = g.shape[1];
        for (int64_t j = 0; j < d; ++j) {
          const T inv = n.bn_inv_std[static_cast<size_t>(j)];
          const T m = n.bn_mean[static_cast<size_t>(j)];
          double s1 = 0, s2 = 0;
          for (int64_t i = 0; i < Bx; ++i) {
            s1 += static_cast<double>(g.at(i, j));
            s2 += static_cast<double>(g.at(i, j)) * n.value.at(i, j);
            gx.at(i, j) += g.at(i, j) * inv;
          }
          for (int64_t k = 0; k < Bz; ++k) {
            T zh = (zv.at(k, j) - m) * inv;
            gz.at(k, j) -= inv * static_cast<T>((s1 + zh * s2) / Bz);
          }
        }
        break;
      }
      case Op::SliceCols: {
        auto& ga = grad_slot(n.a);
        int64_t B = g.shape[0];
        for (int64_t i = 0; i < B; ++i)
          for (int64_t j = n.i0; j < n.i1; ++j) ga.at(i, j) += g.at(i, j - n.i0);
        break;
      }
      case Op::ReverseRows: {
        auto& ga = grad_slot(n.a);
        int64_t B = g.shape[0], d = g.shape[1];
        for (int64_t i = 0; i < B; ++i)
          for (int64_t j = 0; j < d; ++j) ga.at(B - 1 - i, j) += g.at(i, j);
        break;
      }
    }
  }
};

}  // namespace lm
