#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "lm/rng.hpp"
#include "lm/tape.hpp"
#include "lm/tensor.hpp"

namespace lm::nn {

enum class Act { Identity, Relu, LeakyRelu, Tanh, Sigmoid };

template <typename T>
struct Mlp {
  struct Layer {
    Tensor<T> w;  // [in x out]
    Tensor<T> b;  // [out]
    Act act;
  };
  std::vector<Layer> layers;

  int64_t in_dim() const { return layers.front().w.shape[0]; }
  int64_t out_dim() const { return layers.back().w.shape[1]; }

  std::vector<Tensor<T>*> params() {
    std::vector<Tensor<T>*> p;
    for (auto& l : layers) {
      p.push_back(&l.w);
      p.push_back(&l.b);
    }
    return p;
  }
  std::vector<const Tensor<T>*> params() const {
    std::vector<const Tensor<T>*> p;
    for (const auto& l : layers) {
      p.push_back(&l.w);
      p.push_back(&l.b);
    }
    return p;
  }

  template <typename U>
  Mlp<U> cast() const {
    Mlp<U> out;
    for (const auto& l : layers)
      out.layers.push_back({l.w.template cast<U>(), l.b.template cast<U>(), l.act});
    return out;
  }
};

// Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases. `name` keys the
// RNG stream so distinct networks under one seed don't share parameters.
template <typename T>
Mlp<T> init_mlp(const std::vector<int64_t>& dims, const std::vector<Act>& acts, uint64_t seed,
                std::string_view name = "mlp") {
  require(dims.size() >= 2, "init_mlp: need at least input and output dims");
  require(acts.size() == dims.size() - 1, "init_mlp: one activation per layer required");
  for (int64_t d : dims)
    require(d > 0, "init_mlp: non-positive dimension " + std::to_string(d));

  Mlp<T> net;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    typename Mlp<T>::Layer l{Tensor<T>({dims[i], dims[i + 1]}), Tensor<T>({dims[i + 1]}), acts[i]};
    double bound = std::sqrt(6.0 / static_cast<double>(dims[i]));
    Rng rng(seed, std::string(name) + "/w", i);
    rng.fill_uniform(l.w, -bound, bound);
    net.layers.push_back(std::move(l));
  }
  return net;
}

// Parameter leaves for one network placed on a tape, in params() order.
template <typename T>
struct MlpOnTape {
  const Mlp<T>* net = nullptr;
  std::vector<NodeId> w, b;

  std::vector<NodeId> param_ids() const {
    std::vector<NodeId> ids;
    for (size_t i = 0; i < w.size(); ++i) {
      ids.push_back(w[i]);
      ids.push_back(b[i]);
    }
    return ids;
  }
};

template <typename T>
MlpOnTape<T> place(Tape<T>& t, const Mlp<T>& net) {
  MlpOnTape<T> h;
  h.net = &net;
  for (const auto& l : net.layers) {
    h.w.push_back(t.leaf(l.w));
    h.b.push_back(t.leaf(l.b));
  }
  return h;
}

template <typename T>
NodeId apply_act(Tape<T>& t, NodeId x, Act a, T leaky_slope) {
  switch (a) {
    case Act::Identity: return x;
    case Act::Relu: return t.relu(x);
    case Act::LeakyRelu: return t.leaky_relu(x, leaky_slope);
    case Act::Tanh: return t.tanh_(x);
    case Act::Sigmoid: return t.sigmoid(x);
  }
  require(false, "apply_act: bad kind");
  return -1;
}

template <typename T>
NodeId forward(Tape<T>& t, const MlpOnTape<T>& h, NodeId x, T leaky_slope = T(0.2)) {
  require(t.value(x).rank() == 2 && t.value(x).shape[1] == h.net->in_dim(),
          "mlp forward: batch width " + shape_str(t.value(x).shape) + " does not match input dim " +
              std::to_string(h.net->in_dim()));
  NodeId cur = x;
  for (size_t i = 0; i < h.w.size(); ++i) {
    cur = t.add_bias(t.matmul(cur, h.w[i]), h.b[i]);
    cur = apply_act(t, cur, h.net->layers[i].act, leaky_slope);
  }
  return cur;
}

// Tape-free forward for evaluation paths (no gradients, no node bookkeeping).
template <typename T>
Tensor<T> infer(const Mlp<T>& net, const Tensor<T>& x, T leaky_slope = T(0.2)) {
  require(x.rank() == 2 && x.shape[1] == net.in_dim(),
          "mlp infer: batch width " + shape_str(x.shape) + " does not match input dim " +
              std::to_string(net.in_dim()));
  Tensor<T> cur = x;
  for (const auto& l : net.layers) {
    Tensor<T> nxt({cur.shape[0], l.w.shape[1]});
    if (nxt.numel() > 0)
      detail::gemm<T>(false, false, cur.shape[0], l.w.shape[1], cur.shape[1], T(1),
                      cur.data.data(), cur.shape[1], l.w.data.data(), l.w.shape[1], T(0),
                      nxt.data.data(), l.w.shape[1]);
    for (int64_t i = 0; i < nxt.shape[0]; ++i)
      for (int64_t j = 0; j < nxt.shape[1]; ++j) nxt.at(i, j) += l.b[j];
    switch (l.act) {
      case Act::Identity: break;
      case Act::Relu:
        for (auto& v : nxt.data) v = v > T(0) ? v : T(0);
        break;
      case Act::LeakyRelu:
        for (auto& v : nxt.data) v = v > T(0) ? v : leaky_slope * v;
        break;
      case Act::Tanh:
        for (auto& v : nxt.data) v = std::tanh(v);
        break;
      case Act::Sigmoid:
        for (auto& v : nxt.data) v = T(1) / (T(1) + std::exp(-v));
        break;
    }
    cur = std::move(nxt);
  }
  return cur;
}

// Adam with bias correction; epsilon sits outside the square root.
template <typename T>
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads) {
    require(params.size() == grads.size(), "adam: params/grads count mismatch");
    if (m_.empty()) {
      for (auto* p : params) {
        m_.push_back(Tensor<T>::zeros(p->shape));
        v_.push_back(Tensor<T>::zeros(p->shape));
      }
    }
    require(params.size() == m_.size(), "adam: parameter set changed between steps");
    ++t_;
    const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(b1_, t_)));
    const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(b2_, t_)));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = *params[i];
      const Tensor<T>& g = *grads[i];
      require(p.shape == g.shape && p.shape == m_[i].shape,
              "adam: shape mismatch at parameter " + std::to_string(i));
      for (size_t k = 0; k < p.data.size(); ++k) {
        T gk = g.data[k];
        m_[i].data[k] = static_cast<T>(b1_) * m_[i].data[k] + static_cast<T>(1.0 - b1_) * gk;
        v_[i].data[k] = static_cast<T>(b2_) * v_[i].data[k] + static_cast<T>(1.0 - b2_) * gk * gk;
        T mhat = m_[i].data[k] * c1;
        T vhat = v_[i].data[k] * c2;
        p.data[k] -= static_cast<T>(lr_) * mhat / (std::sqrt(vhat) + static_cast<T>(eps_));
      }
    }
  }

  int64_t t() const { return t_; }
  double lr() const { return lr_; }
  std::vector<Tensor<T>>& moment1() { return m_; }
  std::vector<Tensor<T>>& moment2() { return v_; }
  const std::vector<Tensor<T>>& moment1() const { return m_; }
  const std::vector<Tensor<T>>& moment2() const { return v_; }
  void restore(int64_t t, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  double lr_, b1_, b2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace lm::nn
