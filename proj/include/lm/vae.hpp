#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "lm/data.hpp"
#include "lm/nn.hpp"
#include "lm/tape.hpp"

namespace lm::vae {

inline constexpr double kLogVarLo = -10.0;
inline constexpr double kLogVarHi = 10.0;

// Encoder emits [mu || log-variance]; sigma = exp(logvar / 2) is positive by
// construction, with logvar clamped to [-10, 10] for numerical safety.
template <typename T>
struct VaeBundle {
  nn::Mlp<T> enc;  // d_data -> 2 * d_z
  nn::Mlp<T> dec;  // d_z -> d_data
  int64_t d_z = 0;
  double beta = 1.0;

  void check_dims() const {
    require(d_z >= 1, "vae bundle: d_z must be positive");
    require(enc.out_dim() == 2 * d_z, "vae bundle: encoder must emit 2*d_z columns, got " +
                                          std::to_string(enc.out_dim()));
    require(dec.in_dim() == d_z, "vae bundle: decoder input dim " +
                                     std::to_string(dec.in_dim()) + " != d_z");
    require(enc.in_dim() == dec.out_dim(), "vae bundle: encoder input and decoder output differ");
  }
};

template <typename T>
VaeBundle<T> make_vae(int64_t d_data, int64_t d_z, double beta, uint64_t seed, int64_t width = 32,
                      int64_t depth = 2) {
  require(depth >= 1 && width >= 1, "make_vae: bad architecture");
  std::vector<int64_t> enc_dims{d_data}, dec_dims{d_z};
  std::vector<nn::Act> enc_acts, dec_acts;
  for (int64_t i = 0; i < depth; ++i) {
    enc_dims.push_back(width);
    dec_dims.push_back(width);
    enc_acts.push_back(nn::Act::LeakyRelu);
    dec_acts.push_back(nn::Act::LeakyRelu);
  }
  enc_dims.push_back(2 * d_z);
  dec_dims.push_back(d_data);
  enc_acts.push_back(nn::Act::Identity);
  dec_acts.push_back(nn::Act::Identity);

  VaeBundle<T> b;
  b.enc = nn::init_mlp<T>(enc_dims, enc_acts, seed, "vae-enc");
  b.dec = nn::init_mlp<T>(dec_dims, dec_acts, seed, "vae-dec");
  b.d_z = d_z;
  b.beta = beta;
  b.check_dims();
  return b;
}

// Per-sample KL( N(mu, diag(exp(logvar))) || N(0, I) ), closed form.
template <typename T>
std::vector<double> kl_per_sample(const Tensor<T>& mu, const Tensor<T>& logvar) {
  require(mu.rank() == 2 && mu.shape == logvar.shape,
          "kl: mu and logvar must share a [B x d] shape, got " + shape_str(mu.shape) + " vs " +
              shape_str(logvar.shape));
  require(mu.all_finite() && logvar.all_finite(), "kl: non-finite inputs");
  std::vector<double> out(static_cast<size_t>(mu.shape[0]), 0.0);
  for (int64_t i = 0; i < mu.shape[0]; ++i) {
    double s = 0;
    for (int64_t j = 0; j < mu.shape[1]; ++j) {
      double m = mu.at(i, j), lv = logvar.at(i, j);
      s += m * m + std::exp(lv) - 1.0 - lv;
    }
    out[static_cast<size_t>(i)] = 0.5 * s;
  }
  return out;
}

// Encoder pass returning (mu, clamped logvar) without touching a tape.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> encode_stats(const VaeBundle<T>& b, const Tensor<T>& x) {
  Tensor<T> h = nn::infer(b.enc, x);
  Tensor<T> mu({x.shape[0], b.d_z}), lv({x.shape[0], b.d_z});
  for (int64_t i = 0; i < x.shape[0]; ++i)
    for (int64_t j = 0; j < b.d_z; ++j) {
      mu.at(i, j) = h.at(i, j);
      lv.at(i, j) = std::clamp(h.at(i, j + b.d_z), static_cast<T>(kLogVarLo),
                               static_cast<T>(kLogVarHi));
    }
  return {std::move(mu), std::move(lv)};
}

template <typename T>
struct VaeLossGraph {
  NodeId loss = -1;
  NodeId mse = -1;
  NodeId mean_kl = -1;
  NodeId mu = -1;
  NodeId logvar = -1;
  nn::MlpOnTape<T> enc, dec;
};

// Negative ELBO with MSE reconstruction: MSE(x, dec(mu + sigma * eps)) +
// beta * mean KL. eps is drawn from (seed, step) so a rebuild of the graph
// reuses the same noise — finite-difference checks rely on that.
template <typename T>
VaeLossGraph<T> vae_loss_graph(Tape<T>& t, const VaeBundle<T>& b, const Tensor<T>& x,
                               uint64_t seed, uint64_t step) {
  b.check_dims();
  require(x.rank() == 2 && x.shape[1] == b.enc.in_dim(),
          "vae loss: x shape " + shape_str(x.shape) + " does not match encoder input");
  const int64_t B = x.shape[0];

  VaeLossGraph<T> g;
  g.enc = nn::place(t, b.enc);
  g.dec = nn::place(t, b.dec);

  NodeId xin = t.leaf(x);
  NodeId h = nn::forward(t, g.enc, xin);
  g.mu = t.slice_cols(h, 0, b.d_z);
  g.logvar = t.clamp(t.slice_cols(h, b.d_z, 2 * b.d_z), static_cast<T>(kLogVarLo),
                     static_cast<T>(kLogVarHi));

  Tensor<T> eps({B, b.d_z});
  Rng rng(seed, "vae-eps", step);
  rng.fill_normal(eps);
  NodeId sigma = t.exp_(t.scale(g.logvar, T(0.5)));
  NodeId z = t.add(g.mu, t.mul(sigma, t.leaf(eps)));

  NodeId xh = nn::forward(t, g.dec, z);
  NodeId diff = t.sub(xh, xin);
  g.mse = t.scale(t.sum_sq(diff), T(1.0 / static_cast<double>(x.numel())));

  // per-entry mu^2 + exp(logvar) - 1 - logvar, halved and row-summed
  NodeId term = t.sub(t.add(t.mul(g.mu, g.mu), t.exp_(g.logvar)), t.add_const(g.logvar, T(1)));
  g.mean_kl = t.mean_all(t.row_sum(t.scale(term, T(0.5))));

  g.loss = t.add(g.mse, t.scale(g.mean_kl, static_cast<T>(b.beta)));
  return g;
}

template <typename T>
double vae_loss(const VaeBundle<T>& b, const Tensor<T>& x, uint64_t seed, uint64_t step = 0) {
  Tape<T> t;
  auto g = vae_loss_graph(t, b, x, seed, step);
  return static_cast<double>(t.value(g.loss)[0]);
}

// Deterministic eval pass (z = mu): reconstruction MSE plus KL statistics.
template <typename T>
struct VaeEval {
  double mse = 0;
  double max_kl = 0;
  double mean_kl = 0;
};

template <typename T>
VaeEval<T> vae_eval(const VaeBundle<T>& b, const Tensor<T>& x) {
  auto [mu, lv] = encode_stats(b, x);
  Tensor<T> xh = nn::infer(b.dec, mu);
  VaeEval<T> ev;
  double s = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    double d = static_cast<double>(xh[i]) - x[i];
    s += d * d;
  }
  ev.mse = s / x.numel();
  auto kl = kl_per_sample(mu, lv);
  for (double k : kl) {
    ev.max_kl = std::max(ev.max_kl, k);
    ev.mean_kl += k;
  }
  ev.mean_kl /= static_cast<double>(kl.size());
  return ev;
}

// One Adam step on the negative ELBO; returns the loss value, or NaN if the
// graph went non-finite (caller decides whether to abort or record).
template <typename T>
double vae_train_step(VaeBundle<T>& b, nn::Adam<T>& opt, const Tensor<T>& x, uint64_t seed,
                      uint64_t step) {
  Tape<T> t;
  auto g = vae_loss_graph(t, b, x, seed, step);
  double loss = t.value(g.loss)[0];
  if (!std::isfinite(loss)) return std::nan("");
  t.backward(g.loss);

  auto params = b.enc.params();
  auto dparams = b.dec.params();
  params.insert(params.end(), dparams.begin(), dparams.end());
  auto ids = g.enc.param_ids();
  auto dec_ids = g.dec.param_ids();
  ids.insert(ids.end(), dec_ids.begin(), dec_ids.end());
  std::vector<Tensor<T>> grads;
  grads.reserve(ids.size());
  for (NodeId id : ids) grads.push_back(t.grad(id));
  std::vector<const Tensor<T>*> gp;
  for (const auto& gr : grads) gp.push_back(&gr);
  opt.step(params, gp);
  return loss;
}

template <typename T>
bool train_vae(VaeBundle<T>& b, const Tensor<T>& X, int64_t steps, int64_t batch, double lr,
               uint64_t seed) {
  data::BatchIterator<T> it(X, batch, seed);
  nn::Adam<T> opt(lr);
  for (int64_t s = 0; s < steps; ++s) {
    double loss = vae_train_step(b, opt, it.next_batch(), seed, static_cast<uint64_t>(s));
    if (!std::isfinite(loss)) return false;
  }
  return true;
}

// Plain autoencoder under the same architecture/budget: MSE only.
template <typename T>
struct PlainAe {
  nn::Mlp<T> enc;  // d_data -> d_z
  nn::Mlp<T> dec;  // d_z -> d_data
};

template <typename T>
PlainAe<T> make_plain_ae(int64_t d_data, int64_t d_z, uint64_t seed, int64_t width = 32,
                         int64_t depth = 2) {
  std::vector<int64_t> enc_dims{d_data}, dec_dims{d_z};
  std::vector<nn::Act> acts;
  for (int64_t i = 0; i < depth; ++i) {
    enc_dims.push_back(width);
    dec_dims.push_back(width);
    acts.push_back(nn::Act::LeakyRelu);
  }
  enc_dims.push_back(d_z);
  dec_dims.push_back(d_data);
  acts.push_back(nn::Act::Identity);
  PlainAe<T> p;
  p.enc = nn::init_mlp<T>(enc_dims, acts, seed, "plain-enc");
  p.dec = nn::init_mlp<T>(dec_dims, acts, seed, "plain-dec");
  return p;
}

template <typename T>
double plain_ae_mse(const PlainAe<T>& p, const Tensor<T>& x) {
  Tensor<T> xh = nn::infer(p.dec, nn::infer(p.enc, x));
  double s = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    double d = static_cast<double>(xh[i]) - x[i];
    s += d * d;
  }
  return s / x.numel();
}

template <typename T>
bool train_plain_ae(PlainAe<T>& p, const Tensor<T>& X, int64_t steps, int64_t batch, double lr,
                    uint64_t seed) {
  data::BatchIterator<T> it(X, batch, seed);
  nn::Adam<T> opt(lr);
  for (int64_t s = 0; s < steps; ++s) {
    Tensor<T> xb = it.next_batch();
    Tape<T> t;
    auto enc = nn::place(t, p.enc);
    auto dec = nn::place(t, p.dec);
    NodeId xin = t.leaf(xb);
    NodeId xh = nn::forward(t, dec, nn::forward(t, enc, xin));
    NodeId loss = t.scale(t.sum_sq(t.sub(xh, xin)), T(1.0 / static_cast<double>(xb.numel())));
    if (!std::isfinite(static_cast<double>(t.value(loss)[0]))) return false;
    t.backward(loss);

    auto params = p.enc.params();
    auto dparams = p.dec.params();
    params.insert(params.end(), dparams.begin(), dparams.end());
    auto ids = enc.param_ids();
    auto dec_ids = dec.param_ids();
    ids.insert(ids.end(), dec_ids.begin(), dec_ids.end());
    std::vector<Tensor<T>> grads;
    for (NodeId id : ids) grads.push_back(t.grad(id));
    std::vector<const Tensor<T>*> gp;
    for (const auto& gr : grads) gp.push_back(&gr);
    opt.step(params, gp);
  }
  return true;
}

// One VAE per beta over a shared budget; divergence is recorded, not fatal.
struct ProbeRow {
  double beta = 0;
  double max_kl = 0;
  double mean_kl = 0;
  double mse = 0;
  bool diverged = false;
};

template <typename T>
std::vector<ProbeRow> kl_blowup_probe(const Tensor<T>& X, const std::vector<double>& betas,
                                      int64_t steps, uint64_t seed, int64_t d_z = 1,
                                      int64_t batch = 64, double lr = 1e-3) {
  require(X.rank() == 2, "kl probe: need a [n x d] dataset");
  require(!betas.empty(), "kl probe: empty beta list");
  std::vector<ProbeRow> rows;
  for (size_t i = 0; i < betas.size(); ++i) {
    ProbeRow row;
    row.beta = betas[i];
    auto b = make_vae<T>(X.shape[1], d_z, betas[i], seed + 1000 * i);
    bool ok = train_vae(b, X, steps, batch, lr, seed + 1000 * i + 7);
    auto ev = vae_eval(b, X);
    row.diverged = !ok || !std::isfinite(ev.mse) || !std::isfinite(ev.max_kl);
    if (!row.diverged) {
      row.max_kl = ev.max_kl;
      row.mean_kl = ev.mean_kl;
      row.mse = ev.mse;
    } else {
      row.max_kl = row.mean_kl = row.mse = std::nan("");
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::string probe_csv(const std::vector<ProbeRow>& rows) {
  std::string out = "beta,max_kl,mean_kl,mse\n";
  char buf[160];
  for (const auto& r : rows) {
    if (r.diverged) {
      std::snprintf(buf, sizeof(buf), "%.6g,nan,nan,nan\n", r.beta);
    } else {
      std::snprintf(buf, sizeof(buf), "%.6g,%.10g,%.10g,%.10g\n", r.beta, r.max_kl, r.mean_kl,
                    r.mse);
    }
    out += buf;
  }
  return out;
}

// Proposition 1 direction: pin the posterior to N(0, 1) (KL = 0 exactly) and
// train only the decoder; the reconstruction target is unreachable because
// z carries no information about x. Returns the max per-coordinate variance
// of deterministic reconstructions (z = mu = 0) across distinct inputs.
template <typename T>
double prop1_decoder_variance(const Tensor<T>& X, int64_t d_z, int64_t steps, uint64_t seed,
                              int64_t width = 32, int64_t depth = 2) {
  require(X.rank() == 2 && X.shape[0] >= 2, "prop1 probe: need at least two inputs");
  std::vector<int64_t> dims{d_z};
  std::vector<nn::Act> acts;
  for (int64_t i = 0; i < depth; ++i) {
    dims.push_back(width);
    acts.push_back(nn::Act::Relu);
  }
  dims.push_back(X.shape[1]);
  acts.push_back(nn::Act::Identity);
  nn::Mlp<T> dec = nn::init_mlp<T>(dims, acts, seed, "prop1-dec");

  data::BatchIterator<T> it(X, std::min<int64_t>(64, X.shape[0]), seed);
  nn::Adam<T> opt(1e-3);
  for (int64_t s = 0; s < steps; ++s) {
    Tensor<T> xb = it.next_batch();
    Tensor<T> eps({xb.shape[0], d_z});
    Rng rng(seed, "prop1-eps", static_cast<uint64_t>(s));
    rng.fill_normal(eps);
    Tape<T> t;
    auto dh = nn::place(t, dec);
    NodeId xh = nn::forward(t, dh, t.leaf(eps));  // z = 0 + 1 * eps
    NodeId loss = t.scale(t.sum_sq(t.sub(xh, t.leaf(xb))),
                          T(1.0 / static_cast<double>(xb.numel())));
    t.backward(loss);
    auto params = dec.params();
    auto ids = dh.param_ids();
    std::vector<Tensor<T>> grads;
    for (NodeId id : ids) grads.push_back(t.grad(id));
    std::vector<const Tensor<T>*> gp;
    for (const auto& gr : grads) gp.push_back(&gr);
    opt.step(params, gp);
  }

  // eval: every input maps to z = mu = 0
  Tensor<T> z0 = Tensor<T>::zeros({X.shape[0], d_z});
  Tensor<T> xh = nn::infer(dec, z0);
  double worst = 0;
  for (int64_t j = 0; j < xh.shape[1]; ++j) {
    double m = 0;
    for (int64_t i = 0; i < xh.shape[0]; ++i) m += xh.at(i, j);
    m /= xh.shape[0];
    double v = 0;
    for (int64_t i = 0; i < xh.shape[0]; ++i)
      v += (xh.at(i, j) - m) * (xh.at(i, j) - m);
    worst = std::max(worst, v / xh.shape[0]);
  }
  return worst;
}

}  // namespace lm::vae
