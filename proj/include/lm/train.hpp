#pragma once

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "lm/data.hpp"
#include "lm/metrics.hpp"
#include "lm/model.hpp"
#include "lm/nn.hpp"

namespace lm::train {

struct TrainConfig {
  data::DatasetSpec dataset;
  model::Hyperparams hp;
  double lr_ae = 1e-3;
  // Adversarial nets (d, g, D) follow common GAN practice: lower rate, beta1 0.5.
  double lr_critic = 2e-4;
  double lr_g = 2e-4;
  double lr_D = 2e-4;
  int64_t stage_a_steps = 4000;
  int64_t stage_b_steps = 4000;
  int64_t critic_ratio = 1;  // critic updates per AE update
  int64_t d_ratio = 2;       // D updates per g update
  int64_t eval_interval = 500;
  uint64_t seed = 1;
  bool critic_enabled = true;  // ablation switch: skip all L_dis updates
  int64_t width = 256;
  int64_t depth = 4;  // hidden layers per net
  int64_t eval_n = 1000;  // held-out sample size for periodic/final metrics
  int64_t sw2_projections = 64;

  void validate() const {
    hp.validate();
    require(stage_a_steps > 0 && stage_b_steps > 0, "config: step counts must be positive");
    require(critic_ratio >= 1 && d_ratio >= 1, "config: update ratios must be at least 1");
    require(eval_interval > 0, "config: eval interval must be positive");
    require(lr_ae > 0 && lr_critic > 0 && lr_g > 0 && lr_D > 0,
            "config: learning rates must be positive");
    require(eval_n >= 2 && sw2_projections >= 1, "config: bad eval sizes");
    require(width >= 1 && depth >= 1, "config: bad architecture");
  }
};

// Time series of named scalars; any non-finite value marks the run failed.
struct RunLog {
  struct Entry {
    int64_t step;
    std::string key;
    double value;
  };
  std::vector<Entry> entries;
  std::vector<std::pair<int64_t, metrics::MetricReport>> reports;
  bool failed = false;
  std::string fail_reason;

  void log(int64_t step, const std::string& key, double value) {
    require(entries.empty() || step >= entries.back().step,
            "run log: steps must be non-decreasing");
    entries.push_back({step, key, value});
    if (!std::isfinite(value) && !failed) {
      failed = true;
      fail_reason = key + " became non-finite at step " + std::to_string(step);
    }
  }

  double last(const std::string& key) const {
    for (auto it = entries.rbegin(); it != entries.rend(); ++it)
      if (it->key == key) return it->value;
    throw std::invalid_argument("run log: no entry named " + key);
  }

  std::string csv() const {
    std::string out = "step,key,value\n";
    char buf[128];
    for (const auto& e : entries) {
      std::snprintf(buf, sizeof(buf), "%lld,%s,%.10g\n", static_cast<long long>(e.step),
                    e.key.c_str(), e.value);
      out += buf;
    }
    return out;
  }
};

// Everything a run needs to continue exactly where it stopped.
template <typename T>
struct TrainState {
  model::Bundle<T> bundle;
  nn::Adam<T> opt_ae, opt_critic, opt_g, opt_D;
  int64_t step_a = 0, step_b = 0;
  int64_t it_epoch = 0, it_cursor = 0;    // stage A batch iterator position
  int64_t itb_epoch = 0, itb_cursor = 0;  // stage B batch iterator position
  double sw2_baseline = -1;               // untrained-g sliced W2, set at stage B step 0

  TrainState(model::Bundle<T> b, const TrainConfig& cfg)
      : bundle(std::move(b)),
        opt_ae(cfg.lr_ae, 0.9),
        opt_critic(cfg.lr_critic, 0.5),
        opt_g(cfg.lr_g, 0.5),
        opt_D(cfg.lr_D, 0.5) {}
};

template <typename T>
TrainState<T> make_state(const TrainConfig& cfg, int64_t d_data) {
  cfg.validate();
  return TrainState<T>(model::make_bundle<T>(d_data, cfg.hp, cfg.seed, cfg.width,
                                             static_cast<int>(cfg.depth)),
                       cfg);
}

template <typename T>
using SnapshotHook = std::function<void(const TrainState<T>&, const RunLog&, int64_t)>;

namespace detail {

template <typename T>
Tensor<T> reversed_rows(const Tensor<T>& x) {
  Tensor<T> out(x.shape);
  for (int64_t i = 0; i < x.shape[0]; ++i)
    for (int64_t j = 0; j < x.shape[1]; ++j) out.at(i, j) = x.at(x.shape[0] - 1 - i, j);
  return out;
}

template <typename T>
Tensor<T> draw_mu(const model::Hyperparams& hp, int64_t B, uint64_t seed, const char* purpose,
                  uint64_t stream) {
  Tensor<T> mu({B, 1});
  Rng rng(seed, purpose, stream);
  rng.fill_uniform(mu, 0.0, hp.mu_max);
  return mu;
}

template <typename T>
void apply_step(Tape<T>& t, nn::Adam<T>& opt, const std::vector<Tensor<T>*>& params,
                const std::vector<NodeId>& ids) {
  std::vector<Tensor<T>> grads;
  grads.reserve(ids.size());
  for (NodeId id : ids) grads.push_back(t.grad(id));
  std::vector<const Tensor<T>*> gp;
  gp.reserve(grads.size());
  for (const auto& g : grads) gp.push_back(&g);
  opt.step(params, gp);
}

}  // namespace detail

// One critic update on L_dis: reconstruction and interpolants are computed
// under the current batch statistics and enter the graph as constants, so the
// step can only move d. Returns the loss (NaN means "do not continue").
template <typename T>
double critic_update(const TrainConfig& cfg, TrainState<T>& st, const Tensor<T>& xb,
                     uint64_t substream) {
  auto& b = st.bundle;
  const T slope = static_cast<T>(cfg.hp.leaky_slope);
  Tensor<T> mu = detail::draw_mu<T>(cfg.hp, xb.shape[0], cfg.seed, "mu-critic", substream);
  Tensor<T> z = nn::infer(b.E, xb, slope);
  Tensor<T> x_hat = cfg.hp.bn_enabled ? nn::infer(b.G, model::latent_bn(z, b.bn), slope)
                                      : nn::infer(b.G, z, slope);
  Tensor<T> x_mu = model::make_interpolants(xb, detail::reversed_rows(xb), b, mu);

  Tape<T> t;
  auto lg = model::critic_loss_graph(t, b, xb, x_hat, x_mu, mu);
  double loss = t.value(lg.loss)[0];
  if (!std::isfinite(loss)) return std::nan("");
  t.backward(lg.loss);
  detail::apply_step(t, st.opt_critic, b.d.params(), lg.d.param_ids());
  return loss;
}

// One AE update on L_ae; observes the batch statistics into the running BN
// state, then moves E and G.
template <typename T>
double ae_update(const TrainConfig& cfg, TrainState<T>& st, const Tensor<T>& xb,
                 uint64_t substream) {
  auto& b = st.bundle;
  const bool need_mu = cfg.hp.omega1 != 0 || cfg.hp.omega2 != 0;
  Tensor<T> mu = need_mu
                     ? detail::draw_mu<T>(cfg.hp, xb.shape[0], cfg.seed, "mu-ae", substream)
                     : Tensor<T>::zeros({xb.shape[0], 1});
  Tape<T> t;
  auto lg = model::ae_loss_graph(t, b, xb, mu);
  double loss = t.value(lg.loss)[0];
  if (!std::isfinite(loss)) return std::nan("");
  t.backward(lg.loss);
  if (cfg.hp.bn_enabled && lg.bn_node >= 0) {
    b.bn.observe(t.bn_batch_mean(lg.bn_node), t.bn_batch_var(lg.bn_node));
    b.bn.note_output_stats(t.value(lg.bn_node));
  }

  auto params = b.E.params();
  auto gparams = b.G.params();
  params.insert(params.end(), gparams.begin(), gparams.end());
  auto ids = lg.E.param_ids();
  auto gids = lg.G.param_ids();
  ids.insert(ids.end(), gids.begin(), gids.end());
  detail::apply_step(t, st.opt_ae, params, ids);
  return loss;
}

// Stage A: per step, `critic_ratio` critic updates (each on a fresh batch),
// then one AE update. BN runs in batch-stats mode and the running statistics
// absorb one EMA update per forward pass. Returns false and marks the log
// failed the moment a loss goes non-finite; parameters keep their last
// pre-failure values.
template <typename T>
bool train_stage_a(const TrainConfig& cfg, TrainState<T>& st, const Tensor<T>& X, RunLog& log,
                   const SnapshotHook<T>& hook = {}) {
  cfg.validate();
  st.bundle.bn.batch_mode = true;
  data::BatchIterator<T> it(X, cfg.hp.batch, cfg.seed);
  it.set_position(st.it_epoch, st.it_cursor);

  for (int64_t s = st.step_a; s < cfg.stage_a_steps; ++s) {
    if (cfg.critic_enabled) {
      for (int64_t r = 0; r < cfg.critic_ratio; ++r) {
        double loss = critic_update(cfg, st, it.next_batch(),
                                    static_cast<uint64_t>(s * cfg.critic_ratio + r));
        log.log(s, "loss_dis", loss);
        if (!std::isfinite(loss)) return false;
      }
    }
    double loss = ae_update(cfg, st, it.next_batch(), static_cast<uint64_t>(s));
    log.log(s, "loss_ae", loss);
    if (!std::isfinite(loss)) return false;

    st.step_a = s + 1;
    st.it_epoch = it.epoch();
    st.it_cursor = it.cursor();
    if (hook && (st.step_a % cfg.eval_interval == 0 || st.step_a == cfg.stage_a_steps))
      hook(st, log, st.step_a);
  }
  if (!cfg.hp.bn_enabled) st.bundle.bn.trained = true;  // stage A completion marker
  return true;
}

// One hinge-discriminator update on L_D; g(z) enters as a constant.
template <typename T>
double disc_update(const TrainConfig& cfg, TrainState<T>& st, const Tensor<T>& z_real,
                   uint64_t substream) {
  auto& b = st.bundle;
  Tensor<T> zp = data::sample_prior<T>(z_real.shape[0], b.g.in_dim(),
                                       Rng(cfg.seed, "prior-D", substream).key());
  Tensor<T> zf = nn::infer(b.g, zp, static_cast<T>(cfg.hp.leaky_slope));
  Tape<T> t;
  auto lg = model::latent_disc_loss_graph(t, b, z_real, zf);
  double loss = t.value(lg.loss)[0];
  if (!std::isfinite(loss)) return std::nan("");
  t.backward(lg.loss);
  detail::apply_step(t, st.opt_D, b.D.params(), lg.D.param_ids());
  return loss;
}

// One generator update on L_g; gradients pass through a frozen D into g.
template <typename T>
double gen_update(const TrainConfig& cfg, TrainState<T>& st, uint64_t substream) {
  auto& b = st.bundle;
  Tensor<T> zp = data::sample_prior<T>(cfg.hp.batch, b.g.in_dim(),
                                       Rng(cfg.seed, "prior-g", substream).key());
  Tape<T> t;
  auto lg = model::latent_gen_loss_graph(t, b, zp);
  double loss = t.value(lg.loss)[0];
  if (!std::isfinite(loss)) return std::nan("");
  t.backward(lg.loss);
  detail::apply_step(t, st.opt_g, b.g.params(), lg.g.param_ids());
  return loss;
}

// Stage B: E, G, d and the BN statistics are frozen; embeddings of the whole
// training set are computed once up front. Per step, `d_ratio` discriminator
// updates on L_D, then one generator update on L_g.
template <typename T>
bool train_stage_b(const TrainConfig& cfg, TrainState<T>& st, const Tensor<T>& X, RunLog& log,
                   const SnapshotHook<T>& hook = {}) {
  cfg.validate();
  auto& b = st.bundle;
  require(st.step_a == cfg.stage_a_steps, "stage B: stage A has not finished");
  model::require_trained(b, "stage B");
  const T slope = static_cast<T>(cfg.hp.leaky_slope);

  Tensor<T> Z = model::embed(b, X);
  data::BatchIterator<T> it(Z, cfg.hp.batch, cfg.seed);
  it.set_position(st.itb_epoch, st.itb_cursor);

  if (st.step_b == 0) {
    const int64_t n = std::min<int64_t>(Z.shape[0], cfg.eval_n);
    Tensor<T> zp = data::sample_prior<T>(n, b.g.in_dim(), Rng(cfg.seed, "sw2-base").key());
    Tensor<T> zf = nn::infer(b.g, zp, slope);
    Tensor<T> zr({n, Z.shape[1]});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < Z.shape[1]; ++j) zr.at(i, j) = Z.at(i, j);
    st.sw2_baseline = metrics::sliced_w2(zf, zr, cfg.sw2_projections, cfg.seed);
    log.log(cfg.stage_a_steps, "sw2_latent_baseline", st.sw2_baseline);
  }

  for (int64_t s = st.step_b; s < cfg.stage_b_steps; ++s) {
    const int64_t global = cfg.stage_a_steps + s;
    for (int64_t r = 0; r < cfg.d_ratio; ++r) {
      double loss = disc_update(cfg, st, it.next_batch(),
                                static_cast<uint64_t>(s * cfg.d_ratio + r));
      log.log(global, "loss_D", loss);
      if (!std::isfinite(loss)) return false;
    }
    double loss = gen_update(cfg, st, static_cast<uint64_t>(s));
    log.log(global, "loss_g", loss);
    if (!std::isfinite(loss)) return false;

    st.step_b = s + 1;
    st.itb_epoch = it.epoch();
    st.itb_cursor = it.cursor();
    if (hook && (st.step_b % cfg.eval_interval == 0 || st.step_b == cfg.stage_b_steps))
      hook(st, log, cfg.stage_a_steps + st.step_b);
  }
  return true;
}

// Final metric sweep on a held-out sample drawn with a shifted dataset seed.
template <typename T>
metrics::MetricReport final_report(const TrainConfig& cfg, const model::Bundle<T>& b,
                                   const Tensor<T>& X_eval) {
  metrics::MetricReport rep;
  rep.seed = cfg.seed;
  rep.n_data = X_eval.shape[0];
  rep.n_gen = X_eval.shape[0];

  Tensor<T> xh = model::reconstruct(b, X_eval);
  rep.set("mse", metrics::mse_metric(X_eval, xh));

  Tensor<T> Z = model::embed(b, X_eval);
  Tensor<T> zp = data::sample_prior<T>(X_eval.shape[0], b.g.in_dim(),
                                       Rng(cfg.seed, "report-prior").key());
  Tensor<T> zf = nn::infer(b.g, zp, static_cast<T>(cfg.hp.leaky_slope));
  rep.set("sw2_latent", metrics::sliced_w2(zf, Z, cfg.sw2_projections, cfg.seed));

  Tensor<T> xg = nn::infer(b.G, zf, static_cast<T>(cfg.hp.leaky_slope));
  rep.set("sw2_data", metrics::sliced_w2(xg, X_eval, cfg.sw2_projections, cfg.seed));

  int64_t k = std::min<int64_t>(10, (X_eval.shape[0] - 1) / 2);
  auto [tw, cn] = metrics::trustworthiness_continuity(X_eval, Z, k);
  rep.set("trustworthiness", tw);
  rep.set("continuity", cn);

  auto [mnorm, vdev] = metrics::latent_moments(Z);
  rep.set("latent_mean_norm", mnorm);
  rep.set("latent_var_dev", vdev);
  return rep;
}

template <typename T>
struct ExperimentResult {
  TrainState<T> state;
  RunLog log;
  metrics::MetricReport report;
  bool ok = false;
};

// Stage A, then stage B, then the final report. The hook (when set) fires at
// eval intervals and stage boundaries — only while the run is healthy, so the
// newest snapshot always predates any failure.
template <typename T>
ExperimentResult<T> run_experiment(const TrainConfig& cfg, const SnapshotHook<T>& hook = {}) {
  cfg.validate();
  Tensor<T> X = data::materialize<T>(cfg.dataset);
  data::DatasetSpec eval_spec = cfg.dataset;
  eval_spec.seed = cfg.dataset.seed + 1;
  eval_spec.n = cfg.eval_n;
  Tensor<T> X_eval = data::materialize<T>(eval_spec);

  ExperimentResult<T> res{make_state<T>(cfg, X.shape[1]), RunLog{}, {}, false};
  if (!train_stage_a(cfg, res.state, X, res.log, hook)) return res;
  res.log.log(cfg.stage_a_steps, "mse_eval",
              metrics::mse_metric(X_eval, model::reconstruct(res.state.bundle, X_eval)));
  if (res.log.failed) return res;
  if (!train_stage_b(cfg, res.state, X, res.log, hook)) return res;

  res.report = final_report(cfg, res.state.bundle, X_eval);
  res.ok = res.report.all_finite() && !res.log.failed;
  return res;
}

}  // namespace lm::train
