#pragma once

#include <string>
#include <vector>

#include "lm/data.hpp"
#include "lm/nn.hpp"
#include "lm/tape.hpp"
#include "lm/tensor.hpp"

namespace lm::model {

struct Hyperparams {
  double lambda = 0.2;  // critic offset on interpolant scores
  double gamma = 0.2;   // real/reconstruction mixing coefficient
  double omega1 = 0.5;  // weight on the interpolant realism term
  double omega2 = 0.5;  // weight on the reconstruction realism term
  int64_t d_z = 2;
  int64_t batch = 256;
  double mu_max = 0.5;
  double bn_eps = 1e-8;
  double bn_rho = 0.99;
  bool bn_enabled = true;  // ablation switch: false removes BN from every path
  double leaky_slope = 0.2;

  void validate() const {
    require(lambda > 0 && lambda < 1, "hyperparams: lambda must lie in (0,1)");
    require(gamma >= 0 && gamma <= 1, "hyperparams: gamma must lie in [0,1]");
    require(omega1 >= 0 && omega2 >= 0, "hyperparams: omega weights must be nonnegative");
    require(d_z > 0, "hyperparams: latent dimension must be positive");
    require(batch >= 2, "hyperparams: batch must be at least 2 for batch statistics");
    require(mu_max > 0 && mu_max <= 0.5, "hyperparams: mu range upper bound must be in (0, 0.5]");
    require(bn_eps > 0 && bn_rho > 0 && bn_rho < 1, "hyperparams: bad bn constants");
  }
};

// Running statistics for the latent batch normalization (no learned affine).
template <typename T>
struct BnState {
  Tensor<T> run_mean;
  Tensor<T> run_var;
  double rho;
  double eps;
  bool batch_mode = true;  // batch statistics during training, running at eval
  bool trained = false;    // set once real batch statistics have been observed
  // Telemetry: worst per-dimension deviation of any batch-stats output from
  // mean 0 / variance 1/(1+eps), accumulated over every normalized batch.
  double worst_mean_dev = 0.0;
  double worst_var_dev = 0.0;

  BnState(int64_t d_z, double rho_, double eps_)
      : run_mean(Tensor<T>::zeros({d_z})), run_var(Tensor<T>::full({d_z}, T(1))), rho(rho_),
        eps(eps_) {}

  void observe(const std::vector<T>& mean, const std::vector<T>& var) {
    require(static_cast<int64_t>(mean.size()) == run_mean.numel(), "bn observe: width mismatch");
    for (int64_t j = 0; j < run_mean.numel(); ++j) {
      run_mean[j] = static_cast<T>(rho * run_mean[j] + (1.0 - rho) * mean[static_cast<size_t>(j)]);
      run_var[j] = static_cast<T>(rho * run_var[j] + (1.0 - rho) * var[static_cast<size_t>(j)]);
    }
    trained = true;
  }

  std::vector<T> mean_vec() const { return {run_mean.data.begin(), run_mean.data.end()}; }
  std::vector<T> var_vec() const { return {run_var.data.begin(), run_var.data.end()}; }

  void note_output_stats(const Tensor<T>& zh) {
    const int64_t B = zh.shape[0], d = zh.shape[1];
    const double target = 1.0 / (1.0 + eps);
    for (int64_t j = 0; j < d; ++j) {
      double m = 0;
      for (int64_t i = 0; i < B; ++i) m += static_cast<double>(zh.at(i, j));
      m /= B;
      double s = 0;
      for (int64_t i = 0; i < B; ++i) {
        double c = static_cast<double>(zh.at(i, j)) - m;
        s += c * c;
      }
      worst_mean_dev = std::max(worst_mean_dev, std::abs(m));
      worst_var_dev = std::max(worst_var_dev, std::abs(s / B - target));
    }
  }
};

// Tape-free latent_bn honoring the state's mode flag.
template <typename T>
Tensor<T> latent_bn(const Tensor<T>& z, BnState<T>& st) {
  require(z.rank() == 2 && z.shape[1] == st.run_mean.numel(), "latent_bn: width mismatch");
  const int64_t B = z.shape[0], d = z.shape[1];
  if (st.batch_mode) {
    require(B >= 2, "latent_bn: batch-stats mode needs B >= 2, got " + std::to_string(B));
    std::vector<T> mean(static_cast<size_t>(d)), var(static_cast<size_t>(d));
    for (int64_t j = 0; j < d; ++j) {
      double m = 0;
      for (int64_t i = 0; i < B; ++i) m += static_cast<double>(z.at(i, j));
      m /= B;
      double s = 0;
      for (int64_t i = 0; i < B; ++i) {
        double c = z.at(i, j) - m;
        s += c * c;
      }
      mean[static_cast<size_t>(j)] = static_cast<T>(m);
      var[static_cast<size_t>(j)] = static_cast<T>(s / B);
    }
    Tensor<T> out(z.shape);
    for (int64_t j = 0; j < d; ++j) {
      T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[static_cast<size_t>(j)]) + st.eps));
      for (int64_t i = 0; i < B; ++i)
        out.at(i, j) = (z.at(i, j) - mean[static_cast<size_t>(j)]) * inv;
    }
    st.observe(mean, var);
    st.note_output_stats(out);
    return out;
  }
  Tensor<T> out(z.shape);
  for (int64_t j = 0; j < d; ++j) {
    T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(st.run_var[j]) + st.eps));
    for (int64_t i = 0; i < B; ++i) out.at(i, j) = (z.at(i, j) - st.run_mean[j]) * inv;
  }
  return out;
}

// The five networks plus BN state. E: data->latent, G: latent->data,
// d: data->scalar (interpolation critic), g: prior->latent, D: latent->scalar.
template <typename T>
struct Bundle {
  nn::Mlp<T> E, G, d, g, D;
  BnState<T> bn;
  Hyperparams hp;

  void check_dims() const {
    require(E.out_dim() == hp.d_z && G.in_dim() == hp.d_z && g.out_dim() == hp.d_z &&
                D.in_dim() == hp.d_z,
            "bundle: latent-side dimensions disagree with d_z");
    require(d.in_dim() == G.out_dim() && E.in_dim() == G.out_dim(),
            "bundle: data-side dimensions disagree");
    require(d.out_dim() == 1 && D.out_dim() == 1, "bundle: critics must be scalar-valued");
  }
};

// `depth` counts hidden layers of `width`; every net gets depth+1 linear maps.
template <typename T>
Bundle<T> make_bundle(int64_t d_data, const Hyperparams& hp, uint64_t seed, int64_t width = 256,
                      int depth = 4, nn::Act g_final = nn::Act::Identity) {
  hp.validate();
  require(d_data > 0 && width > 0 && depth >= 1, "make_bundle: bad architecture arguments");
  using nn::Act;
  auto dims = [&](int64_t in, int64_t out) {
    std::vector<int64_t> v{in};
    for (int i = 0; i < depth; ++i) v.push_back(width);
    v.push_back(out);
    return v;
  };
  std::vector<Act> acts(static_cast<size_t>(depth), Act::LeakyRelu);
  auto with_final = [&](Act f) {
    auto a = acts;
    a.push_back(f);
    return a;
  };
  Bundle<T> b{init_mlp<T>(dims(d_data, hp.d_z), with_final(Act::Identity), seed, "E"),
              init_mlp<T>(dims(hp.d_z, d_data), with_final(g_final), seed, "G"),
              init_mlp<T>(dims(d_data, 1), with_final(Act::Identity), seed, "d"),
              init_mlp<T>(dims(hp.d_z, hp.d_z), with_final(Act::Identity), seed, "g"),
              init_mlp<T>(dims(hp.d_z, 1), with_final(Act::Identity), seed, "D"),
              BnState<T>(hp.d_z, hp.bn_rho, hp.bn_eps),
              hp};
  b.check_dims();
  return b;
}

// Score-level critic objective: mean(s_real^2) + mean((s_mix - lambda)^2)
//                              + mean((s_mu - mu - lambda)^2).
template <typename T>
double critic_loss_from_scores(const Tensor<T>& s_real, const Tensor<T>& s_mix,
                               const Tensor<T>& s_mu, const Tensor<T>& mu, double lambda) {
  require(s_real.shape == s_mix.shape && s_real.shape == s_mu.shape &&
              s_real.numel() == mu.numel(),
          "critic_loss_from_scores: shape mismatch");
  const int64_t B = s_real.numel();
  double t1 = 0, t2 = 0, t3 = 0;
  for (int64_t i = 0; i < B; ++i) {
    t1 += static_cast<double>(s_real[i]) * s_real[i];
    double r2 = s_mix[i] - lambda;
    t2 += r2 * r2;
    double r3 = s_mu[i] - mu[i] - lambda;
    t3 += r3 * r3;
  }
  return (t1 + t2 + t3) / B;
}

// Pieces of a loss graph that training needs to drive updates.
template <typename T>
struct LossGraph {
  NodeId loss = -1;
  nn::MlpOnTape<T> E, G, d, g, D;  // only the nets the loss places are filled
  NodeId bn_node = -1;             // real-batch BN node (ae graph only)
};

// L_dis: gradients reach d only; x_hat and x_mu enter as constants.
template <typename T>
LossGraph<T> critic_loss_graph(Tape<T>& t, const Bundle<T>& b, const Tensor<T>& x,
                               const Tensor<T>& x_hat, const Tensor<T>& x_mu,
                               const Tensor<T>& mu) {
  require(x.shape == x_hat.shape && x.shape == x_mu.shape, "critic loss: batch shapes differ");
  require(mu.rank() == 2 && mu.shape[0] == x.shape[0] && mu.shape[1] == 1,
          "critic loss: mu must be [B x 1]");
  const double gamma = b.hp.gamma, lambda = b.hp.lambda;
  Tensor<T> mix(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i)
    mix[i] = static_cast<T>(gamma) * x[i] + static_cast<T>(1.0 - gamma) * x_hat[i];

  LossGraph<T> lg;
  lg.d = nn::place(t, b.d);
  const T slope = static_cast<T>(b.hp.leaky_slope);
  auto s_real = nn::forward(t, lg.d, t.leaf(x), slope);
  auto s_mix = nn::forward(t, lg.d, t.leaf(mix), slope);
  auto s_mu = nn::forward(t, lg.d, t.leaf(x_mu), slope);

  auto t1 = t.mean_all(t.mul(s_real, s_real));
  auto r2 = t.add_const(s_mix, static_cast<T>(-lambda));
  auto t2 = t.mean_all(t.mul(r2, r2));
  auto r3 = t.add_const(t.sub(s_mu, t.leaf(mu)), static_cast<T>(-lambda));
  auto t3 = t.mean_all(t.mul(r3, r3));
  lg.loss = t.add(t.add(t1, t2), t3);
  return lg;
}

// L_ae = MSE(x, G(BN(E(x)))) + omega1*mean d(x_mu)^2 + omega2*mean d(x_hat)^2.
// Gradients are read for E and G only; d rides along frozen. The interpolant
// latents are normalized with the real batch's statistics — one affine map per
// step shared by all three latent batches — and those statistics are
// differentiated exactly.
template <typename T>
LossGraph<T> ae_loss_graph(Tape<T>& t, const Bundle<T>& b, const Tensor<T>& x,
                           const Tensor<T>& mu) {
  require(x.rank() == 2 && x.shape[0] >= 2, "ae loss: need a batch of at least 2");
  require(mu.rank() == 2 && mu.shape[0] == x.shape[0] && mu.shape[1] == 1,
          "ae loss: mu must be [B x 1]");
  for (T v : mu.data)
    require(v >= T(0) && v <= static_cast<T>(b.hp.mu_max),
            "ae loss: mu entries must lie in [0, " + std::to_string(b.hp.mu_max) + "]");

  LossGraph<T> lg;
  lg.E = nn::place(t, b.E);
  lg.G = nn::place(t, b.G);
  lg.d = nn::place(t, b.d);
  const T slope = static_cast<T>(b.hp.leaky_slope);

  auto xl = t.leaf(x);
  auto z = nn::forward(t, lg.E, xl, slope);
  NodeId z_dec = z;
  if (b.hp.bn_enabled) {
    lg.bn_node = t.batch_norm(z, static_cast<T>(b.hp.bn_eps));
    z_dec = lg.bn_node;
  }
  auto x_hat = nn::forward(t, lg.G, z_dec, slope);

  auto diff = t.sub(xl, x_hat);
  auto recon = t.mean_all(t.mul(diff, diff));
  if (b.hp.omega1 == 0 && b.hp.omega2 == 0) {
    // pure-MSE degeneration: no critic forwards, loss is the reconstruction
    lg.loss = recon;
    return lg;
  }

  // x2 is the batch reversed; the reversed batch shares the batch statistics
  auto z2 = t.reverse_rows(z);
  auto z_mix = t.lerp(z, z2, t.leaf(mu));
  auto z_mix_in =
      b.hp.bn_enabled ? t.batch_norm_shared(z_mix, z, static_cast<T>(b.hp.bn_eps)) : z_mix;
  auto x_mu = nn::forward(t, lg.G, z_mix_in, slope);

  auto s_mu = nn::forward(t, lg.d, x_mu, slope);
  auto s_hat = nn::forward(t, lg.d, x_hat, slope);
  auto reg = t.add(t.scale(t.mean_all(t.mul(s_mu, s_mu)), static_cast<T>(b.hp.omega1)),
                   t.scale(t.mean_all(t.mul(s_hat, s_hat)), static_cast<T>(b.hp.omega2)));
  lg.loss = t.add(recon, reg);
  return lg;
}

// L_D = mean relu(1 - D(z_real)) + mean relu(1 + D(g(z))): gradients to D only,
// so both the real embeddings and the faked latents enter as constants.
template <typename T>
LossGraph<T> latent_disc_loss_graph(Tape<T>& t, const Bundle<T>& b, const Tensor<T>& z_real,
                                    const Tensor<T>& z_fake) {
  require(z_real.rank() == 2 && z_real.shape[1] == b.hp.d_z &&
              z_fake.shape[1] == b.hp.d_z,
          "latent disc loss: latent width mismatch");
  LossGraph<T> lg;
  lg.D = nn::place(t, b.D);
  const T slope = static_cast<T>(b.hp.leaky_slope);
  auto s_real = nn::forward(t, lg.D, t.leaf(z_real), slope);
  auto s_fake = nn::forward(t, lg.D, t.leaf(z_fake), slope);
  auto real_term = t.mean_all(t.relu(t.add_const(t.scale(s_real, T(-1)), T(1))));
  auto fake_term = t.mean_all(t.relu(t.add_const(s_fake, T(1))));
  lg.loss = t.add(real_term, fake_term);
  return lg;
}

// L_g = -mean D(g(z)): gradients flow through a frozen D into g.
template <typename T>
LossGraph<T> latent_gen_loss_graph(Tape<T>& t, const Bundle<T>& b, const Tensor<T>& z_prior) {
  require(z_prior.rank() == 2 && z_prior.shape[1] == b.g.in_dim(),
          "latent gen loss: prior width mismatch");
  LossGraph<T> lg;
  lg.g = nn::place(t, b.g);
  lg.D = nn::place(t, b.D);
  const T slope = static_cast<T>(b.hp.leaky_slope);
  auto fake = nn::forward(t, lg.g, t.leaf(z_prior), slope);
  auto s = nn::forward(t, lg.D, fake, slope);
  lg.loss = t.scale(t.mean_all(s), T(-1));
  return lg;
}

// x_mu = G(BN(mu*E(x1) + (1-mu)*E(x2))). In batch mode the statistics come
// from E(x1)'s batch (shared by all three latent batches, making BN a single
// affine map); in running mode the stored statistics are used.
template <typename T>
Tensor<T> make_interpolants(const Tensor<T>& x1, const Tensor<T>& x2, const Bundle<T>& b,
                            const Tensor<T>& mu) {
  require(x1.shape == x2.shape, "make_interpolants: endpoint shapes differ");
  require(mu.numel() == x1.shape[0], "make_interpolants: one mu per row required");
  for (T v : mu.data)
    require(v >= T(0) && v <= static_cast<T>(b.hp.mu_max),
            "make_interpolants: mu out of [0, " + std::to_string(b.hp.mu_max) + "]");
  const T slope = static_cast<T>(b.hp.leaky_slope);
  Tensor<T> z1 = nn::infer(b.E, x1, slope);
  Tensor<T> z2 = nn::infer(b.E, x2, slope);
  Tensor<T> zmix(z1.shape);
  for (int64_t i = 0; i < z1.shape[0]; ++i) {
    T w = mu[i];
    for (int64_t j = 0; j < z1.shape[1]; ++j)
      zmix.at(i, j) = w * z1.at(i, j) + (T(1) - w) * z2.at(i, j);
  }
  if (!b.hp.bn_enabled) return nn::infer(b.G, zmix, slope);
  if (b.bn.batch_mode) {
    // stats of E(x1)'s batch, not of the interpolant batch
    Tape<T> t;
    auto bn1 = t.batch_norm(t.leaf(z1), static_cast<T>(b.bn.eps));
    const auto& mean = t.bn_batch_mean(bn1);
    const auto& var = t.bn_batch_var(bn1);
    Tensor<T> out(zmix.shape);
    for (int64_t j = 0; j < zmix.shape[1]; ++j) {
      T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[static_cast<size_t>(j)]) +
                                             b.bn.eps));
      for (int64_t i = 0; i < zmix.shape[0]; ++i)
        out.at(i, j) = (zmix.at(i, j) - mean[static_cast<size_t>(j)]) * inv;
    }
    return nn::infer(b.G, out, slope);
  }
  BnState<T> st = b.bn;  // running-stats mode: stored statistics, no update
  st.batch_mode = false;
  return nn::infer(b.G, latent_bn(zmix, st), slope);
}

template <typename T>
void require_trained(const Bundle<T>& b, const std::string& op) {
  require(b.bn.trained, op +
                            ": batch-norm running statistics are still at their init sentinel; "
                            "train the model or load a checkpoint first");
}

// Post-BN embedding of data under running statistics.
template <typename T>
Tensor<T> embed(const Bundle<T>& b, const Tensor<T>& x) {
  Tensor<T> z = nn::infer(b.E, x, static_cast<T>(b.hp.leaky_slope));
  if (!b.hp.bn_enabled) return z;
  BnState<T> st = b.bn;
  st.batch_mode = false;
  return latent_bn(z, st);
}

// x = G(g(z)), z ~ standard normal prior.
template <typename T>
Tensor<T> generate(int64_t n, const Bundle<T>& b, uint64_t seed) {
  require(n >= 0, "generate: n must be nonnegative");
  require_trained(b, "generate");
  Tensor<T> z = data::sample_prior<T>(n, b.g.in_dim(), seed);
  const T slope = static_cast<T>(b.hp.leaky_slope);
  return nn::infer(b.G, nn::infer(b.g, z, slope), slope);
}

// x_hat = G(BN_run(E(x))).
template <typename T>
Tensor<T> reconstruct(const Bundle<T>& b, const Tensor<T>& x) {
  require_trained(b, "reconstruct");
  return nn::infer(b.G, embed(b, x), static_cast<T>(b.hp.leaky_slope));
}

}  // namespace lm::model
