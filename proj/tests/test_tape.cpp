#include <doctest.h>

#include <map>
#include <string>

#include "lm/grad_check.hpp"
#include "lm/rng.hpp"
#include "lm/tape.hpp"

using namespace lm;

namespace {

template <typename T>
std::vector<NodeId> make_leaves(Tape<T>& t, const std::vector<Tensor<T>>& xs) {
  std::vector<NodeId> ids;
  ids.reserve(xs.size());
  for (const auto& x : xs) ids.push_back(t.leaf(x));
  return ids;
}

// Builds the graph twice: once for analytic gradients, then repeatedly inside
// the finite-difference probe. Returns the worst relative error over every
// coordinate of every input (denominator max(1, |analytic|, |fd|)).
template <typename T, typename B>
double fd_run(std::vector<Tensor<T>> inputs, B&& build, double h) {
  auto f = [&](const std::vector<Tensor<T>>& xs) {
    Tape<T> t;
    auto ids = make_leaves(t, xs);
    return static_cast<double>(t.value(build(t, ids)).data[0]);
  };
  Tape<T> t;
  auto ids = make_leaves(t, inputs);
  NodeId root = build(t, ids);
  t.backward(root);
  std::vector<Tensor<T>> an;
  for (auto id : ids) an.push_back(t.grad(id));
  return fd_compare(f, inputs, an, h, 1.0).max_rel_err;
}

// Every primitive against central differences on random inputs. Inputs for
// kinked ops (relu, leaky-relu, clamp) are sampled away from the corner so the
// finite-difference quotient is valid.
template <typename T>
void primitive_suite(double h, double tol, int iters) {
  std::map<std::string, double> worst;
  auto note = [&](const char* name, double err) {
    auto& w = worst[name];
    w = std::max(w, err);
  };

  for (int it = 0; it < iters; ++it) {
    Rng rng(500 + it, "prims");
    auto U = [&](Shape s, double a, double b) {
      Tensor<T> t(s);
      rng.fill_uniform(t, a, b);
      return t;
    };
    // magnitude in [0.2, 2]: keeps a margin from the relu/leaky corner at 0
    auto Um = [&](Shape s) {
      Tensor<T> t(s);
      for (auto& v : t.data) {
        double m = rng.uniform(0.2, 2.0);
        v = static_cast<T>(rng.uniform() < 0.5 ? -m : m);
      }
      return t;
    };
    const int64_t B = 1 + rng.below(4), d = 1 + rng.below(4);
    auto red = [](Tape<T>& t, NodeId y, NodeId w) { return t.mean_all(t.mul(y, w)); };
    using Ids = const std::vector<NodeId>&;

    note("add", fd_run<T>({U({B, d}, -2, 2), U({B, d}, -2, 2), U({B, d}, -1, 1)},
                          [&](Tape<T>& t, Ids i) { return red(t, t.add(i[0], i[1]), i[2]); }, h));
    note("sub", fd_run<T>({U({B, d}, -2, 2), U({B, d}, -2, 2), U({B, d}, -1, 1)},
                          [&](Tape<T>& t, Ids i) { return red(t, t.sub(i[0], i[1]), i[2]); }, h));
    note("mul", fd_run<T>({U({B, d}, -2, 2), U({B, d}, -2, 2), U({B, d}, -1, 1)},
                          [&](Tape<T>& t, Ids i) { return red(t, t.mul(i[0], i[1]), i[2]); }, h));

    const T c = static_cast<T>(rng.uniform(-2, 2));
    note("scale", fd_run<T>({U({B, d}, -2, 2), U({B, d}, -1, 1)},
                            [&](Tape<T>& t, Ids i) { return red(t, t.scale(i[0], c), i[1]); }, h));
    note("add_const",
         fd_run<T>({U({B, d}, -2, 2), U({B, d}, -1, 1)},
                   [&](Tape<T>& t, Ids i) { return red(t, t.add_const(i[0], c), i[1]); }, h));

    note("add_bias",
         fd_run<T>({U({B, d}, -2, 2), U({d}, -1, 1), U({B, d}, -1, 1)},
                   [&](Tape<T>& t, Ids i) { return red(t, t.add_bias(i[0], i[1]), i[2]); }, h));

    {
      const int64_t m = 1 + rng.below(4), k = 1 + rng.below(4), n = 1 + rng.below(4);
      note("matmul",
           fd_run<T>({U({m, k}, -2, 2), U({k, n}, -2, 2), U({m, n}, -1, 1)},
                     [&](Tape<T>& t, Ids i) { return red(t, t.matmul(i[0], i[1]), i[2]); }, h));
    }

    note("relu", fd_run<T>({Um({B, d}), U({B, d}, -1, 1)},
                           [&](Tape<T>& t, Ids i) { return red(t, t.relu(i[0]), i[1]); }, h));
    note("leaky_relu",
         fd_run<T>({Um({B, d}), U({B, d}, -1, 1)},
                   [&](Tape<T>& t, Ids i) { return red(t, t.leaky_relu(i[0], T(0.2)), i[1]); }, h));
    note("tanh", fd_run<T>({U({B, d}, -2, 2), U({B, d}, -1, 1)},
                           [&](Tape<T>& t, Ids i) { return red(t, t.tanh_(i[0]), i[1]); }, h));
    note("sigmoid", fd_run<T>({U({B, d}, -2, 2), U({B, d}, -1, 1)},
                              [&](Tape<T>& t, Ids i) { return red(t, t.sigmoid(i[0]), i[1]); }, h));
    note("exp", fd_run<T>({U({B, d}, -1.5, 1.5), U({B, d}, -1, 1)},
                          [&](Tape<T>& t, Ids i) { return red(t, t.exp_(i[0]), i[1]); }, h));
    note("log", fd_run<T>({U({B, d}, 0.3, 3.0), U({B, d}, -1, 1)},
                          [&](Tape<T>& t, Ids i) { return red(t, t.log_(i[0]), i[1]); }, h));

    {
      // keep samples at least 0.1 away from the clamp corners at ±0.8
      Tensor<T> x({B, d});
      for (auto& v : x.data) {
        double u;
        do {
          u = rng.uniform(-2.0, 2.0);
        } while (std::abs(std::abs(u) - 0.8) < 0.1);
        v = static_cast<T>(u);
      }
      note("clamp",
           fd_run<T>({x, U({B, d}, -1, 1)},
                     [&](Tape<T>& t, Ids i) { return red(t, t.clamp(i[0], T(-0.8), T(0.8)), i[1]); },
                     h));
    }

    note("mean_all", fd_run<T>({U({B, d}, -2, 2)},
                               [&](Tape<T>& t, Ids i) { return t.mean_all(i[0]); }, h));
    note("var_all", fd_run<T>({U({B, d}, -2, 2)},
                              [&](Tape<T>& t, Ids i) { return t.var_all(i[0]); }, h));
    // scaled down so |f| stays O(1): float FD noise grows with |f|/h
    note("sum_sq", fd_run<T>({U({B, d}, -2, 2)},
                             [&](Tape<T>& t, Ids i) { return t.scale(t.sum_sq(i[0]), T(1.0 / 16)); },
                             h));
    note("row_sum", fd_run<T>({U({B, d}, -2, 2), U({B, 1}, -1, 1)},
                              [&](Tape<T>& t, Ids i) { return red(t, t.row_sum(i[0]), i[1]); }, h));

    note("lerp", fd_run<T>({U({B, d}, -2, 2), U({B, d}, -2, 2), U({B, 1}, 0.05, 0.95),
                            U({B, d}, -1, 1)},
                           [&](Tape<T>& t, Ids i) { return red(t, t.lerp(i[0], i[1], i[2]), i[3]); },
                           h));

    {
      const int64_t Bn = 3 + rng.below(4);
      Tensor<T> x({Bn, d});
      // resample until every column has healthy variance: the FD step must not
      // be comparable to 1/sqrt(var)
      for (;;) {
        rng.fill_uniform(x, -1.5, 1.5);
        bool ok = true;
        for (int64_t j = 0; j < d && ok; ++j) {
          double m = 0, s = 0;
          for (int64_t i = 0; i < Bn; ++i) m += x.at(i, j);
          m /= Bn;
          for (int64_t i = 0; i < Bn; ++i) s += (x.at(i, j) - m) * (x.at(i, j) - m);
          ok = s / Bn > 0.3;
        }
        if (ok) break;
      }
      note("batch_norm",
           fd_run<T>({x, U({Bn, d}, -1, 1)},
                     [&](Tape<T>& t, Ids i) { return red(t, t.batch_norm(i[0], T(1e-8)), i[1]); },
                     h));

      std::vector<T> gm(static_cast<size_t>(d)), gv(static_cast<size_t>(d));
      for (auto& v : gm) v = static_cast<T>(rng.uniform(-1, 1));
      for (auto& v : gv) v = static_cast<T>(rng.uniform(0.5, 2.0));
      note("batch_norm_given",
           fd_run<T>({x, U({Bn, d}, -1, 1)},
                     [&](Tape<T>& t, Ids i) {
                       return red(t, t.batch_norm_given(i[0], gm, gv, T(1e-8)), i[1]);
                     },
                     h));

      note("batch_norm_shared",
           fd_run<T>({U({B, d}, -2, 2), x, U({B, d}, -1, 1)},
                     [&](Tape<T>& t, Ids i) {
                       return red(t, t.batch_norm_shared(i[0], i[1], T(1e-8)), i[2]);
                     },
                     h));
    }

    {
      const int64_t dc = 2 + rng.below(3);
      const int64_t from = rng.below(dc), to = from + 1 + rng.below(dc - from);
      note("slice_cols",
           fd_run<T>({U({B, dc}, -2, 2), U({B, to - from}, -1, 1)},
                     [&](Tape<T>& t, Ids i) { return red(t, t.slice_cols(i[0], from, to), i[1]); },
                     h));
    }

    note("reverse_rows",
         fd_run<T>({U({B, d}, -2, 2), U({B, d}, -1, 1)},
                   [&](Tape<T>& t, Ids i) { return red(t, t.reverse_rows(i[0]), i[1]); }, h));
  }

  for (const auto& [name, err] : worst) {
    CAPTURE(name);
    CHECK_MESSAGE(err < tol, name << ": worst rel err " << err);
  }
}

}  // namespace

TEST_CASE("matmul hand example") {
  Tape<float> t;
  auto a = t.leaf(Tensor<float>({2, 2}, {1, 2, 3, 4}));
  auto b = t.leaf(Tensor<float>({2, 1}, {1, 1}));
  auto c = t.matmul(a, b);
  CHECK(t.value(c).at(0, 0) == 3.0f);
  CHECK(t.value(c).at(1, 0) == 7.0f);
}

TEST_CASE("matmul matches the naive reference kernel") {
  Rng rng(11, "mm-ref");
  for (int it = 0; it < 20; ++it) {
    int64_t m = 1 + rng.below(40), k = 1 + rng.below(40), n = 1 + rng.below(40);
    Tensor<double> a({m, k}), b({k, n});
    rng.fill_uniform(a, -2, 2);
    rng.fill_uniform(b, -2, 2);
    Tape<double> t;
    auto c = t.matmul(t.leaf(a), t.leaf(b));
    auto ref = naive_matmul(a, b);
    for (int64_t i = 0; i < m * n; ++i)
      CHECK(t.value(c)[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    Tensor<float> af = a.cast<float>(), bf = b.cast<float>();
    Tape<float> tf;
    auto cf = tf.matmul(tf.leaf(af), tf.leaf(bf));
    auto reff = naive_matmul(af, bf);
    for (int64_t i = 0; i < m * n; ++i)
      CHECK(tf.value(cf)[i] == doctest::Approx(reff[i]).epsilon(1e-4));
  }
}

TEST_CASE("relu definition") {
  Tape<float> t;
  auto y = t.relu(t.leaf(Tensor<float>({3}, {-1, 0, 2})));
  CHECK(t.value(y)[0] == 0.0f);
  CHECK(t.value(y)[1] == 0.0f);
  CHECK(t.value(y)[2] == 2.0f);
}

TEST_CASE("population variance of [1,3] is 1") {
  Tape<double> t;
  auto v = t.var_all(t.leaf(Tensor<double>({2}, {1, 3})));
  CHECK(t.value(v)[0] == doctest::Approx(1.0));
}

TEST_CASE("backward: d(x^2)/dx at 3 is 6") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>::scalar(3.0));
  auto y = t.mul(x, x);
  t.backward(y);
  CHECK(t.grad(x)[0] == doctest::Approx(6.0));
}

TEST_CASE("backward: constant root leaves untouched leaves at zero") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  auto k = t.leaf(Tensor<double>::scalar(5.0));
  t.backward(k);
  for (double g : t.grad(x).data) CHECK(g == 0.0);
}

TEST_CASE("backward rejects a non-scalar root") {
  Tape<float> t;
  auto x = t.leaf(Tensor<float>({2, 2}, {1, 2, 3, 4}));
  CHECK_THROWS_WITH_AS(t.backward(x), doctest::Contains("root must be scalar"),
                       std::invalid_argument);
}

TEST_CASE("grad access before backward is rejected") {
  Tape<float> t;
  auto x = t.leaf(Tensor<float>::scalar(1.0f));
  CHECK_THROWS_AS((void)t.grad(x), std::invalid_argument);
}

TEST_CASE("shape mismatch errors name both shapes") {
  Tape<float> t;
  auto a = t.leaf(Tensor<float>({2, 3}));
  auto b = t.leaf(Tensor<float>({2, 2}));
  CHECK_THROWS_WITH_AS(t.add(a, b), doctest::Contains("[2x3]"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(t.matmul(a, b),
                       doctest::Contains("incompatible shapes [2x3] and [2x2]"),
                       std::invalid_argument);
}

TEST_CASE("two-layer MLP loss matches central finite differences (64-bit)") {
  Rng rng(21, "mlp-fd");
  Tensor<double> x({4, 3}), w1({3, 8}), b1({8}), w2({8, 2}), b2({2}), target({4, 2});
  rng.fill_uniform(x, -1, 1);
  rng.fill_uniform(w1, -0.5, 0.5);
  rng.fill_uniform(b1, -0.2, 0.2);
  rng.fill_uniform(w2, -0.5, 0.5);
  rng.fill_uniform(b2, -0.2, 0.2);
  rng.fill_uniform(target, -1, 1);

  auto build = [&](Tape<double>& t, const std::vector<NodeId>& i) {
    auto h1 = t.tanh_(t.add_bias(t.matmul(i[0], i[1]), i[2]));
    auto out = t.add_bias(t.matmul(h1, i[3]), i[4]);
    auto diff = t.sub(out, i[5]);
    return t.mean_all(t.mul(diff, diff));
  };
  double err = fd_run<double>({x, w1, b1, w2, b2, target}, build, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check fixtures: quadratic, linear, negative control") {
  // f(x) = sum(x squared) at [1,2,3]
  std::vector<Tensor<double>> in{Tensor<double>({3}, {1, 2, 3})};
  auto quad = [](Tape<double>& t, const std::vector<NodeId>& i) { return t.sum_sq(i[0]); };
  CHECK(fd_run<double>(in, quad, 1e-5) < 1e-6);

  // linear f(x) = mean(x): finite differences are exact up to rounding
  auto lin = [](Tape<double>& t, const std::vector<NodeId>& i) { return t.mean_all(i[0]); };
  CHECK(fd_run<double>(in, lin, 1e-5) < 1e-9);

  // a deliberately wrong gradient must be flagged loudly
  auto f = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> t;
    return t.value(t.sum_sq(t.leaf(xs[0])))[0];
  };
  std::vector<Tensor<double>> wrong_grad{Tensor<double>({3}, {2.0 * 1 + 1.0, 2.0 * 2, 2.0 * 3})};
  auto rep = fd_compare(f, in, wrong_grad, 1e-5, 1.0);
  CHECK(rep.max_rel_err > 0.1);
}

TEST_CASE("fd_compare reports kink crossings as skips, not failures") {
  auto f = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> t;
    return t.value(t.mean_all(t.relu(t.leaf(xs[0]))))[0];
  };
  // 1e-6 sits inside the probe step: every probe crosses the corner
  std::vector<Tensor<double>> in{Tensor<double>({2}, {1e-6, 3.0})};
  Tape<double> t;
  auto x = t.leaf(in[0]);
  t.backward(t.mean_all(t.relu(x)));
  std::vector<Tensor<double>> an{t.grad(x)};
  auto rep = fd_compare(f, in, an, 1e-5, 1.0, /*skip_kinks=*/true);
  CHECK(rep.skipped == 1);
  CHECK(rep.checked == 1);
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("backward is linear in the root") {
  Rng rng(31, "linroot");
  Tensor<double> x({3, 3});
  rng.fill_uniform(x, -1, 1);
  const double a = 1.7, b = -0.6;

  auto grads = [&](bool with_f, bool with_g, double ca, double cb) {
    Tape<double> t;
    auto xi = t.leaf(x);
    NodeId root;
    auto f = t.mean_all(t.mul(xi, xi));
    auto g = t.mean_all(t.exp_(xi));
    if (with_f && with_g)
      root = t.add(t.scale(f, ca), t.scale(g, cb));
    else
      root = with_f ? f : g;
    t.backward(root);
    return t.grad(xi);
  };
  auto gf = grads(true, false, 0, 0);
  auto gg = grads(false, true, 0, 0);
  auto gc = grads(true, true, a, b);
  for (int64_t i = 0; i < 9; ++i)
    CHECK(gc[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
}

TEST_CASE("identical tapes give bit-identical values") {
  auto run = [] {
    Rng rng(41, "bitrepro");
    Tensor<float> x({8, 4}), w({4, 4});
    rng.fill_uniform(x, -1, 1);
    rng.fill_uniform(w, -1, 1);
    Tape<float> t;
    auto y = t.batch_norm(t.tanh_(t.matmul(t.leaf(x), t.leaf(w))), 1e-8f);
    auto r = t.mean_all(t.mul(y, y));
    return t.value(r)[0];
  };
  CHECK(run() == run());
}

TEST_CASE("empty batches flow through") {
  Tape<float> t;
  auto a = t.leaf(Tensor<float>({0, 3}));
  auto w = t.leaf(Tensor<float>({3, 2}));
  auto y = t.matmul(a, w);
  CHECK(t.value(y).shape == Shape{0, 2});
  auto z = t.relu(y);
  CHECK(t.value(z).numel() == 0);
}

TEST_CASE("non-finite outputs are flagged by the explicit check") {
  Tape<float> t;
  auto x = t.leaf(Tensor<float>({2}, {-1.0f, 1.0f}));
  auto y = t.log_(x);
  CHECK_FALSE(t.value_finite(y));
  CHECK(t.value_finite(x));
}

TEST_CASE("batch_norm fixtures") {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>({2, 1}, {1, 3}));
  auto y = t.batch_norm(x, 1e-12);
  CHECK(t.value(y).at(0, 0) == doctest::Approx(-1.0));
  CHECK(t.value(y).at(1, 0) == doctest::Approx(1.0));
  CHECK(t.bn_batch_mean(y)[0] == doctest::Approx(2.0));
  CHECK(t.bn_batch_var(y)[0] == doctest::Approx(1.0));
}

TEST_CASE("every primitive matches finite differences (32-bit)") {
  primitive_suite<float>(5e-3, 1e-4, 100);
}

TEST_CASE("every primitive matches finite differences (64-bit)") {
  primitive_suite<double>(1e-5, 1e-7, 100);
}
