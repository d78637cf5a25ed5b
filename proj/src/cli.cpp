#include "lm/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include "lm/artifacts.hpp"
#include "lm/checkpoint.hpp"
#include "lm/config.hpp"
#include "lm/grad_check.hpp"
#include "lm/vae.hpp"

namespace lm::cli {

namespace {

namespace fs = std::filesystem;

struct CliError {
  int code;
  std::string msg;
};

std::string out_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("LM_OUT_DIR"); env && *env) return env;
  return ".";
}

config::KvConfig load_kv(const std::string& path, const std::vector<std::string>& sets,
                         const std::optional<uint64_t>& seed_override) {
  if (path.empty()) throw CliError{2, "a --config file is required"};
  if (!fs::exists(path)) throw CliError{2, "config file not found: " + path};
  auto kv = config::parse_config_file(path);
  for (const auto& s : sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw CliError{2, "--set expects key=value, got '" + s + "'"};
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  // the explicit seed flag wins over both the file and --set
  if (seed_override) kv.set("seed", std::to_string(*seed_override));
  return kv;
}

ckpt::LoadedRun load_run(const std::string& path) {
  if (path.empty()) throw CliError{2, "a --ckpt file is required"};
  if (!fs::exists(path)) throw CliError{2, "checkpoint file not found: " + path};
  return ckpt::load_state(path);
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::optional<uint64_t>& seed, const std::string& out_flag) {
  auto kv = load_kv(config_path, sets, seed);
  train::TrainConfig cfg = config::to_train_config(kv);
  const std::string id = config::run_id(kv);
  const std::string dir = out_root(out_flag) + "/run-" + id;
  fs::create_directories(dir);
  const std::string canon = config::canonical(kv);

  train::SnapshotHook<float> hook = [&](const train::TrainState<float>& st,
                                        const train::RunLog&, int64_t) {
    ckpt::save_state(st, canon, dir + "/last.ckpt");
  };
  auto res = train::run_experiment<float>(cfg, hook);
  artifacts::write_text_atomic(dir + "/runlog.csv", res.log.csv());
  if (!res.ok) {
    std::cerr << "run failed: " << (res.log.failed ? res.log.fail_reason : "non-finite report")
              << "\npartial log: " << dir << "/runlog.csv\n";
    return 1;
  }
  artifacts::write_text_atomic(
      dir + "/report.csv",
      artifacts::report_csv(res.report, id, cfg.stage_a_steps + cfg.stage_b_steps));
  ckpt::save_state(res.state, canon, dir + "/final.ckpt");
  std::cout << "run " << id << " finished\n" << dir << "\n";
  for (const auto& [k, v] : res.report.values) std::cout << "  " << k << " = " << v << "\n";
  return 0;
}

int cmd_generate(const std::string& ckpt_path, int64_t n, uint64_t seed,
                 const std::string& out_flag) {
  if (n < 0) throw CliError{2, "--n must be nonnegative"};
  auto run = load_run(ckpt_path);
  Tensor<float> pts = model::generate<float>(n, run.state.bundle, seed);
  const std::string dir = out_root(out_flag);
  fs::create_directories(dir);
  artifacts::write_text_atomic(dir + "/generated.csv", artifacts::points_csv(pts));
  if (pts.shape[1] <= 3)
    artifacts::write_text_atomic(dir + "/generated.svg", artifacts::svg_scatter({&pts}));
  std::cout << dir << "/generated.csv\n";
  return 0;
}

int cmd_reconstruct(const std::string& ckpt_path, const std::string& input,
                    const std::string& out_flag) {
  auto run = load_run(ckpt_path);
  if (input.empty()) throw CliError{2, "an --input points CSV is required"};
  if (!fs::exists(input)) throw CliError{2, "input file not found: " + input};
  std::ifstream in(input, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  Tensor<float> X = parse_points_csv(ss.str());
  const int64_t d = run.state.bundle.E.in_dim();
  require(X.shape[1] == d, "reconstruct: input has " + std::to_string(X.shape[1]) +
                               " columns, model expects " + std::to_string(d));
  Tensor<float> xh = model::reconstruct(run.state.bundle, X);
  const std::string dir = out_root(out_flag);
  fs::create_directories(dir);
  artifacts::write_text_atomic(dir + "/reconstructed.csv",
                               artifacts::reconstruction_csv(X, xh));
  if (d <= 3)
    artifacts::write_text_atomic(dir + "/reconstructed.svg",
                                 artifacts::svg_scatter({&X, &xh}));
  std::cout << dir << "/reconstructed.csv\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& out_flag) {
  auto run = load_run(ckpt_path);
  data::DatasetSpec eval_spec = run.cfg.dataset;
  eval_spec.seed = run.cfg.dataset.seed + 1;
  eval_spec.n = run.cfg.eval_n;
  Tensor<float> X_eval = data::materialize<float>(eval_spec);
  auto rep = train::final_report(run.cfg, run.state.bundle, X_eval);
  const std::string id = config::run_id(config::parse_config_text(run.cfg_text));
  const std::string dir = out_root(out_flag);
  fs::create_directories(dir);
  artifacts::write_text_atomic(
      dir + "/report.csv",
      artifacts::report_csv(rep, id, run.cfg.stage_a_steps + run.cfg.stage_b_steps));
  for (const auto& [k, v] : rep.values) std::cout << k << " = " << v << "\n";
  return 0;
}

// --- probe: gradcheck ------------------------------------------------------

struct GradCase {
  std::string name;
  std::vector<Tensor<double>> inputs;
  std::function<NodeId(Tape<double>&, const std::vector<NodeId>&)> build;
  bool kinky = false;
  double tol = 1e-6;
};

double eval_case(const GradCase& c, const std::vector<Tensor<double>>& inputs,
                 std::vector<Tensor<double>>* analytic) {
  Tape<double> t;
  std::vector<NodeId> ids;
  for (const auto& in : inputs) ids.push_back(t.leaf(in));
  NodeId root = c.build(t, ids);
  double val = t.value(root)[0];
  if (analytic) {
    t.backward(root);
    analytic->clear();
    for (NodeId id : ids) analytic->push_back(t.grad(id));
  }
  return val;
}

std::vector<GradCase> gradcheck_cases() {
  auto rnd = [](std::vector<int64_t> shape, uint64_t stream, double lo = -1, double hi = 1) {
    Tensor<double> t(shape);
    Rng rng(12021, "gradcheck", stream);
    rng.fill_uniform(t, lo, hi);
    return t;
  };
  // mix the output coordinates so a transposed gradient cannot cancel out
  auto mix = [rnd](Tape<double>& t, NodeId x, uint64_t stream) {
    const auto& shape = t.value(x).shape;
    Tensor<double> w(shape);
    Rng rng(909, "gradcheck-mix", stream);
    rng.fill_uniform(w, -1, 1);
    return t.mean_all(t.mul(x, t.leaf(w)));
  };

  std::vector<GradCase> cases;
  cases.push_back({"matmul_bias_tanh",
                   {rnd({4, 3}, 1), rnd({3, 5}, 2), rnd({5}, 3)},
                   [mix](Tape<double>& t, const std::vector<NodeId>& i) {
                     return mix(t, t.tanh_(t.add_bias(t.matmul(i[0], i[1]), i[2])), 1);
                   }});
  cases.push_back({"mul_sigmoid",
                   {rnd({4, 4}, 4), rnd({4, 4}, 5)},
                   [mix](Tape<double>& t, const std::vector<NodeId>& i) {
                     return mix(t, t.sigmoid(t.mul(i[0], i[1])), 2);
                   }});
  cases.push_back({"exp_log",
                   {rnd({3, 4}, 6, 0.5, 1.5)},
                   [mix](Tape<double>& t, const std::vector<NodeId>& i) {
                     return mix(t, t.log_(t.exp_(i[0])), 3);
                   }});
  cases.push_back({"leaky_relu",
                   {rnd({5, 4}, 7)},
                   [mix](Tape<double>& t, const std::vector<NodeId>& i) {
                     return mix(t, t.leaky_relu(i[0], 0.2), 4);
                   },
                   true});
  cases.push_back({"relu_clamp",
                   {rnd({5, 4}, 8)},
                   [mix](Tape<double>& t, const std::vector<NodeId>& i) {
                     return mix(t, t.clamp(t.relu(i[0]), 0.1, 0.8), 5);
                   },
                   true});
  cases.push_back({"mean_var_sumsq",
                   {rnd({4, 3}, 9)},
                   [](Tape<double>& t, const std::vector<NodeId>& i) {
                     return t.add(t.add(t.mean_all(i[0]), t.var_all(i[0])),
                                  t.scale(t.sum_sq(i[0]), 0.1));
                   }});
  cases.push_back({"lerp_rowsum",
                   {rnd({4, 3}, 10), rnd({4, 3}, 11), rnd({4, 1}, 12, 0.1, 0.9)},
                   [mix](Tape<double>& t, const std::vector<NodeId>& i) {
                     return mix(t, t.row_sum(t.lerp(i[0], i[1], i[2])), 6);
                   }});
  cases.push_back({"batch_norm",
                   {rnd({6, 3}, 13)},
                   [mix](Tape<double>& t, const std::vector<NodeId>& i) {
                     return mix(t, t.batch_norm(i[0], 1e-8), 7);
                   },
                   false, 1e-5});
  cases.push_back({"batch_norm_shared",
                   {rnd({6, 3}, 14), rnd({6, 3}, 15)},
                   [mix](Tape<double>& t, const std::vector<NodeId>& i) {
                     return mix(t, t.batch_norm_shared(i[0], i[1], 1e-8), 8);
                   },
                   false, 1e-5});
  cases.push_back({"slice_reverse",
                   {rnd({5, 4}, 16)},
                   [mix](Tape<double>& t, const std::vector<NodeId>& i) {
                     return mix(t, t.reverse_rows(t.slice_cols(i[0], 1, 3)), 9);
                   }});
  return cases;
}

int probe_gradcheck(const std::string& out_flag) {
  std::string csv = "op,worst_rel,coverage,tol,pass\n";
  bool all_pass = true;
  for (auto& c : gradcheck_cases()) {
    std::vector<Tensor<double>> analytic;
    eval_case(c, c.inputs, &analytic);
    auto f = [&](const std::vector<Tensor<double>>& in) { return eval_case(c, in, nullptr); };
    FdReport rep = fd_compare<double>(f, c.inputs, analytic, 1e-5, 1e-8, c.kinky);
    bool pass = rep.max_rel_err < c.tol && rep.coverage() >= 0.9;
    all_pass = all_pass && pass;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%.3g,%.3f,%.1g,%d\n", c.name.c_str(), rep.max_rel_err,
                  rep.coverage(), c.tol, pass ? 1 : 0);
    csv += buf;
  }
  std::cout << csv;
  if (!out_flag.empty()) {
    fs::create_directories(out_flag);
    artifacts::write_text_atomic(out_flag + "/gradcheck.csv", csv);
  }
  return all_pass ? 0 : 1;
}

int probe_kl_blowup(const std::string& betas_arg, int64_t steps, int64_t n, uint64_t seed,
                    const std::string& out_flag) {
  std::vector<double> betas;
  std::stringstream ss(betas_arg);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      betas.push_back(std::stod(tok));
    } catch (...) {
      throw CliError{2, "--betas expects comma-separated numbers, got '" + tok + "'"};
    }
  }
  if (betas.empty()) throw CliError{2, "--betas expects at least one value"};
  Tensor<float> X({n, 1});
  Rng rng(seed, "probe-data");
  rng.fill_uniform(X, 0, 1);
  auto rows = vae::kl_blowup_probe(X, betas, steps, seed);
  std::string csv = vae::probe_csv(rows);
  std::cout << csv;
  if (!out_flag.empty()) {
    fs::create_directories(out_flag);
    artifacts::write_text_atomic(out_flag + "/kl_blowup.csv", csv);
  }
  return 0;
}

int probe_sphere(int64_t n, int64_t d, double r, uint64_t seed, const std::string& out_flag) {
  auto [emp, pred] = metrics::sphere_concentration_check(n, d, r, seed);
  char buf[200];
  std::snprintf(buf, sizeof(buf), "n,d,r,empirical,predicted\n%lld,%lld,%.10g,%.10g,%.10g\n",
                static_cast<long long>(n), static_cast<long long>(d), r, emp, pred);
  std::cout << buf;
  if (!out_flag.empty()) {
    fs::create_directories(out_flag);
    artifacts::write_text_atomic(out_flag + "/sphere.csv", buf);
  }
  return 0;
}

}  // namespace

Tensor<float> parse_points_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "points csv: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  int64_t d = 0;
  {
    std::stringstream hs(line);
    std::string col;
    while (std::getline(hs, col, ',')) {
      require(col == "x" + std::to_string(d),
              "points csv: header column " + std::to_string(d) + " is '" + col +
                  "', expected 'x" + std::to_string(d) + "'");
      ++d;
    }
    require(d > 0, "points csv: header names no columns");
  }
  std::vector<float> vals;
  int64_t rows = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    int64_t got = 0;
    while (std::getline(ls, cell, ',')) {
      try {
        vals.push_back(std::stof(cell));
      } catch (...) {
        throw std::invalid_argument("points csv: line " + std::to_string(lineno) +
                                    " has a non-numeric cell '" + cell + "'");
      }
      ++got;
    }
    require(got == d, "points csv: line " + std::to_string(lineno) + " has " +
                          std::to_string(got) + " cells, expected " + std::to_string(d));
    ++rows;
  }
  return Tensor<float>({rows, d}, std::move(vals));
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"autoencoder with adversarial interpolation + latent-mapping GAN"};
  app.require_subcommand(1);

  std::string config_path, out_flag, ckpt_path, input_path;
  std::vector<std::string> sets;
  std::optional<uint64_t> seed_flag;
  int64_t gen_n = 1000;
  uint64_t gen_seed = 1;

  auto* tr = app.add_subcommand("train", "run stage A + stage B per config");
  tr->add_option("--config", config_path, "key=value config file");
  tr->add_option("--set", sets, "override a config key (repeatable)");
  tr->add_option("--seed", seed_flag, "override the run seed");
  tr->add_option("--out", out_flag, "output root (default $LM_OUT_DIR or .)");

  auto* ge = app.add_subcommand("generate", "sample G(g(z)) from a checkpoint");
  ge->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  ge->add_option("--n", gen_n, "number of samples");
  ge->add_option("--seed", gen_seed, "prior seed");
  ge->add_option("--out", out_flag, "output directory");

  auto* re = app.add_subcommand("reconstruct", "autoencode rows of a points CSV");
  re->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  re->add_option("--input", input_path, "points CSV file")->required();
  re->add_option("--out", out_flag, "output directory");

  auto* ev = app.add_subcommand("eval", "recompute the metric report from a checkpoint");
  ev->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  ev->add_option("--out", out_flag, "output directory");

  auto* pr = app.add_subcommand("probe", "kl-blowup | sphere | gradcheck");
  std::string kind, betas = "1.0,0.3,0.1,0.03,0.01";
  int64_t p_steps = 500, p_n = 256, sp_n = 64, sp_d = 1024;
  double sp_r = 1.0;
  uint64_t p_seed = 1;
  pr->add_option("kind", kind, "probe kind")->required();
  pr->add_option("--betas", betas, "comma-separated KL weights");
  pr->add_option("--steps", p_steps, "training steps per beta");
  pr->add_option("--n", p_n, "sample count");
  pr->add_option("--d", sp_d, "sphere dimension");
  pr->add_option("--r", sp_r, "sphere radius");
  pr->add_option("--seed", p_seed, "probe seed");
  pr->add_option("--out", out_flag, "also write the CSV under this directory");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (tr->parsed()) return cmd_train(config_path, sets, seed_flag, out_flag);
    if (ge->parsed()) return cmd_generate(ckpt_path, gen_n, gen_seed, out_flag);
    if (re->parsed()) return cmd_reconstruct(ckpt_path, input_path, out_flag);
    if (ev->parsed()) return cmd_eval(ckpt_path, out_flag);
    if (pr->parsed()) {
      if (kind == "gradcheck") return probe_gradcheck(out_flag);
      if (kind == "kl-blowup") return probe_kl_blowup(betas, p_steps, p_n, p_seed, out_flag);
      if (kind == "sphere") {
        sp_n = pr->count("--n") ? p_n : sp_n;
        return probe_sphere(sp_n, sp_d, sp_r, p_seed, out_flag);
      }
      throw CliError{2, "unknown probe kind '" + kind +
                            "'; usage: lm probe kl-blowup|sphere|gradcheck [flags]"};
    }
  } catch (const CliError& e) {
    std::cerr << e.msg << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace lm::cli
