#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lm/artifacts.hpp"
#include "lm/checkpoint.hpp"
#include "lm/cli.hpp"
#include "lm/config.hpp"

namespace fs = std::filesystem;
using lm::Tensor;
namespace cfg = lm::config;
namespace ck = lm::ckpt;
namespace art = lm::artifacts;
namespace tr = lm::train;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("lm_cli_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
}

tr::TrainConfig tiny_cfg() {
  tr::TrainConfig c;
  c.dataset.kind = lm::data::DatasetSpec::Kind::SwissRoll2d;
  c.dataset.n = 96;
  c.hp.batch = 16;
  c.width = 8;
  c.depth = 2;
  c.stage_a_steps = 6;
  c.stage_b_steps = 6;
  c.eval_interval = 3;
  c.eval_n = 48;
  c.sw2_projections = 8;
  c.seed = 11;
  return c;
}

const char* kTinyText =
    "data.kind=swiss2d\ndata.n=96\nmodel.batch=16\nmodel.width=8\nmodel.depth=2\n"
    "train.stage_a_steps=6\ntrain.stage_b_steps=6\ntrain.eval_interval=3\n"
    "train.eval_n=48\ntrain.sw2_projections=8\nseed=11\n";

}  // namespace

TEST_CASE("config: comments, blanks, trimming, errors with line numbers") {
  auto kv = cfg::parse_config_text("# top comment\n\n  seed = 7  # trailing\nhp.lambda=0.3\n");
  CHECK(kv.get("seed") == "7");
  CHECK(kv.get("hp.lambda") == "0.3");
  CHECK(kv.items.size() == 2);

  CHECK_THROWS_WITH_AS((void)cfg::parse_config_text("a=1\nnonsense\n"),
                       doctest::Contains("line 2"), std::invalid_argument);
  CHECK_THROWS_WITH_AS((void)cfg::parse_config_text("a=1\na=2\n"), doctest::Contains("line 2"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS((void)cfg::parse_config_text("=5\n"), doctest::Contains("line 1"),
                       std::invalid_argument);
  CHECK_THROWS_AS((void)kv.get("missing"), std::invalid_argument);
}

TEST_CASE("config: unknown keys and malformed values name the key") {
  CHECK_THROWS_WITH_AS((void)cfg::to_train_config(cfg::parse_config_text("hp.lambdo=0.2\n")),
                       doctest::Contains("hp.lambdo"), std::invalid_argument);
  CHECK_THROWS_WITH_AS((void)cfg::to_train_config(cfg::parse_config_text("model.dz=two\n")),
                       doctest::Contains("model.dz"), std::invalid_argument);
  CHECK_THROWS_WITH_AS((void)cfg::to_train_config(cfg::parse_config_text("data.kind=mnist\n")),
                       doctest::Contains("data.kind"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      (void)cfg::to_train_config(cfg::parse_config_text("hp.bn_enabled=maybe\n")),
      doctest::Contains("hp.bn_enabled"), std::invalid_argument);
}

TEST_CASE("config: round trip through text preserves every field") {
  auto c = tiny_cfg();
  c.hp.lambda = 0.31;
  c.hp.bn_enabled = false;
  c.critic_enabled = false;
  c.lr_g = 5e-4;
  auto kv = cfg::from_train_config(c);
  auto c2 = cfg::to_train_config(cfg::parse_config_text(cfg::canonical(kv)));
  CHECK(cfg::canonical(cfg::from_train_config(c2)) == cfg::canonical(kv));
  CHECK(c2.hp.lambda == c.hp.lambda);
  CHECK(c2.hp.bn_enabled == c.hp.bn_enabled);
  CHECK(c2.critic_enabled == c.critic_enabled);
  CHECK(c2.lr_g == c.lr_g);
  CHECK(c2.seed == c.seed);
}

TEST_CASE("config: canonical form sorts keys; run id is content-addressed") {
  auto a = cfg::parse_config_text("seed=11\ndata.n=96\n");
  auto b = cfg::parse_config_text("data.n=96\nseed=11\n");
  CHECK(cfg::canonical(a) == cfg::canonical(b));
  CHECK(cfg::run_id(a) == cfg::run_id(b));
  CHECK(cfg::run_id(a).find("-s11") != std::string::npos);
  auto c = cfg::parse_config_text("data.n=97\nseed=11\n");
  CHECK(cfg::run_id(a) != cfg::run_id(c));
}

TEST_CASE("checkpoint: byte-exact round trip through disk") {
  TempDir tmp;
  ck::NamedTensors tab;
  lm::Rng rng(5, "ckpt");
  Tensor<float> a({3, 4});
  rng.fill_normal(a);
  Tensor<float> b({7});
  rng.fill_uniform(b, -2, 2);
  tab.add("net/w", a);
  tab.add("net/b", b);
  CHECK_THROWS_AS(tab.add("net/w", a), std::invalid_argument);
  CHECK_THROWS_AS(tab.add("bad name", a), std::invalid_argument);

  ck::save_checkpoint(tab, tmp.file("t.ckpt"));
  auto back = ck::load_checkpoint(tmp.file("t.ckpt"));
  REQUIRE(back.items.size() == 2);
  CHECK(back.get("net/w").shape == a.shape);
  CHECK(back.get("net/w").data == a.data);
  CHECK(back.get("net/b").data == b.data);
  CHECK_THROWS_AS((void)back.get("nope"), std::invalid_argument);
}

TEST_CASE("checkpoint: corrupt files produce distinct, specific errors") {
  TempDir tmp;
  ck::NamedTensors tab;
  Tensor<float> a({2, 2}, {1, 2, 3, 4});
  tab.add("w", a);
  const std::string path = tmp.file("t.ckpt");
  ck::save_checkpoint(tab, path);
  const std::string good = slurp(path);

  SUBCASE("version mismatch names both versions") {
    spit(path, "LMCKPT v2\n" + good.substr(good.find('\n') + 1));
    CHECK_THROWS_WITH_AS((void)ck::load_checkpoint(path), doctest::Contains("LMCKPT v2"),
                         std::invalid_argument);
    try {
      (void)ck::load_checkpoint(path);
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find("LMCKPT v1") != std::string::npos);
    }
  }
  SUBCASE("truncated payload names the expected byte range") {
    spit(path, good.substr(0, good.size() - 1));
    CHECK_THROWS_WITH_AS((void)ck::load_checkpoint(path), doctest::Contains("16"),
                         std::invalid_argument);
  }
  SUBCASE("trailing bytes are rejected") {
    spit(path, good + std::string(4, '\0'));
    CHECK_THROWS_WITH_AS((void)ck::load_checkpoint(path), doctest::Contains("trailing"),
                         std::invalid_argument);
  }
  SUBCASE("missing file names the path") {
    CHECK_THROWS_WITH_AS((void)ck::load_checkpoint(tmp.file("absent.ckpt")),
                         doctest::Contains("absent.ckpt"), std::invalid_argument);
  }
}

TEST_CASE("checkpoint: offsets are authoritative when header lines are permuted") {
  TempDir tmp;
  ck::NamedTensors tab;
  tab.add("first", Tensor<float>({2}, {10, 20}));
  tab.add("second", Tensor<float>({3}, {1, 2, 3}));
  const std::string path = tmp.file("t.ckpt");
  ck::save_checkpoint(tab, path);

  // swap the two tensor lines by hand
  std::string raw = slurp(path);
  size_t l1 = raw.find('\n') + 1;
  size_t l2 = raw.find('\n', l1) + 1;
  size_t l3 = raw.find('\n', l2) + 1;
  spit(path, raw.substr(0, l1) + raw.substr(l2, l3 - l2) + raw.substr(l1, l2 - l1) +
                 raw.substr(l3));

  auto back = ck::load_checkpoint(path);
  CHECK(back.get("first").data == std::vector<float>{10, 20});
  CHECK(back.get("second").data == std::vector<float>{1, 2, 3});
}

TEST_CASE("checkpoint: mid-run save/reload continues bit-exactly") {
  auto c = tiny_cfg();
  Tensor<float> X = lm::data::materialize<float>(c.dataset);

  auto full = tr::make_state<float>(c, X.shape[1]);
  tr::RunLog log_full;
  REQUIRE(tr::train_stage_a(c, full, X, log_full));
  REQUIRE(tr::train_stage_b(c, full, X, log_full));

  auto part = tr::make_state<float>(c, X.shape[1]);
  tr::RunLog log1;
  auto c_half = c;
  c_half.stage_a_steps = 3;
  REQUIRE(tr::train_stage_a(c_half, part, X, log1));

  TempDir tmp;
  const std::string text = cfg::canonical(cfg::from_train_config(c));
  ck::save_state(part, text, tmp.file("mid.ckpt"));
  auto loaded = ck::load_state(tmp.file("mid.ckpt"));
  CHECK(loaded.cfg_text == text);
  CHECK(loaded.state.step_a == 3);

  tr::RunLog log2;
  REQUIRE(tr::train_stage_a(loaded.cfg, loaded.state, X, log2));
  REQUIRE(tr::train_stage_b(loaded.cfg, loaded.state, X, log2));

  for (size_t li = 0; li < 5; ++li) {
    CHECK(full.bundle.E.layers[0].w.data == loaded.state.bundle.E.layers[0].w.data);
    CHECK(full.bundle.G.layers[0].w.data == loaded.state.bundle.G.layers[0].w.data);
    CHECK(full.bundle.d.layers[0].w.data == loaded.state.bundle.d.layers[0].w.data);
    CHECK(full.bundle.g.layers[0].w.data == loaded.state.bundle.g.layers[0].w.data);
    CHECK(full.bundle.D.layers[0].w.data == loaded.state.bundle.D.layers[0].w.data);
  }
  CHECK(full.bundle.bn.run_mean.data == loaded.state.bundle.bn.run_mean.data);
  CHECK(full.bundle.bn.run_var.data == loaded.state.bundle.bn.run_var.data);

  // losses after the reload match the uninterrupted run's tail entry by entry
  auto tail = [](const tr::RunLog& lg, size_t from) {
    std::vector<double> v;
    for (size_t i = from; i < lg.entries.size(); ++i) v.push_back(lg.entries[i].value);
    return v;
  };
  CHECK(tail(log2, 0) == tail(log_full, log1.entries.size()));
}

TEST_CASE("artifacts: points csv round trip, empty set gives header only") {
  Tensor<float> pts({3, 2});
  lm::Rng rng(8, "pts");
  rng.fill_uniform(pts, -3, 3);
  std::string csv = art::points_csv(pts);
  CHECK(csv.substr(0, 6) == "x0,x1\n");
  Tensor<float> back = lm::cli::parse_points_csv(csv);
  CHECK(back.shape == pts.shape);
  CHECK(back.data == pts.data);  // %.9g round-trips float32 exactly

  Tensor<float> none({0, 3});
  CHECK(art::points_csv(none) == "x0,x1,x2\n");
  Tensor<float> parsed = lm::cli::parse_points_csv("x0,x1,x2\n");
  CHECK(parsed.shape == std::vector<int64_t>{0, 3});
}

TEST_CASE("artifacts: points csv parser rejects malformed input precisely") {
  CHECK_THROWS_WITH_AS((void)lm::cli::parse_points_csv("y0,y1\n1,2\n"),
                       doctest::Contains("header"), std::invalid_argument);
  CHECK_THROWS_WITH_AS((void)lm::cli::parse_points_csv("x0,x1\n1,2\n3\n"),
                       doctest::Contains("line 3"), std::invalid_argument);
  CHECK_THROWS_WITH_AS((void)lm::cli::parse_points_csv("x0\n1\nfoo\n"),
                       doctest::Contains("line 3"), std::invalid_argument);
}

TEST_CASE("artifacts: per-row mse column averages to the aggregate metric") {
  Tensor<float> x({4, 3}), xh({4, 3});
  lm::Rng rng(9, "recon");
  rng.fill_uniform(x, -1, 1);
  rng.fill_uniform(xh, -1, 1);
  std::string csv = art::reconstruction_csv(x, xh);
  CHECK(csv.substr(0, csv.find('\n')) == "x0,x1,x2,xr0,xr1,xr2,row_mse");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  double sum = 0;
  int rows = 0;
  while (std::getline(in, line)) {
    sum += std::stod(line.substr(line.rfind(',') + 1));
    ++rows;
  }
  CHECK(rows == 4);
  CHECK(sum / rows == doctest::Approx(lm::metrics::mse_metric(x, xh)).epsilon(1e-6));
}

TEST_CASE("artifacts: svg scatter emits both groups with distinct fills") {
  Tensor<float> a({2, 2}, {0, 0, 1, 1});
  Tensor<float> b({1, 2}, {0.5, 0.5});
  std::string svg = art::svg_scatter({&a, &b});
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("#9e9e9e") != std::string::npos);
  CHECK(svg.find("#1f77b4") != std::string::npos);
  // three points, three circles
  size_t count = 0;
  for (size_t at = svg.find("<circle"); at != std::string::npos;
       at = svg.find("<circle", at + 1))
    ++count;
  CHECK(count == 3);
  std::string lone = art::svg_scatter({&b});
  CHECK(lone.find("#1f77b4") != std::string::npos);
  CHECK(lone.find("#9e9e9e") == std::string::npos);
}

TEST_CASE("cli: missing config file exits 2") {
  CHECK(lm::cli::run_cli({"train", "--config", "/nonexistent/cfg.txt"}) == 2);
  CHECK(lm::cli::run_cli({"generate", "--ckpt", "/nonexistent/x.ckpt", "--n", "2"}) == 2);
  CHECK(lm::cli::run_cli({"probe", "wat"}) == 2);
  CHECK(lm::cli::run_cli({"frobnicate"}) == 2);
}

TEST_CASE("cli: train writes content-addressed artifacts deterministically") {
  TempDir tmp;
  spit(tmp.file("cfg.txt"), kTinyText);

  CHECK(lm::cli::run_cli({"train", "--config", tmp.file("cfg.txt"), "--out",
                          tmp.file("r1")}) == 0);
  CHECK(lm::cli::run_cli({"train", "--config", tmp.file("cfg.txt"), "--out",
                          tmp.file("r2")}) == 0);

  std::string dir;
  for (const auto& e : fs::directory_iterator(tmp.file("r1"))) dir = e.path().filename();
  REQUIRE(!dir.empty());
  CHECK(dir.find("-s11") != std::string::npos);
  CHECK(fs::exists(tmp.file("r2") + "/" + dir));  // same config hash, same name
  for (const char* f : {"runlog.csv", "report.csv", "final.ckpt", "last.ckpt"})
    CHECK(fs::exists(tmp.file("r1") + "/" + dir + "/" + f));
  CHECK(slurp(tmp.file("r1") + "/" + dir + "/report.csv") ==
        slurp(tmp.file("r2") + "/" + dir + "/report.csv"));
  CHECK(slurp(tmp.file("r1") + "/" + dir + "/report.csv").substr(0, 22) == "run_id,step,key,value\n");
}

TEST_CASE("cli: seed flag beats the config file value") {
  TempDir tmp;
  spit(tmp.file("cfg.txt"), kTinyText);
  CHECK(lm::cli::run_cli({"train", "--config", tmp.file("cfg.txt"), "--seed", "9", "--out",
                          tmp.file("out")}) == 0);
  std::string dir;
  for (const auto& e : fs::directory_iterator(tmp.file("out"))) dir = e.path().filename();
  CHECK(dir.find("-s9") != std::string::npos);
}

TEST_CASE("cli: generate honors n=0 and repeats byte-identically under one seed") {
  TempDir tmp;
  spit(tmp.file("cfg.txt"), kTinyText);
  REQUIRE(lm::cli::run_cli({"train", "--config", tmp.file("cfg.txt"), "--out",
                            tmp.file("out")}) == 0);
  std::string ckpt;
  for (const auto& e : fs::directory_iterator(tmp.file("out")))
    ckpt = (e.path() / "final.ckpt").string();

  CHECK(lm::cli::run_cli({"generate", "--ckpt", ckpt, "--n", "0", "--out",
                          tmp.file("g0")}) == 0);
  CHECK(slurp(tmp.file("g0") + "/generated.csv") == "x0,x1\n");

  CHECK(lm::cli::run_cli({"generate", "--ckpt", ckpt, "--n", "17", "--seed", "4", "--out",
                          tmp.file("ga")}) == 0);
  CHECK(lm::cli::run_cli({"generate", "--ckpt", ckpt, "--n", "17", "--seed", "4", "--out",
                          tmp.file("gb")}) == 0);
  CHECK(slurp(tmp.file("ga") + "/generated.csv") == slurp(tmp.file("gb") + "/generated.csv"));
  CHECK(fs::exists(tmp.file("ga") + "/generated.svg"));

  // reconstruct round trip over the generated cloud cross-checks the mse paths
  CHECK(lm::cli::run_cli({"reconstruct", "--ckpt", ckpt, "--input",
                          tmp.file("ga") + "/generated.csv", "--out", tmp.file("rc")}) == 0);
  Tensor<float> pts = lm::cli::parse_points_csv(slurp(tmp.file("ga") + "/generated.csv"));
  auto run = ck::load_state(ckpt);
  Tensor<float> xh = lm::model::reconstruct(run.state.bundle, pts);
  double agg = lm::metrics::mse_metric(pts, xh);
  std::istringstream in(slurp(tmp.file("rc") + "/reconstructed.csv"));
  std::string line;
  std::getline(in, line);
  double sum = 0;
  int rows = 0;
  while (std::getline(in, line)) {
    sum += std::stod(line.substr(line.rfind(',') + 1));
    ++rows;
  }
  REQUIRE(rows == 17);
  CHECK(sum / rows == doctest::Approx(agg).epsilon(1e-5));
}

TEST_CASE("cli: LM_OUT_DIR provides the default output root") {
  TempDir tmp;
  spit(tmp.file("cfg.txt"), kTinyText);
  setenv("LM_OUT_DIR", tmp.file("envroot").c_str(), 1);
  CHECK(lm::cli::run_cli({"train", "--config", tmp.file("cfg.txt")}) == 0);
  unsetenv("LM_OUT_DIR");
  bool found = false;
  for (const auto& e : fs::directory_iterator(tmp.file("envroot")))
    found = found || fs::exists(e.path() / "final.ckpt");
  CHECK(found);
}

TEST_CASE("cli: probe sphere emits one csv row with both values") {
  TempDir tmp;
  CHECK(lm::cli::run_cli({"probe", "sphere", "--n", "4", "--d", "64", "--seed", "3", "--out",
                          tmp.file("p")}) == 0);
  std::string csv = slurp(tmp.file("p") + "/sphere.csv");
  CHECK(csv.substr(0, 27) == "n,d,r,empirical,predicted\n4");
}
