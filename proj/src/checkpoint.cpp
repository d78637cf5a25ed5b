#include "lm/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lm/config.hpp"

namespace lm::ckpt {

namespace {

void append_le32(std::string& out, float v) {
  uint32_t u = std::bit_cast<uint32_t>(v);
  out.push_back(static_cast<char>(u & 0xff));
  out.push_back(static_cast<char>((u >> 8) & 0xff));
  out.push_back(static_cast<char>((u >> 16) & 0xff));
  out.push_back(static_cast<char>((u >> 24) & 0xff));
}

float read_le32(const std::string& payload, size_t at) {
  uint32_t u = static_cast<uint8_t>(payload[at]) |
               (static_cast<uint32_t>(static_cast<uint8_t>(payload[at + 1])) << 8) |
               (static_cast<uint32_t>(static_cast<uint8_t>(payload[at + 2])) << 16) |
               (static_cast<uint32_t>(static_cast<uint8_t>(payload[at + 3])) << 24);
  return std::bit_cast<float>(u);
}

Tensor<float> i64_tensor(std::initializer_list<int64_t> vals) {
  Tensor<float> t({static_cast<int64_t>(vals.size())});
  int64_t i = 0;
  // counters stay far below 2^24, where float32 is exact on integers
  for (int64_t v : vals) t[i++] = static_cast<float>(v);
  return t;
}

int64_t as_i64(const Tensor<float>& t, int64_t i) {
  return static_cast<int64_t>(t[i]);
}

void add_mlp(NamedTensors& tab, const std::string& prefix, const nn::Mlp<float>& net) {
  for (size_t i = 0; i < net.layers.size(); ++i) {
    tab.add(prefix + "/layer" + std::to_string(i) + "/w", net.layers[i].w);
    tab.add(prefix + "/layer" + std::to_string(i) + "/b", net.layers[i].b);
  }
}

void load_mlp(const NamedTensors& tab, const std::string& prefix, nn::Mlp<float>& net) {
  for (size_t i = 0; i < net.layers.size(); ++i) {
    for (auto [suffix, dst] : {std::pair{"/w", &net.layers[i].w}, {"/b", &net.layers[i].b}}) {
      const std::string name = prefix + "/layer" + std::to_string(i) + suffix;
      const Tensor<float>& src = tab.get(name);
      require(src.shape == dst->shape, "checkpoint: tensor '" + name + "' has shape " +
                                           shape_str(src.shape) + ", model expects " +
                                           shape_str(dst->shape));
      *dst = src;
    }
  }
}

void add_adam(NamedTensors& tab, const std::string& prefix, const nn::Adam<float>& opt) {
  tab.add(prefix + "/t", i64_tensor({opt.t()}));
  for (size_t i = 0; i < opt.moment1().size(); ++i) {
    tab.add(prefix + "/m" + std::to_string(i), opt.moment1()[i]);
    tab.add(prefix + "/v" + std::to_string(i), opt.moment2()[i]);
  }
}

void load_adam(const NamedTensors& tab, const std::string& prefix, nn::Adam<float>& opt,
               size_t n_params) {
  int64_t t = as_i64(tab.get(prefix + "/t"), 0);
  if (t == 0) return;  // fresh optimizer: moments not yet allocated
  std::vector<Tensor<float>> m, v;
  for (size_t i = 0; i < n_params; ++i) {
    m.push_back(tab.get(prefix + "/m" + std::to_string(i)));
    v.push_back(tab.get(prefix + "/v" + std::to_string(i)));
  }
  opt.restore(t, std::move(m), std::move(v));
}

}  // namespace

bool NamedTensors::has(const std::string& name) const {
  for (const auto& [k, t] : items)
    if (k == name) return true;
  return false;
}

const Tensor<float>& NamedTensors::get(const std::string& name) const {
  for (const auto& [k, t] : items)
    if (k == name) return t;
  throw std::invalid_argument("checkpoint: missing tensor '" + name + "'");
}

void NamedTensors::add(const std::string& name, Tensor<float> t) {
  require(!name.empty() && name.find(' ') == std::string::npos &&
              name.find('\n') == std::string::npos,
          "checkpoint: tensor name '" + name + "' must be non-empty without spaces");
  require(!has(name), "checkpoint: duplicate tensor '" + name + "'");
  items.emplace_back(name, std::move(t));
}

void save_checkpoint(const NamedTensors& table, const std::string& path) {
  std::string header = std::string(kMagic) + "\n";
  std::string payload;
  for (const auto& [name, t] : table.items) {
    header += name;
    for (int64_t d : t.shape) header += " " + std::to_string(d);
    header += " " + std::to_string(payload.size()) + "\n";
    for (int64_t i = 0; i < t.numel(); ++i) append_le32(payload, t[i]);
  }
  header += "\n";

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), "checkpoint: cannot write " + tmp);
    out << header << payload;
    require(out.good(), "checkpoint: short write to " + tmp);
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0,
          "checkpoint: cannot move " + tmp + " into place");
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "checkpoint: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string raw = ss.str();

  size_t pos = raw.find('\n');
  require(pos != std::string::npos, "checkpoint: missing header line in " + path);
  std::string version = raw.substr(0, pos);
  require(version == kMagic, "checkpoint: file reports version '" + version +
                                 "', this build reads '" + kMagic + "'");

  struct Entry {
    std::string name;
    std::vector<int64_t> shape;
    size_t offset;
  };
  std::vector<Entry> entries;
  size_t cursor = pos + 1;
  while (true) {
    size_t eol = raw.find('\n', cursor);
    require(eol != std::string::npos, "checkpoint: header not terminated by a blank line");
    std::string line = raw.substr(cursor, eol - cursor);
    cursor = eol + 1;
    if (line.empty()) break;

    std::istringstream ls(line);
    Entry e;
    std::vector<std::string> tok;
    std::string w;
    while (ls >> w) tok.push_back(w);
    require(tok.size() >= 3, "checkpoint: malformed header line '" + line + "'");
    e.name = tok.front();
    try {
      for (size_t i = 1; i + 1 < tok.size(); ++i) e.shape.push_back(std::stoll(tok[i]));
      e.offset = static_cast<size_t>(std::stoull(tok.back()));
    } catch (...) {
      throw std::invalid_argument("checkpoint: malformed header line '" + line + "'");
    }
    entries.push_back(std::move(e));
  }

  const std::string payload = raw.substr(cursor);
  NamedTensors table;
  size_t max_extent = 0;
  for (const auto& e : entries) {
    Tensor<float> t(e.shape);
    size_t bytes = static_cast<size_t>(t.numel()) * 4;
    require(e.offset + bytes <= payload.size(),
            "checkpoint: tensor '" + e.name + "' needs bytes [" + std::to_string(e.offset) +
                ", " + std::to_string(e.offset + bytes) + ") but the payload holds only " +
                std::to_string(payload.size()) + " bytes");
    for (int64_t i = 0; i < t.numel(); ++i)
      t[i] = read_le32(payload, e.offset + static_cast<size_t>(i) * 4);
    table.add(e.name, std::move(t));
    max_extent = std::max(max_extent, e.offset + bytes);
  }
  require(payload.size() == max_extent,
          "checkpoint: payload has " + std::to_string(payload.size() - max_extent) +
              " trailing byte(s) past the last tensor");
  return table;
}

NamedTensors state_to_table(const train::TrainState<float>& st, const std::string& cfg_text) {
  NamedTensors tab;
  Tensor<float> text({static_cast<int64_t>(cfg_text.size())});
  for (size_t i = 0; i < cfg_text.size(); ++i)
    text[static_cast<int64_t>(i)] = static_cast<float>(static_cast<uint8_t>(cfg_text[i]));
  tab.add("cfg/text", std::move(text));

  add_mlp(tab, "E", st.bundle.E);
  add_mlp(tab, "G", st.bundle.G);
  add_mlp(tab, "d", st.bundle.d);
  add_mlp(tab, "g", st.bundle.g);
  add_mlp(tab, "D", st.bundle.D);
  tab.add("bn/run_mean", st.bundle.bn.run_mean);
  tab.add("bn/run_var", st.bundle.bn.run_var);
  tab.add("bn/trained", i64_tensor({st.bundle.bn.trained ? 1 : 0}));
  add_adam(tab, "opt_ae", st.opt_ae);
  add_adam(tab, "opt_critic", st.opt_critic);
  add_adam(tab, "opt_g", st.opt_g);
  add_adam(tab, "opt_D", st.opt_D);
  tab.add("train/counters", i64_tensor({st.step_a, st.step_b, st.it_epoch, st.it_cursor,
                                        st.itb_epoch, st.itb_cursor}));
  Tensor<float> base({1});
  base[0] = static_cast<float>(st.sw2_baseline);
  tab.add("train/sw2_baseline", std::move(base));
  return tab;
}

LoadedRun table_to_state(const NamedTensors& table) {
  const Tensor<float>& text = table.get("cfg/text");
  std::string cfg_text(static_cast<size_t>(text.numel()), '\0');
  for (int64_t i = 0; i < text.numel(); ++i)
    cfg_text[static_cast<size_t>(i)] = static_cast<char>(static_cast<uint8_t>(text[i]));

  auto kv = config::parse_config_text(cfg_text);
  train::TrainConfig cfg = config::to_train_config(kv);
  const int64_t d_data = table.get("E/layer0/w").shape[0];

  LoadedRun run{cfg, cfg_text, train::make_state<float>(cfg, d_data)};
  auto& st = run.state;
  load_mlp(table, "E", st.bundle.E);
  load_mlp(table, "G", st.bundle.G);
  load_mlp(table, "d", st.bundle.d);
  load_mlp(table, "g", st.bundle.g);
  load_mlp(table, "D", st.bundle.D);
  st.bundle.bn.run_mean = table.get("bn/run_mean");
  st.bundle.bn.run_var = table.get("bn/run_var");
  st.bundle.bn.trained = as_i64(table.get("bn/trained"), 0) != 0;
  load_adam(table, "opt_ae", st.opt_ae, st.bundle.E.params().size() + st.bundle.G.params().size());
  load_adam(table, "opt_critic", st.opt_critic, st.bundle.d.params().size());
  load_adam(table, "opt_g", st.opt_g, st.bundle.g.params().size());
  load_adam(table, "opt_D", st.opt_D, st.bundle.D.params().size());
  const Tensor<float>& c = table.get("train/counters");
  require(c.numel() == 6, "checkpoint: train/counters must hold 6 values");
  st.step_a = as_i64(c, 0);
  st.step_b = as_i64(c, 1);
  st.it_epoch = as_i64(c, 2);
  st.it_cursor = as_i64(c, 3);
  st.itb_epoch = as_i64(c, 4);
  st.itb_cursor = as_i64(c, 5);
  st.sw2_baseline = table.get("train/sw2_baseline")[0];
  return run;
}

void save_state(const train::TrainState<float>& st, const std::string& cfg_text,
                const std::string& path) {
  save_checkpoint(state_to_table(st, cfg_text), path);
}

LoadedRun load_state(const std::string& path) {
  return table_to_state(load_checkpoint(path));
}

}  // namespace lm::ckpt
