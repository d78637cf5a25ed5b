#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lm/tensor.hpp"
#include "lm/train.hpp"

namespace lm::ckpt {

// On-disk layout: "LMCKPT v1\n", then one line per tensor
// "name dim0 [dim1 ...] byte_offset\n", a blank line, then the raw payload —
// little-endian float32 values concatenated in header order. Offsets are
// byte positions inside the payload and are authoritative on load (a
// hand-permuted header still reads correctly).
inline constexpr char kMagic[] = "LMCKPT v1";

struct NamedTensors {
  std::vector<std::pair<std::string, Tensor<float>>> items;

  bool has(const std::string& name) const;
  const Tensor<float>& get(const std::string& name) const;
  void add(const std::string& name, Tensor<float> t);  // duplicate names rejected
};

void save_checkpoint(const NamedTensors& table, const std::string& path);  // atomic
NamedTensors load_checkpoint(const std::string& path);

// Full training-state round trip: parameters, Adam moments, BN statistics,
// step counters / iterator cursors (the RNG state — all streams re-derive
// from seed and step), and the canonical config text.
NamedTensors state_to_table(const train::TrainState<float>& st, const std::string& cfg_text);

struct LoadedRun {
  train::TrainConfig cfg;
  std::string cfg_text;
  train::TrainState<float> state;
};

LoadedRun table_to_state(const NamedTensors& table);

void save_state(const train::TrainState<float>& st, const std::string& cfg_text,
                const std::string& path);
LoadedRun load_state(const std::string& path);

}  // namespace lm::ckpt
