#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lm/train.hpp"

namespace lm::config {

// Flat key=value pairs in file order. '#' starts a comment, blank lines are
// skipped, duplicate keys are rejected with their line number.
struct KvConfig {
  std::vector<std::pair<std::string, std::string>> items;

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  void set(const std::string& key, const std::string& value);  // replace or append
};

KvConfig parse_config_text(const std::string& text);
KvConfig parse_config_file(const std::string& path);  // error message names the path

// Sorted key=value lines; the canonical bytes feed the run-id hash.
std::string canonical(const KvConfig& kv);
std::string run_id(const KvConfig& kv);  // fnv1a(canonical) hex + "-s" + seed

// Known keys <-> TrainConfig. Unknown keys and malformed values are rejected
// with the offending key named.
train::TrainConfig to_train_config(const KvConfig& kv);
KvConfig from_train_config(const train::TrainConfig& cfg);

}  // namespace lm::config
