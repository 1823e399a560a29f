#pragma once

#include <map>
#include <string>
#include <vector>

#include "msvit/model.hpp"
#include "msvit/train.hpp"

namespace msvit {

// Plain-text config: one dotted `key = value` per line, `#` comments,
// blank lines ignored. Duplicate keys are an error. The map's natural key
// order is the canonical serialization.
using KvMap = std::map<std::string, std::string>;

KvMap parse_config_text(const std::string& text, const std::string& source);
KvMap load_config_file(const std::string& file);
std::string config_text(const KvMap& kv);

// Named built-in profiles (also shipped under configs/). Unknown name lists
// the valid ones in the error.
std::vector<std::string> profile_names();
KvMap profile_config(const std::string& name);

// Builds a ModelConfig from the `model.*` keys, consuming them from `kv`.
// Unknown `model.*` keys, bad values and validation failures are all
// collected into a single error.
ModelConfig model_config_from_kv(KvMap& kv);
// The inverse: every model.* key, canonical values.
KvMap model_config_to_kv(const ModelConfig& cfg);

// Training keys (`train.*`), defaults applied.
TrainOptions train_options_from_kv(KvMap& kv);
KvMap train_options_to_kv(const TrainOptions& opt);

// After the typed extractions, any keys left in `kv` are unknown: error.
void reject_unknown_keys(const KvMap& kv, const std::string& source);

// Layered resolution: profile (optional) <- config file (optional) <-
// command-line overrides; later layers win per key.
KvMap merge_configs(const KvMap& base, const KvMap& over);

// FNV-1a over the resolved canonical text; printed by inspect.
uint64_t config_hash(const KvMap& kv);

}  // namespace msvit
