#pragma once

// Run configuration: a flat JSON object merging model and training settings
// with the data location. Unknown keys are rejected.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "idsp/error.hpp"
#include "idsp/model.hpp"
#include "idsp/training.hpp"

namespace idsp {

struct RunConfig {
  std::filesystem::path data_dir;
  bool impute_missing = false;
  ModelConfig model;
  TrainConfig train;
};

namespace detail {

template <typename T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw UsageError(std::string("config: key '") + key + "' has the wrong type");
  }
}

}  // namespace detail

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{
      "data_dir",     "impute_missing",     "d_hidden",       "layers",
      "mlp_hidden",   "decoder_rank",       "learn_edge_weights", "epochs",
      "batch_size",   "lr",                 "weight_decay",   "folds",
      "test_fold",    "setting",            "inductive_fraction", "holdout_mode",
      "early_stop_patience", "fit_all",     "zscore",         "undirected_genes",
      "prune",        "pearson_per_cell_line", "threads",     "seed"};
  return keys;
}

/// Applies the keys present in `j` on top of `c`. Relative data_dir values
/// are resolved against `base`.
inline void apply_config(RunConfig& c, const nlohmann::json& j, const std::filesystem::path& base = {}) {
  if (!j.is_object()) throw UsageError("config: top level must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!config_keys().contains(key)) throw UsageError("config: unknown key '" + key + "'");
  }
  if (j.contains("data_dir")) {
    std::string dir;
    detail::take(j, "data_dir", dir);
    c.data_dir = std::filesystem::path(dir).is_absolute() || base.empty() ? std::filesystem::path(dir) : base / dir;
  }
  detail::take(j, "impute_missing", c.impute_missing);
  detail::take(j, "d_hidden", c.model.d_hidden);
  detail::take(j, "layers", c.model.layers);
  detail::take(j, "mlp_hidden", c.model.mlp_hidden);
  detail::take(j, "decoder_rank", c.model.decoder_rank);
  detail::take(j, "learn_edge_weights", c.model.learn_edge_weights);
  detail::take(j, "epochs", c.train.epochs);
  detail::take(j, "batch_size", c.train.batch_size);
  detail::take(j, "lr", c.train.lr);
  detail::take(j, "weight_decay", c.train.weight_decay);
  detail::take(j, "folds", c.train.folds);
  detail::take(j, "test_fold", c.train.test_fold);
  if (j.contains("setting")) {
    std::string s;
    detail::take(j, "setting", s);
    c.train.setting = parse_setting(s);
  }
  detail::take(j, "inductive_fraction", c.train.inductive_fraction);
  if (j.contains("holdout_mode")) {
    std::string s;
    detail::take(j, "holdout_mode", s);
    c.train.holdout_mode = parse_holdout_mode(s);
  }
  detail::take(j, "early_stop_patience", c.train.early_stop_patience);
  detail::take(j, "fit_all", c.train.fit_all);
  detail::take(j, "zscore", c.train.zscore);
  detail::take(j, "undirected_genes", c.train.undirected_genes);
  detail::take(j, "prune", c.train.prune);
  detail::take(j, "pearson_per_cell_line", c.train.pearson_per_cell_line);
  detail::take(j, "threads", c.train.threads);
  if (j.contains("seed")) {
    std::uint64_t seed = 0;
    detail::take(j, "seed", seed);
    c.train.seed = seed;
    c.model.seed = seed;
  }
}

inline RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot open config " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config " + file.string() + ": " + e.what());
  }
  RunConfig c;
  apply_config(c, j, file.parent_path());
  return c;
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json(c.train);
  const nlohmann::json m = nlohmann::json(c.model);
  for (const char* k : {"d_hidden", "layers", "mlp_hidden", "decoder_rank", "learn_edge_weights"}) j[k] = m[k];
  j["data_dir"] = c.data_dir.generic_string();
  j["impute_missing"] = c.impute_missing;
  return j;
}

}  // namespace idsp
