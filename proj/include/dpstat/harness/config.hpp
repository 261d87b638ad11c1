/*
 * Copyright 2026 The dpstat Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dpstat/core/types.hpp"
#include "dpstat/harness/synthetic.hpp"

namespace dpstat {

using json = nlohmann::json;

enum class Algorithm { spiderboost, tree_spider, rr_noisy_gd, rr_phased_sgd, jl_spiderboost, jl_rr };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::spiderboost: return "spiderboost";
    case Algorithm::tree_spider: return "tree_spider";
    case Algorithm::rr_noisy_gd: return "rr_noisy_gd";
    case Algorithm::rr_phased_sgd: return "rr_phased_sgd";
    case Algorithm::jl_spiderboost: return "jl_spiderboost";
    case Algorithm::jl_rr: return "jl_rr";
  }
  return "?";
}

inline Algorithm parse_algorithm(std::string_view s) {
  for (auto a : {Algorithm::spiderboost, Algorithm::tree_spider, Algorithm::rr_noisy_gd,
                 Algorithm::rr_phased_sgd, Algorithm::jl_spiderboost, Algorithm::jl_rr}) {
    if (s == to_string(a)) return a;
  }
  throw PreconditionError("unknown algorithm: " + std::string(s));
}

inline bool is_population_algorithm(Algorithm a) { return a == Algorithm::tree_spider; }

enum class LossKind { synthetic_nonconvex, tanh_glm, squared_glm, huber_mean };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::synthetic_nonconvex: return "synthetic_nonconvex";
    case LossKind::tanh_glm: return "tanh_glm";
    case LossKind::squared_glm: return "squared_glm";
    case LossKind::huber_mean: return "huber_mean";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  for (auto k : {LossKind::synthetic_nonconvex, LossKind::tanh_glm, LossKind::squared_glm,
                 LossKind::huber_mean}) {
    if (s == to_string(k)) return k;
  }
  throw PreconditionError("unknown loss kind: " + std::string(s));
}

struct LossConfig {
  LossKind kind = LossKind::synthetic_nonconvex;
  double L0 = 1.0;              // huber_mean
  double L1 = 1.0;              // huber_mean
  double normX = 1.0;           // GLM feature norm bound
  double residual_bound = 4.0;  // squared_glm Lipschitz constant in z
  std::optional<double> F0;     // overrides the loss's own initial gap
};

struct DataConfig {
  SyntheticKind kind = SyntheticKind::glm_fullrank;
  std::size_t rank = 4;
  std::optional<bool> population;  // default: true for population algorithms
  std::size_t support_size = 1024;
  double label_noise = 0.1;
  double B = 1.0;
};

struct GridConfig {
  std::vector<std::size_t> n;
  std::vector<std::size_t> d;
  std::vector<double> eps;
};

/// Algorithm knobs that feed the parameter derivations.
struct AlgorithmOptions {
  double c = 1.0;                   // accountant constant
  double p = 0.1;                   // tree failure probability
  std::optional<double> C_tilde;    // tree threshold constant override
  double R_bar = 1.0;               // recursive regularization bound on ‖w*‖
  std::string rr_mode = "optimal";  // optimal | linear_time
  double K_cap = 1e7;
  std::string jl_base = "spiderboost";
  std::optional<std::size_t> jl_rank;  // default: numeric rank of the data
};

struct ExperimentConfig {
  std::string name = "experiment";
  Algorithm algorithm = Algorithm::spiderboost;
  LossConfig loss;
  DataConfig data;
  GridConfig grid;
  double delta = 1e-6;
  std::vector<std::uint64_t> seeds{0};
  std::uint64_t master_seed = 0;
  std::string output_dir = "out";
  std::size_t workers = 0;  // 0: hardware concurrency
  bool record_timing = false;
  AlgorithmOptions options;
  json overrides = json::object();  // explicit post-derivation parameter overrides

  bool population() const { return data.population.value_or(is_population_algorithm(algorithm)); }

  void validate() const {
    require(!grid.n.empty() && !grid.d.empty() && !grid.eps.empty(),
            "config: grid lists n, d, eps must be non-empty");
    require(!seeds.empty(), "config: seeds must be non-empty");
    std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
    require(uniq.size() == seeds.size(), "config: seeds must be distinct");
    require(delta > 0.0 && delta < 1.0, "config: delta must lie in (0, 1)");
    for (double e : grid.eps) require(e > 0.0, "config: eps values must be > 0");
    for (auto n : grid.n) require(n >= 1, "config: n values must be >= 1");
    for (auto d : grid.d) require(d >= 1, "config: d values must be >= 1");
    require(overrides.is_object(), "config: overrides must be an object");
  }
};

namespace detail {
template <class T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}
template <class T>
void get_if(const json& j, const char* key, std::optional<T>& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}
inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
  require(j.is_object(), std::string("config: ") + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    require(ok, std::string("config: unknown key '") + it.key() + "' in " + where);
  }
}
}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  using detail::get_if;
  detail::check_keys(j, {"name", "algorithm", "loss", "data", "grid", "delta", "seeds", "master_seed",
                         "output_dir", "workers", "record_timing", "options", "overrides"},
                     "top level");
  ExperimentConfig c;
  try {
    get_if(j, "name", c.name);
    if (j.contains("algorithm")) c.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      detail::check_keys(l, {"kind", "L0", "L1", "normX", "residual_bound", "F0"}, "loss");
      if (l.contains("kind")) c.loss.kind = parse_loss_kind(l.at("kind").get<std::string>());
      get_if(l, "L0", c.loss.L0);
      get_if(l, "L1", c.loss.L1);
      get_if(l, "normX", c.loss.normX);
      get_if(l, "residual_bound", c.loss.residual_bound);
      get_if(l, "F0", c.loss.F0);
    }
    if (j.contains("data")) {
      const auto& dj = j.at("data");
      detail::check_keys(dj, {"kind", "rank", "population", "support_size", "label_noise", "B"}, "data");
      if (dj.contains("kind")) c.data.kind = parse_synthetic_kind(dj.at("kind").get<std::string>());
      get_if(dj, "rank", c.data.rank);
      get_if(dj, "population", c.data.population);
      get_if(dj, "support_size", c.data.support_size);
      get_if(dj, "label_noise", c.data.label_noise);
      get_if(dj, "B", c.data.B);
    }
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      detail::check_keys(g, {"n", "d", "eps"}, "grid");
      get_if(g, "n", c.grid.n);
      get_if(g, "d", c.grid.d);
      get_if(g, "eps", c.grid.eps);
    }
    get_if(j, "delta", c.delta);
    get_if(j, "seeds", c.seeds);
    get_if(j, "master_seed", c.master_seed);
    get_if(j, "output_dir", c.output_dir);
    get_if(j, "workers", c.workers);
    get_if(j, "record_timing", c.record_timing);
    if (j.contains("options")) {
      const auto& o = j.at("options");
      detail::check_keys(o, {"c", "p", "C_tilde", "R_bar", "rr_mode", "K_cap", "jl_base", "jl_rank"},
                         "options");
      get_if(o, "c", c.options.c);
      get_if(o, "p", c.options.p);
      get_if(o, "C_tilde", c.options.C_tilde);
      get_if(o, "R_bar", c.options.R_bar);
      get_if(o, "rr_mode", c.options.rr_mode);
      get_if(o, "K_cap", c.options.K_cap);
      get_if(o, "jl_base", c.options.jl_base);
      get_if(o, "jl_rank", c.options.jl_rank);
    }
    if (j.contains("overrides")) c.overrides = j.at("overrides");
  } catch (const json::exception& e) {
    throw PreconditionError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline json config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["algorithm"] = to_string(c.algorithm);
  j["loss"] = {{"kind", to_string(c.loss.kind)}, {"L0", c.loss.L0}, {"L1", c.loss.L1},
               {"normX", c.loss.normX}, {"residual_bound", c.loss.residual_bound}};
  if (c.loss.F0) j["loss"]["F0"] = *c.loss.F0;
  j["data"] = {{"kind", to_string(c.data.kind)}, {"rank", c.data.rank},
               {"support_size", c.data.support_size}, {"label_noise", c.data.label_noise},
               {"B", c.data.B}};
  if (c.data.population) j["data"]["population"] = *c.data.population;
  j["grid"] = {{"n", c.grid.n}, {"d", c.grid.d}, {"eps", c.grid.eps}};
  j["delta"] = c.delta;
  j["seeds"] = c.seeds;
  j["master_seed"] = c.master_seed;
  j["output_dir"] = c.output_dir;
  j["workers"] = c.workers;
  j["record_timing"] = c.record_timing;
  j["options"] = {{"c", c.options.c}, {"p", c.options.p}, {"R_bar", c.options.R_bar},
                  {"rr_mode", c.options.rr_mode}, {"K_cap", c.options.K_cap},
                  {"jl_base", c.options.jl_base}};
  if (c.options.C_tilde) j["options"]["C_tilde"] = *c.options.C_tilde;
  if (c.options.jl_rank) j["options"]["jl_rank"] = *c.options.jl_rank;
  j["overrides"] = c.overrides;
  return j;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "config: cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw PreconditionError("config: " + path + ": " + e.what());
  }
  return config_from_json(j);
}

/// Applies KEY=VALUE to a config document. KEY is a dotted path
/// ("grid.n", "options.C_tilde", "overrides.spider.T"); VALUE is parsed as
/// JSON when possible and taken as a string otherwise.
inline void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string_view::npos && eq > 0, "override must have the form KEY=VALUE");
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!part.empty(), "override: empty path component in '" + key + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace dpstat
