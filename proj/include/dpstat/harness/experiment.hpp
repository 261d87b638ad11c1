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

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dpstat/core/dataset.hpp"
#include "dpstat/core/loss.hpp"
#include "dpstat/core/losses.hpp"
#include "dpstat/core/rng.hpp"
#include "dpstat/glm_jl.hpp"
#include "dpstat/harness/config.hpp"
#include "dpstat/harness/fit.hpp"
#include "dpstat/harness/synthetic.hpp"
#include "dpstat/privacy/calibration.hpp"
#include "dpstat/privacy/noise.hpp"
#include "dpstat/recursive_reg.hpp"
#include "dpstat/spiderboost.hpp"
#include "dpstat/tree_spider.hpp"

namespace dpstat {

struct ExperimentRow {
  std::string algorithm;
  std::size_t n = 0;
  std::size_t d = 0;
  double eps = 0.0;
  double delta = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> grad_norm;
  std::uint64_t oracle_calls = 0;
  double wall_ms = 0.0;
  std::uint64_t param_hash = 0;
  std::string status = "ok";  // ok | precondition | error
  std::string detail;
  std::size_t grid_index = 0;
};

/// Derived parameters as an ordered (name, value) list.
using ParamList = std::vector<std::pair<std::string, double>>;

inline std::uint64_t param_hash(const ParamList& params) {
  std::uint64_t h = fnv1a64("dpstat-params");
  for (const auto& [k, v] : params) {
    h = fnv1a64(k, h);
    h = fnv1a64("=", h);
    h = fnv1a64(format_double(v), h);
    h = fnv1a64(";", h);
  }
  return h;
}

struct PointResult {
  ExperimentRow row;
  NoiseLedger ledger;
  ParamList params;
  Vec w_out;
};

struct GridPoint {
  std::size_t index = 0;
  std::size_t n = 0;
  std::size_t d = 0;
  double eps = 0.0;
};

/// Grid points in canonical order: n outermost, then d, then eps.
inline std::vector<GridPoint> grid_points(const GridConfig& g) {
  std::vector<GridPoint> out;
  for (auto n : g.n)
    for (auto d : g.d)
      for (double e : g.eps) out.push_back({out.size(), n, d, e});
  return out;
}

inline LossSpec make_loss(const LossConfig& c, std::size_t d) {
  LossSpec loss;
  switch (c.kind) {
    case LossKind::synthetic_nonconvex:
      loss = glm_loss(robust_link(), c.normX, d);
      loss.name = "synthetic_nonconvex";
      loss.initial_gap = 1.0;
      break;
    case LossKind::tanh_glm:
      loss = glm_loss(tanh_link(), c.normX, d);
      break;
    case LossKind::squared_glm:
      loss = glm_loss(squared_link(c.residual_bound), c.normX, d);
      break;
    case LossKind::huber_mean:
      loss = huber_mean_loss(c.L0, c.L1);
      break;
  }
  if (c.F0) loss.initial_gap = *c.F0;
  return loss;
}

struct ExperimentData {
  Dataset train;
  std::optional<FiniteDistribution> population;
};

/// Plain runs use n synthetic samples; population runs draw n i.i.d. samples
/// from the uniform distribution over `support_size` synthetic points.
inline ExperimentData make_data(const ExperimentConfig& cfg, std::size_t n, std::size_t d,
                                Rng& rng) {
  SyntheticOptions opt;
  opt.B = cfg.data.B;
  opt.label_noise = cfg.data.label_noise;
  const std::size_t rank = std::min(cfg.data.rank, d);
  const std::uint64_t data_seed = rng.next_u64();
  ExperimentData out;
  if (cfg.population()) {
    Dataset support = gen_synthetic(cfg.data.kind, cfg.data.support_size, d, rank, data_seed, opt);
    std::vector<Sample> pts(support.view().begin(), support.view().end());
    out.population = FiniteDistribution::uniform(std::move(pts));
    out.train = out.population->draw_dataset(n, rng);
  } else {
    out.train = gen_synthetic(cfg.data.kind, n, d, rank, data_seed, opt);
  }
  return out;
}

namespace detail {

inline std::map<std::string, double> override_section(const json& overrides, const char* section,
                                                      std::initializer_list<const char*> allowed) {
  std::map<std::string, double> out;
  if (!overrides.contains(section)) return out;
  const auto& s = overrides.at(section);
  require(s.is_object(), std::string("overrides.") + section + " must be an object");
  for (auto it = s.begin(); it != s.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    require(ok, std::string("unknown override overrides.") + section + "." + it.key());
    require(it.value().is_number(), std::string("override overrides.") + section + "." + it.key() +
                                        " must be a number");
    out[it.key()] = it.value().get<double>();
  }
  return out;
}

inline std::uint64_t as_count(double v, const std::string& key) {
  require(v >= 1.0 && v == std::floor(v), "override " + key + " must be a positive integer");
  return static_cast<std::uint64_t>(v);
}

inline void check_override_sections(const json& overrides) {
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    const auto& k = it.key();
    require(k == "spider" || k == "tree" || k == "rr" || k == "jl",
            "unknown override section overrides." + k);
  }
}

inline ParamList spider_param_list(const SpiderParams& p) {
  return {{"eta", p.eta}, {"q", static_cast<double>(p.q)}, {"b1", static_cast<double>(p.b1)},
          {"b2", static_cast<double>(p.b2)}, {"T", static_cast<double>(p.T)},
          {"sigma1", p.sigma1}, {"sigma2", p.sigma2}, {"sigma2_hat", p.sigma2_hat}};
}

inline ParamList tree_param_list(const TreeParams& p) {
  return {{"b", static_cast<double>(p.b)}, {"D", static_cast<double>(p.D)},
          {"T", static_cast<double>(p.T)}, {"alpha", p.alpha}, {"alpha_tilde", p.alpha_tilde},
          {"beta", p.beta}, {"C_tilde", p.C_tilde}, {"sigma_root", p.sigma_root},
          {"sigma_delta", p.sigma_delta}, {"p", p.p}};
}

inline ParamList rr_param_list(const RRParams& p) {
  ParamList out{{"T", static_cast<double>(p.T)}, {"lambda0", p.lambda0}, {"R_bar", p.R_bar}};
  for (std::size_t t = 1; t < p.T; ++t) {
    const std::string s = std::to_string(t);
    out.push_back({"K" + s, static_cast<double>(p.K[t])});
    out.push_back({"eta" + s, p.eta[t]});
    out.push_back({"sigma" + s, p.sigma[t]});
  }
  return out;
}

/// Derived SpiderBoost parameters with overrides; σ's are recalibrated when
/// a schedule entry changes and the σ's themselves are not overridden.
inline SpiderParams spider_params_for(const ExperimentConfig& cfg, const LossSpec& loss,
                                      std::size_t n, std::size_t d, const PrivacyBudget& budget) {
  const double F0 = loss.initial_gap.value_or(1.0);
  SpiderParams p = derive_spider_params(n, d, loss.lipschitz, loss.smoothness, F0, budget);
  auto ov = override_section(cfg.overrides, "spider",
                             {"eta", "q", "b1", "b2", "T", "sigma1", "sigma2", "sigma2_hat"});
  bool schedule = false;
  for (const auto& [k, v] : ov) {
    if (k == "eta") p.eta = v;
    if (k == "q") { p.q = as_count(v, k); schedule = true; }
    if (k == "b1") { p.b1 = as_count(v, k); schedule = true; }
    if (k == "b2") { p.b2 = as_count(v, k); schedule = true; }
    if (k == "T") { p.T = as_count(v, k); schedule = true; }
  }
  if (schedule) calibrate_spider_noise(p, n, loss.lipschitz, loss.smoothness, budget);
  for (const auto& [k, v] : ov) {
    if (k == "sigma1") p.sigma1 = v;
    if (k == "sigma2") p.sigma2 = v;
    if (k == "sigma2_hat") p.sigma2_hat = v;
  }
  p.validate(n);
  return p;
}

inline TreeParams tree_params_for(const ExperimentConfig& cfg, const LossSpec& loss, std::size_t n,
                                  std::size_t d, const PrivacyBudget& budget) {
  TreeDeriveOptions topt;
  topt.C_tilde_override = cfg.options.C_tilde;
  TreeParams p = derive_tree_params(n, d, loss.lipschitz, loss.smoothness,
                                    loss.initial_gap.value_or(1.0), budget, cfg.options.p, topt);
  auto ov = override_section(cfg.overrides, "tree",
                             {"b", "D", "T", "alpha", "beta", "C_tilde", "alpha_tilde",
                              "sigma_root", "sigma_delta"});
  for (const auto& [k, v] : ov) {
    if (k == "b") p.b = as_count(v, k);
    if (k == "D") p.D = static_cast<int>(v);
    if (k == "T") p.T = as_count(v, k);
    if (k == "alpha") p.alpha = v;
    if (k == "beta") p.beta = v;
    if (k == "C_tilde") p.C_tilde = v;
  }
  p.alpha_tilde = p.C_tilde * p.alpha;
  calibrate_tree_noise(p, loss.lipschitz, budget);
  for (const auto& [k, v] : ov) {
    if (k == "alpha_tilde") p.alpha_tilde = v;
    if (k == "sigma_root") p.sigma_root = v;
    if (k == "sigma_delta") p.sigma_delta = v;
  }
  p.validate();
  return p;
}

inline RRMode parse_rr_mode(const std::string& s) {
  if (s == "optimal") return RRMode::optimal;
  if (s == "linear_time") return RRMode::linear_time;
  throw PreconditionError("unknown rr_mode: " + s);
}

inline RRParams rr_params_for(const ExperimentConfig& cfg, const LossSpec& loss, std::size_t n,
                              std::size_t d, const PrivacyBudget& budget, RRMode mode) {
  RRDeriveOptions ropt;
  require(cfg.options.K_cap >= 2.0, "options.K_cap must be >= 2");
  ropt.K_cap = static_cast<std::uint64_t>(cfg.options.K_cap);
  RRParams p = derive_rr_params(mode, n, d, loss.lipschitz, loss.smoothness, cfg.options.R_bar,
                                budget, ropt);
  auto ov = override_section(cfg.overrides, "rr", {"K", "eta", "sigma"});
  for (const auto& [k, v] : ov) {
    for (std::size_t t = 1; t < p.T; ++t) {
      if (k == "K") fill_rr_round(p, t, std::max<std::uint64_t>(2, as_count(v, k)), loss.lipschitz,
                                  std::max<std::size_t>(1, n / p.T), budget);
    }
  }
  for (const auto& [k, v] : ov) {
    for (std::size_t t = 1; t < p.T; ++t) {
      if (k == "eta") p.eta[t] = v;
      if (k == "sigma") p.sigma[t] = v;
    }
  }
  return p;
}

}  // namespace detail

/// One grid point and seed: derive parameters, run, and evaluate the exact
/// gradient norm at the returned point (ERM, or population for population
/// runs). Failures become tagged rows.
inline PointResult run_point(const ExperimentConfig& cfg, const GridPoint& gp, std::uint64_t seed) {
  PointResult res;
  auto& row = res.row;
  row.algorithm = to_string(cfg.algorithm);
  row.n = gp.n;
  row.d = gp.d;
  row.eps = gp.eps;
  row.delta = cfg.delta;
  row.seed = seed;
  row.grid_index = gp.index;
  const auto start = std::chrono::steady_clock::now();
  try {
    detail::check_override_sections(cfg.overrides);
    PrivacyBudget budget{gp.eps, cfg.delta, cfg.options.c};
    budget.validate();
    Rng data_rng(StreamKey{cfg.master_seed, gp.index, seed, "data"});
    Rng algo_rng(StreamKey{cfg.master_seed, gp.index, seed, "algorithm"});
    const LossSpec loss = make_loss(cfg.loss, gp.d);
    ExperimentData data = make_data(cfg, gp.n, gp.d, data_rng);
    bind_check(loss, data.train);

    switch (cfg.algorithm) {
      case Algorithm::spiderboost: {
        auto p = detail::spider_params_for(cfg, loss, gp.n, gp.d, budget);
        res.params = detail::spider_param_list(p);
        SpiderRunOptions opts;
        opts.trace = false;
        auto rep = run_spiderboost(loss, data.train, p, algo_rng, opts);
        res.w_out = rep.w_out;
        row.oracle_calls = rep.oracle_calls;
        res.ledger = std::move(rep.noise_ledger);
        break;
      }
      case Algorithm::tree_spider: {
        auto p = detail::tree_params_for(cfg, loss, gp.n, gp.d, budget);
        res.params = detail::tree_param_list(p);
        auto rep = run_tree_spider(loss, data.train.view(), p, algo_rng);
        res.w_out = rep.w_out;
        row.oracle_calls = rep.oracle_calls;
        res.ledger = std::move(rep.noise_ledger);
        res.params.push_back({"stopped_early", rep.stopped_early ? 1.0 : 0.0});
        break;
      }
      case Algorithm::rr_noisy_gd:
      case Algorithm::rr_phased_sgd: {
        const RRMode mode = detail::parse_rr_mode(cfg.options.rr_mode);
        auto p = detail::rr_params_for(cfg, loss, gp.n, gp.d, budget, mode);
        res.params = detail::rr_param_list(p);
        auto sub = cfg.algorithm == Algorithm::rr_noisy_gd ? RRSubroutine::noisy_gd
                                                           : RRSubroutine::phased_sgd;
        auto rep = run_recursive_regularization(data.train.view(), loss, p, sub, algo_rng);
        res.w_out = rep.w_out;
        row.oracle_calls = rep.oracle_calls;
        res.ledger = std::move(rep.noise_ledger);
        break;
      }
      case Algorithm::jl_spiderboost:
      case Algorithm::jl_rr: {
        require(loss.glm.has_value(), "JL method needs a GLM loss");
        const auto& link = loss.glm->link;
        const JLBaseKind kind = cfg.algorithm == Algorithm::jl_spiderboost ? JLBaseKind::spiderboost
                                                                           : JLBaseKind::recursive_reg;
        JLParams jp;
        jp.base_kind = kind;
        jp.normX = cfg.loss.normX;
        jp.rank = cfg.options.jl_rank.value_or(numeric_rank(data.train));
        require(jp.rank >= 1, "JL method: data has rank 0");
        const double F0 = loss.initial_gap.value_or(1.0);
        jp.k = choose_k(kind, gp.n, jp.rank, gp.d, link->lipschitz, link->smoothness, jp.normX,
                        budget, F0);
        auto ov = detail::override_section(cfg.overrides, "jl", {"k"});
        if (ov.count("k")) jp.k = detail::as_count(ov["k"], "k");
        JLBase base = kind == JLBaseKind::spiderboost
                          ? spider_base(F0)
                          : rr_base(cfg.options.R_bar, detail::parse_rr_mode(cfg.options.rr_mode));
        auto rep = run_jl(base, data.train, link, jp, budget, algo_rng);
        res.params = {{"k", static_cast<double>(jp.k)}, {"rank", static_cast<double>(jp.rank)},
                      {"normX", jp.normX}};
        res.w_out = rep.w_out;
        row.oracle_calls = rep.base.oracle_calls;
        res.ledger = std::move(rep.base.noise_ledger);
        break;
      }
    }
    row.param_hash = param_hash(res.params);
    const Vec g = data.population ? data.population->population_grad(loss, res.w_out)
                                  : erm_grad(loss, res.w_out, data.train);
    row.grad_norm = g.norm();
  } catch (const PreconditionError& e) {
    row.status = "precondition";
    row.detail = e.what();
  } catch (const std::exception& e) {
    row.status = "error";
    row.detail = e.what();
  }
  if (cfg.record_timing) {
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  }
  return res;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return out + "\"";
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

inline const char* kResultsHeader =
    "algorithm,n,d,eps,delta,seed,grad_norm,oracle_calls,wall_ms,param_hash,status,detail";

inline void write_row(std::ostream& out, const ExperimentRow& r) {
  out << r.algorithm << ',' << r.n << ',' << r.d << ',' << format_double(r.eps) << ','
      << format_double(r.delta) << ',' << r.seed << ','
      << (r.grad_norm ? format_double(*r.grad_norm) : std::string()) << ',' << r.oracle_calls << ','
      << format_double(r.wall_ms) << ',' << hex64(r.param_hash) << ',' << r.status << ','
      << csv_escape(r.detail) << '\n';
}

struct ExperimentResult {
  std::vector<PointResult> points;  // canonical order: grid index, then seed order
  std::filesystem::path csv_path;
  std::filesystem::path ledger_path;
};

inline void write_results_csv(std::ostream& out, const std::vector<PointResult>& points) {
  out << kResultsHeader << '\n';
  for (const auto& p : points) write_row(out, p.row);
}

inline void write_ledger_csv(std::ostream& out, const std::vector<PointResult>& points) {
  out << "grid_index,seed,site,sigma,dim,count\n";
  for (const auto& p : points) {
    for (const auto& e : p.ledger.entries()) {
      out << p.row.grid_index << ',' << p.row.seed << ',' << e.site << ',' << format_double(e.sigma)
          << ',' << e.dim << ',' << e.count << '\n';
    }
  }
}

/// Runs every grid point × seed on a worker pool and, when `write` is set,
/// writes `<output_dir>/<name>.csv` and `<output_dir>/<name>_ledger.csv`.
/// Output order is canonical regardless of completion order.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write = true) {
  cfg.validate();
  ExperimentResult result;
  std::ofstream csv, ledger;
  if (write) {
    namespace fs = std::filesystem;
    const fs::path dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec && fs::is_directory(dir), "output_dir is not writable: " + cfg.output_dir);
    result.csv_path = dir / (cfg.name + ".csv");
    result.ledger_path = dir / (cfg.name + "_ledger.csv");
    csv.open(result.csv_path, std::ios::binary | std::ios::trunc);
    ledger.open(result.ledger_path, std::ios::binary | std::ios::trunc);
    require(csv.good() && ledger.good(), "output_dir is not writable: " + cfg.output_dir);
  }

  const auto grid = grid_points(cfg.grid);
  const std::size_t tasks = grid.size() * cfg.seeds.size();
  result.points.resize(tasks);
  std::atomic<std::size_t> next{0};
  std::mutex sink;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks; i = next++) {
      PointResult r = run_point(cfg, grid[i / cfg.seeds.size()], cfg.seeds[i % cfg.seeds.size()]);
      std::lock_guard<std::mutex> lock(sink);
      result.points[i] = std::move(r);
    }
  };
  std::size_t workers = cfg.workers ? cfg.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(1, tasks));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  if (write) {
    write_results_csv(csv, result.points);
    write_ledger_csv(ledger, result.points);
    csv.close();
    ledger.close();
    require(!csv.fail() && !ledger.fail(), "failed writing results to " + cfg.output_dir);
  }
  return result;
}

/// Splits one CSV line, honouring double-quoted fields.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline double median(std::vector<double> v) {
  require(!v.empty(), "median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Scaling fit of column `ycol` against column `xcol` of a results CSV.
/// Rows with an empty y or a status other than "ok" are skipped; with
/// `median_per_x` the y values sharing one x are reduced to their median.
inline ScalingFit fit_csv_columns(std::istream& in, const std::string& xcol, const std::string& ycol,
                                  bool median_per_x = true) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "fit: empty CSV");
  const auto header = split_csv_line(line);
  auto col = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    require(it != header.end(), "fit: no column named " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t xi = col(xcol), yi = col(ycol);
  const auto si = std::find(header.begin(), header.end(), "status");
  std::map<double, std::vector<double>> groups;
  std::vector<std::pair<double, double>> pts;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    require(f.size() == header.size(), "fit: ragged CSV row");
    if (si != header.end() && f[static_cast<std::size_t>(si - header.begin())] != "ok") continue;
    if (f[yi].empty()) continue;
    double x = 0.0, y = 0.0;
    require(detail::parse_double(f[xi], x) && detail::parse_double(f[yi], y),
            "fit: non-numeric value in column " + xcol + " or " + ycol);
    if (median_per_x) groups[x].push_back(y);
    else pts.emplace_back(x, y);
  }
  if (median_per_x)
    for (auto& [x, ys] : groups) pts.emplace_back(x, median(ys));
  return scaling_fit(pts);
}

}  // namespace dpstat
