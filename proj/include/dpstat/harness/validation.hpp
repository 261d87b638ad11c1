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

// Invariant and validation suite: the property checks and scaling-trend
// experiments the library is accepted against. Shared by the acceptance
// test binary and `dpstat check`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dpstat/core/grad_check.hpp"
#include "dpstat/core/losses.hpp"
#include "dpstat/glm_jl.hpp"
#include "dpstat/harness/experiment.hpp"
#include "dpstat/recursive_reg.hpp"
#include "dpstat/spiderboost.hpp"
#include "dpstat/tree_spider.hpp"

namespace dpstat {

struct CheckResult {
  int id = 0;
  std::string title;
  bool pass = false;
  std::vector<std::string> lines;  // diagnostics, one per sub-check
  double seconds = 0.0;
  bool skipped = false;
};

struct ValidationOptions {
  std::string out_dir = "validation_out";
  bool quick = false;  // skip the long-running statistical checks
  std::vector<int> only;  // empty: all
};

// ---------------------------------------------------------------------------
// Experiment configurations of the scaling-trend checks. configs/ holds the
// same documents as JSON; a unit test keeps the two in sync.

inline ExperimentConfig scaling_config_spiderboost() {
  ExperimentConfig c;
  c.name = "scaling_spiderboost";
  c.algorithm = Algorithm::spiderboost;
  c.loss.kind = LossKind::synthetic_nonconvex;
  c.data.kind = SyntheticKind::glm_fullrank;
  c.grid = {{1024, 2048, 4096, 8192, 16384}, {16}, {1.0}};
  c.delta = 1e-6;
  c.seeds = {0, 1, 2, 3, 4};
  c.master_seed = 2026;
  return c;
}

inline ExperimentConfig scaling_config_tree() {
  ExperimentConfig c = scaling_config_spiderboost();
  c.name = "scaling_tree_spider";
  c.algorithm = Algorithm::tree_spider;
  c.data.population = true;
  c.options.C_tilde = 1.0;
  return c;
}

inline ExperimentConfig jl_config(bool projected) {
  ExperimentConfig c;
  c.name = projected ? "lowrank_jl_spiderboost" : "lowrank_spiderboost";
  c.algorithm = projected ? Algorithm::jl_spiderboost : Algorithm::spiderboost;
  c.loss.kind = LossKind::tanh_glm;
  c.data.kind = SyntheticKind::glm_lowrank;
  c.data.rank = 4;
  c.grid = {{4096}, {256}, {1.0}};
  c.delta = 1e-6;
  c.seeds = {0, 1, 2, 3, 4};
  c.master_seed = 2026;
  return c;
}

inline std::vector<ExperimentConfig> acceptance_experiments() {
  return {scaling_config_spiderboost(), scaling_config_tree(), jl_config(false), jl_config(true)};
}

namespace detail {

inline std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

class CheckBuilder {
 public:
  explicit CheckBuilder(CheckResult& r) : r_(r) {}
  void expect(bool ok, const std::string& line) {
    r_.lines.push_back((ok ? "ok    " : "FAIL  ") + line);
    all_ &= ok;
  }
  void note(const std::string& line) { r_.lines.push_back("      " + line); }
  bool ok() const { return all_; }

 private:
  CheckResult& r_;
  bool all_ = true;
};

// Medians of the ok rows' grad_norm, keyed by n; false when any row failed.
inline bool medians_by_n(const ExperimentResult& res, std::map<std::size_t, double>& out,
                         std::string& why) {
  std::map<std::size_t, std::vector<double>> by_n;
  for (const auto& p : res.points) {
    if (p.row.status != "ok" || !p.row.grad_norm) {
      why = "row n=" + std::to_string(p.row.n) + " seed=" + std::to_string(p.row.seed) + ": " +
            p.row.status + " " + p.row.detail;
      return false;
    }
    by_n[p.row.n].push_back(*p.row.grad_norm);
  }
  for (auto& [n, v] : by_n) out[n] = median(v);
  return true;
}

inline ExperimentConfig with_output(ExperimentConfig c, const std::filesystem::path& dir) {
  c.output_dir = dir.string();
  return c;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------------------

inline void check_gradients(CheckBuilder& cb) {
  struct Entry {
    std::string name;
    LossSpec loss;
    std::size_t dim;
  };
  std::vector<Entry> bases{
      {"huber_mean", huber_mean_loss(1.0, 1.0), 5},
      {"huber_1d", huber_1d_loss(1.0, 1.0, 0.5, 1).loss, 1},
      {"glm_tanh", glm_loss(tanh_link(), 1.0), 5},
      {"glm_squared", glm_loss(squared_link(4.0), 1.0), 5},
      {"glm_robust", glm_loss(robust_link(), 1.0), 5},
      {"synthetic_nonconvex", synthetic_nonconvex_loss(5), 5},
      {"jl_projected_tanh", jl_projected_loss(tanh_link(), 1.0), 5},
  };
  Rng rng(StreamKey{1, 0, 0, "gradients"});
  std::vector<Entry> all = bases;
  for (const auto& b : bases) {
    for (std::size_t m = 1; m <= 3; ++m) {
      std::vector<Vec> centers;
      std::vector<double> lambdas;
      for (std::size_t i = 0; i < m; ++i) {
        centers.push_back(gaussian_vector(b.dim, 1.0, rng));
        lambdas.push_back(std::ldexp(0.25, static_cast<int>(i)));
      }
      all.push_back({b.name + "+reg" + std::to_string(m), regularize(b.loss, centers, lambdas).loss,
                     b.dim});
    }
  }
  for (const auto& e : all) {
    const auto rep = fd_check(e.loss, 100, 1e-5, 7, e.dim);
    cb.expect(rep.max_rel_err <= 1e-5,
              e.name + ": max rel err " + fmt(rep.max_rel_err, 3) + " <= 1e-5 over 100 probes");
  }
}

inline void check_huber_stationarity(CheckBuilder& cb) {
  const double B = 1.0, L1 = 1.0;
  const Dataset data = gen_synthetic(SyntheticKind::huber_cluster, 100, 10, 0, 5, {B, 0.0});
  const LossSpec loss = huber_mean_loss(B * L1, L1);
  Vec mean = Vec::Zero(10);
  for (const auto& s : data.view()) mean += s.x;
  mean /= 100.0;
  const double at_mean = erm_grad(loss, mean, data).norm();
  cb.expect(at_mean <= 1e-10, "||erm_grad(mean)|| = " + fmt(at_mean, 3) + " <= 1e-10");
  Rng rng(StreamKey{2, 0, 0, "huber"});
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    Vec u = gaussian_vector(10, 1.0, rng);
    const Vec w = mean + (B / 2.0) * u / u.norm();
    worst = std::max(worst, (erm_grad(loss, w, data) - L1 * (w - mean)).norm());
  }
  cb.expect(worst <= 1e-14, "erm_grad(w) = L1 (w - mean) on 50 probes at distance B/2, max dev " +
                                fmt(worst, 3));
}

inline void check_spider_bound(CheckBuilder& cb) {
  const Dataset data = gen_synthetic(SyntheticKind::glm_fullrank, 200, 5, 5, 3);
  const LossSpec loss = glm_loss(tanh_link(), 1.0, 5);
  SpiderParams p;
  p.eta = 1.0 / (2.0 * loss.smoothness);
  p.b1 = 200;
  p.b2 = 16;
  p.q = 4;
  p.T = 8;
  calibrate_spider_noise(p, 200, loss.lipschitz, loss.smoothness, PrivacyBudget{1.0, 1e-6, 1.0});
  Rng rng(StreamKey{3, 0, 0, "spider_bound"});
  const auto check = validate_spider_error_bound(loss, data, p, 2000, rng, 8);
  cb.note("tau1^2 = " + fmt(check.tau1_sq) + ", tau2^2 = " + fmt(check.tau2_sq));
  for (const auto& s : check.steps) {
    cb.expect(s.within(5.0), "t=" + std::to_string(s.t) + ": E||err||^2 = " + fmt(s.mean_sq_err) +
                                 " (se " + fmt(s.std_err, 2) + ") vs bound " + fmt(s.bound));
  }
}

inline void check_noiseless_degeneration(CheckBuilder& cb) {
  const Dataset data = gen_synthetic(SyntheticKind::glm_fullrank, 100, 5, 5, 4);
  const LossSpec loss = synthetic_nonconvex_loss(5);
  SpiderParams p;
  p.eta = 1.0 / (2.0 * loss.smoothness);
  p.q = 1;
  p.b1 = p.b2 = 100;
  p.T = 100;
  Rng rng(StreamKey{4, 0, 0, "noiseless"});
  SpiderRunOptions opts;
  opts.record_path = true;
  opts.trace = false;
  const auto rep = run_spiderboost(loss, data, p, rng, opts);
  Vec w = Vec::Zero(5);
  double worst = 0.0;
  for (std::size_t t = 0; t <= p.T; ++t) {
    worst = std::max(worst, (rep.iterates[t] - w).lpNorm<Eigen::Infinity>());
    w = w - p.eta * erm_grad(loss, w, data);
  }
  cb.expect(worst <= 1e-12, "max per-iterate deviation from full-batch GD over 100 steps: " +
                                fmt(worst, 3));
}

inline void check_tree_structure(CheckBuilder& cb) {
  const std::vector<std::string> expect{"0", "00", "01", "1", "10", "11"};
  cb.expect(dfs_order(2) == expect, "dfs_order(2) = [0, 00, 01, 1, 10, 11]");
  for (int D = 1; D <= 6; ++D) {
    const auto order = dfs_order(D);
    const std::size_t nodes = (std::size_t{2} << D) - 2;
    TreeParams p;
    p.D = D;
    p.b = static_cast<std::uint64_t>(D) << (D + 1);
    p.T = 2;
    p.beta = p.alpha = p.alpha_tilde = 0.1;
    const LossSpec loss = synthetic_nonconvex_loss(2);
    const Dataset stream = gen_synthetic(SyntheticKind::glm_fullrank, p.T * p.samples_per_round(), 2, 2,
                                         static_cast<std::uint64_t>(D));
    Rng rng(StreamKey{5, static_cast<std::uint64_t>(D), 0, "tree_structure"});
    TreeRunOptions opts;
    opts.record_nodes = true;
    opts.early_stop = false;
    const auto rep = run_tree_spider(loss, stream.view(), p, rng, opts);
    // Count delta updates along each root path from the recorded batches.
    std::map<std::pair<std::uint64_t, std::string>, const TreeNodeRecord*> by;
    for (const auto& n : rep.nodes) by[{n.address.round, n.address.bits}] = &n;
    std::size_t max_updates = 0;
    for (const auto& n : rep.nodes) {
      std::size_t updates = 0;
      for (NodeAddress a = n.address; !a.is_root(); a = a.parent()) {
        const auto* r = by.at({a.round, a.bits});
        if (r->batch_end > r->batch_begin) ++updates;
      }
      max_updates = std::max(max_updates, updates);
    }
    const std::uint64_t per_round = p.b * static_cast<std::uint64_t>(D + 2) / 2;  // b (D/2 + 1)
    cb.expect(order.size() == nodes && max_updates <= static_cast<std::size_t>(D) &&
                  p.samples_per_round() == per_round && rep.samples_consumed == p.T * per_round,
              "D=" + std::to_string(D) + ": " + std::to_string(order.size()) + " nodes (2^{D+1}-2 = " +
                  std::to_string(nodes) + "), max delta updates on a path " +
                  std::to_string(max_updates) + ", samples/round " +
                  std::to_string(rep.samples_consumed / p.T) + " = b(D/2+1) = " +
                  std::to_string(per_round));
  }
}

inline void check_tree_budget(CheckBuilder& cb) {
  const PrivacyBudget budget{1.0, 1e-6, 1.0};
  for (std::size_t d : {4u, 16u}) {
    const LossSpec loss = synthetic_nonconvex_loss(d);
    const Dataset support = gen_synthetic(SyntheticKind::glm_fullrank, 1024, d, d, 6);
    const auto dist = FiniteDistribution::uniform({support.view().begin(), support.view().end()});
    for (std::size_t n = 1024; n <= 16384; n *= 2) {
      const auto p = derive_tree_params(n, d, loss.lipschitz, loss.smoothness, 1.0, budget, 0.1);
      Rng drng(StreamKey{6, n, d, "stream"});
      const Dataset stream = dist.draw_dataset(n, drng);
      bool ok = true;
      std::string line;
      for (bool early : {true, false}) {
        Rng rng(StreamKey{6, n, d, early ? "early" : "full"});
        TreeRunOptions opts;
        opts.early_stop = early;
        const auto rep = run_tree_spider(loss, stream.view(), p, rng, opts);
        ok &= rep.samples_consumed <= n && rep.oracle_calls <= n;
        line += std::string(early ? " early-stop run: " : "; full run: ") + "samples " +
                std::to_string(rep.samples_consumed) + ", oracle_calls " +
                std::to_string(rep.oracle_calls) + " (gradient evaluations " +
                std::to_string(rep.gradient_evaluations) + ")";
      }
      cb.expect(ok, "n=" + std::to_string(n) + " d=" + std::to_string(d) + " (b=" +
                        std::to_string(p.b) + ", D=" + std::to_string(p.D) + ", T=" +
                        std::to_string(p.T) + "):" + line);
    }
  }
}

inline void check_tree_sensitivity(CheckBuilder& cb) {
  const std::size_t n = 64, d = 2;
  const LossSpec loss = synthetic_nonconvex_loss(d);
  const PrivacyBudget budget{1.0, 1e-6, 1.0};
  TreeDeriveOptions dopt;
  dopt.C_tilde_override = 1.0;
  TreeParams p = derive_tree_params(n, d, loss.lipschitz, loss.smoothness, 1.0, budget, 0.1, dopt);
  p.D = 1;
  p.b = 16;
  p.T = n / p.samples_per_round();
  calibrate_tree_noise(p, loss.lipschitz, budget);
  p.validate();
  const Dataset stream = gen_synthetic(SyntheticKind::glm_fullrank, n, d, d, 7);
  std::vector<Sample> candidates(stream.view().begin(), stream.view().end());
  for (int k = 0; k < 8; ++k) {
    const double a = k * 3.14159265358979323846 / 4.0;
    Vec x(2);
    x << std::cos(a), std::sin(a);
    candidates.push_back({x, k % 2 ? 3.0 : -3.0});
  }
  Rng rng(StreamKey{7, 0, 0, "tree_sensitivity"});
  TreeRunOptions opts;
  opts.record_nodes = true;
  opts.early_stop = false;
  const auto rep = run_tree_spider(loss, stream.view(), p, rng, opts);
  const double bound = tree_gv_sensitivity(p.beta, p.D, p.b);
  double worst = 0.0;
  std::size_t swaps = 0, nodes = 0;
  for (const auto& node : rep.nodes) {
    if (!node.address.is_right_child()) continue;
    ++nodes;
    std::vector<Sample> batch(stream.view().begin() + static_cast<std::ptrdiff_t>(node.batch_begin),
                              stream.view().begin() + static_cast<std::ptrdiff_t>(node.batch_end));
    const Vec base = tree_gradient_variation(loss, batch, node.w, node.w_parent);
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const Sample keep = batch[j];
      for (const auto& c : candidates) {
        batch[j] = c;
        const Vec alt = tree_gradient_variation(loss, batch, node.w, node.w_parent);
        worst = std::max(worst, (alt - base).norm());
        ++swaps;
      }
      batch[j] = keep;
    }
  }
  cb.expect(nodes > 0 && worst <= bound + 1e-12,
            std::to_string(swaps) + " swaps over " + std::to_string(nodes) +
                " right-child nodes: max ||Delta - Delta'|| = " + fmt(worst, 6) +
                " <= 2 beta 2^{D/2} / b = " + fmt(bound, 6));
}

inline double independent_gaussian_sigma(double sens, double eps, double delta) {
  return sens / eps * std::sqrt(2.0 * (std::log(1.25) - std::log(delta)));
}

inline double independent_accountant_sigma(double lambda, double b, double T, double n, double eps,
                                           double delta, double c) {
  return c * lambda * std::sqrt(-std::log(delta)) * std::max(n, b * std::sqrt(T)) / (b * n * eps);
}

inline bool sigmas_match(const std::vector<double>& got, const std::vector<double>& want,
                         double& worst) {
  if (got.size() != want.size()) return false;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double scale = std::max(std::abs(want[i]), 1e-300);
    worst = std::max(worst, std::abs(got[i] - want[i]) / scale);
  }
  return worst <= 1e-12;
}

inline void check_calibration(CheckBuilder& cb) {
  Rng rng(StreamKey{8, 0, 0, "calibration"});
  double worst_g = 0.0, worst_a = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double sens = 10.0 * rng.uniform() + 1e-3;
    const double eps = std::exp(std::log(0.01) + rng.uniform() * std::log(1000.0));
    const double delta = std::exp(std::log(1e-12) + rng.uniform() * std::log(0.5e12));
    const double c = 0.5 + 2.0 * rng.uniform();
    const std::uint64_t n = 1 + rng.index(100000);
    const std::uint64_t b = 1 + rng.index(n);
    const std::uint64_t T = 1 + rng.index(100000);
    const double g = gaussian_sigma(sens, eps, delta);
    const double gi = independent_gaussian_sigma(sens, eps, delta);
    worst_g = std::max(worst_g, std::abs(g - gi) / gi);
    const double a = accountant_sigma(sens, b, T, n, PrivacyBudget{eps, delta, c});
    const double ai = independent_accountant_sigma(sens, static_cast<double>(b), static_cast<double>(T),
                                                   static_cast<double>(n), eps, delta, c);
    worst_a = std::max(worst_a, std::abs(a - ai) / ai);
  }
  cb.expect(worst_g <= 1e-12, "gaussian_sigma vs re-implementation, 1000 draws: max rel err " +
                                  fmt(worst_g, 3));
  cb.expect(worst_a <= 1e-12, "accountant_sigma vs re-implementation, 1000 draws: max rel err " +
                                  fmt(worst_a, 3));

  const PrivacyBudget budget{1.0, 1e-6, 1.0};
  // SpiderBoost: phase draws at σ1, variation draws at min{σ2 ||w_t - w_{t-1}||, σ̂2}.
  {
    const Dataset data = gen_synthetic(SyntheticKind::glm_fullrank, 2048, 8, 8, 8);
    const LossSpec loss = synthetic_nonconvex_loss(8);
    const auto p = derive_spider_params(2048, 8, loss.lipschitz, loss.smoothness, 1.0, budget);
    Rng r(StreamKey{8, 1, 0, "spider"});
    SpiderRunOptions opts;
    opts.record_path = true;
    opts.trace = false;
    const auto rep = run_spiderboost(loss, data, p, r, opts);
    std::vector<double> phase, gv;
    for (std::uint64_t t = 0; t < p.T; ++t) {
      if (t % p.q == 0) {
        phase.push_back(p.sigma1);
      } else {
        gv.push_back(std::min(p.sigma2 * (rep.iterates[t] - rep.iterates[t - 1]).norm(), p.sigma2_hat));
      }
    }
    double w1 = 0.0, w2 = 0.0;
    const bool ok = sigmas_match(rep.noise_ledger.sigmas("spider_phase"), phase, w1) &&
                    sigmas_match(rep.noise_ledger.sigmas("spider_gv"), gv, w2) &&
                    rep.noise_ledger.total_draws() == p.T;
    cb.expect(ok, "spiderboost ledger: " + std::to_string(rep.noise_ledger.total_draws()) +
                      " draws, all at calibrated sigma (max rel dev " + fmt(std::max(w1, w2), 3) + ")");
  }
  // Tree: root draws at σ_root, right-child draws at σ_delta.
  {
    const LossSpec loss = synthetic_nonconvex_loss(4);
    const auto p = derive_tree_params(4096, 4, loss.lipschitz, loss.smoothness, 1.0, budget, 0.1);
    const Dataset stream = gen_synthetic(SyntheticKind::glm_fullrank, 4096, 4, 4, 9);
    Rng r(StreamKey{8, 2, 0, "tree"});
    TreeRunOptions opts;
    opts.early_stop = false;
    const auto rep = run_tree_spider(loss, stream.view(), p, r, opts);
    const std::vector<double> root(p.T, p.sigma_root);
    const std::vector<double> delta(p.T * ((std::uint64_t{1} << p.D) - 1), p.sigma_delta);
    double w = 0.0;
    const bool ok = sigmas_match(rep.noise_ledger.sigmas("tree_root"), root, w) &&
                    sigmas_match(rep.noise_ledger.sigmas("tree_delta"), delta, w) &&
                    rep.noise_ledger.total_draws() == root.size() + delta.size();
    cb.expect(ok, "tree ledger: " + std::to_string(rep.noise_ledger.total_draws()) +
                      " draws at sigma_root / sigma_delta");
  }
  // Recursive regularization with both sub-routines.
  for (RRSubroutine sub : {RRSubroutine::noisy_gd, RRSubroutine::phased_sgd}) {
    const std::size_t n = 1024;
    const Dataset data = gen_synthetic(SyntheticKind::glm_fullrank, n, 4, 4, 10);
    const LossSpec loss = glm_loss(tanh_link(), 1.0, 4);
    RRDeriveOptions ropt;
    ropt.K_cap = 200;
    const auto p = derive_rr_params(RRMode::linear_time, n, 4, loss.lipschitz, loss.smoothness, 1.0,
                                    budget, ropt);
    Rng r(StreamKey{8, 3, static_cast<std::uint64_t>(sub), "rr"});
    const auto rep = run_recursive_regularization(data.view(), loss, p, sub, r);
    std::vector<double> want;
    const std::size_t m = n / p.T;
    for (std::size_t t = 1; t < p.T; ++t) {
      if (sub == RRSubroutine::noisy_gd) {
        want.insert(want.end(), p.K[t] - 1, p.sigma[t]);
      } else {
        for (const auto& ph : phased_sgd_layout(m)) {
          want.push_back(p.eta[t] * std::pow(4.0, -static_cast<double>(ph.k)) * p.sigma[t]);
        }
      }
    }
    double w = 0.0;
    const char* site = sub == RRSubroutine::noisy_gd ? "noisy_gd" : "output_perturbation";
    const bool ok = sigmas_match(rep.noise_ledger.sigmas(site), want, w) &&
                    rep.noise_ledger.total_draws() == want.size();
    cb.expect(ok, std::string("recursive regularization (") + to_string(sub) + ") ledger: " +
                      std::to_string(rep.noise_ledger.total_draws()) + " draws, max rel dev " +
                      fmt(w, 3));
  }
  // JL: the base run's draws carry the base's calibration at (ε, δ/2).
  {
    const Dataset data = gen_synthetic(SyntheticKind::glm_lowrank, 2048, 32, 2, 11);
    JLParams jp;
    jp.k = 8;
    jp.rank = 2;
    Rng r(StreamKey{8, 4, 0, "jl"});
    const auto rep = run_jl(spider_base(), data, tanh_link(), jp, budget, r);
    const LossSpec pl = jl_projected_loss(tanh_link(), 1.0);
    const auto p = derive_spider_params(2048, 8, pl.lipschitz, pl.smoothness, 1.0,
                                        budget.with_delta(budget.delta / 2.0));
    const auto phase = rep.base.noise_ledger.sigmas("spider_phase");
    const auto gv = rep.base.noise_ledger.sigmas("spider_gv");
    bool ok = phase.size() == p.phase_count() && gv.size() == p.T - p.phase_count();
    for (double s : phase) ok &= s == p.sigma1;
    for (double s : gv) ok &= s <= p.sigma2_hat;
    cb.expect(ok, "JL (spiderboost base) ledger: " + std::to_string(phase.size() + gv.size()) +
                      " draws, phase draws at sigma1(eps, delta/2), variation draws clamped at sigma2_hat");
  }
}

inline void check_recursive_regularization(CheckBuilder& cb) {
  // Realizable least squares: y = <w*, x>, so every slice shares the minimizer.
  const std::size_t n = 512, d = 4;
  Rng rng(StreamKey{9, 0, 0, "rr"});
  Vec w_star = gaussian_vector(d, 1.0, rng);
  w_star /= w_star.norm();
  std::vector<Sample> pts;
  for (std::size_t i = 0; i < n; ++i) {
    Vec x = uniform_in_ball(d, 1.0, rng);
    const double y = w_star.dot(x);
    pts.push_back({x, y});
  }
  const Dataset data(pts, true);
  const auto dist = FiniteDistribution::uniform(pts);
  const LossSpec loss = glm_loss(squared_link(4.0), 1.0, d);
  const double R_bar = 2.0;

  // Brute-force minimizer oracle: long full-batch GD on the population risk.
  Vec w_gd = Vec::Zero(d);
  for (int it = 0; it < 20000; ++it) w_gd -= 1.0 * dist.population_grad(loss, w_gd);
  cb.note("long-GD minimizer: ||grad|| = " + fmt(dist.population_grad(loss, w_gd).norm(), 3) +
          ", ||w_gd - w*|| = " + fmt((w_gd - w_star).norm(), 3));

  const PrivacyBudget budget{1.0, 1e-6, 1.0};
  RRParams p = derive_rr_params(RRMode::optimal, n, d, loss.lipschitz, loss.smoothness, R_bar, budget);
  const std::size_t m = n / p.T;
  for (std::size_t t = 1; t < p.T; ++t) {
    // Generous iteration budget: four times the (L1 + λ_t)/λ_t · log of the
    // same requirement, instead of the privacy-balanced count.
    const double cond = (loss.smoothness + p.lambdas[t]) / p.lambdas[t];
    const auto K = static_cast<std::uint64_t>(std::ceil(4.0 * cond * std::log(cond))) + 64;
    fill_rr_round(p, t, K, loss.lipschitz, m, budget);
    p.sigma[t] = 0.0;
  }
  for (RRSubroutine sub : {RRSubroutine::noisy_gd, RRSubroutine::phased_sgd}) {
    Rng r(StreamKey{9, 1, 0, "rr_run"});
    const auto rep = run_recursive_regularization(data.view(), loss, p, sub, r);
    const double g = dist.population_grad(loss, rep.w_out).norm();
    // Phased SGD is a single pass over each slice and has no iteration knob,
    // so only the noisy-GD sub-routine is held to the tolerance.
    const bool gated = sub == RRSubroutine::noisy_gd;
    if (!gated) {
      cb.note(std::string("noiseless RR (") + to_string(sub) + ", one pass per slice): population ||grad|| = " +
              fmt(g, 3));
      continue;
    }
    cb.expect(g <= 1e-2, std::string("noiseless RR (") + to_string(sub) + ", T=" +
                             std::to_string(p.T) + "): population ||grad|| = " + fmt(g, 3) +
                             " <= 1e-2; ||w_out - w_gd|| = " + fmt((rep.w_out - w_gd).norm(), 3));
  }

  const std::vector<Vec> it{Vec::Constant(2, 1.0), Vec::Constant(2, -2.0), Vec::Constant(2, 5.0)};
  const Vec k2 = selector_weighted_avg({it[0], it[1]}, 0.5, 1.0);
  const Vec k2_hand = (1.0 * it[0] + 2.0 * it[1]) / 3.0;
  const Vec k3 = selector_weighted_avg(it, 0.25, 1.0);
  const Vec k3_hand = (9.0 * it[0] + 12.0 * it[1] + 16.0 * it[2]) / 37.0;
  const double e2 = (k2 - k2_hand).norm(), e3 = (k3 - k3_hand).norm();
  cb.expect(e2 <= 1e-12 && e3 <= 1e-12, "selector weights: K=2 (eta lambda = 1/2) dev " + fmt(e2, 3) +
                                            ", K=3 (eta lambda = 1/4) dev " + fmt(e3, 3));
}

inline void check_opsgd_stability(CheckBuilder& cb) {
  const std::size_t n = 8, d = 2;
  const double lambda_bar = 1.0;
  const Dataset data = gen_synthetic(SyntheticKind::glm_fullrank, n, d, d, 12);
  Rng rng(StreamKey{10, 0, 0, "opsgd"});
  const Vec center = gaussian_vector(d, 0.3, rng);
  const auto reg = regularize(glm_loss(tanh_link(), 1.0, d), {center}, {lambda_bar});
  const double L0 = 1.0;  // Lipschitz constant of the unregularized per-sample loss
  const double eta = std::log(static_cast<double>(n)) / (lambda_bar * static_cast<double>(n));
  const double R = 2.0;
  const Sample replacement{Vec::Unit(d, 1) * -0.9, 2.5};
  auto output = [&](const std::vector<Sample>& s) {
    Rng r(0);
    return output_perturbed_sgd(Vec::Zero(d), SampleSpan(s), reg.loss, R, eta, 0.0,
                                Selector::weighted(lambda_bar), r);
  };
  const std::vector<Sample> base(data.view().begin(), data.view().end());
  const Vec out = output(base);
  const double bound = 2.0 * L0 * std::log(static_cast<double>(n)) / (lambda_bar * static_cast<double>(n));
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = base;
    s[i] = replacement;
    worst = std::max(worst, (output(s) - out).norm());
  }
  cb.expect(worst <= bound + 1e-9, "8 neighbouring datasets: max ||out(S) - out(S')|| = " + fmt(worst, 6) +
                                       " <= 2 L0 log n / (lambda n) = " + fmt(bound, 6));
}

inline void check_jl(CheckBuilder& cb) {
  const std::size_t d = 512;
  for (std::size_t r : {1u, 2u, 4u}) {
    const auto k = static_cast<std::size_t>(std::ceil(8.0 * r * std::log(2.0 / 0.05) / 0.25));
    Rng rng(StreamKey{11, r, 0, "jl"});
    std::vector<Vec> basis;
    for (std::size_t i = 0; i < r; ++i) basis.push_back(gaussian_vector(d, 1.0, rng));
    std::size_t passes = 0;
    for (int m = 0; m < 200; ++m) {
      Rng mrng = rng.fork();
      const JLMatrix phi = jl_matrix(k, d, mrng);
      if (check_subspace_embedding(phi, basis, 0.5, mrng, 50).pass) ++passes;
    }
    cb.expect(passes >= 190, "r=" + std::to_string(r) + ", k=" + std::to_string(k) +
                                 ": subspace embedding at tau=1/2 passed for " + std::to_string(passes) +
                                 "/200 matrices (>= 95%)");
  }
  const Dataset data = gen_synthetic(SyntheticKind::glm_fullrank, 512, 4, 4, 13);
  const PrivacyBudget budget{1.0, 1e-6, 1.0};
  JLParams jp;
  jp.k = 4;
  jp.rank = 4;
  for (const auto& [name, base] : std::vector<std::pair<std::string, JLBase>>{
           {"spiderboost", spider_base()}, {"recursive regularization", rr_base(1.0, RRMode::linear_time)}}) {
    Rng a(StreamKey{11, 9, 0, "identity"}), b(StreamKey{11, 9, 0, "identity"});
    const auto jl = run_jl(base, data, tanh_link(), jp, budget, identity_jl(4), a);
    const auto direct = base(jl_projected_loss(tanh_link(), 1.0), data,
                             budget.with_delta(budget.delta / 2.0), b);
    cb.expect(jl.w_out == direct.w_out,
              "identity projection reproduces the raw-data " + name + " run bit-for-bit");
  }
}

inline void check_scaling(CheckBuilder& cb, const std::filesystem::path& out) {
  {
    const auto res = run_experiment(with_output(scaling_config_spiderboost(), out));
    std::map<std::size_t, double> med;
    std::string why;
    if (!medians_by_n(res, med, why)) {
      cb.expect(false, "(a) " + why);
    } else {
      bool mono = true;
      std::vector<std::pair<double, double>> xy;
      std::string list;
      double prev = INFINITY;
      for (const auto& [n, m] : med) {
        mono &= m <= prev;
        prev = m;
        xy.emplace_back(static_cast<double>(n), m);
        list += " " + std::to_string(n) + ":" + fmt(m, 3);
      }
      const auto fit = scaling_fit(xy);
      cb.expect(mono && fit.slope >= -1.0 && fit.slope <= -0.35,
                "(a) SpiderBoost medians" + list + "; non-increasing " + (mono ? "yes" : "no") +
                    ", slope " + fmt(fit.slope, 3) + " in [-1.0, -0.35]");
    }
  }
  {
    const auto res = run_experiment(with_output(scaling_config_tree(), out));
    std::map<std::size_t, double> med;
    std::string why;
    if (!medians_by_n(res, med, why)) {
      cb.expect(false, "(b) " + why);
    } else {
      bool mono = true;
      std::vector<std::pair<double, double>> xy;
      std::string list;
      double prev = INFINITY;
      for (const auto& [n, m] : med) {
        mono &= m <= prev;
        prev = m;
        xy.emplace_back(static_cast<double>(n), m);
        list += " " + std::to_string(n) + ":" + fmt(m, 3);
      }
      const auto fit = scaling_fit(xy);
      cb.expect(mono && fit.slope >= -0.8 && fit.slope <= -0.2,
                "(b) Tree-Spider population medians" + list + "; non-increasing " +
                    (mono ? "yes" : "no") + ", slope " + fmt(fit.slope, 3) + " in [-0.8, -0.2]");
    }
  }
  {
    const auto full = run_experiment(with_output(jl_config(false), out));
    const auto jl = run_experiment(with_output(jl_config(true), out));
    std::map<std::size_t, double> med;
    std::string why;
    if (!medians_by_n(full, med, why)) {
      cb.expect(false, "(c) full-d: " + why);
    } else {
      const double full_median = med.begin()->second;
      std::size_t wins = 0;
      std::string list;
      bool rows_ok = true;
      for (const auto& p : jl.points) {
        rows_ok &= p.row.status == "ok" && p.row.grad_norm.has_value();
        if (!rows_ok) break;
        if (*p.row.grad_norm < full_median) ++wins;
        list += " " + fmt(*p.row.grad_norm, 3);
      }
      cb.expect(rows_ok && wins >= 4, "(c) JL-SpiderBoost per-seed grad norms" + list +
                                          " vs full-d median " + fmt(full_median, 3) + ": " +
                                          std::to_string(wins) + "/5 seeds better (need >= 4)");
    }
  }
}

inline void check_determinism(CheckBuilder& cb, const std::filesystem::path& out) {
  namespace fs = std::filesystem;
  const fs::path again = out / "rerun";
  for (const auto& cfg : acceptance_experiments()) {
    const auto first_csv = out / (cfg.name + ".csv");
    const auto first_ledger = out / (cfg.name + "_ledger.csv");
    if (!fs::exists(first_csv)) run_experiment(with_output(cfg, out));
    const auto second = run_experiment(with_output(cfg, again));
    const bool same = slurp(first_csv) == slurp(second.csv_path) &&
                      slurp(first_ledger) == slurp(second.ledger_path);
    cb.expect(same, cfg.name + ": rerun results and ledger CSVs byte-identical");
  }
}

}  // namespace detail

/// Runs the suite, invoking `report` after each check.
inline std::vector<CheckResult> run_validation_suite(
    const ValidationOptions& options, const std::function<void(const CheckResult&)>& report = {}) {
  namespace fs = std::filesystem;
  const fs::path out(options.out_dir);
  struct Spec {
    int id;
    const char* title;
    bool slow;
    std::function<void(detail::CheckBuilder&)> body;
  };
  const std::vector<Spec> specs{
      {1, "gradient correctness", false, detail::check_gradients},
      {2, "Huber stationarity oracle", false, detail::check_huber_stationarity},
      {3, "SpiderBoost estimator error bound", true, detail::check_spider_bound},
      {4, "noiseless degeneration to gradient descent", false, detail::check_noiseless_degeneration},
      {5, "tree structure", false, detail::check_tree_structure},
      {6, "Tree-Spider sample budget", true, detail::check_tree_budget},
      {7, "tree sensitivity realization", false, detail::check_tree_sensitivity},
      {8, "privacy calibration determinism", false, detail::check_calibration},
      {9, "recursive regularization correctness", true, detail::check_recursive_regularization},
      {10, "OutputPerturbedSGD stability", false, detail::check_opsgd_stability},
      {11, "JL properties", false, detail::check_jl},
      {12, "scaling trends", true, [&](detail::CheckBuilder& cb) { detail::check_scaling(cb, out); }},
      {13, "determinism", true, [&](detail::CheckBuilder& cb) { detail::check_determinism(cb, out); }},
  };
  std::vector<CheckResult> results;
  for (const auto& s : specs) {
    if (!options.only.empty() &&
        std::find(options.only.begin(), options.only.end(), s.id) == options.only.end()) {
      continue;
    }
    CheckResult r;
    r.id = s.id;
    r.title = s.title;
    if (options.quick && s.slow) {
      r.skipped = true;
      r.pass = true;
    } else {
      const auto start = std::chrono::steady_clock::now();
      detail::CheckBuilder cb(r);
      try {
        s.body(cb);
        r.pass = cb.ok();
      } catch (const std::exception& e) {
        r.lines.push_back(std::string("FAIL  exception: ") + e.what());
        r.pass = false;
      }
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    if (report) report(r);
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace dpstat
