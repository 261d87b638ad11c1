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
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dpstat/core/dataset.hpp"
#include "dpstat/core/loss.hpp"
#include "dpstat/core/rng.hpp"
#include "dpstat/core/sampling.hpp"
#include "dpstat/privacy/calibration.hpp"
#include "dpstat/privacy/noise.hpp"

namespace dpstat {

/// Parameters of private SpiderBoost. Phases have length q; each phase opens
/// with a b1-sample gradient (noise σ1), and later steps add b2-sample
/// gradient variations with noise min{σ2 ‖w_t − w_{t−1}‖, σ̂2}.
struct SpiderParams {
  double eta = 0.0;
  std::uint64_t q = 1;
  std::uint64_t b1 = 1;
  std::uint64_t b2 = 1;
  std::uint64_t T = 1;
  double sigma1 = 0.0;
  double sigma2 = 0.0;
  double sigma2_hat = 0.0;
  bool with_replacement = false;

  void validate(std::size_t n) const {
    require(n >= 1, "SpiderParams: empty data set");
    require(eta > 0.0, "SpiderParams: eta must be > 0");
    require(q >= 1, "SpiderParams: q must be >= 1");
    require(T >= 1, "SpiderParams: T must be >= 1");
    require(b1 >= 1 && (with_replacement || b1 <= n), "SpiderParams: need 1 <= b1 <= n");
    require(b2 >= 1 && (with_replacement || b2 <= n), "SpiderParams: need 1 <= b2 <= n");
    require(sigma1 >= 0.0 && sigma2 >= 0.0 && sigma2_hat >= 0.0,
            "SpiderParams: noise scales must be >= 0");
  }

  /// Number of phase-opening steps among t = 0, ..., T-1.
  std::uint64_t phase_count() const { return (T + q - 1) / q; }

  /// Per-sample gradient evaluations of a full run.
  std::uint64_t analytic_oracle_calls() const {
    return b1 * phase_count() + 2 * b2 * (T - phase_count());
  }
};

/// Noise scales for given (b1, b2, q, T): σ1 covers ⌈T/q⌉ phase-opening
/// queries with per-element bound L0, σ2 and σ̂2 cover T variation queries
/// with bounds L1 (per unit step) and 2 L0.
inline void calibrate_spider_noise(SpiderParams& p, std::size_t n, double L0, double L1,
                                   const PrivacyBudget& budget) {
  p.sigma1 = accountant_sigma(L0, p.b1, p.phase_count(), n, budget);
  p.sigma2 = accountant_sigma(L1, p.b2, p.T, n, budget);
  p.sigma2_hat = accountant_sigma(2.0 * L0, p.b2, p.T, n, budget);
}

/// Closed-form parameter schedule for the empirical-stationarity guarantee:
/// η = 1/(2 L1), b1 = n, and b2, T, q balanced against
/// ᾱ = √(d log(1/δ)) / (n ε). Integers are floored and clamped to q ≥ 1,
/// 1 ≤ b2 ≤ n, T ≥ 1.
inline SpiderParams derive_spider_params(std::size_t n, std::size_t d, double L0, double L1,
                                         double F0, const PrivacyBudget& budget) {
  budget.validate();
  require(n >= 1 && d >= 1, "derive_spider_params: n and d must be >= 1");
  require(L0 > 0.0 && L1 > 0.0 && F0 > 0.0,
          "derive_spider_params: L0, L1, F0 must be > 0");
  const double eps = budget.eps;
  const double log_inv_delta = std::log(1.0 / budget.delta);
  const double nd = static_cast<double>(n);
  const double dd = static_cast<double>(d);

  const double need_a = (L0 * eps) * (L0 * eps) / (F0 * L1 * dd * log_inv_delta);
  const double need_b = std::sqrt(dd) * std::max(1.0, std::sqrt(L1 * F0) / L0) / eps;
  if (nd < need_a || nd < need_b) {
    std::ostringstream msg;
    msg << "derive_spider_params: sample size hypothesis violated (n=" << n << ")";
    if (nd < need_a) msg << "; need n >= (L0 eps)^2/(F0 L1 d log(1/delta)) = " << need_a;
    if (nd < need_b) msg << "; need n >= sqrt(d) max{1, sqrt(L1 F0)/L0}/eps = " << need_b;
    throw PreconditionError(msg.str());
  }

  const double dlog = dd * log_inv_delta;
  const double alpha_bar = std::sqrt(dlog) / (nd * eps);

  SpiderParams p;
  p.eta = 1.0 / (2.0 * L1);
  p.b1 = n;
  const double b2_a = std::pow(L0 * nd * eps / std::sqrt(F0 * L1 * dlog), 2.0 / 3.0);
  const double b2_b =
      std::cbrt(L0 * nd * dlog) / (std::pow(L1 * F0, 1.0 / 6.0) * std::pow(eps, 2.0 / 3.0));
  p.b2 = static_cast<std::uint64_t>(std::floor(std::max(b2_a, b2_b)));
  p.b2 = std::clamp<std::uint64_t>(p.b2, 1, n);
  const double T_a = std::pow(std::pow(F0 * L1, 0.25) * nd * eps / std::sqrt(L0 * dlog), 4.0 / 3.0);
  const double T_b = nd * eps / std::sqrt(dlog);
  p.T = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::floor(std::max(T_a, T_b))));
  const double q_real = 1.0 / (static_cast<double>(p.T) * alpha_bar * alpha_bar);
  p.q = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::floor(q_real)));
  calibrate_spider_noise(p, n, L0, L1, budget);
  return p;
}

struct TracePoint {
  std::uint64_t t = 0;
  double grad_norm = 0.0;
};

struct OptimizerReport {
  Vec w_out;
  std::vector<TracePoint> grad_norm_trace;
  std::uint64_t oracle_calls = 0;
  NoiseLedger noise_ledger;
  std::uint64_t selected_index = 0;  // in [1, T]
  std::vector<std::uint64_t> phase_starts;
  std::vector<Vec> iterates;  // w_0, ..., w_T when RunOptions::record_path
};

struct SpiderRunOptions {
  bool record_path = false;
  bool trace = true;
  std::size_t trace_points = 200;
};

/// Private SpiderBoost on the empirical risk of `data`, started at w_0 = 0.
/// Runs t = 0, ..., T-1 and returns an iterate chosen uniformly from
/// w_1, ..., w_T using `rng` after the loop.
inline OptimizerReport run_spiderboost(const LossSpec& loss, const Dataset& data,
                                       const SpiderParams& params, Rng& rng,
                                       const SpiderRunOptions& options = {}) {
  params.validate(data.size());
  bind_check(loss, data);
  const std::size_t n = data.size();
  const std::size_t d = data.dim();
  BatchSampler sampler(n, params.with_replacement);

  OptimizerReport report;
  std::vector<Vec> iterates;
  iterates.reserve(params.T + 1);
  iterates.push_back(Vec::Zero(static_cast<Eigen::Index>(d)));
  Vec estimate = Vec::Zero(static_cast<Eigen::Index>(d));
  const std::uint64_t stride =
      std::max<std::uint64_t>(1, (params.T + options.trace_points - 1) /
                                     std::max<std::size_t>(1, options.trace_points));

  for (std::uint64_t t = 0; t < params.T; ++t) {
    const Vec& w = iterates.back();
    if (options.trace && t % stride == 0) {
      report.grad_norm_trace.push_back({t, erm_grad(loss, w, data).norm()});
    }
    if (t % params.q == 0) {
      const auto& batch = sampler.draw(params.b1, rng);
      Vec g = Vec::Zero(static_cast<Eigen::Index>(d));
      const double weight = 1.0 / static_cast<double>(batch.size());
      for (auto i : batch) loss.accumulate_grad(w, data[i], weight, g);
      estimate = g + draw_gaussian(d, params.sigma1, rng, &report.noise_ledger, "spider_phase");
      report.oracle_calls += params.b1;
      report.phase_starts.push_back(t);
    } else {
      const Vec& w_prev = iterates[iterates.size() - 2];
      const auto& batch = sampler.draw(params.b2, rng);
      Vec delta = Vec::Zero(static_cast<Eigen::Index>(d));
      const double weight = 1.0 / static_cast<double>(batch.size());
      for (auto i : batch) {
        loss.accumulate_grad(w, data[i], weight, delta);
        loss.accumulate_grad(w_prev, data[i], -weight, delta);
      }
      const double sigma =
          std::min(params.sigma2 * (w - w_prev).norm(), params.sigma2_hat);
      delta += draw_gaussian(d, sigma, rng, &report.noise_ledger, "spider_gv");
      estimate += delta;
      report.oracle_calls += 2 * params.b2;
    }
    iterates.push_back(w - params.eta * estimate);
  }

  report.selected_index = 1 + rng.index(params.T);
  report.w_out = iterates[report.selected_index];
  if (options.record_path) report.iterates = std::move(iterates);
  return report;
}

/// Per-step Monte Carlo statistics of the gradient estimator along a frozen
/// iterate path.
struct EstimatorStep {
  std::uint64_t t = 0;
  double mean_sq_err = 0.0;   // MC mean of ‖∇_t − ∇F(w_t; S)‖²
  double std_err = 0.0;       // MC standard error of mean_sq_err
  double bound = 0.0;         // τ2² Σ_{k=s_t+1}^{t} ‖w_k − w_{k−1}‖² + τ1²
  Vec estimator_mean;         // MC mean of ∇_t
  Vec estimator_std_err;      // componentwise MC standard error
  Vec true_grad;              // ∇F(w_t; S)

  double ratio() const { return bound > 0.0 ? mean_sq_err / bound : 0.0; }
  bool within(double n_std_err) const { return mean_sq_err <= bound + n_std_err * std_err; }
};

struct SpiderBoundCheck {
  double tau1_sq = 0.0;
  double tau2_sq = 0.0;
  std::size_t trials = 0;
  std::vector<EstimatorStep> steps;

  bool all_within(double n_std_err) const {
    return std::all_of(steps.begin(), steps.end(),
                       [&](const EstimatorStep& s) { return s.within(n_std_err); });
  }
};

/// Re-draws the SpiderBoost gradient estimator `trials` times along the
/// frozen path w_0, ..., w_{P-1} and compares its mean squared error with
/// τ2² Σ ‖w_k − w_{k−1}‖² + τ1², where τ1² = L0²/b1 + d σ1² and
/// τ2² = L1²/b2 + d σ2².
inline SpiderBoundCheck spider_estimator_stats(const LossSpec& loss, const Dataset& data,
                                               const SpiderParams& params,
                                               const std::vector<Vec>& path,
                                               std::size_t trials, Rng& rng) {
  params.validate(data.size());
  require(!path.empty(), "spider_estimator_stats: empty path");
  const std::size_t d = data.dim();
  const auto P = path.size();
  BatchSampler sampler(data.size(), params.with_replacement);

  SpiderBoundCheck out;
  out.trials = trials;
  out.tau1_sq = loss.lipschitz * loss.lipschitz / static_cast<double>(params.b1) +
                static_cast<double>(d) * params.sigma1 * params.sigma1;
  out.tau2_sq = loss.smoothness * loss.smoothness / static_cast<double>(params.b2) +
                static_cast<double>(d) * params.sigma2 * params.sigma2;

  std::vector<Vec> true_grads;
  for (const auto& w : path) true_grads.push_back(erm_grad(loss, w, data));

  std::vector<double> sum_err(P, 0.0), sum_err_sq(P, 0.0);
  std::vector<Vec> sum_est(P, Vec::Zero(static_cast<Eigen::Index>(d)));
  std::vector<Vec> sum_est_sq(P, Vec::Zero(static_cast<Eigen::Index>(d)));

  for (std::size_t trial = 0; trial < trials; ++trial) {
    Vec estimate = Vec::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t t = 0; t < P; ++t) {
      const Vec& w = path[t];
      if (t % params.q == 0) {
        const auto& batch = sampler.draw(params.b1, rng);
        Vec g = Vec::Zero(static_cast<Eigen::Index>(d));
        const double weight = 1.0 / static_cast<double>(batch.size());
        for (auto i : batch) loss.accumulate_grad(w, data[i], weight, g);
        estimate = g + draw_gaussian(d, params.sigma1, rng);
      } else {
        const Vec& w_prev = path[t - 1];
        const auto& batch = sampler.draw(params.b2, rng);
        const double weight = 1.0 / static_cast<double>(batch.size());
        for (auto i : batch) {
          loss.accumulate_grad(w, data[i], weight, estimate);
          loss.accumulate_grad(w_prev, data[i], -weight, estimate);
        }
        const double sigma = std::min(params.sigma2 * (w - w_prev).norm(), params.sigma2_hat);
        estimate += draw_gaussian(d, sigma, rng);
      }
      const double err = (estimate - true_grads[t]).squaredNorm();
      sum_err[t] += err;
      sum_err_sq[t] += err * err;
      sum_est[t] += estimate;
      sum_est_sq[t] += estimate.cwiseProduct(estimate);
    }
  }

  const double m = static_cast<double>(trials);
  double path_sum = 0.0;
  for (std::size_t t = 0; t < P; ++t) {
    if (t % params.q == 0) {
      path_sum = 0.0;
    } else {
      path_sum += (path[t] - path[t - 1]).squaredNorm();
    }
    EstimatorStep step;
    step.t = t;
    step.mean_sq_err = sum_err[t] / m;
    const double var = std::max(0.0, sum_err_sq[t] / m - step.mean_sq_err * step.mean_sq_err);
    step.std_err = trials > 1 ? std::sqrt(var * m / (m - 1.0) / m) : 0.0;
    step.bound = out.tau2_sq * path_sum + out.tau1_sq;
    step.estimator_mean = sum_est[t] / m;
    Vec var_est = (sum_est_sq[t] / m - step.estimator_mean.cwiseProduct(step.estimator_mean))
                      .cwiseMax(0.0);
    step.estimator_std_err =
        trials > 1 ? Vec((var_est * (m / (m - 1.0)) / m).cwiseSqrt()) : Vec::Zero(var_est.size());
    step.true_grad = true_grads[t];
    out.steps.push_back(std::move(step));
  }
  return out;
}

/// Builds a frozen path by running the algorithm forward for `path_points`
/// steps, then checks the estimator error bound at each point.
inline SpiderBoundCheck validate_spider_error_bound(const LossSpec& loss, const Dataset& data,
                                                    SpiderParams params, std::size_t trials,
                                                    Rng& rng, std::size_t path_points = 8) {
  require(trials >= 100, "validate_spider_error_bound: need at least 100 trials");
  require(path_points >= 1, "validate_spider_error_bound: need at least one path point");
  SpiderParams forward = params;
  forward.T = path_points;
  Rng path_rng = rng.fork();
  SpiderRunOptions options;
  options.record_path = true;
  options.trace = false;
  auto run = run_spiderboost(loss, data, forward, path_rng, options);
  std::vector<Vec> path(run.iterates.begin(), run.iterates.begin() + static_cast<long>(path_points));
  return spider_estimator_stats(loss, data, params, path, trials, rng);
}

}  // namespace dpstat
