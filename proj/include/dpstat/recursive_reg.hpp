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
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dpstat/core/dataset.hpp"
#include "dpstat/core/loss.hpp"
#include "dpstat/core/rng.hpp"
#include "dpstat/core/types.hpp"
#include "dpstat/privacy/calibration.hpp"
#include "dpstat/privacy/noise.hpp"

namespace dpstat {

/// f(w; x) + Σ_i (λ_i / 2) ‖w − w̄_i‖².
struct RegularizedLoss {
  LossSpec base;
  std::vector<Vec> centers;
  std::vector<double> lambdas;
  LossSpec loss;  // the composed per-sample loss

  double lambda_sum() const {
    double s = 0.0;
    for (double l : lambdas) s += l;
    return s;
  }
  double strong_convexity() const { return lambda_sum(); }

  /// ∇F(w; S) + Σ λ_i (w − w̄_i), evaluated without going through `loss`.
  Vec erm_grad_identity(const Vec& w, SampleSpan data) const {
    Vec g = dpstat::erm_grad(base, w, data);
    for (std::size_t i = 0; i < centers.size(); ++i) g += lambdas[i] * (w - centers[i]);
    return g;
  }
};

inline RegularizedLoss regularize(const LossSpec& base, std::vector<Vec> centers,
                                  std::vector<double> lambdas) {
  require(centers.size() == lambdas.size(), "regularize: centers and lambdas differ in length");
  for (double l : lambdas) require(l >= 0.0, "regularize: lambdas must be >= 0");
  for (std::size_t i = 1; i < centers.size(); ++i) {
    require(centers[i].size() == centers[0].size(), "regularize: centers differ in dimension");
  }
  if (base.dim != 0 && !centers.empty()) {
    require(static_cast<std::size_t>(centers[0].size()) == base.dim,
            "regularize: center dimension does not match the loss");
  }

  RegularizedLoss out;
  out.base = base;
  out.centers = centers;
  out.lambdas = lambdas;
  out.loss = base;
  if (centers.empty()) return out;

  auto c = std::make_shared<const std::vector<Vec>>(std::move(centers));
  auto l = std::make_shared<const std::vector<double>>(std::move(lambdas));
  const double lsum = out.lambda_sum();
  out.loss.name = base.name + "+reg" + std::to_string(c->size());
  out.loss.dim = static_cast<std::size_t>(c->front().size());
  out.loss.smoothness = base.smoothness + lsum;
  out.loss.initial_gap.reset();
  out.loss.glm.reset();
  auto base_value = base.value;
  auto base_grad = base.accumulate_grad;
  out.loss.value = [base_value, c, l](const Vec& w, const Sample& s) {
    double v = base_value(w, s);
    for (std::size_t i = 0; i < c->size(); ++i) v += 0.5 * (*l)[i] * (w - (*c)[i]).squaredNorm();
    return v;
  };
  out.loss.accumulate_grad = [base_grad, c, l](const Vec& w, const Sample& s, double scale,
                                               Vec& acc) {
    base_grad(w, s, scale, acc);
    for (std::size_t i = 0; i < c->size(); ++i) acc += (scale * (*l)[i]) * (w - (*c)[i]);
  };
  auto base_probe = base.probe;
  const auto dim = out.loss.dim;
  if (base_probe) {
    out.loss.probe = [base_probe, dim](Rng& rng, std::size_t) { return base_probe(rng, dim); };
  }
  return out;
}

/// Σ γ_k w_k / Σ γ_k with γ_k = (1 − ηλ)^{−k}, k = 1..K. Weights are
/// normalized by the largest (the last) before summing.
inline Vec selector_weighted_avg(const std::vector<Vec>& iterates, double eta, double lambda) {
  require(!iterates.empty(), "selector_weighted_avg: no iterates");
  const double el = eta * lambda;
  require(el > 0.0 && el < 1.0, "selector_weighted_avg: need 0 < eta * lambda < 1");
  const double r = 1.0 - el;
  const std::size_t K = iterates.size();
  Vec acc = Vec::Zero(iterates.front().size());
  double total = 0.0;
  for (std::size_t k = 1; k <= K; ++k) {
    const double wk = std::pow(r, static_cast<double>(K - k));
    acc += wk * iterates[k - 1];
    total += wk;
  }
  return acc / total;
}

/// How a sub-routine turns its iterates into one point.
struct Selector {
  enum class Kind { weighted_avg, last, average };
  Kind kind = Kind::weighted_avg;
  double lambda = 0.0;  // weighted_avg uses (1 − ηλ) with the run's own step η

  static Selector weighted(double lambda) { return {Kind::weighted_avg, lambda}; }
  static Selector last_iterate() { return {Kind::last, 0.0}; }
  static Selector plain_average() { return {Kind::average, 0.0}; }
};

/// Streaming form of a Selector, so long runs need not store their iterates.
/// For weighted_avg the running mean is updated with the exact weight ratio
/// γ_k / Σ_{j≤k} γ_j = (1 − r) / (1 − r^k).
class SelectorAccumulator {
 public:
  SelectorAccumulator(const Selector& sel, double eta) : sel_(sel) {
    if (sel.kind == Selector::Kind::weighted_avg) {
      const double el = eta * sel.lambda;
      require(el > 0.0 && el < 1.0, "selector: need 0 < eta * lambda < 1");
      r_ = 1.0 - el;
    }
  }

  void push(const Vec& w) {
    ++count_;
    if (count_ == 1) {
      acc_ = w;
      rk_ = r_;
      return;
    }
    switch (sel_.kind) {
      case Selector::Kind::last:
        acc_ = w;
        break;
      case Selector::Kind::average:
        acc_ += (w - acc_) / static_cast<double>(count_);
        break;
      case Selector::Kind::weighted_avg: {
        rk_ *= r_;
        const double share = (1.0 - r_) / (1.0 - rk_);
        acc_ += share * (w - acc_);
        break;
      }
    }
  }

  Vec result() const {
    require(count_ > 0, "selector: no iterates");
    return acc_;
  }

 private:
  Selector sel_;
  double r_ = 1.0;
  double rk_ = 1.0;
  std::size_t count_ = 0;
  Vec acc_;
};

inline Vec apply_selector(const Selector& sel, const std::vector<Vec>& iterates, double eta) {
  if (sel.kind == Selector::Kind::weighted_avg) {
    return selector_weighted_avg(iterates, eta, sel.lambda);
  }
  SelectorAccumulator acc(sel, eta);
  for (const auto& w : iterates) acc.push(w);
  return acc.result();
}

/// Work counters and noise record shared by the sub-routines.
struct SubroutineStats {
  std::uint64_t oracle_calls = 0;
  NoiseLedger* ledger = nullptr;
  std::vector<Vec>* iterates = nullptr;  // every iterate, when non-null
  double max_iterate_norm = 0.0;
};

/// Projected noisy full-batch gradient descent from w_1 = 0:
/// w_{t+1} = Π_R(w_t − η (∇F(w_t; S) + ξ_t)), t = 1..T−1; returns the
/// selector over w_1..w_T.
inline Vec noisy_gd(SampleSpan S, const LossSpec& loss, double R, std::size_t T, double eta,
                    const Selector& selector, double sigma, Rng& rng,
                    SubroutineStats* stats = nullptr) {
  require(!S.empty(), "noisy_gd: empty dataset");
  require(T >= 1, "noisy_gd: T must be >= 1");
  require(sigma >= 0.0 && eta >= 0.0, "noisy_gd: eta and sigma must be >= 0");
  const std::size_t d = static_cast<std::size_t>(S.front().x.size());
  Vec w = Vec::Zero(static_cast<Eigen::Index>(d));
  SelectorAccumulator acc(selector, eta);
  auto visit = [&](const Vec& v) {
    acc.push(v);
    if (stats) {
      stats->max_iterate_norm = std::max(stats->max_iterate_norm, v.norm());
      if (stats->iterates) stats->iterates->push_back(v);
    }
  };
  visit(w);
  NoiseLedger* ledger = stats ? stats->ledger : nullptr;
  for (std::size_t t = 1; t < T; ++t) {
    Vec g = mean_grad(loss, w, S);
    g += draw_gaussian(d, sigma, rng, ledger, "noisy_gd");
    w = project_ball(w - eta * g, R);
    if (stats) stats->oracle_calls += S.size();
    visit(w);
  }
  return acc.result();
}

/// One in-order pass w_{t+1} = Π_R(w_t − η ∇f(w_t; x_t)), t = 1..|S|−1,
/// then selector({w_t}) + N(0, σ² I).
inline Vec output_perturbed_sgd(const Vec& w1, SampleSpan S, const LossSpec& loss, double R,
                                double eta, double sigma, const Selector& selector, Rng& rng,
                                SubroutineStats* stats = nullptr) {
  require(!S.empty(), "output_perturbed_sgd: |S| must be >= 1");
  require(sigma >= 0.0 && eta >= 0.0, "output_perturbed_sgd: eta and sigma must be >= 0");
  require(w1.size() == S.front().x.size(), "output_perturbed_sgd: w1 dimension mismatch");
  Vec w = w1;
  SelectorAccumulator acc(selector, eta);
  auto visit = [&](const Vec& v) {
    acc.push(v);
    if (stats) {
      stats->max_iterate_norm = std::max(stats->max_iterate_norm, v.norm());
      if (stats->iterates) stats->iterates->push_back(v);
    }
  };
  visit(w);
  Vec g(w.size());
  for (std::size_t t = 0; t + 1 < S.size(); ++t) {
    g.setZero();
    loss.accumulate_grad(w, S[t], 1.0, g);
    w = project_ball(w - eta * g, R);
    if (stats) ++stats->oracle_calls;
    visit(w);
  }
  NoiseLedger* ledger = stats ? stats->ledger : nullptr;
  return acc.result() + draw_gaussian(static_cast<std::size_t>(w.size()), sigma, rng, ledger,
                                      "output_perturbation");
}

/// Phase layout of phased_sgd for |S| samples: K = ⌈log2 |S|⌉ phases, phase
/// k taking the next ⌊|S| / 2^k⌋ samples; stops before the first empty slice.
struct Phase {
  std::size_t k = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline std::vector<Phase> phased_sgd_layout(std::size_t size) {
  std::vector<Phase> phases;
  std::size_t K = 0;
  while ((std::size_t{1} << K) < size) ++K;
  std::size_t pos = 0;
  for (std::size_t k = 1; k <= K; ++k) {
    const std::size_t len = size >> k;
    if (len == 0 || pos + len > size) break;
    phases.push_back({k, pos, pos + len});
    pos += len;
  }
  return phases;
}

/// Warm-started OutputPerturbedSGD phases with η_k = 4^{−k} η and
/// σ_k = η_k σ, starting from 0.
inline Vec phased_sgd(SampleSpan S, const LossSpec& loss, double R, double eta, double sigma,
                      const Selector& selector, Rng& rng, SubroutineStats* stats = nullptr,
                      std::vector<double>* phase_steps = nullptr) {
  require(S.size() >= 2, "phased_sgd: |S| must be >= 2");
  Vec w = Vec::Zero(S.front().x.size());
  for (const auto& ph : phased_sgd_layout(S.size())) {
    const double eta_k = eta * std::pow(4.0, -static_cast<double>(ph.k));
    if (phase_steps) phase_steps->push_back(eta_k);
    // A zero step makes the weighted selector degenerate; all iterates equal w then.
    Selector sel = selector;
    if (sel.kind == Selector::Kind::weighted_avg && eta_k * sel.lambda <= 0.0) {
      sel = Selector::last_iterate();
    }
    w = output_perturbed_sgd(w, S.subspan(ph.begin, ph.end - ph.begin), loss, R, eta_k,
                             eta_k * sigma, sel, rng, stats);
  }
  return w;
}

enum class RRMode { optimal, linear_time };
enum class RRSubroutine { noisy_gd, phased_sgd };

inline const char* to_string(RRMode m) { return m == RRMode::optimal ? "optimal" : "linear_time"; }
inline const char* to_string(RRSubroutine s) {
  return s == RRSubroutine::noisy_gd ? "noisy_gd" : "phased_sgd";
}

/// Schedules indexed by t = 0..T−1 (entry 0 carries λ_0 and R_0; the
/// sub-routine fields at index 0 are unused).
struct RRParams {
  std::size_t T = 1;
  double lambda0 = 0.0;
  std::vector<double> lambdas;
  std::vector<double> radii;
  std::vector<std::uint64_t> K;
  std::vector<double> eta;
  std::vector<double> sigma;
  double R_bar = 1.0;
  RRMode mode = RRMode::optimal;
  std::uint64_t K_cap = 10'000'000;
  bool K_capped = false;

  void validate() const {
    require(T >= 1, "RRParams: T must be >= 1");
    require(lambdas.size() == T && radii.size() == T && K.size() == T && eta.size() == T &&
                sigma.size() == T,
            "RRParams: schedules must have T entries");
    require(lambda0 > 0.0, "RRParams: lambda0 must be > 0");
  }
};

struct RRDeriveOptions {
  std::uint64_t K_cap = 10'000'000;
};

/// Step size log K / (λ_t K) and noise 8 L0 K √(log 1/δ) / (m ε) for slice size m.
inline void fill_rr_round(RRParams& p, std::size_t t, std::uint64_t K, double L0, std::size_t m,
                          const PrivacyBudget& budget) {
  p.K[t] = K;
  p.eta[t] = std::log(static_cast<double>(K)) / (p.lambdas[t] * static_cast<double>(K));
  p.sigma[t] = 8.0 * L0 * static_cast<double>(K) * std::sqrt(std::log(1.0 / budget.delta)) /
               (static_cast<double>(m) * budget.eps);
}

inline RRParams derive_rr_params(RRMode mode, std::size_t n, std::size_t d, double L0, double L1,
                                 double R_bar, const PrivacyBudget& budget,
                                 const RRDeriveOptions& options = {}) {
  budget.validate();
  require(n >= 1 && d >= 1, "derive_rr_params: n and d must be >= 1");
  require(L0 > 0.0 && L1 > 0.0, "derive_rr_params: L0 and L1 must be > 0");
  require(R_bar > 0.0, "derive_rr_params: R_bar must be > 0");
  const double nd = static_cast<double>(n);
  const double dd = static_cast<double>(d);
  const double eps = budget.eps;
  const double log_inv_delta = std::log(1.0 / budget.delta);
  const double rate = std::min(1.0 / nd, dd / (nd * nd * eps * eps));

  RRParams p;
  p.mode = mode;
  p.R_bar = R_bar;
  p.K_cap = options.K_cap;
  if (mode == RRMode::optimal) {
    p.lambda0 = L0 * L0 / (L1 * R_bar) * rate;
  } else {
    p.lambda0 = std::max(L0 * L0 / (L1 * R_bar * R_bar) * rate, L1 * std::log(nd) / nd);
  }
  if (!(p.lambda0 < L1)) {
    std::ostringstream msg;
    msg << "derive_rr_params: lambda = " << p.lambda0 << " >= L1 = " << L1
        << ", so T = floor(log2(L1/lambda)) would be 0";
    throw PreconditionError(msg.str());
  }
  p.T = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::log2(L1 / p.lambda0))));
  const std::size_t m = n / p.T;
  require(m >= 2 || p.T == 1, "derive_rr_params: fewer than 2 samples per round");

  p.lambdas.resize(p.T);
  p.radii.resize(p.T);
  p.K.assign(p.T, 0);
  p.eta.assign(p.T, 0.0);
  p.sigma.assign(p.T, 0.0);
  const double Td = static_cast<double>(p.T);
  for (std::size_t t = 0; t < p.T; ++t) {
    p.lambdas[t] = std::ldexp(p.lambda0, static_cast<int>(t));
    p.radii[t] = std::pow(std::sqrt(2.0), static_cast<double>(t)) * R_bar;
    if (t == 0) continue;
    double K_real;
    if (mode == RRMode::optimal) {
      const double cond = (L1 + p.lambdas[t]) / p.lambdas[t];
      const double branch = nd * nd * eps * eps * (L0 * L0 * p.lambda0 + std::pow(L1, 1.5)) /
                            (Td * Td * p.lambda0 * dd * L0 * L0 * log_inv_delta);
      K_real = std::ceil(std::max(cond * std::log(cond), branch));
    } else {
      K_real = static_cast<double>(m);
    }
    std::uint64_t K = static_cast<std::uint64_t>(std::max(2.0, K_real));
    if (K > p.K_cap) {
      K = p.K_cap;
      p.K_capped = true;
    }
    fill_rr_round(p, t, K, L0, std::max<std::size_t>(m, 1), budget);
  }
  p.validate();
  return p;
}

struct RRRound {
  std::size_t t = 0;
  double lambda = 0.0;
  double radius = 0.0;
  std::uint64_t K = 0;
  double eta = 0.0;
  double sigma = 0.0;
  std::size_t slice_begin = 0;
  std::size_t slice_end = 0;
  double center_norm = 0.0;
  double max_iterate_norm = 0.0;
};

struct RRReport {
  Vec w_out;
  std::vector<RRRound> rounds;
  bool no_rounds = false;  // T = 1: nothing ran and the output is 0
  bool K_capped = false;
  std::uint64_t oracle_calls = 0;
  NoiseLedger noise_ledger;
  RegularizedLoss final_objective;  // f^{(T−1)}
};

/// Recursive regularization. Round t = 1..T−1 runs the sub-routine on
/// f^{(t−1)} over the radius-R_t ball using the t-th disjoint slice of
/// ⌊n/T⌋ samples, then adds (λ_t/2)‖w − w̄_t‖². Returns the last center.
inline RRReport run_recursive_regularization(SampleSpan S, const LossSpec& loss,
                                             const RRParams& params, RRSubroutine subroutine,
                                             Rng& rng) {
  params.validate();
  require(!S.empty(), "run_recursive_regularization: empty dataset");
  bind_check(loss, S);
  const std::size_t n = S.size();
  const std::size_t d = static_cast<std::size_t>(S.front().x.size());
  const std::size_t m = n / params.T;

  RRReport report;
  report.K_capped = params.K_capped;
  std::vector<Vec> centers{Vec::Zero(static_cast<Eigen::Index>(d))};
  std::vector<double> lambdas{params.lambdas[0]};
  RegularizedLoss objective = regularize(loss, centers, lambdas);
  Vec last = centers.front();
  report.no_rounds = params.T == 1;

  for (std::size_t t = 1; t < params.T; ++t) {
    RRRound round;
    round.t = t;
    round.lambda = params.lambdas[t];
    round.radius = params.radii[t];
    round.K = params.K[t];
    round.eta = params.eta[t];
    round.sigma = params.sigma[t];
    round.slice_begin = (t - 1) * m;
    round.slice_end = t * m;
    SampleSpan slice = S.subspan(round.slice_begin, m);
    SubroutineStats stats;
    stats.ledger = &report.noise_ledger;
    const Selector sel = Selector::weighted(params.lambdas[t]);
    if (subroutine == RRSubroutine::noisy_gd) {
      last = noisy_gd(slice, objective.loss, round.radius, round.K, round.eta, sel, round.sigma,
                      rng, &stats);
    } else {
      last = phased_sgd(slice, objective.loss, round.radius, round.eta, round.sigma, sel, rng,
                        &stats);
    }
    round.center_norm = last.norm();
    round.max_iterate_norm = stats.max_iterate_norm;
    report.oracle_calls += stats.oracle_calls;
    report.rounds.push_back(round);
    centers.push_back(last);
    lambdas.push_back(params.lambdas[t]);
    objective = regularize(loss, centers, lambdas);
  }
  report.w_out = last;
  report.final_objective = std::move(objective);
  return report;
}

}  // namespace dpstat
