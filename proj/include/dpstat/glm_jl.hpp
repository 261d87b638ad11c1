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

#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "dpstat/core/dataset.hpp"
#include "dpstat/core/loss.hpp"
#include "dpstat/core/losses.hpp"
#include "dpstat/core/rng.hpp"
#include "dpstat/privacy/calibration.hpp"
#include "dpstat/recursive_reg.hpp"
#include "dpstat/spiderboost.hpp"

namespace dpstat {

struct JLMatrix {
  Mat phi;                 // k × d
  std::uint64_t seed = 0;  // first draw of the generating stream, for provenance

  std::size_t k() const { return static_cast<std::size_t>(phi.rows()); }
  std::size_t d() const { return static_cast<std::size_t>(phi.cols()); }
};

/// Φ = G / √k with i.i.d. standard normal G, filled row by row.
inline JLMatrix jl_matrix(std::size_t k, std::size_t d, Rng& rng) {
  require(k >= 1 && d >= 1, "jl_matrix: k and d must be >= 1");
  JLMatrix out;
  Rng stream = rng.fork();
  out.seed = stream.next_u64();
  const double scale = 1.0 / std::sqrt(static_cast<double>(k));
  out.phi.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < out.phi.rows(); ++i)
    for (Eigen::Index j = 0; j < out.phi.cols(); ++j) out.phi(i, j) = scale * stream.normal();
  return out;
}

/// Φ = I_d (test mode).
inline JLMatrix identity_jl(std::size_t d) {
  require(d >= 1, "identity_jl: d must be >= 1");
  JLMatrix out;
  out.phi = Mat::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  return out;
}

/// Random orthogonal d × d matrix (an exact isometry).
inline JLMatrix orthonormal_jl(std::size_t d, Rng& rng) {
  JLMatrix g = jl_matrix(d, d, rng);
  Eigen::HouseholderQR<Mat> qr(g.phi);
  g.phi = qr.householderQ() * Mat::Identity(g.phi.rows(), g.phi.cols());
  return g;
}

/// Rows are samples.
inline Mat design_matrix(SampleSpan data) {
  require(!data.empty(), "design_matrix: empty dataset");
  Mat X(static_cast<Eigen::Index>(data.size()), data.front().x.size());
  for (std::size_t i = 0; i < data.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = data[i].x.transpose();
  return X;
}

/// Number of singular values above 1e-10 σ_max.
inline std::size_t numeric_rank(const Mat& X, double rel_tol = 1e-10) {
  if (X.size() == 0) return 0;
  Eigen::JacobiSVD<Mat> svd(X);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * s(0)) ++r;
  return r;
}

inline std::size_t numeric_rank(const Dataset& data) { return numeric_rank(design_matrix(data.view())); }

struct EmbeddingCheck {
  bool pass = false;
  double tau = 0.0;
  std::size_t rank = 0;
  double exact_distortion = 0.0;    // max over the unit sphere of the span
  double sampled_distortion = 0.0;  // max over the sampled unit vectors
  std::size_t samples = 0;
};

/// Distortion max |‖Φv‖² − 1| over unit v in span(basis). The exact value
/// comes from the singular values of Φ U (U an orthonormal basis of the
/// span); `samples` random unit vectors are also evaluated. Pass is decided
/// on the exact value, which bounds the sampled one.
inline EmbeddingCheck check_subspace_embedding(const JLMatrix& phi, const std::vector<Vec>& basis,
                                               double tau, Rng& rng, std::size_t samples = 1000) {
  require(tau >= 0.0, "check_subspace_embedding: tau must be >= 0");
  require(!basis.empty(), "check_subspace_embedding: empty basis");
  const auto d = static_cast<Eigen::Index>(phi.d());
  Mat B(d, static_cast<Eigen::Index>(basis.size()));
  for (std::size_t i = 0; i < basis.size(); ++i) {
    require(basis[i].size() == d, "check_subspace_embedding: basis vector dimension mismatch");
    B.col(static_cast<Eigen::Index>(i)) = basis[i];
  }
  Eigen::JacobiSVD<Mat> svd(B, Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  std::size_t r = 0;
  if (s.size() > 0 && s(0) > 0.0)
    for (Eigen::Index i = 0; i < s.size(); ++i)
      if (s(i) > 1e-10 * s(0)) ++r;
  require(r >= 1, "check_subspace_embedding: basis spans the zero subspace");
  Mat U = svd.matrixU().leftCols(static_cast<Eigen::Index>(r));
  Mat PU = phi.phi * U;

  EmbeddingCheck out;
  out.tau = tau;
  out.rank = r;
  out.samples = samples;
  Eigen::JacobiSVD<Mat> svd_pu(PU);
  const auto& sv = svd_pu.singularValues();
  const double smax = sv.size() ? sv(0) : 0.0;
  // Fewer singular values than r means Φ U has a null direction.
  const double smin = static_cast<std::size_t>(sv.size()) < r ? 0.0 : sv(sv.size() - 1);
  out.exact_distortion = std::max(std::abs(smax * smax - 1.0), std::abs(smin * smin - 1.0));
  for (std::size_t i = 0; i < samples; ++i) {
    Vec c = gaussian_vector(r, 1.0, rng);
    const double nc = c.norm();
    if (nc == 0.0) continue;
    Vec v = U * (c / nc);
    out.sampled_distortion = std::max(out.sampled_distortion, std::abs((phi.phi * v).squaredNorm() - 1.0));
  }
  out.pass = out.exact_distortion <= tau;
  return out;
}

enum class JLBaseKind { spiderboost, recursive_reg };

inline const char* to_string(JLBaseKind k) {
  return k == JLBaseKind::spiderboost ? "spiderboost" : "recursive_reg";
}

struct JLParams {
  std::size_t k = 1;
  std::size_t rank = 1;
  double normX = 1.0;
  JLBaseKind base_kind = JLBaseKind::spiderboost;
};

/// g(j) + L0 ‖X‖ ln n / √j for the chosen base, with the base's rate taken
/// at constants 2 L0 ‖X‖, 2 L1 ‖X‖² and budget (ε, δ/2). For SpiderBoost
/// g(j) = (√(F0 L1' L0') √(j log(2/δ)) / (nε))^{2/3} + L0' √(j log(2/δ)) / (nε);
/// for recursive regularization g(j) = L0' / √n + L0' √(j log(2/δ)) / (nε).
inline double jl_k_objective(JLBaseKind base, std::size_t j, std::size_t n, double L0, double L1,
                             double normX, const PrivacyBudget& budget, double F0 = 1.0) {
  const double nd = static_cast<double>(n);
  const double L0p = 2.0 * L0 * normX;
  const double L1p = 2.0 * L1 * normX * normX;
  const double noise = std::sqrt(static_cast<double>(j) * std::log(2.0 / budget.delta)) / (nd * budget.eps);
  double g;
  if (base == JLBaseKind::spiderboost) {
    g = std::pow(std::sqrt(F0 * L1p * L0p) * noise, 2.0 / 3.0) + L0p * noise;
  } else {
    g = L0p / std::sqrt(nd) + L0p * noise;
  }
  return g + L0 * normX * std::log(nd) / std::sqrt(static_cast<double>(j));
}

/// k = ⌈min{argmin_j objective(j), rank · ln(2n/δ)}⌉, the argmin by
/// exhaustive scan over j ∈ [1, d]; never exceeds d.
inline std::size_t choose_k(JLBaseKind base, std::size_t n, std::size_t rank, std::size_t d,
                            double L0, double L1, double normX, const PrivacyBudget& budget,
                            double F0 = 1.0) {
  budget.validate();
  require(rank >= 1, "choose_k: rank must be >= 1");
  require(n >= 1 && d >= 1, "choose_k: n and d must be >= 1");
  std::size_t best = 1;
  double best_val = std::numeric_limits<double>::infinity();
  for (std::size_t j = 1; j <= d; ++j) {
    const double v = jl_k_objective(base, j, n, L0, L1, normX, budget, F0);
    if (v < best_val) {
      best_val = v;
      best = j;
    }
  }
  const double rank_branch = static_cast<double>(rank) * std::log(2.0 * static_cast<double>(n) / budget.delta);
  const double k = std::ceil(std::min(static_cast<double>(best), rank_branch));
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, d);
}

/// GLM loss in the embedded space, declared with 2 L0_φ ‖X‖ and 2 L1_φ ‖X‖².
/// Projected features may exceed ‖X‖, so no per-sample norm bound is bound.
inline LossSpec jl_projected_loss(std::shared_ptr<const Link> link, double normX) {
  LossSpec loss = glm_loss(link, normX);
  loss.name = "jl_" + loss.name;
  loss.lipschitz = 2.0 * link->lipschitz * normX;
  loss.smoothness = 2.0 * link->smoothness * normX * normX;
  loss.feature_norm_bound.reset();
  return loss;
}

inline Dataset project_dataset(const JLMatrix& phi, SampleSpan data) {
  std::vector<Sample> out;
  out.reserve(data.size());
  for (const auto& s : data) {
    require(static_cast<std::size_t>(s.x.size()) == phi.d(), "project_dataset: dimension mismatch");
    out.push_back({phi.phi * s.x, s.y});
  }
  return Dataset(std::move(out), true);
}

/// Base optimizer in the embedded space: (loss, data, budget, rng) -> report.
using JLBase = std::function<OptimizerReport(const LossSpec&, const Dataset&, const PrivacyBudget&, Rng&)>;

/// SpiderBoost with derived parameters; F0 is the declared initial gap.
inline JLBase spider_base(double F0 = 1.0) {
  return [F0](const LossSpec& loss, const Dataset& data, const PrivacyBudget& budget, Rng& rng) {
    auto params = derive_spider_params(data.size(), data.dim(), loss.lipschitz, loss.smoothness,
                                       loss.initial_gap.value_or(F0), budget);
    SpiderRunOptions opts;
    opts.trace = false;
    return run_spiderboost(loss, data, params, rng, opts);
  };
}

/// Recursive regularization with derived parameters.
inline JLBase rr_base(double R_bar, RRMode mode = RRMode::optimal,
                      RRSubroutine sub = RRSubroutine::noisy_gd) {
  return [=](const LossSpec& loss, const Dataset& data, const PrivacyBudget& budget, Rng& rng) {
    auto params = derive_rr_params(mode, data.size(), data.dim(), loss.lipschitz, loss.smoothness,
                                   R_bar, budget);
    auto rr = run_recursive_regularization(data.view(), loss, params, sub, rng);
    OptimizerReport rep;
    rep.w_out = rr.w_out;
    rep.oracle_calls = rr.oracle_calls;
    rep.noise_ledger = rr.noise_ledger;
    return rep;
  };
}

struct JLReport {
  Vec w_out;       // Φᵀ w̃
  Vec w_tilde;     // base output (after clamping)
  std::size_t k = 0;
  std::size_t rank = 0;
  bool clamped = false;
  double clamp_bound = 0.0;
  double max_projected_norm = 0.0;
  OptimizerReport base;
};

struct JLRunOptions {
  /// Bound on ‖w̃‖; base outputs beyond it are scaled back and the clamp is
  /// reported. Defaults to n · k · max{1, L0', L1'}.
  std::optional<double> clamp_bound;
};

/// JL method with a caller-supplied Φ: project features, run `base` at
/// (ε, δ/2) with the rebinding constants, and lift by Φᵀ.
inline JLReport run_jl(const JLBase& base, const Dataset& S, std::shared_ptr<const Link> link,
                       const JLParams& params, const PrivacyBudget& budget, const JLMatrix& phi,
                       Rng& rng, const JLRunOptions& options = {}) {
  budget.validate();
  require(!S.empty(), "run_jl: empty dataset");
  require(phi.d() == S.dim(), "run_jl: Φ column count must equal the data dimension");
  require(params.k == phi.k(), "run_jl: params.k must equal Φ's row count");
  require(params.k >= 1 && params.k <= S.dim(), "run_jl: need 1 <= k <= d");
  require(link != nullptr, "run_jl: null link");
  bind_check(glm_loss(link, params.normX), S);

  JLReport report;
  report.k = params.k;
  report.rank = params.rank;
  Dataset projected = project_dataset(phi, S.view());
  report.max_projected_norm = projected.max_feature_norm();
  LossSpec loss = jl_projected_loss(link, params.normX);
  report.base = base(loss, projected, budget.with_delta(budget.delta / 2.0), rng);
  Vec w = report.base.w_out;
  require(static_cast<std::size_t>(w.size()) == params.k, "run_jl: base output has the wrong dimension");
  report.clamp_bound = options.clamp_bound.value_or(
      static_cast<double>(S.size()) * static_cast<double>(params.k) *
      std::max({1.0, loss.lipschitz, loss.smoothness}));
  if (w.norm() > report.clamp_bound) {
    w = project_ball(w, report.clamp_bound);
    report.clamped = true;
  }
  report.w_tilde = w;
  report.w_out = phi.phi.transpose() * w;
  return report;
}

/// Draws Φ (k × d) from a fork of `rng`, then runs the JL method.
inline JLReport run_jl(const JLBase& base, const Dataset& S, std::shared_ptr<const Link> link,
                       const JLParams& params, const PrivacyBudget& budget, Rng& rng,
                       const JLRunOptions& options = {}) {
  Rng phi_rng = rng.fork();
  JLMatrix phi = jl_matrix(params.k, S.dim(), phi_rng);
  return run_jl(base, S, std::move(link), params, budget, phi, rng, options);
}

}  // namespace dpstat
