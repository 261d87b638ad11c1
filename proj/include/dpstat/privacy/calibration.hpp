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
#include <cstdint>

#include "dpstat/core/types.hpp"

namespace dpstat {

/// (ε, δ) target plus the constant c of the subsampled-Gaussian accountant.
struct PrivacyBudget {
  double eps = 1.0;
  double delta = 1e-6;
  double c = 1.0;

  void validate() const {
    require(eps > 0.0, "PrivacyBudget: eps must be > 0");
    require(delta > 0.0 && delta < 1.0, "PrivacyBudget: delta must lie in (0, 1)");
    require(c > 0.0, "PrivacyBudget: accountant constant c must be > 0");
  }

  PrivacyBudget with_delta(double d) const {
    PrivacyBudget out = *this;
    out.delta = d;
    return out;
  }
};

/// Gaussian mechanism: σ = sensitivity · √(2 log(1.25/δ)) / ε for a query of
/// the given ℓ2-sensitivity.
inline double gaussian_sigma(double sensitivity, double eps, double delta) {
  require(sensitivity >= 0.0, "gaussian_sigma: sensitivity must be >= 0");
  require(eps > 0.0, "gaussian_sigma: eps must be > 0");
  require(delta > 0.0 && delta < 1.0, "gaussian_sigma: delta must lie in (0, 1)");
  return sensitivity * std::sqrt(2.0 * std::log(1.25 / delta)) / eps;
}

/// Noise scale for T adaptive queries on uniformly sampled batches of size b
/// out of n, where each element's contribution has norm at most
/// `element_bound`:
///   σ = c · element_bound · √(log(1/δ)) / ε · max{1/b, √T / n}.
inline double accountant_sigma(double element_bound, std::uint64_t b, std::uint64_t T,
                               std::uint64_t n, const PrivacyBudget& budget) {
  budget.validate();
  require(element_bound >= 0.0, "accountant_sigma: element bound must be >= 0");
  require(b >= 1 && b <= n, "accountant_sigma: batch size must satisfy 1 <= b <= n");
  require(T >= 1, "accountant_sigma: T must be >= 1");
  const double scale = std::max(1.0 / static_cast<double>(b),
                                std::sqrt(static_cast<double>(T)) / static_cast<double>(n));
  return budget.c * element_bound * std::sqrt(std::log(1.0 / budget.delta)) / budget.eps * scale;
}

/// ℓ2-sensitivity of a b2-sample mean of gradient variations between iterates
/// at distance `step` for an L1-smooth loss: 2 L1 step / b2.
inline double spider_gv_sensitivity(double L1, double step, std::uint64_t b2) {
  require(step >= 0.0, "spider_gv_sensitivity: step must be >= 0");
  require(b2 >= 1, "spider_gv_sensitivity: b2 must be >= 1");
  return 2.0 * L1 * step / static_cast<double>(b2);
}

/// ℓ2-sensitivity of a tree node's gradient-variation estimate:
/// 2 β 2^{D/2} / b.
inline double tree_gv_sensitivity(double beta, int depth, std::uint64_t b) {
  require(depth >= 0, "tree_gv_sensitivity: depth must be >= 0");
  require(b >= 1, "tree_gv_sensitivity: b must be >= 1");
  return 2.0 * beta * std::pow(2.0, 0.5 * depth) / static_cast<double>(b);
}

}  // namespace dpstat
