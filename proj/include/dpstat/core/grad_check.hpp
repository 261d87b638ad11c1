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

#include "dpstat/core/loss.hpp"
#include "dpstat/core/rng.hpp"

namespace dpstat {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t probe_count = 0;
};

/// Compares the closed-form gradient with central differences of the value at
/// `probes` random (w, x) pairs drawn by the loss's probe sampler. The error
/// of one probe is ‖g − g_fd‖ / max(1, ‖g‖, ‖g_fd‖).
inline GradCheckReport fd_check(const LossSpec& loss, std::size_t probes, double h = 1e-5,
                                std::uint64_t seed = 0, std::size_t dim = 0) {
  require(h > 0.0, "fd_check: step h must be positive");
  Rng rng(StreamKey{seed, 0, 0, "fd_check"});
  const std::size_t d = loss.dim != 0 ? loss.dim : (dim != 0 ? dim : 4);
  GradCheckReport report;
  report.probe_count = probes;
  for (std::size_t p = 0; p < probes; ++p) {
    auto [w, s] = loss.probe(rng, d);
    const Vec g = loss.grad(w, s);
    Vec fd(w.size());
    Vec wp = w;
    for (Eigen::Index j = 0; j < w.size(); ++j) {
      const double orig = wp[j];
      wp[j] = orig + h;
      const double fp = loss.value(wp, s);
      wp[j] = orig - h;
      const double fm = loss.value(wp, s);
      wp[j] = orig;
      fd[j] = (fp - fm) / (2.0 * h);
    }
    const double denom = std::max({1.0, g.norm(), fd.norm()});
    report.max_rel_err = std::max(report.max_rel_err, (g - fd).norm() / denom);
  }
  return report;
}

/// Largest observed |Δf|/‖Δw‖ and ‖Δ∇f‖/‖Δw‖ over random probe pairs.
struct ConstantsAudit {
  double max_value_ratio = 0.0;
  double max_grad_ratio = 0.0;
  std::size_t pair_count = 0;
};

/// Pairs mix far-apart points with close neighbours so that both global and
/// local (curvature-peak) ratios are sampled.
inline ConstantsAudit audit_constants(const LossSpec& loss, std::size_t pairs,
                                      std::uint64_t seed = 0, std::size_t dim = 0) {
  Rng rng(StreamKey{seed, 0, 0, "audit_constants"});
  const std::size_t d = loss.dim != 0 ? loss.dim : (dim != 0 ? dim : 4);
  ConstantsAudit audit;
  audit.pair_count = pairs;
  for (std::size_t p = 0; p < pairs; ++p) {
    auto [w1, s] = loss.probe(rng, d);
    Vec w2;
    if (p % 2 == 0) {
      w2 = loss.probe(rng, d).first;
    } else {
      w2 = w1;
      const double scale = std::pow(10.0, -3.0 * rng.uniform());
      for (Eigen::Index j = 0; j < w2.size(); ++j) w2[j] += scale * rng.normal();
    }
    const double dw = (w1 - w2).norm();
    if (dw == 0.0) continue;
    const double dv = std::abs(loss.value(w1, s) - loss.value(w2, s));
    const double dg = (loss.grad(w1, s) - loss.grad(w2, s)).norm();
    audit.max_value_ratio = std::max(audit.max_value_ratio, dv / dw);
    audit.max_grad_ratio = std::max(audit.max_grad_ratio, dg / dw);
  }
  return audit;
}

/// Random midpoint test f((a+b)/2) ≤ (f(a)+f(b))/2 + tol on a shared sample.
/// Returns the number of violations; catches gross convexity errors only.
inline std::size_t convexity_violations(const LossSpec& loss, std::size_t probes,
                                        double tol = 1e-10, std::uint64_t seed = 0,
                                        std::size_t dim = 0) {
  Rng rng(StreamKey{seed, 0, 0, "convexity"});
  const std::size_t d = loss.dim != 0 ? loss.dim : (dim != 0 ? dim : 4);
  std::size_t bad = 0;
  for (std::size_t p = 0; p < probes; ++p) {
    auto [a, s] = loss.probe(rng, d);
    const Vec b = loss.probe(rng, d).first;
    const Vec mid = 0.5 * (a + b);
    if (loss.value(mid, s) > 0.5 * (loss.value(a, s) + loss.value(b, s)) + tol) ++bad;
  }
  return bad;
}

}  // namespace dpstat
