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
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "dpstat/core/dataset.hpp"
#include "dpstat/core/rng.hpp"
#include "dpstat/core/types.hpp"

namespace dpstat {

/// Scalar link φ_y(z) of a generalized linear model together with its
/// Lipschitz and smoothness constants in z.
struct Link {
  std::string name;
  std::function<double(double z, double y)> value;
  std::function<double(double z, double y)> derivative;
  double lipschitz = 0.0;
  double smoothness = 0.0;
  bool convex = false;
};

struct GlmStructure {
  std::shared_ptr<const Link> link;
  double feature_norm_bound = 1.0;
};

/// A per-sample differentiable loss f(w; x) with declared constants:
/// `lipschitz` (L0) bounds ‖∇f‖, `smoothness` (L1) bounds the gradient's
/// Lipschitz constant, and `initial_gap` (F0), when known, bounds
/// F(0) - inf F.
///
/// `accumulate_grad(w, s, scale, out)` performs out += scale * ∇f(w; s).
/// `probe(rng, d)` draws a representative (w, sample) pair for audits.
/// `dim == 0` means the loss accepts any dimension.
struct LossSpec {
  std::string name;
  std::size_t dim = 0;
  double lipschitz = 0.0;
  double smoothness = 0.0;
  std::optional<double> initial_gap;
  bool convex = false;
  std::optional<double> feature_norm_bound;

  std::function<double(const Vec& w, const Sample& s)> value;
  std::function<void(const Vec& w, const Sample& s, double scale, Vec& out)>
      accumulate_grad;
  std::function<std::pair<Vec, Sample>(Rng& rng, std::size_t d)> probe;

  std::optional<GlmStructure> glm;

  Vec grad(const Vec& w, const Sample& s) const {
    Vec g = Vec::Zero(w.size());
    accumulate_grad(w, s, 1.0, g);
    return g;
  }

  double eval(const Vec& w, const Sample& s) const { return value(w, s); }
};

/// Rejects data the loss's declared constants do not cover.
inline void bind_check(const LossSpec& loss, SampleSpan data) {
  for (const auto& s : data) {
    require(loss.dim == 0 || static_cast<std::size_t>(s.x.size()) == loss.dim,
            loss.name + ": sample dimension does not match the loss");
    if (loss.feature_norm_bound) {
      require(s.x.norm() <= *loss.feature_norm_bound * (1.0 + 1e-12),
              loss.name + ": sample feature norm exceeds the declared bound");
    }
  }
}

inline void bind_check(const LossSpec& loss, const Dataset& data) {
  bind_check(loss, data.view());
}

/// out += (scale / |batch|) * Σ ∇f(w; x) over the batch.
inline void accumulate_mean_grad(const LossSpec& loss, const Vec& w,
                                 SampleSpan batch, double scale, Vec& out) {
  if (batch.empty()) return;
  const double weight = scale / static_cast<double>(batch.size());
  for (const auto& s : batch) loss.accumulate_grad(w, s, weight, out);
}

inline Vec mean_grad(const LossSpec& loss, const Vec& w, SampleSpan batch) {
  Vec g = Vec::Zero(w.size());
  accumulate_mean_grad(loss, w, batch, 1.0, g);
  return g;
}

/// Exact gradient of the empirical risk (1/n) Σ f(w; x_i).
inline Vec erm_grad(const LossSpec& loss, const Vec& w, SampleSpan data) {
  for (const auto& s : data) {
    require(s.x.size() == w.size(), "erm_grad: sample dimension does not match w");
  }
  if (loss.dim != 0) {
    require(static_cast<std::size_t>(w.size()) == loss.dim,
            "erm_grad: w dimension does not match the loss");
  }
  return mean_grad(loss, w, data);
}

inline Vec erm_grad(const LossSpec& loss, const Vec& w, const Dataset& data) {
  return erm_grad(loss, w, data.view());
}

inline double erm_value(const LossSpec& loss, const Vec& w, SampleSpan data) {
  double acc = 0.0;
  for (const auto& s : data) acc += loss.value(w, s);
  return data.empty() ? 0.0 : acc / static_cast<double>(data.size());
}

}  // namespace dpstat
