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
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dpstat/core/dataset.hpp"
#include "dpstat/core/loss.hpp"
#include "dpstat/core/rng.hpp"
#include "dpstat/core/types.hpp"

namespace dpstat {

inline Vec gaussian_vector(std::size_t d, double scale, Rng& rng) {
  Vec v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * rng.normal();
  return v;
}

/// Uniform draw from the centered ball of the given radius in R^d.
inline Vec uniform_in_ball(std::size_t d, double radius, Rng& rng) {
  Vec v = gaussian_vector(d, 1.0, rng);
  double n = v.norm();
  while (n == 0.0) {
    v = gaussian_vector(d, 1.0, rng);
    n = v.norm();
  }
  const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
  return v * (r / n);
}

// ---------------------------------------------------------------------------
// Huber-type losses

/// f(w; x) = (L1/2)‖w − x‖² when ‖w − x‖ ≤ B, and L0‖w − x‖ − L0²/(2 L1)
/// otherwise, with B = L0 / L1. Convex, L0-Lipschitz, L1-smooth; the
/// empirical minimizer over samples in the ball of radius B/4 is their mean.
/// Ties at ‖w − x‖ = B take the quadratic branch.
inline LossSpec huber_mean_loss(double L0, double L1) {
  require(L0 > 0.0 && L1 > 0.0, "huber_mean_loss: L0 and L1 must be positive");
  const double radius = L0 / L1;
  LossSpec loss;
  loss.name = "huber_mean";
  loss.lipschitz = L0;
  loss.smoothness = L1;
  loss.convex = true;
  loss.value = [=](const Vec& w, const Sample& s) {
    const double r = (w - s.x).norm();
    if (r <= radius) return 0.5 * L1 * r * r;
    return L0 * r - L0 * L0 / (2.0 * L1);
  };
  loss.accumulate_grad = [=](const Vec& w, const Sample& s, double scale, Vec& out) {
    const Vec diff = w - s.x;
    const double r = diff.norm();
    if (r <= radius) {
      out.noalias() += (scale * L1) * diff;
    } else {
      out.noalias() += (scale * L0 / r) * diff;
    }
  };
  loss.probe = [=](Rng& rng, std::size_t d) {
    if (d == 0) d = 4;
    const double spread = radius / std::sqrt(static_cast<double>(d));
    Sample s{gaussian_vector(d, 0.5 * spread, rng), 0.0};
    Vec w = gaussian_vector(d, 1.2 * spread, rng);
    return std::make_pair(std::move(w), std::move(s));
  };
  return loss;
}

/// Distribution with finite support; population quantities are computed by
/// exact enumeration.
class FiniteDistribution {
 public:
  FiniteDistribution() = default;

  FiniteDistribution(std::vector<Sample> support, std::vector<double> probs)
      : support_(std::move(support)), probs_(std::move(probs)) {
    require(!support_.empty(), "FiniteDistribution: empty support");
    require(support_.size() == probs_.size(),
            "FiniteDistribution: support and probabilities differ in length");
    double total = 0.0;
    for (double p : probs_) {
      require(p >= 0.0, "FiniteDistribution: negative probability");
      total += p;
    }
    require(total > 0.0, "FiniteDistribution: probabilities sum to zero");
    cumulative_.resize(probs_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < probs_.size(); ++i) {
      probs_[i] /= total;
      acc += probs_[i];
      cumulative_[i] = acc;
    }
    cumulative_.back() = 1.0;
  }

  /// Uniform distribution over the given points.
  static FiniteDistribution uniform(std::vector<Sample> support) {
    std::vector<double> p(support.size(), 1.0);
    return FiniteDistribution(std::move(support), std::move(p));
  }

  std::size_t support_size() const { return support_.size(); }
  const std::vector<Sample>& support() const { return support_; }
  const std::vector<double>& probabilities() const { return probs_; }
  std::size_t dim() const { return static_cast<std::size_t>(support_.front().x.size()); }

  const Sample& draw(Rng& rng) const {
    const double u = rng.uniform();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    if (it == cumulative_.end()) --it;
    return support_[static_cast<std::size_t>(it - cumulative_.begin())];
  }

  /// n i.i.d. draws, in draw order.
  Dataset draw_dataset(std::size_t n, Rng& rng) const {
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(draw(rng));
    return Dataset(std::move(out), true);
  }

  Vec population_grad(const LossSpec& loss, const Vec& w) const {
    Vec g = Vec::Zero(w.size());
    for (std::size_t i = 0; i < support_.size(); ++i) {
      if (probs_[i] > 0.0) loss.accumulate_grad(w, support_[i], probs_[i], g);
    }
    return g;
  }

  double population_value(const LossSpec& loss, const Vec& w) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < support_.size(); ++i) {
      acc += probs_[i] * loss.value(w, support_[i]);
    }
    return acc;
  }

 private:
  std::vector<Sample> support_;
  std::vector<double> probs_;
  std::vector<double> cumulative_;
};

/// One-dimensional instance f(w; x) = (L0/2) w x + (L1/2) Δ(w) with the Huber
/// regularizer Δ(w) = w² for |w| ≤ L0/(2 L1) and (L0/L1)|w| − L0²/(4 L1²)
/// otherwise; x ∈ {−1, +1} with P[x = 1] = (1 + v p)/2.
struct Huber1d {
  LossSpec loss;
  FiniteDistribution distribution;
  double L0 = 0.0;
  double L1 = 0.0;
  double p = 0.0;
  int v = 1;

  /// Closed-form gradient of the population risk (L0/2) v p + (L1/2) Δ'(w).
  double population_grad(double w) const {
    const double knee = L0 / (2.0 * L1);
    const double reg = std::abs(w) <= knee ? 2.0 * w : (L0 / L1) * (w > 0 ? 1.0 : -1.0);
    return 0.5 * L0 * v * p + 0.5 * L1 * reg;
  }
};

inline Huber1d huber_1d_loss(double L0, double L1, double p, int v) {
  require(L0 > 0.0 && L1 > 0.0, "huber_1d_loss: L0 and L1 must be positive");
  require(p >= 0.0 && p <= 1.0, "huber_1d_loss: p must lie in [0, 1]");
  require(v == 1 || v == -1, "huber_1d_loss: v must be +1 or -1");
  const double knee = L0 / (2.0 * L1);
  Huber1d out;
  out.L0 = L0;
  out.L1 = L1;
  out.p = p;
  out.v = v;
  LossSpec& loss = out.loss;
  loss.name = "huber_1d";
  loss.dim = 1;
  loss.lipschitz = L0;
  loss.smoothness = L1;
  loss.convex = true;
  loss.value = [=](const Vec& w, const Sample& s) {
    const double a = std::abs(w[0]);
    const double reg = a <= knee ? a * a : (L0 / L1) * a - L0 * L0 / (4.0 * L1 * L1);
    return 0.5 * L0 * w[0] * s.x[0] + 0.5 * L1 * reg;
  };
  loss.accumulate_grad = [=](const Vec& w, const Sample& s, double scale, Vec& out_grad) {
    const double a = std::abs(w[0]);
    const double dreg = a <= knee ? 2.0 * w[0] : (L0 / L1) * (w[0] > 0 ? 1.0 : -1.0);
    out_grad[0] += scale * (0.5 * L0 * s.x[0] + 0.5 * L1 * dreg);
  };
  loss.probe = [=](Rng& rng, std::size_t) {
    Vec w(1);
    w[0] = 3.0 * knee * (2.0 * rng.uniform() - 1.0);
    Vec x(1);
    x[0] = rng.uniform() < 0.5 ? -1.0 : 1.0;
    return std::make_pair(std::move(w), Sample{std::move(x), 0.0});
  };
  Vec plus(1), minus(1);
  plus[0] = 1.0;
  minus[0] = -1.0;
  out.distribution = FiniteDistribution({Sample{plus, 0.0}, Sample{minus, 0.0}},
                                        {(1.0 + v * p) / 2.0, (1.0 - v * p) / 2.0});
  return out;
}

// ---------------------------------------------------------------------------
// Generalized linear models f(w; (x, y)) = φ_y(⟨w, x⟩)

/// φ_y(z) = (z − y)²/2. Lipschitz only on a bounded residual range, so the
/// caller supplies the bound |z − y| ≤ residual_bound that the declared L0
/// covers.
inline std::shared_ptr<const Link> squared_link(double residual_bound) {
  require(residual_bound > 0.0, "squared_link: residual bound must be positive");
  auto link = std::make_shared<Link>();
  link->name = "squared";
  link->value = [](double z, double y) { return 0.5 * (z - y) * (z - y); };
  link->derivative = [](double z, double y) { return z - y; };
  link->lipschitz = residual_bound;
  link->smoothness = 1.0;
  link->convex = true;
  return link;
}

/// φ_y(z) = log cosh(z − y), so φ'_y(z) = tanh(z − y). Convex, 1-Lipschitz,
/// 1-smooth.
inline std::shared_ptr<const Link> tanh_link() {
  auto link = std::make_shared<Link>();
  link->name = "tanh";
  link->value = [](double z, double y) {
    const double u = std::abs(z - y);
    // log cosh(u) = u + log1p(exp(-2u)) - log 2, stable for large u.
    return u + std::log1p(std::exp(-2.0 * u)) - std::log(2.0);
  };
  link->derivative = [](double z, double y) { return std::tanh(z - y); };
  link->lipschitz = 1.0;
  link->smoothness = 1.0;
  link->convex = true;
  return link;
}

/// φ_y(z) = u²/(1 + u²) with u = z − y. Bounded in [0, 1) and nonconvex.
/// sup|φ'| = 3√3/8 (attained at u² = 1/3) and sup|φ''| = 2 (at u = 0).
inline std::shared_ptr<const Link> robust_link() {
  auto link = std::make_shared<Link>();
  link->name = "robust";
  link->value = [](double z, double y) {
    const double u = z - y;
    return u * u / (1.0 + u * u);
  };
  link->derivative = [](double z, double y) {
    const double u = z - y;
    const double q = 1.0 + u * u;
    return 2.0 * u / (q * q);
  };
  link->lipschitz = 3.0 * std::sqrt(3.0) / 8.0;
  link->smoothness = 2.0;
  link->convex = false;
  return link;
}

/// GLM loss on features with ‖x‖ ≤ feature_norm_bound. Declared constants are
/// L0 = L0_φ ‖X‖ and L1 = L1_φ ‖X‖². `dim == 0` leaves the dimension free.
inline LossSpec glm_loss(std::shared_ptr<const Link> link, double feature_norm_bound,
                         std::size_t dim = 0) {
  require(link != nullptr, "glm_loss: null link");
  require(feature_norm_bound > 0.0, "glm_loss: feature norm bound must be positive");
  LossSpec loss;
  loss.name = "glm_" + link->name;
  loss.dim = dim;
  loss.lipschitz = link->lipschitz * feature_norm_bound;
  loss.smoothness = link->smoothness * feature_norm_bound * feature_norm_bound;
  loss.convex = link->convex;
  loss.feature_norm_bound = feature_norm_bound;
  loss.glm = GlmStructure{link, feature_norm_bound};
  const Link* l = link.get();
  loss.value = [link, l](const Vec& w, const Sample& s) { return l->value(w.dot(s.x), s.y); };
  loss.accumulate_grad = [link, l](const Vec& w, const Sample& s, double scale, Vec& out) {
    const double c = l->derivative(w.dot(s.x), s.y);
    if (c != 0.0) out.noalias() += (scale * c) * s.x;
  };
  loss.probe = [feature_norm_bound](Rng& rng, std::size_t d) {
    if (d == 0) d = 4;
    Vec w = gaussian_vector(d, 2.0 / std::sqrt(static_cast<double>(d)), rng);
    Sample s{uniform_in_ball(d, feature_norm_bound, rng), rng.normal()};
    return std::make_pair(std::move(w), std::move(s));
  };
  return loss;
}

/// Benchmark nonconvex loss: robust-link GLM on unit-norm-bounded features,
/// L0 = 3√3/8, L1 = 2, and F0 ≤ 1 because φ takes values in [0, 1).
inline LossSpec synthetic_nonconvex_loss(std::size_t d) {
  require(d >= 1, "synthetic_nonconvex_loss: d must be >= 1");
  LossSpec loss = glm_loss(robust_link(), 1.0, d);
  loss.name = "synthetic_nonconvex";
  loss.initial_gap = 1.0;
  return loss;
}

/// f ≡ 0; useful as a base for pure regularizers.
inline LossSpec zero_loss(std::size_t d = 0) {
  LossSpec loss;
  loss.name = "zero";
  loss.dim = d;
  loss.convex = true;
  loss.value = [](const Vec&, const Sample&) { return 0.0; };
  loss.accumulate_grad = [](const Vec&, const Sample&, double, Vec&) {};
  loss.probe = [](Rng& rng, std::size_t dd) {
    if (dd == 0) dd = 4;
    return std::make_pair(gaussian_vector(dd, 1.0, rng), Sample{gaussian_vector(dd, 1.0, rng), 0.0});
  };
  return loss;
}

}  // namespace dpstat
