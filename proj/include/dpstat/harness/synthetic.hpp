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
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dpstat/core/dataset.hpp"
#include "dpstat/core/losses.hpp"
#include "dpstat/core/rng.hpp"
#include "dpstat/core/types.hpp"

namespace dpstat {

enum class SyntheticKind { glm_lowrank, glm_fullrank, huber_cluster };

inline const char* to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::glm_lowrank: return "glm_lowrank";
    case SyntheticKind::glm_fullrank: return "glm_fullrank";
    case SyntheticKind::huber_cluster: return "huber_cluster";
  }
  return "?";
}

inline SyntheticKind parse_synthetic_kind(std::string_view s) {
  if (s == "glm_lowrank") return SyntheticKind::glm_lowrank;
  if (s == "glm_fullrank") return SyntheticKind::glm_fullrank;
  if (s == "huber_cluster") return SyntheticKind::huber_cluster;
  throw PreconditionError("unknown synthetic data kind: " + std::string(s));
}

struct SyntheticOptions {
  double B = 1.0;            // huber_cluster: points lie in the ball of radius B/4
  double label_noise = 0.1;  // GLM kinds: y = <w*, x> + label_noise * N(0, 1)
};

/// Deterministic synthetic data.
///   glm_lowrank  : x = U c with U a random orthonormal d × r basis and c
///                  uniform in the unit r-ball, so ‖x‖ ≤ 1 and rank(X) = r.
///   glm_fullrank : the same with r = d (x uniform in the unit ball).
///   huber_cluster: unlabelled points uniform in the ball of radius B/4.
/// GLM labels use w* = U v with v ~ N(0, I_r).
inline Dataset gen_synthetic(SyntheticKind kind, std::size_t n, std::size_t d, std::size_t rank,
                             std::uint64_t seed, const SyntheticOptions& opt = {}) {
  require(n >= 1 && d >= 1, "gen_synthetic: n and d must be >= 1");
  Rng rng(StreamKey{seed, 0, 0, "synthetic"});
  std::vector<Sample> out;
  out.reserve(n);
  if (kind == SyntheticKind::huber_cluster) {
    require(opt.B > 0.0, "gen_synthetic: B must be > 0");
    for (std::size_t i = 0; i < n; ++i) out.push_back({uniform_in_ball(d, opt.B / 4.0, rng), 0.0});
    return Dataset(std::move(out), false);
  }
  if (kind == SyntheticKind::glm_fullrank) rank = d;
  require(rank >= 1, "gen_synthetic: rank must be >= 1");
  require(rank <= d, "gen_synthetic: rank must not exceed d");
  const auto di = static_cast<Eigen::Index>(d);
  const auto ri = static_cast<Eigen::Index>(rank);
  Mat U;
  if (rank == d) {
    U = Mat::Identity(di, di);
  } else {
    Mat G(di, ri);
    for (Eigen::Index i = 0; i < di; ++i)
      for (Eigen::Index j = 0; j < ri; ++j) G(i, j) = rng.normal();
    Eigen::HouseholderQR<Mat> qr(G);
    U = qr.householderQ() * Mat::Identity(di, ri);
  }
  Vec v = gaussian_vector(rank, 1.0, rng);
  for (std::size_t i = 0; i < n; ++i) {
    Vec c = uniform_in_ball(rank, 1.0, rng);
    const double y = v.dot(c) + opt.label_noise * rng.normal();
    out.push_back({U * c, y});
  }
  return Dataset(std::move(out), true);
}

}  // namespace dpstat
