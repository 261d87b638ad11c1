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
#include <string>
#include <vector>

#include "dpstat/core/rng.hpp"
#include "dpstat/core/types.hpp"

namespace dpstat {

struct NoiseLedgerEntry {
  std::string site;
  double sigma = 0.0;
  std::size_t dim = 0;
  std::size_t count = 0;
};

/// Record of every Gaussian draw of a run. Consecutive draws at the same site
/// with the same σ and dimension share one entry.
class NoiseLedger {
 public:
  void record(const std::string& site, double sigma, std::size_t dim) {
    if (!entries_.empty()) {
      auto& last = entries_.back();
      if (last.site == site && last.sigma == sigma && last.dim == dim) {
        ++last.count;
        return;
      }
    }
    entries_.push_back({site, sigma, dim, 1});
  }

  const std::vector<NoiseLedgerEntry>& entries() const { return entries_; }

  std::size_t total_draws() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.count;
    return n;
  }

  /// Draw sigmas for one site, expanded to one value per draw, in order.
  std::vector<double> sigmas(const std::string& site) const {
    std::vector<double> out;
    for (const auto& e : entries_) {
      if (e.site == site) out.insert(out.end(), e.count, e.sigma);
    }
    return out;
  }

 private:
  std::vector<NoiseLedgerEntry> entries_;
};

/// Isotropic N(0, σ² I_dim) draw. When `ledger` is given the draw is recorded
/// under `site`.
inline Vec draw_gaussian(std::size_t dim, double sigma, Rng& rng,
                         NoiseLedger* ledger = nullptr, const std::string& site = "noise") {
  require(sigma >= 0.0, "draw_gaussian: sigma must be >= 0");
  Vec v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = sigma * rng.normal();
  if (ledger != nullptr) ledger->record(site, sigma, dim);
  return v;
}

}  // namespace dpstat
