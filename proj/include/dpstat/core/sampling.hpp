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
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dpstat/core/rng.hpp"
#include "dpstat/core/types.hpp"

namespace dpstat {

/// Draws index batches from {0, ..., n-1}. Each batch is an independent
/// uniform draw. Within a batch, indices are distinct unless
/// `with_replacement` is set; distinct batches come back sorted, so a batch
/// of size n is exactly 0, 1, ..., n-1.
class BatchSampler {
 public:
  explicit BatchSampler(std::size_t n, bool with_replacement = false)
      : n_(n), with_replacement_(with_replacement), marks_(n, false) {}

  const std::vector<std::size_t>& draw(std::size_t b, Rng& rng) {
    require(b >= 1, "BatchSampler: batch size must be >= 1");
    batch_.clear();
    if (with_replacement_) {
      for (std::size_t i = 0; i < b; ++i) batch_.push_back(rng.index(n_));
      return batch_;
    }
    require(b <= n_, "BatchSampler: batch larger than the data set");
    if (b == n_) {
      batch_.resize(n_);
      std::iota(batch_.begin(), batch_.end(), std::size_t{0});
      return batch_;
    }
    if (b * 4 <= n_) {
      // Floyd's algorithm.
      for (std::size_t j = n_ - b; j < n_; ++j) {
        std::size_t t = rng.index(j + 1);
        if (marks_[t]) t = j;
        marks_[t] = true;
        batch_.push_back(t);
      }
      for (auto i : batch_) marks_[i] = false;
      std::sort(batch_.begin(), batch_.end());
      return batch_;
    }
    // Selection sampling; emits indices in increasing order.
    std::size_t needed = b;
    for (std::size_t i = 0; i < n_ && needed > 0; ++i) {
      const std::size_t left = n_ - i;
      if (rng.uniform() * static_cast<double>(left) < static_cast<double>(needed)) {
        batch_.push_back(i);
        --needed;
      }
    }
    return batch_;
  }

 private:
  std::size_t n_;
  bool with_replacement_;
  std::vector<bool> marks_;
  std::vector<std::size_t> batch_;
};

}  // namespace dpstat
