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
#include <utility>
#include <vector>

#include "dpstat/core/types.hpp"

namespace dpstat {

struct ScalingFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::vector<std::pair<double, double>> points;  // (log x, log y)
};

/// Ordinary least squares of log y on log x.
inline ScalingFit scaling_fit(const std::vector<std::pair<double, double>>& xy) {
  require(xy.size() >= 3, "scaling_fit: need at least 3 points");
  ScalingFit fit;
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : xy) {
    require(x > 0.0 && y > 0.0 && std::isfinite(x) && std::isfinite(y),
            "scaling_fit: all values must be positive and finite");
    fit.points.emplace_back(std::log(x), std::log(y));
    mx += fit.points.back().first;
    my += fit.points.back().second;
  }
  const double m = static_cast<double>(fit.points.size());
  mx /= m;
  my /= m;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [lx, ly] : fit.points) {
    sxx += (lx - mx) * (lx - mx);
    sxy += (lx - mx) * (ly - my);
    syy += (ly - my) * (ly - my);
  }
  require(sxx > 0.0, "scaling_fit: x values must not all be equal");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (syy == 0.0) {
    fit.r2 = 1.0;
  } else {
    double sse = 0.0;
    for (const auto& [lx, ly] : fit.points) {
      const double r = ly - (fit.intercept + fit.slope * lx);
      sse += r * r;
    }
    fit.r2 = std::clamp(1.0 - sse / syy, 0.0, 1.0);
  }
  return fit;
}

}  // namespace dpstat
