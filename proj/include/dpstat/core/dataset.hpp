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
#include <charconv>
#include <cstddef>
#include <fstream>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "dpstat/core/types.hpp"

namespace dpstat {

/// One data point: a feature vector and an optional scalar label (0 when the
/// data set is unlabelled).
struct Sample {
  Vec x;
  double y = 0.0;
};

using SampleSpan = std::span<const Sample>;

/// Immutable ordered collection of samples. Copies share storage.
class Dataset {
 public:
  Dataset() : samples_(std::make_shared<const std::vector<Sample>>()) {}

  explicit Dataset(std::vector<Sample> samples, bool labelled = false)
      : samples_(std::make_shared<const std::vector<Sample>>(std::move(samples))),
        labelled_(labelled) {
    if (!samples_->empty()) {
      dim_ = static_cast<std::size_t>(samples_->front().x.size());
      for (const auto& s : *samples_) {
        require(static_cast<std::size_t>(s.x.size()) == dim_,
                "Dataset: all samples must share one dimension");
      }
    }
  }

  std::size_t size() const { return samples_->size(); }
  std::size_t dim() const { return dim_; }
  bool labelled() const { return labelled_; }
  bool empty() const { return samples_->empty(); }

  const Sample& operator[](std::size_t i) const { return (*samples_)[i]; }
  SampleSpan view() const { return {samples_->data(), samples_->size()}; }

  /// Samples [begin, end). Deterministic; disjoint ranges give disjoint views.
  SampleSpan slice(std::size_t begin, std::size_t end) const {
    require(begin <= end && end <= size(), "Dataset::slice: range out of bounds");
    return view().subspan(begin, end - begin);
  }

  double max_feature_norm() const {
    double m = 0.0;
    for (const auto& s : *samples_) m = std::max(m, s.x.norm());
    return m;
  }

 private:
  std::shared_ptr<const std::vector<Sample>> samples_;
  std::size_t dim_ = 0;
  bool labelled_ = false;
};

/// Front-to-back consumption of a sample sequence. Every sample is handed out
/// at most once; the cursor never mutates the underlying data.
class StreamCursor {
 public:
  explicit StreamCursor(SampleSpan samples) : samples_(samples) {}

  std::size_t consumed() const { return pos_; }
  std::size_t remaining() const { return samples_.size() - pos_; }

  /// Next `k` samples, or PreconditionError if fewer remain.
  SampleSpan take(std::size_t k) {
    require(k <= remaining(), "StreamCursor: stream exhausted");
    auto out = samples_.subspan(pos_, k);
    pos_ += k;
    return out;
  }

  /// Offset (in the original stream) of the next sample to be taken.
  std::size_t position() const { return pos_; }

 private:
  SampleSpan samples_;
  std::size_t pos_ = 0;
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    auto field = line.substr(start, pos == std::string_view::npos ? pos : pos - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
      field.remove_suffix(1);
    out.push_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

}  // namespace detail

/// Shortest decimal form that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

/// Parses comma-separated samples, one per row: features, then a label column
/// when `labelled`. A first line that does not parse as numbers is treated as
/// a header. Empty lines are skipped.
inline Dataset parse_dataset_csv(std::istream& in, bool labelled) {
  std::vector<Sample> samples;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = detail::split_commas(line);
    std::vector<double> values(fields.size());
    bool numeric = true;
    for (std::size_t i = 0; i < fields.size() && numeric; ++i) {
      numeric = detail::parse_double(fields[i], values[i]);
    }
    if (!numeric) {
      require(samples.empty() && width == 0,
              "dataset csv: non-numeric field on line " + std::to_string(line_no));
      width = fields.size();  // header
      continue;
    }
    if (width == 0) width = values.size();
    require(values.size() == width,
            "dataset csv: ragged row on line " + std::to_string(line_no));
    const std::size_t d = labelled ? width - 1 : width;
    require(d >= 1, "dataset csv: need at least one feature column");
    Sample s;
    s.x = Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(d));
    if (labelled) s.y = values.back();
    samples.push_back(std::move(s));
  }
  return Dataset(std::move(samples), labelled);
}

inline Dataset load_dataset_csv(const std::string& path, bool labelled) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open dataset file: " + path);
  return parse_dataset_csv(in, labelled);
}

inline void write_dataset_csv(std::ostream& out, const Dataset& data) {
  const std::size_t d = data.dim();
  for (std::size_t j = 0; j < d; ++j) out << (j ? "," : "") << "x" << j;
  if (data.labelled()) out << ",y";
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    for (std::size_t j = 0; j < d; ++j) {
      out << (j ? "," : "") << format_double(s.x[static_cast<Eigen::Index>(j)]);
    }
    if (data.labelled()) out << ',' << format_double(s.y);
    out << '\n';
  }
}

}  // namespace dpstat
