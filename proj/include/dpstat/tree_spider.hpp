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
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dpstat/core/dataset.hpp"
#include "dpstat/core/loss.hpp"
#include "dpstat/core/losses.hpp"
#include "dpstat/core/rng.hpp"
#include "dpstat/privacy/calibration.hpp"
#include "dpstat/privacy/noise.hpp"

namespace dpstat {

/// Node u_{t,s} of the round-t tree: `bits` is the root-to-node path
/// ('0' = left, '1' = right); the empty string is the root.
struct NodeAddress {
  std::uint64_t round = 1;
  std::string bits;

  std::size_t depth() const { return bits.size(); }
  bool is_root() const { return bits.empty(); }
  bool is_right_child() const { return !bits.empty() && bits.back() == '1'; }
  NodeAddress parent() const {
    require(!bits.empty(), "NodeAddress::parent: root has no parent");
    return {round, bits.substr(0, bits.size() - 1)};
  }
  /// Number of right-child edges on the root-to-node path, i.e. how many
  /// variation updates the node's estimator has absorbed.
  std::size_t right_edges() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), '1'));
  }
  bool operator==(const NodeAddress&) const = default;
};

/// ℓ(k): the D-bit binary representation of leaf index k.
inline std::string leaf_bits(std::uint64_t k, int depth) {
  std::string s(static_cast<std::size_t>(depth), '0');
  for (int i = depth - 1; i >= 0; --i, k >>= 1) s[static_cast<std::size_t>(i)] = (k & 1) ? '1' : '0';
  return s;
}

namespace detail {
inline void dfs_fill(std::string& prefix, int depth, std::vector<std::string>& out) {
  if (static_cast<int>(prefix.size()) == depth) return;
  for (char c : {'0', '1'}) {
    prefix.push_back(c);
    out.push_back(prefix);
    dfs_fill(prefix, depth, out);
    prefix.pop_back();
  }
}
}  // namespace detail

/// Depth-first visiting order of the 2^{D+1} − 2 non-root nodes of a depth-D
/// binary tree (each node before its subtree, left subtree before right).
inline std::vector<std::string> dfs_order(int depth) {
  require(depth >= 0, "dfs_order: depth must be >= 0");
  std::vector<std::string> out;
  out.reserve((std::size_t{2} << depth) - 2);
  std::string prefix;
  detail::dfs_fill(prefix, depth, out);
  return out;
}

struct TreeParams {
  std::uint64_t b = 1;        // root batch size
  int D = 0;                  // tree depth
  std::uint64_t T = 1;        // rounds
  double alpha = 0.0;
  double alpha_tilde = 0.0;   // early-stop threshold is 2 * alpha_tilde
  double beta = 0.0;          // each step has length beta / (2^{D/2} L1)
  double C_tilde = 1.0;
  double sigma_root = 0.0;
  double sigma_delta = 0.0;
  double p = 0.1;

  /// Batch size of a right child at the given depth.
  std::uint64_t batch_at(std::size_t depth) const {
    return std::max<std::uint64_t>(1, b >> depth);
  }

  std::uint64_t samples_per_round() const {
    std::uint64_t total = b;
    for (int k = 1; k <= D; ++k) total += (std::uint64_t{1} << (k - 1)) * batch_at(static_cast<std::size_t>(k));
    return total;
  }

  void validate() const {
    require(D >= 0, "TreeParams: D must be >= 0");
    require(b >= 1, "TreeParams: b must be >= 1");
    require(static_cast<std::uint64_t>(D) * (std::uint64_t{2} << D) <= b,
            "TreeParams: need D 2^{D+1} <= b");
    require(T >= 1, "TreeParams: T must be >= 1");
    require(beta >= 0.0 && alpha_tilde >= 0.0, "TreeParams: beta, alpha_tilde must be >= 0");
    require(beta <= std::pow(2.0, 0.5 * D) * alpha_tilde * (1.0 + 1e-12),
            "TreeParams: need beta <= 2^{D/2} alpha_tilde");
    require(sigma_root >= 0.0 && sigma_delta >= 0.0, "TreeParams: noise scales must be >= 0");
  }
};

struct TreeDeriveOptions {
  /// Replaces the theoretical C̃ (which is in the tens of thousands for
  /// typical δ) by a practical value; all other formulas are unchanged.
  std::optional<double> C_tilde_override;
};

/// Noise scales for the current (b, D, beta): Gaussian mechanism on
/// sensitivity 2 L0 / b at the root and 2 β 2^{D/2} / b at right children.
inline void calibrate_tree_noise(TreeParams& p, double L0, const PrivacyBudget& budget) {
  p.sigma_root = gaussian_sigma(2.0 * L0 / static_cast<double>(p.b), budget.eps, budget.delta);
  p.sigma_delta = gaussian_sigma(tree_gv_sensitivity(p.beta, p.D, p.b), budget.eps, budget.delta);
}

/// Parameter schedule for population stationarity with oracle complexity n.
/// b = ⌊max{n^{2/3}, √n d^{1/4} / √ε}⌋, D is the largest depth with
/// D 2^{D+1} ≤ b, after which b is rounded down to a multiple of 2^D so that
/// every right child's batch b / 2^{|s|} is exact. T = ⌊n / (b (D/2 + 1))⌋.
inline TreeParams derive_tree_params(std::size_t n, std::size_t d, double L0, double L1,
                                     double F0, const PrivacyBudget& budget, double p,
                                     const TreeDeriveOptions& options = {}) {
  budget.validate();
  require(n >= 1 && d >= 1, "derive_tree_params: n and d must be >= 1");
  require(L0 > 0.0 && L1 > 0.0 && F0 > 0.0, "derive_tree_params: L0, L1, F0 must be > 0");
  require(p > 0.0 && p < 1.0, "derive_tree_params: p must lie in (0, 1)");
  const double nd = static_cast<double>(n);
  const double dd = static_cast<double>(d);
  const double eps = budget.eps;

  TreeParams tp;
  tp.p = p;
  const double b_real = std::max(std::pow(nd, 2.0 / 3.0), std::sqrt(nd) * std::pow(dd, 0.25) / std::sqrt(eps));
  tp.b = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::floor(b_real)));
  tp.D = 0;
  while (static_cast<std::uint64_t>(tp.D + 1) * (std::uint64_t{2} << (tp.D + 1)) <= tp.b) ++tp.D;
  tp.b = (tp.b >> tp.D) << tp.D;

  const double half = tp.D / 2.0 + 1.0;
  const double need_a = std::sqrt(dd) * half * half / eps;
  const double need_b = half * half * half;
  if (nd < need_a || nd < need_b) {
    std::ostringstream msg;
    msg << "derive_tree_params: sample size hypothesis violated (n=" << n << ", D=" << tp.D << ")";
    if (nd < need_a) msg << "; need n >= sqrt(d)(D/2+1)^2/eps = " << need_a;
    if (nd < need_b) msg << "; need n >= (D/2+1)^3 = " << need_b;
    throw PreconditionError(msg.str());
  }
  tp.T = static_cast<std::uint64_t>(std::floor(nd / (static_cast<double>(tp.b) * half)));
  require(tp.T >= 1, "derive_tree_params: fewer than one full round fits in n samples");

  tp.alpha = std::sqrt(2.0) * L0 * std::max(std::pow(nd, -1.0 / 3.0), std::sqrt(std::sqrt(dd) / (nd * eps)));
  tp.beta = tp.alpha * std::min(1.0, std::sqrt(static_cast<double>(tp.b)) * eps / std::sqrt(dd));
  const double log_term = std::log(2.0 * static_cast<double>(tp.T) * std::pow(2.0, tp.D + 1) / p);
  tp.C_tilde = 256.0 * std::log(1.25 / budget.delta) * log_term +
               8.0 * L1 * F0 * std::sqrt(2.0 * tp.D) * half / (2.0 * L0 * L0);
  if (options.C_tilde_override) {
    require(*options.C_tilde_override > 0.0, "derive_tree_params: C_tilde override must be > 0");
    tp.C_tilde = *options.C_tilde_override;
  }
  tp.alpha_tilde = tp.C_tilde * tp.alpha;
  calibrate_tree_noise(tp, L0, budget);
  tp.validate();
  return tp;
}

/// Trace of one visited node (recorded on request).
struct TreeNodeRecord {
  NodeAddress address;
  Vec w;
  Vec grad_estimate;
  Vec w_parent;                   // parent's iterate (empty at roots)
  std::size_t batch_begin = 0;    // stream offsets [begin, end) of the node's batch
  std::size_t batch_end = 0;
  std::size_t variation_updates = 0;
  double step_length = 0.0;       // leaves only; 0 when no step was taken
};

struct TreeRunReport {
  Vec w_out;
  bool stopped_early = false;
  std::optional<NodeAddress> stop_address;
  std::uint64_t samples_consumed = 0;
  std::uint64_t oracle_calls = 0;          // sample-oracle queries (one per sample drawn)
  std::uint64_t gradient_evaluations = 0;  // per-sample gradients; variations cost two
  std::uint64_t leaf_count_visited = 0;
  std::uint64_t rounds_completed = 0;
  std::uint64_t leaves_per_round = 0;   // 2^D
  // Leaf count under the alternative T 2^{D-1} reading, for comparison.
  std::uint64_t half_tree_leaf_count = 0;
  std::uint64_t selected_leaf = 0;      // index into visited leaves when not stopped
  NoiseLedger noise_ledger;
  std::vector<TreeNodeRecord> nodes;
};

struct TreeRunOptions {
  bool record_nodes = false;
  bool early_stop = true;
};

/// (1/|batch|) Σ (∇f(w; x) − ∇f(w_parent; x)) over the batch, without noise.
inline Vec tree_gradient_variation(const LossSpec& loss, SampleSpan batch, const Vec& w,
                                   const Vec& w_parent) {
  Vec delta = Vec::Zero(w.size());
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (const auto& s : batch) {
    loss.accumulate_grad(w, s, weight, delta);
    loss.accumulate_grad(w_parent, s, -weight, delta);
  }
  return delta;
}

/// Tree-based private Spider. Each round draws a fresh root batch, walks the
/// depth-D tree in DFS order (left children copy the parent's iterate and
/// estimator, right children add a fresh-batch variation estimate), and takes
/// a normalized step at every leaf. Stops at the first leaf whose estimator
/// norm is at most 2 α̃; otherwise returns a uniformly chosen visited leaf.
inline TreeRunReport run_tree_spider(const LossSpec& loss, SampleSpan stream,
                                     const TreeParams& params, Rng& rng,
                                     const TreeRunOptions& options = {}) {
  params.validate();
  require(!stream.empty(), "run_tree_spider: empty stream");
  require(static_cast<std::uint64_t>(stream.size()) >= params.T * params.samples_per_round(),
          "run_tree_spider: stream holds fewer than T b (D/2+1) samples");
  bind_check(loss, stream);
  require(loss.smoothness > 0.0, "run_tree_spider: loss smoothness must be > 0");
  const std::size_t d = static_cast<std::size_t>(stream.front().x.size());
  const int D = params.D;
  const double step_length = params.beta / (std::pow(2.0, 0.5 * D) * loss.smoothness);
  const auto order = dfs_order(D);

  TreeRunReport report;
  report.leaves_per_round = std::uint64_t{1} << D;
  StreamCursor cursor(stream);
  std::vector<Vec> w_at(static_cast<std::size_t>(D) + 1);
  std::vector<Vec> grad_at(static_cast<std::size_t>(D) + 1);
  std::vector<Vec> leaves;
  Vec w_current = Vec::Zero(static_cast<Eigen::Index>(d));

  // Leaf logic; returns true when the run stops at this leaf.
  auto visit_leaf = [&](const NodeAddress& addr, std::size_t depth, TreeNodeRecord* rec) {
    const Vec& w = w_at[depth];
    const Vec& g = grad_at[depth];
    leaves.push_back(w);
    ++report.leaf_count_visited;
    const double gnorm = g.norm();
    if (options.early_stop && gnorm <= 2.0 * params.alpha_tilde) {
      report.stopped_early = true;
      report.stop_address = addr;
      report.w_out = w;
      return true;
    }
    if (gnorm > 0.0) {
      const double eta = params.beta / (std::pow(2.0, 0.5 * D) * loss.smoothness * gnorm);
      w_current = w - eta * g;
      if (rec) rec->step_length = step_length;
    } else {
      w_current = w;
    }
    return false;
  };

  for (std::uint64_t t = 1; t <= params.T; ++t) {
    NodeAddress root{t, ""};
    w_at[0] = w_current;
    const std::size_t root_begin = cursor.position();
    auto batch = cursor.take(params.b);
    grad_at[0] = mean_grad(loss, w_at[0], batch) +
                 draw_gaussian(d, params.sigma_root, rng, &report.noise_ledger, "tree_root");
    report.oracle_calls += params.b;
    report.gradient_evaluations += params.b;
    TreeNodeRecord root_rec;
    if (options.record_nodes) {
      root_rec = {root, w_at[0], grad_at[0], Vec(), root_begin, cursor.position(), 0, 0.0};
    }
    if (D == 0) {
      const bool stop = visit_leaf(root, 0, options.record_nodes ? &root_rec : nullptr);
      if (options.record_nodes) report.nodes.push_back(std::move(root_rec));
      if (stop) break;
      report.rounds_completed = t;
      continue;
    }
    if (options.record_nodes) report.nodes.push_back(std::move(root_rec));

    bool stopped = false;
    for (const auto& bits : order) {
      const std::size_t k = bits.size();
      NodeAddress addr{t, bits};
      TreeNodeRecord rec;
      const std::size_t begin = cursor.position();
      if (bits.back() == '0') {
        w_at[k] = w_at[k - 1];
        grad_at[k] = grad_at[k - 1];
      } else {
        w_at[k] = w_current;
        auto node_batch = cursor.take(params.batch_at(k));
        Vec delta = tree_gradient_variation(loss, node_batch, w_at[k], w_at[k - 1]);
        delta += draw_gaussian(d, params.sigma_delta, rng, &report.noise_ledger, "tree_delta");
        grad_at[k] = grad_at[k - 1] + delta;
        report.oracle_calls += node_batch.size();
        report.gradient_evaluations += 2 * node_batch.size();
      }
      if (options.record_nodes) {
        rec = {addr, w_at[k], grad_at[k], w_at[k - 1], begin, cursor.position(),
               addr.right_edges(), 0.0};
      }
      if (k == static_cast<std::size_t>(D)) {
        stopped = visit_leaf(addr, k, options.record_nodes ? &rec : nullptr);
      }
      if (options.record_nodes) report.nodes.push_back(std::move(rec));
      if (stopped) break;
    }
    if (stopped) break;
    report.rounds_completed = t;
  }

  report.samples_consumed = cursor.consumed();
  report.half_tree_leaf_count = D == 0 ? report.rounds_completed
                                       : report.rounds_completed * (report.leaves_per_round / 2);
  if (!report.stopped_early) {
    report.selected_leaf = rng.index(leaves.size());
    report.w_out = leaves[report.selected_leaf];
  }
  return report;
}

struct TreeErrorCheck {
  std::size_t violations = 0;
  std::size_t pairs = 0;
  double threshold = 0.0;      // α α̃
  double max_sq_err = 0.0;
  double p = 0.0;
  double rate() const { return pairs ? static_cast<double>(violations) / static_cast<double>(pairs) : 0.0; }
};

struct TreeErrorOptions {
  /// Replace every batch mean by the exact population gradient (the
  /// infinite-batch limit).
  bool population_batches = false;
  bool noise = true;
};

/// Freezes the iterates of the first round of a run on a fresh stream from
/// `dist`, then re-draws batches and noise `trials` times and counts
/// (node, trial) pairs with ‖∇_{t,s} − ∇F(w_{t,s}; D)‖² > α α̃.
inline TreeErrorCheck validate_tree_estimation_error(const LossSpec& loss,
                                                     const FiniteDistribution& dist,
                                                     TreeParams params, std::size_t trials,
                                                     Rng& rng,
                                                     const TreeErrorOptions& options = {}) {
  require(trials >= 100, "validate_tree_estimation_error: need at least 100 trials");
  params.validate();
  TreeParams one_round = params;
  one_round.T = 1;
  Rng path_rng = rng.fork();
  Dataset stream = dist.draw_dataset(one_round.samples_per_round(), path_rng);
  TreeRunOptions run_opts;
  run_opts.record_nodes = true;
  run_opts.early_stop = false;
  auto run = run_tree_spider(loss, stream.view(), one_round, path_rng, run_opts);

  const std::size_t d = dist.dim();
  TreeErrorCheck check;
  check.threshold = params.alpha * params.alpha_tilde;
  check.p = params.p;
  std::vector<Vec> true_grads;
  for (const auto& node : run.nodes) true_grads.push_back(dist.population_grad(loss, node.w));

  const double sigma_root = options.noise ? params.sigma_root : 0.0;
  const double sigma_delta = options.noise ? params.sigma_delta : 0.0;
  std::vector<Vec> grad_at(static_cast<std::size_t>(params.D) + 1);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    for (std::size_t i = 0; i < run.nodes.size(); ++i) {
      const auto& node = run.nodes[i];
      const std::size_t k = node.address.depth();
      if (node.address.is_root()) {
        Vec g = options.population_batches
                    ? dist.population_grad(loss, node.w)
                    : mean_grad(loss, node.w, dist.draw_dataset(params.b, rng).view());
        grad_at[0] = g + draw_gaussian(d, sigma_root, rng);
      } else if (!node.address.is_right_child()) {
        grad_at[k] = grad_at[k - 1];
      } else {
        Vec delta;
        if (options.population_batches) {
          delta = dist.population_grad(loss, node.w) - dist.population_grad(loss, node.w_parent);
        } else {
          Dataset batch = dist.draw_dataset(params.batch_at(k), rng);
          delta = tree_gradient_variation(loss, batch.view(), node.w, node.w_parent);
        }
        grad_at[k] = grad_at[k - 1] + delta + draw_gaussian(d, sigma_delta, rng);
      }
      const double err = (grad_at[k] - true_grads[i]).squaredNorm();
      check.max_sq_err = std::max(check.max_sq_err, err);
      if (err > check.threshold) ++check.violations;
      ++check.pairs;
    }
  }
  return check;
}

}  // namespace dpstat
