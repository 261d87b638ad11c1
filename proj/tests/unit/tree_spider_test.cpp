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

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "dpstat/core/losses.hpp"
#include "dpstat/harness/synthetic.hpp"
#include "dpstat/tree_spider.hpp"

namespace dpstat {
namespace {

// f(w; x) = <g, w>: every gradient, batch mean and population gradient is g.
LossSpec constant_gradient_loss(const Vec& g, double L1) {
  LossSpec loss;
  loss.name = "linear";
  loss.dim = static_cast<std::size_t>(g.size());
  loss.lipschitz = g.norm();
  loss.smoothness = L1;
  loss.value = [g](const Vec& w, const Sample&) { return g.dot(w); };
  loss.accumulate_grad = [g](const Vec&, const Sample&, double scale, Vec& out) {
    out.noalias() += scale * g;
  };
  loss.probe = [g](Rng& rng, std::size_t) {
    return std::make_pair(gaussian_vector(static_cast<std::size_t>(g.size()), 1.0, rng),
                          Sample{Vec::Zero(g.size()), 0.0});
  };
  return loss;
}

Dataset zeros(std::size_t n, std::size_t d) {
  std::vector<Sample> v(n, Sample{Vec::Zero(static_cast<Eigen::Index>(d)), 0.0});
  return Dataset(std::move(v), false);
}

TEST(TreeAddress, LeafBitsAndDfs) {
  EXPECT_EQ(leaf_bits(0, 3), "000");
  EXPECT_EQ(leaf_bits(5, 3), "101");
  EXPECT_EQ(dfs_order(2), (std::vector<std::string>{"0", "00", "01", "1", "10", "11"}));
  EXPECT_TRUE(dfs_order(0).empty());
  for (int D = 1; D <= 6; ++D) EXPECT_EQ(dfs_order(D).size(), (std::size_t{2} << D) - 2);
  NodeAddress a{3, "0110"};
  EXPECT_EQ(a.right_edges(), 2u);
  EXPECT_FALSE(a.is_right_child());
  EXPECT_EQ(a.parent(), (NodeAddress{3, "011"}));
  EXPECT_TRUE(a.parent().is_right_child());
  EXPECT_THROW(NodeAddress{}.parent(), PreconditionError);
}

TEST(DeriveTreeParams, DepthAndRounding) {
  const PrivacyBudget budget{1.0, 1e-6, 1.0};
  for (std::size_t n : {1024u, 4096u, 16384u}) {
    const auto p = derive_tree_params(n, 4, 1.0, 1.0, 1.0, budget, 0.1);
    EXPECT_LE(static_cast<std::uint64_t>(p.D) * (std::uint64_t{2} << p.D), p.b);
    EXPECT_EQ(p.b % (std::uint64_t{1} << p.D), 0u);
    EXPECT_LE(p.T * p.samples_per_round(), n);
    EXPECT_LE(p.beta, std::pow(2.0, p.D / 2.0) * p.alpha_tilde);
    EXPECT_GT(p.C_tilde, 1000.0);
  }
}

TEST(DeriveTreeParams, SmallBatchGivesDepthOne) {
  // n = 27, d = 1, ε = 100: b = ⌊27^{2/3}⌋ = 8 admits D = 1 (1·4 ≤ 8) but not D = 2 (2·8 > 8).
  const auto p = derive_tree_params(27, 1, 1.0, 1.0, 1.0, PrivacyBudget{100.0, 1e-6, 1.0}, 0.1);
  EXPECT_EQ(p.b, 8u);
  EXPECT_EQ(p.D, 1);
  EXPECT_EQ(p.T, 2u);
}

TEST(DeriveTreeParams, OverrideAndRejection) {
  TreeDeriveOptions opts;
  opts.C_tilde_override = 1.0;
  const auto p = derive_tree_params(4096, 4, 1.0, 1.0, 1.0, PrivacyBudget{}, 0.1, opts);
  EXPECT_EQ(p.C_tilde, 1.0);
  EXPECT_DOUBLE_EQ(p.alpha_tilde, p.alpha);
  EXPECT_THROW(derive_tree_params(8, 64, 1.0, 1.0, 1.0, PrivacyBudget{0.1, 1e-6, 1.0}, 0.1),
               PreconditionError);
}

TreeParams plain(std::uint64_t b, int D, std::uint64_t T, double beta) {
  TreeParams p;
  p.b = b;
  p.D = D;
  p.T = T;
  p.beta = beta;
  p.alpha = beta;
  p.alpha_tilde = beta;  // β ≤ 2^{D/2} α̃
  return p;
}

TEST(RunTreeSpider, ConstantGradientTakesExactSteps) {
  const Vec g = Vec::Unit(3, 0) * 5.0;
  const LossSpec loss = constant_gradient_loss(g, 2.0);
  const TreeParams p = plain(16, 2, 3, 0.5);
  const Dataset s = zeros(p.T * p.samples_per_round(), 3);
  Rng rng(1);
  TreeRunOptions opts;
  opts.record_nodes = true;
  auto rep = run_tree_spider(loss, s.view(), p, rng, opts);
  EXPECT_FALSE(rep.stopped_early);
  EXPECT_EQ(rep.leaf_count_visited, 12u);
  const double step = 0.5 / (std::pow(2.0, 1.0) * 2.0);
  std::size_t leaves = 0;
  for (const auto& node : rep.nodes) {
    EXPECT_TRUE(node.grad_estimate.isApprox(g, 1e-12));
    if (node.address.depth() == 2) {
      const double expect = -step * static_cast<double>(leaves);
      EXPECT_NEAR(node.w[0], expect, 1e-12);
      EXPECT_EQ(node.step_length, step);
      ++leaves;
    }
  }
  EXPECT_EQ(leaves, 12u);
}

TEST(RunTreeSpider, ConsumesExactlyTRounds) {
  const LossSpec loss = constant_gradient_loss(Vec::Ones(2), 1.0);
  const TreeParams p = plain(32, 2, 4, 0.1);
  EXPECT_EQ(p.samples_per_round(), 32u + 16u + 2u * 8u);
  const Dataset s = zeros(p.T * p.samples_per_round() + 7, 2);
  Rng rng(2);
  auto rep = run_tree_spider(loss, s.view(), p, rng);
  EXPECT_EQ(rep.samples_consumed, p.T * p.samples_per_round());
  EXPECT_EQ(rep.rounds_completed, 4u);
  EXPECT_EQ(rep.half_tree_leaf_count, 8u);
  EXPECT_EQ(rep.oracle_calls, rep.samples_consumed);
  EXPECT_EQ(rep.gradient_evaluations, 4u * (32u + 2u * 32u));
  EXPECT_LT(rep.selected_leaf, 16u);
  const Dataset short_stream = zeros(p.T * p.samples_per_round() - 1, 2);
  EXPECT_THROW(run_tree_spider(loss, short_stream.view(), p, rng), PreconditionError);
}

TEST(RunTreeSpider, StopsAtFirstLeafWhenGradientSmall) {
  LossSpec loss = zero_loss(2);
  loss.smoothness = 1.0;
  const TreeParams p = plain(16, 2, 3, 0.5);
  const Dataset s = zeros(p.T * p.samples_per_round(), 2);
  Rng rng(3);
  auto rep = run_tree_spider(loss, s.view(), p, rng);
  ASSERT_TRUE(rep.stopped_early);
  EXPECT_EQ(*rep.stop_address, (NodeAddress{1, leaf_bits(0, 2)}));
  EXPECT_EQ(rep.w_out, Vec::Zero(2));
}

TEST(RunTreeSpider, DepthZeroRootIsLeaf) {
  const LossSpec loss = constant_gradient_loss(Vec::Ones(2), 1.0);
  const TreeParams p = plain(4, 0, 5, 0.1);
  const Dataset s = zeros(20, 2);
  Rng rng(4);
  auto rep = run_tree_spider(loss, s.view(), p, rng);
  EXPECT_EQ(rep.leaf_count_visited, 5u);
  EXPECT_EQ(rep.samples_consumed, 20u);
}

TEST(RunTreeSpider, LeftChildrenCopyAndBatchesAreDisjoint) {
  Rng drng(5);
  const Dataset data = gen_synthetic(SyntheticKind::glm_fullrank, 2000, 3, 3, 5);
  const LossSpec loss = synthetic_nonconvex_loss(3);
  TreeParams p = plain(64, 3, 2, 0.2);
  p.sigma_root = 0.01;
  p.sigma_delta = 0.01;
  Rng rng(6);
  TreeRunOptions opts;
  opts.record_nodes = true;
  opts.early_stop = false;
  auto rep = run_tree_spider(loss, data.view(), p, rng, opts);
  std::map<std::string, const TreeNodeRecord*> by_addr;
  std::set<std::size_t> used;
  for (const auto& node : rep.nodes) {
    const std::string key = std::to_string(node.address.round) + ":" + node.address.bits;
    by_addr[key] = &node;
    for (std::size_t i = node.batch_begin; i < node.batch_end; ++i) {
      EXPECT_TRUE(used.insert(i).second) << "sample " << i << " reused";
    }
    if (!node.address.is_root() && !node.address.is_right_child()) {
      EXPECT_EQ(node.batch_begin, node.batch_end);
      const auto* parent = by_addr.at(std::to_string(node.address.round) + ":" +
                                      node.address.parent().bits);
      EXPECT_EQ(node.w, parent->w);
      EXPECT_EQ(node.grad_estimate, parent->grad_estimate);
    }
    if (node.address.is_right_child()) {
      EXPECT_EQ(node.batch_end - node.batch_begin, p.batch_at(node.address.depth()));
    }
    EXPECT_EQ(node.variation_updates, node.address.right_edges());
  }
  EXPECT_EQ(rep.noise_ledger.sigmas("tree_root").size(), 2u);
  EXPECT_EQ(rep.noise_ledger.sigmas("tree_delta").size(), 2u * 7u);
}

TEST(TreeGradientVariation, MatchesBatchDifference) {
  const Dataset data = gen_synthetic(SyntheticKind::glm_fullrank, 10, 3, 3, 7);
  const LossSpec loss = synthetic_nonconvex_loss(3);
  const Vec a = Vec::Constant(3, 0.3), b = Vec::Constant(3, -0.2);
  const Vec expect = mean_grad(loss, a, data.view()) - mean_grad(loss, b, data.view());
  EXPECT_TRUE(tree_gradient_variation(loss, data.view(), a, b).isApprox(expect, 1e-12));
}

TEST(ValidateTreeError, NoiselessPopulationBatchesAreExact) {
  const Huber1d h = huber_1d_loss(1.0, 1.0, 0.5, 1);
  TreeParams p = plain(16, 2, 1, 0.5);
  p.sigma_root = 0.3;
  p.sigma_delta = 0.3;
  Rng rng(8);
  TreeErrorOptions opts;
  opts.population_batches = true;
  opts.noise = false;
  auto check = validate_tree_estimation_error(h.loss, h.distribution, p, 100, rng, opts);
  EXPECT_EQ(check.violations, 0u);
  EXPECT_LE(check.max_sq_err, 1e-24);
  EXPECT_EQ(check.pairs, 100u * 7u);
  EXPECT_THROW(validate_tree_estimation_error(h.loss, h.distribution, p, 99, rng), PreconditionError);
}

TreeParams small_instance(double alpha_tilde_scale) {
  TreeParams p = derive_tree_params(4096, 3, 1.0, 2.0, 1.0, PrivacyBudget{}, 0.1);
  p.b = 64;
  p.D = 2;
  p.alpha_tilde *= alpha_tilde_scale;
  calibrate_tree_noise(p, 1.0, PrivacyBudget{});
  return p;
}

TEST(ValidateTreeError, SmallInstanceWithinProbabilityBound) {
  const Dataset support = gen_synthetic(SyntheticKind::glm_fullrank, 256, 3, 3, 11);
  const auto dist = FiniteDistribution::uniform({support.view().begin(), support.view().end()});
  const LossSpec loss = synthetic_nonconvex_loss(3);
  const TreeParams p = small_instance(1.0);
  Rng rng(21);
  auto check = validate_tree_estimation_error(loss, dist, p, 500, rng);
  EXPECT_EQ(check.pairs, 500u * 7u);
  EXPECT_LE(check.rate(), p.p + 5.0 * std::sqrt(p.p / 500.0));

  // A looser threshold on the same streams cannot add violations.
  Rng rng2(21);
  auto loose = validate_tree_estimation_error(loss, dist, small_instance(10.0), 500, rng2);
  EXPECT_LE(loose.violations, check.violations);
}

}  // namespace
}  // namespace dpstat
