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

#include "dpstat/glm_jl.hpp"
#include "dpstat/harness/synthetic.hpp"

namespace dpstat {
namespace {

TEST(JLMatrix, EntryVarianceAndNormPreservation) {
  Rng rng(1);
  const JLMatrix phi = jl_matrix(200, 100, rng);
  EXPECT_EQ(phi.k(), 200u);
  EXPECT_EQ(phi.d(), 100u);
  const double var = phi.phi.array().square().mean();
  EXPECT_NEAR(var, 1.0 / 200.0, 0.05 / 200.0);
  // E‖Φ e1‖² = 1 over many matrices.
  double acc = 0.0;
  const int reps = 400;
  for (int i = 0; i < reps; ++i) acc += jl_matrix(50, 4, rng).phi.col(0).squaredNorm();
  EXPECT_NEAR(acc / reps, 1.0, 4.0 * std::sqrt(2.0 / 50.0 / reps));
}

TEST(JLMatrix, DeterministicGivenSeed) {
  Rng a(7), b(7);
  EXPECT_EQ(jl_matrix(5, 9, a).phi, jl_matrix(5, 9, b).phi);
}

TEST(JLMatrix, OneByOneIsScalarNormal) {
  Rng rng(2);
  const JLMatrix phi = jl_matrix(1, 1, rng);
  EXPECT_EQ(phi.phi.rows(), 1);
  EXPECT_NE(phi.phi(0, 0), 0.0);
}

TEST(NumericRank, MatchesGenerator) {
  for (std::size_t r : {1u, 3u, 6u}) {
    const Dataset data = gen_synthetic(SyntheticKind::glm_lowrank, 100, 12, r, r);
    EXPECT_EQ(numeric_rank(data), r);
  }
  EXPECT_EQ(numeric_rank(gen_synthetic(SyntheticKind::glm_fullrank, 50, 7, 0, 1)), 7u);
}

TEST(SubspaceEmbedding, IdentityAndOrthonormalHaveNoDistortion) {
  Rng rng(3);
  std::vector<Vec> basis{Vec::Unit(6, 0), Vec::Unit(6, 3) + Vec::Unit(6, 1)};
  auto id = check_subspace_embedding(identity_jl(6), basis, 0.01, rng, 100);
  EXPECT_TRUE(id.pass);
  EXPECT_EQ(id.rank, 2u);
  EXPECT_LE(id.exact_distortion, 1e-12);
  auto orth = check_subspace_embedding(orthonormal_jl(6, rng), basis, 0.01, rng, 100);
  EXPECT_TRUE(orth.pass);
  EXPECT_LE(orth.exact_distortion, 1e-12);
  EXPECT_GE(orth.exact_distortion, orth.sampled_distortion - 1e-12);
  EXPECT_THROW(check_subspace_embedding(identity_jl(6), {Vec::Zero(6)}, 0.1, rng),
               PreconditionError);
}

TEST(SubspaceEmbedding, ExactBoundsSampled) {
  Rng rng(4);
  const JLMatrix phi = jl_matrix(40, 80, rng);
  std::vector<Vec> basis;
  for (int i = 0; i < 3; ++i) basis.push_back(gaussian_vector(80, 1.0, rng));
  auto check = check_subspace_embedding(phi, basis, 0.5, rng, 2000);
  EXPECT_GE(check.exact_distortion + 1e-12, check.sampled_distortion);
  EXPECT_EQ(check.pass, check.exact_distortion <= 0.5);
}

TEST(ChooseK, BranchesAndBounds) {
  const PrivacyBudget budget{1.0, 1e-6, 1.0};
  // Rank branch: r ln(2n/δ) is far below the scan minimizer for large d.
  const std::size_t k1 = choose_k(JLBaseKind::spiderboost, 1u << 20, 1, 100000, 1.0, 1.0, 1.0, budget);
  EXPECT_EQ(k1, static_cast<std::size_t>(std::ceil(std::log(2.0 * (1u << 20) / 1e-6))));
  // Never above d.
  EXPECT_EQ(choose_k(JLBaseKind::recursive_reg, 1000, 50, 3, 1.0, 1.0, 1.0, budget), 3u);
  // Scan branch: the objective at the result is minimal over [1, d].
  const std::size_t n = 4096, d = 64;
  const std::size_t k = choose_k(JLBaseKind::recursive_reg, n, 64, d, 1.0, 1.0, 1.0, budget);
  const double at_k = jl_k_objective(JLBaseKind::recursive_reg, k, n, 1.0, 1.0, 1.0, budget);
  for (std::size_t j = 1; j <= d; ++j) {
    EXPECT_LE(at_k, jl_k_objective(JLBaseKind::recursive_reg, j, n, 1.0, 1.0, 1.0, budget) + 1e-15);
  }
}

TEST(ProjectedLoss, Constants) {
  const LossSpec loss = jl_projected_loss(tanh_link(), 2.0);
  const auto link = tanh_link();
  EXPECT_DOUBLE_EQ(loss.lipschitz, 2.0 * link->lipschitz * 2.0);
  EXPECT_DOUBLE_EQ(loss.smoothness, 2.0 * link->smoothness * 4.0);
  EXPECT_FALSE(loss.feature_norm_bound.has_value());
}

TEST(RunJL, IdentityMatrixMatchesDirectRun) {
  const Dataset data = gen_synthetic(SyntheticKind::glm_fullrank, 512, 4, 4, 5);
  const PrivacyBudget budget{1.0, 1e-5, 1.0};
  JLParams params;
  params.k = 4;
  params.rank = 4;
  const JLBase base = spider_base();
  Rng a(11), b(11);
  auto jl = run_jl(base, data, tanh_link(), params, budget, identity_jl(4), a);
  auto direct = base(jl_projected_loss(tanh_link(), 1.0), data, budget.with_delta(budget.delta / 2.0), b);
  EXPECT_EQ(jl.w_out, direct.w_out);
  EXPECT_FALSE(jl.clamped);
}

TEST(RunJL, LiftsByTransposeAndClamps) {
  const Dataset data = gen_synthetic(SyntheticKind::glm_lowrank, 600, 32, 2, 6);
  const PrivacyBudget budget{2.0, 1e-5, 1.0};
  JLParams params;
  params.k = 8;
  params.rank = 2;
  Rng rng(12);
  const JLMatrix phi = jl_matrix(8, 32, rng);
  auto rep = run_jl(rr_base(1.0, RRMode::linear_time), data, squared_link(4.0), params, budget, phi, rng);
  EXPECT_TRUE(rep.w_out.isApprox(phi.phi.transpose() * rep.w_tilde, 1e-12));
  JLRunOptions tight;
  tight.clamp_bound = 1e-9;
  Rng rng2(12);
  auto clamped = run_jl(spider_base(), data, squared_link(4.0), params, budget, phi, rng2, tight);
  EXPECT_TRUE(clamped.clamped || clamped.w_tilde.norm() <= 1e-9);
  EXPECT_LE(clamped.w_tilde.norm(), 1e-9 * (1 + 1e-12));
}

TEST(RunJL, Preconditions) {
  const Dataset data = gen_synthetic(SyntheticKind::glm_fullrank, 64, 4, 4, 7);
  JLParams params;
  params.k = 5;
  Rng rng(13);
  EXPECT_THROW(run_jl(spider_base(), data, tanh_link(), params, PrivacyBudget{}, rng),
               PreconditionError);
  params.k = 2;
  EXPECT_THROW(run_jl(spider_base(), data, tanh_link(), params, PrivacyBudget{}, identity_jl(4), rng),
               PreconditionError);
}

TEST(JLMatrix, ProjectedFeatureNormsStayWithinTailBound) {
  const std::size_t n = 16, d = 512;
  const double gamma = 0.5, delta = 1e-3;
  const auto k = static_cast<std::size_t>(std::ceil(8.0 * std::log(2.0 * n / delta) / (gamma * gamma)));
  ASSERT_LE(k, d);
  const Dataset data = gen_synthetic(SyntheticKind::glm_fullrank, n, d, 0, 3);
  const double normX = data.max_feature_norm();
  Rng rng(31);
  int bad = 0;
  for (int s = 0; s < 50; ++s) {
    const Dataset proj = project_dataset(jl_matrix(k, d, rng), data.view());
    if (proj.max_feature_norm() > (1.0 + gamma) * normX) ++bad;
  }
  EXPECT_EQ(bad, 0);
}

TEST(RunJL, GradientNormTransfersOnRankOneData) {
  const std::size_t n = 16, d = 1024;
  const double delta = 1e-6;
  const auto k = static_cast<std::size_t>(std::ceil(32.0 * std::log(2.0 * n / delta)));
  ASSERT_LE(k, d);
  const Dataset data = gen_synthetic(SyntheticKind::glm_lowrank, n, d, 1, 4);
  const LossSpec full = glm_loss(tanh_link(), 1.0);
  const LossSpec proj_loss = jl_projected_loss(tanh_link(), 1.0);
  Rng rng(32);
  for (int s = 0; s < 50; ++s) {
    const JLMatrix phi = jl_matrix(k, d, rng);
    const Dataset proj = project_dataset(phi, data.view());
    const Vec wt = gaussian_vector(k, 1.0 / std::sqrt(static_cast<double>(k)), rng);
    const double lhs = mean_grad(full, phi.phi.transpose() * wt, data.view()).norm();
    const double rhs = mean_grad(proj_loss, wt, proj.view()).norm();
    EXPECT_LE(lhs, 2.0 * rhs + 1e-12) << "seed " << s;
  }
}

}  // namespace
}  // namespace dpstat
