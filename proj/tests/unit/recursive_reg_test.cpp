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

#include "dpstat/core/grad_check.hpp"
#include "dpstat/core/losses.hpp"
#include "dpstat/harness/synthetic.hpp"
#include "dpstat/recursive_reg.hpp"

namespace dpstat {
namespace {

Dataset cluster(std::size_t n, std::size_t d, std::uint64_t seed, double B = 10.0) {
  return gen_synthetic(SyntheticKind::huber_cluster, n, d, 0, seed, {B, 0.0});
}

Vec sample_mean(const Dataset& data) {
  Vec m = Vec::Zero(static_cast<Eigen::Index>(data.dim()));
  for (const auto& s : data.view()) m += s.x;
  return m / static_cast<double>(data.size());
}

TEST(Regularize, GradientIdentity) {
  const Dataset data = gen_synthetic(SyntheticKind::glm_fullrank, 40, 3, 3, 1);
  const LossSpec base = glm_loss(tanh_link(), 1.0);
  Rng rng(2);
  std::vector<Vec> centers{gaussian_vector(3, 1.0, rng), gaussian_vector(3, 1.0, rng)};
  const auto reg = regularize(base, centers, {0.5, 0.25});
  EXPECT_DOUBLE_EQ(reg.loss.smoothness, base.smoothness + 0.75);
  EXPECT_DOUBLE_EQ(reg.strong_convexity(), 0.75);
  for (int i = 0; i < 20; ++i) {
    const Vec w = gaussian_vector(3, 1.0, rng);
    EXPECT_TRUE(erm_grad(reg.loss, w, data).isApprox(reg.erm_grad_identity(w, data.view()), 1e-12));
  }
  EXPECT_LE(fd_check(reg.loss, 200, 1e-5, 3, 3).max_rel_err, 1e-4);
}

TEST(Regularize, EmptyListIsBaseAndMismatchRejected) {
  const LossSpec base = synthetic_nonconvex_loss(2);
  const auto reg = regularize(base, {}, {});
  const Vec w = Vec::Constant(2, 0.3);
  const Sample s{Vec::Constant(2, 0.1), 0.0};
  EXPECT_EQ(reg.loss.value(w, s), base.value(w, s));
  EXPECT_EQ(reg.loss.smoothness, base.smoothness);
  EXPECT_THROW(regularize(base, {Vec::Zero(2)}, {1.0, 2.0}), PreconditionError);
  EXPECT_THROW(regularize(base, {Vec::Zero(2)}, {-1.0}), PreconditionError);
}

TEST(Selector, TwoIterates) {
  // ηλ = 1/2: weights 2 and 4, so the output is (w1 + 2 w2) / 3.
  const std::vector<Vec> it{Vec::Constant(2, 3.0), Vec::Constant(2, 6.0)};
  const Vec expect = (it[0] + 2.0 * it[1]) / 3.0;
  EXPECT_TRUE(selector_weighted_avg(it, 0.5, 1.0).isApprox(expect, 1e-15));
  SelectorAccumulator acc(Selector::weighted(1.0), 0.5);
  for (const auto& w : it) acc.push(w);
  EXPECT_TRUE(acc.result().isApprox(expect, 1e-15));
}

TEST(Selector, TinyLambdaIsPlainAverageAndStreamingAgrees) {
  Rng rng(3);
  std::vector<Vec> it;
  for (int i = 0; i < 50; ++i) it.push_back(gaussian_vector(4, 1.0, rng));
  const Vec avg = apply_selector(Selector::plain_average(), it, 0.1);
  EXPECT_TRUE(selector_weighted_avg(it, 0.1, 1e-12).isApprox(avg, 1e-9));
  SelectorAccumulator acc(Selector::weighted(0.7), 0.3);
  for (const auto& w : it) acc.push(w);
  EXPECT_TRUE(acc.result().isApprox(selector_weighted_avg(it, 0.3, 0.7), 1e-12));
  EXPECT_EQ(apply_selector(Selector::last_iterate(), it, 0.1), it.back());
  EXPECT_THROW(selector_weighted_avg(it, 1.0, 1.0), PreconditionError);
}

TEST(NoisyGd, NoiselessQuadraticContraction) {
  const Dataset data = cluster(20, 3, 4);
  const LossSpec loss = huber_mean_loss(10.0, 1.0);
  const Vec mean = sample_mean(data);
  std::vector<Vec> iterates;
  SubroutineStats stats;
  stats.iterates = &iterates;
  Rng rng(5);
  noisy_gd(data.view(), loss, 100.0, 15, 0.4, Selector::last_iterate(), 0.0, rng, &stats);
  ASSERT_EQ(iterates.size(), 15u);
  for (std::size_t t = 1; t < iterates.size(); ++t) {
    const Vec expect = mean + 0.6 * (iterates[t - 1] - mean);
    EXPECT_TRUE(iterates[t].isApprox(expect, 1e-12));
  }
  EXPECT_EQ(stats.oracle_calls, 14u * 20u);
}

TEST(NoisyGd, SingleStepReturnsOrigin) {
  const Dataset data = cluster(5, 2, 6);
  Rng rng(7);
  SubroutineStats stats;
  const Vec w = noisy_gd(data.view(), huber_mean_loss(1.0, 1.0), 1.0, 1, 0.1,
                         Selector::weighted(1.0), 5.0, rng, &stats);
  EXPECT_EQ(w, Vec::Zero(2));
  EXPECT_EQ(stats.oracle_calls, 0u);
}

TEST(NoisyGd, ProjectionKeepsIteratesInBall) {
  const Dataset data = cluster(20, 3, 8);
  Rng rng(9);
  SubroutineStats stats;
  noisy_gd(data.view(), huber_mean_loss(1.0, 1.0), 0.5, 50, 0.5, Selector::plain_average(), 3.0,
           rng, &stats);
  EXPECT_LE(stats.max_iterate_norm, 0.5 + 1e-12);
}

TEST(OutputPerturbedSgd, SingleSampleReturnsStartPlusNoise) {
  const Dataset data = cluster(1, 2, 10);
  Rng rng(11);
  const Vec w1 = Vec::Constant(2, 0.1);
  EXPECT_EQ(output_perturbed_sgd(w1, data.view(), huber_mean_loss(1.0, 1.0), 1.0, 0.5, 0.0,
                                 Selector::last_iterate(), rng),
            w1);
}

TEST(OutputPerturbedSgd, OnePassOverSamples) {
  const Dataset data = cluster(6, 2, 12);
  const LossSpec loss = huber_mean_loss(10.0, 1.0);
  Rng rng(13);
  SubroutineStats stats;
  std::vector<Vec> it;
  stats.iterates = &it;
  const Vec out = output_perturbed_sgd(Vec::Zero(2), data.view(), loss, 100.0, 0.5, 0.0,
                                       Selector::last_iterate(), rng, &stats);
  Vec w = Vec::Zero(2);
  for (std::size_t t = 0; t + 1 < data.size(); ++t) w = w - 0.5 * (w - data.view()[t].x);
  EXPECT_TRUE(out.isApprox(w, 1e-14));
  EXPECT_EQ(stats.oracle_calls, 5u);
  EXPECT_EQ(it.size(), 6u);
}

TEST(PhasedSgd, Layout) {
  const auto four = phased_sgd_layout(4);
  ASSERT_EQ(four.size(), 2u);
  EXPECT_EQ(four[0].end - four[0].begin, 2u);
  EXPECT_EQ(four[1].end - four[1].begin, 1u);
  EXPECT_EQ(four[1].begin, 2u);
  const auto big = phased_sgd_layout(1000);
  std::size_t total = 0;
  for (const auto& ph : big) {
    EXPECT_EQ(ph.end - ph.begin, 1000u >> ph.k);
    total += ph.end - ph.begin;
  }
  EXPECT_LE(total, 1000u);
  EXPECT_EQ(big.size(), 9u);
}

TEST(PhasedSgd, StepsShrinkByFour) {
  const Dataset data = cluster(64, 2, 14);
  Rng rng(15);
  std::vector<double> steps;
  phased_sgd(data.view(), huber_mean_loss(1.0, 1.0), 1.0, 0.8, 0.1, Selector::weighted(0.5), rng,
             nullptr, &steps);
  ASSERT_EQ(steps.size(), 6u);
  for (std::size_t k = 0; k < steps.size(); ++k) {
    EXPECT_DOUBLE_EQ(steps[k], 0.8 * std::pow(4.0, -static_cast<double>(k + 1)));
  }
  EXPECT_THROW(phased_sgd(cluster(1, 2, 1).view(), huber_mean_loss(1.0, 1.0), 1.0, 0.8, 0.1,
                          Selector::last_iterate(), rng),
               PreconditionError);
}

TEST(DeriveRrParams, Schedules) {
  const PrivacyBudget budget{1.0, 1e-6, 1.0};
  const auto p = derive_rr_params(RRMode::optimal, 2048, 4, 1.0, 1.0, 1.0, budget);
  const double lambda0 = std::min(1.0 / 2048.0, 4.0 / (2048.0 * 2048.0));
  EXPECT_DOUBLE_EQ(p.lambda0, lambda0);
  EXPECT_EQ(p.T, static_cast<std::size_t>(std::floor(std::log2(1.0 / lambda0))));
  for (std::size_t t = 0; t < p.T; ++t) {
    EXPECT_DOUBLE_EQ(p.lambdas[t], std::ldexp(lambda0, static_cast<int>(t)));
    EXPECT_NEAR(p.radii[t], std::pow(2.0, t / 2.0), 1e-12);
    if (t == 0) continue;
    EXPECT_GE(p.K[t], 2u);
    EXPECT_DOUBLE_EQ(p.eta[t], std::log(static_cast<double>(p.K[t])) /
                                   (p.lambdas[t] * static_cast<double>(p.K[t])));
  }
  const auto lin = derive_rr_params(RRMode::linear_time, 2048, 4, 1.0, 1.0, 1.0, budget);
  EXPECT_DOUBLE_EQ(lin.lambda0, std::log(2048.0) / 2048.0);
  for (std::size_t t = 1; t < lin.T; ++t) EXPECT_EQ(lin.K[t], 2048u / lin.T);
}

TEST(DeriveRrParams, RejectsLargeLambda) {
  EXPECT_THROW(derive_rr_params(RRMode::optimal, 4, 1, 10.0, 1.0, 1.0, PrivacyBudget{}),
               PreconditionError);
}

TEST(RecursiveRegularization, NoiselessQuadraticReachesMean) {
  const Dataset data = cluster(400, 3, 16, 1.0);
  const LossSpec loss = huber_mean_loss(10.0, 1.0);
  RRParams p;
  p.T = 4;
  p.lambda0 = 0.05;
  p.R_bar = 4.0;
  for (std::size_t t = 0; t < p.T; ++t) {
    p.lambdas.push_back(std::ldexp(p.lambda0, static_cast<int>(t)));
    p.radii.push_back(4.0);
    p.K.push_back(t ? 400 : 0);
    p.eta.push_back(t ? 0.5 : 0.0);
    p.sigma.push_back(0.0);
  }
  Rng rng(17);
  auto rep = run_recursive_regularization(data.view(), loss, p, RRSubroutine::noisy_gd, rng);
  ASSERT_EQ(rep.rounds.size(), 3u);
  // Each round minimizes the slice's quadratic plus the accumulated proximal
  // terms: c_t = (mean_t + Σ_{i<t} λ_i c_i) / (1 + Σ_{i<t} λ_i), c_0 = 0.
  std::vector<Vec> centers{Vec::Zero(3)};
  Vec c = Vec::Zero(3);
  for (std::size_t t = 1; t < p.T; ++t) {
    Vec num = Vec::Zero(3);
    double den = 1.0;
    for (std::size_t i = 0; i < t; ++i) {
      num += p.lambdas[i] * centers[i];
      den += p.lambdas[i];
    }
    const Dataset slice(std::vector<Sample>(data.view().begin() + (t - 1) * 100,
                                            data.view().begin() + t * 100),
                        false);
    c = (sample_mean(slice) + num) / den;
    centers.push_back(c);
  }
  EXPECT_LE((rep.w_out - c).norm(), 1e-6);
  EXPECT_EQ(rep.rounds[2].slice_end, 300u);
  EXPECT_EQ(rep.oracle_calls, 3u * 399u * 100u);
  EXPECT_EQ(rep.final_objective.lambdas.size(), 4u);
}

TEST(RecursiveRegularization, SingleRoundReturnsOrigin) {
  const Dataset data = cluster(10, 2, 18);
  RRParams p;
  p.T = 1;
  p.lambda0 = 0.5;
  p.lambdas = {0.5};
  p.radii = {1.0};
  p.K = {0};
  p.eta = {0.0};
  p.sigma = {0.0};
  Rng rng(19);
  auto rep = run_recursive_regularization(data.view(), huber_mean_loss(1.0, 1.0), p,
                                          RRSubroutine::phased_sgd, rng);
  EXPECT_TRUE(rep.no_rounds);
  EXPECT_EQ(rep.w_out, Vec::Zero(2));
}

}  // namespace
}  // namespace dpstat
