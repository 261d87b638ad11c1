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
#include <sstream>

#include "dpstat/core/dataset.hpp"
#include "dpstat/core/grad_check.hpp"
#include "dpstat/core/loss.hpp"
#include "dpstat/core/losses.hpp"
#include "dpstat/core/rng.hpp"
#include "dpstat/core/sampling.hpp"
#include "dpstat/core/types.hpp"
#include "dpstat/harness/synthetic.hpp"

namespace dpstat {
namespace {

Vec e(std::size_t d, std::size_t i, double s = 1.0) {
  Vec v = Vec::Zero(static_cast<Eigen::Index>(d));
  v[static_cast<Eigen::Index>(i)] = s;
  return v;
}

Vec mean_of(const Dataset& data) {
  Vec m = Vec::Zero(static_cast<Eigen::Index>(data.dim()));
  for (const auto& s : data.view()) m += s.x;
  return m / static_cast<double>(data.size());
}

TEST(ErmGrad, HuberZeroAtEmpiricalMean) {
  const Dataset data = gen_synthetic(SyntheticKind::huber_cluster, 50, 6, 0, 11);
  const LossSpec loss = huber_mean_loss(1.0, 1.0);
  EXPECT_LE(erm_grad(loss, mean_of(data), data).norm(), 1e-10);
}

TEST(ErmGrad, SingleSampleIsPerSampleGradient) {
  const LossSpec loss = glm_loss(tanh_link(), 1.0);
  Dataset data({Sample{Vec::Constant(3, 0.3), 0.2}}, true);
  const Vec w = Vec::Constant(3, -0.7);
  EXPECT_EQ(erm_grad(loss, w, data), loss.grad(w, data[0]));
}

TEST(ErmGrad, QuadraticGlmHandValue) {
  const LossSpec loss = glm_loss(squared_link(10.0), 1.0);
  Dataset data({Sample{e(3, 0), 0.0}}, true);
  EXPECT_EQ(erm_grad(loss, e(3, 0, 2.0), data), e(3, 0, 2.0));
}

TEST(ErmGrad, RejectsDimensionMismatch) {
  const LossSpec loss = huber_mean_loss(1.0, 1.0);
  Dataset data({Sample{Vec::Zero(3), 0.0}});
  EXPECT_THROW(erm_grad(loss, Vec::Zero(4), data), PreconditionError);
}

TEST(HuberMean, Examples) {
  const LossSpec l11 = huber_mean_loss(1.0, 1.0);
  const Sample origin{Vec::Zero(3), 0.0};
  EXPECT_EQ(l11.eval(Vec::Zero(3), origin), 0.0);
  EXPECT_EQ(l11.grad(Vec::Zero(3), origin), Vec::Zero(3));
  EXPECT_NEAR((l11.grad(e(3, 0, 2.0), origin) - e(3, 0)).norm(), 0.0, 1e-15);
  const LossSpec l12 = huber_mean_loss(1.0, 2.0);
  EXPECT_NEAR((l12.grad(e(3, 0, 0.25), origin) - e(3, 0, 0.5)).norm(), 0.0, 1e-15);
  EXPECT_THROW(huber_mean_loss(0.0, 1.0), PreconditionError);
  EXPECT_THROW(huber_mean_loss(1.0, -1.0), PreconditionError);
}

TEST(HuberMean, SeamContinuity) {
  const LossSpec loss = huber_mean_loss(2.0, 4.0);  // B = 0.5
  const Sample origin{Vec::Zero(2), 0.0};
  const Vec in = e(2, 1, 0.5 - 1e-12), out = e(2, 1, 0.5 + 1e-12);
  EXPECT_NEAR(loss.eval(in, origin), loss.eval(out, origin), 1e-10);
  EXPECT_NEAR((loss.grad(in, origin) - loss.grad(out, origin)).norm(), 0.0, 1e-10);
}

TEST(HuberMean, LinearRegimeStructure) {
  // ‖w − mean‖ = B/2 with every sample inside B/4 keeps all samples quadratic.
  const Dataset data = gen_synthetic(SyntheticKind::huber_cluster, 40, 5, 0, 3);
  const LossSpec loss = huber_mean_loss(1.0, 1.0);
  const Vec mean = mean_of(data);
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    Vec dir = gaussian_vector(5, 1.0, rng);
    const Vec w = mean + 0.5 * dir / dir.norm();
    EXPECT_LE((erm_grad(loss, w, data) - (w - mean)).norm(), 1e-12);
  }
}

TEST(Huber1d, Examples) {
  for (int v : {-1, 1}) {
    auto h = huber_1d_loss(1.0, 1.0, 0.3, v);
    EXPECT_NEAR(h.population_grad(-1.0 * v * 0.3 / 2.0), 0.0, 1e-15);
    const Vec w = Vec::Constant(1, 0.1);
    EXPECT_NEAR(h.distribution.population_grad(h.loss, w)[0], h.population_grad(0.1), 1e-15);
  }
  auto h0 = huber_1d_loss(1.0, 1.0, 0.0, 1);
  for (double w : {-0.5, -0.2, 0.0, 0.3, 0.5}) EXPECT_NEAR(h0.population_grad(w), w, 1e-15);
  Rng rng(17);
  double sum = 0.0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) sum += h0.distribution.draw(rng).x[0];
  EXPECT_LE(std::abs(sum / draws), 3.0 / std::sqrt(static_cast<double>(draws)));
  EXPECT_THROW(huber_1d_loss(1.0, 1.0, 1.5, 1), PreconditionError);
  EXPECT_THROW(huber_1d_loss(1.0, 1.0, 0.5, 0), PreconditionError);
}

TEST(GlmLoss, Examples) {
  const LossSpec sq = glm_loss(squared_link(4.0), 1.0);
  Rng rng(2);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(sq.grad(gaussian_vector(3, 1.0, rng), Sample{Vec::Zero(3), 0.5}), Vec::Zero(3));
  }
  const LossSpec th = glm_loss(tanh_link(), 1.0);
  EXPECT_EQ(th.grad(Vec::Zero(3), Sample{e(3, 0), 0.0}), Vec::Zero(3));
  const Vec g = th.grad(e(3, 0), Sample{e(3, 0), 0.0});
  EXPECT_NEAR(g[0], std::tanh(1.0), 1e-15);
  EXPECT_NEAR(g[0], 0.7616, 1e-4);
  EXPECT_EQ(g.tail(2), Vec::Zero(2));
}

TEST(GlmLoss, DeclaredConstantsScaleWithFeatureNorm) {
  const LossSpec l = glm_loss(tanh_link(), 3.0);
  EXPECT_DOUBLE_EQ(l.lipschitz, 3.0);
  EXPECT_DOUBLE_EQ(l.smoothness, 9.0);
}

TEST(GlmLoss, BindRejectsOversizedFeatures) {
  const LossSpec l = glm_loss(tanh_link(), 1.0);
  Dataset bad({Sample{e(2, 0, 1.5), 0.0}}, true);
  EXPECT_THROW(bind_check(l, bad), PreconditionError);
  Dataset ok({Sample{e(2, 0, 1.0), 0.0}}, true);
  EXPECT_NO_THROW(bind_check(l, ok));
}

TEST(SyntheticNonconvex, Examples) {
  const LossSpec l = synthetic_nonconvex_loss(6);
  Rng rng(8);
  for (int i = 0; i < 10; ++i) {
    // With y = 0 the residual at w = 0 is 0 and φ'(0) = 0.
    EXPECT_EQ(l.grad(Vec::Zero(6), Sample{uniform_in_ball(6, 1.0, rng), 0.0}), Vec::Zero(6));
  }
  EXPECT_LE(fd_check(l, 100).max_rel_err, 1e-5);
  const auto audit = audit_constants(l, 1000, 4);
  EXPECT_LE(audit.max_grad_ratio, l.smoothness * (1.0 + 1e-8));
  EXPECT_LE(audit.max_value_ratio, l.lipschitz * (1.0 + 1e-8));
  EXPECT_NEAR(l.lipschitz, 3.0 * std::sqrt(3.0) / 8.0, 1e-15);
  EXPECT_DOUBLE_EQ(l.smoothness, 2.0);
}

TEST(SyntheticNonconvex, LinkConstantsMatchNumericMaxima) {
  auto link = robust_link();
  double max_d1 = 0.0, max_d2 = 0.0;
  const double h = 1e-5;
  for (double u = -5.0; u <= 5.0; u += 1e-4) {
    max_d1 = std::max(max_d1, std::abs(link->derivative(u, 0.0)));
    max_d2 = std::max(max_d2, std::abs(link->derivative(u + h, 0.0) - link->derivative(u - h, 0.0)) / (2 * h));
  }
  EXPECT_NEAR(max_d1, link->lipschitz, 1e-6);
  EXPECT_NEAR(max_d2, link->smoothness, 1e-5);
  EXPECT_FALSE(link->convex);
}

TEST(FdCheck, EveryLossPasses) {
  EXPECT_LE(fd_check(huber_mean_loss(1.0, 1.0), 100, 1e-5).max_rel_err, 1e-5);
  EXPECT_LE(fd_check(glm_loss(tanh_link(), 1.0), 100).max_rel_err, 1e-5);
  EXPECT_LE(fd_check(glm_loss(squared_link(5.0), 1.0), 100).max_rel_err, 1e-5);
  EXPECT_LE(fd_check(huber_1d_loss(1.0, 2.0, 0.4, -1).loss, 100).max_rel_err, 1e-5);
}

TEST(FdCheck, DetectsCorruptedGradient) {
  LossSpec bad = glm_loss(tanh_link(), 1.0);
  auto g = bad.accumulate_grad;
  bad.accumulate_grad = [g](const Vec& w, const Sample& s, double scale, Vec& out) {
    g(w, s, scale, out);
    out.array() += 0.1 * scale;
  };
  EXPECT_GT(fd_check(bad, 100).max_rel_err, 1e-2);
}

TEST(FdCheck, RejectsNonPositiveStep) {
  EXPECT_THROW(fd_check(huber_mean_loss(1.0, 1.0), 1, 0.0), PreconditionError);
}

TEST(Convexity, MidpointProbes) {
  EXPECT_EQ(convexity_violations(glm_loss(tanh_link(), 1.0), 500), 0u);
  EXPECT_EQ(convexity_violations(huber_mean_loss(1.0, 1.0), 500), 0u);
  EXPECT_GT(convexity_violations(synthetic_nonconvex_loss(2), 2000), 0u);
}

TEST(Rng, DeterministicAndKeyed) {
  Rng a(StreamKey{1, 2, 3, "x"}), b(StreamKey{1, 2, 3, "x"}), c(StreamKey{1, 2, 4, "x"});
  for (int i = 0; i < 10; ++i) {
    const auto va = a.next_u64();
    EXPECT_EQ(va, b.next_u64());
    EXPECT_NE(va, c.next_u64());
  }
  EXPECT_NE(StreamKey({1, 2, 3, "x"}).digest(), StreamKey({1, 2, 3, "y"}).digest());
}

TEST(Rng, NormalMoments) {
  Rng rng(42);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_LE(std::abs(s / n), 4.0 / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Dataset, CsvRoundTripIsExact) {
  Rng rng(9);
  std::vector<Sample> pts;
  for (int i = 0; i < 20; ++i) pts.push_back({gaussian_vector(3, 1.0, rng), rng.normal() * 1e-7});
  Dataset data(pts, true);
  std::stringstream ss;
  write_dataset_csv(ss, data);
  Dataset back = parse_dataset_csv(ss, true);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].x, data[i].x);
    EXPECT_EQ(back[i].y, data[i].y);
  }
}

TEST(Dataset, CsvHeaderOptionalAndRaggedRejected) {
  std::stringstream no_header("1,2,3\n4,5,6\n");
  EXPECT_EQ(parse_dataset_csv(no_header, true).dim(), 2u);
  std::stringstream ragged("1,2,3\n4,5\n");
  EXPECT_THROW(parse_dataset_csv(ragged, true), PreconditionError);
  std::stringstream unlabelled("a,b\n1,2\n");
  auto d = parse_dataset_csv(unlabelled, false);
  EXPECT_EQ(d.dim(), 2u);
  EXPECT_FALSE(d.labelled());
}

TEST(StreamCursor, HandsOutDisjointRangesAndStopsWhenExhausted) {
  Dataset data = gen_synthetic(SyntheticKind::huber_cluster, 10, 2, 0, 1);
  StreamCursor c(data.view());
  auto a = c.take(4);
  auto b = c.take(6);
  EXPECT_EQ(a.data() + 4, b.data());
  EXPECT_EQ(c.remaining(), 0u);
  EXPECT_THROW(c.take(1), PreconditionError);
}

TEST(BatchSampler, FullBatchIsIdentityAndBatchesAreDistinct) {
  Rng rng(1);
  BatchSampler full(7);
  const auto& all = full.draw(7, rng);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(all[i], i);
  BatchSampler s(100);
  for (std::size_t b : {1u, 5u, 20u, 60u, 99u}) {
    auto batch = s.draw(b, rng);
    ASSERT_EQ(batch.size(), b);
    for (std::size_t i = 1; i < b; ++i) EXPECT_LT(batch[i - 1], batch[i]);
    EXPECT_LT(batch.back(), 100u);
  }
  EXPECT_THROW(s.draw(101, rng), PreconditionError);
}

TEST(ProjectBall, Examples) {
  EXPECT_EQ(project_ball(e(3, 1, 0.5), 1.0), e(3, 1, 0.5));
  EXPECT_EQ(project_ball(e(3, 0, 3.0), 1.0), e(3, 0));
  EXPECT_THROW(project_ball(e(3, 0), -1.0), PreconditionError);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Vec a = gaussian_vector(4, 2.0, rng), b = gaussian_vector(4, 2.0, rng);
    EXPECT_LE((project_ball(a, 1.0) - project_ball(b, 1.0)).norm(), (a - b).norm() + 1e-15);
  }
}

}  // namespace
}  // namespace dpstat
