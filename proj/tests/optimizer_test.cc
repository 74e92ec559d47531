// Copyright 2026 The Replicator Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "replicator/optimizer.h"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "replicator/ops.h"
#include "replicator/replicator.h"

namespace replicator {
namespace {

TEST(LrScheduleTest, MaxLrForBatch256) {
  LrSchedule s;
  s.batch_size = 256;
  s.steps_per_epoch = 100;
  EXPECT_DOUBLE_EQ(s.max_lr(), 0.125);
  EXPECT_DOUBLE_EQ(LrAt(s, 600), 0.125);
}

TEST(LrScheduleTest, WarmupMidpointIsHalf) {
  LrSchedule s;
  s.batch_size = 256;
  s.steps_per_epoch = 100;
  EXPECT_DOUBLE_EQ(LrAt(s, 0), 0.0);
  EXPECT_DOUBLE_EQ(LrAt(s, 300), 0.0625);
}

TEST(LrScheduleTest, DecaysByTenthAtEachBoundary) {
  LrSchedule s;
  s.batch_size = 256;
  s.steps_per_epoch = 10;
  EXPECT_DOUBLE_EQ(LrAt(s, 299), 0.125);
  EXPECT_DOUBLE_EQ(LrAt(s, 300), 0.125 * 0.1);
  EXPECT_DOUBLE_EQ(LrAt(s, 450), 0.0125);
  EXPECT_DOUBLE_EQ(LrAt(s, 600), 0.125 * 0.1 * 0.1);
  EXPECT_DOUBLE_EQ(LrAt(s, 800), 0.125 * 0.1 * 0.1 * 0.1);
}

TEST(LrScheduleTest, ShapeIsMonotoneInWarmupAndFlatBetweenDecays) {
  LrSchedule s;
  s.batch_size = 512;
  s.steps_per_epoch = 7;
  double prev = -1;
  for (int64_t step = 0; step <= 42; ++step) {
    const double lr = LrAt(s, step);
    EXPECT_GE(lr, prev);
    prev = lr;
  }
  EXPECT_DOUBLE_EQ(LrAt(s, 42), s.max_lr());
  EXPECT_NEAR(LrAt(s, 41), s.max_lr(), s.max_lr() / 42 + 1e-15);
  for (int64_t step = 43; step < 210; ++step) EXPECT_DOUBLE_EQ(LrAt(s, step), s.max_lr());
}

TEST(LrScheduleTest, RejectsNonPositiveStepsPerEpoch) {
  LrSchedule s;
  s.steps_per_epoch = 0;
  EXPECT_THROW(LrAt(s, 1), ConfigError);
}

// Loss sum(c * w) + 0.5 * sum(w^2), so the gradient is c + w.
struct Problem {
  std::vector<double> c;
  std::vector<double> w0;
};

Problem MakeProblem(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Problem p;
  for (int i = 0; i < 5; ++i) {
    p.c.push_back(u(rng));
    p.w0.push_back(u(rng));
  }
  return p;
}

std::vector<double> RunFramework(const Problem& p, const Optimizer& opt, int steps) {
  Replicator repl(Deployment{});
  const int64_t n = static_cast<int64_t>(p.c.size());
  auto w = repl.CreateVariable("w", Shape{n}, Initializer::Zeros());
  w->For(0)->Assign(Tensor::FromVector(p.w0, Shape{n}));
  Tensor c = Tensor::FromVector(p.c, Shape{n});
  auto handle = repl.Run(ReplicaSpec{
      [&](int) { return std::make_unique<ListSource>(std::vector<TensorNest>(steps, TensorNest(c))); },
      [&](ReplicaBuilder& b, const NodeNest& in) {
        Graph& g = b.graph();
        NodeRef wr = b.Read(w);
        NodeRef loss = ops::Add(g, ops::ReduceSum(g, ops::Mul(g, in.leaf(), wr)),
                                ops::Mul(g, ops::Scalar(g, 0.5),
                                         ops::ReduceSum(g, ops::Square(g, wr))));
        opt.Minimize(b, loss, {w});
        return NodeNest(loss);
      }});
  while (handle->Step()) {
  }
  EXPECT_EQ(handle->global_step(), steps);
  return w->For(0)->Read().ToDoubles();
}

TEST(OptimizerTest, SgdMatchesHandLoop) {
  Problem p = MakeProblem(1);
  auto got = RunFramework(p, Optimizer::Sgd(0.1), 25);
  std::vector<double> w = p.w0;
  for (int s = 0; s < 25; ++s) {
    for (size_t i = 0; i < w.size(); ++i) w[i] = w[i] + -(0.1 * (p.c[i] + w[i]));
  }
  for (size_t i = 0; i < w.size(); ++i) EXPECT_EQ(got[i], w[i]);
}

TEST(OptimizerTest, NesterovMomentumMatchesHandLoop) {
  Problem p = MakeProblem(2);
  auto got = RunFramework(p, Optimizer::Momentum(0.05, 0.9, true), 40);
  std::vector<double> w = p.w0, accum(w.size(), 0.0);
  for (int s = 0; s < 40; ++s) {
    for (size_t i = 0; i < w.size(); ++i) {
      const double g = p.c[i] + w[i];
      accum[i] = 0.9 * accum[i] + g;
      w[i] -= 0.05 * (g + 0.9 * accum[i]);
    }
  }
  for (size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(got[i], w[i], 1e-12);
}

TEST(OptimizerTest, PlainMomentumMatchesHandLoop) {
  Problem p = MakeProblem(3);
  auto got = RunFramework(p, Optimizer::Momentum(0.05, 0.8, false), 40);
  std::vector<double> w = p.w0, accum(w.size(), 0.0);
  for (int s = 0; s < 40; ++s) {
    for (size_t i = 0; i < w.size(); ++i) {
      accum[i] = 0.8 * accum[i] + (p.c[i] + w[i]);
      w[i] -= 0.05 * accum[i];
    }
  }
  for (size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(got[i], w[i], 1e-12);
}

TEST(OptimizerTest, AdamMatchesHandLoop) {
  Problem p = MakeProblem(4);
  auto got = RunFramework(p, Optimizer::Adam(0.01), 30);
  std::vector<double> w = p.w0, m(w.size(), 0.0), v(w.size(), 0.0);
  for (int t = 1; t <= 30; ++t) {
    const double lr_t = 0.01 * std::sqrt(1 - std::pow(0.999, t)) / (1 - std::pow(0.9, t));
    for (size_t i = 0; i < w.size(); ++i) {
      const double g = p.c[i] + w[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      w[i] -= lr_t * m[i] / (std::sqrt(v[i]) + 1e-8);
    }
  }
  for (size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(got[i], w[i], 1e-12);
}

TEST(OptimizerTest, ScheduledLearningRateIsFedPerStep) {
  Problem p = MakeProblem(5);
  OptimizerConfig cfg;
  cfg.name = "warm";
  LrSchedule s;
  s.batch_size = 2048;
  s.steps_per_epoch = 2;
  s.warmup_epochs = 2;
  cfg.schedule = s;
  auto got = RunFramework(p, Optimizer(cfg), 6);
  std::vector<double> w = p.w0;
  for (int step = 0; step < 6; ++step) {
    const double lr = step < 4 ? step / 4.0 : 1.0;
    for (size_t i = 0; i < w.size(); ++i) w[i] = w[i] + -(lr * (p.c[i] + w[i]));
  }
  for (size_t i = 0; i < w.size(); ++i) EXPECT_EQ(got[i], w[i]);
}

}  // namespace
}  // namespace replicator
