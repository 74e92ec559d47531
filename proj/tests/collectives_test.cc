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

#include "replicator/collectives.h"

#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "cluster_util.h"
#include "replicator/variables.h"
#include "test_util.h"

namespace replicator {
namespace {

using namespace std::chrono_literals;
using testing::ErrorText;
using testing::RandomTensor;
using testing::RunRanks;
using testing::TestGroup;
using testing::TransportKind;

Tensor Vec(std::vector<double> v) {
  const auto n = static_cast<int64_t>(v.size());
  return Tensor::FromVector(std::move(v), Shape{n});
}

// Builds one communicator per rank and runs fn(rank, comm) concurrently.
// Fails the test if any rank throws.
template <typename Fn>
void OnEveryRank(TestGroup& group, Fn fn) {
  std::vector<std::unique_ptr<Communicator>> comms;
  for (int r = 0; r < group.size(); ++r) {
    comms.push_back(std::make_unique<Communicator>(group.mesh(r), group.members(),
                                                   CommunicatorOptions{.timeout = 30s}));
  }
  auto errors = RunRanks(group.size(), [&](int r) { fn(r, *comms[r]); });
  for (int r = 0; r < group.size(); ++r) EXPECT_EQ(ErrorText(errors[r]), "") << "rank " << r;
}

class CollectivesTest : public ::testing::TestWithParam<TransportKind> {};

TEST_P(CollectivesTest, SingleRankIsIdentity) {
  TestGroup group(GetParam(), 1);
  OnEveryRank(group, [](int, Communicator& c) {
    Tensor t = Vec({1.5, -2});
    EXPECT_TRUE(c.AllSum(t, "s").BitEqual(t));
    EXPECT_TRUE(c.Broadcast(t, "b").BitEqual(t));
    auto g = c.AllGather(t, "g");
    ASSERT_EQ(g.size(), 1u);
    EXPECT_TRUE(g[0].BitEqual(t));
  });
}

TEST_P(CollectivesTest, TwoRankSum) {
  TestGroup group(GetParam(), 2);
  OnEveryRank(group, [](int r, Communicator& c) {
    Tensor out = c.AllSum(r == 0 ? Vec({1, 2}) : Vec({3, 4}), "g0");
    EXPECT_TRUE(out.BitEqual(Vec({4, 6})));
  });
}

TEST_P(CollectivesTest, ScalarsSumToTen) {
  TestGroup group(GetParam(), 4);
  OnEveryRank(group, [](int r, Communicator& c) {
    EXPECT_EQ(c.AllSum(Tensor::Scalar(r + 1), "s").at(0), 10.0);
  });
}

TEST_P(CollectivesTest, MeanOfTwoAndFour) {
  TestGroup group(GetParam(), 2);
  OnEveryRank(group, [](int r, Communicator& c) {
    EXPECT_TRUE(c.AllMean(Vec({r == 0 ? 2.0 : 4.0}), "m").BitEqual(Vec({3})));
  });
}

TEST_P(CollectivesTest, DivideThenSumAveragesGradients) {
  TestGroup group(GetParam(), 2);
  OnEveryRank(group, [](int r, Communicator& c) {
    Tensor grad = Vec({r == 0 ? 2.0 : 4.0});
    kernels::DivideInPlace(grad, c.size());
    EXPECT_TRUE(c.AllSum(grad, "grad/w").BitEqual(Vec({3})));
  });
}

TEST_P(CollectivesTest, RingMatchesRankOrderedFoldOnThousandElements) {
  TestGroup group(GetParam(), 4);
  std::mt19937_64 rng(21);
  std::vector<Tensor> inputs;
  for (int r = 0; r < 4; ++r) inputs.push_back(RandomTensor(rng, Shape{1000}, -1e3, 1e3));
  const auto expect = testing::NaiveFoldSum(inputs);
  OnEveryRank(group, [&](int r, Communicator& c) {
    EXPECT_TRUE(testing::BitEqualDoubles(c.AllSum(inputs[r], "big"), expect));
  });
}

TEST_P(CollectivesTest, RandomShapesForEveryGroupSize) {
  for (int n = 1; n <= 8; ++n) {
    TestGroup group(GetParam(), n);
    std::mt19937_64 rng(100 + n);
    constexpr int kTrials = 10;
    std::vector<std::vector<Tensor>> inputs(kTrials);
    for (auto& trial : inputs) {
      const Shape shape = testing::RandomShape(rng, 3, 10000);
      // Wide dynamic range makes the summation order visible in the bits.
      for (int r = 0; r < n; ++r) trial.push_back(RandomTensor(rng, shape, -1e8, 1e8));
      for (int r = 0; r < n; ++r) {
        auto d = trial[r].mutable_data<double>();
        for (size_t i = 0; i < d.size(); i += 3) d[i] *= 1e-9;
      }
    }
    if (n >= 3) {
      // The inputs must be able to tell summation orders apart.
      int order_sensitive = 0;
      for (const auto& trial : inputs) {
        std::vector<Tensor> reversed(trial.rbegin(), trial.rend());
        order_sensitive += testing::NaiveFoldSum(reversed) != testing::NaiveFoldSum(trial);
      }
      EXPECT_GT(order_sensitive, 0);
    }
    OnEveryRank(group, [&](int r, Communicator& c) {
      for (int t = 0; t < kTrials; ++t) {
        c.BeginGeneration(t);
        Tensor sum = c.AllSum(inputs[t][r], "x");
        EXPECT_TRUE(testing::BitEqualDoubles(sum, testing::NaiveFoldSum(inputs[t])))
            << "n=" << n << " trial " << t;
        EXPECT_EQ(sum.shape(), inputs[t][r].shape());
        Tensor mx = c.AllReduce(inputs[t][r], ReduceOp::kMax, "max");
        EXPECT_TRUE(testing::BitEqualDoubles(mx, testing::NaiveFoldMax(inputs[t])));
      }
    });
  }
}

TEST_P(CollectivesTest, RingHandlesFewerElementsThanRanks) {
  TestGroup group(GetParam(), 5);
  OnEveryRank(group, [](int r, Communicator& c) {
    EXPECT_TRUE(c.AllSum(Vec({1.0 * r, 2.0}), "tiny").BitEqual(Vec({10, 10})));
    EXPECT_EQ(c.AllSum(Tensor(Shape{0}, DType::kF64), "empty").num_elements(), 0);
  });
}

TEST_P(CollectivesTest, GatherScalars) {
  TestGroup group(GetParam(), 3);
  OnEveryRank(group, [](int r, Communicator& c) {
    auto out = c.AllGather(Tensor::Scalar(7 + r), "g");
    ASSERT_EQ(out.size(), 3u);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(out[i].at(0), 7 + i);
  });
}

TEST_P(CollectivesTest, GatherRandomMatricesWithRaggedLeadingDim) {
  TestGroup group(GetParam(), 4);
  std::mt19937_64 rng(8);
  std::vector<Tensor> inputs;
  for (int r = 0; r < 4; ++r) inputs.push_back(RandomTensor(rng, Shape{r + 1, 3}));
  OnEveryRank(group, [&](int r, Communicator& c) {
    auto out = c.AllGather(inputs[r], "rag");
    ASSERT_EQ(out.size(), 4u);
    for (int i = 0; i < 4; ++i) EXPECT_TRUE(out[i].BitEqual(inputs[i]));
  });
}

TEST_P(CollectivesTest, BroadcastFromRankZero) {
  TestGroup group(GetParam(), 4);
  OnEveryRank(group, [](int r, Communicator& c) {
    Tensor mine = r == 0 ? Vec({5, 5}) : Tensor(Shape{2}, DType::kF64);
    EXPECT_TRUE(c.Broadcast(mine, "b").BitEqual(Vec({5, 5})));
  });
}

TEST_P(CollectivesTest, BroadcastMakesVariablesIdentical) {
  TestGroup group(GetParam(), 4);
  VariableStore store;
  std::vector<std::shared_ptr<VariableResource>> vars;
  for (int r = 0; r < 4; ++r) {
    // Different seeds: replicas start out different.
    vars.push_back(store.GetOrCreate("w", Shape{3, 3}, Initializer::Uniform(1.0, 10 + r),
                                     group.members()[r]));
  }
  EXPECT_NE(VariablesChecksum({vars[0]}), VariablesChecksum({vars[1]}));
  OnEveryRank(group, [&](int r, Communicator& c) {
    vars[r]->Assign(c.Broadcast(vars[r]->Read(), "init/w"));
  });
  for (int r = 1; r < 4; ++r) EXPECT_EQ(VariablesChecksum({vars[0]}), VariablesChecksum({vars[r]}));
}

TEST_P(CollectivesTest, DuplicateLabelInGenerationIsRejected) {
  TestGroup group(GetParam(), 2);
  OnEveryRank(group, [](int, Communicator& c) {
    c.AllSum(Vec({1}), "dup");
    EXPECT_THROW(c.AllSum(Vec({1}), "dup"), ProtocolError);
    c.BeginGeneration(1);
    EXPECT_EQ(c.AllSum(Vec({1}), "dup").at(0), 2.0);
  });
}

TEST_P(CollectivesTest, ShapeDisagreementNamesRanksEverywhere) {
  TestGroup group(GetParam(), 3);
  std::vector<std::string> messages(3);
  OnEveryRank(group, [&](int r, Communicator& c) {
    try {
      c.AllSum(r == 2 ? Vec({1, 2, 3}) : Vec({1, 2}), "bad");
    } catch (const ProtocolError& e) {
      messages[r] = e.what();
    }
  });
  EXPECT_NE(messages[0].find("rank 2"), std::string::npos) << messages[0];
  EXPECT_EQ(messages[0], messages[1]);
  EXPECT_EQ(messages[0], messages[2]);
}

TEST_P(CollectivesTest, KindDisagreementIsRejected) {
  TestGroup group(GetParam(), 2);
  std::vector<int> failed(2, 0);
  OnEveryRank(group, [&](int r, Communicator& c) {
    try {
      if (r == 0) {
        c.AllSum(Vec({1}), "k");
      } else {
        c.AllReduce(Vec({1}), ReduceOp::kMax, "k");
      }
    } catch (const ProtocolError&) {
      failed[r] = 1;
    }
  });
  EXPECT_EQ(failed, (std::vector<int>{1, 1}));
}

TEST_P(CollectivesTest, MapResultsReachTheDriver) {
  TestGroup group(GetParam(), 2);
  OnEveryRank(group, [](int r, Communicator& c) { c.MapSend(Tensor::Scalar(r + 1), "loss"); });
  auto values = CollectMapValues(group.mesh(0), group.members(), 0, "loss");
  ASSERT_EQ(values.size(), 2u);
  EXPECT_EQ(values[0].at(0), 1);
  EXPECT_EQ(values[1].at(0), 2);
}

TEST_P(CollectivesTest, SurvivorsFailWhenARankDies) {
  TcpOptions options;
  options.heartbeat_interval = 100ms;
  options.heartbeat_misses = 3;
  constexpr int kRanks = 4;
  constexpr int kVictim = 2;
  TestGroup group(GetParam(), kRanks, options);
  std::vector<std::unique_ptr<Communicator>> comms;
  for (int r = 0; r < kRanks; ++r) {
    comms.push_back(std::make_unique<Communicator>(group.mesh(r), group.members()));
  }
  // One healthy round first so every connection exists.
  auto warm = RunRanks(kRanks, [&](int r) { comms[r]->AllSum(Vec({1}), "warm"); });
  for (auto& e : warm) ASSERT_EQ(ErrorText(e), "");

  const auto start = Clock::now();
  std::vector<Clock::duration> failed_after(kRanks);
  auto errors = RunRanks(kRanks, [&](int r) {
    if (r == kVictim) {
      std::this_thread::sleep_for(100ms);
      group.Kill(kVictim);
      return;
    }
    try {
      comms[r]->AllSum(Vec({1}), "doomed");
    } catch (...) {
      failed_after[r] = Clock::now() - start;
      throw;
    }
  });
  const auto window = options.heartbeat_interval * options.heartbeat_misses;
  for (int r = 0; r < kRanks; ++r) {
    if (r == kVictim) continue;
    EXPECT_NE(ErrorText(errors[r]), "") << "rank " << r << " did not fail";
    EXPECT_LT(failed_after[r], 100ms + 2 * window) << "rank " << r;
  }
}

TEST_P(CollectivesTest, RuntimeExecutesBoundNodes) {
  TestGroup group(GetParam(), 3);
  Graph g;
  std::vector<NodeRef> inputs;
  for (int r = 0; r < 3; ++r) {
    inputs.push_back(g.Append(OpKind::kConstant, {}, {}, {{"value", Vec({1.0 + r, 2.0})}},
                              group.members()[r], r));
  }
  std::vector<NodeRef> sums;
  for (int r = 0; r < 3; ++r) {
    sums.push_back(g.Append(OpKind::kCollective, inputs, {},
                            {{"collective_kind", std::string("sum")},
                             {"label", std::string("s")},
                             {"rank", int64_t{r}},
                             {"group_size", int64_t{3}}},
                            group.members()[r], r));
  }
  g.Finalize();
  const Tensor monolithic = EvaluateOne(g, sums[0]);
  OnEveryRank(group, [&](int r, Communicator& c) {
    CommunicatorRuntime runtime(c);
    EvalOptions options{.replica = r, .collectives = &runtime};
    EXPECT_TRUE(EvaluateOne(g, sums[r], {}, options).BitEqual(monolithic));
  });
  EXPECT_TRUE(monolithic.BitEqual(Vec({6, 6})));
}

INSTANTIATE_TEST_SUITE_P(Both, CollectivesTest,
                         ::testing::Values(TransportKind::kInProcess, TransportKind::kTcp),
                         [](const auto& info) { return testing::TransportName(info.param); });

}  // namespace
}  // namespace replicator
