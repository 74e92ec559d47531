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

#include "replicator/replica.h"

#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "replicator/autodiff.h"
#include "replicator/kernels.h"
#include "replicator/ops.h"
#include "test_util.h"

namespace replicator {
namespace {

using testing::BitEqualDoubles;
using testing::RandomTensor;

DeviceTag Dev(int d) { return DeviceTag{"worker", 0, d}; }

ReplicaContext Ctx(int id, int n, std::vector<DeviceTag> devices = {}) {
  ReplicaContext ctx;
  ctx.replica_id = id;
  ctx.num_replicas = n;
  ctx.logical_devices = devices.empty() ? std::vector<DeviceTag>{Dev(id)} : std::move(devices);
  return ctx;
}

SpecNest VecSpec(int64_t n) { return SpecNest(TensorSpec{Shape{n}, DType::kF64}); }

Tensor Vec(std::vector<double> v) {
  const auto n = static_cast<int64_t>(v.size());
  return Tensor::FromVector(std::move(v), Shape{n});
}

std::vector<ReplicaGraph> BuildAll(const StepFn& fn, const SpecNest& spec, int n,
                                   VariableStore& store) {
  std::vector<ReplicaGraph> out;
  for (int r = 0; r < n; ++r) out.push_back(BuildReplica(fn, spec, Ctx(r, n), store));
  return out;
}

TEST(ReplicaTest, IdentityStepReturnsShard) {
  VariableStore store;
  StepFn fn = [](ReplicaBuilder&, const NodeNest& in) { return in; };
  auto program = Stitch(BuildAll(fn, VecSpec(2), 2, store));
  auto out = RunMonolithic(program, {TensorNest(Vec({1, 2})), TensorNest(Vec({3, 4}))});
  EXPECT_EQ(out[0].leaf().ToDoubles(), (std::vector<double>{1, 2}));
  EXPECT_EQ(out[1].leaf().ToDoubles(), (std::vector<double>{3, 4}));
}

TEST(ReplicaTest, TwoLogicalDevicesPlaceNodesApart) {
  VariableStore store;
  NodeRef add, mul;
  StepFn fn = [&](ReplicaBuilder& b, const NodeNest& in) {
    Graph& g = b.graph();
    NodeRef x;
    {
      auto scope = b.OnDevice(0);
      x = add = ops::Add(g, in.leaf(), ops::Constant(g, Vec({1, 1})));
    }
    auto scope = b.OnDevice(1);
    mul = ops::Mul(g, in.leaf(), x);
    return NodeNest(mul);
  };
  auto rg = BuildReplica(fn, VecSpec(2), Ctx(0, 1, {Dev(0), Dev(1)}), store);
  EXPECT_EQ(rg.graph.node(add).device, Dev(0));
  EXPECT_EQ(rg.graph.node(mul).device, Dev(1));
  EXPECT_NE(rg.graph.node(add).device, rg.graph.node(mul).device);
}

TEST(ReplicaTest, UnmappedLogicalDeviceFails) {
  VariableStore store;
  StepFn fn = [](ReplicaBuilder& b, const NodeNest& in) {
    auto scope = b.OnDevice(2);
    return in;
  };
  try {
    BuildReplica(fn, VecSpec(2), Ctx(0, 1, {Dev(0), Dev(1)}), store);
    FAIL() << "expected ConstructionError";
  } catch (const ConstructionError& e) {
    EXPECT_NE(std::string(e.what()).find("logical device 2"), std::string::npos) << e.what();
  }
}

TEST(ReplicaTest, ForeignOutputNodeIsRejected) {
  VariableStore store;
  Graph other;
  NodeRef foreign = ops::Scalar(other, 1.0);
  StepFn fn = [&](ReplicaBuilder&, const NodeNest&) { return NodeNest(foreign); };
  EXPECT_THROW(BuildReplica(fn, VecSpec(2), Ctx(0, 1), store), ConstructionError);
}

TEST(ReplicaTest, ReplicaIdOutOfRangeFails) {
  VariableStore store;
  StepFn fn = [](ReplicaBuilder&, const NodeNest& in) { return in; };
  EXPECT_THROW(BuildReplica(fn, VecSpec(2), Ctx(2, 2), store), ConstructionError);
}

// Critic and actor each get their own loss and update; both losses come back.
TEST(ReplicaTest, TwoOptimizerStepReturnsBothLosses) {
  VariableStore store;
  auto critic = store.GetOrCreate("critic", Shape{2}, Initializer::Constant(1.0), Dev(0));
  auto actor = store.GetOrCreate("actor", Shape{2}, Initializer::Constant(2.0), Dev(0));
  StepFn fn = [&](ReplicaBuilder& b, const NodeNest& in) {
    Graph& g = b.graph();
    NodeRef x = in.leaf();
    NodeRef critic_loss = ops::ReduceSum(g, ops::Square(g, ops::Sub(g, ops::Read(g, critic), x)));
    NodeRef actor_loss = ops::ReduceSum(g, ops::Mul(g, ops::Read(g, actor), x));
    NodeRef lr = b.StepValue("lr");
    (void)lr;
    for (auto [loss, var] : {std::pair{critic_loss, critic}, std::pair{actor_loss, actor}}) {
      auto grads = Backprop(g, loss, {var});
      NodeRef step = ops::Mul(g, grads[0], ops::Constant(g, Tensor::Filled(Shape{2}, 0.1)));
      b.AddUpdate(ops::Assign(g, var, ops::Sub(g, ops::Read(g, var), step)));
    }
    return NodeNest(NodeNest::List{critic_loss, actor_loss});
  };
  auto program = Stitch(BuildAll(fn, VecSpec(2), 1, store));
  ASSERT_EQ(program.updates[0].size(), 2u);
  auto out = RunMonolithic(program, {TensorNest(Vec({0, 0}))}, {{"lr", 0.1}});
  ASSERT_EQ(out[0].list().size(), 2u);
  EXPECT_DOUBLE_EQ(out[0][0].leaf().ToDoubles()[0], 2.0);
  EXPECT_DOUBLE_EQ(out[0][1].leaf().ToDoubles()[0], 0.0);
  // d/dc sum((c-x)^2) = 2c = 2, so c = 1 - 0.2.
  EXPECT_DOUBLE_EQ(critic->Snapshot()->ToDoubles()[0], 0.8);
  EXPECT_DOUBLE_EQ(actor->Snapshot()->ToDoubles()[0], 2.0);
}

TEST(ReplicaTest, CollectiveMidGraphBeforePeersExist) {
  VariableStore store;
  StepFn fn = [](ReplicaBuilder& b, const NodeNest& in) {
    NodeRef s = b.AllSum(in.leaf(), "g0");
    return NodeNest(ops::Mul(b.graph(), s, s));
  };
  auto rg = BuildReplica(fn, VecSpec(2), Ctx(0, 4), store);
  ASSERT_EQ(rg.context.pending.size(), 1u);
  EXPECT_EQ(rg.context.pending[0].label, "g0");
}

TEST(ReplicaTest, PlaceholderShapeMatchesInput) {
  VariableStore store;
  for (const char* kind : {collective_kinds::kSum, collective_kinds::kMean}) {
    StepFn fn = [&](ReplicaBuilder& b, const NodeNest& in) {
      return NodeNest(b.RecordCollective(kind, in.leaf(), "x"));
    };
    auto spec = SpecNest(TensorSpec{Shape{3, 5}, DType::kF64});
    auto rg = BuildReplica(fn, spec, Ctx(0, 2), store);
    EXPECT_EQ(rg.graph.node(rg.outputs.leaf()).shape, (Shape{3, 5})) << kind;
  }
}

TEST(ReplicaTest, UnstitchedPlaceholderFailsToEvaluate) {
  VariableStore store;
  StepFn fn = [](ReplicaBuilder& b, const NodeNest& in) {
    return NodeNest(b.AllSum(in.leaf(), "g0"));
  };
  auto rg = BuildReplica(fn, VecSpec(2), Ctx(0, 2), store);
  try {
    EvaluateOne(rg.graph, rg.outputs.leaf(), {{rg.inputs.leaf(), Vec({1, 2})}});
    FAIL() << "expected EvaluationError";
  } catch (const EvaluationError& e) {
    EXPECT_NE(std::string(e.what()).find("stitch"), std::string::npos) << e.what();
  }
}

TEST(ReplicaTest, DuplicateLabelInReplicaFails) {
  VariableStore store;
  StepFn fn = [](ReplicaBuilder& b, const NodeNest& in) {
    b.AllSum(in.leaf(), "g0");
    return NodeNest(b.AllSum(in.leaf(), "g0"));
  };
  EXPECT_THROW(BuildReplica(fn, VecSpec(2), Ctx(0, 2), store), ConstructionError);
}

TEST(ReplicaTest, CollectivesDisallowedExplainWhy) {
  VariableStore store;
  StepFn fn = [](ReplicaBuilder& b, const NodeNest& in) {
    return NodeNest(b.AllSum(in.leaf(), "g0"));
  };
  ReplicaContext ctx = Ctx(0, 2);
  ctx.collectives_allowed = false;
  try {
    BuildReplica(fn, VecSpec(2), ctx, store);
    FAIL() << "expected ConstructionError";
  } catch (const ConstructionError& e) {
    EXPECT_NE(std::string(e.what()).find("gradients"), std::string::npos) << e.what();
  }
}

TEST(StitchTest, AllSumMatchesDirectSum) {
  VariableStore store;
  StepFn fn = [](ReplicaBuilder& b, const NodeNest& in) {
    return NodeNest(b.AllSum(in.leaf(), "g0"));
  };
  auto program = Stitch(BuildAll(fn, VecSpec(2), 2, store));
  EXPECT_EQ(program.bindings.size(), 1u);
  Tensor a = Vec({1, 2}), b = Vec({3, 4});
  Tensor direct = a;
  kernels::AccumulateInto(kernels::ReduceOp::kSum, direct, b);
  auto out = RunMonolithic(program, {TensorNest(a), TensorNest(b)});
  for (int r = 0; r < 2; ++r) {
    EXPECT_EQ(out[r].leaf().ToDoubles(), direct.ToDoubles());
  }
  for (int i = 0; i < program.graph.num_nodes(); ++i) {
    EXPECT_NE(program.graph.node(i).kind, OpKind::kCollectivePlaceholder);
  }
}

TEST(StitchTest, LabelMismatchAtPositionZero) {
  VariableStore store;
  std::vector<ReplicaGraph> replicas;
  for (int r = 0; r < 2; ++r) {
    const std::string label = r == 0 ? "a" : "b";
    StepFn fn = [&](ReplicaBuilder& b, const NodeNest& in) {
      return NodeNest(b.AllSum(in.leaf(), label));
    };
    replicas.push_back(BuildReplica(fn, VecSpec(2), Ctx(r, 2), store));
  }
  try {
    Stitch(std::move(replicas));
    FAIL() << "expected StitchError";
  } catch (const StitchError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("position 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'a'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'b'"), std::string::npos) << msg;
  }
}

TEST(StitchTest, MissingCollectiveReportsPosition) {
  VariableStore store;
  std::vector<ReplicaGraph> replicas;
  for (int r = 0; r < 2; ++r) {
    StepFn fn = [&](ReplicaBuilder& b, const NodeNest& in) {
      NodeRef x = b.AllSum(in.leaf(), "a");
      if (r == 0) x = b.AllMax(x, "b");
      return NodeNest(x);
    };
    replicas.push_back(BuildReplica(fn, VecSpec(2), Ctx(r, 2), store));
  }
  try {
    Stitch(std::move(replicas));
    FAIL() << "expected StitchError";
  } catch (const StitchError& e) {
    EXPECT_NE(std::string(e.what()).find("position 1"), std::string::npos) << e.what();
  }
}

TEST(StitchTest, DisagreeingReplicaCountFails) {
  VariableStore store;
  StepFn fn = [](ReplicaBuilder&, const NodeNest& in) { return in; };
  std::vector<ReplicaGraph> replicas;
  replicas.push_back(BuildReplica(fn, VecSpec(2), Ctx(0, 2), store));
  replicas.push_back(BuildReplica(fn, VecSpec(2), Ctx(1, 3), store));
  EXPECT_THROW(Stitch(std::move(replicas)), StitchError);
}

TEST(StitchTest, ZeroCollectivesIsDisjointUnion) {
  VariableStore store;
  StepFn fn = [](ReplicaBuilder& b, const NodeNest& in) {
    return NodeNest(ops::Square(b.graph(), in.leaf()));
  };
  auto replicas = BuildAll(fn, VecSpec(2), 3, store);
  int total = 0;
  for (const auto& r : replicas) total += r.graph.num_nodes();
  auto program = Stitch(std::move(replicas));
  EXPECT_EQ(program.graph.num_nodes(), total);
  EXPECT_TRUE(program.bindings.empty());
  for (int i = 0; i < program.graph.num_nodes(); ++i) {
    const Node& n = program.graph.node(i);
    for (NodeRef in : n.inputs) EXPECT_EQ(program.graph.node(in).replica, n.replica);
  }
  auto out = RunMonolithic(program, {TensorNest(Vec({1, 2})), TensorNest(Vec({3, 4})),
                                     TensorNest(Vec({5, 6}))});
  EXPECT_EQ(out[2].leaf().ToDoubles(), (std::vector<double>{25, 36}));
}

// Random step functions over sum/mean/gather/broadcast compared against a
// graph that wires the cross-replica arithmetic by hand.
TEST(StitchTest, SoundAgainstHandWiredGraph) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 3;
    VariableStore store;
    StepFn fn = [](ReplicaBuilder& b, const NodeNest& in) {
      Graph& g = b.graph();
      NodeRef x = in.leaf();
      NodeRef s = b.AllSum(ops::Tanh(g, x), "s");
      NodeRef m = b.AllMean(ops::Mul(g, x, s), "m");
      NodeRef c = b.Broadcast(ops::Add(g, m, x), "c");
      NodeRef all = b.AllGather(ops::Sub(g, c, s), "all");
      return NodeNest(NodeNest::List{ops::ReduceSum(g, all), m});
    };
    auto program = Stitch(BuildAll(fn, VecSpec(3), n, store));
    std::vector<TensorNest> inputs;
    std::vector<Tensor> raw;
    for (int r = 0; r < n; ++r) {
      raw.push_back(RandomTensor(rng, Shape{3}));
      inputs.emplace_back(raw.back());
    }
    auto got = RunMonolithic(program, inputs);

    Graph g;
    std::vector<NodeRef> x;
    for (const Tensor& t : raw) x.push_back(ops::Constant(g, t));
    auto fold = [&](const std::vector<NodeRef>& v) {
      NodeRef acc = v[0];
      for (size_t i = 1; i < v.size(); ++i) acc = ops::Add(g, acc, v[i]);
      return acc;
    };
    std::vector<NodeRef> tanh, prod, sum_m, diff;
    for (NodeRef xi : x) tanh.push_back(ops::Tanh(g, xi));
    NodeRef s = fold(tanh);
    for (NodeRef xi : x) prod.push_back(ops::Mul(g, xi, s));
    NodeRef m = ops::Div(g, fold(prod), ops::Constant(g, Tensor::Filled(Shape{3}, n)));
    NodeRef c = ops::Add(g, m, x[0]);
    NodeRef d = ops::Sub(g, c, s);
    for (int r = 0; r < n; ++r) diff.push_back(d);
    NodeRef want = ops::ReduceSum(g, ops::Concat(g, diff, 0));
    g.Finalize();
    auto expect = Evaluate(g, std::vector<NodeRef>{want, m});
    for (int r = 0; r < n; ++r) {
      EXPECT_TRUE(BitEqualDoubles(got[r][0].leaf(), expect[0].ToDoubles()))
          << "trial " << trial << " replica " << r;
      EXPECT_TRUE(BitEqualDoubles(got[r][1].leaf(), expect[1].ToDoubles()))
          << "trial " << trial << " replica " << r;
    }
  }
}

TEST(StitchTest, ModelParallelIsNeutral) {
  std::mt19937_64 rng(11);
  VariableStore store;
  auto w = store.GetOrCreate("w", Shape{4, 4}, Initializer::Uniform(0.5, 3), Dev(0));
  StepFn fn = [&](ReplicaBuilder& b, const NodeNest& in) {
    Graph& g = b.graph();
    NodeRef h;
    {
      auto scope = b.OnDevice(0);
      h = ops::Relu(g, ops::MatMul(g, in.leaf(), ops::Read(g, w)));
    }
    auto scope = b.OnDevice(b.context().logical_devices.size() - 1);
    return NodeNest(ops::ReduceSum(g, ops::Tanh(g, ops::MatMul(g, h, ops::Read(g, w)))));
  };
  auto spec = SpecNest(TensorSpec{Shape{2, 4}, DType::kF64});
  auto split = BuildReplica(fn, spec, Ctx(0, 1, {Dev(0), Dev(1)}), store);
  auto single = BuildReplica(fn, spec, Ctx(0, 1, {Dev(0)}), store);
  EXPECT_NE(GraphDebugString(split.graph), GraphDebugString(single.graph));
  auto a = Stitch([&] {
    std::vector<ReplicaGraph> v;
    v.push_back(std::move(split));
    return v;
  }());
  auto b = Stitch([&] {
    std::vector<ReplicaGraph> v;
    v.push_back(std::move(single));
    return v;
  }());
  for (int i = 0; i < 10; ++i) {
    TensorNest x(RandomTensor(rng, Shape{2, 4}));
    EXPECT_TRUE(BitEqualDoubles(RunMonolithic(a, {x})[0].leaf(),
                                RunMonolithic(b, {x})[0].leaf().ToDoubles()));
  }
}

TEST(StitchTest, BuildOrderDoesNotMatter) {
  StepFn fn = [](ReplicaBuilder& b, const NodeNest& in) {
    Graph& g = b.graph();
    NodeRef s = b.AllSum(ops::Square(g, in.at("x").leaf()), "s");
    NodeRef t = b.AllMean(ops::Add(g, s, in.at("y").leaf()), "t");
    return NodeNest(NodeNest::Dict{{"s", s}, {"t", t}});
  };
  SpecNest spec(SpecNest::Dict{{"x", VecSpec(2)}, {"y", VecSpec(2)}});
  std::mt19937_64 rng(5);
  std::string reference;
  for (int trial = 0; trial < 5; ++trial) {
    VariableStore store;
    std::vector<int> order(4);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<ReplicaGraph> replicas;
    for (int r : order) replicas.push_back(BuildReplica(fn, spec, Ctx(r, 4), store));
    const std::string text = GraphDebugString(Stitch(std::move(replicas)).graph);
    if (trial == 0) reference = text;
    EXPECT_EQ(text, reference) << "order " << order[0] << order[1] << order[2] << order[3];
  }
}

TEST(SplitTest, LeadingDimensionIntoFour) {
  Tensor batch = Tensor::FromVector(std::vector<double>(24), Shape{8, 3});
  std::vector<double> v(24);
  std::iota(v.begin(), v.end(), 0.0);
  batch = Tensor::FromVector(v, Shape{8, 3});
  auto shards = SplitInputs(TensorNest(batch), 4);
  ASSERT_EQ(shards.size(), 4u);
  for (int r = 0; r < 4; ++r) {
    EXPECT_EQ(shards[r].leaf().shape(), (Shape{2, 3}));
    EXPECT_EQ(shards[r].leaf().ToDoubles()[0], 6.0 * r);
  }
}

TEST(SplitTest, IndivisibleLeadingDimensionStatesSizes) {
  Tensor batch = Tensor::Filled(Shape{6, 2}, 1.0);
  try {
    SplitInputs(TensorNest(batch), 4);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("6"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4"), std::string::npos) << msg;
  }
}

TEST(SplitTest, WrongShardCountFromSplitter) {
  SplitFn bad = [](const TensorNest& batch, int) { return std::vector<TensorNest>{batch}; };
  EXPECT_THROW(SplitInputs(TensorNest(Tensor::Filled(Shape{4}, 1.0)), 2, bad), ConfigError);
}

TEST(SplitTest, TimeMajorAxisOneReconstructs) {
  std::mt19937_64 rng(3);
  Tensor seq = RandomTensor(rng, Shape{10, 8, 5});
  auto shards = SplitInputs(TensorNest(seq), 4, SplitAlongAxis(1));
  ASSERT_EQ(shards.size(), 4u);
  std::vector<Tensor> parts;
  for (const auto& s : shards) {
    EXPECT_EQ(s.leaf().shape(), (Shape{10, 2, 5}));
    parts.push_back(s.leaf());
  }
  EXPECT_TRUE(BitEqualDoubles(kernels::Concat(parts, 1), seq.ToDoubles()));
}

TEST(SplitTest, ConcatInvertsSplitForEveryDivisor) {
  std::mt19937_64 rng(9);
  Tensor x = RandomTensor(rng, Shape{12, 2});
  Tensor y = RandomTensor(rng, Shape{12});
  TensorNest batch(TensorNest::List{x, TensorNest(TensorNest::Dict{{"y", y}})});
  for (int r : {1, 2, 3, 4, 6, 12}) {
    auto shards = SplitInputs(batch, r);
    std::vector<Tensor> xs, ys;
    for (const auto& s : shards) {
      auto leaves = s.Flatten();
      xs.push_back(leaves[0]);
      ys.push_back(leaves[1]);
    }
    EXPECT_TRUE(BitEqualDoubles(kernels::Concat(xs, 0), x.ToDoubles())) << r;
    EXPECT_TRUE(BitEqualDoubles(kernels::Concat(ys, 0), y.ToDoubles())) << r;
  }
}

TEST(InputSourceTest, ListSourceEnds) {
  ListSource source({TensorNest(Vec({1})), TensorNest(Vec({2}))});
  EXPECT_EQ(source.element_spec().leaf().shape, (Shape{1}));
  EXPECT_TRUE(source.Next().has_value());
  EXPECT_TRUE(source.Next().has_value());
  EXPECT_FALSE(source.Next().has_value());
}

}  // namespace
}  // namespace replicator
