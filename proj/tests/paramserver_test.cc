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

#include "replicator/paramserver.h"

#include <atomic>
#include <cmath>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "oracles.h"
#include "replicator/demos.h"
#include "replicator/ops.h"
#include "replicator/replicator.h"
#include "test_util.h"

namespace replicator {
namespace {

using testing::RandomTensor;

const DeviceTag kPs{"ps", 0, 0};

DeviceTag Worker(int w) { return DeviceTag{"worker", w, 0}; }

struct Cluster {
  explicit Cluster(int workers, ParamServerOptions options = {})
      : transport(LocalClusterSpec(workers, 1)), server(transport.Connect(kPs), options) {
    server.Start();
  }
  ~Cluster() { server.Stop(); }

  ParamClient Client(int w) {
    return ParamClient(transport.Connect(Worker(w)), ShardMap(transport.spec()));
  }

  InProcessTransport transport;
  ParamServer server;
};

TEST(ShardMapTest, HashIsStableAndSpreadsNames) {
  EXPECT_EQ(ShardMap::StableHash(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(ShardMap::StableHash("a"), 0xaf63dc4c8601ec8cULL);
  ShardMap map(std::vector<DeviceTag>{{"ps", 0, 0}, {"ps", 1, 0}, {"ps", 2, 0}});
  std::set<int> used;
  for (int i = 0; i < 30; ++i) used.insert(map.ServerFor("v" + std::to_string(i)).task);
  EXPECT_EQ(used.size(), 3u);
  EXPECT_EQ(map.ServerFor("w"), map.ServerFor("w"));
}

TEST(ParamShardTest, RejectsUnknownNamesAndWrongShapes) {
  ParamShard shard;
  EXPECT_TRUE(shard.Register("w", Tensor::Filled(Shape{2}, 0.0)));
  EXPECT_FALSE(shard.Register("w", Tensor::Filled(Shape{2}, 5.0)));
  EXPECT_EQ(shard.Pull("w").ToDoubles(), (std::vector<double>{0, 0}));
  EXPECT_THROW(shard.Register("w", Tensor::Filled(Shape{3}, 0.0)), ProtocolError);
  EXPECT_THROW(shard.Pull("nope"), ProtocolError);
  EXPECT_THROW(shard.Push("w", Tensor::Filled(Shape{3}, 0.0)), ProtocolError);
}

TEST(ParamServerTest, PullAfterInitReturnsInitialValue) {
  Cluster c(1);
  auto client = c.Client(0);
  std::mt19937_64 rng(1);
  Tensor w0 = RandomTensor(rng, Shape{3, 2});
  client.Init("w", w0);
  EXPECT_TRUE(testing::BitEqualDoubles(client.Pull("w"), w0.ToDoubles()));
}

TEST(ParamServerTest, PushOfScaledGradient) {
  Cluster c(1);
  auto client = c.Client(0);
  Tensor w0 = Tensor::FromVector(std::vector<double>{1.0, -2.0}, Shape{2});
  client.Init("w", w0);
  const double lr = 0.1;
  const std::vector<double> g = {0.5, 3.0};
  ASSERT_TRUE(client.Push("w", Tensor::FromVector(std::vector<double>{-(lr * g[0]), -(lr * g[1])}, Shape{2})));
  EXPECT_TRUE(testing::BitEqualDoubles(
      client.Pull("w"), {1.0 + -(lr * g[0]), -2.0 + -(lr * g[1])}));
}

TEST(ParamServerTest, ZeroPushIsNoOp) {
  Cluster c(1);
  auto client = c.Client(0);
  Tensor w0 = Tensor::FromVector(std::vector<double>{0.25, 7.5, -1.0}, Shape{3});
  client.Init("w", w0);
  client.Push("w", Tensor::Filled(Shape{3}, 0.0));
  EXPECT_TRUE(testing::BitEqualDoubles(client.Pull("w"), w0.ToDoubles()));
}

TEST(ParamServerTest, TwoPushersAddTwo) {
  Cluster c(2);
  auto a = c.Client(0);
  auto b = c.Client(1);
  a.Init("w", Tensor::Filled(Shape{1}, 0.0));
  std::thread t([&] { b.Push("w", Tensor::Filled(Shape{1}, 1.0)); });
  a.Push("w", Tensor::Filled(Shape{1}, 1.0));
  t.join();
  EXPECT_EQ(a.Pull("w").ToDoubles()[0], 2.0);
}

TEST(ParamServerTest, ErrorsReachTheClient) {
  Cluster c(1);
  auto client = c.Client(0);
  client.Init("w", Tensor::Filled(Shape{2}, 0.0));
  EXPECT_THROW(client.Push("w", Tensor::Filled(Shape{5}, 0.0)), ProtocolError);
  EXPECT_THROW(client.Pull("missing"), ProtocolError);
  // The server keeps serving after a bad request.
  EXPECT_EQ(client.Pull("w").num_elements(), 2);
}

TEST(ParamServerTest, InitFirstWriterWins) {
  Cluster c(2);
  auto a = c.Client(0);
  auto b = c.Client(1);
  a.Init("w", Tensor::Filled(Shape{1}, 1.0));
  b.Init("w", Tensor::Filled(Shape{1}, 9.0));
  EXPECT_EQ(b.Pull("w").ToDoubles()[0], 1.0);
}

TEST(ParamServerTest, ReadinessFlag) {
  Cluster c(2);
  auto a = c.Client(0);
  ParamClientOptions quick;
  quick.ready_timeout = std::chrono::milliseconds(50);
  ParamClient waiting(c.transport.Connect(Worker(1)), ShardMap(c.transport.spec()), quick);
  EXPECT_THROW(waiting.WaitReady(), TimeoutError);
  a.MarkReady();
  EXPECT_NO_THROW(waiting.WaitReady());
}

TEST(ParamServerTest, StalenessGateRejectsOldBases) {
  ParamServerOptions options;
  options.max_staleness = 0;
  Cluster c(2, options);
  auto a = c.Client(0);
  auto b = c.Client(1);
  a.Init("w", Tensor::Filled(Shape{1}, 0.0));
  a.Pull("w");
  b.Pull("w");
  EXPECT_TRUE(a.Push("w", Tensor::Filled(Shape{1}, 1.0)));
  EXPECT_FALSE(b.Push("w", Tensor::Filled(Shape{1}, 1.0)));
  EXPECT_EQ(a.Pull("w").ToDoubles()[0], 1.0);
  EXPECT_EQ(c.server.pushes_rejected(), 1u);
}

TEST(ParamServerTest, ConcurrentPushesConserveTheSum) {
  const int workers = 4, pushes = 100;
  Cluster c(workers);
  std::mt19937_64 init_rng(2);
  Tensor w0 = RandomTensor(init_rng, Shape{8});
  c.Client(0).Init("w", w0);
  std::vector<std::vector<Tensor>> logged(workers);
  std::vector<std::thread> threads;
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      auto client = c.Client(w);
      std::mt19937_64 rng(100 + w);
      for (int i = 0; i < pushes; ++i) {
        Tensor delta = RandomTensor(rng, Shape{8});
        if (client.Push("w", delta)) logged[w].push_back(delta);
      }
    });
  }
  for (auto& t : threads) t.join();
  std::vector<double> expect = w0.ToDoubles();
  size_t acked = 0;
  for (const auto& deltas : logged) {
    for (const auto& d : deltas) {
      const auto v = d.ToDoubles();
      for (size_t i = 0; i < expect.size(); ++i) expect[i] += v[i];
      ++acked;
    }
  }
  EXPECT_EQ(acked, static_cast<size_t>(workers * pushes));
  const auto got = c.Client(0).Pull("w").ToDoubles();
  for (size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-9);
}

// Writer k only ever adds 1 to row k. A consistent snapshot has every row
// constant and no row ever goes backwards between two reads.
int CountTornReads(const std::vector<double>& snapshot, int64_t cols,
                   std::vector<double>& last_seen) {
  int torn = 0;
  for (size_t row = 0; row < last_seen.size(); ++row) {
    const double first = snapshot[row * cols];
    for (int64_t c = 1; c < cols; ++c) torn += snapshot[row * cols + c] != first;
    torn += first < last_seen[row];
    last_seen[row] = first;
  }
  return torn;
}

TEST(ParamShardTest, NoTornTensorsUnderStress) {
  const int writers = 4;
  const int64_t cols = 64;
  const int ops_per_thread = 20000;  // 5 threads: 1e5 operations
  ParamShard shard;
  shard.Register("w", Tensor::Filled(Shape{writers, cols}, 0.0));
  std::atomic<int> torn{0};
  std::atomic<bool> done{false};
  std::vector<std::thread> threads;
  for (int k = 0; k < writers; ++k) {
    threads.emplace_back([&, k] {
      std::vector<double> d(writers * cols, 0.0);
      for (int64_t c = 0; c < cols; ++c) d[k * cols + c] = 1.0;
      const Tensor delta = Tensor::FromVector(d, Shape{writers, cols});
      for (int i = 0; i < ops_per_thread; ++i) shard.Push("w", delta);
    });
  }
  std::thread reader([&] {
    std::vector<double> last(writers, 0.0);
    for (int i = 0; i < ops_per_thread; ++i) {
      torn += CountTornReads(shard.Pull("w").ToDoubles(), cols, last);
    }
  });
  for (auto& t : threads) t.join();
  reader.join();
  EXPECT_EQ(torn.load(), 0);
  std::vector<double> last(writers, 0.0);
  const auto final_value = shard.Pull("w").ToDoubles();
  EXPECT_EQ(CountTornReads(final_value, cols, last), 0);
  for (int k = 0; k < writers; ++k) EXPECT_EQ(final_value[k * cols], ops_per_thread);
}

TEST(ParamServerTest, NoTornTensorsThroughTheServer) {
  const int writers = 4;
  const int64_t cols = 16;
  Cluster c(writers + 1);
  c.Client(0).Init("w", Tensor::Filled(Shape{writers, cols}, 0.0));
  std::atomic<int> torn{0};
  std::vector<std::thread> threads;
  for (int k = 0; k < writers; ++k) {
    threads.emplace_back([&, k] {
      auto client = c.Client(k);
      std::vector<double> d(writers * cols, 0.0);
      for (int64_t col = 0; col < cols; ++col) d[k * cols + col] = 1.0;
      for (int i = 0; i < 300; ++i) client.Push("w", Tensor::FromVector(d, Shape{writers, cols}));
    });
  }
  threads.emplace_back([&] {
    auto client = c.Client(writers);
    std::vector<double> last(writers, 0.0);
    for (int i = 0; i < 300; ++i) torn += CountTornReads(client.Pull("w").ToDoubles(), cols, last);
  });
  for (auto& t : threads) t.join();
  EXPECT_EQ(torn.load(), 0);
}

Deployment Async(int workers) {
  Deployment d;
  d.kind = ReplicatorKind::kMultiWorkerAsync;
  d.topology = Topology{workers, 1, 1};
  return d;
}

TEST(AsyncTest, CollectivesAreRejected) {
  Replicator repl(Async(2));
  auto w = repl.CreateVariable("w", Shape{1}, Initializer::Zeros());
  ReplicaSpec spec{[](int) { return demos::RepeatTensor(Tensor::Filled(Shape{1}, 0.0), 1); },
                   [](ReplicaBuilder& b, const NodeNest& in) {
                     return NodeNest(b.AllSum(in.leaf(), "s"));
                   }};
  EXPECT_THROW(repl.RunWorkers(spec), ConstructionError);
}

TEST(AsyncTest, SingleWorkerIsBitIdenticalToSequentialSgd) {
  demos::Dataset data = demos::MakeLeastSquares(3, 128, 5, 0.1);
  const int steps = 60;
  auto input = [&](int) { return demos::RandomBatches(data, 8, steps, 42); };

  Replicator async(Async(1));
  auto wa = async.CreateVariable("w", Shape{5, 1}, Initializer::Uniform(0.5, 7));
  auto workers = async.RunWorkers(ReplicaSpec{input, demos::LeastSquaresStep(wa, Optimizer::Sgd(0.05))});
  ASSERT_EQ(workers.size(), 1u);
  std::vector<double> async_losses;
  while (auto s = workers[0]->Step()) {
    EXPECT_EQ(s->global_step, s->local_step);
    async_losses.push_back(s->outputs.at("loss").leaf().ToDoubles()[0]);
  }
  ParamClient& client = workers[0]->client();
  const Tensor async_w = client.Pull("w");
  EXPECT_EQ(client.Pull(kGlobalStepName).ToDoubles()[0], steps);

  Replicator sync(Deployment{});
  auto ws = sync.CreateVariable("w", Shape{5, 1}, Initializer::Uniform(0.5, 7));
  auto handle = sync.Run(ReplicaSpec{input, demos::LeastSquaresStep(ws, Optimizer::Sgd(0.05))});
  std::vector<double> sync_losses;
  while (auto s = handle->Step()) sync_losses.push_back(s->outputs[0].at("loss").leaf().ToDoubles()[0]);

  EXPECT_TRUE(testing::BitEqualDoubles(async_w, ws->For(0)->Read().ToDoubles()));
  EXPECT_EQ(async_losses, sync_losses);
}

struct AsyncRun {
  std::vector<double> w;
  int64_t pushes = 0;
  std::map<int, std::vector<int64_t>> global_steps_after_kill;  // per survivor
  bool killed_worker_failed = false;
  double seconds = 0;
};

// Runs `workers` threads to exhaustion; optionally kills worker 1 at its
// local step `kill_at`.
AsyncRun TrainAsync(const demos::Dataset& data, int workers, int steps_per_worker,
                    std::optional<int> kill_at) {
  Replicator repl(Async(workers));
  auto w = repl.CreateVariable("w", Shape{data.features.shape().dim(1), 1}, Initializer::Zeros());
  auto handles = repl.RunWorkers(ReplicaSpec{
      [&](int k) { return demos::RandomBatches(data, 16, steps_per_worker, 1000 + k); },
      demos::LeastSquaresStep(w, Optimizer::Sgd(0.02))});
  auto* transport = dynamic_cast<InProcessTransport*>(&repl.transport());
  AsyncRun run;
  std::atomic<int64_t> pushes{0};
  std::atomic<bool> killed{false};
  std::mutex mu;
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::thread> threads;
  for (int k = 0; k < workers; ++k) {
    threads.emplace_back([&, k] {
      try {
        while (true) {
          if (kill_at && k == 1 && handles[k]->local_step() == *kill_at) {
            transport->KillTask(Worker(1));
            killed = true;
          }
          auto s = handles[k]->Step();
          if (!s) break;
          pushes += 1;
          if (killed && k != 1) {
            std::lock_guard<std::mutex> lock(mu);
            run.global_steps_after_kill[k].push_back(s->global_step);
          }
        }
      } catch (const TransportError&) {
        if (k == 1) run.killed_worker_failed = true;
      }
    });
  }
  for (auto& t : threads) t.join();
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ParamClient reader(repl.transport().Connect(Worker(0)), ShardMap(repl.transport().spec()));
  run.w = reader.Pull("w").ToDoubles();
  run.pushes = pushes.load();
  return run;
}

double MaxDiff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

TEST(AsyncTest, FourWorkersReachTheClosedForm) {
  demos::Dataset data = demos::MakeLeastSquares(9, 256, 4, 0.05);
  const auto optimum = oracles::LeastSquaresCholesky(data.features.ToDoubles(),
                                                     data.labels.ToDoubles(), 4);
  AsyncRun run = TrainAsync(data, 4, 1000, std::nullopt);
  EXPECT_LE(run.pushes, 5000);
  EXPECT_LT(MaxDiff(run.w, optimum), 1e-2);
}

TEST(AsyncTest, SurvivorsConvergeAfterAWorkerDies) {
  demos::Dataset data = demos::MakeLeastSquares(9, 256, 4, 0.05);
  const auto optimum = oracles::LeastSquaresCholesky(data.features.ToDoubles(),
                                                     data.labels.ToDoubles(), 4);
  AsyncRun run = TrainAsync(data, 4, 1000, 50);
  EXPECT_TRUE(run.killed_worker_failed);
  EXPECT_LT(MaxDiff(run.w, optimum), 1e-2);
  ASSERT_EQ(run.global_steps_after_kill.size(), 3u);
  for (const auto& [k, steps] : run.global_steps_after_kill) {
    ASSERT_GE(steps.size(), 2u) << k;
    for (size_t i = 1; i < steps.size(); ++i) EXPECT_GT(steps[i], steps[i - 1]) << k;
  }
}

}  // namespace
}  // namespace replicator
