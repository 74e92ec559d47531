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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Reference values come from the oracles under
// tests/, never from the code under test.

#include <stdlib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cluster_util.h"
#include "gradient_cases.h"
#include "oracles.h"
#include "replicator/collectives.h"
#include "replicator/demos.h"
#include "replicator/harness.h"
#include "replicator/ops.h"
#include "replicator/optimizer.h"
#include "replicator/paramserver.h"
#include "replicator/replica.h"
#include "replicator/replicator.h"
#include "replicator/tcp_transport.h"
#include "test_util.h"

namespace replicator {
namespace {

using namespace std::chrono_literals;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool ok = false;
  std::string detail;
};

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

std::string Fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

Deployment MakeDeployment(ReplicatorKind kind, int workers, int devices, int ps = 0) {
  Deployment d;
  d.kind = kind;
  d.topology = Topology{workers, devices, ps};
  return d;
}

ReplicaSpec Spec(InputFn input_fn, StepFn step_fn) {
  ReplicaSpec spec;
  spec.input_fn = std::move(input_fn);
  spec.step_fn = std::move(step_fn);
  return spec;
}

double MaxAbsDiff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return HUGE_VAL;
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// ---------------------------------------------------------------------------
// 1. Replicated training against one device with the combined batch.

double ReplicatedVsLargeBatch(const demos::Dataset& data, int replicas, const Optimizer& base) {
  constexpr int kPerReplica = 8;
  constexpr int kSteps = 100;
  const int64_t batch = replicas * kPerReplica;
  Replicator repl(MakeDeployment(ReplicatorKind::kMultiDevice, 1, replicas));
  auto mlp = demos::CreateMlp(repl, demos::MlpConfig{});
  auto handle = repl.Run(Spec([&](int) { return demos::SequentialBatches(data, batch, kSteps); },
                              demos::MlpTrainStep(mlp, repl.WrapOptimizer(base))));
  while (handle->Step()) {
  }
  Replicator single(MakeDeployment(ReplicatorKind::kNon, 1, 1));
  auto ref = demos::CreateMlp(single, demos::MlpConfig{});
  auto ref_handle = single.Run(Spec([&](int) { return demos::SequentialBatches(data, batch, kSteps); },
                                    demos::MlpTrainStep(ref, base)));
  while (ref_handle->Step()) {
  }
  double worst = 0;
  for (int r = 0; r < replicas; ++r) {
    for (size_t p = 0; p < mlp.params.size(); ++p) {
      worst = std::max(worst, MaxAbsDiff(mlp.params[p]->For(r)->Read().ToDoubles(),
                                         ref.params[p]->For(0)->Read().ToDoubles()));
    }
  }
  return worst;
}

Outcome SyncEquivalence() {
  const auto start = Clock::now();
  const demos::Dataset data = demos::MakeBlobs(17, 512, 4);
  double worst = 0;
  for (int replicas : {2, 4, 8}) {
    worst = std::max(worst, ReplicatedVsLargeBatch(data, replicas, Optimizer::Sgd(0.1)));
    worst = std::max(worst, ReplicatedVsLargeBatch(data, replicas, Optimizer::Momentum(0.05, 0.9, true)));
  }
  const double secs = Seconds(start);
  return {worst < 1e-9 && secs < 60,
          "R in {2,4,8}, sgd and nesterov, 100 steps: max param diff " + Fmt("%.3g", worst) +
              " (< 1e-9), " + Fmt("%.1f", secs) + "s (< 60s)"};
}

// ---------------------------------------------------------------------------
// 2. Ring sum, gather and broadcast over both transports.

struct CollectiveRun {
  int mismatches = 0;
  std::vector<uint64_t> digests;  // per (n, rank), in order
};

CollectiveRun RunCollectives(testing::TransportKind kind) {
  constexpr int kTensors = 50;
  CollectiveRun run;
  for (int n = 1; n <= 8; ++n) {
    std::mt19937_64 rng(700 + n);
    std::vector<std::vector<Tensor>> inputs(kTensors);
    for (auto& per_rank : inputs) {
      const Shape shape = testing::RandomShape(rng, 3, 2000);
      for (int r = 0; r < n; ++r) {
        Tensor t = testing::RandomTensor(rng, shape, -1e8, 1e8);
        // Mixed magnitudes so the summation order shows up in the bits.
        auto d = t.mutable_data<double>();
        for (size_t i = 0; i < d.size(); i += 3) d[i] *= 1e-9;
        per_rank.push_back(std::move(t));
      }
    }
    testing::TestGroup group(kind, n);
    std::vector<std::unique_ptr<Communicator>> comms;
    for (int r = 0; r < n; ++r) {
      comms.push_back(std::make_unique<Communicator>(group.mesh(r), group.members(),
                                                     CommunicatorOptions{.timeout = 30s}));
    }
    std::vector<int> bad(n, 0);
    std::vector<uint64_t> digest(n, 0);
    auto errors = testing::RunRanks(n, [&](int r) {
      Communicator& c = *comms[r];
      for (int t = 0; t < kTensors; ++t) {
        c.BeginGeneration(t);
        const auto& mine = inputs[t][r];
        Tensor sum = c.AllSum(mine, "sum");
        bad[r] += !testing::BitEqualDoubles(sum, testing::NaiveFoldSum(inputs[t]));
        auto gathered = c.AllGather(mine, "gather");
        bad[r] += gathered.size() != static_cast<size_t>(n);
        for (size_t i = 0; i < gathered.size(); ++i) {
          bad[r] += !testing::BitEqualDoubles(gathered[i], inputs[t][i].ToDoubles());
        }
        Tensor seed = r == 0 ? mine : Tensor::Filled(mine.shape(), 0.0);
        Tensor bcast = c.Broadcast(seed, "bcast");
        bad[r] += !testing::BitEqualDoubles(bcast, inputs[t][0].ToDoubles());
        digest[r] = digest[r] * 1099511628211ULL ^ TensorChecksum(sum);
        digest[r] = digest[r] * 1099511628211ULL ^ TensorChecksum(bcast);
      }
    });
    for (int r = 0; r < n; ++r) {
      if (errors[r]) {
        throw TransportError(std::string(testing::TransportName(kind)) + " n=" + std::to_string(n) +
                             " rank " + std::to_string(r) + ": " + testing::ErrorText(errors[r]));
      }
      run.mismatches += bad[r];
      run.digests.push_back(digest[r]);
    }
  }
  return run;
}

Outcome Collectives() {
  const auto start = Clock::now();
  const CollectiveRun local = RunCollectives(testing::TransportKind::kInProcess);
  const CollectiveRun tcp = RunCollectives(testing::TransportKind::kTcp);
  const bool same = local.digests == tcp.digests;
  const double secs = Seconds(start);
  return {local.mismatches == 0 && tcp.mismatches == 0 && same && secs < 60,
          "N=1..8 x 50 tensors: mismatches in-process " + std::to_string(local.mismatches) +
              ", tcp " + std::to_string(tcp.mismatches) + ", transports " +
              (same ? "identical" : "differ") + ", " + Fmt("%.1f", secs) + "s (< 60s)"};
}

// ---------------------------------------------------------------------------
// 3. Analytic gradients against central differences.

Outcome Gradients() {
  const std::set<OpKind> differentiable = {
      OpKind::kAdd,     OpKind::kSub,        OpKind::kMul,
      OpKind::kDiv,     OpKind::kNeg,        OpKind::kMatMul,
      OpKind::kRelu,    OpKind::kTanh,       OpKind::kSquare,
      OpKind::kSqrt,    OpKind::kExp,        OpKind::kLog,
      OpKind::kReduceSum, OpKind::kReduceMean, OpKind::kSoftmaxCrossEntropy,
      OpKind::kConcat,  OpKind::kSlice,      OpKind::kReshape,
      OpKind::kIdentity};
  const auto start = Clock::now();
  const auto cases = testing::OpCases();
  std::set<OpKind> covered;
  double worst = 0;
  std::string worst_name;
  for (size_t i = 0; i < cases.size(); ++i) {
    {
      std::mt19937_64 rng(i);
      const Shape shape = cases[i].shape(rng);
      VariableStore store;
      auto x = store.GetOrCreate("x", shape, Initializer::Zeros(), DeviceTag{});
      Graph g;
      cases[i].build(g, ops::Read(g, x), rng, shape);
      for (int n = 0; n < g.num_nodes(); ++n) covered.insert(g.node(n).kind);
    }
    const double err = testing::WorstGradientError(cases[i], 5000 + i, 20);
    if (!(err <= worst)) {
      worst = err;
      worst_name = cases[i].name;
    }
  }
  std::string missing;
  for (OpKind k : differentiable) {
    if (!covered.count(k)) missing += std::string(" ") + OpKindName(k);
  }
  const double secs = Seconds(start);
  return {worst < 1e-5 && missing.empty() && secs < 30,
          std::to_string(cases.size()) + " cases x 20 instances: worst relative error " +
              Fmt("%.3g", worst) + " (" + worst_name + ", < 1e-5), uncovered ops [" + missing +
              " ], " + Fmt("%.1f", secs) + "s (< 30s)"};
}

// ---------------------------------------------------------------------------
// 4. Cross-replica batch norm against the concatenated batch.

std::vector<double> CrossReplicaNorm(int replicas, const Tensor& batch, double eps) {
  Replicator repl(MakeDeployment(ReplicatorKind::kMultiDevice, 1, replicas));
  auto handle = repl.Run(Spec([&](int) { return demos::RepeatTensor(batch, 1); },
                              [eps](ReplicaBuilder& b, const NodeNest& in) {
                                return NodeNest(demos::CrossReplicaBatchNorm(b, in.leaf(), eps));
                              }));
  auto step = handle->Step();
  std::vector<double> out;
  for (int r = 0; r < replicas; ++r) {
    const auto v = step->outputs[r].leaf().ToDoubles();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

Outcome BatchNorm() {
  constexpr double kEps = 1e-5;
  constexpr int64_t kFeatures = 5;
  std::mt19937_64 rng(31);
  double worst = 0;
  double constant_worst = 0;
  for (int replicas : {2, 4}) {
    for (int trial = 0; trial < 10; ++trial) {
      Tensor h = testing::RandomTensor(rng, Shape{4 * replicas, kFeatures}, -3, 3);
      worst = std::max(worst, MaxAbsDiff(CrossReplicaNorm(replicas, h, kEps),
                                         oracles::BatchNorm(h.ToDoubles(), kFeatures, kEps)));
    }
    Tensor flat = Tensor::Filled(Shape{4 * replicas, kFeatures}, 2.5);
    const auto got = CrossReplicaNorm(replicas, flat, kEps);
    constant_worst = std::max(
        constant_worst, MaxAbsDiff(got, oracles::BatchNorm(flat.ToDoubles(), kFeatures, kEps)));
  }
  return {worst < 1e-12 && constant_worst < 1e-12,
          "R in {2,4}: max diff " + Fmt("%.3g", worst) + ", constant input max diff " +
              Fmt("%.3g", constant_worst) + " (< 1e-12)"};
}

// ---------------------------------------------------------------------------
// 5. Stitch validation.

ReplicaContext Context(int id, int n) {
  ReplicaContext ctx;
  ctx.replica_id = id;
  ctx.num_replicas = n;
  ctx.logical_devices = {DeviceTag{"worker", 0, id}};
  return ctx;
}

const SpecNest& VecSpec() {
  static const SpecNest spec(TensorSpec{Shape{2}, DType::kF64});
  return spec;
}

// Builds two replicas whose step functions differ by `per_replica` and
// returns the stitch error text, or nullopt if stitching succeeded.
std::optional<std::string> StitchError2(
    const std::function<NodeRef(ReplicaBuilder&, NodeRef, int)>& per_replica) {
  VariableStore store;
  std::vector<ReplicaGraph> replicas;
  for (int r = 0; r < 2; ++r) {
    StepFn fn = [&, r](ReplicaBuilder& b, const NodeNest& in) {
      return NodeNest(per_replica(b, in.leaf(), r));
    };
    replicas.push_back(BuildReplica(fn, VecSpec(), Context(r, 2), store));
  }
  try {
    Stitch(std::move(replicas));
  } catch (const StitchError& e) {
    return std::string(e.what());
  }
  return std::nullopt;
}

bool Mentions(const std::optional<std::string>& msg, const std::vector<std::string>& needles) {
  if (!msg) return false;
  for (const auto& n : needles) {
    if (msg->find(n) == std::string::npos) return false;
  }
  return true;
}

Outcome StitchValidation() {
  std::vector<std::string> failed;
  auto label = StitchError2([](ReplicaBuilder& b, NodeRef x, int r) {
    x = b.AllSum(x, "shared");
    return b.AllSum(x, r == 0 ? "left" : "right");
  });
  if (!Mentions(label, {"position 1", "'left'", "'right'"})) failed.push_back("label");

  auto kind = StitchError2([](ReplicaBuilder& b, NodeRef x, int r) {
    return r == 0 ? b.AllSum(x, "k") : b.AllMax(x, "k");
  });
  if (!Mentions(kind, {"position 0", "'k'"})) failed.push_back("kind");

  auto shape = StitchError2([](ReplicaBuilder& b, NodeRef x, int r) {
    if (r == 1) x = ops::Concat(b.graph(), {x, x}, 0);
    return b.AllSum(x, "s");
  });
  if (!Mentions(shape, {"position 0", Shape{2}.ToString(), Shape{4}.ToString()})) {
    failed.push_back("shape");
  }

  auto order = StitchError2([](ReplicaBuilder& b, NodeRef x, int r) {
    x = b.AllSum(x, "first");
    NodeRef a = b.AllSum(x, r == 0 ? "a" : "b");
    return b.AllSum(a, r == 0 ? "b" : "a");
  });
  if (!Mentions(order, {"position 1", "'a'", "'b'"})) failed.push_back("order");

  // Without collectives the stitched program is the replicas side by side.
  StepFn fn = [](ReplicaBuilder& b, const NodeNest& in) {
    Graph& g = b.graph();
    NodeRef y = ops::Tanh(g, ops::Add(g, ops::Square(g, in.leaf()), ops::Scalar(g, 0.25)));
    return NodeNest(ops::Mul(g, y, in.leaf()));
  };
  constexpr int kReplicas = 3;
  std::mt19937_64 rng(41);
  std::vector<TensorNest> inputs;
  for (int r = 0; r < kReplicas; ++r) inputs.emplace_back(testing::RandomTensor(rng, Shape{2}));
  VariableStore store;
  std::vector<ReplicaGraph> graphs;
  int total_nodes = 0;
  for (int r = 0; r < kReplicas; ++r) {
    graphs.push_back(BuildReplica(fn, VecSpec(), Context(r, kReplicas), store));
    total_nodes += graphs.back().graph.num_nodes();
  }
  auto program = Stitch(std::move(graphs));
  const auto together = RunMonolithic(program, inputs);
  bool union_ok = program.bindings.empty() && program.graph.num_nodes() == total_nodes;
  for (int r = 0; r < kReplicas; ++r) {
    std::vector<ReplicaGraph> alone;
    alone.push_back(BuildReplica(fn, VecSpec(), Context(0, 1), store));
    const auto separate = RunMonolithic(Stitch(std::move(alone)), {inputs[r]});
    union_ok = union_ok && together[r].leaf().BitEqual(separate[0].leaf());
  }
  if (!union_ok) failed.push_back("disjoint union");

  std::string detail = "label/kind/shape/order mismatches name the first divergence; "
                       "zero-collective stitch equals separate runs";
  if (!failed.empty()) {
    detail = "failed:";
    for (const auto& f : failed) detail += " " + f;
    if (label) detail += "; label error was: " + *label;
  }
  return {failed.empty(), detail};
}

// ---------------------------------------------------------------------------
// 6. Asynchronous parameter-server training.

DeviceTag Worker(int w) { return DeviceTag{"worker", w, 0}; }

bool SingleWorkerMatchesSequential() {
  const demos::Dataset data = demos::MakeLeastSquares(3, 128, 5, 0.1);
  constexpr int kSteps = 100;
  auto input = [&](int) { return demos::RandomBatches(data, 8, kSteps, 42); };

  Replicator async(MakeDeployment(ReplicatorKind::kMultiWorkerAsync, 1, 1, 1));
  auto wa = async.CreateVariable("w", Shape{5, 1}, Initializer::Uniform(0.5, 7));
  auto workers = async.RunWorkers(Spec(input, demos::LeastSquaresStep(wa, Optimizer::Sgd(0.05))));
  std::vector<double> async_losses;
  while (auto s = workers[0]->Step()) {
    async_losses.push_back(s->outputs.at("loss").leaf().ToDoubles()[0]);
  }
  const Tensor async_w = workers[0]->client().Pull("w");

  Replicator seq(MakeDeployment(ReplicatorKind::kNon, 1, 1));
  auto ws = seq.CreateVariable("w", Shape{5, 1}, Initializer::Uniform(0.5, 7));
  auto handle = seq.Run(Spec(input, demos::LeastSquaresStep(ws, Optimizer::Sgd(0.05))));
  std::vector<double> seq_losses;
  while (auto s = handle->Step()) seq_losses.push_back(s->outputs[0].at("loss").leaf().ToDoubles()[0]);
  return async_losses.size() == static_cast<size_t>(kSteps) && async_losses == seq_losses &&
         testing::BitEqualDoubles(async_w, ws->For(0)->Read().ToDoubles());
}

struct AsyncResult {
  double distance = 0;
  int64_t pushes = 0;
  double seconds = 0;
  bool victim_failed = false;
  bool survivors_monotone = true;
};

// Four free-running worker threads; optionally kills worker 1 when it
// reaches local step `kill_at`.
AsyncResult TrainAsync(const demos::Dataset& data, std::optional<int> kill_at) {
  constexpr int kWorkers = 4;
  constexpr int kStepsPerWorker = 1000;
  const auto optimum =
      oracles::LeastSquaresCholesky(data.features.ToDoubles(), data.labels.ToDoubles(),
                                    data.features.shape().dim(1));
  Replicator repl(MakeDeployment(ReplicatorKind::kMultiWorkerAsync, kWorkers, 1, 1));
  auto w = repl.CreateVariable("w", Shape{data.features.shape().dim(1), 1}, Initializer::Zeros());
  auto handles = repl.RunWorkers(
      Spec([&](int k) { return demos::RandomBatches(data, 16, kStepsPerWorker, 1000 + k); },
           demos::LeastSquaresStep(w, Optimizer::Sgd(0.02))));
  auto* transport = dynamic_cast<InProcessTransport*>(&repl.transport());
  AsyncResult result;
  std::atomic<int64_t> pushes{0};
  std::atomic<bool> victim_failed{false}, monotone{true};
  const auto start = Clock::now();
  std::vector<std::thread> threads;
  for (int k = 0; k < kWorkers; ++k) {
    threads.emplace_back([&, k] {
      int64_t last = -1;
      try {
        while (true) {
          if (kill_at && k == 1 && handles[k]->local_step() == *kill_at) transport->KillTask(Worker(1));
          auto s = handles[k]->Step();
          if (!s) break;
          ++pushes;
          if (s->global_step <= last) monotone = false;
          last = s->global_step;
        }
      } catch (const TransportError&) {
        if (k == 1) victim_failed = true;
      }
    });
  }
  for (auto& t : threads) t.join();
  result.seconds = Seconds(start);
  ParamClient reader(repl.transport().Connect(Worker(0)), ShardMap(repl.transport().spec()));
  result.distance = MaxAbsDiff(reader.Pull("w").ToDoubles(), optimum);
  result.pushes = pushes.load();
  result.victim_failed = victim_failed.load();
  result.survivors_monotone = monotone.load();
  return result;
}

double ConservationError() {
  constexpr int kWorkers = 4;
  constexpr int kPushes = 100;
  InProcessTransport transport(LocalClusterSpec(kWorkers, 1));
  ParamServer server(transport.Connect(DeviceTag{"ps", 0, 0}));
  server.Start();
  ShardMap shards(transport.spec());
  std::mt19937_64 init_rng(2);
  const Tensor w0 = testing::RandomTensor(init_rng, Shape{16});
  ParamClient(transport.Connect(Worker(0)), shards).Init("w", w0);
  std::vector<std::vector<Tensor>> acked(kWorkers);
  std::vector<std::thread> threads;
  for (int k = 0; k < kWorkers; ++k) {
    threads.emplace_back([&, k] {
      ParamClient client(transport.Connect(Worker(k)), shards);
      std::mt19937_64 rng(100 + k);
      for (int i = 0; i < kPushes; ++i) {
        Tensor delta = testing::RandomTensor(rng, Shape{16});
        if (client.Push("w", delta)) acked[k].push_back(delta);
      }
    });
  }
  for (auto& t : threads) t.join();
  std::vector<double> expect = w0.ToDoubles();
  size_t count = 0;
  for (const auto& deltas : acked) {
    for (const auto& d : deltas) {
      const auto v = d.ToDoubles();
      for (size_t i = 0; i < expect.size(); ++i) expect[i] += v[i];
      ++count;
    }
  }
  const auto got = ParamClient(transport.Connect(Worker(0)), shards).Pull("w").ToDoubles();
  server.Stop();
  if (count != static_cast<size_t>(kWorkers * kPushes)) return HUGE_VAL;
  return MaxAbsDiff(got, expect);
}

Outcome AsyncCorrectness() {
  const bool exact = SingleWorkerMatchesSequential();
  const AsyncResult four = TrainAsync(demos::MakeLeastSquares(9, 256, 4, 0.05), std::nullopt);
  const double conservation = ConservationError();
  const bool ok = exact && four.distance < 1e-2 && four.pushes <= 5000 && conservation < 1e-9;
  return {ok, std::string("1 worker ") + (exact ? "bit-identical" : "differs") +
                  " to sequential sgd; 4 workers distance " + Fmt("%.3g", four.distance) +
                  " (< 1e-2) after " + std::to_string(four.pushes) +
                  " pushes (<= 5000); 4x100 pushes conserve to " + Fmt("%.3g", conservation) +
                  " (< 1e-9)"};
}

// ---------------------------------------------------------------------------
// 7. Fault tolerance.

struct TempDir {
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "replicator-acceptance-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string File(const std::string& name) const { return (path / name).string(); }
  std::filesystem::path path;
};

int RunQuietly(harness::ExperimentConfig config, const std::string& metrics, double* seconds = nullptr) {
  config.metrics_path = metrics;
  std::ostringstream log;
  const auto start = Clock::now();
  const int rc = harness::RunExperiment(config, log);
  if (seconds) *seconds = Seconds(start);
  if (rc != harness::kSuccess) std::cerr << log.str();
  return rc;
}

// Kills a rank of a three-worker synchronous TCP job mid-training and
// returns the worst delay between the kill and a survivor's error, over
// both failure modes. Negative if a survivor never failed.
double SyncKillLatency(bool hang, std::chrono::milliseconds* window) {
  constexpr int kWorkers = 3;
  constexpr int kVictim = 2;
  constexpr int kKillAtStep = 5;
  TcpOptions options;
  options.heartbeat_interval = 100ms;
  options.heartbeat_misses = 3;
  ClusterSpec spec({{"worker", PickFreeLocalAddresses(kWorkers)}});
  const demos::Dataset data = demos::MakeBlobs(5, 256, 4);

  std::mutex mu;
  std::condition_variable cv;
  int survivors_done = 0;
  std::optional<Clock::time_point> killed_at;
  std::vector<std::optional<double>> latency(kWorkers);
  std::vector<std::thread> threads;
  for (int w = 0; w < kWorkers; ++w) {
    threads.emplace_back([&, w] {
      auto tcp = std::make_shared<TcpTransport>(spec, Worker(w), options);
      if (w == 0) *window = tcp->failure_detection_window();
      Deployment d = MakeDeployment(ReplicatorKind::kMultiWorker, kWorkers, 1);
      d.transport = tcp;
      d.local_worker = w;
      try {
        Replicator repl(d);
        auto mlp = demos::CreateMlp(repl, demos::MlpConfig{});
        auto handle = repl.Run(
            Spec([&](int k) { return demos::SequentialBatches(data, 8, 100000, 8 * k); },
                 demos::MlpTrainStep(mlp, repl.WrapOptimizer(Optimizer::Sgd(0.1)))));
        while (true) {
          if (w == kVictim && handle->global_step() == kKillAtStep) {
            {
              std::lock_guard<std::mutex> lock(mu);
              killed_at = Clock::now();
            }
            if (hang) {
              tcp->SuspendHeartbeats();
            } else {
              tcp->Crash();
            }
            // A hung process keeps its sockets open until the others give up.
            std::unique_lock<std::mutex> lock(mu);
            cv.wait(lock, [&] { return survivors_done == kWorkers - 1; });
            return;
          }
          if (!handle->Step()) break;
        }
      } catch (const std::exception&) {
        std::lock_guard<std::mutex> lock(mu);
        if (killed_at) {
          latency[w] = std::chrono::duration<double>(Clock::now() - *killed_at).count();
        }
      }
      std::lock_guard<std::mutex> lock(mu);
      ++survivors_done;
      cv.notify_all();
    });
  }
  for (auto& t : threads) t.join();
  double worst = 0;
  for (int w = 0; w < kWorkers; ++w) {
    if (w == kVictim) continue;
    if (!latency[w]) return -1;
    worst = std::max(worst, *latency[w]);
  }
  return worst;
}

Outcome FaultTolerance() {
  TempDir dir;
  auto nofault = harness::LoadConfig("async_ls", "", {});
  nofault.transport = "tcp";
  auto fault = harness::LoadConfig("async_fault", "", {});
  fault.transport = "tcp";
  double nofault_secs = 0, fault_secs = 0;
  const int nofault_rc = RunQuietly(nofault, dir.File("nofault.csv"), &nofault_secs);
  const int fault_rc = RunQuietly(fault, dir.File("fault.csv"), &fault_secs);
  const bool async_ok = nofault_rc == 0 && fault_rc == 0 && fault_secs <= 2 * nofault_secs;

  std::chrono::milliseconds window{0};
  const double crash = SyncKillLatency(false, &window);
  const double hang = SyncKillLatency(true, &window);
  const double limit = 2 * std::chrono::duration<double>(window).count();
  const bool sync_ok = crash >= 0 && hang >= 0 && crash < limit && hang < limit;
  return {async_ok && sync_ok,
          "async tcp processes, worker 1 killed at step 50: " +
              std::string(fault_rc == 0 ? "survivors converged" : "predicate failed") + " in " +
              Fmt("%.2f", fault_secs) + "s vs no-fault " + Fmt("%.2f", nofault_secs) +
              "s (<= 2x); sync rank killed: survivors failed after " + Fmt("%.3f", crash) +
              "s (crash) and " + Fmt("%.3f", hang) + "s (hang), limit " + Fmt("%.3f", limit) + "s"};
}

// ---------------------------------------------------------------------------
// 8. Kind and topology matrix.

bool Allowed(ReplicatorKind kind, int w, int d, int ps) {
  if (w < 1 || d < 1) return false;
  switch (kind) {
    case ReplicatorKind::kNon:
      return w == 1 && d == 1 && ps == 0;
    case ReplicatorKind::kMultiDevice:
      return w == 1 && ps == 0;
    case ReplicatorKind::kMultiWorker:
      return ps == 0;
    case ReplicatorKind::kMultiWorkerAsync:
      return d == 1 && ps >= 1;
  }
  return false;
}

Outcome TopologyMatrix() {
  int valid = 0, invalid = 0, wrong = 0;
  for (auto kind : {ReplicatorKind::kNon, ReplicatorKind::kMultiDevice, ReplicatorKind::kMultiWorker,
                    ReplicatorKind::kMultiWorkerAsync}) {
    for (int w = 0; w <= 4; ++w) {
      for (int d = 0; d <= 4; ++d) {
        for (int ps = 0; ps <= 2; ++ps) {
          Deployment dep = MakeDeployment(kind, w, d, ps);
          bool constructed = false;
          try {
            Replicator repl(dep);
            constructed = true;
          } catch (const ConfigError&) {
          }
          const bool allowed = Allowed(kind, w, d, ps);
          (allowed ? valid : invalid) += 1;
          wrong += constructed != allowed;
        }
      }
    }
  }
  return {wrong == 0, std::to_string(valid) + " valid constructed, " + std::to_string(invalid) +
                          " invalid rejected, " + std::to_string(wrong) + " wrong"};
}

// ---------------------------------------------------------------------------
// 9. Learning-rate schedule.

Outcome LearningRateSchedule() {
  LrSchedule s;
  s.batch_size = 256;
  s.steps_per_epoch = 100;
  const double max_lr = s.max_lr();
  const double midpoint = LrAt(s, 3 * s.steps_per_epoch);
  const double peak = LrAt(s, 6 * s.steps_per_epoch);
  const double after30 = LrAt(s, 30 * s.steps_per_epoch + 1);
  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-15; };
  return {near(max_lr, 0.125) && near(peak, 0.125) && near(midpoint, 0.0625) && near(after30, 0.0125),
          "batch 256: max_lr " + Fmt("%.17g", max_lr) + ", warmup midpoint " +
              Fmt("%.17g", midpoint) + ", after epoch 30 " + Fmt("%.17g", after30)};
}

// ---------------------------------------------------------------------------
// 10. Two-player minmax.

Outcome Minmax() {
  constexpr double kU0 = 1.5, kV0 = -2.0;
  constexpr int kSteps = 500;
  Replicator repl(MakeDeployment(ReplicatorKind::kMultiDevice, 1, 2));
  auto game = demos::CreateMinmax(repl, kU0, kV0, 0.5);
  auto handle = repl.Run(
      Spec([](int) { return demos::RepeatTensor(Tensor::Filled(Shape{2}, 0.0), kSteps); },
           demos::MinmaxStep(game, repl.WrapOptimizer(Optimizer::Sgd(0.05, "u_opt")),
                             repl.WrapOptimizer(Optimizer::Sgd(0.05, "v_opt")))));
  std::optional<int64_t> reached;
  int64_t step = 0;
  while (handle->Step()) {
    ++step;
    const double u = game.u->For(0)->Read().ToDoubles()[0];
    const double v = game.v->For(0)->Read().ToDoubles()[0];
    if (!reached && std::abs(u) < 0.1 * std::abs(kU0) && std::abs(v) < 0.1 * std::abs(kV0)) {
      reached = step;
    }
  }
  const double u = game.u->For(1)->Read().ToDoubles()[0];
  const double v = game.v->For(1)->Read().ToDoubles()[0];
  return {reached.has_value() && step == kSteps,
          "u0 1.5, v0 -2: both below 0.1x initial " +
              (reached ? "after " + std::to_string(*reached) + " steps" : std::string("never")) +
              " (<= 500); final u " + Fmt("%.3g", u) + ", v " + Fmt("%.3g", v)};
}

// ---------------------------------------------------------------------------
// 11. Same seed, same metrics.

Outcome Reproducibility() {
  TempDir dir;
  std::vector<std::pair<std::string, harness::ExperimentConfig>> runs;
  for (const auto& s : harness::Scenarios()) runs.emplace_back(s.name, s.defaults);
  auto tcp = harness::LoadConfig("sync_equiv", "", {});
  tcp.kind = ReplicatorKind::kMultiWorker;
  tcp.topology = Topology{2, 2, 0};
  tcp.transport = "tcp";
  runs.emplace_back("sync_equiv/tcp", tcp);
  std::string differing;
  for (auto& [name, config] : runs) {
    std::string stem = name;
    std::replace(stem.begin(), stem.end(), '/', '_');
    const std::string a = dir.File(stem + "_a.csv"), b = dir.File(stem + "_b.csv");
    if (RunQuietly(config, a) != 0 || RunQuietly(config, b) != 0) {
      differing += " " + name + "(run failed)";
      continue;
    }
    if (auto diff = harness::CompareIgnoringTiming(harness::MetricsTable::Read(a),
                                                   harness::MetricsTable::Read(b))) {
      differing += " " + name + "(" + *diff + ")";
    }
  }
  return {differing.empty(), std::to_string(runs.size()) + " scenario configs run twice: " +
                                 (differing.empty() ? "all identical outside timing columns"
                                                    : "differ:" + differing)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> check;
};

int RunAll() {
  const std::vector<Criterion> criteria = {
      {1, "sync-equivalence", SyncEquivalence},
      {2, "collectives", Collectives},
      {3, "gradients", Gradients},
      {4, "batchnorm", BatchNorm},
      {5, "stitch-validation", StitchValidation},
      {6, "async-correctness", AsyncCorrectness},
      {7, "fault-tolerance", FaultTolerance},
      {8, "topology-matrix", TopologyMatrix},
      {9, "lr-schedule", LearningRateSchedule},
      {10, "minmax", Minmax},
      {11, "reproducibility", Reproducibility},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome out;
    try {
      out = c.check();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    failures += !out.ok;
    std::printf("%-4s %2d %-18s %s\n", out.ok ? "PASS" : "FAIL", c.id, c.name, out.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace
}  // namespace replicator

int main(int argc, char** argv) {
  // The harness re-executes this binary for worker processes.
  if (argc > 1 && std::strcmp(argv[1], "worker") == 0) {
    return replicator::harness::RunWorkerFromEnvironment(std::cerr);
  }
  return replicator::RunAll();
}
