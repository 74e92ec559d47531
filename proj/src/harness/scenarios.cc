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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstring>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "internal.h"
#include "replicator/demos.h"
#include "replicator/tcp_transport.h"

namespace replicator::harness {
namespace {

using Clock = std::chrono::steady_clock;

constexpr int64_t kBlobRows = 1024;
constexpr int64_t kBlobDim = 4;
constexpr int64_t kLsRows = 512;
constexpr int64_t kLsDim = 4;
constexpr double kLsNoise = 0.05;
constexpr double kMinmaxReg = 0.5;
constexpr int64_t kNormFeatures = 5;
constexpr double kNormEpsilon = 1e-5;

constexpr double kSyncTolerance = 1e-9;
constexpr double kNormTolerance = 1e-12;
constexpr double kMinmaxShrink = 0.1;
constexpr double kAsyncTolerance = 1e-2;
constexpr double kAsyncPushBudget = 5000;

double Ms(Clock::duration d) { return std::chrono::duration<double, std::milli>(d).count(); }

double Throughput(int64_t examples, double step_ms) {
  return step_ms > 0 ? examples * 1000.0 / step_ms : 0.0;
}

Optimizer MakeOptimizer(const OptimizerSettings& s, const std::string& name) {
  OptimizerConfig c;
  c.name = name;
  c.learning_rate = s.learning_rate;
  c.schedule = s.schedule;
  c.momentum = s.momentum;
  c.nesterov = s.nesterov;
  if (s.rule == "sgd") {
    c.rule = OptimizerRule::kSgd;
  } else if (s.rule == "momentum") {
    c.rule = OptimizerRule::kMomentum;
  } else {
    c.rule = OptimizerRule::kAdam;
  }
  return Optimizer(c);
}

Deployment MakeDeployment(const ExperimentConfig& c, const Role& role) {
  Deployment d;
  d.kind = c.kind;
  d.topology = c.topology;
  if (role.cluster) {
    d.transport = std::make_shared<TcpTransport>(*role.cluster, DeviceTag{role.job, role.task, 0});
    d.local_worker = role.task;
  }
  return d;
}

void ShutdownTransport(Replicator& repl) {
  if (auto* tcp = dynamic_cast<TcpTransport*>(&repl.transport())) tcp->Shutdown();
}

void RequireSync(const ExperimentConfig& c) {
  if (c.kind == ReplicatorKind::kMultiWorkerAsync) {
    throw ConfigError(c.scenario + " needs a synchronous kind");
  }
}

void RequireAsync(const ExperimentConfig& c) {
  if (c.kind != ReplicatorKind::kMultiWorkerAsync) {
    throw ConfigError(c.scenario + " needs kind multi_worker_async");
  }
}

double MaxAbsDiff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

ReplicaSpec Spec(InputFn input_fn, StepFn step_fn) {
  ReplicaSpec spec;
  spec.input_fn = std::move(input_fn);
  spec.step_fn = std::move(step_fn);
  return spec;
}

double Scalar(const TensorNest& t) { return t.leaf().ToDoubles().at(0); }

Verdict Pass(std::string message) { return Verdict{true, std::move(message)}; }
Verdict Fail(std::string message) { return Verdict{false, std::move(message)}; }

std::string Num(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

// ---------------------------------------------------------------------------
// sync_equiv: wrapped optimizer on R replicas of batch B against one device
// with batch R*B, stepped in lockstep.

void RunSyncEquiv(ScenarioContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  RequireSync(c);
  Replicator repl(MakeDeployment(c, ctx.role));
  const int replicas = repl.num_replicas();
  const int64_t per_worker = repl.replicas_per_worker() * c.batch_size;
  const int64_t global = replicas * c.batch_size;
  const demos::Dataset data = demos::MakeBlobs(c.seed, kBlobRows, kBlobDim);
  demos::MlpConfig model;
  model.input_dim = kBlobDim;
  model.seed = c.seed;
  const Optimizer base = MakeOptimizer(c.optimizer, "opt");

  auto mlp = demos::CreateMlp(repl, model);
  auto handle = repl.Run(Spec(
      [&](int w) { return demos::SequentialBatches(data, per_worker, c.steps, w * per_worker, global); },
      demos::MlpTrainStep(mlp, repl.WrapOptimizer(base))));

  std::unique_ptr<Replicator> single;
  std::unique_ptr<StepHandle> reference;
  demos::Mlp ref_mlp;
  MetricsWriter* out = nullptr;
  if (ctx.writes_metrics()) {
    single = std::make_unique<Replicator>(Deployment{});
    ref_mlp = demos::CreateMlp(*single, model);
    reference = single->Run(Spec(
        [&](int) { return demos::SequentialBatches(data, global, c.steps); },
        demos::MlpTrainStep(ref_mlp, base)));
    out = &ctx.OpenMetrics(replicas, {"max_param_diff", "reference_loss"});
  }

  const auto start = Clock::now();
  while (true) {
    const auto t0 = Clock::now();
    auto step = handle->Step();
    if (!step) break;
    const double step_ms = Ms(Clock::now() - t0);
    if (!out) continue;
    auto ref_step = reference->Step();
    double diff = 0;
    for (size_t i = 0; i < mlp.params.size(); ++i) {
      diff = std::max(diff, MaxAbsDiff(mlp.params[i]->For(0)->Read().ToDoubles(),
                                       ref_mlp.params[i]->For(0)->Read().ToDoubles()));
    }
    MetricsRecord rec;
    rec.global_step = step->global_step;
    rec.wall_time_ms = Ms(Clock::now() - start);
    for (int r = 0; r < replicas; ++r) rec.losses.push_back(Scalar(step->outputs[r].at("loss")));
    rec.throughput = Throughput(global, step_ms);
    rec.checksum = repl.ReplicaChecksums().at(0);
    rec.extras = {diff, Scalar(ref_step->outputs[0].at("loss"))};
    out->Write(rec);
  }
  ShutdownTransport(repl);
}

Verdict CheckSyncEquiv(const MetricsTable& t) {
  if (t.rows() == 0) return Fail("no steps recorded");
  double worst = 0;
  for (double d : t.Column("max_param_diff")) worst = std::max(worst, std::isnan(d) ? INFINITY : d);
  const std::string msg = "max parameter difference " + Num(worst) + " over " +
                          std::to_string(t.rows()) + " steps (limit " + Num(kSyncTolerance) + ")";
  return worst < kSyncTolerance ? Pass(msg) : Fail(msg);
}

// ---------------------------------------------------------------------------
// minmax: two players, two optimizers, one step function.

void RunMinmax(ScenarioContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  RequireSync(c);
  Replicator repl(MakeDeployment(c, ctx.role));
  const int replicas = repl.num_replicas();
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> magnitude(0.5, 2.0);
  std::bernoulli_distribution flip(0.5);
  const double u0 = magnitude(rng) * (flip(rng) ? -1 : 1);
  const double v0 = magnitude(rng) * (flip(rng) ? -1 : 1);
  auto game = demos::CreateMinmax(repl, u0, v0, kMinmaxReg);
  const int per_worker = repl.replicas_per_worker();
  auto handle = repl.Run(Spec(
      [&](int) { return demos::RepeatTensor(Tensor::Filled(Shape{per_worker}, 0.0), c.steps); },
      demos::MinmaxStep(game, repl.WrapOptimizer(MakeOptimizer(c.optimizer, "u_opt")),
                        repl.WrapOptimizer(MakeOptimizer(c.optimizer, "v_opt")))));
  MetricsWriter* out =
      ctx.writes_metrics() ? &ctx.OpenMetrics(replicas, {"u", "v", "loss_u", "loss_v"}) : nullptr;
  const auto start = Clock::now();
  while (true) {
    const auto t0 = Clock::now();
    auto step = handle->Step();
    if (!step) break;
    if (!out) continue;
    const auto& first = step->outputs[0].list();
    MetricsRecord rec;
    rec.global_step = step->global_step;
    rec.wall_time_ms = Ms(Clock::now() - start);
    for (int r = 0; r < replicas; ++r) rec.losses.push_back(Scalar(step->outputs[r].list()[0]));
    rec.throughput = Throughput(replicas, Ms(Clock::now() - t0));
    rec.checksum = repl.ReplicaChecksums().at(0);
    rec.extras = {Scalar(first[2]), Scalar(first[3]), Scalar(first[0]), Scalar(first[1])};
    out->Write(rec);
  }
  ShutdownTransport(repl);
}

Verdict CheckMinmax(const MetricsTable& t) {
  if (t.rows() < 2) return Fail("fewer than two steps recorded");
  const size_t last = t.rows() - 1;
  const double u0 = std::abs(t.Value(0, "u")), v0 = std::abs(t.Value(0, "v"));
  const double u = std::abs(t.Value(last, "u")), v = std::abs(t.Value(last, "v"));
  const std::string msg = "|u| " + Num(u0) + " -> " + Num(u) + ", |v| " + Num(v0) + " -> " +
                          Num(v) + " after " + std::to_string(t.rows()) + " steps";
  return u < kMinmaxShrink * u0 && v < kMinmaxShrink * v0 ? Pass(msg) : Fail(msg);
}

// ---------------------------------------------------------------------------
// batchnorm: cross-replica statistics against one device holding the whole
// batch. Step 0 feeds a constant batch.

Tensor RowsOf(const Tensor& t, int64_t begin, int64_t count) {
  const int64_t cols = t.shape().dim(1);
  const auto v = t.ToDoubles();
  return Tensor::FromVector(std::vector<double>(v.begin() + begin * cols, v.begin() + (begin + count) * cols),
                            Shape{count, cols});
}

void RunBatchNorm(ScenarioContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  RequireSync(c);
  Replicator repl(MakeDeployment(c, ctx.role));
  const int replicas = repl.num_replicas();
  const int64_t per_worker = repl.replicas_per_worker() * c.batch_size;
  const int64_t global = replicas * c.batch_size;

  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  std::vector<Tensor> batches;
  for (int64_t s = 0; s < c.steps; ++s) {
    if (s == 0) {
      batches.push_back(Tensor::Filled(Shape{global, kNormFeatures}, 2.5));
      continue;
    }
    std::vector<double> v(global * kNormFeatures);
    for (double& x : v) x = dist(rng);
    batches.push_back(Tensor::FromVector(std::move(v), Shape{global, kNormFeatures}));
  }
  StepFn norm = [](ReplicaBuilder& b, const NodeNest& in) {
    return NodeNest(demos::CrossReplicaBatchNorm(b, in.leaf(), kNormEpsilon));
  };
  auto handle = repl.Run(Spec(
      [&](int w) {
        std::vector<TensorNest> mine;
        for (const auto& t : batches) mine.emplace_back(RowsOf(t, w * per_worker, per_worker));
        return std::make_unique<ListSource>(std::move(mine));
      },
      norm));

  std::unique_ptr<Replicator> single;
  std::unique_ptr<StepHandle> reference;
  MetricsWriter* out = nullptr;
  if (ctx.writes_metrics()) {
    single = std::make_unique<Replicator>(Deployment{});
    reference = single->Run(Spec(
        [&](int) {
          return std::make_unique<ListSource>(std::vector<TensorNest>(batches.begin(), batches.end()));
        },
        norm));
    out = &ctx.OpenMetrics(replicas, {"constant_input", "max_abs_diff", "max_abs_output"});
  }
  const auto start = Clock::now();
  while (true) {
    const auto t0 = Clock::now();
    auto step = handle->Step();
    if (!step) break;
    if (!out) continue;
    const double step_ms = Ms(Clock::now() - t0);
    const auto expect = reference->Step()->outputs[0].leaf().ToDoubles();
    std::vector<double> got;
    MetricsRecord rec;
    for (int r = 0; r < replicas; ++r) {
      const auto v = step->outputs[r].leaf().ToDoubles();
      double sq = 0;
      for (double x : v) sq += x * x;
      rec.losses.push_back(sq / static_cast<double>(v.size()));
      got.insert(got.end(), v.begin(), v.end());
    }
    double max_out = 0;
    for (double x : got) max_out = std::max(max_out, std::abs(x));
    rec.global_step = step->global_step;
    rec.wall_time_ms = Ms(Clock::now() - start);
    rec.throughput = Throughput(global, step_ms);
    rec.checksum = TensorChecksum(Tensor::FromVector(got, Shape{global, kNormFeatures}));
    rec.extras = {step->global_step == 0 ? 1.0 : 0.0, MaxAbsDiff(got, expect), max_out};
    out->Write(rec);
  }
  ShutdownTransport(repl);
}

Verdict CheckBatchNorm(const MetricsTable& t) {
  if (t.rows() == 0) return Fail("no steps recorded");
  double worst = 0, constant_out = 0;
  int constant_rows = 0;
  for (size_t r = 0; r < t.rows(); ++r) {
    const double d = t.Value(r, "max_abs_diff");
    worst = std::max(worst, std::isnan(d) ? INFINITY : d);
    if (t.Value(r, "constant_input") == 1.0) {
      ++constant_rows;
      const double o = t.Value(r, "max_abs_output");
      constant_out = std::max(constant_out, std::isnan(o) ? INFINITY : o);
    }
  }
  const std::string msg = "max |cross-replica - single device| " + Num(worst) +
                          ", constant-input output " + Num(constant_out);
  if (constant_rows == 0) return Fail("no constant-input step recorded; " + msg);
  return worst < kNormTolerance && constant_out == 0.0 ? Pass(msg) : Fail(msg);
}

// ---------------------------------------------------------------------------
// collectives: ring all-reduce, all-gather and broadcast for group sizes 1..8
// against rank-ordered reference folds. Step s uses 1 + s % 8 ranks.

constexpr int kMaxGroup = 8;

struct Group {
  std::vector<std::unique_ptr<Transport>> transports;
  std::vector<std::unique_ptr<Communicator>> comms;
};

Group MakeGroup(int n, bool tcp) {
  Group g;
  std::vector<DeviceTag> members;
  std::vector<Mesh> meshes;
  if (!tcp) {
    g.transports.push_back(std::make_unique<InProcessTransport>(LocalClusterSpec(1)));
    for (int r = 0; r < n; ++r) {
      members.push_back(DeviceTag{"worker", 0, r});
      meshes.push_back(g.transports[0]->Connect(members.back()));
    }
  } else {
    ClusterSpec spec({{"worker", PickFreeLocalAddresses(n)}});
    for (int r = 0; r < n; ++r) {
      members.push_back(DeviceTag{"worker", r, 0});
      g.transports.push_back(std::make_unique<TcpTransport>(spec, members.back()));
      meshes.push_back(g.transports.back()->Connect(members.back()));
    }
  }
  for (int r = 0; r < n; ++r) {
    g.comms.push_back(std::make_unique<Communicator>(meshes[r], members));
  }
  return g;
}

bool BitEqual(const Tensor& a, const std::vector<double>& b) {
  const auto v = a.ToDoubles();
  return v.size() == b.size() && std::memcmp(v.data(), b.data(), v.size() * sizeof(double)) == 0;
}

void RunCollectives(ScenarioContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  const bool tcp = c.transport == "tcp";
  std::vector<Group> groups;
  for (int n = 1; n <= kMaxGroup; ++n) groups.push_back(MakeGroup(n, tcp));
  MetricsWriter& out = ctx.OpenMetrics(
      0, {"group_size", "elements", "sum_mismatches", "gather_mismatches", "broadcast_mismatches"});
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> value(-1.0, 1.0);
  std::uniform_int_distribution<int> rank_dist(0, 3);
  std::uniform_int_distribution<int64_t> dim(1, 6);
  const auto start = Clock::now();
  for (int64_t s = 0; s < c.steps; ++s) {
    const int n = 1 + static_cast<int>(s % kMaxGroup);
    Group& g = groups[n - 1];
    std::vector<int64_t> dims(rank_dist(rng));
    for (auto& d : dims) d = dim(rng);
    const Shape shape(dims);
    std::vector<Tensor> inputs;
    for (int r = 0; r < n; ++r) {
      std::vector<double> v(shape.num_elements());
      for (double& x : v) x = value(rng);
      inputs.push_back(Tensor::FromVector(std::move(v), shape));
    }
    // Reference: ((x0 + x1) + x2) + ... with plain loops.
    std::vector<double> fold = inputs[0].ToDoubles();
    for (int r = 1; r < n; ++r) {
      const auto v = inputs[r].ToDoubles();
      for (size_t i = 0; i < fold.size(); ++i) fold[i] = fold[i] + v[i];
    }
    std::vector<Tensor> sums(n), broadcasts(n);
    std::vector<std::vector<Tensor>> gathers(n);
    std::vector<std::exception_ptr> errors(n);
    const auto t0 = Clock::now();
    std::vector<std::thread> threads;
    for (int r = 0; r < n; ++r) {
      threads.emplace_back([&, r] {
        try {
          Communicator& comm = *g.comms[r];
          comm.BeginGeneration(static_cast<uint64_t>(s) + 1);
          sums[r] = comm.AllSum(inputs[r], "sum");
          gathers[r] = comm.AllGather(inputs[r], "gather");
          broadcasts[r] = comm.Broadcast(r == 0 ? inputs[0] : Tensor::Filled(shape, 0.0), "bcast");
        } catch (...) {
          errors[r] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    const double step_ms = Ms(Clock::now() - t0);
    int sum_bad = 0, gather_bad = 0, bcast_bad = 0;
    for (int r = 0; r < n; ++r) {
      sum_bad += !BitEqual(sums[r], fold);
      bool gather_ok = gathers[r].size() == static_cast<size_t>(n);
      for (int k = 0; gather_ok && k < n; ++k) gather_ok = BitEqual(gathers[r][k], inputs[k].ToDoubles());
      gather_bad += !gather_ok;
      bcast_bad += !BitEqual(broadcasts[r], inputs[0].ToDoubles());
    }
    MetricsRecord rec;
    rec.global_step = s;
    rec.wall_time_ms = Ms(Clock::now() - start);
    rec.throughput = Throughput(n, step_ms);
    rec.checksum = TensorChecksum(sums[0]);
    rec.extras = {static_cast<double>(n), static_cast<double>(shape.num_elements()),
                  static_cast<double>(sum_bad), static_cast<double>(gather_bad),
                  static_cast<double>(bcast_bad)};
    out.Write(rec);
  }
  for (auto& g : groups) {
    for (auto& t : g.transports) {
      if (auto* tcp_t = dynamic_cast<TcpTransport*>(t.get())) tcp_t->Shutdown();
    }
  }
}

Verdict CheckCollectives(const MetricsTable& t) {
  if (t.rows() == 0) return Fail("no steps recorded");
  std::set<int> sizes;
  double bad = 0;
  for (size_t r = 0; r < t.rows(); ++r) {
    sizes.insert(static_cast<int>(t.Value(r, "group_size")));
    bad += t.Value(r, "sum_mismatches") + t.Value(r, "gather_mismatches") +
           t.Value(r, "broadcast_mismatches");
  }
  const std::string msg = Num(bad) + " mismatching results over " + std::to_string(t.rows()) +
                          " steps and " + std::to_string(sizes.size()) + " group sizes";
  return bad == 0 ? Pass(msg) : Fail(msg);
}

// ---------------------------------------------------------------------------
// async_ls / async_fault: parameter-server training on least squares.

double DistanceToOptimum(const Tensor& w, const std::vector<double>& optimum) {
  return MaxAbsDiff(w.ToDoubles(), optimum);
}

struct AsyncProblem {
  demos::Dataset data;
  std::vector<double> optimum;
};

AsyncProblem MakeAsyncProblem(uint64_t seed) {
  AsyncProblem p{demos::MakeLeastSquares(seed, kLsRows, kLsDim, kLsNoise), {}};
  p.optimum = demos::SolveLeastSquares(p.data);
  return p;
}

ReplicaSpec AsyncSpec(const ExperimentConfig& c, const AsyncProblem& p, VariableHandle w) {
  return Spec(
      [&c, &p](int k) {
        return demos::RandomBatches(p.data, c.batch_size, c.steps, c.seed * 1000 + k + 1);
      },
      demos::LeastSquaresStep(w, MakeOptimizer(c.optimizer, "opt")));
}

bool FaultHits(const ExperimentConfig& c, int worker, int64_t local_step) {
  return c.fault && c.fault->worker == worker && c.fault->step == local_step;
}

// One worker of a multi-process run; the parameter servers live elsewhere.
void RunAsyncWorkerProcess(ScenarioContext& ctx, const AsyncProblem& p) {
  const ExperimentConfig& c = ctx.config;
  Replicator repl(MakeDeployment(c, ctx.role));
  auto w = repl.CreateVariable("w", Shape{kLsDim, 1}, Initializer::Zeros());
  auto workers = repl.RunWorkers(AsyncSpec(c, p, w));
  AsyncWorker& worker = *workers.at(0);
  const int k = ctx.role.task;
  const std::string rows_path = internal::WorkerRowsPath(c.metrics_path, k);
  std::remove(rows_path.c_str());
  const auto start = Clock::now();
  while (true) {
    if (FaultHits(c, k, worker.local_step())) std::raise(SIGKILL);
    const auto t0 = Clock::now();
    auto step = worker.Step();
    if (!step) break;
    const Tensor pulled = w->For(k)->Read();
    internal::AppendWorkerRow(
        rows_path, internal::WorkerRow{k, step->local_step, step->global_step,
                                       Scalar(step->outputs.at("loss")),
                                       DistanceToOptimum(pulled, p.optimum), TensorChecksum(pulled),
                                       Ms(Clock::now() - start), Ms(Clock::now() - t0)});
  }
  ShutdownTransport(repl);
}

void RunAsync(ScenarioContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  RequireAsync(c);
  const AsyncProblem p = MakeAsyncProblem(c.seed);
  if (ctx.role.cluster) {
    RunAsyncWorkerProcess(ctx, p);
    return;
  }
  Replicator repl(MakeDeployment(c, ctx.role));
  auto* transport = dynamic_cast<InProcessTransport*>(&repl.transport());
  auto w = repl.CreateVariable("w", Shape{kLsDim, 1}, Initializer::Zeros());
  auto workers = repl.RunWorkers(AsyncSpec(c, p, w));
  const int n = static_cast<int>(workers.size());

  std::vector<internal::WorkerRow> rows;
  std::set<int> dead;
  std::mutex mu;
  const auto start = Clock::now();
  // Returns false once worker k is finished or dead.
  auto step_once = [&](int k) {
    AsyncWorker& worker = *workers[k];
    if (FaultHits(c, k, worker.local_step())) transport->KillTask(DeviceTag{"worker", k, 0});
    const auto t0 = Clock::now();
    try {
      auto step = worker.Step();
      if (!step) return false;
      const Tensor pulled = w->For(k)->Read();
      std::lock_guard<std::mutex> lock(mu);
      rows.push_back(internal::WorkerRow{k, step->local_step, step->global_step,
                                         Scalar(step->outputs.at("loss")),
                                         DistanceToOptimum(pulled, p.optimum),
                                         TensorChecksum(pulled), Ms(Clock::now() - start),
                                         Ms(Clock::now() - t0)});
      return true;
    } catch (const TransportError& e) {
      if (!c.fault || c.fault->worker != k) throw;
      std::lock_guard<std::mutex> lock(mu);
      dead.insert(k);
      return false;
    }
  };

  if (c.schedule == "seeded") {
    std::mt19937_64 rng(c.seed ^ 0x5eedULL);
    std::vector<int> live(n);
    for (int k = 0; k < n; ++k) live[k] = k;
    while (!live.empty()) {
      std::uniform_int_distribution<size_t> pick(0, live.size() - 1);
      const size_t i = pick(rng);
      if (!step_once(live[i])) live.erase(live.begin() + i);
    }
  } else {
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> threads;
    for (int k = 0; k < n; ++k) {
      threads.emplace_back([&, k] {
        try {
          while (step_once(k)) {
          }
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  internal::WriteAsyncMetrics(ctx, std::move(rows), n, dead);
}

Verdict CheckAsyncConvergence(const MetricsTable& t) {
  if (t.rows() == 0) return Fail("no steps recorded");
  const size_t last = t.rows() - 1;
  const double distance = t.Value(last, "distance");
  const double pushes = t.Value(last, "pushes");
  const std::string msg = "distance to optimum " + Num(distance) + " after " + Num(pushes) +
                          " pushes (limits " + Num(kAsyncTolerance) + ", " +
                          Num(kAsyncPushBudget) + ")";
  return distance < kAsyncTolerance && pushes <= kAsyncPushBudget ? Pass(msg) : Fail(msg);
}

Verdict CheckAsyncFault(const MetricsTable& t) {
  Verdict converged = CheckAsyncConvergence(t);
  if (!converged.ok) return converged;
  const double initial = t.Value(0, "alive_workers");
  size_t first_loss = t.rows();
  for (size_t r = 0; r < t.rows(); ++r) {
    if (t.Value(r, "alive_workers") < initial) {
      first_loss = r;
      break;
    }
  }
  if (first_loss == t.rows()) return Fail("no worker died; " + converged.message);
  // Every survivor keeps seeing a strictly increasing shared step.
  std::map<int, double> last_seen;
  int survivor_rows = 0;
  for (size_t r = first_loss; r < t.rows(); ++r) {
    const int k = static_cast<int>(t.Value(r, "worker"));
    const double step = t.Value(r, "pulled_global_step");
    auto it = last_seen.find(k);
    if (it != last_seen.end() && step <= it->second) {
      return Fail("worker " + std::to_string(k) + " saw the global step stall at " + Num(step));
    }
    last_seen[k] = step;
    ++survivor_rows;
  }
  if (survivor_rows < 2) return Fail("no progress after the failure");
  return Pass(converged.message + "; " + std::to_string(survivor_rows) + " steps after " +
              Num(initial - t.Value(t.rows() - 1, "alive_workers")) + " worker(s) died");
}

// ---------------------------------------------------------------------------
// bench: weak scaling of the MLP step.

void RunBench(ScenarioContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  auto rows = RunBenchmark(c, c.bench_replicas);
  MetricsWriter& out = ctx.OpenMetrics(
      0, {"replicas", "per_replica_batch", "steps_per_sec", "examples_per_sec"});
  for (size_t i = 0; i < rows.size(); ++i) {
    MetricsRecord rec;
    rec.global_step = static_cast<int64_t>(i);
    rec.throughput = rows[i].examples_per_sec;
    rec.extras = {static_cast<double>(rows[i].replicas),
                  static_cast<double>(rows[i].per_replica_batch), rows[i].steps_per_sec,
                  rows[i].examples_per_sec};
    out.Write(rec);
    if (ctx.log) {
      *ctx.log << "replicas=" << rows[i].replicas << " steps/s=" << rows[i].steps_per_sec
               << " examples/s=" << rows[i].examples_per_sec << "\n";
    }
  }
}

Verdict CheckBench(const MetricsTable& t) {
  bool have_one = false;
  for (size_t r = 0; r < t.rows(); ++r) {
    const double replicas = t.Value(r, "replicas");
    const double steps = t.Value(r, "steps_per_sec");
    const double examples = t.Value(r, "examples_per_sec");
    const double expect = steps * replicas * t.Value(r, "per_replica_batch");
    if (std::abs(examples - expect) > 1e-9 * std::abs(expect)) {
      return Fail("examples/sec is not steps/sec x replicas x batch in row " + std::to_string(r));
    }
    if (replicas == 1 && steps > 0) have_one = true;
  }
  if (!have_one) return Fail("no R=1 row with positive throughput");
  return Pass(std::to_string(t.rows()) + " rows");
}

ExperimentConfig Defaults(const std::string& name, ReplicatorKind kind, Topology topology) {
  ExperimentConfig c;
  c.scenario = name;
  c.kind = kind;
  c.topology = topology;
  c.seed = 1;
  c.metrics_path = "metrics/" + name + ".csv";
  return c;
}

std::vector<Scenario> BuildScenarios() {
  std::vector<Scenario> out;
  {
    ExperimentConfig c = Defaults("sync_equiv", ReplicatorKind::kMultiDevice, {1, 4, 0});
    c.batch_size = 16;
    c.steps = 100;
    c.optimizer.rule = "momentum";
    c.optimizer.learning_rate = 0.05;
    c.optimizer.momentum = 0.9;
    c.optimizer.nesterov = true;
    out.push_back({"sync_equiv", "R replicas of batch B match one device with batch R*B", c,
                   RunSyncEquiv, CheckSyncEquiv});
  }
  {
    ExperimentConfig c = Defaults("minmax", ReplicatorKind::kMultiDevice, {1, 2, 0});
    c.steps = 500;
    c.batch_size = 1;
    c.optimizer.rule = "sgd";
    c.optimizer.learning_rate = 0.05;
    out.push_back({"minmax", "two optimizers on a regularized bilinear saddle", c, RunMinmax,
                   CheckMinmax});
  }
  {
    ExperimentConfig c = Defaults("batchnorm", ReplicatorKind::kMultiDevice, {1, 4, 0});
    c.batch_size = 4;
    c.steps = 20;
    out.push_back({"batchnorm", "cross-replica batch norm against the concatenated batch", c,
                   RunBatchNorm, CheckBatchNorm});
  }
  {
    ExperimentConfig c = Defaults("collectives", ReplicatorKind::kNon, {1, 1, 0});
    c.steps = 400;
    Scenario s{"collectives", "ring all-reduce, all-gather and broadcast against reference folds",
               c, RunCollectives, CheckCollectives};
    s.spawns_workers = false;
    out.push_back(s);
  }
  {
    ExperimentConfig c = Defaults("async_ls", ReplicatorKind::kMultiWorkerAsync, {4, 1, 1});
    c.batch_size = 16;
    c.steps = 1000;
    c.optimizer.rule = "sgd";
    c.optimizer.learning_rate = 0.02;
    out.push_back({"async_ls", "parameter-server SGD on least squares", c, RunAsync,
                   CheckAsyncConvergence});
  }
  {
    ExperimentConfig c = Defaults("async_fault", ReplicatorKind::kMultiWorkerAsync, {4, 1, 1});
    c.batch_size = 16;
    c.steps = 1000;
    c.optimizer.rule = "sgd";
    c.optimizer.learning_rate = 0.02;
    c.fault = FaultPlan{1, 50};
    out.push_back({"async_fault", "async_ls with one worker killed mid-run", c, RunAsync,
                   CheckAsyncFault});
  }
  {
    ExperimentConfig c = Defaults("bench", ReplicatorKind::kMultiDevice, {1, 8, 0});
    c.batch_size = 64;
    c.steps = 20;
    c.optimizer.rule = "momentum";
    Scenario s{"bench", "weak-scaling throughput of the MLP step", c, RunBench, CheckBench};
    s.spawns_workers = false;
    out.push_back(s);
  }
  return out;
}

}  // namespace

MetricsWriter& ScenarioContext::OpenMetrics(int num_losses, std::vector<std::string> extra_columns) {
  if (!writes_metrics()) throw EvaluationError("this process does not write metrics");
  writer_ = std::make_unique<MetricsWriter>(metrics_path, num_losses, std::move(extra_columns));
  return *writer_;
}

const std::vector<Scenario>& Scenarios() {
  static const std::vector<Scenario> scenarios = BuildScenarios();
  return scenarios;
}

const Scenario& FindScenario(const std::string& name) {
  std::string known;
  for (const auto& s : Scenarios()) {
    if (s.name == name) return s;
    known += (known.empty() ? "" : ", ") + s.name;
  }
  throw ConfigError("unknown scenario '" + name + "' (known: " + known + ")");
}

std::vector<BenchRow> RunBenchmark(const ExperimentConfig& c, const std::vector<int>& replicas) {
  const demos::Dataset data = demos::MakeBlobs(c.seed, kBlobRows, kBlobDim);
  demos::MlpConfig model;
  model.input_dim = kBlobDim;
  model.seed = c.seed;
  constexpr int kWarmup = 2;
  std::vector<BenchRow> rows;
  for (int r : replicas) {
    Deployment d;
    d.kind = r == 1 ? ReplicatorKind::kNon : ReplicatorKind::kMultiDevice;
    d.topology = Topology{1, r, 0};
    Replicator repl(d);
    auto mlp = demos::CreateMlp(repl, model);
    auto handle = repl.Run(Spec(
        [&](int) { return demos::SequentialBatches(data, r * c.batch_size, c.steps + kWarmup); },
        demos::MlpTrainStep(mlp, repl.WrapOptimizer(MakeOptimizer(c.optimizer, "opt")))));
    for (int i = 0; i < kWarmup; ++i) handle->Step();
    const auto t0 = Clock::now();
    int64_t steps = 0;
    while (handle->Step()) ++steps;
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    BenchRow row;
    row.replicas = r;
    row.per_replica_batch = c.batch_size;
    row.steps_per_sec = secs > 0 ? steps / secs : 0;
    row.examples_per_sec = row.steps_per_sec * r * c.batch_size;
    rows.push_back(row);
  }
  return rows;
}

namespace internal {

std::string WorkerRowsPath(const std::string& metrics_path, int worker) {
  return metrics_path + ".worker" + std::to_string(worker);
}

void AppendWorkerRow(const std::string& path, const WorkerRow& row) {
  std::ofstream out(path, std::ios::app);
  char line[512];
  std::snprintf(line, sizeof(line), "%d %lld %lld %.17g %.17g %llu %.17g %.17g\n", row.worker,
                static_cast<long long>(row.local_step), static_cast<long long>(row.pulled_step),
                row.loss, row.distance, static_cast<unsigned long long>(row.checksum),
                row.wall_time_ms, row.step_ms);
  out << line;
  out.flush();
  if (!out) throw EvaluationError("cannot append to " + path);
}

std::vector<WorkerRow> ReadWorkerRows(const std::string& path) {
  std::ifstream in(path);
  std::vector<WorkerRow> rows;
  WorkerRow r;
  long long local = 0, pulled = 0;
  unsigned long long checksum = 0;
  while (in >> r.worker >> local >> pulled >> r.loss >> r.distance >> checksum >> r.wall_time_ms >>
         r.step_ms) {
    r.local_step = local;
    r.pulled_step = pulled;
    r.checksum = checksum;
    rows.push_back(r);
  }
  return rows;
}

void WriteAsyncMetrics(ScenarioContext& ctx, std::vector<WorkerRow> rows, int workers,
                       const std::set<int>& dead) {
  std::stable_sort(rows.begin(), rows.end(), [](const WorkerRow& a, const WorkerRow& b) {
    return std::tie(a.pulled_step, a.worker, a.local_step) <
           std::tie(b.pulled_step, b.worker, b.local_step);
  });
  std::map<int, size_t> last_row;
  for (size_t i = 0; i < rows.size(); ++i) last_row[rows[i].worker] = i;
  MetricsWriter& out = ctx.OpenMetrics(
      workers, {"worker", "local_step", "pulled_global_step", "pushes", "alive_workers", "distance"});
  std::vector<double> losses(workers, std::nan(""));
  for (size_t i = 0; i < rows.size(); ++i) {
    const WorkerRow& row = rows[i];
    int alive = workers;
    for (int k : dead) {
      auto it = last_row.find(k);
      if (it == last_row.end() || it->second < i) --alive;
    }
    losses[row.worker] = row.loss;
    MetricsRecord rec;
    rec.global_step = static_cast<int64_t>(i);
    rec.wall_time_ms = row.wall_time_ms;
    rec.losses = losses;
    rec.throughput = Throughput(ctx.config.batch_size, row.step_ms);
    rec.checksum = row.checksum;
    rec.extras = {static_cast<double>(row.worker), static_cast<double>(row.local_step),
                  static_cast<double>(row.pulled_step), static_cast<double>(i + 1),
                  static_cast<double>(alive), row.distance};
    out.Write(rec);
  }
}

}  // namespace internal
}  // namespace replicator::harness
