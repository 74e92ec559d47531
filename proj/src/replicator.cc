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

#include "replicator/replicator.h"

#include <exception>
#include <thread>

#include "replicator/executor.h"
#include "replicator/tcp_transport.h"

namespace replicator {
namespace {

std::string Name(ReplicatorKind kind) { return ReplicatorKindName(kind); }

// Makes a failed replica visible to its peers so nobody waits on it.
void Abandon(Transport& transport, const DeviceTag& device) {
  if (auto* in_process = dynamic_cast<InProcessTransport*>(&transport)) {
    in_process->Kill(device);
  } else if (auto* tcp = dynamic_cast<TcpTransport*>(&transport)) {
    tcp->Crash();
  }
}

std::exception_ptr RootCause(const std::vector<std::exception_ptr>& errors) {
  std::exception_ptr first;
  for (const auto& e : errors) {
    if (!e) continue;
    if (!first) first = e;
    try {
      std::rethrow_exception(e);
    } catch (const TransportError&) {
    } catch (...) {
      return e;
    }
  }
  return first;
}

std::string What(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& ex) {
    return ex.what();
  } catch (...) {
    return "unknown error";
  }
}

bool IsMapKind(const std::string& kind) {
  return kind == collective_kinds::kMapGather || kind == collective_kinds::kMapReduce;
}

}  // namespace

const char* ReplicatorKindName(ReplicatorKind kind) {
  switch (kind) {
    case ReplicatorKind::kNon:
      return "non";
    case ReplicatorKind::kMultiDevice:
      return "multi_device";
    case ReplicatorKind::kMultiWorker:
      return "multi_worker";
    case ReplicatorKind::kMultiWorkerAsync:
      return "multi_worker_async";
  }
  return "?";
}

ReplicatorKind ParseReplicatorKind(std::string_view name) {
  for (auto kind : {ReplicatorKind::kNon, ReplicatorKind::kMultiDevice,
                    ReplicatorKind::kMultiWorker, ReplicatorKind::kMultiWorkerAsync}) {
    if (name == ReplicatorKindName(kind)) return kind;
  }
  throw ConfigError("unknown replicator kind '" + std::string(name) +
                    "'; expected non, multi_device, multi_worker or multi_worker_async");
}

void ValidateTopology(ReplicatorKind kind, const Topology& t) {
  const std::string k = Name(kind);
  if (t.workers < 1) throw ConfigError(k + ": worker count must be at least 1");
  if (t.devices_per_worker < 1) throw ConfigError(k + ": devices per worker must be at least 1");
  if (t.ps_tasks < 0) throw ConfigError(k + ": parameter server count cannot be negative");
  switch (kind) {
    case ReplicatorKind::kNon:
      if (t.workers != 1 || t.devices_per_worker != 1) {
        throw ConfigError("non: at most 1 worker and 1 device per worker, got " +
                          std::to_string(t.workers) + " x " +
                          std::to_string(t.devices_per_worker));
      }
      break;
    case ReplicatorKind::kMultiDevice:
      if (t.workers != 1) {
        throw ConfigError("multi_device: at most 1 worker, got " + std::to_string(t.workers));
      }
      break;
    case ReplicatorKind::kMultiWorker:
      break;
    case ReplicatorKind::kMultiWorkerAsync:
      if (t.devices_per_worker != 1) {
        throw ConfigError("multi_worker_async: at most 1 device per worker, got " +
                          std::to_string(t.devices_per_worker));
      }
      if (t.ps_tasks < 1) {
        throw ConfigError("multi_worker_async: needs at least 1 parameter server");
      }
      return;
  }
  if (t.ps_tasks != 0) {
    throw ConfigError(k + ": synchronous replication does not use parameter servers, got " +
                      std::to_string(t.ps_tasks));
  }
}

VariableHandle SharedVariable(std::shared_ptr<VariableResource> resource) {
  const std::string name = resource->name();
  return std::make_shared<ReplicatedVariable>(
      name, std::vector<std::shared_ptr<VariableResource>>{std::move(resource)});
}

Replicator::Replicator(Deployment deployment) : deployment_(std::move(deployment)) {
  const Topology& t = deployment_.topology;
  ValidateTopology(deployment_.kind, t);
  const int dpr = deployment_.devices_per_replica;
  if (dpr < 1 || t.devices_per_worker % dpr != 0) {
    throw ConfigError("devices per replica (" + std::to_string(dpr) +
                      ") must divide devices per worker (" +
                      std::to_string(t.devices_per_worker) + ")");
  }
  transport_ = deployment_.transport
                   ? deployment_.transport
                   : std::make_shared<InProcessTransport>(LocalClusterSpec(t.workers, t.ps_tasks));
  const ClusterSpec& spec = transport_->spec();
  if (spec.num_tasks("worker") != t.workers) {
    throw ConfigError("cluster spec lists " + std::to_string(spec.num_tasks("worker")) +
                      " workers, topology expects " + std::to_string(t.workers));
  }
  if (spec.num_tasks("ps") != t.ps_tasks) {
    throw ConfigError("cluster spec lists " + std::to_string(spec.num_tasks("ps")) +
                      " parameter servers, topology expects " + std::to_string(t.ps_tasks));
  }
  if (deployment_.local_worker &&
      (*deployment_.local_worker < 0 || *deployment_.local_worker >= t.workers)) {
    throw ConfigError("local worker " + std::to_string(*deployment_.local_worker) +
                      " is outside the cluster");
  }
  for (int w = 0; w < t.workers; ++w) {
    for (int first = 0; first < t.devices_per_worker; first += dpr) {
      std::vector<DeviceTag> devices;
      for (int j = 0; j < dpr; ++j) devices.push_back(DeviceTag{"worker", w, first + j});
      replica_devices_.push_back(std::move(devices));
    }
  }
  for (int p = 0; p < t.ps_tasks; ++p) {
    const DeviceTag device{"ps", p, 0};
    if (!transport_->IsLocal(device)) continue;
    param_servers_.push_back(
        std::make_unique<ParamServer>(transport_->Connect(device), deployment_.param_server_options));
    param_servers_.back()->Start();
  }
}

Replicator::~Replicator() {
  for (auto& ps : param_servers_) ps->Stop();
}

int Replicator::replicas_per_worker() const {
  return deployment_.topology.devices_per_worker / deployment_.devices_per_replica;
}

bool Replicator::IsLocalReplica(int replica) const {
  return !deployment_.local_worker ||
         replica_devices_.at(replica)[0].task == *deployment_.local_worker;
}

std::vector<int> Replicator::local_replicas() const {
  std::vector<int> out;
  for (int r = 0; r < num_replicas(); ++r) {
    if (IsLocalReplica(r)) out.push_back(r);
  }
  return out;
}

std::vector<int> Replicator::local_workers() const {
  if (deployment_.local_worker) return {*deployment_.local_worker};
  std::vector<int> out;
  for (int w = 0; w < deployment_.topology.workers; ++w) out.push_back(w);
  return out;
}

bool Replicator::is_chief() const {
  return !deployment_.local_worker || *deployment_.local_worker == 0;
}

VariableHandle Replicator::CreateVariable(const std::string& name, const Shape& shape,
                                          const Initializer& init, DType dtype, bool trainable,
                                          int logical_device) {
  if (running_) {
    throw ConstructionError("variable '" + name + "' created after run began");
  }
  for (const auto& v : variables_) {
    if (v->name() == name) throw ConstructionError("variable '" + name + "' already exists");
  }
  if (logical_device < 0 || logical_device >= deployment_.devices_per_replica) {
    throw ConstructionError("logical device " + std::to_string(logical_device) +
                            " is not mapped; replicas have " +
                            std::to_string(deployment_.devices_per_replica) + " device(s)");
  }
  std::vector<std::shared_ptr<VariableResource>> instances;
  VariableHandle handle;
  if (synchronous()) {
    for (const auto& devices : replica_devices_) {
      instances.push_back(
          store_.GetOrCreate(name, shape, init, devices[logical_device], dtype, trainable));
    }
    handle = std::make_shared<ReplicatedVariable>(name, std::move(instances));
  } else {
    // Worker-side caches are refreshed by every pull and never trained
    // directly.
    for (const auto& devices : replica_devices_) {
      instances.push_back(store_.GetOrCreate(name, shape, init, devices[0], dtype, false));
    }
    const ShardMap shards(transport_->spec());
    handle = std::make_shared<ReplicatedVariable>(name, std::move(instances),
                                                  shards.ServerFor(name), trainable);
  }
  variables_.push_back(handle);
  return handle;
}

std::vector<VariableHandle> Replicator::trainable_variables() const {
  std::vector<VariableHandle> out;
  for (const auto& v : variables_) {
    if (v->trainable()) out.push_back(v);
  }
  return out;
}

Optimizer Replicator::WrapOptimizer(const Optimizer& optimizer) const {
  if (!synchronous()) {
    throw ConfigError(
        "multi_worker_async does not average gradients across replicas; pass the optimizer "
        "unwrapped and its deltas are pushed to the parameter servers");
  }
  return optimizer.WithGradientAveraging();
}

std::map<int, uint64_t> Replicator::ReplicaChecksums() const {
  std::map<int, uint64_t> out;
  for (int r : local_replicas()) {
    std::vector<std::shared_ptr<VariableResource>> vars;
    for (const auto& v : variables_) {
      if (v->trainable()) vars.push_back(v->For(r));
    }
    out[r] = VariablesChecksum(vars);
  }
  return out;
}

std::unique_ptr<StepHandle> Replicator::Run(ReplicaSpec spec) {
  if (!synchronous()) {
    throw ConfigError("multi_worker_async runs one independent loop per worker; use RunWorkers");
  }
  if (!spec.step_fn || !spec.input_fn) throw ConfigError("replica spec needs input_fn and step_fn");
  if (spec.devices_per_replica != deployment_.devices_per_replica) {
    throw ConfigError("step function expects " + std::to_string(spec.devices_per_replica) +
                      " devices per replica, deployment provides " +
                      std::to_string(deployment_.devices_per_replica));
  }
  running_ = true;

  std::vector<std::unique_ptr<InputSource>> sources;
  std::vector<std::optional<TensorNest>> peeked;
  std::optional<SpecNest> shard_spec;
  const bool per_worker = spec.input_mode == InputMode::kPerWorker;
  for (int id : per_worker ? local_workers() : local_replicas()) {
    sources.push_back(spec.input_fn(id));
    if (!sources.back()) throw ConfigError("input_fn returned no source");
    std::optional<TensorNest> first = sources.back()->Next();
    if (!first) throw ConfigError("input pipeline " + std::to_string(id) + " is empty");
    if (!shard_spec) {
      shard_spec = per_worker
                       ? SpecOf(SplitInputs(*first, replicas_per_worker(), spec.split_fn)[0])
                       : SpecOf(*first);
    }
    peeked.push_back(std::move(first));
  }

  std::vector<ReplicaGraph> replicas;
  for (int r = 0; r < num_replicas(); ++r) {
    ReplicaContext ctx;
    ctx.replica_id = r;
    ctx.num_replicas = num_replicas();
    ctx.logical_devices = replica_devices_[r];
    replicas.push_back(BuildReplica(spec.step_fn, *shard_spec, std::move(ctx), store_));
  }
  StitchedProgram program = Stitch(std::move(replicas));
  return std::unique_ptr<StepHandle>(
      new StepHandle(*this, std::move(spec), std::move(program), std::move(sources),
                     std::move(peeked)));
}

StepHandle::StepHandle(Replicator& repl, ReplicaSpec spec, StitchedProgram program,
                       std::vector<std::unique_ptr<InputSource>> sources,
                       std::vector<std::optional<TensorNest>> peeked)
    : repl_(repl),
      spec_(std::move(spec)),
      program_(std::move(program)),
      sources_(std::move(sources)),
      peeked_(std::move(peeked)) {
  std::vector<DeviceTag> members;
  for (const auto& devices : repl_.replica_devices()) members.push_back(devices[0]);
  for (int r : repl_.local_replicas()) {
    comms_.push_back(std::make_unique<Communicator>(
        repl_.transport().Connect(members[r]), members, repl_.deployment_.collective_options));
  }
}

StepHandle::~StepHandle() = default;

std::optional<std::vector<TensorNest>> StepHandle::NextInputs() {
  std::vector<TensorNest> inputs(repl_.num_replicas());
  const bool per_worker = spec_.input_mode == InputMode::kPerWorker;
  const std::vector<int> ids = per_worker ? repl_.local_workers() : repl_.local_replicas();
  const int per = repl_.replicas_per_worker();
  for (size_t i = 0; i < ids.size(); ++i) {
    std::optional<TensorNest> element;
    if (peeked_[i]) {
      element = std::move(peeked_[i]);
      peeked_[i].reset();
    } else {
      element = sources_[i]->Next();
    }
    if (!element) return std::nullopt;
    if (per_worker) {
      auto shards = SplitInputs(*element, per, spec_.split_fn);
      for (int k = 0; k < per; ++k) inputs[ids[i] * per + k] = std::move(shards[k]);
    } else {
      inputs[ids[i]] = std::move(*element);
    }
  }
  return inputs;
}

std::optional<StepResult> StepHandle::Step() {
  if (poisoned_) throw EvaluationError("step handle failed earlier: " + *poisoned_);
  auto inputs = NextInputs();
  if (!inputs) return std::nullopt;

  std::map<std::string, double> values = StepValuesAt(program_.step_value_fns, global_step_);
  for (const auto& [name, v] : overrides_) values[name] = v;
  const uint64_t generation = static_cast<uint64_t>(global_step_) + 1;

  const std::vector<int> local = repl_.local_replicas();
  StepResult result;
  result.global_step = global_step_;
  result.outputs.resize(repl_.num_replicas());
  std::vector<std::exception_ptr> errors(local.size());
  auto run = [&](size_t i) {
    const int r = local[i];
    try {
      Communicator& comm = *comms_[i];
      comm.BeginGeneration(generation);
      CommunicatorRuntime runtime(comm);
      const auto fetches = program_.FetchesFor(r);
      const auto feeds = program_.FeedsFor(r, (*inputs)[r], values);
      const auto got = Evaluate(program_.graph, fetches, feeds, EvalOptions{r, &runtime});
      const size_t n = program_.outputs[r].num_leaves();
      result.outputs[r] = program_.outputs[r].Pack(std::vector<Tensor>(got.begin(), got.begin() + n));
    } catch (...) {
      errors[i] = std::current_exception();
      Abandon(repl_.transport(), repl_.replica_devices()[r][0]);
    }
  };
  if (local.size() == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (size_t i = 0; i < local.size(); ++i) threads.emplace_back(run, i);
    for (auto& t : threads) t.join();
  }
  if (auto error = RootCause(errors)) {
    poisoned_ = What(error);
    std::rethrow_exception(error);
  }

  try {
    if (repl_.is_chief()) {
      std::vector<DeviceTag> members;
      for (const auto& devices : repl_.replica_devices()) members.push_back(devices[0]);
      Mesh driver = repl_.transport().Connect(members[0]);
      for (const auto& binding : program_.bindings) {
        if (!IsMapKind(binding.kind)) continue;
        auto vals = CollectMapValues(driver, members, generation, binding.label,
                                     repl_.deployment_.collective_options);
        result.driver_values[binding.label] =
            FoldCollective(program_.graph.node(binding.nodes[0]), vals);
      }
    }
    ExchangeOutputs(result);
  } catch (const std::exception& e) {
    poisoned_ = e.what();
    throw;
  }
  ++global_step_;
  return result;
}

void StepHandle::ExchangeOutputs(StepResult& result) {
  if (!repl_.deployment_.local_worker || repl_.topology().workers == 1) return;
  const DeviceTag chief = repl_.replica_devices()[0][0];
  const std::string prefix = "out/" + std::to_string(global_step_) + "/";
  if (repl_.is_chief()) {
    Mesh mesh = repl_.transport().Connect(chief);
    for (int r = 0; r < repl_.num_replicas(); ++r) {
      if (repl_.IsLocalReplica(r)) continue;
      const DeviceTag& src = repl_.replica_devices()[r][0];
      std::vector<Tensor> leaves;
      for (size_t i = 0; i < program_.outputs[r].num_leaves(); ++i) {
        leaves.push_back(mesh.Recv(src, prefix + std::to_string(r) + "/" + std::to_string(i),
                                   RecvOptions{repl_.deployment_.collective_options.timeout, {}}));
      }
      result.outputs[r] = program_.outputs[r].Pack(leaves);
    }
    return;
  }
  for (size_t i = 0; i < comms_.size(); ++i) {
    const int r = repl_.local_replicas()[i];
    Mesh mesh = comms_[i]->mesh();
    const auto leaves = result.outputs[r].Flatten();
    for (size_t k = 0; k < leaves.size(); ++k) {
      mesh.Send(chief, prefix + std::to_string(r) + "/" + std::to_string(k), leaves[k]);
    }
  }
}

std::vector<std::unique_ptr<AsyncWorker>> Replicator::RunWorkers(ReplicaSpec spec) {
  if (synchronous()) {
    throw ConfigError(Name(kind()) + " is synchronous; use Run");
  }
  if (!spec.step_fn || !spec.input_fn) throw ConfigError("replica spec needs input_fn and step_fn");
  if (spec.devices_per_replica != 1) {
    throw ConfigError("multi_worker_async: at most 1 device per worker");
  }
  running_ = true;
  const ShardMap shards(transport_->spec());
  std::vector<int> order = local_workers();
  std::vector<std::unique_ptr<AsyncWorker>> out;
  for (int w : order) {
    const DeviceTag device = replica_devices_[w][0];
    ParamClient client(transport_->Connect(device), shards, deployment_.param_client_options);
    if (w == 0) {
      for (const auto& v : variables_) client.Init(v->name(), v->For(0)->Read());
      client.Init(kGlobalStepName, Tensor::Scalar(0));
      client.MarkReady();
    } else {
      client.WaitReady();
    }
    auto source = spec.input_fn(w);
    if (!source) throw ConfigError("input_fn returned no source");
    std::optional<TensorNest> first = source->Next();
    if (!first) throw ConfigError("input pipeline " + std::to_string(w) + " is empty");
    const SpecNest element = SpecOf(SplitInputs(*first, 1, spec.split_fn)[0]);
    ReplicaContext ctx;
    ctx.replica_id = w;
    ctx.num_replicas = num_replicas();
    ctx.logical_devices = {device};
    ctx.collectives_allowed = false;
    ctx.push_updates = true;
    ReplicaGraph graph = BuildReplica(spec.step_fn, element, std::move(ctx), store_);
    out.push_back(std::unique_ptr<AsyncWorker>(new AsyncWorker(
        std::move(graph), variables_, std::move(source), std::move(first), std::move(client))));
  }
  return out;
}

AsyncWorker::AsyncWorker(ReplicaGraph graph, std::vector<VariableHandle> variables,
                         std::unique_ptr<InputSource> source, std::optional<TensorNest> peeked,
                         ParamClient client)
    : graph_(std::move(graph)),
      variables_(std::move(variables)),
      source_(std::move(source)),
      peeked_(std::move(peeked)),
      client_(std::move(client)) {
  for (const auto& v : variables_) names_.push_back(v->name());
  names_.push_back(kGlobalStepName);
}

std::optional<AsyncStepResult> AsyncWorker::Step() {
  std::optional<TensorNest> element;
  if (peeked_) {
    element = std::move(peeked_);
    peeked_.reset();
  } else {
    element = source_->Next();
  }
  if (!element) return std::nullopt;
  const TensorNest input = SplitInputs(*element, 1)[0];

  const int w = worker();
  std::vector<Tensor> pulled = client_.Pull(names_);
  for (size_t i = 0; i < variables_.size(); ++i) variables_[i]->For(w)->Assign(pulled[i]);
  AsyncStepResult result;
  result.global_step = static_cast<int64_t>(pulled.back().ToDoubles()[0]);
  result.local_step = local_step_;

  const auto values = StepValuesAt(graph_.step_value_fns, result.global_step);
  const auto fetches = graph_.Fetches();
  const auto got = Evaluate(graph_.graph, fetches, graph_.Feeds(input, values));
  const size_t n = graph_.outputs.num_leaves();
  result.outputs = graph_.outputs.Pack(std::vector<Tensor>(got.begin(), got.begin() + n));
  for (size_t k = 0; k < graph_.pushes.size(); ++k) {
    if (!client_.Push(graph_.pushes[k].var->name(), got[n + k])) ++result.pushes_rejected;
  }
  client_.Push(kGlobalStepName, Tensor::Scalar(1));
  ++local_step_;
  return result;
}

}  // namespace replicator
