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

// Deployments of a replicated step function.
//
//   non                 1 worker x 1 device
//   multi_device        1 worker x D devices, synchronous, in-graph
//   multi_worker        W workers x D devices, synchronous, in-graph
//   multi_worker_async  W workers x 1 device, parameter servers
//
// Synchronous kinds mirror every variable on each replica's first logical
// device. In a multi-process deployment every worker builds and stitches
// the full program and executes only its own replicas; the chief (worker 0)
// receives every replica's outputs.

#ifndef REPLICATOR_REPLICATOR_H_
#define REPLICATOR_REPLICATOR_H_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "replicator/collectives.h"
#include "replicator/optimizer.h"
#include "replicator/paramserver.h"
#include "replicator/replica.h"
#include "replicator/transport.h"

namespace replicator {

enum class ReplicatorKind { kNon, kMultiDevice, kMultiWorker, kMultiWorkerAsync };

const char* ReplicatorKindName(ReplicatorKind kind);
// Throws ConfigError for unknown names.
ReplicatorKind ParseReplicatorKind(std::string_view name);

struct Topology {
  int workers = 1;
  int devices_per_worker = 1;
  int ps_tasks = 0;
};

// Throws ConfigError naming the violated constraint.
void ValidateTopology(ReplicatorKind kind, const Topology& topology);

struct Deployment {
  ReplicatorKind kind = ReplicatorKind::kNon;
  Topology topology;
  // Hosts the local devices. Null creates an in-process transport for the
  // whole topology.
  std::shared_ptr<Transport> transport;
  // Worker task executed by this process. Unset runs every worker here.
  std::optional<int> local_worker;
  // Logical devices per replica (model parallelism). Must divide
  // devices_per_worker and match ReplicaSpec::devices_per_replica.
  int devices_per_replica = 1;
  CommunicatorOptions collective_options;
  ParamClientOptions param_client_options;
  // Parameter servers whose device is hosted by `transport` are started by
  // the replicator.
  ParamServerOptions param_server_options;
};

struct StepResult {
  int64_t global_step = 0;
  // One entry per replica. In a multi-process deployment only the chief
  // sees every replica; other workers see their own.
  std::vector<TensorNest> outputs;
  // map_gather / map_reduce results, by label. Chief only.
  std::map<std::string, Tensor> driver_values;
};

class Replicator;

// Driver loop handle of a synchronous deployment.
class StepHandle {
 public:
  ~StepHandle();
  // One global step across all replicas; nullopt once any local input
  // pipeline is exhausted. A failing replica poisons the handle: the error
  // is rethrown here and every later call fails.
  std::optional<StepResult> Step();
  int64_t global_step() const { return global_step_; }
  const StitchedProgram& program() const { return program_; }
  // Overrides a step value (e.g. a learning rate) for later steps.
  void SetStepValue(const std::string& name, double value) { overrides_[name] = value; }

 private:
  friend class Replicator;
  StepHandle(Replicator& repl, ReplicaSpec spec, StitchedProgram program,
             std::vector<std::unique_ptr<InputSource>> sources,
             std::vector<std::optional<TensorNest>> peeked);

  std::optional<std::vector<TensorNest>> NextInputs();
  void ExchangeOutputs(StepResult& result);

  Replicator& repl_;
  ReplicaSpec spec_;
  StitchedProgram program_;
  // Indexed by local worker (PER_WORKER) or local replica (PER_REPLICA).
  std::vector<std::unique_ptr<InputSource>> sources_;
  std::vector<std::optional<TensorNest>> peeked_;
  std::vector<std::unique_ptr<Communicator>> comms_;  // per local replica
  std::map<std::string, double> overrides_;
  int64_t global_step_ = 0;
  std::optional<std::string> poisoned_;
};

struct AsyncStepResult {
  int64_t local_step = 0;
  // Value of the shared step counter before this step's increment.
  int64_t global_step = 0;
  TensorNest outputs;
  int pushes_rejected = 0;
};

// One worker of a between-graph deployment: pull, compute, push.
class AsyncWorker {
 public:
  // nullopt once the input pipeline is exhausted.
  std::optional<AsyncStepResult> Step();
  int worker() const { return graph_.context.replica_id; }
  int64_t local_step() const { return local_step_; }
  ParamClient& client() { return client_; }
  const ReplicaGraph& graph() const { return graph_; }

 private:
  friend class Replicator;
  AsyncWorker(ReplicaGraph graph, std::vector<VariableHandle> variables,
              std::unique_ptr<InputSource> source, std::optional<TensorNest> peeked,
              ParamClient client);

  ReplicaGraph graph_;
  std::vector<VariableHandle> variables_;
  std::vector<std::string> names_;
  std::unique_ptr<InputSource> source_;
  std::optional<TensorNest> peeked_;
  ParamClient client_;
  int64_t local_step_ = 0;
};

class Replicator {
 public:
  explicit Replicator(Deployment deployment);
  ~Replicator();
  Replicator(const Replicator&) = delete;
  Replicator& operator=(const Replicator&) = delete;

  ReplicatorKind kind() const { return deployment_.kind; }
  const Topology& topology() const { return deployment_.topology; }
  bool synchronous() const { return kind() != ReplicatorKind::kMultiWorkerAsync; }
  Transport& transport() { return *transport_; }
  VariableStore& store() { return store_; }

  // Replicas in global order: worker-major, then device.
  int num_replicas() const { return static_cast<int>(replica_devices_.size()); }
  int replicas_per_worker() const;
  const std::vector<std::vector<DeviceTag>>& replica_devices() const { return replica_devices_; }
  bool IsLocalReplica(int replica) const;
  std::vector<int> local_replicas() const;
  std::vector<int> local_workers() const;
  bool is_chief() const;

  // Creates a variable inside the replicator's scope: mirrored on every
  // replica (synchronous kinds) or homed on a parameter-server shard with
  // per-worker caches (asynchronous). Must precede Run.
  VariableHandle CreateVariable(const std::string& name, const Shape& shape,
                                const Initializer& init, DType dtype = DType::kF64,
                                bool trainable = true, int logical_device = 0);
  const std::vector<VariableHandle>& variables() const { return variables_; }
  std::vector<VariableHandle> trainable_variables() const;

  // Gradients are averaged across replicas before the update rule. Throws
  // ConfigError on the asynchronous kind.
  Optimizer WrapOptimizer(const Optimizer& optimizer) const;

  // Builds, stitches and returns the driver loop. Synchronous kinds only.
  std::unique_ptr<StepHandle> Run(ReplicaSpec spec);
  // One handle per local worker. Asynchronous kind only. The chief seeds
  // the parameter servers; other workers wait until they are ready.
  std::vector<std::unique_ptr<AsyncWorker>> RunWorkers(ReplicaSpec spec);

  // Checksum of each local replica's trainable variable instances.
  std::map<int, uint64_t> ReplicaChecksums() const;

  // Parameter servers hosted by this process.
  const std::vector<std::unique_ptr<ParamServer>>& param_servers() const {
    return param_servers_;
  }

 private:
  friend class StepHandle;

  Deployment deployment_;
  std::shared_ptr<Transport> transport_;
  VariableStore store_;
  std::vector<std::vector<DeviceTag>> replica_devices_;
  std::vector<VariableHandle> variables_;
  std::vector<std::unique_ptr<ParamServer>> param_servers_;
  bool running_ = false;
};

// Wraps a variable created outside a replicator; every replica shares it.
VariableHandle SharedVariable(std::shared_ptr<VariableResource> resource);

}  // namespace replicator

#endif  // REPLICATOR_REPLICATOR_H_
