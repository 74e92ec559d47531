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

// Replicas, input splitting, and stitching of independently built replica
// graphs into one program.
//
// A replica is built by running the user's step function against a fresh
// Graph. Cross-replica primitives called during the build append a
// placeholder and log a CollectiveCall. Once every replica exists, Stitch()
// checks that all replicas logged the same calls and rewrites each
// placeholder into a collective node bound to every replica's input.

#ifndef REPLICATOR_REPLICA_H_
#define REPLICATOR_REPLICA_H_

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "replicator/executor.h"
#include "replicator/graph.h"
#include "replicator/nest.h"
#include "replicator/variables.h"

namespace replicator {

struct TensorSpec {
  Shape shape;
  DType dtype = DType::kF64;
};

using TensorNest = Nest<Tensor>;
using NodeNest = Nest<NodeRef>;
using SpecNest = Nest<TensorSpec>;

SpecNest SpecOf(const TensorNest& value);

// Stepwise data source. Next() returns nullopt once exhausted.
class InputSource {
 public:
  virtual ~InputSource() = default;
  virtual SpecNest element_spec() const = 0;
  virtual std::optional<TensorNest> Next() = 0;
};

// Yields a fixed list of elements once, then ends.
class ListSource : public InputSource {
 public:
  explicit ListSource(std::vector<TensorNest> elements);
  SpecNest element_spec() const override { return spec_; }
  std::optional<TensorNest> Next() override;

 private:
  std::vector<TensorNest> elements_;
  SpecNest spec_;
  size_t pos_ = 0;
};

// Calls `fn` for every element; ends when it returns nullopt.
class CallableSource : public InputSource {
 public:
  CallableSource(SpecNest spec, std::function<std::optional<TensorNest>()> fn)
      : spec_(std::move(spec)), fn_(std::move(fn)) {}
  SpecNest element_spec() const override { return spec_; }
  std::optional<TensorNest> Next() override { return fn_(); }

 private:
  SpecNest spec_;
  std::function<std::optional<TensorNest>()> fn_;
};

enum class InputMode { kPerWorker, kPerReplica };

class ReplicaBuilder;

// PER_WORKER: called once per worker with the worker index; each element
// is split across that worker's replicas. PER_REPLICA: called once per
// replica with the replica index.
using InputFn = std::function<std::unique_ptr<InputSource>(int pipeline_id)>;
using StepFn = std::function<NodeNest(ReplicaBuilder&, const NodeNest& inputs)>;
using SplitFn = std::function<std::vector<TensorNest>(const TensorNest& batch, int num_shards)>;

struct ReplicaSpec {
  InputFn input_fn;
  StepFn step_fn;
  int devices_per_replica = 1;
  InputMode input_mode = InputMode::kPerWorker;
  SplitFn split_fn;  // defaults to the leading dimension
};

// Splits every leaf into `num_replicas` equal slices along its leading
// dimension, or delegates to `split_fn`.
std::vector<TensorNest> SplitInputs(const TensorNest& batch, int num_replicas,
                                    const SplitFn& split_fn = nullptr);

// Splitter along an arbitrary axis, e.g. 1 for time-major sequences.
SplitFn SplitAlongAxis(int axis);

struct CollectiveCall {
  std::string label;
  std::string kind;
  std::string fold;  // map_reduce only
  Shape shape;
  DType dtype = DType::kF64;
  NodeRef placeholder;
  NodeRef input;

  std::string ToString() const;
};

struct ReplicaContext {
  int replica_id = 0;
  int num_replicas = 1;
  std::vector<DeviceTag> logical_devices;
  std::vector<CollectiveCall> pending;
  // Cleared for between-graph replication, which only aggregates
  // gradients through parameter servers.
  bool collectives_allowed = true;
  // Optimizers hand their per-variable deltas to the runner (AddPush)
  // instead of assigning them in the graph.
  bool push_updates = false;
};

// A variable as the step function sees it: one instance per replica
// (mirrored) or a single instance shared by every replica.
class ReplicatedVariable {
 public:
  ReplicatedVariable(std::string name, std::vector<std::shared_ptr<VariableResource>> instances);
  // Variable whose authoritative value lives on `home` (a parameter
  // server); `instances` are per-replica caches.
  ReplicatedVariable(std::string name, std::vector<std::shared_ptr<VariableResource>> instances,
                     DeviceTag home, bool trainable);

  const std::string& name() const { return name_; }
  const Shape& shape() const { return instances_[0]->shape(); }
  DType dtype() const { return instances_[0]->dtype(); }
  bool trainable() const { return trainable_; }
  const std::optional<DeviceTag>& home() const { return home_; }

  const std::shared_ptr<VariableResource>& For(int replica) const;
  const std::vector<std::shared_ptr<VariableResource>>& instances() const { return instances_; }

 private:
  std::string name_;
  std::vector<std::shared_ptr<VariableResource>> instances_;
  std::optional<DeviceTag> home_;
  bool trainable_ = true;
};

using VariableHandle = std::shared_ptr<ReplicatedVariable>;

// Value of a per-step scalar as a function of the global step.
using StepValueFn = std::function<double(int64_t global_step)>;

std::map<std::string, double> StepValuesAt(const std::map<std::string, StepValueFn>& fns,
                                           int64_t global_step);

struct PushOp {
  VariableHandle var;
  NodeRef delta;
};

// Construction-time view of one replica, passed to the step function.
class ReplicaBuilder {
 public:
  ReplicaBuilder(Graph& graph, ReplicaContext& context, VariableStore& store);

  Graph& graph() { return graph_; }
  const ReplicaContext& context() const { return context_; }
  int replica_id() const { return context_.replica_id; }
  int num_replicas() const { return context_.num_replicas; }

  // Physical device of a logical device index.
  const DeviceTag& device(int logical = 0) const;
  // Places nodes added in the returned scope on `logical`.
  [[nodiscard]] Graph::DeviceScope OnDevice(int logical);

  std::shared_ptr<VariableResource> Resolve(const VariableHandle& var) const;
  NodeRef Read(const VariableHandle& var);

  // Replica-local state such as optimizer slots, on logical device 0.
  std::shared_ptr<VariableResource> LocalVariable(const std::string& name, const Shape& shape,
                                                  const Initializer& init,
                                                  DType dtype = DType::kF64);

  NodeRef RecordCollective(const std::string& kind, NodeRef input, const std::string& label,
                           const std::string& fold = "");
  NodeRef AllSum(NodeRef x, const std::string& label);
  NodeRef AllMean(NodeRef x, const std::string& label);
  NodeRef AllMax(NodeRef x, const std::string& label);
  NodeRef AllGather(NodeRef x, const std::string& label);
  NodeRef Broadcast(NodeRef x, const std::string& label);
  NodeRef MapGather(NodeRef x, const std::string& label);
  NodeRef MapReduce(NodeRef x, const std::string& fold, const std::string& label);

  // Side-effecting ops that must run every step.
  void AddUpdate(NodeRef op) { updates_.push_back(op); }
  const std::vector<NodeRef>& updates() const { return updates_; }

  // Additive update sent to the variable's home instead of assigned here.
  void AddPush(const VariableHandle& var, NodeRef delta);
  const std::vector<PushOp>& pushes() const { return pushes_; }

  // Scalar fed by the runner every step under `name` (e.g. "lr"). With
  // `fn`, the runner computes the value from the global step.
  NodeRef StepValue(const std::string& name, DType dtype = DType::kF64);
  NodeRef StepValue(const std::string& name, StepValueFn fn, DType dtype = DType::kF64);
  const std::map<std::string, NodeRef>& step_values() const { return step_values_; }
  const std::map<std::string, StepValueFn>& step_value_fns() const { return step_value_fns_; }

 private:
  Graph& graph_;
  ReplicaContext& context_;
  VariableStore& store_;
  std::vector<NodeRef> updates_;
  std::vector<PushOp> pushes_;
  std::map<std::string, NodeRef> step_values_;
  std::map<std::string, StepValueFn> step_value_fns_;
};

struct ReplicaGraph {
  Graph graph;
  ReplicaContext context;
  NodeNest inputs;
  NodeNest outputs;
  std::vector<NodeRef> updates;
  std::vector<PushOp> pushes;
  std::map<std::string, NodeRef> step_values;
  std::map<std::string, StepValueFn> step_value_fns;

  // Flattened outputs, then push deltas, then updates.
  std::vector<NodeRef> Fetches() const;
  FeedMap Feeds(const TensorNest& input, const std::map<std::string, double>& values) const;
};

// Builds and finalizes one replica. Input placeholders live on logical
// device 0.
ReplicaGraph BuildReplica(const StepFn& step_fn, const SpecNest& input_spec, ReplicaContext context,
                          VariableStore& store);

struct CollectiveBinding {
  std::string label;
  std::string kind;
  std::vector<NodeRef> nodes;  // one per replica
};

struct StitchedProgram {
  Graph graph;
  int num_replicas = 0;
  std::vector<std::vector<DeviceTag>> replica_devices;
  std::vector<NodeNest> inputs;
  std::vector<NodeNest> outputs;
  std::vector<std::vector<NodeRef>> updates;
  std::vector<std::map<std::string, NodeRef>> step_values;
  std::map<std::string, StepValueFn> step_value_fns;
  std::vector<CollectiveBinding> bindings;

  // Fetch list of one replica: flattened outputs followed by updates.
  std::vector<NodeRef> FetchesFor(int replica) const;
  FeedMap FeedsFor(int replica, const TensorNest& input,
                   const std::map<std::string, double>& step_values) const;
  bool IsDriverValue(NodeRef node) const { return graph.node(node).driver_only; }
};

// Replicas may be passed in any order. Throws StitchError if the replicas
// disagree on the number of replicas or on their collective calls.
StitchedProgram Stitch(std::vector<ReplicaGraph> replicas);

// Executes every replica in one context; collectives fold in rank order.
// Returns per-replica outputs.
std::vector<TensorNest> RunMonolithic(const StitchedProgram& program,
                                      const std::vector<TensorNest>& inputs,
                                      const std::map<std::string, double>& step_values = {});

}  // namespace replicator

#endif  // REPLICATOR_REPLICA_H_
