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
#include <set>

#include "replicator/kernels.h"
#include "replicator/ops.h"

namespace replicator {

SpecNest SpecOf(const TensorNest& value) {
  return value.Map([](const Tensor& t) { return TensorSpec{t.shape(), t.dtype()}; });
}

ListSource::ListSource(std::vector<TensorNest> elements) : elements_(std::move(elements)) {
  if (elements_.empty()) throw ConfigError("ListSource needs at least one element");
  spec_ = SpecOf(elements_[0]);
}

std::optional<TensorNest> ListSource::Next() {
  if (pos_ >= elements_.size()) return std::nullopt;
  return elements_[pos_++];
}

SplitFn SplitAlongAxis(int axis) {
  return [axis](const TensorNest& batch, int n) {
    std::vector<std::vector<Tensor>> shards(n);
    for (const Tensor& t : batch.Flatten()) {
      if (axis >= t.rank()) {
        throw ConfigError("cannot split a tensor of shape " + t.shape().ToString() +
                          " along axis " + std::to_string(axis));
      }
      const int64_t extent = t.shape().dim(axis);
      if (extent % n != 0) {
        throw ConfigError("cannot split axis " + std::to_string(axis) + " of size " +
                          std::to_string(extent) + " into " + std::to_string(n) +
                          " equal shards");
      }
      const int64_t part = extent / n;
      for (int r = 0; r < n; ++r) {
        std::vector<int64_t> begin(t.rank(), 0);
        std::vector<int64_t> size = t.shape().dims();
        begin[axis] = r * part;
        size[axis] = part;
        shards[r].push_back(kernels::Slice(t, begin, size));
      }
    }
    std::vector<TensorNest> out;
    for (auto& leaves : shards) out.push_back(batch.Pack(leaves));
    return out;
  };
}

std::vector<TensorNest> SplitInputs(const TensorNest& batch, int num_replicas,
                                    const SplitFn& split_fn) {
  if (num_replicas < 1) throw ConfigError("num_replicas must be positive");
  std::vector<TensorNest> out =
      split_fn ? split_fn(batch, num_replicas) : SplitAlongAxis(0)(batch, num_replicas);
  if (static_cast<int>(out.size()) != num_replicas) {
    throw ConfigError("input splitter returned " + std::to_string(out.size()) + " shards for " +
                      std::to_string(num_replicas) + " replicas");
  }
  return out;
}

std::string CollectiveCall::ToString() const {
  std::string out = kind + " '" + label + "' " + DTypeName(dtype) + shape.ToString();
  if (!fold.empty()) out += " fold=" + fold;
  return out;
}

ReplicatedVariable::ReplicatedVariable(std::string name,
                                       std::vector<std::shared_ptr<VariableResource>> instances)
    : name_(std::move(name)), instances_(std::move(instances)) {
  if (instances_.empty()) throw ConstructionError("variable '" + name_ + "' has no instances");
  trainable_ = instances_[0]->trainable();
}

ReplicatedVariable::ReplicatedVariable(std::string name,
                                       std::vector<std::shared_ptr<VariableResource>> instances,
                                       DeviceTag home, bool trainable)
    : ReplicatedVariable(std::move(name), std::move(instances)) {
  home_ = std::move(home);
  trainable_ = trainable;
}

const std::shared_ptr<VariableResource>& ReplicatedVariable::For(int replica) const {
  if (instances_.size() == 1) return instances_[0];
  if (replica < 0 || replica >= static_cast<int>(instances_.size())) {
    throw ConstructionError("variable '" + name_ + "' has " + std::to_string(instances_.size()) +
                            " replica instances; replica " + std::to_string(replica) +
                            " has none");
  }
  return instances_[replica];
}

ReplicaBuilder::ReplicaBuilder(Graph& graph, ReplicaContext& context, VariableStore& store)
    : graph_(graph), context_(context), store_(store) {
  if (context_.logical_devices.empty()) {
    throw ConstructionError("replica " + std::to_string(context_.replica_id) +
                            " has no logical device 0");
  }
}

const DeviceTag& ReplicaBuilder::device(int logical) const {
  if (logical < 0 || logical >= static_cast<int>(context_.logical_devices.size())) {
    throw ConstructionError("logical device " + std::to_string(logical) +
                            " is not mapped; this replica has " +
                            std::to_string(context_.logical_devices.size()) + " device(s)");
  }
  return context_.logical_devices[logical];
}

Graph::DeviceScope ReplicaBuilder::OnDevice(int logical) {
  return Graph::DeviceScope(graph_, device(logical));
}

std::shared_ptr<VariableResource> ReplicaBuilder::Resolve(const VariableHandle& var) const {
  return var->For(context_.replica_id);
}

NodeRef ReplicaBuilder::Read(const VariableHandle& var) { return ops::Read(graph_, Resolve(var)); }

std::shared_ptr<VariableResource> ReplicaBuilder::LocalVariable(const std::string& name,
                                                                const Shape& shape,
                                                                const Initializer& init,
                                                                DType dtype) {
  return store_.GetOrCreate(name, shape, init, device(0), dtype, /*trainable=*/false);
}

NodeRef ReplicaBuilder::RecordCollective(const std::string& kind, NodeRef input,
                                         const std::string& label, const std::string& fold) {
  if (!context_.collectives_allowed) {
    throw ConstructionError(
        "collective '" + kind + "' ('" + label +
        "') is unavailable: asynchronous replication only aggregates gradients through "
        "parameter servers");
  }
  for (const auto& call : context_.pending) {
    if (call.label == label) {
      throw ConstructionError("collective label '" + label + "' recorded twice in replica " +
                              std::to_string(context_.replica_id));
    }
  }
  AttrMap attrs = {{"collective_kind", kind},
                   {"label", label},
                   {"group_size", int64_t{context_.num_replicas}}};
  if (!fold.empty()) attrs.Set("fold", fold);
  const NodeRef placeholder = graph_.AddNode(OpKind::kCollectivePlaceholder, {input}, attrs);
  const Node& in = graph_.node(input);
  context_.pending.push_back(
      CollectiveCall{label, kind, fold, in.shape, in.dtype, placeholder, input});
  return placeholder;
}

NodeRef ReplicaBuilder::AllSum(NodeRef x, const std::string& label) {
  return RecordCollective(collective_kinds::kSum, x, label);
}
NodeRef ReplicaBuilder::AllMean(NodeRef x, const std::string& label) {
  return RecordCollective(collective_kinds::kMean, x, label);
}
NodeRef ReplicaBuilder::AllMax(NodeRef x, const std::string& label) {
  return RecordCollective(collective_kinds::kMax, x, label);
}
NodeRef ReplicaBuilder::AllGather(NodeRef x, const std::string& label) {
  return RecordCollective(collective_kinds::kGather, x, label);
}
NodeRef ReplicaBuilder::Broadcast(NodeRef x, const std::string& label) {
  return RecordCollective(collective_kinds::kBroadcast, x, label);
}
NodeRef ReplicaBuilder::MapGather(NodeRef x, const std::string& label) {
  return RecordCollective(collective_kinds::kMapGather, x, label);
}
NodeRef ReplicaBuilder::MapReduce(NodeRef x, const std::string& fold, const std::string& label) {
  if (fold != collective_kinds::kSum && fold != collective_kinds::kMean &&
      fold != collective_kinds::kMax) {
    throw ConstructionError("map_reduce fold must be sum, mean or max, got '" + fold + "'");
  }
  return RecordCollective(collective_kinds::kMapReduce, x, label, fold);
}

void ReplicaBuilder::AddPush(const VariableHandle& var, NodeRef delta) {
  if (!context_.push_updates) {
    throw ConstructionError("variable '" + var->name() +
                            "' is updated in the graph in this deployment; push is unavailable");
  }
  if (graph_.node(delta).shape != var->shape()) {
    throw ConstructionError("push delta for '" + var->name() + "' has shape " +
                            graph_.node(delta).shape.ToString() + ", variable has " +
                            var->shape().ToString());
  }
  pushes_.push_back(PushOp{var, delta});
}

NodeRef ReplicaBuilder::StepValue(const std::string& name, DType dtype) {
  if (auto it = step_values_.find(name); it != step_values_.end()) return it->second;
  Graph::DeviceScope scope(graph_, device(0));
  NodeRef p = ops::Placeholder(graph_, Shape{}, dtype, "step/" + name);
  step_values_[name] = p;
  return p;
}

NodeRef ReplicaBuilder::StepValue(const std::string& name, StepValueFn fn, DType dtype) {
  step_value_fns_[name] = std::move(fn);
  return StepValue(name, dtype);
}

std::map<std::string, double> StepValuesAt(const std::map<std::string, StepValueFn>& fns,
                                           int64_t global_step) {
  std::map<std::string, double> out;
  for (const auto& [name, fn] : fns) out[name] = fn(global_step);
  return out;
}

ReplicaGraph BuildReplica(const StepFn& step_fn, const SpecNest& input_spec, ReplicaContext context,
                          VariableStore& store) {
  if (context.replica_id < 0 || context.replica_id >= context.num_replicas) {
    throw ConstructionError("replica id " + std::to_string(context.replica_id) +
                            " outside [0, " + std::to_string(context.num_replicas) + ")");
  }
  ReplicaGraph out;
  out.context = std::move(context);
  Graph& g = out.graph;
  ReplicaBuilder builder(g, out.context, store);
  g.set_current_device(builder.device(0));
  out.inputs = input_spec.Map([&](const TensorSpec& s) {
    return ops::Placeholder(g, s.shape, s.dtype, "input");
  });
  out.outputs = step_fn(builder, out.inputs);
  for (NodeRef r : out.outputs.Flatten()) {
    if (r.graph_id != g.id() || !r.valid() || r.index >= g.num_nodes()) {
      throw ConstructionError("step function output is not a node of replica " +
                              std::to_string(out.context.replica_id) + "'s graph");
    }
  }
  out.updates = builder.updates();
  out.pushes = builder.pushes();
  out.step_values = builder.step_values();
  out.step_value_fns = builder.step_value_fns();
  g.Finalize();
  return out;
}

namespace {

[[noreturn]] void Mismatch(size_t position, int r, const std::string& mine,
                           const std::string& theirs) {
  throw StitchError("collective mismatch at position " + std::to_string(position) +
                    ": replica 0 recorded " + mine + " but replica " + std::to_string(r) +
                    " recorded " + theirs);
}

void CheckAgreement(const std::vector<ReplicaGraph>& replicas) {
  const auto& ref = replicas[0].context.pending;
  for (size_t r = 1; r < replicas.size(); ++r) {
    const auto& other = replicas[r].context.pending;
    const size_t n = std::max(ref.size(), other.size());
    for (size_t i = 0; i < n; ++i) {
      const std::string mine = i < ref.size() ? ref[i].ToString() : "nothing";
      const std::string theirs = i < other.size() ? other[i].ToString() : "nothing";
      if (mine != theirs) Mismatch(i, static_cast<int>(r), mine, theirs);
    }
  }
}

}  // namespace

StitchedProgram Stitch(std::vector<ReplicaGraph> replicas) {
  if (replicas.empty()) throw StitchError("no replicas to stitch");
  std::sort(replicas.begin(), replicas.end(), [](const ReplicaGraph& a, const ReplicaGraph& b) {
    return a.context.replica_id < b.context.replica_id;
  });
  const int n = static_cast<int>(replicas.size());
  for (int r = 0; r < n; ++r) {
    const auto& ctx = replicas[r].context;
    if (ctx.num_replicas != n) {
      throw StitchError("replica " + std::to_string(ctx.replica_id) + " was built for " +
                        std::to_string(ctx.num_replicas) + " replicas but " + std::to_string(n) +
                        " were supplied");
    }
    if (ctx.replica_id != r) {
      throw StitchError("replica ids must be 0.." + std::to_string(n - 1) + "; found duplicate or "
                        "missing id near " + std::to_string(r));
    }
    if (!replicas[r].pushes.empty()) {
      throw StitchError("replica " + std::to_string(r) + " pushes updates and cannot be stitched");
    }
    if (!replicas[r].graph.finalized()) {
      throw StitchError("replica " + std::to_string(r) + " is not finalized");
    }
  }
  CheckAgreement(replicas);

  StitchedProgram prog;
  prog.num_replicas = n;
  Graph& g = prog.graph;
  const size_t k_calls = replicas[0].context.pending.size();
  std::vector<std::vector<NodeRef>> remap(n);
  for (int r = 0; r < n; ++r) remap[r].resize(replicas[r].graph.num_nodes());
  std::vector<int> cursor(n, 0);

  auto map_refs = [&](int r, const std::vector<NodeRef>& refs) {
    std::vector<NodeRef> out;
    for (NodeRef x : refs) out.push_back(remap[r][x.index]);
    return out;
  };
  auto copy_until = [&](int r, int end) {
    const Graph& src = replicas[r].graph;
    for (; cursor[r] < end; ++cursor[r]) {
      const Node& node = src.node(cursor[r]);
      if (node.kind == OpKind::kCollectivePlaceholder) {
        throw StitchError("replica " + std::to_string(r) + " has an unrecorded placeholder");
      }
      remap[r][cursor[r]] = g.Append(node.kind, map_refs(r, node.inputs),
                                     map_refs(r, node.control_inputs), node.attrs, node.device, r);
    }
  };

  // Segment k of every replica ends at its k-th placeholder, so each bound
  // collective follows all of its inputs.
  for (size_t k = 0; k < k_calls; ++k) {
    for (int r = 0; r < n; ++r) copy_until(r, replicas[r].context.pending[k].placeholder.index);
    CollectiveBinding binding;
    binding.label = replicas[0].context.pending[k].label;
    binding.kind = replicas[0].context.pending[k].kind;
    std::vector<NodeRef> bound_inputs;
    for (int r = 0; r < n; ++r) {
      bound_inputs.push_back(remap[r][replicas[r].context.pending[k].input.index]);
    }
    for (int r = 0; r < n; ++r) {
      const CollectiveCall& call = replicas[r].context.pending[k];
      const Node& ph = replicas[r].graph.node(call.placeholder);
      if (cursor[r] != call.placeholder.index) {
        throw StitchError("replica " + std::to_string(r) + " recorded collectives out of order");
      }
      AttrMap attrs = ph.attrs;
      attrs.Set("rank", int64_t{r});
      remap[r][cursor[r]] = g.Append(OpKind::kCollective, bound_inputs,
                                     map_refs(r, ph.control_inputs), attrs, ph.device, r);
      binding.nodes.push_back(remap[r][cursor[r]]);
      ++cursor[r];
    }
    prog.bindings.push_back(std::move(binding));
  }
  for (int r = 0; r < n; ++r) copy_until(r, replicas[r].graph.num_nodes());

  for (int r = 0; r < n; ++r) {
    auto remap_one = [&](NodeRef x) { return remap[r][x.index]; };
    prog.replica_devices.push_back(replicas[r].context.logical_devices);
    prog.inputs.push_back(replicas[r].inputs.Map(remap_one));
    prog.outputs.push_back(replicas[r].outputs.Map(remap_one));
    prog.updates.push_back(map_refs(r, replicas[r].updates));
    std::map<std::string, NodeRef> values;
    for (const auto& [name, ref] : replicas[r].step_values) values[name] = remap_one(ref);
    prog.step_values.push_back(std::move(values));
  }
  prog.step_value_fns = replicas[0].step_value_fns;
  g.Finalize();
  return prog;
}

std::vector<NodeRef> StitchedProgram::FetchesFor(int replica) const {
  std::vector<NodeRef> out = outputs.at(replica).Flatten();
  out.insert(out.end(), updates.at(replica).begin(), updates.at(replica).end());
  // Map results go to the driver, so they run even when nothing consumes them.
  for (const auto& binding : bindings) {
    if (binding.kind == collective_kinds::kMapGather ||
        binding.kind == collective_kinds::kMapReduce) {
      out.push_back(binding.nodes.at(replica));
    }
  }
  return out;
}

namespace {

FeedMap MakeFeeds(const Graph& graph, int replica, const NodeNest& placeholders,
                  const TensorNest& input, const std::map<std::string, NodeRef>& step_values,
                  const std::map<std::string, double>& values) {
  if (!placeholders.SameStructure(input)) {
    throw EvaluationError("input for replica " + std::to_string(replica) +
                          " does not match the structure the step function was built with");
  }
  FeedMap feeds;
  const auto refs = placeholders.Flatten();
  const auto tensors = input.Flatten();
  for (size_t i = 0; i < refs.size(); ++i) feeds[refs[i]] = tensors[i];
  for (const auto& [name, ref] : step_values) {
    auto it = values.find(name);
    if (it == values.end()) throw EvaluationError("no value supplied for step value '" + name + "'");
    feeds[ref] = Tensor::Scalar(it->second, graph.node(ref).dtype);
  }
  return feeds;
}

}  // namespace

FeedMap StitchedProgram::FeedsFor(int replica, const TensorNest& input,
                                  const std::map<std::string, double>& values) const {
  return MakeFeeds(graph, replica, inputs.at(replica), input, step_values.at(replica), values);
}

std::vector<NodeRef> ReplicaGraph::Fetches() const {
  std::vector<NodeRef> out = outputs.Flatten();
  for (const PushOp& p : pushes) out.push_back(p.delta);
  out.insert(out.end(), updates.begin(), updates.end());
  return out;
}

FeedMap ReplicaGraph::Feeds(const TensorNest& input,
                            const std::map<std::string, double>& values) const {
  return MakeFeeds(graph, context.replica_id, inputs, input, step_values, values);
}

std::vector<TensorNest> RunMonolithic(const StitchedProgram& program,
                                      const std::vector<TensorNest>& inputs,
                                      const std::map<std::string, double>& step_values) {
  if (static_cast<int>(inputs.size()) != program.num_replicas) {
    throw EvaluationError("expected " + std::to_string(program.num_replicas) +
                          " replica inputs, got " + std::to_string(inputs.size()));
  }
  FeedMap feeds;
  std::vector<NodeRef> fetches;
  std::vector<size_t> offsets;
  for (int r = 0; r < program.num_replicas; ++r) {
    feeds.merge(program.FeedsFor(r, inputs[r], step_values));
    offsets.push_back(fetches.size());
    const auto f = program.FetchesFor(r);
    fetches.insert(fetches.end(), f.begin(), f.end());
  }
  const auto values = Evaluate(program.graph, fetches, feeds);
  std::vector<TensorNest> out;
  for (int r = 0; r < program.num_replicas; ++r) {
    const size_t count = program.outputs[r].num_leaves();
    std::vector<Tensor> leaves(values.begin() + offsets[r], values.begin() + offsets[r] + count);
    out.push_back(program.outputs[r].Pack(leaves));
  }
  return out;
}

}  // namespace replicator
