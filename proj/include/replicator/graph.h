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

#ifndef REPLICATOR_GRAPH_H_
#define REPLICATOR_GRAPH_H_

#include <compare>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "replicator/device.h"
#include "replicator/tensor.h"

namespace replicator {

class VariableResource;

enum class OpKind : uint8_t {
  kConstant,
  kPlaceholder,
  kVariableRead,
  kAssign,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kMatMul,
  kRelu,
  kTanh,
  kSquare,
  kSqrt,
  kExp,
  kLog,
  kReduceSum,
  kReduceMean,
  kSoftmaxCrossEntropy,
  kConcat,
  kSlice,
  kReshape,
  // Pass-through and join; used to order side effects with control inputs.
  kIdentity,
  kGroup,
  // Appended by backprop only.
  kReluGrad,
  kBroadcastAxis,
  kSliceGrad,
  kSoftmaxCrossEntropyGrad,
  // Cross-replica communication. Placeholders are recorded while a replica
  // is built; stitching rewrites them into bound collectives.
  kCollectivePlaceholder,
  kCollective,
};

const char* OpKindName(OpKind kind);
// Throws ConstructionError for names outside the vocabulary.
OpKind ParseOpKind(std::string_view name);

struct NodeRef {
  uint32_t graph_id = 0;
  int32_t index = -1;

  bool valid() const { return index >= 0; }
  friend auto operator<=>(const NodeRef&, const NodeRef&) = default;
};

using AttrValue = std::variant<int64_t, double, std::string, std::vector<int64_t>, Tensor,
                               std::shared_ptr<VariableResource>>;

class AttrMap {
 public:
  AttrMap() = default;
  AttrMap(std::initializer_list<std::pair<const std::string, AttrValue>> init) : values_(init) {}

  bool Has(const std::string& key) const { return values_.count(key) > 0; }
  void Set(const std::string& key, AttrValue value) { values_[key] = std::move(value); }

  template <typename T>
  const T& Get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConstructionError("missing attribute '" + key + "'");
    const T* v = std::get_if<T>(&it->second);
    if (v == nullptr) throw ConstructionError("attribute '" + key + "' has the wrong type");
    return *v;
  }

  template <typename T>
  T GetOr(const std::string& key, T fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const T* v = std::get_if<T>(&it->second);
    return v ? *v : fallback;
  }

  const std::map<std::string, AttrValue>& values() const { return values_; }

 private:
  std::map<std::string, AttrValue> values_;
};

struct Node {
  OpKind kind = OpKind::kConstant;
  std::vector<NodeRef> inputs;
  std::vector<NodeRef> control_inputs;
  AttrMap attrs;
  DeviceTag device;
  Shape shape;
  DType dtype = DType::kF64;
  // Owning replica once graphs are stitched; -1 for single-replica graphs.
  int replica = -1;
  // Values delivered to the driver (map_gather/map_reduce) may not feed
  // further computation inside a replica.
  bool driver_only = false;
};

// Append-only dataflow graph. Inputs always precede their consumers, so node
// order is a valid topological order.
class Graph {
 public:
  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  uint32_t id() const { return id_; }

  // Appends a node on the current device with the active control
  // dependencies. Runs static shape inference.
  NodeRef AddNode(OpKind kind, std::vector<NodeRef> inputs, AttrMap attrs = {});
  NodeRef AddNode(std::string_view kind, std::vector<NodeRef> inputs, AttrMap attrs = {});

  // Low-level append with explicit placement; used when copying nodes
  // between graphs.
  NodeRef Append(OpKind kind, std::vector<NodeRef> inputs, std::vector<NodeRef> control_inputs,
                 AttrMap attrs, DeviceTag device, int replica);

  const Node& node(NodeRef ref) const;
  const Node& node(int index) const { return nodes_.at(index); }
  NodeRef ref(int index) const { return NodeRef{id_, index}; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  void Finalize() { finalized_ = true; }
  bool finalized() const { return finalized_; }

  const DeviceTag& current_device() const { return device_; }
  void set_current_device(DeviceTag device) { device_ = std::move(device); }

  // RAII placement scope.
  class DeviceScope {
   public:
    DeviceScope(Graph& graph, DeviceTag device);
    ~DeviceScope();
    DeviceScope(const DeviceScope&) = delete;
    DeviceScope& operator=(const DeviceScope&) = delete;

   private:
    Graph& graph_;
    DeviceTag saved_;
  };

  // Nodes added inside the scope depend on `deps` completing first.
  class ControlDependencies {
   public:
    ControlDependencies(Graph& graph, std::vector<NodeRef> deps);
    ~ControlDependencies();
    ControlDependencies(const ControlDependencies&) = delete;
    ControlDependencies& operator=(const ControlDependencies&) = delete;

   private:
    Graph& graph_;
    size_t saved_size_;
  };

 private:
  void CheckRef(NodeRef ref, const char* what) const;

  uint32_t id_;
  std::deque<Node> nodes_;
  bool finalized_ = false;
  DeviceTag device_;
  std::vector<NodeRef> control_stack_;
};

// Computes output shape and dtype for `kind` applied to `inputs`. Throws
// ConstructionError naming the op and offending shapes.
void InferShape(const Graph& graph, Node& node);

// One line per node: kind, inputs, placement and attributes. Tensor values
// appear as checksums. Two graphs built the same way print the same.
std::string GraphDebugString(const Graph& graph);

namespace collective_kinds {
inline constexpr char kSum[] = "sum";
inline constexpr char kMean[] = "mean";
inline constexpr char kMax[] = "max";
inline constexpr char kGather[] = "gather";
inline constexpr char kBroadcast[] = "broadcast";
inline constexpr char kMapGather[] = "map_gather";
inline constexpr char kMapReduce[] = "map_reduce";
}  // namespace collective_kinds

}  // namespace replicator

#endif  // REPLICATOR_GRAPH_H_
