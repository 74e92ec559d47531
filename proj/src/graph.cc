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

#include "replicator/graph.h"

#include <array>
#include <atomic>
#include <sstream>

#include "replicator/variables.h"

namespace replicator {
namespace {

constexpr std::array<std::pair<OpKind, const char*>, 30> kOpNames = {{
    {OpKind::kConstant, "constant"},
    {OpKind::kPlaceholder, "placeholder"},
    {OpKind::kVariableRead, "variable_read"},
    {OpKind::kAssign, "assign"},
    {OpKind::kAdd, "add"},
    {OpKind::kSub, "sub"},
    {OpKind::kMul, "mul"},
    {OpKind::kDiv, "div"},
    {OpKind::kNeg, "neg"},
    {OpKind::kMatMul, "matmul"},
    {OpKind::kRelu, "relu"},
    {OpKind::kTanh, "tanh"},
    {OpKind::kSquare, "square"},
    {OpKind::kSqrt, "sqrt"},
    {OpKind::kExp, "exp"},
    {OpKind::kLog, "log"},
    {OpKind::kReduceSum, "reduce_sum"},
    {OpKind::kReduceMean, "reduce_mean"},
    {OpKind::kSoftmaxCrossEntropy, "softmax_cross_entropy_with_labels"},
    {OpKind::kConcat, "concat"},
    {OpKind::kSlice, "slice"},
    {OpKind::kReshape, "reshape"},
    {OpKind::kIdentity, "identity"},
    {OpKind::kGroup, "group"},
    {OpKind::kReluGrad, "relu_grad"},
    {OpKind::kBroadcastAxis, "broadcast_axis"},
    {OpKind::kSliceGrad, "slice_grad"},
    {OpKind::kSoftmaxCrossEntropyGrad, "softmax_cross_entropy_grad"},
    {OpKind::kCollectivePlaceholder, "collective_placeholder"},
    {OpKind::kCollective, "collective"},
}};

std::atomic<uint32_t> next_graph_id{1};

std::string ShapeList(const Graph& g, const std::vector<NodeRef>& inputs) {
  std::ostringstream os;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (i) os << ", ";
    const Node& n = g.node(inputs[i]);
    os << DTypeName(n.dtype) << n.shape.ToString();
  }
  return os.str();
}

[[noreturn]] void Fail(const Graph& g, const Node& node, const std::string& why) {
  throw ConstructionError(std::string(OpKindName(node.kind)) + ": " + why + " (inputs: " +
                          ShapeList(g, node.inputs) + ")");
}

void ExpectArity(const Graph& g, const Node& node, size_t n) {
  if (node.inputs.size() != n) {
    Fail(g, node, "expects " + std::to_string(n) + " inputs, got " +
                      std::to_string(node.inputs.size()));
  }
}

DType SameDType(const Graph& g, const Node& node) {
  DType dt = g.node(node.inputs.at(0)).dtype;
  for (NodeRef r : node.inputs) {
    if (g.node(r).dtype != dt) Fail(g, node, "mixed dtypes");
  }
  return dt;
}

int64_t GetAxis(const Graph& g, const Node& node, int rank) {
  int64_t axis = node.attrs.Get<int64_t>("axis");
  if (axis < 0 || axis >= rank) {
    Fail(g, node, "axis " + std::to_string(axis) + " out of range for rank " +
                      std::to_string(rank));
  }
  return axis;
}

bool IsElementwiseBinary(OpKind k) {
  return k == OpKind::kAdd || k == OpKind::kSub || k == OpKind::kMul || k == OpKind::kDiv;
}

bool IsElementwiseUnary(OpKind k) {
  return k == OpKind::kNeg || k == OpKind::kRelu || k == OpKind::kTanh || k == OpKind::kSquare ||
         k == OpKind::kSqrt || k == OpKind::kExp || k == OpKind::kLog || k == OpKind::kIdentity;
}

Shape CollectiveShape(const Graph& g, const Node& node, const Shape& in) {
  const auto& kind = node.attrs.Get<std::string>("collective_kind");
  const int64_t n = node.attrs.Get<int64_t>("group_size");
  if (kind == collective_kinds::kSum || kind == collective_kinds::kMean ||
      kind == collective_kinds::kMax || kind == collective_kinds::kBroadcast ||
      kind == collective_kinds::kMapReduce) {
    return in;
  }
  if (kind == collective_kinds::kGather) {
    if (in.rank() == 0) return Shape{n};
    std::vector<int64_t> d = in.dims();
    d[0] *= n;
    return Shape(d);
  }
  if (kind == collective_kinds::kMapGather) {
    std::vector<int64_t> d = in.dims();
    d.insert(d.begin(), n);
    return Shape(d);
  }
  Fail(g, node, "unknown collective kind '" + kind + "'");
}

bool IsDriverCollective(const Node& node) {
  const auto& kind = node.attrs.Get<std::string>("collective_kind");
  return kind == collective_kinds::kMapGather || kind == collective_kinds::kMapReduce;
}

}  // namespace

const char* OpKindName(OpKind kind) {
  for (const auto& [k, name] : kOpNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

OpKind ParseOpKind(std::string_view name) {
  for (const auto& [k, n] : kOpNames) {
    if (name == n) return k;
  }
  throw ConstructionError("unknown op kind '" + std::string(name) + "'");
}

Graph::Graph() : id_(next_graph_id.fetch_add(1)) {}

void Graph::CheckRef(NodeRef ref, const char* what) const {
  if (ref.graph_id != id_) {
    throw ConstructionError(std::string(what) + " refers to a node of another graph");
  }
  if (ref.index < 0 || ref.index >= num_nodes()) {
    throw ConstructionError(std::string(what) + " refers to a node that does not exist yet");
  }
}

const Node& Graph::node(NodeRef ref) const {
  CheckRef(ref, "node reference");
  return nodes_[ref.index];
}

NodeRef Graph::AddNode(OpKind kind, std::vector<NodeRef> inputs, AttrMap attrs) {
  return Append(kind, std::move(inputs), control_stack_, std::move(attrs), device_, -1);
}

NodeRef Graph::AddNode(std::string_view kind, std::vector<NodeRef> inputs, AttrMap attrs) {
  return AddNode(ParseOpKind(kind), std::move(inputs), std::move(attrs));
}

NodeRef Graph::Append(OpKind kind, std::vector<NodeRef> inputs,
                      std::vector<NodeRef> control_inputs, AttrMap attrs, DeviceTag device,
                      int replica) {
  if (finalized_) {
    throw ConstructionError(std::string("cannot add ") + OpKindName(kind) +
                            " to a finalized graph");
  }
  for (NodeRef r : inputs) {
    CheckRef(r, OpKindName(kind));
    if (nodes_[r.index].driver_only) {
      throw ConstructionError(std::string(OpKindName(kind)) +
                              ": a map_gather/map_reduce result is delivered to the driver and "
                              "cannot be consumed inside a replica");
    }
  }
  for (NodeRef r : control_inputs) CheckRef(r, "control input");
  Node node;
  node.kind = kind;
  node.inputs = std::move(inputs);
  node.control_inputs = std::move(control_inputs);
  node.attrs = std::move(attrs);
  node.device = std::move(device);
  node.replica = replica;
  InferShape(*this, node);
  nodes_.push_back(std::move(node));
  return NodeRef{id_, static_cast<int32_t>(nodes_.size() - 1)};
}

Graph::DeviceScope::DeviceScope(Graph& graph, DeviceTag device)
    : graph_(graph), saved_(graph.current_device()) {
  graph_.set_current_device(std::move(device));
}

Graph::DeviceScope::~DeviceScope() { graph_.set_current_device(saved_); }

Graph::ControlDependencies::ControlDependencies(Graph& graph, std::vector<NodeRef> deps)
    : graph_(graph), saved_size_(graph.control_stack_.size()) {
  for (NodeRef d : deps) {
    graph_.CheckRef(d, "control dependency");
    graph_.control_stack_.push_back(d);
  }
}

Graph::ControlDependencies::~ControlDependencies() { graph_.control_stack_.resize(saved_size_); }

void InferShape(const Graph& g, Node& node) {
  const OpKind k = node.kind;
  auto in = [&](size_t i) -> const Node& { return g.node(node.inputs.at(i)); };

  if (IsElementwiseBinary(k)) {
    ExpectArity(g, node, 2);
    node.dtype = SameDType(g, node);
    const Shape& a = in(0).shape;
    const Shape& b = in(1).shape;
    if (a == b || b.is_scalar()) {
      node.shape = a;
    } else if (a.is_scalar()) {
      node.shape = b;
    } else {
      Fail(g, node, "shapes must match exactly or one side must be a scalar");
    }
    return;
  }
  if (IsElementwiseUnary(k)) {
    ExpectArity(g, node, 1);
    node.dtype = in(0).dtype;
    node.shape = in(0).shape;
    return;
  }

  switch (k) {
    case OpKind::kConstant: {
      ExpectArity(g, node, 0);
      const Tensor& v = node.attrs.Get<Tensor>("value");
      node.shape = v.shape();
      node.dtype = v.dtype();
      return;
    }
    case OpKind::kPlaceholder: {
      ExpectArity(g, node, 0);
      node.shape = Shape(node.attrs.Get<std::vector<int64_t>>("shape"));
      node.dtype = static_cast<DType>(node.attrs.GetOr<int64_t>("dtype", 1));
      return;
    }
    case OpKind::kVariableRead: {
      ExpectArity(g, node, 0);
      const auto& var = node.attrs.Get<std::shared_ptr<VariableResource>>("variable");
      if (!var) Fail(g, node, "null variable");
      node.shape = var->shape();
      node.dtype = var->dtype();
      return;
    }
    case OpKind::kAssign: {
      ExpectArity(g, node, 1);
      const auto& var = node.attrs.Get<std::shared_ptr<VariableResource>>("variable");
      if (!var) Fail(g, node, "null variable");
      if (in(0).shape != var->shape() || in(0).dtype != var->dtype()) {
        Fail(g, node, "value does not match variable '" + var->name() + "' of " +
                          DTypeName(var->dtype()) + var->shape().ToString());
      }
      node.shape = var->shape();
      node.dtype = var->dtype();
      return;
    }
    case OpKind::kMatMul: {
      ExpectArity(g, node, 2);
      node.dtype = SameDType(g, node);
      const Shape& a = in(0).shape;
      const Shape& b = in(1).shape;
      if (a.rank() != 2 || b.rank() != 2) Fail(g, node, "operands must be rank 2");
      const bool ta = node.attrs.GetOr<int64_t>("transpose_a", 0) != 0;
      const bool tb = node.attrs.GetOr<int64_t>("transpose_b", 0) != 0;
      const int64_t m = ta ? a.dim(1) : a.dim(0);
      const int64_t ka = ta ? a.dim(0) : a.dim(1);
      const int64_t kb = tb ? b.dim(1) : b.dim(0);
      const int64_t n = tb ? b.dim(0) : b.dim(1);
      if (ka != kb) {
        Fail(g, node, "contraction mismatch " + a.ToString() + " x " + b.ToString());
      }
      node.shape = Shape{m, n};
      return;
    }
    case OpKind::kReduceSum:
    case OpKind::kReduceMean: {
      ExpectArity(g, node, 1);
      node.dtype = in(0).dtype;
      const Shape& x = in(0).shape;
      if (!node.attrs.Has("axis")) {
        node.shape = Shape{};
        return;
      }
      const int64_t axis = GetAxis(g, node, x.rank());
      std::vector<int64_t> d = x.dims();
      d.erase(d.begin() + axis);
      node.shape = Shape(d);
      return;
    }
    case OpKind::kSoftmaxCrossEntropy: {
      ExpectArity(g, node, 2);
      node.dtype = SameDType(g, node);
      const Shape& logits = in(0).shape;
      if (logits.rank() != 2 || in(1).shape != logits) {
        Fail(g, node, "logits and labels must both be (batch, classes)");
      }
      node.shape = Shape{logits.dim(0)};
      return;
    }
    case OpKind::kConcat: {
      if (node.inputs.empty()) Fail(g, node, "needs at least one input");
      node.dtype = SameDType(g, node);
      const Shape& first = in(0).shape;
      const int64_t axis = GetAxis(g, node, first.rank());
      std::vector<int64_t> d = first.dims();
      for (size_t i = 1; i < node.inputs.size(); ++i) {
        const Shape& s = in(i).shape;
        if (s.rank() != first.rank()) Fail(g, node, "rank mismatch");
        for (int j = 0; j < s.rank(); ++j) {
          if (j != axis && s.dim(j) != first.dim(j)) Fail(g, node, "non-axis extents differ");
        }
        d[axis] += s.dim(static_cast<int>(axis));
      }
      node.shape = Shape(d);
      return;
    }
    case OpKind::kSlice: {
      ExpectArity(g, node, 1);
      node.dtype = in(0).dtype;
      const Shape& x = in(0).shape;
      const auto& begin = node.attrs.Get<std::vector<int64_t>>("begin");
      const auto& size = node.attrs.Get<std::vector<int64_t>>("size");
      if (static_cast<int>(begin.size()) != x.rank() || static_cast<int>(size.size()) != x.rank()) {
        Fail(g, node, "begin/size must have one entry per dimension");
      }
      for (int i = 0; i < x.rank(); ++i) {
        if (begin[i] < 0 || size[i] < 0 || begin[i] + size[i] > x.dim(i)) {
          Fail(g, node, "slice window out of bounds on axis " + std::to_string(i));
        }
      }
      node.shape = Shape(size);
      return;
    }
    case OpKind::kReshape: {
      ExpectArity(g, node, 1);
      node.dtype = in(0).dtype;
      Shape target(node.attrs.Get<std::vector<int64_t>>("shape"));
      if (target.num_elements() != in(0).shape.num_elements()) {
        Fail(g, node, "cannot reshape to " + target.ToString());
      }
      node.shape = target;
      return;
    }
    case OpKind::kGroup: {
      node.dtype = DType::kF64;
      node.shape = Shape{};
      return;
    }
    case OpKind::kReluGrad: {
      ExpectArity(g, node, 2);
      node.dtype = SameDType(g, node);
      if (in(0).shape != in(1).shape) Fail(g, node, "shape mismatch");
      node.shape = in(0).shape;
      return;
    }
    case OpKind::kBroadcastAxis: {
      ExpectArity(g, node, 1);
      node.dtype = in(0).dtype;
      const int64_t axis = node.attrs.Get<int64_t>("axis");
      const int64_t count = node.attrs.Get<int64_t>("count");
      std::vector<int64_t> d = in(0).shape.dims();
      if (axis < 0 || axis > static_cast<int64_t>(d.size()) || count < 0) {
        Fail(g, node, "bad axis/count");
      }
      d.insert(d.begin() + axis, count);
      node.shape = Shape(d);
      return;
    }
    case OpKind::kSliceGrad: {
      ExpectArity(g, node, 1);
      node.dtype = in(0).dtype;
      node.shape = Shape(node.attrs.Get<std::vector<int64_t>>("input_shape"));
      return;
    }
    case OpKind::kSoftmaxCrossEntropyGrad: {
      ExpectArity(g, node, 3);
      node.dtype = SameDType(g, node);
      const Shape& logits = in(0).shape;
      if (logits.rank() != 2 || in(1).shape != logits || in(2).shape != Shape{logits.dim(0)}) {
        Fail(g, node, "expects logits, labels and a per-example upstream gradient");
      }
      node.shape = logits;
      return;
    }
    case OpKind::kCollectivePlaceholder: {
      ExpectArity(g, node, 1);
      node.dtype = in(0).dtype;
      node.shape = CollectiveShape(g, node, in(0).shape);
      node.driver_only = IsDriverCollective(node);
      return;
    }
    case OpKind::kCollective: {
      if (node.inputs.empty()) Fail(g, node, "needs bound inputs");
      node.dtype = SameDType(g, node);
      const int64_t rank = node.attrs.Get<int64_t>("rank");
      if (rank < 0 || rank >= static_cast<int64_t>(node.inputs.size())) {
        Fail(g, node, "rank outside the bound inputs");
      }
      node.shape = CollectiveShape(g, node, in(static_cast<size_t>(rank)).shape);
      node.driver_only = IsDriverCollective(node);
      return;
    }
    default:
      break;
  }
  Fail(g, node, "no shape function");
}

std::string GraphDebugString(const Graph& graph) {
  std::ostringstream os;
  for (int i = 0; i < graph.num_nodes(); ++i) {
    const Node& n = graph.node(i);
    os << i << " " << OpKindName(n.kind) << " r" << n.replica << " " << n.device.ToString() << " "
       << DTypeName(n.dtype) << n.shape.ToString() << " in[";
    for (NodeRef r : n.inputs) os << r.index << ",";
    os << "] ctl[";
    for (NodeRef r : n.control_inputs) os << r.index << ",";
    os << "]";
    for (const auto& [key, value] : n.attrs.values()) {
      os << " " << key << "=";
      std::visit(
          [&](const auto& v) {
            using V = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<V, Tensor>) {
              os << "tensor:" << TensorChecksum(v);
            } else if constexpr (std::is_same_v<V, std::shared_ptr<VariableResource>>) {
              os << "var:" << v->name() << "@" << v->device().ToString();
            } else if constexpr (std::is_same_v<V, std::vector<int64_t>>) {
              for (int64_t x : v) os << x << ",";
            } else {
              os << v;
            }
          },
          value);
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace replicator
