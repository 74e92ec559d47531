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

#include "replicator/executor.h"

#include <optional>

#include "replicator/kernels.h"
#include "replicator/variables.h"

namespace replicator {
namespace {

kernels::ReduceOp ReduceOpFor(const std::string& kind) {
  return kind == collective_kinds::kMax ? kernels::ReduceOp::kMax : kernels::ReduceOp::kSum;
}

// Inputs that must be evaluated before `node` under `options`.
void Dependencies(const Node& node, const EvalOptions& options, std::vector<NodeRef>& out) {
  out.clear();
  if (node.kind == OpKind::kCollective && options.replica >= 0) {
    out.push_back(node.inputs.at(node.attrs.Get<int64_t>("rank")));
  } else {
    out.insert(out.end(), node.inputs.begin(), node.inputs.end());
  }
  out.insert(out.end(), node.control_inputs.begin(), node.control_inputs.end());
}

}  // namespace

Tensor FoldCollective(const Node& node, std::span<const Tensor> inputs) {
  const auto& kind = node.attrs.Get<std::string>("collective_kind");
  const double n = static_cast<double>(inputs.size());
  if (kind == collective_kinds::kBroadcast) return inputs[0];
  if (kind == collective_kinds::kGather) {
    if (inputs[0].rank() == 0) return kernels::Stack(inputs);
    return kernels::Concat(inputs, 0);
  }
  if (kind == collective_kinds::kMapGather) return kernels::Stack(inputs);
  std::string fold = kind;
  if (kind == collective_kinds::kMapReduce) fold = node.attrs.Get<std::string>("fold");
  Tensor acc = inputs[0];
  for (size_t r = 1; r < inputs.size(); ++r) {
    kernels::AccumulateInto(ReduceOpFor(fold), acc, inputs[r]);
  }
  if (fold == collective_kinds::kMean) kernels::DivideInPlace(acc, n);
  return acc;
}

std::vector<Tensor> Evaluate(const Graph& graph, std::span<const NodeRef> fetches,
                             const FeedMap& feeds, const EvalOptions& options) {
  if (!graph.finalized()) throw EvaluationError("graph must be finalized before evaluation");

  // Mark the ancestors of the fetches.
  const int n = graph.num_nodes();
  std::vector<char> needed(n, 0);
  std::vector<int> stack;
  for (NodeRef f : fetches) {
    graph.node(f);
    if (!needed[f.index]) {
      needed[f.index] = 1;
      stack.push_back(f.index);
    }
  }
  std::vector<NodeRef> deps;
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    const Node& node = graph.node(i);
    if (options.replica >= 0 && node.replica >= 0 && node.replica != options.replica) {
      throw EvaluationError("node " + std::to_string(i) + " (" + OpKindName(node.kind) +
                            ") belongs to replica " + std::to_string(node.replica) +
                            ", not to evaluated replica " + std::to_string(options.replica));
    }
    Dependencies(node, options, deps);
    for (NodeRef d : deps) {
      if (!needed[d.index]) {
        needed[d.index] = 1;
        stack.push_back(d.index);
      }
    }
  }

  std::vector<std::optional<Tensor>> values(n);
  auto value = [&](NodeRef r) -> const Tensor& { return *values[r.index]; };

  for (int i = 0; i < n; ++i) {
    if (!needed[i]) continue;
    const Node& node = graph.node(i);
    const NodeRef self = graph.ref(i);
    switch (node.kind) {
      case OpKind::kConstant:
        values[i] = node.attrs.Get<Tensor>("value");
        break;
      case OpKind::kPlaceholder: {
        auto it = feeds.find(self);
        if (it == feeds.end()) {
          throw EvaluationError("placeholder '" + node.attrs.GetOr<std::string>("name", "") +
                                "' (node " + std::to_string(i) + ") was not fed");
        }
        if (it->second.shape() != node.shape || it->second.dtype() != node.dtype) {
          throw EvaluationError("feed for placeholder '" +
                                node.attrs.GetOr<std::string>("name", "") + "' has " +
                                DTypeName(it->second.dtype()) + it->second.shape().ToString() +
                                ", expected " + DTypeName(node.dtype) + node.shape.ToString());
        }
        values[i] = it->second;
        break;
      }
      case OpKind::kVariableRead:
        values[i] = node.attrs.Get<std::shared_ptr<VariableResource>>("variable")->Read();
        break;
      case OpKind::kAssign: {
        const auto& var = node.attrs.Get<std::shared_ptr<VariableResource>>("variable");
        var->Assign(value(node.inputs[0]));
        values[i] = value(node.inputs[0]);
        break;
      }
      case OpKind::kAdd:
      case OpKind::kSub:
      case OpKind::kMul:
      case OpKind::kDiv:
        values[i] = kernels::Binary(node.kind, value(node.inputs[0]), value(node.inputs[1]));
        break;
      case OpKind::kNeg:
      case OpKind::kRelu:
      case OpKind::kTanh:
      case OpKind::kSquare:
      case OpKind::kSqrt:
      case OpKind::kExp:
      case OpKind::kLog:
        values[i] = kernels::Unary(node.kind, value(node.inputs[0]));
        break;
      case OpKind::kIdentity:
        values[i] = value(node.inputs[0]);
        break;
      case OpKind::kMatMul:
        values[i] = kernels::MatMul(value(node.inputs[0]), value(node.inputs[1]),
                                    node.attrs.GetOr<int64_t>("transpose_a", 0) != 0,
                                    node.attrs.GetOr<int64_t>("transpose_b", 0) != 0);
        break;
      case OpKind::kReduceSum:
      case OpKind::kReduceMean: {
        std::optional<int64_t> axis;
        if (node.attrs.Has("axis")) axis = node.attrs.Get<int64_t>("axis");
        values[i] = kernels::Reduce(value(node.inputs[0]), axis,
                                    node.kind == OpKind::kReduceMean);
        break;
      }
      case OpKind::kSoftmaxCrossEntropy:
        values[i] = kernels::SoftmaxCrossEntropy(value(node.inputs[0]), value(node.inputs[1]));
        break;
      case OpKind::kSoftmaxCrossEntropyGrad:
        values[i] = kernels::SoftmaxCrossEntropyGrad(value(node.inputs[0]),
                                                     value(node.inputs[1]),
                                                     value(node.inputs[2]));
        break;
      case OpKind::kConcat: {
        std::vector<Tensor> xs;
        for (NodeRef r : node.inputs) xs.push_back(value(r));
        values[i] = kernels::Concat(xs, node.attrs.Get<int64_t>("axis"));
        break;
      }
      case OpKind::kSlice:
        values[i] = kernels::Slice(value(node.inputs[0]),
                                   node.attrs.Get<std::vector<int64_t>>("begin"),
                                   node.attrs.Get<std::vector<int64_t>>("size"));
        break;
      case OpKind::kSliceGrad:
        values[i] = kernels::SliceGrad(value(node.inputs[0]),
                                       node.attrs.Get<std::vector<int64_t>>("begin"), node.shape);
        break;
      case OpKind::kReshape:
        values[i] = value(node.inputs[0]).Reshaped(node.shape);
        break;
      case OpKind::kGroup:
        values[i] = Tensor::Scalar(0.0);
        break;
      case OpKind::kReluGrad:
        values[i] = kernels::ReluGrad(value(node.inputs[0]), value(node.inputs[1]));
        break;
      case OpKind::kBroadcastAxis:
        values[i] = kernels::BroadcastAxis(value(node.inputs[0]), node.attrs.Get<int64_t>("axis"),
                                           node.attrs.Get<int64_t>("count"));
        break;
      case OpKind::kCollectivePlaceholder:
        throw UnstitchedError("graph was not stitched: cross-replica " +
                              node.attrs.Get<std::string>("collective_kind") + " '" +
                              node.attrs.Get<std::string>("label") +
                              "' is still a placeholder");
      case OpKind::kCollective: {
        if (options.replica < 0) {
          std::vector<Tensor> xs;
          for (NodeRef r : node.inputs) xs.push_back(value(r));
          values[i] = FoldCollective(node, xs);
        } else {
          if (options.collectives == nullptr) {
            throw EvaluationError("collective '" + node.attrs.Get<std::string>("label") +
                                  "' needs a collective runtime");
          }
          const NodeRef local = node.inputs.at(node.attrs.Get<int64_t>("rank"));
          values[i] = options.collectives->Execute(node, value(local));
        }
        break;
      }
    }
  }

  std::vector<Tensor> out;
  out.reserve(fetches.size());
  for (NodeRef f : fetches) out.push_back(*values[f.index]);
  return out;
}

Tensor EvaluateOne(const Graph& graph, NodeRef fetch, const FeedMap& feeds,
                   const EvalOptions& options) {
  NodeRef fetches[] = {fetch};
  return std::move(Evaluate(graph, fetches, feeds, options)[0]);
}

}  // namespace replicator
