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

#include "replicator/autodiff.h"

#include <optional>
#include <set>

#include "replicator/ops.h"
#include "replicator/variables.h"

namespace replicator {
namespace {

class GradientBuilder {
 public:
  GradientBuilder(Graph& g, const std::vector<std::shared_ptr<VariableResource>>& wrt)
      : g_(g) {
    for (const auto& v : wrt) targets_.insert(v.get());
  }

  std::vector<NodeRef> Run(NodeRef loss, const std::vector<std::shared_ptr<VariableResource>>& wrt) {
    const Node& loss_node = g_.node(loss);
    if (!loss_node.shape.is_scalar()) {
      throw ConstructionError("backprop: loss must be a scalar, got shape " +
                              loss_node.shape.ToString());
    }
    const int n = loss.index + 1;
    MarkRelevant(loss, n);

    grads_.assign(n, std::nullopt);
    {
      Graph::DeviceScope scope(g_, loss_node.device);
      grads_[loss.index] = ops::Scalar(g_, 1.0, loss_node.dtype);
    }
    for (int i = loss.index; i >= 0; --i) {
      if (!relevant_[i] || !grads_[i]) continue;
      const Node& node = g_.node(i);
      if (node.kind == OpKind::kVariableRead) continue;
      Graph::DeviceScope scope(g_, node.device);
      Propagate(i, *grads_[i]);
    }

    std::vector<NodeRef> out;
    for (const auto& var : wrt) {
      std::optional<NodeRef> total;
      for (int i = 0; i < n; ++i) {
        const Node& node = g_.node(i);
        if (node.kind != OpKind::kVariableRead || !grads_[i]) continue;
        if (node.attrs.Get<std::shared_ptr<VariableResource>>("variable") != var) continue;
        total = total ? ops::Add(g_, *total, *grads_[i]) : *grads_[i];
      }
      if (!total) {
        Graph::DeviceScope scope(g_, var->device());
        total = ops::Constant(g_, Tensor(var->shape(), var->dtype()));
      }
      out.push_back(*total);
    }
    return out;
  }

 private:
  // relevant_[i]: node i is an ancestor of the loss and depends on a read of
  // one of the target variables.
  void MarkRelevant(NodeRef loss, int n) {
    std::vector<char> ancestor(n, 0);
    ancestor[loss.index] = 1;
    for (int i = loss.index; i >= 0; --i) {
      if (!ancestor[i]) continue;
      for (NodeRef in : g_.node(i).inputs) ancestor[in.index] = 1;
    }
    relevant_.assign(n, 0);
    for (int i = 0; i < n; ++i) {
      if (!ancestor[i]) continue;
      const Node& node = g_.node(i);
      if (node.kind == OpKind::kVariableRead) {
        relevant_[i] =
            targets_.count(node.attrs.Get<std::shared_ptr<VariableResource>>("variable").get());
        continue;
      }
      for (NodeRef in : node.inputs) {
        if (relevant_[in.index]) relevant_[i] = 1;
      }
    }
  }

  bool Needs(NodeRef input) const { return relevant_[input.index] != 0; }

  void Accumulate(NodeRef input, NodeRef grad) {
    // Reduce over an input that was broadcast as a scalar.
    if (g_.node(input).shape.is_scalar() && !g_.node(grad).shape.is_scalar()) {
      grad = ops::ReduceSum(g_, grad);
    }
    auto& slot = grads_[input.index];
    slot = slot ? ops::Add(g_, *slot, grad) : grad;
  }

  NodeRef Const(double v, DType dtype) { return ops::Scalar(g_, v, dtype); }

  void Propagate(int index, NodeRef dy) {
    const Node& node = g_.node(index);
    const NodeRef self = g_.ref(index);
    const auto& in = node.inputs;
    const DType dt = node.dtype;
    switch (node.kind) {
      case OpKind::kAdd:
        if (Needs(in[0])) Accumulate(in[0], dy);
        if (Needs(in[1])) Accumulate(in[1], dy);
        return;
      case OpKind::kSub:
        if (Needs(in[0])) Accumulate(in[0], dy);
        if (Needs(in[1])) Accumulate(in[1], ops::Neg(g_, dy));
        return;
      case OpKind::kMul:
        if (Needs(in[0])) Accumulate(in[0], ops::Mul(g_, dy, in[1]));
        if (Needs(in[1])) Accumulate(in[1], ops::Mul(g_, dy, in[0]));
        return;
      case OpKind::kDiv:
        if (Needs(in[0])) Accumulate(in[0], ops::Div(g_, dy, in[1]));
        if (Needs(in[1])) {
          NodeRef num = ops::Mul(g_, dy, in[0]);
          Accumulate(in[1], ops::Neg(g_, ops::Div(g_, num, ops::Square(g_, in[1]))));
        }
        return;
      case OpKind::kNeg:
        Accumulate(in[0], ops::Neg(g_, dy));
        return;
      case OpKind::kIdentity:
        Accumulate(in[0], dy);
        return;
      case OpKind::kMatMul: {
        const bool ta = node.attrs.GetOr<int64_t>("transpose_a", 0) != 0;
        const bool tb = node.attrs.GetOr<int64_t>("transpose_b", 0) != 0;
        const NodeRef a = in[0];
        const NodeRef b = in[1];
        if (Needs(a)) {
          NodeRef da;
          if (!ta && !tb) da = ops::MatMul(g_, dy, b, false, true);
          if (!ta && tb) da = ops::MatMul(g_, dy, b);
          if (ta && !tb) da = ops::MatMul(g_, b, dy, false, true);
          if (ta && tb) da = ops::MatMul(g_, b, dy, true, true);
          Accumulate(a, da);
        }
        if (Needs(b)) {
          NodeRef db;
          if (!ta && !tb) db = ops::MatMul(g_, a, dy, true, false);
          if (!ta && tb) db = ops::MatMul(g_, dy, a, true, false);
          if (ta && !tb) db = ops::MatMul(g_, a, dy);
          if (ta && tb) db = ops::MatMul(g_, dy, a, true, true);
          Accumulate(b, db);
        }
        return;
      }
      case OpKind::kRelu:
        Accumulate(in[0], g_.AddNode(OpKind::kReluGrad, {in[0], dy}));
        return;
      case OpKind::kTanh: {
        NodeRef one_minus = ops::Sub(g_, Const(1.0, dt), ops::Square(g_, self));
        Accumulate(in[0], ops::Mul(g_, dy, one_minus));
        return;
      }
      case OpKind::kSquare:
        Accumulate(in[0], ops::Mul(g_, dy, ops::Mul(g_, Const(2.0, dt), in[0])));
        return;
      case OpKind::kSqrt:
        Accumulate(in[0], ops::Div(g_, dy, ops::Mul(g_, Const(2.0, dt), self)));
        return;
      case OpKind::kExp:
        Accumulate(in[0], ops::Mul(g_, dy, self));
        return;
      case OpKind::kLog:
        Accumulate(in[0], ops::Div(g_, dy, in[0]));
        return;
      case OpKind::kReduceSum:
      case OpKind::kReduceMean: {
        const Shape& xs = g_.node(in[0]).shape;
        NodeRef dx;
        double count;
        if (!node.attrs.Has("axis")) {
          dx = xs.is_scalar() ? dy : ops::Mul(g_, ops::Constant(g_, Tensor::Filled(xs, 1.0, dt)), dy);
          count = static_cast<double>(xs.num_elements());
        } else {
          const int64_t axis = node.attrs.Get<int64_t>("axis");
          count = static_cast<double>(xs.dim(static_cast<int>(axis)));
          dx = g_.AddNode(OpKind::kBroadcastAxis, {dy},
                          {{"axis", axis}, {"count", xs.dim(static_cast<int>(axis))}});
        }
        if (node.kind == OpKind::kReduceMean) dx = ops::Div(g_, dx, Const(count, dt));
        Accumulate(in[0], dx);
        return;
      }
      case OpKind::kSoftmaxCrossEntropy:
        if (Needs(in[1])) {
          throw ConstructionError(
              "backprop: softmax_cross_entropy_with_labels is not differentiable with respect "
              "to its labels");
        }
        Accumulate(in[0], g_.AddNode(OpKind::kSoftmaxCrossEntropyGrad, {in[0], in[1], dy}));
        return;
      case OpKind::kConcat: {
        const int64_t axis = node.attrs.Get<int64_t>("axis");
        int64_t offset = 0;
        for (NodeRef x : in) {
          const Shape& s = g_.node(x).shape;
          if (Needs(x)) {
            std::vector<int64_t> begin(s.rank(), 0);
            begin[axis] = offset;
            Accumulate(x, ops::Slice(g_, dy, begin, s.dims()));
          }
          offset += s.dim(static_cast<int>(axis));
        }
        return;
      }
      case OpKind::kSlice:
        Accumulate(in[0], g_.AddNode(OpKind::kSliceGrad, {dy},
                                     {{"begin", node.attrs.Get<std::vector<int64_t>>("begin")},
                                      {"input_shape", g_.node(in[0]).shape.dims()}}));
        return;
      case OpKind::kReshape:
        Accumulate(in[0], ops::Reshape(g_, dy, g_.node(in[0]).shape));
        return;
      default:
        break;
    }
    std::string what = OpKindName(node.kind);
    if (node.kind == OpKind::kCollectivePlaceholder || node.kind == OpKind::kCollective) {
      what += " '" + node.attrs.Get<std::string>("collective_kind") + "'";
    }
    throw ConstructionError("backprop: cannot differentiate through op " + what);
  }

  Graph& g_;
  std::set<const VariableResource*> targets_;
  std::vector<char> relevant_;
  std::vector<std::optional<NodeRef>> grads_;
};

}  // namespace

std::vector<NodeRef> Backprop(Graph& graph, NodeRef loss,
                              const std::vector<std::shared_ptr<VariableResource>>& wrt) {
  GradientBuilder builder(graph, wrt);
  return builder.Run(loss, wrt);
}

}  // namespace replicator
