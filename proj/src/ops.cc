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

#include "replicator/ops.h"

#include "replicator/variables.h"

namespace replicator::ops {

NodeRef Constant(Graph& g, Tensor value) {
  return g.AddNode(OpKind::kConstant, {}, {{"value", std::move(value)}});
}

NodeRef Scalar(Graph& g, double value, DType dtype) {
  return Constant(g, Tensor::Scalar(value, dtype));
}

NodeRef Placeholder(Graph& g, const Shape& shape, DType dtype, const std::string& name) {
  return g.AddNode(OpKind::kPlaceholder, {},
                   {{"shape", shape.dims()},
                    {"dtype", static_cast<int64_t>(dtype)},
                    {"name", name}});
}

NodeRef Read(Graph& g, std::shared_ptr<VariableResource> var) {
  return g.AddNode(OpKind::kVariableRead, {}, {{"variable", std::move(var)}});
}

NodeRef Assign(Graph& g, std::shared_ptr<VariableResource> var, NodeRef value) {
  return g.AddNode(OpKind::kAssign, {value}, {{"variable", std::move(var)}});
}

NodeRef Add(Graph& g, NodeRef a, NodeRef b) { return g.AddNode(OpKind::kAdd, {a, b}); }
NodeRef Sub(Graph& g, NodeRef a, NodeRef b) { return g.AddNode(OpKind::kSub, {a, b}); }
NodeRef Mul(Graph& g, NodeRef a, NodeRef b) { return g.AddNode(OpKind::kMul, {a, b}); }
NodeRef Div(Graph& g, NodeRef a, NodeRef b) { return g.AddNode(OpKind::kDiv, {a, b}); }
NodeRef Neg(Graph& g, NodeRef x) { return g.AddNode(OpKind::kNeg, {x}); }

NodeRef MatMul(Graph& g, NodeRef a, NodeRef b, bool transpose_a, bool transpose_b) {
  AttrMap attrs;
  if (transpose_a) attrs.Set("transpose_a", int64_t{1});
  if (transpose_b) attrs.Set("transpose_b", int64_t{1});
  return g.AddNode(OpKind::kMatMul, {a, b}, std::move(attrs));
}

NodeRef Relu(Graph& g, NodeRef x) { return g.AddNode(OpKind::kRelu, {x}); }
NodeRef Tanh(Graph& g, NodeRef x) { return g.AddNode(OpKind::kTanh, {x}); }
NodeRef Square(Graph& g, NodeRef x) { return g.AddNode(OpKind::kSquare, {x}); }
NodeRef Sqrt(Graph& g, NodeRef x) { return g.AddNode(OpKind::kSqrt, {x}); }
NodeRef Exp(Graph& g, NodeRef x) { return g.AddNode(OpKind::kExp, {x}); }
NodeRef Log(Graph& g, NodeRef x) { return g.AddNode(OpKind::kLog, {x}); }

NodeRef ReduceSum(Graph& g, NodeRef x, std::optional<int> axis) {
  AttrMap attrs;
  if (axis) attrs.Set("axis", static_cast<int64_t>(*axis));
  return g.AddNode(OpKind::kReduceSum, {x}, std::move(attrs));
}

NodeRef ReduceMean(Graph& g, NodeRef x, std::optional<int> axis) {
  AttrMap attrs;
  if (axis) attrs.Set("axis", static_cast<int64_t>(*axis));
  return g.AddNode(OpKind::kReduceMean, {x}, std::move(attrs));
}

NodeRef SoftmaxCrossEntropy(Graph& g, NodeRef logits, NodeRef labels) {
  return g.AddNode(OpKind::kSoftmaxCrossEntropy, {logits, labels});
}

NodeRef Concat(Graph& g, const std::vector<NodeRef>& xs, int axis) {
  return g.AddNode(OpKind::kConcat, xs, {{"axis", static_cast<int64_t>(axis)}});
}

NodeRef Slice(Graph& g, NodeRef x, std::vector<int64_t> begin, std::vector<int64_t> size) {
  return g.AddNode(OpKind::kSlice, {x}, {{"begin", std::move(begin)}, {"size", std::move(size)}});
}

NodeRef Reshape(Graph& g, NodeRef x, const Shape& shape) {
  return g.AddNode(OpKind::kReshape, {x}, {{"shape", shape.dims()}});
}

NodeRef Identity(Graph& g, NodeRef x) { return g.AddNode(OpKind::kIdentity, {x}); }

NodeRef Group(Graph& g, const std::vector<NodeRef>& xs) { return g.AddNode(OpKind::kGroup, xs); }

}  // namespace replicator::ops
