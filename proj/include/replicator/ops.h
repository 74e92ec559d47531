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

// Typed wrappers over Graph::AddNode.

#ifndef REPLICATOR_OPS_H_
#define REPLICATOR_OPS_H_

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "replicator/graph.h"

namespace replicator::ops {

NodeRef Constant(Graph& g, Tensor value);
NodeRef Scalar(Graph& g, double value, DType dtype = DType::kF64);
NodeRef Placeholder(Graph& g, const Shape& shape, DType dtype = DType::kF64,
                    const std::string& name = "");
NodeRef Read(Graph& g, std::shared_ptr<VariableResource> var);
NodeRef Assign(Graph& g, std::shared_ptr<VariableResource> var, NodeRef value);

NodeRef Add(Graph& g, NodeRef a, NodeRef b);
NodeRef Sub(Graph& g, NodeRef a, NodeRef b);
NodeRef Mul(Graph& g, NodeRef a, NodeRef b);
NodeRef Div(Graph& g, NodeRef a, NodeRef b);
NodeRef Neg(Graph& g, NodeRef x);
NodeRef MatMul(Graph& g, NodeRef a, NodeRef b, bool transpose_a = false,
               bool transpose_b = false);
NodeRef Relu(Graph& g, NodeRef x);
NodeRef Tanh(Graph& g, NodeRef x);
NodeRef Square(Graph& g, NodeRef x);
NodeRef Sqrt(Graph& g, NodeRef x);
NodeRef Exp(Graph& g, NodeRef x);
NodeRef Log(Graph& g, NodeRef x);
// Without an axis, reduces every element to a scalar.
NodeRef ReduceSum(Graph& g, NodeRef x, std::optional<int> axis = std::nullopt);
NodeRef ReduceMean(Graph& g, NodeRef x, std::optional<int> axis = std::nullopt);
// Per-example loss of shape (batch,) for (batch, classes) inputs.
NodeRef SoftmaxCrossEntropy(Graph& g, NodeRef logits, NodeRef labels);
NodeRef Concat(Graph& g, const std::vector<NodeRef>& xs, int axis);
NodeRef Slice(Graph& g, NodeRef x, std::vector<int64_t> begin, std::vector<int64_t> size);
NodeRef Reshape(Graph& g, NodeRef x, const Shape& shape);
NodeRef Identity(Graph& g, NodeRef x);
// Joins side-effecting nodes; evaluates to a scalar zero.
NodeRef Group(Graph& g, const std::vector<NodeRef>& xs);

}  // namespace replicator::ops

#endif  // REPLICATOR_OPS_H_
