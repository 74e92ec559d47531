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

// Reference CPU kernels. All loops run in a fixed order so results are
// reproducible bit for bit.

#ifndef REPLICATOR_KERNELS_H_
#define REPLICATOR_KERNELS_H_

#include <optional>
#include <span>
#include <vector>

#include "replicator/graph.h"
#include "replicator/tensor.h"

namespace replicator::kernels {

enum class ReduceOp { kSum, kMax };

Tensor Binary(OpKind kind, const Tensor& a, const Tensor& b);
Tensor Unary(OpKind kind, const Tensor& x);
Tensor MatMul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b);
Tensor Reduce(const Tensor& x, std::optional<int64_t> axis, bool mean);
Tensor SoftmaxCrossEntropy(const Tensor& logits, const Tensor& labels);
Tensor SoftmaxCrossEntropyGrad(const Tensor& logits, const Tensor& labels, const Tensor& dloss);
Tensor Concat(std::span<const Tensor> xs, int64_t axis);
Tensor Slice(const Tensor& x, const std::vector<int64_t>& begin, const std::vector<int64_t>& size);
Tensor SliceGrad(const Tensor& dy, const std::vector<int64_t>& begin, const Shape& input_shape);
Tensor BroadcastAxis(const Tensor& x, int64_t axis, int64_t count);
Tensor ReluGrad(const Tensor& x, const Tensor& dy);

// acc[i] = op(acc[i], x[i]) for every element.
void AccumulateInto(ReduceOp op, Tensor& acc, const Tensor& x);
// Element-wise division by a scalar count.
void DivideInPlace(Tensor& x, double count);
// Stacks equal-shaped tensors along a new leading axis.
Tensor Stack(std::span<const Tensor> xs);

}  // namespace replicator::kernels

#endif  // REPLICATOR_KERNELS_H_
