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

// Per-op gradient cases: each builds a scalar loss from a random variable
// through one op. Shared by the autodiff tests and the acceptance binary.

#ifndef REPLICATOR_TESTS_GRADIENT_CASES_H_
#define REPLICATOR_TESTS_GRADIENT_CASES_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "replicator/autodiff.h"
#include "replicator/executor.h"
#include "replicator/ops.h"
#include "replicator/variables.h"
#include "test_util.h"

namespace replicator::testing {

// Builds loss = f(read(var)) for a random var; compares analytic and
// numeric gradients.
struct OpCase {
  const char* name;
  std::function<Shape(std::mt19937_64&)> shape;
  double lo;
  double hi;
  std::function<NodeRef(Graph&, NodeRef, std::mt19937_64&, const Shape&)> build;
};

inline std::vector<OpCase> OpCases() {
  auto matrix = [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int64_t> d(1, 5);
    return Shape{d(rng), d(rng)};
  };
  auto any = [](std::mt19937_64& rng) { return testing::RandomShape(rng, 3, 60); };
  auto weighted = [](Graph& g, NodeRef y, std::mt19937_64& rng) {
    // Random weights make every output element matter differently.
    Tensor w = RandomTensor(rng, g.node(y).shape);
    return ops::ReduceSum(g, ops::Mul(g, y, ops::Constant(g, w)));
  };
  std::vector<OpCase> cases;
  cases.push_back({"add", any, -1, 1, [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape& s) {
                     return weighted(g, ops::Add(g, x, ops::Constant(g, RandomTensor(r, s))), r);
                   }});
  cases.push_back({"sub", any, -1, 1, [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape& s) {
                     return weighted(g, ops::Sub(g, ops::Constant(g, RandomTensor(r, s)), x), r);
                   }});
  cases.push_back({"mul", any, -1, 1, [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape&) {
                     return weighted(g, ops::Mul(g, x, x), r);
                   }});
  cases.push_back({"div", any, 0.5, 2, [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape& s) {
                     NodeRef c = ops::Constant(g, RandomTensor(r, s));
                     return weighted(g, ops::Add(g, ops::Div(g, c, x), ops::Div(g, x, ops::Scalar(g, 3.0))), r);
                   }});
  cases.push_back({"neg_scalar_mul", any, -1, 1,
                   [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape&) {
                     return weighted(g, ops::Neg(g, ops::Mul(g, ops::Scalar(g, 1.7), x)), r);
                   }});
  cases.push_back({"matmul", matrix, -1, 1,
                   [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape& s) {
                     NodeRef b = ops::Constant(g, RandomTensor(r, Shape{s.dim(1), 3}));
                     return weighted(g, ops::MatMul(g, x, b), r);
                   }});
  cases.push_back({"matmul_ta", matrix, -1, 1,
                   [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape& s) {
                     NodeRef b = ops::Constant(g, RandomTensor(r, Shape{s.dim(0), 2}));
                     return weighted(g, ops::MatMul(g, x, b, true, false), r);
                   }});
  cases.push_back({"matmul_tb", matrix, -1, 1,
                   [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape& s) {
                     NodeRef a = ops::Constant(g, RandomTensor(r, Shape{4, s.dim(1)}));
                     return weighted(g, ops::MatMul(g, a, x, false, true), r);
                   }});
  cases.push_back({"matmul_ta_tb", matrix, -1, 1,
                   [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape& s) {
                     NodeRef a = ops::Constant(g, RandomTensor(r, Shape{s.dim(1), 2}));
                     return weighted(g, ops::MatMul(g, a, x, true, true), r);
                   }});
  cases.push_back({"relu", any, -1, 1, [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape&) {
                     return weighted(g, ops::Relu(g, x), r);
                   }});
  cases.push_back({"tanh", any, -2, 2, [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape&) {
                     return weighted(g, ops::Tanh(g, x), r);
                   }});
  cases.push_back({"square", any, -2, 2, [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape&) {
                     return weighted(g, ops::Square(g, x), r);
                   }});
  cases.push_back({"sqrt", any, 0.5, 3, [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape&) {
                     return weighted(g, ops::Sqrt(g, x), r);
                   }});
  cases.push_back({"exp", any, -1, 1, [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape&) {
                     return weighted(g, ops::Exp(g, x), r);
                   }});
  cases.push_back({"log", any, 0.5, 3, [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape&) {
                     return weighted(g, ops::Log(g, x), r);
                   }});
  cases.push_back({"reduce_sum_axis", matrix, -1, 1,
                   [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape&) {
                     return weighted(g, ops::ReduceSum(g, x, static_cast<int>(r() % 2)), r);
                   }});
  cases.push_back({"reduce_mean", any, -1, 1,
                   [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape&) {
                     NodeRef m = ops::ReduceMean(g, ops::Square(g, x));
                     return ops::Mul(g, m, ops::Scalar(g, 1.0 + (r() % 3)));
                   }});
  cases.push_back({"reduce_mean_axis", matrix, -1, 1,
                   [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape&) {
                     return weighted(g, ops::ReduceMean(g, x, static_cast<int>(r() % 2)), r);
                   }});
  cases.push_back({"softmax_xent", matrix, -2, 2,
                   [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape& s) {
                     Tensor labels = RandomTensor(r, s, 0.0, 1.0);
                     return weighted(g, ops::SoftmaxCrossEntropy(g, x, ops::Constant(g, labels)), r);
                   }});
  cases.push_back({"concat", matrix, -1, 1,
                   [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape& s) {
                     const int axis = static_cast<int>(r() % 2);
                     NodeRef c = ops::Constant(g, RandomTensor(r, s));
                     return weighted(g, ops::Concat(g, {x, c, ops::Square(g, x)}, axis), r);
                   }});
  cases.push_back({"slice", matrix, -1, 1,
                   [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape& s) {
                     std::vector<int64_t> begin, size;
                     for (int i = 0; i < 2; ++i) {
                       begin.push_back(static_cast<int64_t>(r() % s.dim(i)));
                       size.push_back(1 + static_cast<int64_t>(r() % (s.dim(i) - begin.back())));
                     }
                     return weighted(g, ops::Slice(g, x, begin, size), r);
                   }});
  cases.push_back({"reshape", matrix, -1, 1,
                   [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape& s) {
                     NodeRef flat = ops::Reshape(g, x, Shape{s.num_elements()});
                     return weighted(g, ops::Tanh(g, flat), r);
                   }});
  cases.push_back({"identity", any, -1, 1,
                   [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape&) {
                     return weighted(g, ops::Identity(g, x), r);
                   }});
  cases.push_back({"scalar_broadcast", any, -1, 1,
                   [=](Graph& g, NodeRef x, std::mt19937_64& r, const Shape&) {
                     // A scalar derived from x feeds an elementwise op on x.
                     NodeRef s = ops::ReduceMean(g, x);
                     return weighted(g, ops::Mul(g, ops::Sub(g, x, s), x), r);
                   }});
  return cases;
}

// Worst relative error between analytic and central-difference gradients
// over `instances` random draws of one case.
inline double WorstGradientError(const OpCase& op, uint64_t seed, int instances) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (int trial = 0; trial < instances; ++trial) {
    const Shape shape = op.shape(rng);
    VariableStore store;
    auto x = store.GetOrCreate("x", shape, Initializer::Zeros(), DeviceTag{});
    x->Assign(RandomTensor(rng, shape, op.lo, op.hi));
    Graph g;
    NodeRef loss = op.build(g, ops::Read(g, x), rng, shape);
    NodeRef dx = Backprop(g, loss, {x})[0];
    g.Finalize();
    const Tensor analytic = EvaluateOne(g, dx);
    if (analytic.shape() != shape) return HUGE_VAL;
    worst = std::max(worst, MaxRelativeError(analytic, FiniteDifference(g, loss, *x)));
  }
  return worst;
}

}  // namespace replicator::testing

#endif  // REPLICATOR_TESTS_GRADIENT_CASES_H_
