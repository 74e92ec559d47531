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

// Test-only helpers: random tensors, finite differences and naive
// reference folds. Nothing here calls into the code paths under test except
// forward evaluation.

#ifndef REPLICATOR_TESTS_TEST_UTIL_H_
#define REPLICATOR_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <random>
#include <vector>

#include "replicator/executor.h"
#include "replicator/tensor.h"
#include "replicator/variables.h"

namespace replicator::testing {

inline Tensor RandomTensor(std::mt19937_64& rng, const Shape& shape, double lo = -1.0,
                           double hi = 1.0, DType dtype = DType::kF64) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape, dtype);
  DispatchDType(dtype, [&]<typename T>() {
    for (auto& v : t.mutable_data<T>()) v = static_cast<T>(dist(rng));
  });
  return t;
}

inline Shape RandomShape(std::mt19937_64& rng, int max_rank, int64_t max_elements) {
  std::uniform_int_distribution<int> rank_dist(0, max_rank);
  const int rank = rank_dist(rng);
  std::vector<int64_t> dims;
  int64_t total = 1;
  for (int i = 0; i < rank; ++i) {
    const int64_t cap = std::max<int64_t>(1, std::min<int64_t>(24, max_elements / total));
    std::uniform_int_distribution<int64_t> d(1, cap);
    dims.push_back(d(rng));
    total *= dims.back();
  }
  return Shape(dims);
}

// Central differences of `loss` with respect to every element of `var`.
inline Tensor FiniteDifference(const Graph& g, NodeRef loss, VariableResource& var,
                               const FeedMap& feeds = {}, double step = 1e-6) {
  const Tensor base = var.Read();
  Tensor grad(base.shape(), DType::kF64);
  auto out = grad.mutable_data<double>();
  for (int64_t i = 0; i < base.num_elements(); ++i) {
    Tensor plus = base;
    plus.mutable_data<double>()[i] += step;
    var.Assign(plus);
    const double fp = EvaluateOne(g, loss, feeds).at(0);
    Tensor minus = base;
    minus.mutable_data<double>()[i] -= step;
    var.Assign(minus);
    const double fm = EvaluateOne(g, loss, feeds).at(0);
    out[i] = (fp - fm) / (2 * step);
  }
  var.Assign(base);
  return grad;
}

// max |a - b| / max(1, |b|) elementwise.
inline double MaxRelativeError(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.num_elements(); ++i) {
    const double denom = std::max(1.0, std::fabs(b.at(i)));
    worst = std::max(worst, std::fabs(a.at(i) - b.at(i)) / denom);
  }
  return worst;
}

// Rank-ordered fold ((t0 op t1) op t2)... over f64 tensors, written with
// plain loops.
inline std::vector<double> NaiveFoldSum(const std::vector<Tensor>& ts) {
  std::vector<double> acc = ts[0].ToDoubles();
  for (size_t r = 1; r < ts.size(); ++r) {
    const auto v = ts[r].ToDoubles();
    for (size_t i = 0; i < acc.size(); ++i) acc[i] = acc[i] + v[i];
  }
  return acc;
}

inline std::vector<double> NaiveFoldMax(const std::vector<Tensor>& ts) {
  std::vector<double> acc = ts[0].ToDoubles();
  for (size_t r = 1; r < ts.size(); ++r) {
    const auto v = ts[r].ToDoubles();
    for (size_t i = 0; i < acc.size(); ++i) acc[i] = acc[i] < v[i] ? v[i] : acc[i];
  }
  return acc;
}

inline bool BitEqualDoubles(const Tensor& t, const std::vector<double>& expect) {
  if (t.dtype() != DType::kF64 || static_cast<size_t>(t.num_elements()) != expect.size()) {
    return false;
  }
  auto d = t.data<double>();
  return std::equal(d.begin(), d.end(), expect.begin(), [](double a, double b) {
    return std::memcmp(&a, &b, sizeof(double)) == 0;
  });
}

}  // namespace replicator::testing

#endif  // REPLICATOR_TESTS_TEST_UTIL_H_
