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

#include "replicator/kernels.h"

#include <algorithm>
#include <cmath>

namespace replicator::kernels {
namespace {

struct AxisSplit {
  int64_t outer = 1;
  int64_t extent = 1;
  int64_t inner = 1;
};

AxisSplit SplitAt(const Shape& s, int64_t axis) {
  AxisSplit out;
  for (int i = 0; i < s.rank(); ++i) {
    if (i < axis) {
      out.outer *= s.dim(i);
    } else if (i == axis) {
      out.extent = s.dim(i);
    } else {
      out.inner *= s.dim(i);
    }
  }
  return out;
}

void CheckSameDType(const Tensor& a, const Tensor& b, const char* what) {
  if (a.dtype() != b.dtype()) {
    throw EvaluationError(std::string(what) + ": mixed dtypes");
  }
}

}  // namespace

Tensor Binary(OpKind kind, const Tensor& a, const Tensor& b) {
  CheckSameDType(a, b, OpKindName(kind));
  const bool a_scalar = a.shape().is_scalar();
  const bool b_scalar = b.shape().is_scalar();
  if (!(a.shape() == b.shape() || a_scalar || b_scalar)) {
    throw EvaluationError(std::string(OpKindName(kind)) + ": shape mismatch " +
                          a.shape().ToString() + " vs " + b.shape().ToString());
  }
  const Shape& out_shape = (a_scalar && !b_scalar) ? b.shape() : a.shape();
  Tensor out(out_shape, a.dtype());
  DispatchDType(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto z = out.mutable_data<T>();
    const int64_t n = out.num_elements();
    for (int64_t i = 0; i < n; ++i) {
      const T u = a_scalar ? x[0] : x[i];
      const T v = b_scalar ? y[0] : y[i];
      switch (kind) {
        case OpKind::kAdd:
          z[i] = u + v;
          break;
        case OpKind::kSub:
          z[i] = u - v;
          break;
        case OpKind::kMul:
          z[i] = u * v;
          break;
        case OpKind::kDiv:
          z[i] = u / v;
          break;
        default:
          throw EvaluationError(std::string("not a binary op: ") + OpKindName(kind));
      }
    }
  });
  return out;
}

Tensor Unary(OpKind kind, const Tensor& x) {
  Tensor out(x.shape(), x.dtype());
  DispatchDType(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    auto z = out.mutable_data<T>();
    for (size_t i = 0; i < in.size(); ++i) {
      const T v = in[i];
      switch (kind) {
        case OpKind::kNeg:
          z[i] = -v;
          break;
        case OpKind::kRelu:
          z[i] = v > T(0) ? v : T(0);
          break;
        case OpKind::kTanh:
          z[i] = std::tanh(v);
          break;
        case OpKind::kSquare:
          z[i] = v * v;
          break;
        case OpKind::kSqrt:
          z[i] = std::sqrt(v);
          break;
        case OpKind::kExp:
          z[i] = std::exp(v);
          break;
        case OpKind::kLog:
          z[i] = std::log(v);
          break;
        case OpKind::kIdentity:
          z[i] = v;
          break;
        default:
          throw EvaluationError(std::string("not a unary op: ") + OpKindName(kind));
      }
    }
  });
  return out;
}

Tensor MatMul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  CheckSameDType(a, b, "matmul");
  const int64_t a0 = a.shape().dim(0), a1 = a.shape().dim(1);
  const int64_t b0 = b.shape().dim(0), b1 = b.shape().dim(1);
  const int64_t m = transpose_a ? a1 : a0;
  const int64_t k = transpose_a ? a0 : a1;
  const int64_t n = transpose_b ? b0 : b1;
  if ((transpose_b ? b1 : b0) != k) throw EvaluationError("matmul: contraction mismatch");
  Tensor out(Shape{m, n}, a.dtype());
  DispatchDType(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto z = out.mutable_data<T>();
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < n; ++j) {
        T acc = T(0);
        for (int64_t p = 0; p < k; ++p) {
          const T u = transpose_a ? x[p * a1 + i] : x[i * a1 + p];
          const T v = transpose_b ? y[j * b1 + p] : y[p * b1 + j];
          acc += u * v;
        }
        z[i * n + j] = acc;
      }
    }
  });
  return out;
}

Tensor Reduce(const Tensor& x, std::optional<int64_t> axis, bool mean) {
  if (!axis) {
    Tensor out(Shape{}, x.dtype());
    DispatchDType(x.dtype(), [&]<typename T>() {
      T acc = T(0);
      for (T v : x.data<T>()) acc += v;
      if (mean) acc /= static_cast<T>(x.num_elements());
      out.mutable_data<T>()[0] = acc;
    });
    return out;
  }
  const AxisSplit s = SplitAt(x.shape(), *axis);
  std::vector<int64_t> dims = x.shape().dims();
  dims.erase(dims.begin() + *axis);
  Tensor out{Shape(dims), x.dtype()};
  DispatchDType(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    auto z = out.mutable_data<T>();
    for (int64_t o = 0; o < s.outer; ++o) {
      for (int64_t i = 0; i < s.inner; ++i) {
        T acc = T(0);
        for (int64_t e = 0; e < s.extent; ++e) acc += in[(o * s.extent + e) * s.inner + i];
        if (mean) acc /= static_cast<T>(s.extent);
        z[o * s.inner + i] = acc;
      }
    }
  });
  return out;
}

Tensor SoftmaxCrossEntropy(const Tensor& logits, const Tensor& labels) {
  CheckSameDType(logits, labels, "softmax_cross_entropy_with_labels");
  const int64_t rows = logits.shape().dim(0);
  const int64_t cols = logits.shape().dim(1);
  Tensor out(Shape{rows}, logits.dtype());
  DispatchDType(logits.dtype(), [&]<typename T>() {
    auto x = logits.data<T>();
    auto y = labels.data<T>();
    auto z = out.mutable_data<T>();
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = x.data() + r * cols;
      T m = row[0];
      for (int64_t c = 1; c < cols; ++c) m = std::max(m, row[c]);
      T s = T(0);
      for (int64_t c = 0; c < cols; ++c) s += std::exp(row[c] - m);
      const T lse = m + std::log(s);
      T loss = T(0);
      for (int64_t c = 0; c < cols; ++c) loss += y[r * cols + c] * (lse - row[c]);
      z[r] = loss;
    }
  });
  return out;
}

Tensor SoftmaxCrossEntropyGrad(const Tensor& logits, const Tensor& labels, const Tensor& dloss) {
  const int64_t rows = logits.shape().dim(0);
  const int64_t cols = logits.shape().dim(1);
  Tensor out(logits.shape(), logits.dtype());
  DispatchDType(logits.dtype(), [&]<typename T>() {
    auto x = logits.data<T>();
    auto y = labels.data<T>();
    auto g = dloss.data<T>();
    auto z = out.mutable_data<T>();
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = x.data() + r * cols;
      T m = row[0];
      for (int64_t c = 1; c < cols; ++c) m = std::max(m, row[c]);
      T s = T(0);
      for (int64_t c = 0; c < cols; ++c) s += std::exp(row[c] - m);
      T label_mass = T(0);
      for (int64_t c = 0; c < cols; ++c) label_mass += y[r * cols + c];
      for (int64_t c = 0; c < cols; ++c) {
        const T p = std::exp(row[c] - m) / s;
        z[r * cols + c] = g[r] * (label_mass * p - y[r * cols + c]);
      }
    }
  });
  return out;
}

Tensor Concat(std::span<const Tensor> xs, int64_t axis) {
  if (xs.empty()) throw EvaluationError("concat: no inputs");
  std::vector<int64_t> dims = xs[0].shape().dims();
  dims[axis] = 0;
  for (const Tensor& t : xs) dims[axis] += t.shape().dim(static_cast<int>(axis));
  Tensor out{Shape(dims), xs[0].dtype()};
  const AxisSplit os = SplitAt(out.shape(), axis);
  DispatchDType(out.dtype(), [&]<typename T>() {
    auto z = out.mutable_data<T>();
    int64_t offset = 0;
    for (const Tensor& t : xs) {
      const AxisSplit s = SplitAt(t.shape(), axis);
      auto in = t.data<T>();
      for (int64_t o = 0; o < s.outer; ++o) {
        for (int64_t e = 0; e < s.extent; ++e) {
          for (int64_t i = 0; i < s.inner; ++i) {
            z[(o * os.extent + offset + e) * os.inner + i] = in[(o * s.extent + e) * s.inner + i];
          }
        }
      }
      offset += s.extent;
    }
  });
  return out;
}

namespace {

// Visits every index of `shape` in row-major order, passing the flat index
// into a tensor of shape `outer` offset by `begin`.
template <typename Fn>
void ForEachWindow(const Shape& window, const Shape& outer, const std::vector<int64_t>& begin,
                   Fn&& fn) {
  const int rank = window.rank();
  const int64_t n = window.num_elements();
  std::vector<int64_t> idx(rank, 0);
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t outer_flat = 0;
    for (int d = 0; d < rank; ++d) outer_flat = outer_flat * outer.dim(d) + begin[d] + idx[d];
    fn(flat, outer_flat);
    for (int d = rank - 1; d >= 0; --d) {
      if (++idx[d] < window.dim(d)) break;
      idx[d] = 0;
    }
  }
}

}  // namespace

Tensor Slice(const Tensor& x, const std::vector<int64_t>& begin, const std::vector<int64_t>& size) {
  Shape window(size);
  Tensor out(window, x.dtype());
  DispatchDType(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    auto z = out.mutable_data<T>();
    ForEachWindow(window, x.shape(), begin,
                  [&](int64_t w, int64_t o) { z[w] = in[o]; });
  });
  return out;
}

Tensor SliceGrad(const Tensor& dy, const std::vector<int64_t>& begin, const Shape& input_shape) {
  Tensor out(input_shape, dy.dtype());
  DispatchDType(dy.dtype(), [&]<typename T>() {
    auto in = dy.data<T>();
    auto z = out.mutable_data<T>();
    ForEachWindow(dy.shape(), input_shape, begin,
                  [&](int64_t w, int64_t o) { z[o] = in[w]; });
  });
  return out;
}

Tensor BroadcastAxis(const Tensor& x, int64_t axis, int64_t count) {
  std::vector<int64_t> dims = x.shape().dims();
  dims.insert(dims.begin() + axis, count);
  Tensor out{Shape(dims), x.dtype()};
  const AxisSplit s = SplitAt(out.shape(), axis);
  DispatchDType(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    auto z = out.mutable_data<T>();
    for (int64_t o = 0; o < s.outer; ++o) {
      for (int64_t e = 0; e < s.extent; ++e) {
        for (int64_t i = 0; i < s.inner; ++i) {
          z[(o * s.extent + e) * s.inner + i] = in[o * s.inner + i];
        }
      }
    }
  });
  return out;
}

Tensor ReluGrad(const Tensor& x, const Tensor& dy) {
  Tensor out(x.shape(), x.dtype());
  DispatchDType(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    auto g = dy.data<T>();
    auto z = out.mutable_data<T>();
    for (size_t i = 0; i < in.size(); ++i) z[i] = in[i] > T(0) ? g[i] : T(0);
  });
  return out;
}

void AccumulateInto(ReduceOp op, Tensor& acc, const Tensor& x) {
  if (acc.shape().num_elements() != x.shape().num_elements() || acc.dtype() != x.dtype()) {
    throw ProtocolError("reduction operands disagree: " + std::string(DTypeName(acc.dtype())) +
                        acc.shape().ToString() + " vs " + DTypeName(x.dtype()) +
                        x.shape().ToString());
  }
  DispatchDType(acc.dtype(), [&]<typename T>() {
    auto a = acc.mutable_data<T>();
    auto b = x.data<T>();
    if (op == ReduceOp::kSum) {
      for (size_t i = 0; i < a.size(); ++i) a[i] = a[i] + b[i];
    } else {
      for (size_t i = 0; i < a.size(); ++i) a[i] = a[i] < b[i] ? b[i] : a[i];
    }
  });
}

void DivideInPlace(Tensor& x, double count) {
  DispatchDType(x.dtype(), [&]<typename T>() {
    const T c = static_cast<T>(count);
    for (auto& v : x.mutable_data<T>()) v = v / c;
  });
}

Tensor Stack(std::span<const Tensor> xs) {
  if (xs.empty()) throw EvaluationError("stack: no inputs");
  std::vector<int64_t> dims = xs[0].shape().dims();
  dims.insert(dims.begin(), static_cast<int64_t>(xs.size()));
  Tensor out{Shape(dims), xs[0].dtype()};
  auto z = out.mutable_bytes();
  size_t offset = 0;
  for (const Tensor& t : xs) {
    if (t.shape() != xs[0].shape() || t.dtype() != xs[0].dtype()) {
      throw ProtocolError("stack: operands disagree on shape");
    }
    auto b = t.bytes();
    std::copy(b.begin(), b.end(), z.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += b.size();
  }
  return out;
}

}  // namespace replicator::kernels
