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

#ifndef REPLICATOR_TENSOR_H_
#define REPLICATOR_TENSOR_H_

#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "replicator/errors.h"

namespace replicator {

// Wire codes are fixed: 0 = f32, 1 = f64.
enum class DType : uint8_t { kF32 = 0, kF64 = 1 };

const char* DTypeName(DType dtype);

template <typename T>
constexpr DType DTypeOf() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::kF32 : DType::kF64;
}

// Row-major extents. Rank 0 is a scalar holding one element.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int64_t> dims);
  explicit Shape(std::vector<int64_t> dims);

  int rank() const { return static_cast<int>(dims_.size()); }
  int64_t dim(int i) const { return dims_.at(i); }
  const std::vector<int64_t>& dims() const { return dims_; }
  int64_t num_elements() const;
  bool is_scalar() const { return dims_.empty(); }

  std::string ToString() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<int64_t> dims_;
};

// Dense tensor with value semantics. Storage is typed per dtype so f32
// kernels run in single precision.
class Tensor {
 public:
  // f64 scalar zero.
  Tensor();
  Tensor(Shape shape, DType dtype);

  static Tensor Scalar(double value, DType dtype = DType::kF64);
  static Tensor FromVector(std::vector<double> values, Shape shape);
  static Tensor FromVector(std::vector<float> values, Shape shape);
  static Tensor Filled(Shape shape, double value, DType dtype = DType::kF64);

  const Shape& shape() const { return shape_; }
  DType dtype() const { return dtype_; }
  int64_t num_elements() const { return shape_.num_elements(); }
  int rank() const { return shape_.rank(); }

  template <typename T>
  std::span<const T> data() const {
    CheckType(DTypeOf<T>());
    const auto& v = std::get<std::vector<T>>(storage_);
    return {v.data(), v.size()};
  }

  template <typename T>
  std::span<T> mutable_data() {
    CheckType(DTypeOf<T>());
    auto& v = std::get<std::vector<T>>(storage_);
    return {v.data(), v.size()};
  }

  // Element access converting to double; intended for tests and reporting.
  double at(int64_t flat_index) const;
  std::vector<double> ToDoubles() const;

  // Raw little-endian element bytes (host order is little-endian).
  std::span<const uint8_t> bytes() const;
  std::span<uint8_t> mutable_bytes();

  // Same shape and dtype; data differs only in layout.
  Tensor Reshaped(Shape shape) const;
  Tensor Cast(DType dtype) const;

  // Bitwise equality of shape, dtype and every element.
  bool BitEqual(const Tensor& other) const;

  std::string DebugString(int max_elements = 16) const;

 private:
  void CheckType(DType requested) const;

  Shape shape_;
  DType dtype_ = DType::kF64;
  std::variant<std::vector<float>, std::vector<double>> storage_;
};

// Invokes `fn.template operator()<T>()` with T matching `dtype`.
template <typename Fn>
decltype(auto) DispatchDType(DType dtype, Fn&& fn) {
  if (dtype == DType::kF32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

// FNV-1a over shape, dtype and data bytes; used as a variable checksum.
uint64_t TensorChecksum(const Tensor& t, uint64_t seed = 1469598103934665603ull);

double MaxAbsDifference(const Tensor& a, const Tensor& b);

}  // namespace replicator

#endif  // REPLICATOR_TENSOR_H_
