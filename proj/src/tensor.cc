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

#include "replicator/tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace replicator {

const char* DTypeName(DType dtype) {
  return dtype == DType::kF32 ? "f32" : "f64";
}

Shape::Shape(std::initializer_list<int64_t> dims) : dims_(dims) {
  for (int64_t d : dims_) {
    if (d < 0) throw ConstructionError("negative extent in shape");
  }
}

Shape::Shape(std::vector<int64_t> dims) : dims_(std::move(dims)) {
  for (int64_t d : dims_) {
    if (d < 0) throw ConstructionError("negative extent in shape");
  }
}

int64_t Shape::num_elements() const {
  int64_t n = 1;
  for (int64_t d : dims_) n *= d;
  return n;
}

std::string Shape::ToString() const {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << ",";
    os << dims_[i];
  }
  os << ")";
  return os.str();
}

Tensor::Tensor() : shape_(), dtype_(DType::kF64), storage_(std::vector<double>(1, 0.0)) {}

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype) {
  const auto n = static_cast<size_t>(shape_.num_elements());
  if (dtype_ == DType::kF32) {
    storage_ = std::vector<float>(n, 0.0f);
  } else {
    storage_ = std::vector<double>(n, 0.0);
  }
}

Tensor Tensor::Scalar(double value, DType dtype) { return Filled(Shape{}, value, dtype); }

Tensor Tensor::FromVector(std::vector<double> values, Shape shape) {
  if (static_cast<int64_t>(values.size()) != shape.num_elements()) {
    throw ConstructionError("tensor data length " + std::to_string(values.size()) +
                            " does not match shape " + shape.ToString());
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = DType::kF64;
  t.storage_ = std::move(values);
  return t;
}

Tensor Tensor::FromVector(std::vector<float> values, Shape shape) {
  if (static_cast<int64_t>(values.size()) != shape.num_elements()) {
    throw ConstructionError("tensor data length " + std::to_string(values.size()) +
                            " does not match shape " + shape.ToString());
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = DType::kF32;
  t.storage_ = std::move(values);
  return t;
}

Tensor Tensor::Filled(Shape shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  DispatchDType(dtype, [&]<typename T>() {
    auto d = t.mutable_data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

void Tensor::CheckType(DType requested) const {
  if (requested != dtype_) {
    throw Error(std::string("tensor holds ") + DTypeName(dtype_) + ", accessed as " +
                DTypeName(requested));
  }
}

double Tensor::at(int64_t flat_index) const {
  return std::visit([&](const auto& v) { return static_cast<double>(v.at(flat_index)); },
                    storage_);
}

std::vector<double> Tensor::ToDoubles() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); },
                    storage_);
}

std::span<const uint8_t> Tensor::bytes() const {
  return std::visit(
      [](const auto& v) {
        return std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(v.data()),
                                        v.size() * sizeof(v[0]));
      },
      storage_);
}

std::span<uint8_t> Tensor::mutable_bytes() {
  return std::visit(
      [](auto& v) {
        return std::span<uint8_t>(reinterpret_cast<uint8_t*>(v.data()), v.size() * sizeof(v[0]));
      },
      storage_);
}

Tensor Tensor::Reshaped(Shape shape) const {
  if (shape.num_elements() != num_elements()) {
    throw ConstructionError("cannot reshape " + shape_.ToString() + " to " + shape.ToString());
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::Cast(DType dtype) const {
  if (dtype == dtype_) return *this;
  Tensor t(shape_, dtype);
  DispatchDType(dtype, [&]<typename T>() {
    auto out = t.mutable_data<T>();
    for (int64_t i = 0; i < num_elements(); ++i) out[i] = static_cast<T>(at(i));
  });
  return t;
}

bool Tensor::BitEqual(const Tensor& other) const {
  if (shape_ != other.shape_ || dtype_ != other.dtype_) return false;
  auto a = bytes();
  auto b = other.bytes();
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size()) == 0;
}

std::string Tensor::DebugString(int max_elements) const {
  std::ostringstream os;
  os << DTypeName(dtype_) << shape_.ToString() << "[";
  const int64_t n = num_elements();
  for (int64_t i = 0; i < std::min<int64_t>(n, max_elements); ++i) {
    if (i) os << ", ";
    os << at(i);
  }
  if (n > max_elements) os << ", ...";
  os << "]";
  return os.str();
}

uint64_t TensorChecksum(const Tensor& t, uint64_t seed) {
  uint64_t h = seed;
  auto mix = [&h](uint8_t byte) {
    h ^= byte;
    h *= 1099511628211ull;
  };
  mix(static_cast<uint8_t>(t.dtype()));
  for (int64_t d : t.shape().dims()) {
    for (int i = 0; i < 8; ++i) mix(static_cast<uint8_t>(static_cast<uint64_t>(d) >> (8 * i)));
  }
  for (uint8_t b : t.bytes()) mix(b);
  return h;
}

double MaxAbsDifference(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error("MaxAbsDifference shape mismatch " + a.shape().ToString() + " vs " +
                b.shape().ToString());
  }
  double m = 0.0;
  for (int64_t i = 0; i < a.num_elements(); ++i) m = std::max(m, std::fabs(a.at(i) - b.at(i)));
  return m;
}

}  // namespace replicator
