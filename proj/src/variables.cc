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

#include "replicator/variables.h"

#include <random>
#include <sstream>

namespace replicator {

Tensor Initializer::Make(const Shape& shape, DType dtype) const {
  switch (kind) {
    case Kind::kZeros:
      return Tensor(shape, dtype);
    case Kind::kConstant:
      return Tensor::Filled(shape, value, dtype);
    case Kind::kUniform: {
      Tensor t(shape, dtype);
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> dist(-value, value);
      DispatchDType(dtype, [&]<typename T>() {
        for (auto& x : t.mutable_data<T>()) x = static_cast<T>(dist(rng));
      });
      return t;
    }
  }
  return Tensor(shape, dtype);
}

std::string Initializer::ToString() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::kZeros:
      os << "zeros";
      break;
    case Kind::kConstant:
      os << "constant(" << value << ")";
      break;
    case Kind::kUniform:
      os << "uniform(" << value << ", seed=" << seed << ")";
      break;
  }
  return os.str();
}

VariableResource::VariableResource(std::string name, DeviceTag device, Shape shape, DType dtype,
                                   Initializer init, bool trainable)
    : name_(std::move(name)),
      device_(std::move(device)),
      shape_(std::move(shape)),
      dtype_(dtype),
      init_(init),
      trainable_(trainable) {
  Initialize();
}

std::shared_ptr<const Tensor> VariableResource::Snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return value_;
}

void VariableResource::Assign(Tensor value) {
  if (value.shape() != shape_ || value.dtype() != dtype_) {
    throw Error("assigning " + std::string(DTypeName(value.dtype())) + value.shape().ToString() +
                " to variable '" + name_ + "' of " + DTypeName(dtype_) + shape_.ToString());
  }
  auto next = std::make_shared<const Tensor>(std::move(value));
  std::lock_guard<std::mutex> lock(mu_);
  value_.swap(next);
}

std::shared_ptr<VariableResource> VariableStore::GetOrCreate(const std::string& name,
                                                             const Shape& shape,
                                                             const Initializer& init,
                                                             const DeviceTag& device, DType dtype,
                                                             bool trainable) {
  std::lock_guard<std::mutex> lock(mu_);
  auto key = std::make_pair(name, device);
  auto it = vars_.find(key);
  if (it != vars_.end()) {
    const auto& existing = it->second;
    if (existing->shape() != shape || existing->dtype() != dtype) {
      throw ConstructionError("variable '" + name + "' on " + device.ToString() +
                              " already exists with shape " + existing->shape().ToString() +
                              "; requested " + shape.ToString());
    }
    return existing;
  }
  auto var = std::make_shared<VariableResource>(name, device, shape, dtype, init, trainable);
  vars_.emplace(std::move(key), var);
  return var;
}

std::shared_ptr<VariableResource> VariableStore::Find(const std::string& name,
                                                      const DeviceTag& device) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = vars_.find({name, device});
  return it == vars_.end() ? nullptr : it->second;
}

std::vector<std::shared_ptr<VariableResource>> VariableStore::All() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::shared_ptr<VariableResource>> out;
  for (const auto& [key, var] : vars_) out.push_back(var);
  return out;
}

std::vector<std::shared_ptr<VariableResource>> VariableStore::OnDevice(
    const DeviceTag& device) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::shared_ptr<VariableResource>> out;
  for (const auto& [key, var] : vars_) {
    if (key.second == device) out.push_back(var);
  }
  return out;
}

uint64_t VariablesChecksum(const std::vector<std::shared_ptr<VariableResource>>& vars) {
  uint64_t h = 1469598103934665603ull;
  for (const auto& v : vars) h = TensorChecksum(*v->Snapshot(), h);
  return h;
}

}  // namespace replicator
