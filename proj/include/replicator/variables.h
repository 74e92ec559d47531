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

#ifndef REPLICATOR_VARIABLES_H_
#define REPLICATOR_VARIABLES_H_

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "replicator/device.h"
#include "replicator/tensor.h"

namespace replicator {

// Named initialization rule. The seed is part of the rule so every replica
// (and every single-device oracle run) reproduces the same values.
struct Initializer {
  enum class Kind { kZeros, kConstant, kUniform };

  Kind kind = Kind::kZeros;
  double value = 0.0;  // constant value, or half-width for uniform
  uint64_t seed = 0;

  static Initializer Zeros() { return {Kind::kZeros, 0.0, 0}; }
  static Initializer Constant(double c) { return {Kind::kConstant, c, 0}; }
  static Initializer Uniform(double scale, uint64_t seed) { return {Kind::kUniform, scale, seed}; }

  Tensor Make(const Shape& shape, DType dtype) const;
  std::string ToString() const;
};

// Storage identified by (name, device). Reads return immutable snapshots;
// writes replace the whole tensor, so readers never observe a partial update.
class VariableResource {
 public:
  VariableResource(std::string name, DeviceTag device, Shape shape, DType dtype,
                   Initializer init, bool trainable);

  const std::string& name() const { return name_; }
  const DeviceTag& device() const { return device_; }
  const Shape& shape() const { return shape_; }
  DType dtype() const { return dtype_; }
  const Initializer& initializer() const { return init_; }
  bool trainable() const { return trainable_; }

  std::shared_ptr<const Tensor> Snapshot() const;
  Tensor Read() const { return *Snapshot(); }
  void Assign(Tensor value);
  void Initialize() { Assign(init_.Make(shape_, dtype_)); }

 private:
  const std::string name_;
  const DeviceTag device_;
  const Shape shape_;
  const DType dtype_;
  const Initializer init_;
  const bool trainable_;

  mutable std::mutex mu_;
  std::shared_ptr<const Tensor> value_;
};

// Process-local resource manager. Two declarations with the same
// (name, device) share storage.
class VariableStore {
 public:
  // Creates and initializes on first use; later calls must agree on shape
  // and dtype and return the same resource.
  std::shared_ptr<VariableResource> GetOrCreate(const std::string& name, const Shape& shape,
                                                const Initializer& init, const DeviceTag& device,
                                                DType dtype = DType::kF64, bool trainable = true);

  std::shared_ptr<VariableResource> Find(const std::string& name, const DeviceTag& device) const;
  std::vector<std::shared_ptr<VariableResource>> All() const;
  std::vector<std::shared_ptr<VariableResource>> OnDevice(const DeviceTag& device) const;

 private:
  mutable std::mutex mu_;
  std::map<std::pair<std::string, DeviceTag>, std::shared_ptr<VariableResource>> vars_;
};

// Checksum over the given variables in order.
uint64_t VariablesChecksum(const std::vector<std::shared_ptr<VariableResource>>& vars);

}  // namespace replicator

#endif  // REPLICATOR_VARIABLES_H_
