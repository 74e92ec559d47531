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

#ifndef REPLICATOR_COLLECTIVES_H_
#define REPLICATOR_COLLECTIVES_H_

#include <chrono>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "replicator/executor.h"
#include "replicator/kernels.h"
#include "replicator/transport.h"

namespace replicator {

using kernels::ReduceOp;

struct CommunicatorOptions {
  // Bounds every receive inside a collective. Unset waits until a group
  // member dies.
  std::optional<std::chrono::milliseconds> timeout;
};

// One rank's handle on a collective group. Rank is the position of the
// mesh's device in `members`. Every rank must issue the same collectives,
// with the same labels, kinds and shapes, in the same order within a
// generation.
class Communicator {
 public:
  Communicator(Mesh mesh, std::vector<DeviceTag> members, CommunicatorOptions options = {});

  int rank() const { return rank_; }
  int size() const { return static_cast<int>(members_.size()); }
  const std::vector<DeviceTag>& members() const { return members_; }
  const Mesh& mesh() const { return mesh_; }

  // Labels may repeat across generations, never within one.
  void BeginGeneration(uint64_t generation);
  uint64_t generation() const { return generation_; }

  // Elementwise reduction; every rank gets a result bit-identical to
  // folding the inputs in ascending rank order.
  Tensor AllReduce(const Tensor& local, ReduceOp op, const std::string& label);
  Tensor AllSum(const Tensor& local, const std::string& label);
  Tensor AllMean(const Tensor& local, const std::string& label);

  // Inputs may differ in the leading dimension only.
  std::vector<Tensor> AllGather(const Tensor& local, const std::string& label);

  // Rank 0's `value` is returned everywhere; other ranks pass a tensor of
  // the expected shape and dtype.
  Tensor Broadcast(const Tensor& value, const std::string& label);

  // Sends this rank's value to the driver, which lives with rank 0. See
  // CollectMapValues.
  void MapSend(const Tensor& local, const std::string& label);

 private:
  enum class Kind { kReduceSum, kReduceMax, kGather, kBroadcast, kReduceMean };

  void Claim(const std::string& label);
  std::string Tag(const std::string& label, const std::string& part) const;
  RecvOptions Watching() const;
  void AgreeOn(Kind kind, const Tensor& local, const std::string& label);
  Tensor Ring(const Tensor& local, ReduceOp op, const std::string& label);
  Tensor Reduce(const Tensor& local, ReduceOp op, Kind kind, const std::string& label);

  Mesh mesh_;
  std::vector<DeviceTag> members_;
  CommunicatorOptions options_;
  int rank_ = -1;
  uint64_t generation_ = 0;
  std::mutex mu_;
  std::set<std::string> used_labels_;
};

// Driver side of map_gather / map_reduce: receives one value per member in
// rank order on `driver`, which must be the mesh of members[0].
std::vector<Tensor> CollectMapValues(Mesh& driver, const std::vector<DeviceTag>& members,
                                     uint64_t generation, const std::string& label,
                                     const CommunicatorOptions& options = {});

// Executes bound collective nodes of a stitched graph for one replica.
class CommunicatorRuntime : public CollectiveRuntime {
 public:
  explicit CommunicatorRuntime(Communicator& comm) : comm_(comm) {}
  Tensor Execute(const Node& node, const Tensor& local) override;

 private:
  Communicator& comm_;
};

}  // namespace replicator

#endif  // REPLICATOR_COLLECTIVES_H_
