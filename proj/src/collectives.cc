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

#include "replicator/collectives.h"

#include <algorithm>
#include <cstring>

namespace replicator {
namespace {

const char* KindText(int code) {
  switch (code) {
    case 0: return "sum";
    case 1: return "max";
    case 2: return "gather";
    case 3: return "broadcast";
    case 4: return "mean";
  }
  return "?";
}

// [kind, dtype, rank, dims...] as an f64 vector.
Tensor Descriptor(int kind, const Tensor& t) {
  std::vector<double> d = {static_cast<double>(kind), static_cast<double>(t.dtype()),
                           static_cast<double>(t.rank())};
  for (int64_t x : t.shape().dims()) d.push_back(static_cast<double>(x));
  const auto n = static_cast<int64_t>(d.size());
  return Tensor::FromVector(std::move(d), Shape{n});
}

std::string DescribeDescriptor(const Tensor& d) {
  std::string out = KindText(static_cast<int>(d.at(0)));
  out += d.at(1) == 0 ? " f32(" : " f64(";
  for (int64_t i = 3; i < d.num_elements(); ++i) {
    if (i > 3) out += ",";
    out += std::to_string(static_cast<int64_t>(d.at(i)));
  }
  return out + ")";
}

bool Compatible(const Tensor& a, const Tensor& b, bool ignore_leading) {
  if (a.num_elements() != b.num_elements()) return false;
  for (int64_t i = 0; i < a.num_elements(); ++i) {
    if (ignore_leading && i == 3) continue;
    if (a.at(i) != b.at(i)) return false;
  }
  return true;
}

// Chunk k of the zero-padded flattening of `t`, `c` elements long.
Tensor Chunk(const Tensor& t, int64_t k, int64_t c) {
  Tensor out(Shape{c}, t.dtype());
  DispatchDType(t.dtype(), [&]<typename T>() {
    auto src = t.data<T>();
    auto dst = out.mutable_data<T>();
    const int64_t begin = std::min<int64_t>(k * c, static_cast<int64_t>(src.size()));
    const int64_t end = std::min<int64_t>((k + 1) * c, static_cast<int64_t>(src.size()));
    std::copy(src.begin() + begin, src.begin() + end, dst.begin());
  });
  return out;
}

}  // namespace

Communicator::Communicator(Mesh mesh, std::vector<DeviceTag> members, CommunicatorOptions options)
    : mesh_(std::move(mesh)), members_(std::move(members)), options_(options) {
  if (members_.empty()) throw ConfigError("collective group must have at least one member");
  for (size_t i = 0; i < members_.size(); ++i) {
    for (size_t j = i + 1; j < members_.size(); ++j) {
      if (members_[i] == members_[j]) {
        throw ConfigError("device " + members_[i].ToString() + " appears twice in the group");
      }
    }
    if (members_[i] == mesh_.self()) rank_ = static_cast<int>(i);
  }
  if (rank_ < 0) {
    throw ConfigError("device " + mesh_.self().ToString() + " is not a member of the group");
  }
}

void Communicator::BeginGeneration(uint64_t generation) {
  std::lock_guard<std::mutex> lock(mu_);
  generation_ = generation;
  used_labels_.clear();
}

void Communicator::Claim(const std::string& label) {
  std::lock_guard<std::mutex> lock(mu_);
  if (!used_labels_.insert(label).second) {
    throw ProtocolError("collective label '" + label + "' used twice in generation " +
                        std::to_string(generation_));
  }
}

std::string Communicator::Tag(const std::string& label, const std::string& part) const {
  return "c/" + std::to_string(generation_) + "/" + label + "/" + part;
}

RecvOptions Communicator::Watching() const {
  RecvOptions o;
  o.timeout = options_.timeout;
  for (const auto& m : members_) {
    if (m != mesh_.self()) o.watch.push_back(m);
  }
  return o;
}

void Communicator::AgreeOn(Kind kind, const Tensor& local, const std::string& label) {
  const int n = size();
  const int code = static_cast<int>(kind);
  std::vector<Tensor> all(n);
  all[rank_] = Descriptor(code, local);
  const std::string tag = Tag(label, "d");
  for (int r = 0; r < n; ++r) {
    if (r != rank_) mesh_.Send(members_[r], tag, all[rank_], MessageType::kCollective);
  }
  const RecvOptions opts = Watching();
  for (int r = 0; r < n; ++r) {
    if (r != rank_) all[r] = mesh_.Recv(members_[r], tag, opts);
  }
  // Every rank holds the same descriptors, so every rank reports the same
  // first divergence.
  for (int r = 1; r < n; ++r) {
    if (!Compatible(all[0], all[r], kind == Kind::kGather)) {
      throw ProtocolError("collective '" + label + "': rank 0 issued " +
                          DescribeDescriptor(all[0]) + " but rank " + std::to_string(r) +
                          " issued " + DescribeDescriptor(all[r]));
    }
  }
}

// Every chunk is reduced along the chain 0 -> 1 -> ... -> N-1, so each
// element is accumulated in ascending rank order. Finished chunks then
// travel N-1 -> 0 -> ... -> N-2. Chunks are pipelined along the ring.
Tensor Communicator::Ring(const Tensor& local, ReduceOp op, const std::string& label) {
  const int n = size();
  const int64_t m = local.num_elements();
  const int64_t c = (m + n - 1) / n;
  const DeviceTag& next = members_[(rank_ + 1) % n];
  const DeviceTag& prev = members_[(rank_ + n - 1) % n];
  const RecvOptions opts = Watching();

  std::vector<Tensor> done(n);
  for (int k = 0; k < n; ++k) {
    const std::string tag = Tag(label, "r" + std::to_string(k));
    Tensor acc;
    if (rank_ == 0) {
      acc = Chunk(local, k, c);
    } else {
      acc = mesh_.Recv(prev, tag, opts);
      kernels::AccumulateInto(op, acc, Chunk(local, k, c));
    }
    if (rank_ < n - 1) {
      mesh_.Send(next, tag, std::move(acc), MessageType::kCollective);
    } else {
      done[k] = std::move(acc);
    }
  }
  for (int k = 0; k < n; ++k) {
    const std::string tag = Tag(label, "g" + std::to_string(k));
    if (rank_ != n - 1) done[k] = mesh_.Recv(prev, tag, opts);
    if (rank_ != n - 2) mesh_.Send(next, tag, done[k], MessageType::kCollective);
  }

  Tensor out(local.shape(), local.dtype());
  DispatchDType(local.dtype(), [&]<typename T>() {
    auto dst = out.mutable_data<T>();
    for (int k = 0; k < n; ++k) {
      auto src = done[k].data<T>();
      const int64_t begin = k * c;
      const int64_t count = std::max<int64_t>(0, std::min<int64_t>(c, m - begin));
      std::copy(src.begin(), src.begin() + count, dst.begin() + begin);
    }
  });
  return out;
}

Tensor Communicator::Reduce(const Tensor& local, ReduceOp op, Kind kind, const std::string& label) {
  Claim(label);
  if (size() == 1) return local;
  AgreeOn(kind, local, label);
  return Ring(local, op, label);
}

Tensor Communicator::AllReduce(const Tensor& local, ReduceOp op, const std::string& label) {
  return Reduce(local, op, op == ReduceOp::kSum ? Kind::kReduceSum : Kind::kReduceMax, label);
}

Tensor Communicator::AllSum(const Tensor& local, const std::string& label) {
  return AllReduce(local, ReduceOp::kSum, label);
}

Tensor Communicator::AllMean(const Tensor& local, const std::string& label) {
  Tensor sum = Reduce(local, ReduceOp::kSum, Kind::kReduceMean, label);
  kernels::DivideInPlace(sum, static_cast<double>(size()));
  return sum;
}

std::vector<Tensor> Communicator::AllGather(const Tensor& local, const std::string& label) {
  Claim(label);
  const int n = size();
  std::vector<Tensor> out(n);
  out[rank_] = local;
  if (n == 1) return out;
  AgreeOn(Kind::kGather, local, label);
  const std::string tag = Tag(label, "a");
  for (int r = 0; r < n; ++r) {
    if (r != rank_) mesh_.Send(members_[r], tag, local, MessageType::kCollective);
  }
  const RecvOptions opts = Watching();
  for (int r = 0; r < n; ++r) {
    if (r != rank_) out[r] = mesh_.Recv(members_[r], tag, opts);
  }
  return out;
}

Tensor Communicator::Broadcast(const Tensor& value, const std::string& label) {
  Claim(label);
  if (size() == 1) return value;
  AgreeOn(Kind::kBroadcast, value, label);
  const std::string tag = Tag(label, "b");
  if (rank_ == 0) {
    for (int r = 1; r < size(); ++r) mesh_.Send(members_[r], tag, value, MessageType::kCollective);
    return value;
  }
  return mesh_.Recv(members_[0], tag, Watching());
}

void Communicator::MapSend(const Tensor& local, const std::string& label) {
  Claim(label);
  mesh_.Send(members_[0], "m/" + std::to_string(generation_) + "/" + label, local,
             MessageType::kCollective);
}

std::vector<Tensor> CollectMapValues(Mesh& driver, const std::vector<DeviceTag>& members,
                                     uint64_t generation, const std::string& label,
                                     const CommunicatorOptions& options) {
  if (members.empty() || driver.self() != members[0]) {
    throw ConfigError("map results are collected on the device of rank 0");
  }
  RecvOptions opts;
  opts.timeout = options.timeout;
  opts.watch = members;
  const std::string tag = "m/" + std::to_string(generation) + "/" + label;
  std::vector<Tensor> out;
  for (const auto& m : members) out.push_back(driver.Recv(m, tag, opts));
  return out;
}

Tensor CommunicatorRuntime::Execute(const Node& node, const Tensor& local) {
  const auto& kind = node.attrs.Get<std::string>("collective_kind");
  const auto& label = node.attrs.Get<std::string>("label");
  const int64_t group = node.attrs.Get<int64_t>("group_size");
  if (group != comm_.size()) {
    throw ProtocolError("collective '" + label + "' was built for " + std::to_string(group) +
                        " replicas but the group has " + std::to_string(comm_.size()));
  }
  if (kind == collective_kinds::kSum) return comm_.AllSum(local, label);
  if (kind == collective_kinds::kMean) return comm_.AllMean(local, label);
  if (kind == collective_kinds::kMax) return comm_.AllReduce(local, ReduceOp::kMax, label);
  if (kind == collective_kinds::kBroadcast) return comm_.Broadcast(local, label);
  if (kind == collective_kinds::kGather) {
    auto parts = comm_.AllGather(local, label);
    return FoldCollective(node, parts);
  }
  if (kind == collective_kinds::kMapGather || kind == collective_kinds::kMapReduce) {
    comm_.MapSend(local, label);
    return local;
  }
  throw ProtocolError("unknown collective kind '" + kind + "'");
}

}  // namespace replicator
