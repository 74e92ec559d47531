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

// Sharded parameter storage for between-graph asynchronous training.
//
// Request labels carry "<reply id>|<arguments>"; replies come back as
// ordinary messages labelled "ps/<reply id>" (PULL_RESP "ps/<id>/<i>").
//   PULL_REQ  "<id>|a,b,c"              -> one PULL_RESP per name
//   PUSH      "<id>|name|<base version>" -> ACK with the new version, or -1
//                                          when rejected as stale
//   INIT      "<id>|name"                -> ACK (first writer wins)
//   READY     "<id>|set" or "<id>|query" -> ACK 1 when ready, else 0
// Failures reply ERROR with the message text in the payload.

#ifndef REPLICATOR_PARAMSERVER_H_
#define REPLICATOR_PARAMSERVER_H_

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "replicator/transport.h"

namespace replicator {

inline constexpr char kGlobalStepName[] = "global_step";

// Variable name -> server, by a stable hash of the name.
class ShardMap {
 public:
  // Servers are device 0 of every task of the "ps" job.
  explicit ShardMap(const ClusterSpec& spec);
  explicit ShardMap(std::vector<DeviceTag> servers);

  const std::vector<DeviceTag>& servers() const { return servers_; }
  const DeviceTag& ServerFor(std::string_view name) const;

  // FNV-1a, 64 bit.
  static uint64_t StableHash(std::string_view name);

 private:
  std::vector<DeviceTag> servers_;
};

// In-memory store of one server. Each variable is replaced as a whole
// under its own lock; different variables never contend.
class ParamShard {
 public:
  // Returns false if `name` already exists (the shapes must agree).
  bool Register(const std::string& name, const Tensor& initial);
  bool Has(const std::string& name) const;
  Tensor Pull(const std::string& name, uint64_t* version = nullptr) const;
  // value <- value + delta. Returns the new version.
  uint64_t Push(const std::string& name, const Tensor& delta);
  uint64_t version(const std::string& name) const;
  std::vector<std::string> names() const;

  bool ready() const { return ready_.load(); }
  void set_ready() { ready_.store(true); }

 private:
  struct Entry {
    mutable std::mutex mu;
    std::shared_ptr<const Tensor> value;
    uint64_t version = 0;
  };
  Entry& Find(const std::string& name) const;

  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Entry>> entries_;
  std::atomic<bool> ready_{false};
};

struct ParamServerOptions {
  int service_threads = 4;
  // Reject pushes computed from a value more than this many versions old.
  std::optional<uint64_t> max_staleness;
};

// Serves one shard over a mesh endpoint until stopped or the transport
// closes.
class ParamServer {
 public:
  explicit ParamServer(Mesh mesh, ParamServerOptions options = {});
  ~ParamServer();
  ParamServer(const ParamServer&) = delete;
  ParamServer& operator=(const ParamServer&) = delete;

  void Start();
  void Stop();
  // Blocks until the service threads exit.
  void Wait();

  ParamShard& shard() { return shard_; }
  const DeviceTag& device() const { return mesh_.self(); }
  uint64_t pushes_applied() const { return pushes_applied_.load(); }
  uint64_t pushes_rejected() const { return pushes_rejected_.load(); }

 private:
  void Loop();
  void Handle(const Envelope& request);

  Mesh mesh_;
  ParamServerOptions options_;
  ParamShard shard_;
  std::atomic<bool> stop_{false};
  std::vector<std::thread> threads_;
  std::atomic<uint64_t> pushes_applied_{0};
  std::atomic<uint64_t> pushes_rejected_{0};
};

struct ParamClientOptions {
  std::chrono::milliseconds timeout{10000};
  // Extra attempts for pulls that time out. Pushes are never retried, so
  // an acknowledged delta is applied exactly once.
  int pull_retries = 2;
  std::chrono::milliseconds ready_poll{10};
  std::chrono::milliseconds ready_timeout{60000};
};

class ParamClient {
 public:
  ParamClient(Mesh mesh, ShardMap shards, ParamClientOptions options = {});

  const ShardMap& shards() const { return shards_; }

  // Values from different shards may reflect different numbers of pushes.
  std::vector<Tensor> Pull(const std::vector<std::string>& names);
  Tensor Pull(const std::string& name) { return Pull(std::vector<std::string>{name})[0]; }
  // Version of each name as of the most recent Pull.
  uint64_t pulled_version(const std::string& name) const;

  // Returns false if the server rejected the delta as stale.
  bool Push(const std::string& name, const Tensor& delta);

  void Init(const std::string& name, const Tensor& value);
  // Marks every shard ready.
  void MarkReady();
  // Polls every shard until ready. Throws TimeoutError.
  void WaitReady();

 private:
  std::string NextId();
  Envelope Call(const DeviceTag& server, MessageType type, const std::string& args, Tensor payload);

  Mesh mesh_;
  ShardMap shards_;
  ParamClientOptions options_;
  uint64_t next_id_ = 0;
  std::map<std::string, uint64_t> versions_;
};

// Error text carried in a payload, one character per element.
Tensor TextTensor(const std::string& text);
std::string TensorText(const Tensor& t);

}  // namespace replicator

#endif  // REPLICATOR_PARAMSERVER_H_
