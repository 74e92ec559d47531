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

#ifndef REPLICATOR_TRANSPORT_H_
#define REPLICATOR_TRANSPORT_H_

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "replicator/device.h"
#include "replicator/errors.h"
#include "replicator/tensor.h"
#include "replicator/wire.h"

namespace replicator {

struct Envelope {
  DeviceTag src;
  DeviceTag dst;
  MessageType type = MessageType::kData;
  std::string label;
  uint64_t seq = 0;
  Tensor payload;
};

// Requests addressed to a device's service loop rather than to a matched
// receive: PULL_REQ, PUSH and INIT.
bool IsServiceRequest(MessageType type);

using Clock = std::chrono::steady_clock;

struct RecvOptions {
  std::optional<std::chrono::milliseconds> timeout;
  // Besides the source itself, fail if any of these peers dies while
  // waiting. Collectives watch the whole group.
  std::vector<DeviceTag> watch;
};

// Per-device inbox. Matched messages are queued by (src, label) and
// consumed in arrival order; service requests share one queue.
class Mailbox {
 public:
  // Returns an error message when the wait should be abandoned.
  using FailureCheck = std::function<std::optional<std::string>()>;

  void Put(Envelope env);

  Envelope Take(const DeviceTag& src, const std::string& label,
                std::optional<Clock::time_point> deadline, const FailureCheck& failed);
  Envelope TakeService(std::optional<Clock::time_point> deadline, const FailureCheck& failed);

  void Wake();

 private:
  Envelope Wait(std::deque<Envelope>& queue, const std::string& what,
                std::optional<Clock::time_point> deadline, const FailureCheck& failed,
                std::unique_lock<std::mutex>& lock);

  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::pair<DeviceTag, std::string>, std::deque<Envelope>> matched_;
  std::deque<Envelope> service_;
};

class Mesh;

// Moves envelopes between devices. Owns one mailbox per local device.
class Transport {
 public:
  explicit Transport(ClusterSpec spec);
  virtual ~Transport();

  Transport(const Transport&) = delete;
  Transport& operator=(const Transport&) = delete;

  const ClusterSpec& spec() const { return spec_; }

  // Endpoint handle for a local device. Throws ConfigError if `self` is not
  // in the spec or not hosted by this transport.
  Mesh Connect(const DeviceTag& self);

  virtual bool IsLocal(const DeviceTag& tag) const = 0;
  virtual bool IsDead(const DeviceTag& peer) const = 0;

  // Assigns the per-(src, dst) sequence number and delivers or forwards.
  // Throws PeerDeadError if either end is known dead.
  void Send(Envelope env);

  Envelope Receive(const DeviceTag& self, const DeviceTag& src, const std::string& label,
                   const RecvOptions& options);
  Envelope ReceiveService(const DeviceTag& self, const RecvOptions& options);

  // Tasks of the spec other than the one hosting `self`.
  std::vector<DeviceTag> RemotePeers(const DeviceTag& self) const;

 protected:
  virtual void Route(Envelope env) = 0;

  // Non-empty once the transport can no longer be used.
  virtual std::optional<std::string> ClosedReason() const = 0;

  void Deliver(Envelope env);
  void WakeAll();

 private:
  Mailbox& MailboxFor(const DeviceTag& tag);
  Mailbox::FailureCheck FailureFor(const DeviceTag& src, const std::vector<DeviceTag>& watch) const;

  const ClusterSpec spec_;
  mutable std::mutex mu_;
  std::map<DeviceTag, std::unique_ptr<Mailbox>> mailboxes_;
  std::map<std::pair<DeviceTag, DeviceTag>, uint64_t> next_seq_;
};

// A device's view of the transport: send(dst, label, t) / recv(src, label).
// Cheap to copy; the transport must outlive it.
class Mesh {
 public:
  Mesh(Transport* transport, DeviceTag self) : transport_(transport), self_(std::move(self)) {}

  const DeviceTag& self() const { return self_; }
  Transport& transport() const { return *transport_; }
  std::vector<DeviceTag> remote_peers() const { return transport_->RemotePeers(self_); }

  void Send(const DeviceTag& dst, const std::string& label, Tensor t,
            MessageType type = MessageType::kData);
  Tensor Recv(const DeviceTag& src, const std::string& label, const RecvOptions& options = {});
  Envelope RecvEnvelope(const DeviceTag& src, const std::string& label,
                        const RecvOptions& options = {});
  Envelope RecvService(const RecvOptions& options = {});

  bool IsAlive(const DeviceTag& peer) const { return !transport_->IsDead(peer); }

 private:
  Transport* transport_;
  DeviceTag self_;
};

// Every device of the spec lives in this process; delivery is a queue push.
// Kill() simulates a crash of one device or one task.
class InProcessTransport : public Transport {
 public:
  explicit InProcessTransport(ClusterSpec spec = LocalClusterSpec());

  bool IsLocal(const DeviceTag& tag) const override { return spec().Contains(tag); }
  bool IsDead(const DeviceTag& peer) const override;

  void Kill(const DeviceTag& device);
  void KillTask(const DeviceTag& task);

 protected:
  void Route(Envelope env) override;
  std::optional<std::string> ClosedReason() const override { return std::nullopt; }

 private:
  mutable std::mutex mu_;
  std::set<DeviceTag> dead_devices_;
  std::set<DeviceTag> dead_tasks_;
};

}  // namespace replicator

#endif  // REPLICATOR_TRANSPORT_H_
