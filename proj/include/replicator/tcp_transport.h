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

#ifndef REPLICATOR_TCP_TRANSPORT_H_
#define REPLICATOR_TCP_TRANSPORT_H_

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "replicator/transport.h"

namespace replicator {

struct TcpOptions {
  std::chrono::milliseconds heartbeat_interval{1000};
  int heartbeat_misses = 3;
  int connect_retries = 50;
  std::chrono::milliseconds connect_backoff{100};
  // Frames queued per peer before Send blocks.
  size_t send_queue_capacity = 4096;
};

// Cross-process transport for one task. Listens on the task's address
// from the spec and dials peers on first use (or eagerly via ConnectAll).
// Each dialled connection carries this task's traffic to that peer; the
// connection a peer dials in carries its traffic to us. A peer is dead
// after EOF, a GOODBYE, or `heartbeat_misses` silent intervals.
//
// On the wire the label of a device-addressed frame is
// "<src device>:<dst device>:<label>"; the task half of both tags is
// implied by the connection.
class TcpTransport : public Transport {
 public:
  TcpTransport(ClusterSpec spec, DeviceTag self_task, TcpOptions options = {});
  ~TcpTransport() override;

  const DeviceTag& self_task() const { return self_; }
  std::chrono::milliseconds failure_detection_window() const {
    return options_.heartbeat_interval * options_.heartbeat_misses;
  }

  bool IsLocal(const DeviceTag& tag) const override { return tag.SameTask(self_); }
  bool IsDead(const DeviceTag& peer) const override;

  // Dials every other task in the spec. Throws ConnectionError naming the
  // first unreachable peer.
  void ConnectAll();

  // Flushes queued frames, says GOODBYE and closes every socket.
  void Shutdown();

  // Test hooks. Crash() drops every socket without a GOODBYE, as a killed
  // process would. SuspendHeartbeats() keeps sockets open but silent.
  void Crash();
  void SuspendHeartbeats();

 protected:
  void Route(Envelope env) override;
  std::optional<std::string> ClosedReason() const override;

 private:
  struct Outgoing;
  struct PeerState {
    bool heard = false;
    bool dead = false;
    std::string reason;
    Clock::time_point last_seen;
  };

  void Listen();
  void AcceptLoop();
  void ReadLoop(int fd);
  void MonitorLoop();
  Outgoing& Dial(const DeviceTag& task);
  void MarkDead(const DeviceTag& task, const std::string& reason);
  void CloseAll(bool graceful);

  const DeviceTag self_;
  const TcpOptions options_;

  int listen_fd_ = -1;
  std::thread accept_thread_;
  std::thread monitor_thread_;
  std::atomic<bool> stopping_{false};
  std::atomic<bool> heartbeats_on_{true};

  mutable std::mutex mu_;
  std::condition_variable monitor_cv_;
  std::string closed_reason_;
  std::map<DeviceTag, PeerState> peers_;
  std::map<DeviceTag, std::shared_ptr<Outgoing>> outgoing_;
  std::map<DeviceTag, std::shared_ptr<std::mutex>> dial_locks_;
  std::vector<int> incoming_fds_;
  std::vector<std::thread> readers_;
};

// Reserves `n` distinct loopback ports ("127.0.0.1:<port>") by binding to
// port 0. Another process may still claim one before it is used.
std::vector<std::string> PickFreeLocalAddresses(int n);

}  // namespace replicator

#endif  // REPLICATOR_TCP_TRANSPORT_H_
