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

#include "replicator/transport.h"

namespace replicator {
namespace {

// Upper bound on a single condition wait so a missed wake-up can only delay,
// never hang, a receiver.
constexpr auto kPollInterval = std::chrono::milliseconds(100);

std::optional<Clock::time_point> DeadlineFor(const RecvOptions& options) {
  if (!options.timeout) return std::nullopt;
  return Clock::now() + *options.timeout;
}

}  // namespace

bool IsServiceRequest(MessageType type) {
  return type == MessageType::kPullRequest || type == MessageType::kPush ||
         type == MessageType::kInit || type == MessageType::kReady;
}

void Mailbox::Put(Envelope env) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (IsServiceRequest(env.type)) {
      service_.push_back(std::move(env));
    } else {
      auto key = std::make_pair(env.src, env.label);
      matched_[key].push_back(std::move(env));
    }
  }
  cv_.notify_all();
}

void Mailbox::Wake() {
  std::lock_guard<std::mutex> lock(mu_);
  cv_.notify_all();
}

Envelope Mailbox::Take(const DeviceTag& src, const std::string& label,
                       std::optional<Clock::time_point> deadline, const FailureCheck& failed) {
  std::unique_lock<std::mutex> lock(mu_);
  const auto key = std::make_pair(src, label);
  while (true) {
    auto it = matched_.find(key);
    if (it != matched_.end() && !it->second.empty()) {
      Envelope env = std::move(it->second.front());
      it->second.pop_front();
      if (it->second.empty()) matched_.erase(it);
      return env;
    }
    if (auto why = failed()) {
      throw PeerDeadError("recv '" + label + "' from " + src.ToString() + ": " + *why);
    }
    auto until = Clock::now() + kPollInterval;
    if (deadline) {
      if (Clock::now() >= *deadline) {
        throw TimeoutError("recv '" + label + "' from " + src.ToString() + " timed out");
      }
      until = std::min(until, *deadline);
    }
    cv_.wait_until(lock, until);
  }
}

Envelope Mailbox::TakeService(std::optional<Clock::time_point> deadline,
                              const FailureCheck& failed) {
  std::unique_lock<std::mutex> lock(mu_);
  while (true) {
    if (!service_.empty()) {
      Envelope env = std::move(service_.front());
      service_.pop_front();
      return env;
    }
    if (auto why = failed()) throw TransportError("service receive: " + *why);
    auto until = Clock::now() + kPollInterval;
    if (deadline) {
      if (Clock::now() >= *deadline) throw TimeoutError("service receive timed out");
      until = std::min(until, *deadline);
    }
    cv_.wait_until(lock, until);
  }
}

Transport::Transport(ClusterSpec spec) : spec_(std::move(spec)) {}

Transport::~Transport() = default;

Mesh Transport::Connect(const DeviceTag& self) {
  if (!spec_.Contains(self)) {
    throw ConfigError("device " + self.ToString() + " is not in the cluster spec " +
                      spec_.ToJson());
  }
  if (!IsLocal(self)) {
    throw ConfigError("device " + self.ToString() + " is not hosted by this process");
  }
  MailboxFor(self);
  return Mesh(this, self);
}

Mailbox& Transport::MailboxFor(const DeviceTag& tag) {
  std::lock_guard<std::mutex> lock(mu_);
  auto& slot = mailboxes_[tag];
  if (!slot) slot = std::make_unique<Mailbox>();
  return *slot;
}

void Transport::Send(Envelope env) {
  if (!spec_.Contains(env.dst)) {
    throw ConfigError("destination " + env.dst.ToString() + " is not in the cluster spec");
  }
  if (auto why = ClosedReason()) throw TransportError("send: " + *why);
  if (IsDead(env.src)) throw PeerDeadError("send from dead device " + env.src.ToString());
  if (IsDead(env.dst)) {
    throw PeerDeadError("send '" + env.label + "' to " + env.dst.ToString() + ": peer is dead");
  }
  {
    std::lock_guard<std::mutex> lock(mu_);
    env.seq = next_seq_[{env.src, env.dst}]++;
  }
  Route(std::move(env));
}

void Transport::Deliver(Envelope env) {
  const DeviceTag dst = env.dst;
  MailboxFor(dst).Put(std::move(env));
}

void Transport::WakeAll() {
  std::vector<Mailbox*> boxes;
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& [tag, box] : mailboxes_) boxes.push_back(box.get());
  }
  for (Mailbox* box : boxes) box->Wake();
}

Mailbox::FailureCheck Transport::FailureFor(const DeviceTag& src,
                                            const std::vector<DeviceTag>& watch) const {
  return [this, src, &watch]() -> std::optional<std::string> {
    if (auto why = ClosedReason()) return why;
    if (IsDead(src)) return "peer " + src.ToString() + " is dead";
    for (const auto& w : watch) {
      if (IsDead(w)) return "group member " + w.ToString() + " is dead";
    }
    return std::nullopt;
  };
}

Envelope Transport::Receive(const DeviceTag& self, const DeviceTag& src, const std::string& label,
                            const RecvOptions& options) {
  if (IsDead(self)) throw PeerDeadError("recv on dead device " + self.ToString());
  return MailboxFor(self).Take(src, label, DeadlineFor(options), FailureFor(src, options.watch));
}

Envelope Transport::ReceiveService(const DeviceTag& self, const RecvOptions& options) {
  auto failed = [this, &self]() -> std::optional<std::string> {
    if (auto why = ClosedReason()) return why;
    if (IsDead(self)) return "device " + self.ToString() + " is dead";
    return std::nullopt;
  };
  return MailboxFor(self).TakeService(DeadlineFor(options), failed);
}

std::vector<DeviceTag> Transport::RemotePeers(const DeviceTag& self) const {
  std::vector<DeviceTag> out;
  for (const auto& task : spec_.AllTasks()) {
    if (!task.SameTask(self)) out.push_back(task);
  }
  return out;
}

void Mesh::Send(const DeviceTag& dst, const std::string& label, Tensor t, MessageType type) {
  Envelope env;
  env.src = self_;
  env.dst = dst;
  env.type = type;
  env.label = label;
  env.payload = std::move(t);
  transport_->Send(std::move(env));
}

Tensor Mesh::Recv(const DeviceTag& src, const std::string& label, const RecvOptions& options) {
  return RecvEnvelope(src, label, options).payload;
}

Envelope Mesh::RecvEnvelope(const DeviceTag& src, const std::string& label,
                            const RecvOptions& options) {
  return transport_->Receive(self_, src, label, options);
}

Envelope Mesh::RecvService(const RecvOptions& options) {
  return transport_->ReceiveService(self_, options);
}

InProcessTransport::InProcessTransport(ClusterSpec spec) : Transport(std::move(spec)) {}

bool InProcessTransport::IsDead(const DeviceTag& peer) const {
  std::lock_guard<std::mutex> lock(mu_);
  return dead_devices_.count(peer) > 0 || dead_tasks_.count(peer.TaskOnly()) > 0;
}

void InProcessTransport::Kill(const DeviceTag& device) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    dead_devices_.insert(device);
  }
  WakeAll();
}

void InProcessTransport::KillTask(const DeviceTag& task) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    dead_tasks_.insert(task.TaskOnly());
  }
  WakeAll();
}

void InProcessTransport::Route(Envelope env) { Deliver(std::move(env)); }

}  // namespace replicator
