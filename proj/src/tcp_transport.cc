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

#include "replicator/tcp_transport.h"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace replicator {
namespace {

std::pair<std::string, std::string> SplitAddress(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size()) {
    throw ConfigError("address '" + address + "' is not host:port");
  }
  return {address.substr(0, colon), address.substr(colon + 1)};
}

addrinfo* Resolve(const std::string& address) {
  auto [host, port] = SplitAddress(address);
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* result = nullptr;
  const int rc = getaddrinfo(host.c_str(), port.c_str(), &hints, &result);
  if (rc != 0) {
    throw ConnectionError("cannot resolve '" + address + "': " + gai_strerror(rc));
  }
  return result;
}

bool WriteAll(int fd, const std::string& data) {
  size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::send(fd, data.data() + done, data.size() - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    done += static_cast<size_t>(n);
  }
  return true;
}

bool ReadAll(int fd, char* out, size_t n) {
  size_t done = 0;
  while (done < n) {
    const ssize_t got = ::recv(fd, out + done, n - done, 0);
    if (got < 0 && errno == EINTR) continue;
    if (got <= 0) return false;
    done += static_cast<size_t>(got);
  }
  return true;
}

std::string ControlFrame(MessageType type, const std::string& label = "") {
  Frame f;
  f.type = type;
  f.label = label;
  f.payload = EmptyPayload();
  return EncodeFrame(f);
}

}  // namespace

struct TcpTransport::Outgoing {
  DeviceTag peer;
  int fd = -1;
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::string> queue;
  bool closing = false;
  bool broken = false;
  std::thread writer;
};

TcpTransport::TcpTransport(ClusterSpec spec, DeviceTag self_task, TcpOptions options)
    : Transport(std::move(spec)), self_(self_task.TaskOnly()), options_(options) {
  if (!this->spec().Contains(self_)) {
    throw ConfigError("task " + self_.ToString() + " is not in the cluster spec");
  }
  Listen();
  accept_thread_ = std::thread([this] { AcceptLoop(); });
  monitor_thread_ = std::thread([this] { MonitorLoop(); });
}

TcpTransport::~TcpTransport() { CloseAll(true); }

void TcpTransport::Listen() {
  const std::string& address = spec().Address(self_.job, self_.task);
  addrinfo* ai = Resolve(address);
  listen_fd_ = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  const int rc = ::bind(listen_fd_, ai->ai_addr, ai->ai_addrlen);
  freeaddrinfo(ai);
  if (rc != 0 || ::listen(listen_fd_, 128) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw ConnectionError("cannot listen on " + address + ": " + why);
  }
}

void TcpTransport::AcceptLoop() {
  while (!stopping_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR || errno == ECONNABORTED) continue;
      return;
    }
    std::lock_guard<std::mutex> lock(mu_);
    if (stopping_) {
      ::close(fd);
      return;
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    incoming_fds_.push_back(fd);
    readers_.emplace_back([this, fd] { ReadLoop(fd); });
  }
}

void TcpTransport::ReadLoop(int fd) {
  std::optional<DeviceTag> peer;
  std::string body;
  while (!stopping_) {
    char prefix[kLengthPrefixBytes];
    if (!ReadAll(fd, prefix, sizeof(prefix))) break;
    const uint32_t len = DecodeLength(std::string_view(prefix, sizeof(prefix)));
    if (len > kMaxFrameBytes) break;
    body.resize(len);
    if (!ReadAll(fd, body.data(), len)) break;
    Frame f;
    try {
      f = DecodeFrame(body);
    } catch (const ProtocolError&) {
      break;
    }
    if (!peer) {
      if (f.type != MessageType::kHello) break;
      try {
        peer = DeviceTag::Parse(f.label).TaskOnly();
      } catch (const ConfigError&) {
        break;
      }
      std::lock_guard<std::mutex> lock(mu_);
      auto& state = peers_[*peer];
      state.heard = true;
      state.last_seen = Clock::now();
      continue;
    }
    {
      std::lock_guard<std::mutex> lock(mu_);
      peers_[*peer].last_seen = Clock::now();
    }
    if (f.type == MessageType::kHeartbeat || f.type == MessageType::kHello) continue;
    if (f.type == MessageType::kGoodbye) {
      MarkDead(*peer, "peer shut down");
      continue;
    }
    const auto a = f.label.find(':');
    const auto b = a == std::string::npos ? a : f.label.find(':', a + 1);
    if (b == std::string::npos) break;
    Envelope env;
    try {
      env.src = DeviceTag{peer->job, peer->task, std::stoi(f.label.substr(0, a))};
      env.dst = DeviceTag{self_.job, self_.task, std::stoi(f.label.substr(a + 1, b - a - 1))};
    } catch (const std::exception&) {
      break;
    }
    env.type = f.type;
    env.label = f.label.substr(b + 1);
    env.seq = f.seq;
    env.payload = std::move(f.payload);
    Deliver(std::move(env));
  }
  if (peer && !stopping_) MarkDead(*peer, "connection lost");
}

void TcpTransport::MonitorLoop() {
  const auto window = failure_detection_window();
  std::unique_lock<std::mutex> lock(mu_);
  while (!stopping_) {
    monitor_cv_.wait_for(lock, options_.heartbeat_interval);
    if (stopping_) break;
    std::vector<std::shared_ptr<Outgoing>> outs;
    for (auto& [task, out] : outgoing_) outs.push_back(out);
    std::vector<DeviceTag> silent;
    const auto now = Clock::now();
    for (auto& [task, state] : peers_) {
      if (state.heard && !state.dead && now - state.last_seen > window) silent.push_back(task);
    }
    lock.unlock();
    if (heartbeats_on_) {
      const std::string beat = ControlFrame(MessageType::kHeartbeat);
      for (auto& out : outs) {
        std::lock_guard<std::mutex> out_lock(out->mu);
        if (out->broken || out->closing || out->queue.size() >= options_.send_queue_capacity) {
          continue;
        }
        out->queue.push_back(beat);
        out->cv.notify_all();
      }
    }
    for (const auto& task : silent) {
      MarkDead(task, "missed " + std::to_string(options_.heartbeat_misses) + " heartbeats");
    }
    lock.lock();
  }
}

TcpTransport::Outgoing& TcpTransport::Dial(const DeviceTag& task) {
  std::shared_ptr<std::mutex> dial_lock;
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (auto it = outgoing_.find(task); it != outgoing_.end()) return *it->second;
    auto& slot = dial_locks_[task];
    if (!slot) slot = std::make_shared<std::mutex>();
    dial_lock = slot;
  }
  std::lock_guard<std::mutex> dialing(*dial_lock);
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (auto it = outgoing_.find(task); it != outgoing_.end()) return *it->second;
  }
  const std::string& address = spec().Address(task.job, task.task);
  int fd = -1;
  std::string last_error;
  for (int attempt = 0; attempt < options_.connect_retries; ++attempt) {
    if (stopping_) throw TransportError("dial " + task.ToString() + ": transport is closed");
    if (IsDead(task)) throw PeerDeadError("dial " + task.ToString() + ": peer is dead");
    addrinfo* ai = Resolve(address);
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    const int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    freeaddrinfo(ai);
    if (rc == 0) break;
    last_error = std::strerror(errno);
    ::close(fd);
    fd = -1;
    std::this_thread::sleep_for(options_.connect_backoff);
  }
  if (fd < 0) {
    throw ConnectionError("cannot reach " + task.ToString() + " at " + address + " after " +
                          std::to_string(options_.connect_retries) + " attempts: " + last_error);
  }
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  if (!WriteAll(fd, ControlFrame(MessageType::kHello, self_.ToString()))) {
    ::close(fd);
    throw ConnectionError("handshake with " + task.ToString() + " failed");
  }

  auto out = std::make_shared<Outgoing>();
  out->peer = task;
  out->fd = fd;
  out->writer = std::thread([this, raw = out.get()] {
    while (true) {
      std::string frame;
      {
        std::unique_lock<std::mutex> lock(raw->mu);
        raw->cv.wait(lock, [raw] { return !raw->queue.empty() || raw->closing || raw->broken; });
        if (raw->broken || raw->queue.empty()) return;
        frame = std::move(raw->queue.front());
        raw->queue.pop_front();
      }
      raw->cv.notify_all();
      if (!WriteAll(raw->fd, frame)) {
        {
          std::lock_guard<std::mutex> lock(raw->mu);
          raw->broken = true;
          raw->queue.clear();
        }
        raw->cv.notify_all();
        if (!stopping_) MarkDead(raw->peer, "write failed");
        return;
      }
    }
  });
  std::lock_guard<std::mutex> lock(mu_);
  if (stopping_) {
    // Lost a race with shutdown; CloseAll will not see this connection.
    {
      std::lock_guard<std::mutex> out_lock(out->mu);
      out->broken = true;
    }
    out->cv.notify_all();
    out->writer.join();
    ::close(fd);
    throw TransportError("dial " + task.ToString() + ": transport is closed");
  }
  outgoing_[task] = out;
  return *out;
}

void TcpTransport::ConnectAll() {
  for (const auto& task : RemotePeers(self_)) Dial(task);
}

void TcpTransport::Route(Envelope env) {
  if (IsLocal(env.dst)) {
    Deliver(std::move(env));
    return;
  }
  const DeviceTag task = env.dst.TaskOnly();
  Outgoing& out = Dial(task);
  Frame f;
  f.type = env.type;
  f.label = std::to_string(env.src.device) + ":" + std::to_string(env.dst.device) + ":" + env.label;
  f.seq = env.seq;
  f.payload = std::move(env.payload);
  std::string bytes = EncodeFrame(f);
  std::unique_lock<std::mutex> lock(out.mu);
  out.cv.wait(lock, [&] {
    return out.queue.size() < options_.send_queue_capacity || out.broken || out.closing;
  });
  if (out.broken) throw PeerDeadError("send '" + env.label + "' to " + task.ToString() + ": peer is dead");
  if (out.closing) throw TransportError("send: transport is shut down");
  out.queue.push_back(std::move(bytes));
  lock.unlock();
  out.cv.notify_all();
}

bool TcpTransport::IsDead(const DeviceTag& peer) const {
  if (peer.SameTask(self_)) return false;
  std::lock_guard<std::mutex> lock(mu_);
  auto it = peers_.find(peer.TaskOnly());
  return it != peers_.end() && it->second.dead;
}

std::optional<std::string> TcpTransport::ClosedReason() const {
  std::lock_guard<std::mutex> lock(mu_);
  if (closed_reason_.empty()) return std::nullopt;
  return closed_reason_;
}

void TcpTransport::MarkDead(const DeviceTag& task, const std::string& reason) {
  std::shared_ptr<Outgoing> out;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto& state = peers_[task];
    if (state.dead) return;
    state.dead = true;
    state.reason = reason;
    if (auto it = outgoing_.find(task); it != outgoing_.end()) out = it->second;
  }
  if (out) {
    {
      std::lock_guard<std::mutex> lock(out->mu);
      out->broken = true;
      out->queue.clear();
    }
    out->cv.notify_all();
    ::shutdown(out->fd, SHUT_RDWR);
  }
  WakeAll();
}

void TcpTransport::Shutdown() { CloseAll(true); }

void TcpTransport::Crash() { CloseAll(false); }

void TcpTransport::SuspendHeartbeats() { heartbeats_on_ = false; }

void TcpTransport::CloseAll(bool graceful) {
  std::vector<std::shared_ptr<Outgoing>> outs;
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (stopping_) return;
    closed_reason_ = graceful ? "transport shut down" : "transport crashed";
    for (auto& [task, out] : outgoing_) outs.push_back(out);
  }
  // Writers drain before stopping_ flips so queued frames still go out.
  for (auto& out : outs) {
    {
      std::lock_guard<std::mutex> lock(out->mu);
      if (graceful && !out->broken) {
        out->queue.push_back(ControlFrame(MessageType::kGoodbye));
        out->closing = true;
      } else {
        out->broken = true;
      }
    }
    out->cv.notify_all();
    if (!graceful) ::shutdown(out->fd, SHUT_RDWR);
  }
  for (auto& out : outs) {
    out->writer.join();
    ::shutdown(out->fd, SHUT_RDWR);
    ::close(out->fd);
  }
  {
    std::lock_guard<std::mutex> lock(mu_);
    stopping_ = true;
  }
  monitor_cv_.notify_all();
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  if (monitor_thread_.joinable()) monitor_thread_.join();
  std::vector<std::thread> readers;
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (int fd : incoming_fds_) ::shutdown(fd, SHUT_RDWR);
    readers.swap(readers_);
  }
  for (auto& t : readers) t.join();
  for (int fd : incoming_fds_) ::close(fd);
  incoming_fds_.clear();
  WakeAll();
}

std::vector<std::string> PickFreeLocalAddresses(int n) {
  std::vector<int> fds;
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(fd);
      throw ConnectionError(std::string("cannot reserve a local port: ") + std::strerror(errno));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    out.push_back("127.0.0.1:" + std::to_string(ntohs(addr.sin_port)));
    fds.push_back(fd);
  }
  for (int fd : fds) ::close(fd);
  return out;
}

}  // namespace replicator
