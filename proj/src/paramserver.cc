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

#include "replicator/paramserver.h"

#include <sstream>

#include "replicator/kernels.h"

namespace replicator {
namespace {

using namespace std::chrono_literals;

std::vector<std::string> SplitOn(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!text.empty() && text.back() == sep) out.push_back("");
  return out;
}

std::atomic<uint64_t> g_client_counter{0};

}  // namespace

Tensor TextTensor(const std::string& text) {
  std::vector<double> codes(text.begin(), text.end());
  const auto n = static_cast<int64_t>(codes.size());
  return Tensor::FromVector(std::move(codes), Shape{n});
}

std::string TensorText(const Tensor& t) {
  std::string out;
  for (double c : t.ToDoubles()) out.push_back(static_cast<char>(c));
  return out;
}

ShardMap::ShardMap(const ClusterSpec& spec) {
  const int n = spec.num_tasks("ps");
  for (int i = 0; i < n; ++i) servers_.push_back(DeviceTag{"ps", i, 0});
  if (servers_.empty()) throw ConfigError("cluster spec has no \"ps\" tasks");
}

ShardMap::ShardMap(std::vector<DeviceTag> servers) : servers_(std::move(servers)) {
  if (servers_.empty()) throw ConfigError("shard map needs at least one server");
}

uint64_t ShardMap::StableHash(std::string_view name) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

const DeviceTag& ShardMap::ServerFor(std::string_view name) const {
  return servers_[StableHash(name) % servers_.size()];
}

bool ParamShard::Register(const std::string& name, const Tensor& initial) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = entries_.find(name);
  if (it != entries_.end()) {
    std::lock_guard<std::mutex> entry_lock(it->second->mu);
    const Tensor& have = *it->second->value;
    if (have.shape() != initial.shape() || have.dtype() != initial.dtype()) {
      throw ProtocolError("variable '" + name + "' is registered as " + DTypeName(have.dtype()) +
                          have.shape().ToString() + ", not " + DTypeName(initial.dtype()) +
                          initial.shape().ToString());
    }
    return false;
  }
  auto entry = std::make_unique<Entry>();
  entry->value = std::make_shared<const Tensor>(initial);
  entries_[name] = std::move(entry);
  return true;
}

bool ParamShard::Has(const std::string& name) const {
  std::lock_guard<std::mutex> lock(mu_);
  return entries_.count(name) > 0;
}

ParamShard::Entry& ParamShard::Find(const std::string& name) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ProtocolError("unknown variable '" + name + "'");
  return *it->second;
}

Tensor ParamShard::Pull(const std::string& name, uint64_t* version) const {
  Entry& e = Find(name);
  std::shared_ptr<const Tensor> value;
  {
    std::lock_guard<std::mutex> lock(e.mu);
    value = e.value;
    if (version) *version = e.version;
  }
  return *value;
}

uint64_t ParamShard::Push(const std::string& name, const Tensor& delta) {
  Entry& e = Find(name);
  std::lock_guard<std::mutex> lock(e.mu);
  const Tensor& have = *e.value;
  if (have.shape() != delta.shape() || have.dtype() != delta.dtype()) {
    throw ProtocolError("push to '" + name + "': delta is " + DTypeName(delta.dtype()) +
                        delta.shape().ToString() + ", variable is " + DTypeName(have.dtype()) +
                        have.shape().ToString());
  }
  Tensor next = have;
  kernels::AccumulateInto(kernels::ReduceOp::kSum, next, delta);
  e.value = std::make_shared<const Tensor>(std::move(next));
  return ++e.version;
}

uint64_t ParamShard::version(const std::string& name) const {
  Entry& e = Find(name);
  std::lock_guard<std::mutex> lock(e.mu);
  return e.version;
}

std::vector<std::string> ParamShard::names() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<std::string> out;
  for (const auto& [name, entry] : entries_) out.push_back(name);
  return out;
}

ParamServer::ParamServer(Mesh mesh, ParamServerOptions options)
    : mesh_(std::move(mesh)), options_(options) {
  if (options_.service_threads < 1) throw ConfigError("service_threads must be positive");
}

ParamServer::~ParamServer() { Stop(); }

void ParamServer::Start() {
  if (!threads_.empty()) return;
  stop_ = false;
  for (int i = 0; i < options_.service_threads; ++i) threads_.emplace_back([this] { Loop(); });
}

void ParamServer::Stop() {
  stop_ = true;
  Wait();
}

void ParamServer::Wait() {
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
  threads_.clear();
}

void ParamServer::Loop() {
  RecvOptions poll;
  poll.timeout = 100ms;
  while (!stop_) {
    Envelope request;
    try {
      request = mesh_.RecvService(poll);
    } catch (const TimeoutError&) {
      continue;
    } catch (const TransportError&) {
      return;  // this server is closed or dead
    }
    Handle(request);
  }
}

void ParamServer::Handle(const Envelope& request) {
  const size_t bar = request.label.find('|');
  const std::string id = request.label.substr(0, bar);
  const std::string args = bar == std::string::npos ? "" : request.label.substr(bar + 1);
  const std::string reply = "ps/" + id;
  try {
    try {
      switch (request.type) {
        case MessageType::kPullRequest: {
          const auto names = SplitOn(args, ',');
          std::vector<Tensor> values;
          std::vector<double> versions;
          try {
            for (const auto& name : names) {
              uint64_t version = 0;
              values.push_back(shard_.Pull(name, &version));
              versions.push_back(static_cast<double>(version));
            }
          } catch (const ProtocolError& e) {
            mesh_.Send(request.src, reply + "/v", TextTensor(e.what()), MessageType::kError);
            return;
          }
          const auto n = static_cast<int64_t>(versions.size());
          mesh_.Send(request.src, reply + "/v", Tensor::FromVector(std::move(versions), Shape{n}),
                     MessageType::kPullResponse);
          for (size_t i = 0; i < values.size(); ++i) {
            mesh_.Send(request.src, reply + "/" + std::to_string(i), values[i],
                       MessageType::kPullResponse);
          }
          return;
        }
        case MessageType::kPush: {
          const auto parts = SplitOn(args, '|');
          if (parts.size() != 2) throw ProtocolError("malformed push '" + request.label + "'");
          const std::string& name = parts[0];
          const uint64_t base = std::stoull(parts[1]);
          if (options_.max_staleness && name != kGlobalStepName &&
              shard_.version(name) > base + *options_.max_staleness) {
            ++pushes_rejected_;
            mesh_.Send(request.src, reply, Tensor::Scalar(-1), MessageType::kAck);
            return;
          }
          const uint64_t v = shard_.Push(name, request.payload);
          ++pushes_applied_;
          mesh_.Send(request.src, reply, Tensor::Scalar(static_cast<double>(v)),
                     MessageType::kAck);
          return;
        }
        case MessageType::kInit:
          shard_.Register(args, request.payload);
          mesh_.Send(request.src, reply, Tensor::Scalar(1), MessageType::kAck);
          return;
        case MessageType::kReady:
          if (args == "set") shard_.set_ready();
          mesh_.Send(request.src, reply, Tensor::Scalar(shard_.ready() ? 1 : 0),
                     MessageType::kAck);
          return;
        default:
          throw ProtocolError("unexpected request type " +
                              std::to_string(static_cast<int>(request.type)));
      }
    } catch (const ProtocolError& e) {
      mesh_.Send(request.src, reply, TextTensor(e.what()), MessageType::kError);
    } catch (const std::logic_error& e) {
      mesh_.Send(request.src, reply, TextTensor("malformed request '" + request.label + "'"),
                 MessageType::kError);
    }
  } catch (const TransportError&) {
    // The requester died; nothing to answer.
  }
}

ParamClient::ParamClient(Mesh mesh, ShardMap shards, ParamClientOptions options)
    : mesh_(std::move(mesh)), shards_(std::move(shards)), options_(options) {}

std::string ParamClient::NextId() {
  return std::to_string(g_client_counter.fetch_add(1)) + "." + std::to_string(next_id_++);
}

Envelope ParamClient::Call(const DeviceTag& server, MessageType type, const std::string& args,
                           Tensor payload) {
  const std::string id = NextId();
  mesh_.Send(server, id + "|" + args, std::move(payload), type);
  RecvOptions opts;
  opts.timeout = options_.timeout;
  Envelope env = mesh_.RecvEnvelope(server, "ps/" + id, opts);
  if (env.type == MessageType::kError) {
    throw ProtocolError(server.ToString() + ": " + TensorText(env.payload));
  }
  return env;
}

std::vector<Tensor> ParamClient::Pull(const std::vector<std::string>& names) {
  std::map<DeviceTag, std::vector<size_t>> by_server;
  for (size_t i = 0; i < names.size(); ++i) {
    by_server[shards_.ServerFor(names[i])].push_back(i);
  }
  std::vector<Tensor> out(names.size());
  for (const auto& [server, idx] : by_server) {
    std::string list;
    for (size_t i : idx) list += (list.empty() ? "" : ",") + names[i];
    for (int attempt = 0;; ++attempt) {
      const std::string id = NextId();
      mesh_.Send(server, id + "|" + list, EmptyPayload(), MessageType::kPullRequest);
      RecvOptions opts;
      opts.timeout = options_.timeout;
      try {
        Envelope head = mesh_.RecvEnvelope(server, "ps/" + id + "/v", opts);
        if (head.type == MessageType::kError) {
          throw ProtocolError(server.ToString() + ": " + TensorText(head.payload));
        }
        const std::vector<double> versions = head.payload.ToDoubles();
        for (size_t k = 0; k < idx.size(); ++k) {
          out[idx[k]] = mesh_.Recv(server, "ps/" + id + "/" + std::to_string(k), opts);
          versions_[names[idx[k]]] = static_cast<uint64_t>(versions.at(k));
        }
        break;
      } catch (const TimeoutError&) {
        if (attempt >= options_.pull_retries) throw;
      }
    }
  }
  return out;
}

uint64_t ParamClient::pulled_version(const std::string& name) const {
  auto it = versions_.find(name);
  return it == versions_.end() ? 0 : it->second;
}

bool ParamClient::Push(const std::string& name, const Tensor& delta) {
  Envelope env = Call(shards_.ServerFor(name), MessageType::kPush,
                      name + "|" + std::to_string(pulled_version(name)), delta);
  return env.payload.ToDoubles()[0] >= 0;
}

void ParamClient::Init(const std::string& name, const Tensor& value) {
  Call(shards_.ServerFor(name), MessageType::kInit, name, value);
}

void ParamClient::MarkReady() {
  for (const auto& server : shards_.servers()) {
    Call(server, MessageType::kReady, "set", EmptyPayload());
  }
}

void ParamClient::WaitReady() {
  const auto deadline = Clock::now() + options_.ready_timeout;
  for (const auto& server : shards_.servers()) {
    while (Call(server, MessageType::kReady, "query", EmptyPayload()).payload.ToDoubles()[0] <
           1) {
      if (Clock::now() >= deadline) {
        throw TimeoutError("parameter server " + server.ToString() + " never became ready");
      }
      std::this_thread::sleep_for(options_.ready_poll);
    }
  }
}

}  // namespace replicator
