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

#include "replicator/device.h"

#include <set>
#include <sstream>

#include "json.hpp"
#include "replicator/errors.h"

namespace replicator {

std::string DeviceTag::ToString() const {
  std::ostringstream os;
  os << "/job:" << job << "/task:" << task << "/device:" << device;
  return os.str();
}

DeviceTag DeviceTag::Parse(const std::string& text) {
  DeviceTag tag;
  tag.device = 0;
  std::istringstream is(text);
  std::string part;
  bool saw_job = false;
  while (std::getline(is, part, '/')) {
    if (part.empty()) continue;
    auto colon = part.find(':');
    if (colon == std::string::npos) throw ConfigError("malformed device string: " + text);
    const std::string key = part.substr(0, colon);
    const std::string value = part.substr(colon + 1);
    try {
      if (key == "job") {
        tag.job = value;
        saw_job = true;
      } else if (key == "task") {
        tag.task = std::stoi(value);
      } else if (key == "device") {
        tag.device = std::stoi(value);
      } else {
        throw ConfigError("unknown device string field '" + key + "' in " + text);
      }
    } catch (const std::logic_error&) {
      throw ConfigError("malformed device string: " + text);
    }
  }
  if (!saw_job || tag.task < 0 || tag.device < 0) {
    throw ConfigError("malformed device string: " + text);
  }
  return tag;
}

ClusterSpec::ClusterSpec(std::map<std::string, std::vector<std::string>> jobs)
    : jobs_(std::move(jobs)) {
  Validate();
}

void ClusterSpec::Validate() const {
  std::set<std::string> seen;
  for (const auto& [job, addrs] : jobs_) {
    if (job.empty()) throw ConfigError("cluster spec has an empty job name");
    for (const auto& a : addrs) {
      if (!seen.insert(a).second) throw ConfigError("duplicate address in cluster spec: " + a);
    }
  }
}

ClusterSpec ClusterSpec::FromJson(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("cluster spec is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("cluster spec must be a JSON object");
  std::map<std::string, std::vector<std::string>> jobs;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_array()) {
      throw ConfigError("cluster spec job '" + it.key() + "' must list addresses");
    }
    auto& addrs = jobs[it.key()];
    for (const auto& a : it.value()) {
      if (!a.is_string()) throw ConfigError("cluster spec addresses must be strings");
      addrs.push_back(a.get<std::string>());
    }
  }
  return ClusterSpec(std::move(jobs));
}

std::string ClusterSpec::ToJson() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [job, addrs] : jobs_) j[job] = addrs;
  return j.dump();
}

int ClusterSpec::num_tasks(const std::string& job) const {
  auto it = jobs_.find(job);
  return it == jobs_.end() ? 0 : static_cast<int>(it->second.size());
}

bool ClusterSpec::Contains(const DeviceTag& tag) const {
  return tag.task >= 0 && tag.task < num_tasks(tag.job) && tag.device >= 0;
}

const std::string& ClusterSpec::Address(const std::string& job, int task) const {
  auto it = jobs_.find(job);
  if (it == jobs_.end() || task < 0 || task >= static_cast<int>(it->second.size())) {
    throw ConfigError("no task " + std::to_string(task) + " in job '" + job + "'");
  }
  return it->second[task];
}

std::vector<DeviceTag> ClusterSpec::AllTasks() const {
  std::vector<DeviceTag> out;
  for (const auto& [job, addrs] : jobs_) {
    for (int t = 0; t < static_cast<int>(addrs.size()); ++t) out.push_back({job, t, 0});
  }
  return out;
}

ClusterSpec LocalClusterSpec(int num_workers, int num_ps) {
  std::map<std::string, std::vector<std::string>> jobs;
  for (int i = 0; i < num_workers; ++i) jobs["worker"].push_back("local:worker:" + std::to_string(i));
  for (int i = 0; i < num_ps; ++i) jobs["ps"].push_back("local:ps:" + std::to_string(i));
  return ClusterSpec(std::move(jobs));
}

}  // namespace replicator
