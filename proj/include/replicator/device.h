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

#ifndef REPLICATOR_DEVICE_H_
#define REPLICATOR_DEVICE_H_

#include <compare>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace replicator {

// "/job:<job>/task:<task>/device:<device>". A task is one process; devices
// are execution contexts inside it.
struct DeviceTag {
  std::string job = "worker";
  int task = 0;
  int device = 0;

  std::string ToString() const;
  static DeviceTag Parse(const std::string& text);

  // Identity of the hosting process.
  DeviceTag TaskOnly() const { return DeviceTag{job, task, 0}; }
  bool SameTask(const DeviceTag& o) const { return job == o.job && task == o.task; }

  friend auto operator<=>(const DeviceTag&, const DeviceTag&) = default;
};

// Job name -> ordered task addresses ("host:port"). Task index is the
// position in the list.
class ClusterSpec {
 public:
  ClusterSpec() = default;
  explicit ClusterSpec(std::map<std::string, std::vector<std::string>> jobs);

  // JSON object text, e.g. {"worker": ["127.0.0.1:4000"], "ps": [...]}.
  static ClusterSpec FromJson(const std::string& text);
  std::string ToJson() const;

  const std::map<std::string, std::vector<std::string>>& jobs() const { return jobs_; }
  int num_tasks(const std::string& job) const;
  bool Contains(const DeviceTag& tag) const;
  const std::string& Address(const std::string& job, int task) const;

  // Every (job, task) in job-name then task order.
  std::vector<DeviceTag> AllTasks() const;

  friend bool operator==(const ClusterSpec&, const ClusterSpec&) = default;

 private:
  void Validate() const;

  std::map<std::string, std::vector<std::string>> jobs_;
};

// Single-task spec for in-process deployments.
ClusterSpec LocalClusterSpec(int num_workers = 1, int num_ps = 0);

}  // namespace replicator

#endif  // REPLICATOR_DEVICE_H_
