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

#ifndef REPLICATOR_SRC_HARNESS_INTERNAL_H_
#define REPLICATOR_SRC_HARNESS_INTERNAL_H_

#include <set>
#include <string>
#include <vector>

#include "replicator/harness.h"

namespace replicator::harness::internal {

// One step of one asynchronous worker.
struct WorkerRow {
  int worker = 0;
  int64_t local_step = 0;
  int64_t pulled_step = 0;  // shared counter seen by the step's pull
  double loss = 0;
  double distance = 0;  // max |pulled w - optimum|
  uint64_t checksum = 0;
  double wall_time_ms = 0;
  double step_ms = 0;
};

// Rows of a worker process, appended and flushed one at a time so a killed
// worker leaves everything it finished on disk.
std::string WorkerRowsPath(const std::string& metrics_path, int worker);
void AppendWorkerRow(const std::string& path, const WorkerRow& row);
std::vector<WorkerRow> ReadWorkerRows(const std::string& path);

// Orders rows by (pulled_step, worker, local_step) and writes the metrics
// file. `dead` lists workers that died; each counts as gone from the row
// after its last one.
void WriteAsyncMetrics(ScenarioContext& ctx, std::vector<WorkerRow> rows, int workers,
                       const std::set<int>& dead);

}  // namespace replicator::harness::internal

#endif  // REPLICATOR_SRC_HARNESS_INTERNAL_H_
