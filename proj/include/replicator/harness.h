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

// Experiment runner behind the command-line tool: configs, metrics files,
// scenarios and their success predicates.
//
// Every scenario writes one CSV row per step plus a JSON copy of its config
// next to it. The success predicate of a scenario reads only the CSV, so a
// finished run can be re-checked offline with `replicator_cli check`.

#ifndef REPLICATOR_HARNESS_H_
#define REPLICATOR_HARNESS_H_

#include <cstdint>
#include <fstream>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "replicator/replicator.h"

namespace replicator::harness {

enum ExitCode { kSuccess = 0, kPredicateFailed = 1, kConfigError = 2, kRuntimeError = 3 };

struct OptimizerSettings {
  std::string rule = "sgd";  // sgd | momentum | adam
  double learning_rate = 0.05;
  double momentum = 0.9;
  bool nesterov = true;
  std::optional<LrSchedule> schedule;
};

struct FaultPlan {
  int worker = 1;
  int64_t step = 50;  // the worker dies before its local step `step`
};

struct ExperimentConfig {
  std::string scenario;
  ReplicatorKind kind = ReplicatorKind::kNon;
  Topology topology;
  int64_t batch_size = 16;  // per replica
  int64_t steps = 100;
  uint64_t seed = 0;
  OptimizerSettings optimizer;
  std::string transport = "in_process";  // in_process | tcp
  // Asynchronous in-process runs: "seeded" interleaves workers in an order
  // drawn from the seed; "threads" runs them freely.
  std::string schedule = "seeded";
  std::optional<FaultPlan> fault;
  std::string metrics_path;
  std::vector<int> bench_replicas = {1, 2, 4, 8};

  nlohmann::json ToJson() const;
  // Unknown keys, missing seed or an invalid topology throw ConfigError.
  static ExperimentConfig FromJson(const nlohmann::json& j);
};

// Applies "a.b.c=value" to `j`. The value is parsed as JSON when possible
// and kept as a string otherwise.
void ApplyOverride(nlohmann::json& j, const std::string& assignment);

// Scenario defaults, then the file (if any), then the overrides.
ExperimentConfig LoadConfig(const std::string& scenario, const std::string& path,
                            const std::vector<std::string>& overrides);

struct MetricsRecord {
  int64_t global_step = 0;
  double wall_time_ms = 0;
  std::vector<double> losses;  // per replica (or worker)
  double throughput = 0;       // examples per second
  uint64_t checksum = 0;
  std::vector<double> extras;  // scenario columns, in the writer's order
};

// Columns whose values depend on timing; ignored when comparing runs.
bool IsTimingColumn(const std::string& name);

class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, int num_losses, std::vector<std::string> extra_columns);
  void Write(const MetricsRecord& record);
  const std::vector<std::string>& header() const { return header_; }

 private:
  std::ofstream out_;
  std::vector<std::string> header_;
  size_t num_losses_;
  size_t num_extras_;
  std::optional<int64_t> last_step_;
};

class MetricsTable {
 public:
  static MetricsTable Read(const std::string& path);
  static MetricsTable Parse(const std::string& text);

  const std::vector<std::string>& header() const { return header_; }
  size_t rows() const { return rows_.size(); }
  bool Has(const std::string& column) const;
  const std::string& Cell(size_t row, const std::string& column) const;
  double Value(size_t row, const std::string& column) const;
  std::vector<double> Column(const std::string& column) const;

 private:
  size_t Index(const std::string& column) const;

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Row-by-row equality ignoring timing columns. Returns a description of the
// first difference, or nullopt.
std::optional<std::string> CompareIgnoringTiming(const MetricsTable& a, const MetricsTable& b);

struct Verdict {
  bool ok = false;
  std::string message;
};

// Process role. A default role runs every worker in this process.
struct Role {
  std::optional<ClusterSpec> cluster;
  std::string job = "worker";
  int task = 0;
  bool chief() const { return !cluster || (job == "worker" && task == 0); }
};

struct ScenarioContext {
  ScenarioContext(const ExperimentConfig& config, Role role, std::string metrics_path,
                  std::ostream* log)
      : config(config), role(std::move(role)), metrics_path(std::move(metrics_path)), log(log) {}

  const ExperimentConfig& config;
  Role role;
  // Empty in processes that do not write the metrics file.
  std::string metrics_path;
  std::ostream* log = nullptr;

  bool writes_metrics() const { return !metrics_path.empty(); }
  MetricsWriter& OpenMetrics(int num_losses, std::vector<std::string> extra_columns);

 private:
  std::unique_ptr<MetricsWriter> writer_;
};

struct Scenario {
  std::string name;
  std::string summary;
  ExperimentConfig defaults;
  std::function<void(ScenarioContext&)> run;
  std::function<Verdict(const MetricsTable&)> check;
  // False for scenarios that never build a replicator (the tcp transport
  // then means loopback sockets inside one process).
  bool spawns_workers = true;
};

const std::vector<Scenario>& Scenarios();
// Throws ConfigError listing the known names.
const Scenario& FindScenario(const std::string& name);

// Runs the scenario (spawning worker processes for the tcp transport),
// writes metrics and the config sidecar, then applies the predicate to the
// file. Returns an ExitCode.
int RunExperiment(const ExperimentConfig& config, std::ostream& log);

// Entry point of a spawned worker process. Reads the role, cluster spec and
// config from the environment.
int RunWorkerFromEnvironment(std::ostream& log);

inline constexpr char kEnvClusterSpec[] = "REPLICATOR_CLUSTER_SPEC";
inline constexpr char kEnvRole[] = "REPLICATOR_ROLE";  // "<job>:<task>"
inline constexpr char kEnvConfig[] = "REPLICATOR_CONFIG";

struct BenchRow {
  int replicas = 0;
  int64_t per_replica_batch = 0;
  double steps_per_sec = 0;
  double examples_per_sec = 0;
};

// Weak scaling: fixed per-replica batch, one in-process run per entry of
// `replicas`, `config.steps` timed steps each.
std::vector<BenchRow> RunBenchmark(const ExperimentConfig& config, const std::vector<int>& replicas);

// Command spawned for worker processes; it must end up calling
// RunWorkerFromEnvironment. Defaults to {"/proc/self/exe", "worker"}.
void SetWorkerCommand(std::vector<std::string> argv);

}  // namespace replicator::harness

#endif  // REPLICATOR_HARNESS_H_
