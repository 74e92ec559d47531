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

#include <fstream>
#include <set>
#include <sstream>

#include "replicator/harness.h"

namespace replicator::harness {
namespace {

using nlohmann::json;

void CheckKeys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T Get(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
void Maybe(const json& j, const std::string& key, const std::string& where, T& out) {
  if (j.contains(key)) out = Get<T>(j, key, where);
}

json ScheduleToJson(const LrSchedule& s) {
  return json{{"batch_size", s.batch_size},
              {"steps_per_epoch", s.steps_per_epoch},
              {"warmup_epochs", s.warmup_epochs},
              {"decay_epochs", s.decay_epochs},
              {"decay_factor", s.decay_factor}};
}

LrSchedule ScheduleFromJson(const json& j) {
  CheckKeys(j, "optimizer.schedule",
            {"batch_size", "steps_per_epoch", "warmup_epochs", "decay_epochs", "decay_factor"});
  LrSchedule s;
  const std::string where = "optimizer.schedule";
  Maybe(j, "batch_size", where, s.batch_size);
  Maybe(j, "steps_per_epoch", where, s.steps_per_epoch);
  Maybe(j, "warmup_epochs", where, s.warmup_epochs);
  Maybe(j, "decay_epochs", where, s.decay_epochs);
  Maybe(j, "decay_factor", where, s.decay_factor);
  if (s.steps_per_epoch <= 0) throw ConfigError("optimizer.schedule.steps_per_epoch must be > 0");
  return s;
}

}  // namespace

json ExperimentConfig::ToJson() const {
  json opt{{"rule", optimizer.rule},
           {"learning_rate", optimizer.learning_rate},
           {"momentum", optimizer.momentum},
           {"nesterov", optimizer.nesterov}};
  if (optimizer.schedule) opt["schedule"] = ScheduleToJson(*optimizer.schedule);
  json j{{"scenario", scenario},
         {"kind", ReplicatorKindName(kind)},
         {"topology",
          {{"workers", topology.workers},
           {"devices_per_worker", topology.devices_per_worker},
           {"ps_tasks", topology.ps_tasks}}},
         {"batch_size", batch_size},
         {"steps", steps},
         {"seed", seed},
         {"optimizer", opt},
         {"transport", transport},
         {"schedule", schedule},
         {"metrics_path", metrics_path},
         {"bench_replicas", bench_replicas}};
  if (fault) j["fault"] = json{{"worker", fault->worker}, {"step", fault->step}};
  return j;
}

ExperimentConfig ExperimentConfig::FromJson(const json& j) {
  CheckKeys(j, "config",
            {"scenario", "kind", "topology", "batch_size", "steps", "seed", "optimizer",
             "transport", "schedule", "fault", "metrics_path", "bench_replicas"});
  if (!j.contains("seed")) throw ConfigError("config: 'seed' is required");
  ExperimentConfig c;
  Maybe(j, "scenario", "config", c.scenario);
  if (j.contains("kind")) c.kind = ParseReplicatorKind(Get<std::string>(j, "kind", "config"));
  if (j.contains("topology")) {
    const json& t = j["topology"];
    CheckKeys(t, "topology", {"workers", "devices_per_worker", "ps_tasks"});
    Maybe(t, "workers", "topology", c.topology.workers);
    Maybe(t, "devices_per_worker", "topology", c.topology.devices_per_worker);
    Maybe(t, "ps_tasks", "topology", c.topology.ps_tasks);
  }
  Maybe(j, "batch_size", "config", c.batch_size);
  Maybe(j, "steps", "config", c.steps);
  c.seed = Get<uint64_t>(j, "seed", "config");
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    CheckKeys(o, "optimizer", {"rule", "learning_rate", "momentum", "nesterov", "schedule"});
    Maybe(o, "rule", "optimizer", c.optimizer.rule);
    Maybe(o, "learning_rate", "optimizer", c.optimizer.learning_rate);
    Maybe(o, "momentum", "optimizer", c.optimizer.momentum);
    Maybe(o, "nesterov", "optimizer", c.optimizer.nesterov);
    if (o.contains("schedule") && !o["schedule"].is_null()) {
      c.optimizer.schedule = ScheduleFromJson(o["schedule"]);
    }
  }
  Maybe(j, "transport", "config", c.transport);
  Maybe(j, "schedule", "config", c.schedule);
  if (j.contains("fault") && !j["fault"].is_null()) {
    const json& f = j["fault"];
    CheckKeys(f, "fault", {"worker", "step"});
    FaultPlan plan;
    Maybe(f, "worker", "fault", plan.worker);
    Maybe(f, "step", "fault", plan.step);
    c.fault = plan;
  }
  Maybe(j, "metrics_path", "config", c.metrics_path);
  Maybe(j, "bench_replicas", "config", c.bench_replicas);

  ValidateTopology(c.kind, c.topology);
  if (c.batch_size <= 0) throw ConfigError("batch_size must be > 0");
  if (c.steps <= 0) throw ConfigError("steps must be > 0");
  if (c.transport != "in_process" && c.transport != "tcp") {
    throw ConfigError("transport must be in_process or tcp, got '" + c.transport + "'");
  }
  if (c.schedule != "seeded" && c.schedule != "threads") {
    throw ConfigError("schedule must be seeded or threads, got '" + c.schedule + "'");
  }
  const std::set<std::string> rules = {"sgd", "momentum", "adam"};
  if (!rules.count(c.optimizer.rule)) {
    throw ConfigError("optimizer.rule must be sgd, momentum or adam");
  }
  if (c.fault && (c.fault->worker < 0 || c.fault->worker >= c.topology.workers)) {
    throw ConfigError("fault.worker " + std::to_string(c.fault->worker) + " is not a worker");
  }
  for (int r : c.bench_replicas) {
    if (r <= 0) throw ConfigError("bench_replicas entries must be > 0");
  }
  return c;
}

void ApplyOverride(json& j, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = text;

  json* node = &j;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    if (!node->is_object()) throw ConfigError("override '" + path + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

ExperimentConfig LoadConfig(const std::string& scenario, const std::string& path,
                            const std::vector<std::string>& overrides) {
  json j = FindScenario(scenario).defaults.ToJson();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    json file = json::parse(in, nullptr, /*allow_exceptions=*/false);
    if (file.is_discarded()) throw ConfigError(path + " is not valid JSON");
    if (!file.is_object()) throw ConfigError(path + " must hold a JSON object");
    if (!file.contains("seed")) throw ConfigError(path + ": 'seed' is required");
    if (file.contains("scenario") && file["scenario"] != scenario) {
      throw ConfigError(path + " is for scenario " + file["scenario"].dump());
    }
    j.merge_patch(file);
  }
  for (const auto& o : overrides) ApplyOverride(j, o);
  j["scenario"] = scenario;
  return ExperimentConfig::FromJson(j);
}

}  // namespace replicator::harness
