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

// Command-line driver for the experiment harness.
//
//   replicator_cli run <scenario> [--config file.json] [--override k=v ...]
//   replicator_cli bench --replicas 1,2,4,8 [--config file.json]
//   replicator_cli list-scenarios
//   replicator_cli check <scenario> <metrics.csv>
//   replicator_cli compare <a.csv> <b.csv>
//
// Exit status: 0 success, 1 predicate failed, 2 configuration error,
// 3 runtime or transport error.

#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "replicator/harness.h"

namespace h = replicator::harness;

namespace {

int Guard(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const replicator::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return h::kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return h::kRuntimeError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Replicated training experiments"};
  app.require_subcommand(1);

  std::string scenario, config_path;
  std::vector<std::string> overrides;
  auto* run = app.add_subcommand("run", "Run a scenario and check its success predicate");
  run->add_option("scenario", scenario, "Scenario name (see list-scenarios)")->required();
  run->add_option("--config", config_path, "JSON experiment config");
  run->add_option("--override", overrides, "key=value, dotted keys for nested fields");

  std::string replicas_text = "1,2,4,8";
  std::string bench_config;
  std::vector<std::string> bench_overrides;
  auto* bench = app.add_subcommand("bench", "Weak-scaling throughput table");
  bench->add_option("--replicas", replicas_text, "Comma-separated replica counts");
  bench->add_option("--config", bench_config, "JSON experiment config");
  bench->add_option("--override", bench_overrides, "key=value");

  app.add_subcommand("list-scenarios", "Print the scenario names");

  std::string check_scenario, check_path;
  auto* check = app.add_subcommand("check", "Re-apply a scenario's predicate to a metrics file");
  check->add_option("scenario", check_scenario)->required();
  check->add_option("metrics", check_path)->required();

  std::string a_path, b_path;
  auto* compare = app.add_subcommand("compare", "Compare two metrics files, ignoring timing columns");
  compare->add_option("a", a_path)->required();
  compare->add_option("b", b_path)->required();

  auto* worker = app.add_subcommand("worker", "");
  worker->group("");  // hidden: spawned by the harness

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : h::kConfigError;
  }

  if (*worker) return h::RunWorkerFromEnvironment(std::cerr);

  if (*run) {
    return Guard([&] {
      const h::ExperimentConfig config = h::LoadConfig(scenario, config_path, overrides);
      return h::RunExperiment(config, std::cout);
    });
  }

  if (*bench) {
    return Guard([&] {
      std::vector<std::string> all = bench_overrides;
      all.push_back("bench_replicas=[" + replicas_text + "]");
      const h::ExperimentConfig config = h::LoadConfig("bench", bench_config, all);
      return h::RunExperiment(config, std::cout);
    });
  }

  if (app.got_subcommand("list-scenarios")) {
    for (const auto& s : h::Scenarios()) std::cout << s.name << "\t" << s.summary << "\n";
    return h::kSuccess;
  }

  if (*check) {
    return Guard([&] {
      const h::Verdict v = h::FindScenario(check_scenario).check(h::MetricsTable::Read(check_path));
      std::cout << check_scenario << ": " << (v.ok ? "PASS" : "FAIL") << " " << v.message << "\n";
      return v.ok ? h::kSuccess : h::kPredicateFailed;
    });
  }

  if (*compare) {
    return Guard([&] {
      auto diff = h::CompareIgnoringTiming(h::MetricsTable::Read(a_path), h::MetricsTable::Read(b_path));
      if (diff) {
        std::cout << "differ: " << *diff << "\n";
        return h::kPredicateFailed;
      }
      std::cout << "identical (timing columns ignored)\n";
      return h::kSuccess;
    });
  }
  return h::kSuccess;
}
