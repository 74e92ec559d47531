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

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <csignal>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <ostream>

#include "internal.h"
#include "replicator/tcp_transport.h"

extern char** environ;

namespace replicator::harness {
namespace {

std::vector<std::string>& WorkerCommand() {
  static std::vector<std::string> argv = {"/proc/self/exe", "worker"};
  return argv;
}

std::string SidecarPath(const std::string& metrics_path) {
  std::filesystem::path p(metrics_path);
  p.replace_extension(".config.json");
  return p.string();
}

class Child {
 public:
  Child(const ClusterSpec& spec, const std::string& job, int task, const ExperimentConfig& config)
      : job_(job), task_(task) {
    std::vector<std::string> env_strings;
    for (char** e = environ; *e; ++e) {
      const std::string entry(*e);
      if (entry.rfind(std::string(kEnvClusterSpec) + "=", 0) == 0 ||
          entry.rfind(std::string(kEnvRole) + "=", 0) == 0 ||
          entry.rfind(std::string(kEnvConfig) + "=", 0) == 0) {
        continue;
      }
      env_strings.push_back(entry);
    }
    env_strings.push_back(std::string(kEnvClusterSpec) + "=" + spec.ToJson());
    env_strings.push_back(std::string(kEnvRole) + "=" + job + ":" + std::to_string(task));
    env_strings.push_back(std::string(kEnvConfig) + "=" + config.ToJson().dump());
    std::vector<char*> envp;
    for (auto& s : env_strings) envp.push_back(s.data());
    envp.push_back(nullptr);
    std::vector<std::string> args = WorkerCommand();
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    const int rc = posix_spawn(&pid_, argv[0], nullptr, nullptr, argv.data(), envp.data());
    if (rc != 0) {
      throw EvaluationError("cannot spawn " + args[0] + ": " + std::strerror(rc));
    }
  }

  ~Child() {
    if (pid_ > 0 && !status_) {
      ::kill(pid_, SIGKILL);
      Wait();
    }
  }

  void Kill() {
    if (pid_ > 0 && !status_) ::kill(pid_, SIGKILL);
  }

  int Wait() {
    if (!status_) {
      int status = 0;
      while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
      }
      status_ = status;
    }
    return *status_;
  }

  bool killed() { return WIFSIGNALED(Wait()) && WTERMSIG(Wait()) == SIGKILL; }
  bool succeeded() { return WIFEXITED(Wait()) && WEXITSTATUS(Wait()) == 0; }
  std::string name() const { return job_ + ":" + std::to_string(task_); }

 private:
  std::string job_;
  int task_;
  pid_t pid_ = -1;
  std::optional<int> status_;
};

bool NeedsWorkerProcesses(const Scenario& s, const ExperimentConfig& c) {
  return s.spawns_workers && c.transport == "tcp" &&
         (c.kind == ReplicatorKind::kMultiWorker || c.kind == ReplicatorKind::kMultiWorkerAsync);
}

// Synchronous: this process is worker 0 (the chief); the others are
// spawned.
void RunSyncProcesses(const Scenario& s, ScenarioContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  ClusterSpec spec({{"worker", PickFreeLocalAddresses(c.topology.workers)}});
  std::vector<std::unique_ptr<Child>> children;
  for (int k = 1; k < c.topology.workers; ++k) {
    children.push_back(std::make_unique<Child>(spec, "worker", k, c));
  }
  ctx.role = Role{spec, "worker", 0};
  try {
    s.run(ctx);
  } catch (...) {
    for (auto& child : children) child->Kill();
    throw;
  }
  for (auto& child : children) {
    if (!child->succeeded()) throw TransportError("worker " + child->name() + " failed");
  }
}

// Asynchronous: parameter servers run here, every worker is spawned and
// logs its own rows; the rows are merged afterwards.
void RunAsyncProcesses(ScenarioContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  const int workers = c.topology.workers;
  const int ps = c.topology.ps_tasks;
  auto addresses = PickFreeLocalAddresses(workers + ps);
  ClusterSpec spec({{"worker", std::vector<std::string>(addresses.begin(), addresses.begin() + workers)},
                    {"ps", std::vector<std::string>(addresses.begin() + workers, addresses.end())}});
  std::vector<std::shared_ptr<TcpTransport>> transports;
  std::vector<std::unique_ptr<ParamServer>> servers;
  for (int t = 0; t < ps; ++t) {
    auto transport = std::make_shared<TcpTransport>(spec, DeviceTag{"ps", t, 0});
    servers.push_back(std::make_unique<ParamServer>(transport->Connect(DeviceTag{"ps", t, 0})));
    servers.back()->Start();
    transports.push_back(std::move(transport));
  }
  for (int k = 0; k < workers; ++k) {
    std::remove(internal::WorkerRowsPath(ctx.metrics_path, k).c_str());
  }
  std::vector<std::unique_ptr<Child>> children;
  for (int k = 0; k < workers; ++k) children.push_back(std::make_unique<Child>(spec, "worker", k, c));
  std::set<int> dead;
  std::string failure;
  for (int k = 0; k < workers; ++k) {
    if (children[k]->succeeded()) continue;
    if (c.fault && c.fault->worker == k && children[k]->killed()) {
      dead.insert(k);
    } else if (failure.empty()) {
      failure = "worker " + children[k]->name() + " failed";
    }
  }
  for (auto& server : servers) server->Stop();
  for (auto& t : transports) t->Shutdown();
  if (!failure.empty()) throw TransportError(failure);
  std::vector<internal::WorkerRow> rows;
  for (int k = 0; k < workers; ++k) {
    const std::string path = internal::WorkerRowsPath(ctx.metrics_path, k);
    auto mine = internal::ReadWorkerRows(path);
    rows.insert(rows.end(), mine.begin(), mine.end());
    std::remove(path.c_str());
  }
  internal::WriteAsyncMetrics(ctx, std::move(rows), workers, dead);
}

int Classify(std::ostream& log, const char* what, int code) {
  log << "error: " << what << "\n";
  return code;
}

}  // namespace

void SetWorkerCommand(std::vector<std::string> argv) {
  if (argv.empty()) throw ConfigError("worker command is empty");
  WorkerCommand() = std::move(argv);
}

int RunExperiment(const ExperimentConfig& config_in, std::ostream& log) {
  try {
    ExperimentConfig config = config_in;
    const Scenario& scenario = FindScenario(config.scenario);
    if (config.metrics_path.empty()) config.metrics_path = "metrics/" + config.scenario + ".csv";
    const auto parent = std::filesystem::path(config.metrics_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    {
      std::ofstream sidecar(SidecarPath(config.metrics_path), std::ios::trunc);
      sidecar << config.ToJson().dump(2) << "\n";
      if (!sidecar) throw ConfigError("cannot write " + SidecarPath(config.metrics_path));
    }
    ScenarioContext ctx{config, Role{}, config.metrics_path, &log};
    if (!NeedsWorkerProcesses(scenario, config)) {
      scenario.run(ctx);
    } else if (config.kind == ReplicatorKind::kMultiWorkerAsync) {
      RunAsyncProcesses(ctx);
    } else {
      RunSyncProcesses(scenario, ctx);
    }
    const Verdict verdict = scenario.check(MetricsTable::Read(config.metrics_path));
    log << config.scenario << ": " << (verdict.ok ? "PASS" : "FAIL") << " " << verdict.message
        << "\n";
    return verdict.ok ? kSuccess : kPredicateFailed;
  } catch (const ConfigError& e) {
    return Classify(log, e.what(), kConfigError);
  } catch (const std::exception& e) {
    return Classify(log, e.what(), kRuntimeError);
  }
}

int RunWorkerFromEnvironment(std::ostream& log) {
  try {
    const char* spec_text = std::getenv(kEnvClusterSpec);
    const char* role_text = std::getenv(kEnvRole);
    const char* config_text = std::getenv(kEnvConfig);
    if (!spec_text || !role_text || !config_text) {
      throw ConfigError(std::string("worker processes need ") + kEnvClusterSpec + ", " + kEnvRole +
                        " and " + kEnvConfig);
    }
    const std::string role_str(role_text);
    const size_t colon = role_str.find(':');
    if (colon == std::string::npos) throw ConfigError("role must be <job>:<task>, got " + role_str);
    Role role{ClusterSpec::FromJson(spec_text), role_str.substr(0, colon),
              std::stoi(role_str.substr(colon + 1))};
    const ExperimentConfig config = ExperimentConfig::FromJson(nlohmann::json::parse(config_text));
    ScenarioContext ctx{config, role, "", &log};
    FindScenario(config.scenario).run(ctx);
    return kSuccess;
  } catch (const ConfigError& e) {
    return Classify(log, e.what(), kConfigError);
  } catch (const std::exception& e) {
    return Classify(log, e.what(), kRuntimeError);
  }
}

}  // namespace replicator::harness
