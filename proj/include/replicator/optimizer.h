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

#ifndef REPLICATOR_OPTIMIZER_H_
#define REPLICATOR_OPTIMIZER_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "replicator/replica.h"

namespace replicator {

// Linear warmup from 0 to batch_size / 2048, then step decay.
struct LrSchedule {
  int64_t batch_size = 256;
  int64_t steps_per_epoch = 1;
  double warmup_epochs = 6;
  std::vector<double> decay_epochs = {30, 60, 80};
  double decay_factor = 0.1;

  double max_lr() const { return static_cast<double>(batch_size) / 2048.0; }
};

// Throws ConfigError when steps_per_epoch is not positive.
double LrAt(const LrSchedule& schedule, int64_t global_step);

enum class OptimizerRule { kSgd, kMomentum, kAdam };

struct OptimizerConfig {
  OptimizerRule rule = OptimizerRule::kSgd;
  std::string name = "opt";
  double learning_rate = 0.01;
  std::optional<LrSchedule> schedule;  // overrides learning_rate
  double momentum = 0.9;
  bool nesterov = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct GradVar {
  NodeRef grad;
  VariableHandle var;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  static Optimizer Sgd(double lr, std::string name = "sgd");
  static Optimizer Momentum(double lr, double momentum, bool nesterov,
                            std::string name = "momentum");
  static Optimizer Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                        double epsilon = 1e-8, std::string name = "adam");

  const OptimizerConfig& config() const { return config_; }
  const std::string& name() const { return config_.name; }
  double LearningRate(int64_t global_step) const;

  // Set by Replicator::WrapOptimizer: gradients are replaced by
  // all_sum(g / R) before the update rule runs.
  bool averages_gradients() const { return averages_gradients_; }
  Optimizer WithGradientAveraging() const;

  // Per-variable additive deltas under the rule. Slot updates are
  // registered with the builder.
  std::vector<NodeRef> ComputeDeltas(ReplicaBuilder& b, const std::vector<GradVar>& grads) const;

  // Returns a group over the variable assignments, or over the deltas when
  // the deployment pushes updates.
  NodeRef ApplyGradients(ReplicaBuilder& b, std::vector<GradVar> grads) const;

  // Backprop of `loss` into `vars`, then ApplyGradients.
  NodeRef Minimize(ReplicaBuilder& b, NodeRef loss, const std::vector<VariableHandle>& vars) const;

 private:
  OptimizerConfig config_;
  bool averages_gradients_ = false;
};

}  // namespace replicator

#endif  // REPLICATOR_OPTIMIZER_H_
