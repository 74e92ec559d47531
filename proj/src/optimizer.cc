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

#include "replicator/optimizer.h"

#include "replicator/autodiff.h"
#include "replicator/ops.h"

namespace replicator {

double LrAt(const LrSchedule& schedule, int64_t global_step) {
  if (schedule.steps_per_epoch <= 0) {
    throw ConfigError("steps_per_epoch must be positive, got " +
                      std::to_string(schedule.steps_per_epoch));
  }
  const double step = static_cast<double>(global_step);
  const double per_epoch = static_cast<double>(schedule.steps_per_epoch);
  const double warmup_steps = schedule.warmup_epochs * per_epoch;
  if (step < warmup_steps) return schedule.max_lr() * (step / warmup_steps);
  const double epoch = step / per_epoch;
  double lr = schedule.max_lr();
  for (double boundary : schedule.decay_epochs) {
    if (epoch >= boundary) lr *= schedule.decay_factor;
  }
  return lr;
}

Optimizer::Optimizer(OptimizerConfig config) : config_(std::move(config)) {
  if (config_.name.empty()) throw ConfigError("optimizer needs a name");
  if (!config_.schedule && !(config_.learning_rate >= 0)) {
    throw ConfigError("learning rate must be non-negative");
  }
}

Optimizer Optimizer::Sgd(double lr, std::string name) {
  OptimizerConfig c;
  c.rule = OptimizerRule::kSgd;
  c.learning_rate = lr;
  c.name = std::move(name);
  return Optimizer(c);
}

Optimizer Optimizer::Momentum(double lr, double momentum, bool nesterov, std::string name) {
  OptimizerConfig c;
  c.rule = OptimizerRule::kMomentum;
  c.learning_rate = lr;
  c.momentum = momentum;
  c.nesterov = nesterov;
  c.name = std::move(name);
  return Optimizer(c);
}

Optimizer Optimizer::Adam(double lr, double beta1, double beta2, double epsilon,
                          std::string name) {
  OptimizerConfig c;
  c.rule = OptimizerRule::kAdam;
  c.learning_rate = lr;
  c.beta1 = beta1;
  c.beta2 = beta2;
  c.epsilon = epsilon;
  c.name = std::move(name);
  return Optimizer(c);
}

double Optimizer::LearningRate(int64_t global_step) const {
  return config_.schedule ? LrAt(*config_.schedule, global_step) : config_.learning_rate;
}

Optimizer Optimizer::WithGradientAveraging() const {
  Optimizer out = *this;
  out.averages_gradients_ = true;
  return out;
}

std::vector<NodeRef> Optimizer::ComputeDeltas(ReplicaBuilder& b,
                                              const std::vector<GradVar>& grads) const {
  Graph& g = b.graph();
  const OptimizerConfig cfg = config_;
  NodeRef lr = b.StepValue("lr/" + cfg.name,
                           [opt = *this](int64_t step) { return opt.LearningRate(step); });
  auto scalar = [&](double v) { return ops::Scalar(g, v); };

  // Adam's bias-correction powers are shared by every variable of this
  // optimizer in the replica.
  NodeRef lr_t;
  std::shared_ptr<VariableResource> beta1_power, beta2_power;
  if (cfg.rule == OptimizerRule::kAdam) {
    beta1_power = b.LocalVariable(cfg.name + "/beta1_power", Shape{},
                                  Initializer::Constant(cfg.beta1));
    beta2_power = b.LocalVariable(cfg.name + "/beta2_power", Shape{},
                                  Initializer::Constant(cfg.beta2));
    NodeRef p1 = ops::Read(g, beta1_power);
    NodeRef p2 = ops::Read(g, beta2_power);
    lr_t = ops::Div(g, ops::Mul(g, lr, ops::Sqrt(g, ops::Sub(g, scalar(1.0), p2))),
                    ops::Sub(g, scalar(1.0), p1));
  }

  std::vector<NodeRef> deltas;
  for (const GradVar& gv : grads) {
    const auto& var = gv.var;
    const NodeRef grad = gv.grad;
    switch (cfg.rule) {
      case OptimizerRule::kSgd:
        deltas.push_back(ops::Neg(g, ops::Mul(g, lr, grad)));
        break;
      case OptimizerRule::kMomentum: {
        auto accum = b.LocalVariable(var->name() + "/" + cfg.name + "/accum", var->shape(),
                                     Initializer::Zeros(), var->dtype());
        NodeRef mu = scalar(cfg.momentum);
        NodeRef next = ops::Add(g, ops::Mul(g, mu, ops::Read(g, accum)), grad);
        b.AddUpdate(ops::Assign(g, accum, next));
        NodeRef direction = cfg.nesterov ? ops::Add(g, grad, ops::Mul(g, mu, next)) : next;
        deltas.push_back(ops::Neg(g, ops::Mul(g, lr, direction)));
        break;
      }
      case OptimizerRule::kAdam: {
        auto m = b.LocalVariable(var->name() + "/" + cfg.name + "/m", var->shape(),
                                 Initializer::Zeros(), var->dtype());
        auto v = b.LocalVariable(var->name() + "/" + cfg.name + "/v", var->shape(),
                                 Initializer::Zeros(), var->dtype());
        NodeRef m_next = ops::Add(g, ops::Mul(g, scalar(cfg.beta1), ops::Read(g, m)),
                                  ops::Mul(g, scalar(1.0 - cfg.beta1), grad));
        NodeRef v_next =
            ops::Add(g, ops::Mul(g, scalar(cfg.beta2), ops::Read(g, v)),
                     ops::Mul(g, scalar(1.0 - cfg.beta2), ops::Square(g, grad)));
        b.AddUpdate(ops::Assign(g, m, m_next));
        b.AddUpdate(ops::Assign(g, v, v_next));
        NodeRef denom = ops::Add(g, ops::Sqrt(g, v_next), scalar(cfg.epsilon));
        deltas.push_back(ops::Neg(g, ops::Mul(g, lr_t, ops::Div(g, m_next, denom))));
        break;
      }
    }
  }
  if (cfg.rule == OptimizerRule::kAdam) {
    b.AddUpdate(ops::Assign(g, beta1_power,
                            ops::Mul(g, ops::Read(g, beta1_power), scalar(cfg.beta1))));
    b.AddUpdate(ops::Assign(g, beta2_power,
                            ops::Mul(g, ops::Read(g, beta2_power), scalar(cfg.beta2))));
  }
  return deltas;
}

NodeRef Optimizer::ApplyGradients(ReplicaBuilder& b, std::vector<GradVar> grads) const {
  Graph& g = b.graph();
  if (averages_gradients_) {
    const double n = b.num_replicas();
    for (GradVar& gv : grads) {
      gv.grad = b.AllSum(ops::Div(g, gv.grad, ops::Scalar(g, n)),
                         config_.name + "/grad/" + gv.var->name());
    }
  }
  const std::vector<NodeRef> deltas = ComputeDeltas(b, grads);
  std::vector<NodeRef> ops_out;
  for (size_t i = 0; i < grads.size(); ++i) {
    if (b.context().push_updates) {
      b.AddPush(grads[i].var, deltas[i]);
      ops_out.push_back(deltas[i]);
    } else {
      auto instance = b.Resolve(grads[i].var);
      ops_out.push_back(
          ops::Assign(g, instance, ops::Add(g, ops::Read(g, instance), deltas[i])));
    }
  }
  NodeRef group = ops::Group(g, ops_out);
  if (!b.context().push_updates) b.AddUpdate(group);
  return group;
}

NodeRef Optimizer::Minimize(ReplicaBuilder& b, NodeRef loss,
                            const std::vector<VariableHandle>& vars) const {
  std::vector<std::shared_ptr<VariableResource>> instances;
  for (const auto& v : vars) instances.push_back(b.Resolve(v));
  const std::vector<NodeRef> grads = Backprop(b.graph(), loss, instances);
  std::vector<GradVar> pairs;
  for (size_t i = 0; i < vars.size(); ++i) pairs.push_back(GradVar{grads[i], vars[i]});
  return ApplyGradients(b, std::move(pairs));
}

}  // namespace replicator
