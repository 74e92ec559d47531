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

// Small models and datasets used by the harness scenarios.

#ifndef REPLICATOR_DEMOS_H_
#define REPLICATOR_DEMOS_H_

#include <cstdint>
#include <memory>
#include <vector>

#include "replicator/replicator.h"

namespace replicator::demos {

struct Dataset {
  Tensor features;  // (n, dim)
  Tensor labels;    // (n, classes), one-hot or regression targets
};

// Two Gaussian blobs centred at -1 and +1 in every coordinate, unit
// variance. Rows alternate between classes.
Dataset MakeBlobs(uint64_t seed, int64_t n, int64_t dim);

// y = x w* + noise with w* and x drawn from the seed. Labels are (n, 1).
Dataset MakeLeastSquares(uint64_t seed, int64_t n, int64_t dim, double noise);

// Minimizer of mean((x w - y)^2), by Gaussian elimination on the normal
// equations.
std::vector<double> SolveLeastSquares(const Dataset& data);

// Batches {"x", "y"} of consecutive rows; batch i starts at row
// offset + i * stride (stride 0 means `batch`), wrapping around. Ends after
// `steps` batches.
std::unique_ptr<InputSource> SequentialBatches(const Dataset& data, int64_t batch, int64_t steps,
                                               int64_t offset = 0, int64_t stride = 0);
// Batches of rows sampled with replacement from `seed`.
std::unique_ptr<InputSource> RandomBatches(const Dataset& data, int64_t batch, int64_t steps,
                                           uint64_t seed);
// The same tensor `steps` times.
std::unique_ptr<InputSource> RepeatTensor(Tensor value, int64_t steps);

struct MlpConfig {
  int64_t input_dim = 4;
  int64_t hidden = 32;
  int64_t classes = 2;
  uint64_t seed = 1;
};

// Two tanh hidden layers and a linear output; biases are (1, n) rows.
struct Mlp {
  MlpConfig config;
  std::vector<VariableHandle> params;  // w1 b1 w2 b2 w3 b3
};

Mlp CreateMlp(Replicator& repl, const MlpConfig& config);

// Mean softmax cross-entropy of the batch.
NodeRef MlpLoss(ReplicaBuilder& b, const Mlp& mlp, NodeRef x, NodeRef y);

// Input {"x", "y"}; output {"loss"}.
StepFn MlpTrainStep(Mlp mlp, Optimizer optimizer);

// Bilinear game with L2 terms: player u minimizes u*v + reg/2 u^2, player v
// minimizes -u*v + reg/2 v^2. The unique equilibrium is (0, 0).
struct Minmax {
  VariableHandle u;
  VariableHandle v;
  double reg = 0.5;
};

Minmax CreateMinmax(Replicator& repl, double u0, double v0, double reg);

// Two losses, two optimizers, one step. Output [loss_u, loss_v, u, v].
// The input is ignored.
StepFn MinmaxStep(Minmax game, Optimizer u_opt, Optimizer v_opt);

// Normalizes (batch, features) `h` with statistics over every replica's
// batch: mean and mean of squares are all-summed and divided by the replica
// count; variance is E[h^2] - E[h]^2. Replicas must hold equal batches.
NodeRef CrossReplicaBatchNorm(ReplicaBuilder& b, NodeRef h, double epsilon = 1e-5,
                              const std::string& label = "bn");

// Input {"x", "y"} with y of shape (batch, 1); output {"loss"}.
StepFn LeastSquaresStep(VariableHandle w, Optimizer optimizer);

}  // namespace replicator::demos

#endif  // REPLICATOR_DEMOS_H_
