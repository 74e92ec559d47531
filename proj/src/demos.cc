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

#include "replicator/demos.h"

#include <cmath>
#include <random>

#include "replicator/kernels.h"
#include "replicator/ops.h"

namespace replicator::demos {
namespace {

Tensor Rows(const Tensor& t, const std::vector<int64_t>& rows) {
  const int64_t cols = t.shape().dim(1);
  const std::vector<double> src = t.ToDoubles();
  std::vector<double> out;
  out.reserve(rows.size() * cols);
  for (int64_t r : rows) {
    out.insert(out.end(), src.begin() + r * cols, src.begin() + (r + 1) * cols);
  }
  return Tensor::FromVector(std::move(out), Shape{static_cast<int64_t>(rows.size()), cols});
}

TensorNest Batch(const Dataset& data, const std::vector<int64_t>& rows) {
  return TensorNest(TensorNest::Dict{{"x", Rows(data.features, rows)},
                                     {"y", Rows(data.labels, rows)}});
}

SpecNest BatchSpec(const Dataset& data, int64_t batch) {
  return SpecNest(SpecNest::Dict{
      {"x", TensorSpec{Shape{batch, data.features.shape().dim(1)}, DType::kF64}},
      {"y", TensorSpec{Shape{batch, data.labels.shape().dim(1)}, DType::kF64}}});
}

NodeRef Ones(Graph& g, int64_t rows, int64_t cols) {
  return ops::Constant(g, Tensor::Filled(Shape{rows, cols}, 1.0));
}

// x @ w + ones(batch, 1) @ b
NodeRef Dense(Graph& g, NodeRef x, NodeRef w, NodeRef b) {
  const int64_t batch = g.node(x).shape.dim(0);
  return ops::Add(g, ops::MatMul(g, x, w), ops::MatMul(g, Ones(g, batch, 1), b));
}

}  // namespace

Dataset MakeBlobs(uint64_t seed, int64_t n, int64_t dim) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> x(n * dim), y(n * 2, 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double centre = label == 0 ? -1.0 : 1.0;
    for (int64_t j = 0; j < dim; ++j) x[i * dim + j] = centre + noise(rng);
    y[i * 2 + label] = 1.0;
  }
  return Dataset{Tensor::FromVector(std::move(x), Shape{n, dim}),
                 Tensor::FromVector(std::move(y), Shape{n, 2})};
}

Dataset MakeLeastSquares(uint64_t seed, int64_t n, int64_t dim, double noise) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> w(dim), x(n * dim), y(n);
  for (double& v : w) v = normal(rng);
  for (int64_t i = 0; i < n; ++i) {
    double dot = 0;
    for (int64_t j = 0; j < dim; ++j) {
      x[i * dim + j] = normal(rng);
      dot += x[i * dim + j] * w[j];
    }
    y[i] = dot + noise * normal(rng);
  }
  return Dataset{Tensor::FromVector(std::move(x), Shape{n, dim}),
                 Tensor::FromVector(std::move(y), Shape{n, 1})};
}

std::vector<double> SolveLeastSquares(const Dataset& data) {
  const int64_t n = data.features.shape().dim(0);
  const int64_t d = data.features.shape().dim(1);
  const auto x = data.features.ToDoubles();
  const auto y = data.labels.ToDoubles();
  // Augmented system [X^T X | X^T y].
  std::vector<std::vector<double>> a(d, std::vector<double>(d + 1, 0.0));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t r = 0; r < d; ++r) {
      for (int64_t c = 0; c < d; ++c) a[r][c] += x[i * d + r] * x[i * d + c];
      a[r][d] += x[i * d + r] * y[i];
    }
  }
  for (int64_t col = 0; col < d; ++col) {
    int64_t pivot = col;
    for (int64_t r = col + 1; r < d; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    }
    std::swap(a[col], a[pivot]);
    if (a[col][col] == 0.0) throw EvaluationError("least-squares system is singular");
    for (int64_t r = 0; r < d; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int64_t c = col; c <= d; ++c) a[r][c] -= f * a[col][c];
    }
  }
  std::vector<double> w(d);
  for (int64_t r = 0; r < d; ++r) w[r] = a[r][d] / a[r][r];
  return w;
}

std::unique_ptr<InputSource> SequentialBatches(const Dataset& data, int64_t batch, int64_t steps,
                                               int64_t offset, int64_t stride) {
  const int64_t n = data.features.shape().dim(0);
  if (stride == 0) stride = batch;
  auto next = std::make_shared<int64_t>(0);
  return std::make_unique<CallableSource>(
      BatchSpec(data, batch),
      [data, batch, steps, offset, stride, n, next]() -> std::optional<TensorNest> {
        if (*next >= steps) return std::nullopt;
        std::vector<int64_t> rows;
        for (int64_t k = 0; k < batch; ++k) rows.push_back((offset + *next * stride + k) % n);
        ++*next;
        return Batch(data, rows);
      });
}

std::unique_ptr<InputSource> RandomBatches(const Dataset& data, int64_t batch, int64_t steps,
                                           uint64_t seed) {
  const int64_t n = data.features.shape().dim(0);
  auto rng = std::make_shared<std::mt19937_64>(seed);
  auto next = std::make_shared<int64_t>(0);
  return std::make_unique<CallableSource>(
      BatchSpec(data, batch), [data, batch, steps, n, rng, next]() -> std::optional<TensorNest> {
        if (*next >= steps) return std::nullopt;
        std::uniform_int_distribution<int64_t> pick(0, n - 1);
        std::vector<int64_t> rows;
        for (int64_t k = 0; k < batch; ++k) rows.push_back(pick(*rng));
        ++*next;
        return Batch(data, rows);
      });
}

std::unique_ptr<InputSource> RepeatTensor(Tensor value, int64_t steps) {
  auto next = std::make_shared<int64_t>(0);
  SpecNest spec(TensorSpec{value.shape(), value.dtype()});
  return std::make_unique<CallableSource>(
      spec, [value, steps, next]() -> std::optional<TensorNest> {
        if (*next >= steps) return std::nullopt;
        ++*next;
        return TensorNest(value);
      });
}

Mlp CreateMlp(Replicator& repl, const MlpConfig& config) {
  Mlp mlp;
  mlp.config = config;
  const std::vector<int64_t> sizes = {config.input_dim, config.hidden, config.hidden,
                                      config.classes};
  for (size_t layer = 0; layer + 1 < sizes.size(); ++layer) {
    const std::string suffix = std::to_string(layer + 1);
    const double scale = 1.0 / std::sqrt(static_cast<double>(sizes[layer]));
    mlp.params.push_back(repl.CreateVariable(
        "mlp/w" + suffix, Shape{sizes[layer], sizes[layer + 1]},
        Initializer::Uniform(scale, config.seed * 16 + layer)));
    mlp.params.push_back(repl.CreateVariable("mlp/b" + suffix, Shape{1, sizes[layer + 1]},
                                             Initializer::Zeros()));
  }
  return mlp;
}

NodeRef MlpLoss(ReplicaBuilder& b, const Mlp& mlp, NodeRef x, NodeRef y) {
  Graph& g = b.graph();
  NodeRef h = x;
  for (size_t layer = 0; layer < 3; ++layer) {
    h = Dense(g, h, b.Read(mlp.params[2 * layer]), b.Read(mlp.params[2 * layer + 1]));
    if (layer < 2) h = ops::Tanh(g, h);
  }
  return ops::ReduceMean(g, ops::SoftmaxCrossEntropy(g, h, y));
}

StepFn MlpTrainStep(Mlp mlp, Optimizer optimizer) {
  return [mlp, optimizer](ReplicaBuilder& b, const NodeNest& in) {
    NodeRef loss = MlpLoss(b, mlp, in.at("x").leaf(), in.at("y").leaf());
    optimizer.Minimize(b, loss, mlp.params);
    return NodeNest(NodeNest::Dict{{"loss", loss}});
  };
}

Minmax CreateMinmax(Replicator& repl, double u0, double v0, double reg) {
  Minmax game;
  game.u = repl.CreateVariable("minmax/u", Shape{}, Initializer::Constant(u0));
  game.v = repl.CreateVariable("minmax/v", Shape{}, Initializer::Constant(v0));
  game.reg = reg;
  return game;
}

StepFn MinmaxStep(Minmax game, Optimizer u_opt, Optimizer v_opt) {
  return [game, u_opt, v_opt](ReplicaBuilder& b, const NodeNest&) {
    Graph& g = b.graph();
    NodeRef u = b.Read(game.u);
    NodeRef v = b.Read(game.v);
    NodeRef uv = ops::Mul(g, u, v);
    NodeRef half_reg = ops::Scalar(g, 0.5 * game.reg);
    NodeRef loss_u = ops::Add(g, uv, ops::Mul(g, half_reg, ops::Square(g, u)));
    NodeRef loss_v = ops::Add(g, ops::Neg(g, uv), ops::Mul(g, half_reg, ops::Square(g, v)));
    // Both players' gradients are taken at the same point before either
    // update lands.
    u_opt.Minimize(b, loss_u, {game.u});
    v_opt.Minimize(b, loss_v, {game.v});
    return NodeNest(NodeNest::List{loss_u, loss_v, u, v});
  };
}

NodeRef CrossReplicaBatchNorm(ReplicaBuilder& b, NodeRef h, double epsilon,
                              const std::string& label) {
  Graph& g = b.graph();
  const Shape& shape = g.node(h).shape;
  if (shape.rank() != 2) {
    throw ConstructionError("batch norm expects (batch, features), got " + shape.ToString());
  }
  const int64_t batch = shape.dim(0);
  NodeRef row = Ones(g, 1, batch);
  NodeRef col = Ones(g, batch, 1);
  NodeRef n = ops::Scalar(g, static_cast<double>(batch));
  NodeRef r = ops::Scalar(g, static_cast<double>(b.num_replicas()));
  NodeRef local_mean = ops::Div(g, ops::MatMul(g, row, h), n);
  NodeRef local_sq = ops::Div(g, ops::MatMul(g, row, ops::Square(g, h)), n);
  NodeRef mean = ops::Div(g, b.AllSum(local_mean, label + "/mean"), r);
  NodeRef mean_sq = ops::Div(g, b.AllSum(local_sq, label + "/mean_sq"), r);
  NodeRef variance = ops::Sub(g, mean_sq, ops::Square(g, mean));
  NodeRef stddev = ops::Sqrt(g, ops::Add(g, variance, ops::Scalar(g, epsilon)));
  return ops::Div(g, ops::Sub(g, h, ops::MatMul(g, col, mean)), ops::MatMul(g, col, stddev));
}

StepFn LeastSquaresStep(VariableHandle w, Optimizer optimizer) {
  return [w, optimizer](ReplicaBuilder& b, const NodeNest& in) {
    Graph& g = b.graph();
    NodeRef residual = ops::Sub(g, ops::MatMul(g, in.at("x").leaf(), b.Read(w)), in.at("y").leaf());
    NodeRef loss = ops::ReduceMean(g, ops::Square(g, residual));
    optimizer.Minimize(b, loss, {w});
    return NodeNest(NodeNest::Dict{{"loss", loss}});
  };
}

}  // namespace replicator::demos
