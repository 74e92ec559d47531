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

#ifndef REPLICATOR_EXECUTOR_H_
#define REPLICATOR_EXECUTOR_H_

#include <map>
#include <span>
#include <vector>

#include "replicator/graph.h"

namespace replicator {

using FeedMap = std::map<NodeRef, Tensor>;

// Supplies cross-replica communication for bound collective nodes when a
// stitched graph is evaluated one replica at a time.
class CollectiveRuntime {
 public:
  virtual ~CollectiveRuntime() = default;
  virtual Tensor Execute(const Node& node, const Tensor& local) = 0;
};

struct EvalOptions {
  // -1 evaluates the whole graph in one context; bound collectives are then
  // computed directly from every replica's input in rank order. A replica
  // index restricts evaluation to that replica's nodes and routes
  // collectives through `collectives`.
  int replica = -1;
  CollectiveRuntime* collectives = nullptr;
};

// Runs every ancestor of `fetches` (data and control inputs) exactly once,
// in node order, and returns the fetched values.
std::vector<Tensor> Evaluate(const Graph& graph, std::span<const NodeRef> fetches,
                             const FeedMap& feeds = {}, const EvalOptions& options = {});

Tensor EvaluateOne(const Graph& graph, NodeRef fetch, const FeedMap& feeds = {},
                   const EvalOptions& options = {});

// Folds per-replica inputs of a collective the way a single context would:
// ascending rank order.
Tensor FoldCollective(const Node& node, std::span<const Tensor> inputs);

}  // namespace replicator

#endif  // REPLICATOR_EXECUTOR_H_
