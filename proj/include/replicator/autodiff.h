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

#ifndef REPLICATOR_AUTODIFF_H_
#define REPLICATOR_AUTODIFF_H_

#include <memory>
#include <vector>

#include "replicator/graph.h"

namespace replicator {

// Appends reverse-mode gradient nodes of the scalar `loss` with respect to
// each variable. A variable outside the loss's ancestry gets a zero
// constant. The relu derivative at exactly zero is zero.
//
// Throws ConstructionError for a non-scalar loss or when a path from a
// variable to the loss crosses a non-differentiable op.
std::vector<NodeRef> Backprop(Graph& graph, NodeRef loss,
                              const std::vector<std::shared_ptr<VariableResource>>& wrt);

}  // namespace replicator

#endif  // REPLICATOR_AUTODIFF_H_
