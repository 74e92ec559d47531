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

#ifndef REPLICATOR_ERRORS_H_
#define REPLICATOR_ERRORS_H_

#include <stdexcept>
#include <string>

namespace replicator {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid graph construction: bad shapes, unknown op kinds, mutation of a
// finalized graph, misuse of replica-only values.
class ConstructionError : public Error {
 public:
  using Error::Error;
};

// Failures while evaluating a finalized graph.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

// Evaluation reached a cross-replica placeholder that was never rewritten.
class UnstitchedError : public EvaluationError {
 public:
  using EvaluationError::EvaluationError;
};

// Replica subgraphs disagree on their collective sequence.
class StitchError : public Error {
 public:
  using Error::Error;
};

// Deployment or experiment configuration is invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Participants of a collective or parameter-server exchange disagree.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

// A peer could not be reached within the configured retry budget.
class ConnectionError : public TransportError {
 public:
  using TransportError::TransportError;
};

// The remote side of a send or recv has been declared dead.
class PeerDeadError : public TransportError {
 public:
  using TransportError::TransportError;
};

class TimeoutError : public TransportError {
 public:
  using TransportError::TransportError;
};

}  // namespace replicator

#endif  // REPLICATOR_ERRORS_H_
