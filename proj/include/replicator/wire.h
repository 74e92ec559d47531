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

// Length-prefixed binary frames:
//
//   u32  length of everything that follows (little-endian)
//   u8   message type
//   u16  label length, then label bytes (UTF-8)
//   u64  seq
//   u8   dtype (0 = f32, 1 = f64)
//   u8   rank
//   rank x u64 dims
//   raw little-endian element data
//
// All integers are little-endian regardless of host byte order.

#ifndef REPLICATOR_WIRE_H_
#define REPLICATOR_WIRE_H_

#include <cstdint>
#include <string>
#include <string_view>

#include "replicator/tensor.h"

namespace replicator {

enum class MessageType : uint8_t {
  kData = 0x01,
  kHello = 0x02,
  kHeartbeat = 0x03,
  kGoodbye = 0x04,
  kCollective = 0x10,
  kPullRequest = 0x20,
  kPullResponse = 0x21,
  kPush = 0x22,
  kAck = 0x23,
  kError = 0x24,
  kInit = 0x25,
  kReady = 0x26,
};

const char* MessageTypeName(MessageType type);

struct Frame {
  MessageType type = MessageType::kData;
  std::string label;
  uint64_t seq = 0;
  Tensor payload;
};

constexpr size_t kLengthPrefixBytes = 4;
constexpr uint32_t kMaxFrameBytes = 1u << 30;

// Full frame including the length prefix.
std::string EncodeFrame(const Frame& frame);

// `body` is everything after the length prefix. Throws ProtocolError on
// malformed input.
Frame DecodeFrame(std::string_view body);

// Reads the u32 prefix from the first four bytes of `prefix`.
uint32_t DecodeLength(std::string_view prefix);

// Zero-element f64 tensor used by control frames.
Tensor EmptyPayload();

}  // namespace replicator

#endif  // REPLICATOR_WIRE_H_
