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

#include "replicator/wire.h"

#include <bit>
#include <cstring>

#include "replicator/errors.h"

namespace replicator {
namespace {

template <typename T>
void PutLE(std::string& out, T value) {
  for (size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  template <typename T>
  T GetLE() {
    Need(sizeof(T));
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<uint64_t>(static_cast<uint8_t>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string_view Take(size_t n) {
    Need(n);
    auto out = in_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  size_t remaining() const { return in_.size() - pos_; }

 private:
  void Need(size_t n) const {
    if (in_.size() - pos_ < n) {
      throw ProtocolError("frame truncated: need " + std::to_string(n) + " bytes at offset " +
                          std::to_string(pos_) + ", have " + std::to_string(in_.size() - pos_));
    }
  }

  std::string_view in_;
  size_t pos_ = 0;
};

// Element bytes are little-endian on the wire.
void AppendElements(std::string& out, const Tensor& t) {
  auto bytes = t.bytes();
  if constexpr (std::endian::native == std::endian::little) {
    out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  } else {
    const size_t width = t.dtype() == DType::kF32 ? 4 : 8;
    for (size_t i = 0; i < bytes.size(); i += width) {
      for (size_t k = width; k-- > 0;) out.push_back(static_cast<char>(bytes[i + k]));
    }
  }
}

void ReadElements(std::string_view raw, Tensor& t) {
  auto bytes = t.mutable_bytes();
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(bytes.data(), raw.data(), raw.size());
  } else {
    const size_t width = t.dtype() == DType::kF32 ? 4 : 8;
    for (size_t i = 0; i < raw.size(); i += width) {
      for (size_t k = 0; k < width; ++k) bytes[i + k] = static_cast<uint8_t>(raw[i + width - 1 - k]);
    }
  }
}

}  // namespace

const char* MessageTypeName(MessageType type) {
  switch (type) {
    case MessageType::kData: return "DATA";
    case MessageType::kHello: return "HELLO";
    case MessageType::kHeartbeat: return "HEARTBEAT";
    case MessageType::kGoodbye: return "GOODBYE";
    case MessageType::kCollective: return "COLLECTIVE";
    case MessageType::kPullRequest: return "PULL_REQ";
    case MessageType::kPullResponse: return "PULL_RESP";
    case MessageType::kPush: return "PUSH";
    case MessageType::kAck: return "ACK";
    case MessageType::kError: return "ERROR";
    case MessageType::kInit: return "INIT";
    case MessageType::kReady: return "READY";
  }
  return "UNKNOWN";
}

Tensor EmptyPayload() { return Tensor(Shape{0}, DType::kF64); }

std::string EncodeFrame(const Frame& frame) {
  if (frame.label.size() > 0xffff) {
    throw ProtocolError("label too long for frame: " + std::to_string(frame.label.size()) +
                        " bytes");
  }
  const Tensor& t = frame.payload;
  if (t.rank() > 0xff) throw ProtocolError("tensor rank too large for frame");
  std::string out(kLengthPrefixBytes, '\0');
  out.push_back(static_cast<char>(frame.type));
  PutLE<uint16_t>(out, static_cast<uint16_t>(frame.label.size()));
  out += frame.label;
  PutLE<uint64_t>(out, frame.seq);
  out.push_back(static_cast<char>(t.dtype() == DType::kF32 ? 0 : 1));
  out.push_back(static_cast<char>(t.rank()));
  for (int64_t d : t.shape().dims()) PutLE<uint64_t>(out, static_cast<uint64_t>(d));
  AppendElements(out, t);
  const size_t body = out.size() - kLengthPrefixBytes;
  if (body > kMaxFrameBytes) throw ProtocolError("frame exceeds maximum size");
  for (size_t i = 0; i < 4; ++i) out[i] = static_cast<char>((body >> (8 * i)) & 0xff);
  return out;
}

uint32_t DecodeLength(std::string_view prefix) {
  Reader r(prefix);
  return r.GetLE<uint32_t>();
}

Frame DecodeFrame(std::string_view body) {
  Reader r(body);
  Frame f;
  const uint8_t type = r.GetLE<uint8_t>();
  f.type = static_cast<MessageType>(type);
  if (std::string(MessageTypeName(f.type)) == "UNKNOWN") {
    throw ProtocolError("unknown message type " + std::to_string(type));
  }
  const uint16_t label_len = r.GetLE<uint16_t>();
  f.label = std::string(r.Take(label_len));
  f.seq = r.GetLE<uint64_t>();
  const uint8_t dtype = r.GetLE<uint8_t>();
  if (dtype > 1) throw ProtocolError("unknown dtype code " + std::to_string(dtype));
  const uint8_t rank = r.GetLE<uint8_t>();
  std::vector<int64_t> dims(rank);
  for (auto& d : dims) {
    const uint64_t v = r.GetLE<uint64_t>();
    if (v > (uint64_t{1} << 40)) throw ProtocolError("implausible dimension " + std::to_string(v));
    d = static_cast<int64_t>(v);
  }
  Shape shape(dims);
  const DType dt = dtype == 0 ? DType::kF32 : DType::kF64;
  const size_t width = dt == DType::kF32 ? 4 : 8;
  const size_t expect = static_cast<size_t>(shape.num_elements()) * width;
  if (r.remaining() != expect) {
    throw ProtocolError("payload size " + std::to_string(r.remaining()) + " does not match shape " +
                        shape.ToString() + " (" + std::to_string(expect) + " bytes)");
  }
  f.payload = Tensor(shape, dt);
  ReadElements(r.Take(expect), f.payload);
  return f;
}

}  // namespace replicator
