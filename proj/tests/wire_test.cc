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

#include <gtest/gtest.h>

#include <random>

#include "replicator/errors.h"
#include "test_util.h"

namespace replicator {
namespace {

std::string Hex(const std::string& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned char c : bytes) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 15]);
  }
  return out;
}

TEST(WireTest, KnownEncoding) {
  Frame f;
  f.type = MessageType::kData;
  f.label = "ab";
  f.seq = 258;
  f.payload = Tensor::FromVector(std::vector<float>{1.0f}, Shape{1});
  // body: type(1) + len(2) + "ab"(2) + seq(8) + dtype(1) + rank(1) + dim(8) + data(4) = 27
  EXPECT_EQ(Hex(EncodeFrame(f)),
            "1b000000"            // length
            "01"                  // DATA
            "0200" "6162"         // label
            "0201000000000000"    // seq
            "00"                  // f32
            "01"                  // rank
            "0100000000000000"    // dim
            "0000803f");          // 1.0f
}

TEST(WireTest, ScalarAndEmptyPayloads) {
  Frame f;
  f.type = MessageType::kHeartbeat;
  f.payload = EmptyPayload();
  std::string bytes = EncodeFrame(f);
  Frame g = DecodeFrame(std::string_view(bytes).substr(kLengthPrefixBytes));
  EXPECT_EQ(g.type, MessageType::kHeartbeat);
  EXPECT_EQ(g.payload.shape(), (Shape{0}));

  f.payload = Tensor::Scalar(-3.5);
  bytes = EncodeFrame(f);
  EXPECT_EQ(DecodeLength(bytes), bytes.size() - kLengthPrefixBytes);
  g = DecodeFrame(std::string_view(bytes).substr(kLengthPrefixBytes));
  EXPECT_TRUE(g.payload.BitEqual(f.payload));
}

TEST(WireTest, RandomRoundTripsAreBitExact) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<uint64_t> seq;
  for (int i = 0; i < 500; ++i) {
    const DType dt = i % 2 ? DType::kF32 : DType::kF64;
    Frame f;
    f.type = static_cast<MessageType>(i % 3 == 0 ? 0x10 : 0x01);
    f.label = "label/" + std::to_string(i);
    f.seq = seq(rng);
    f.payload = testing::RandomTensor(rng, testing::RandomShape(rng, 4, 2000), -1e6, 1e6, dt);
    const std::string bytes = EncodeFrame(f);
    const Frame g = DecodeFrame(std::string_view(bytes).substr(kLengthPrefixBytes));
    EXPECT_EQ(g.type, f.type);
    EXPECT_EQ(g.label, f.label);
    EXPECT_EQ(g.seq, f.seq);
    ASSERT_TRUE(g.payload.BitEqual(f.payload)) << f.payload.shape().ToString();
  }
}

TEST(WireTest, SpecialValuesSurvive) {
  Frame f;
  f.payload = Tensor::FromVector(
      std::vector<double>{-0.0, 5e-324, 1.7976931348623157e308, std::nan("")}, Shape{2, 2});
  const std::string bytes = EncodeFrame(f);
  const Frame g = DecodeFrame(std::string_view(bytes).substr(kLengthPrefixBytes));
  EXPECT_TRUE(g.payload.BitEqual(f.payload));
}

TEST(WireTest, MalformedFramesAreRejected) {
  Frame f;
  f.label = "x";
  f.payload = Tensor::Filled(Shape{3}, 1.0);
  const std::string body = EncodeFrame(f).substr(kLengthPrefixBytes);
  EXPECT_THROW(DecodeFrame(body.substr(0, body.size() - 1)), ProtocolError);
  EXPECT_THROW(DecodeFrame(body + "z"), ProtocolError);
  std::string bad_type = body;
  bad_type[0] = 0x7f;
  EXPECT_THROW(DecodeFrame(bad_type), ProtocolError);
  std::string bad_dtype = body;
  bad_dtype[1 + 2 + 1 + 8] = 9;
  EXPECT_THROW(DecodeFrame(bad_dtype), ProtocolError);
  EXPECT_THROW(DecodeFrame(""), ProtocolError);
}

}  // namespace
}  // namespace replicator
