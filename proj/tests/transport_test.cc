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

#include "replicator/transport.h"

#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "cluster_util.h"
#include "replicator/tcp_transport.h"
#include "test_util.h"

namespace replicator {
namespace {

using namespace std::chrono_literals;
using testing::TestGroup;
using testing::TransportKind;

Tensor Vec(std::vector<double> v) {
  const auto n = static_cast<int64_t>(v.size());
  return Tensor::FromVector(std::move(v), Shape{n});
}

TEST(MeshTest, SingleTaskHasNoRemotePeers) {
  InProcessTransport t(LocalClusterSpec(1));
  EXPECT_TRUE(t.Connect(DeviceTag{"worker", 0, 0}).remote_peers().empty());
}

TEST(MeshTest, TwoWorkerSpecHasOneRemotePeer) {
  ClusterSpec spec({{"worker", PickFreeLocalAddresses(2)}});
  TcpTransport t(spec, DeviceTag{"worker", 0, 0});
  auto peers = t.Connect(DeviceTag{"worker", 0, 0}).remote_peers();
  ASSERT_EQ(peers.size(), 1u);
  EXPECT_EQ(peers[0], (DeviceTag{"worker", 1, 0}));
}

TEST(MeshTest, SelfMustBeInSpec) {
  InProcessTransport t(LocalClusterSpec(1));
  EXPECT_THROW(t.Connect(DeviceTag{"worker", 3, 0}), ConfigError);
  ClusterSpec spec({{"worker", PickFreeLocalAddresses(1)}});
  EXPECT_THROW(TcpTransport(spec, DeviceTag{"ps", 0, 0}), ConfigError);
}

TEST(TcpTransportTest, UnreachablePeerIsNamed) {
  ClusterSpec spec({{"worker", PickFreeLocalAddresses(2)}});
  TcpOptions options;
  options.connect_retries = 3;
  options.connect_backoff = 10ms;
  TcpTransport t(spec, DeviceTag{"worker", 0, 0}, options);
  Mesh mesh = t.Connect(DeviceTag{"worker", 0, 0});
  try {
    mesh.Send(DeviceTag{"worker", 1, 0}, "x", Vec({1}));
    FAIL() << "expected a connection error";
  } catch (const ConnectionError& e) {
    EXPECT_NE(std::string(e.what()).find("/job:worker/task:1"), std::string::npos) << e.what();
  }
}

TEST(TcpTransportTest, SilentPeerIsDeclaredDead) {
  TcpOptions options;
  options.heartbeat_interval = 50ms;
  options.heartbeat_misses = 3;
  TestGroup group(TransportKind::kTcp, 2, options);
  group.tcp(0)->ConnectAll();
  group.tcp(1)->ConnectAll();
  group.mesh(1).Send(group.members()[0], "hello", Vec({1}));
  EXPECT_TRUE(group.mesh(0).Recv(group.members()[1], "hello").BitEqual(Vec({1})));
  group.tcp(1)->SuspendHeartbeats();
  const auto start = Clock::now();
  EXPECT_THROW(group.mesh(0).Recv(group.members()[1], "never"), PeerDeadError);
  const auto waited = Clock::now() - start;
  EXPECT_LT(waited, 2 * group.tcp(0)->failure_detection_window() + 100ms);
}

TEST(TcpTransportTest, ShutdownIsSeenByPeer) {
  TestGroup group(TransportKind::kTcp, 2);
  group.mesh(1).Send(group.members()[0], "last", Vec({9}));
  group.tcp(1)->Shutdown();
  // Frames sent before the goodbye are still delivered.
  EXPECT_TRUE(group.mesh(0).Recv(group.members()[1], "last").BitEqual(Vec({9})));
  EXPECT_THROW(group.mesh(0).Recv(group.members()[1], "more"), PeerDeadError);
}

class TransportTest : public ::testing::TestWithParam<TransportKind> {};

TEST_P(TransportTest, RoundTripIsBitExact) {
  TestGroup group(GetParam(), 2);
  Tensor t = Vec({1, 2, 3});
  group.mesh(0).Send(group.members()[1], "t", t);
  EXPECT_TRUE(group.mesh(1).Recv(group.members()[0], "t").BitEqual(t));
  Tensor f = Tensor::FromVector(std::vector<float>{0.5f, -0.0f}, Shape{1, 2});
  group.mesh(1).Send(group.members()[0], "f", f);
  EXPECT_TRUE(group.mesh(0).Recv(group.members()[1], "f").BitEqual(f));
}

TEST_P(TransportTest, SelfSendIsDelivered) {
  TestGroup group(GetParam(), 1);
  group.mesh(0).Send(group.members()[0], "me", Vec({4}));
  EXPECT_EQ(group.mesh(0).Recv(group.members()[0], "me").at(0), 4);
}

TEST_P(TransportTest, SameLabelArrivesInSendOrder) {
  TestGroup group(GetParam(), 2);
  group.mesh(0).Send(group.members()[1], "q", Vec({1}));
  group.mesh(0).Send(group.members()[1], "q", Vec({2}));
  EXPECT_EQ(group.mesh(1).Recv(group.members()[0], "q").at(0), 1);
  EXPECT_EQ(group.mesh(1).Recv(group.members()[0], "q").at(0), 2);
}

TEST_P(TransportTest, LabelsAreMatchedNotArrivalOrder) {
  TestGroup group(GetParam(), 2);
  group.mesh(0).Send(group.members()[1], "a", Vec({1}));
  group.mesh(0).Send(group.members()[1], "b", Vec({2}));
  EXPECT_EQ(group.mesh(1).Recv(group.members()[0], "b").at(0), 2);
  EXPECT_EQ(group.mesh(1).Recv(group.members()[0], "a").at(0), 1);
}

TEST_P(TransportTest, StressSequenceIsStrictlyIncreasing) {
  TestGroup group(GetParam(), 3);
  constexpr int kMessages = 1000;
  std::mt19937_64 rng(17);
  std::vector<std::string> labels = {"x", "y", "z"};
  std::vector<int> choice(kMessages);
  for (auto& c : choice) c = static_cast<int>(rng() % labels.size());
  // Two senders interleave on the same labels towards rank 2.
  auto errors = testing::RunRanks(3, [&](int r) {
    if (r < 2) {
      for (int i = 0; i < kMessages; ++i) {
        group.mesh(r).Send(group.members()[2], labels[choice[i]], Tensor::Scalar(i));
      }
      return;
    }
    for (int src = 0; src < 2; ++src) {
      for (int l = 0; l < static_cast<int>(labels.size()); ++l) {
        const std::string& label = labels[l];
        int expected = 0;
        for (int i = 0; i < kMessages; ++i) expected += choice[i] == l;
        int64_t last_seq = -1;
        double last_value = -1;
        for (int i = 0; i < expected; ++i) {
          Envelope env = group.mesh(2).RecvEnvelope(group.members()[src], label, {.timeout = 10s});
          if (static_cast<int64_t>(env.seq) <= last_seq || env.payload.at(0) <= last_value) {
            throw std::runtime_error("out of order on " + label);
          }
          last_seq = static_cast<int64_t>(env.seq);
          last_value = env.payload.at(0);
        }
      }
    }
  });
  for (auto& e : errors) EXPECT_EQ(testing::ErrorText(e), "");
}

TEST_P(TransportTest, SendToDeadPeerFailsAndSenderContinues) {
  TestGroup group(GetParam(), 3);
  group.mesh(0).Send(group.members()[2], "warm", Vec({0}));
  group.mesh(0).Send(group.members()[1], "warm", Vec({0}));
  group.mesh(1).Recv(group.members()[0], "warm");
  group.Kill(2);
  // TCP learns of the death asynchronously.
  bool failed = false;
  for (int i = 0; i < 200 && !failed; ++i) {
    try {
      group.mesh(0).Send(group.members()[2], "x", Vec({1}));
      std::this_thread::sleep_for(10ms);
    } catch (const TransportError&) {
      failed = true;
    }
  }
  EXPECT_TRUE(failed);
  group.mesh(0).Send(group.members()[1], "still", Vec({7}));
  EXPECT_EQ(group.mesh(1).Recv(group.members()[0], "still").at(0), 7);
}

TEST_P(TransportTest, BlockedRecvFailsWhenSourceDies) {
  TestGroup group(GetParam(), 2);
  group.mesh(1).Send(group.members()[0], "warm", Vec({0}));
  group.mesh(0).Recv(group.members()[1], "warm");
  std::thread killer([&] {
    std::this_thread::sleep_for(50ms);
    group.Kill(1);
  });
  EXPECT_THROW(group.mesh(0).Recv(group.members()[1], "never", {.timeout = 10s}), PeerDeadError);
  killer.join();
}

TEST_P(TransportTest, RecvTimesOut) {
  TestGroup group(GetParam(), 2);
  const auto start = Clock::now();
  EXPECT_THROW(group.mesh(0).Recv(group.members()[1], "none", {.timeout = 50ms}), TimeoutError);
  EXPECT_GE(Clock::now() - start, 50ms);
}

TEST_P(TransportTest, ServiceRequestsShareOneQueue) {
  TestGroup group(GetParam(), 3);
  group.mesh(1).Send(group.members()[0], "w", Vec({1}), MessageType::kPush);
  group.mesh(2).Send(group.members()[0], "w", Vec({2}), MessageType::kPullRequest);
  std::set<double> seen;
  for (int i = 0; i < 2; ++i) {
    Envelope env = group.mesh(0).RecvService({.timeout = 10s});
    seen.insert(env.payload.at(0));
    EXPECT_EQ(env.dst, group.members()[0]);
    EXPECT_EQ(env.src, env.payload.at(0) == 1 ? group.members()[1] : group.members()[2]);
  }
  EXPECT_EQ(seen, (std::set<double>{1, 2}));
}

INSTANTIATE_TEST_SUITE_P(Both, TransportTest,
                         ::testing::Values(TransportKind::kInProcess, TransportKind::kTcp),
                         [](const auto& info) { return testing::TransportName(info.param); });

}  // namespace
}  // namespace replicator
