/*
 * Copyright 2026 The FedWQ Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <chrono>
#include <future>
#include <thread>

#include "fedwq/federation/network.hpp"
#include "fedwq/federation/simulator.hpp"
#include "support/federation_checks.hpp"
#include "support/oracles.hpp"

using fedwq::AggregationMethod;
using fedwq::ScoreSample;
using fedwq::wire::CalibrationRoundConfig;

namespace {

CalibrationRoundConfig round_config(std::int64_t m, AggregationMethod method = AggregationMethod::WeightedAverage,
                                    std::chrono::milliseconds timeout = std::chrono::seconds(10)) {
  CalibrationRoundConfig c;
  c.alpha = 0.05;
  c.method = method;
  c.agent_count = m;
  c.round_id = "test-round";
  c.timeout = timeout;
  return c;
}

std::uint16_t closed_port() {
  auto s = fedwq::net::listen_tcp({"127.0.0.1", 0});
  const auto port = fedwq::net::local_port(s);
  s.close();
  return port;
}

}  // namespace

TEST(Simulated, EngineeredTwoAgentRound) {
  const auto a = fedcheck::sample_with_threshold(0.5, 100, 0.05);
  const auto b = fedcheck::sample_with_threshold(0.9, 300, 0.05);
  EXPECT_EQ(fedwq::local_threshold(a, {0.05}).q, 0.5);
  EXPECT_EQ(fedwq::local_threshold(b, {0.05}).q, 0.9);
  const auto r = fedwq::run_round_simulated(std::vector<ScoreSample>{a, b}, round_config(2));
  EXPECT_DOUBLE_EQ(r.threshold.q_hat, 0.8);
  EXPECT_EQ(r.threshold.total_n, 400);
  EXPECT_EQ(r.audit.count("up", 0), 1u);
  EXPECT_EQ(r.audit.count("down", 0), 1u);
  EXPECT_EQ(r.audit.count("up", 1), 1u);
  EXPECT_EQ(r.audit.count("down", 1), 1u);
}

TEST(Simulated, SingleAgentIsLocalThreshold) {
  const auto agents = fedcheck::canary_agents(1, 1);
  const auto r = fedwq::run_round_simulated(agents, round_config(1));
  EXPECT_EQ(r.threshold.q_hat, fedwq::local_threshold(agents[0].sample, {0.05}).q);
}

TEST(Simulated, PooledScoresMatchesOracleAndIsFlagged) {
  const auto agents = fedcheck::canary_agents(2, 3);
  const auto r = fedwq::run_round_simulated(agents, round_config(3, AggregationMethod::PooledScores));
  std::vector<double> pooled;
  for (const auto& a : agents) pooled.insert(pooled.end(), a.sample.vector().begin(), a.sample.vector().end());
  EXPECT_EQ(r.threshold.q_hat, oracle::sorted_quantile(pooled, 5, 100));
  for (const auto& rec : r.audit.records()) EXPECT_FALSE(rec.one_shot);
  const auto one_shot = fedwq::run_round_simulated(agents, round_config(3));
  for (const auto& rec : one_shot.audit.records()) EXPECT_TRUE(rec.one_shot);
}

TEST(Simulated, LargePooledSampleIsChunked) {
  std::vector<double> v(fedwq::kScoresChunkSize * 2 + 5);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const auto r = fedwq::run_round_simulated(std::vector<ScoreSample>{ScoreSample(v)},
                                            round_config(1, AggregationMethod::PooledScores));
  EXPECT_EQ(r.audit.count("up", 0), 3u);
  EXPECT_EQ(r.threshold.q_hat, fedwq::local_threshold(ScoreSample(v), {0.05}).q);
}

TEST(Simulated, Errors) {
  EXPECT_THROW(fedwq::run_round_simulated(std::vector<ScoreSample>{}, round_config(1)), fedwq::ValidationError);
  const auto agents = fedcheck::canary_agents(3, 2);
  EXPECT_THROW(fedwq::run_round_simulated(agents, round_config(3)), fedwq::ValidationError);
  auto dup = agents;
  dup[1].agent_id = 0;
  EXPECT_THROW(fedwq::run_round_simulated(dup, round_config(2)), fedwq::ProtocolError);
}

TEST(Loopback, BitExactWithSimulatorForEveryMethod) {
  for (auto method : fedwq::kAllMethods) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto agents = fedcheck::canary_agents(seed, 3);
      const auto cfg = round_config(3, method);
      const auto sim = fedwq::run_round_simulated(agents, cfg);
      const auto net = fedwq::run_round_loopback(agents, cfg);
      EXPECT_TRUE(fedcheck::thresholds_identical(sim.threshold, net.threshold)) << fedwq::to_string(method);
    }
  }
}

TEST(Loopback, OneShotPayloadAndCanaryScan) {
  std::vector<double> canaries;
  const auto agents = fedcheck::canary_agents(7, 3, &canaries);
  const auto net = fedwq::run_round_loopback(agents, round_config(3), true);
  const auto audit = fedcheck::audit_upstream(net.audit.records(), 3, canaries);
  EXPECT_TRUE(audit.ok()) << (audit.problems.empty() ? "" : audit.problems.front());
  EXPECT_EQ(audit.upstream_messages, 3u);

  // The scan itself must see a canary when raw scores do travel.
  const auto pooled = fedwq::run_round_loopback(agents, round_config(3, AggregationMethod::PooledScores), true);
  EXPECT_FALSE(fedcheck::audit_upstream(pooled.audit.records(), 3, canaries).ok());
}

TEST(Network, ZeroCountSummaryRejected) {
  auto server = fedwq::serve({"127.0.0.1", 0}, round_config(1, AggregationMethod::WeightedAverage,
                                                            std::chrono::milliseconds(500)));
  EXPECT_THROW(fedwq::send_summary(server.endpoint(), {0, 0.5, 0}, round_config(1)), fedwq::ValidationError);
  EXPECT_THROW(server.wait(), fedwq::RoundAbortedError);
}

TEST(Network, DuplicateAgentIsProtocolError) {
  const auto cfg = round_config(2, AggregationMethod::WeightedAverage, std::chrono::milliseconds(1500));
  auto server = fedwq::serve({"127.0.0.1", 0}, cfg);
  auto first = std::async(std::launch::async, [&] { return fedwq::send_summary(server.endpoint(), {0, 0.5, 10}, cfg); });
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  EXPECT_THROW(fedwq::send_summary(server.endpoint(), {0, 0.6, 10}, cfg), fedwq::ProtocolError);
  EXPECT_THROW(first.get(), fedwq::RoundAbortedError);
  EXPECT_THROW(server.wait(), fedwq::RoundAbortedError);
}

TEST(Network, AlphaMismatchRejectedByAgent) {
  auto server = fedwq::serve({"127.0.0.1", 0}, round_config(1, AggregationMethod::WeightedAverage,
                                                            std::chrono::seconds(2)));
  auto cfg = round_config(1);
  cfg.alpha = 0.1;
  EXPECT_THROW(fedwq::run_agent(server.endpoint(), 0, ScoreSample({1, 2, 3}), cfg), fedwq::ProtocolError);
  EXPECT_THROW(server.wait(), fedwq::RoundAbortedError);
}

TEST(Network, RoundIdMismatchRejected) {
  auto server = fedwq::serve({"127.0.0.1", 0}, round_config(1, AggregationMethod::WeightedAverage,
                                                            std::chrono::seconds(2)));
  auto cfg = round_config(1);
  cfg.round_id = "other";
  EXPECT_THROW(fedwq::run_agent(server.endpoint(), 0, ScoreSample({1, 2, 3}), cfg), fedwq::ProtocolError);
  EXPECT_THROW(server.wait(), fedwq::RoundAbortedError);
}

TEST(Network, ClosedPortIsTransportError) {
  const fedwq::net::Endpoint ep{"127.0.0.1", closed_port()};
  EXPECT_THROW(fedwq::run_agent(ep, 0, ScoreSample({1, 2, 3}), round_config(1)), fedwq::TransportError);
}

TEST(Network, TimeoutAbortsWithoutBroadcast) {
  const auto cfg = round_config(2, AggregationMethod::WeightedAverage, std::chrono::milliseconds(400));
  auto server = fedwq::serve({"127.0.0.1", 0}, cfg);
  const auto start = std::chrono::steady_clock::now();
  EXPECT_THROW(fedwq::send_summary(server.endpoint(), {0, 0.5, 10}, cfg), fedwq::RoundAbortedError);
  EXPECT_THROW(server.wait(), fedwq::RoundAbortedError);
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(5));
}

TEST(Network, DisconnectBeforeContributingAbortsRound) {
  const auto cfg = round_config(2, AggregationMethod::WeightedAverage, std::chrono::seconds(5));
  auto server = fedwq::serve({"127.0.0.1", 0}, cfg);
  auto honest = std::async(std::launch::async, [&] { return fedwq::send_summary(server.endpoint(), {0, 0.5, 10}, cfg); });
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  {
    auto sock = fedwq::net::connect_tcp(server.endpoint(), std::chrono::seconds(2));
    fedwq::net::LineReader reader(sock);
    ASSERT_TRUE(reader.read_line(fedwq::net::Clock::now() + std::chrono::seconds(2)).has_value());
  }
  EXPECT_THROW(honest.get(), fedwq::RoundAbortedError);
  EXPECT_THROW(server.wait(), fedwq::RoundAbortedError);
}

TEST(Network, MalformedLineGetsParseErrorReply) {
  const auto cfg = round_config(1, AggregationMethod::WeightedAverage, std::chrono::seconds(2));
  auto server = fedwq::serve({"127.0.0.1", 0}, cfg);
  auto sock = fedwq::net::connect_tcp(server.endpoint(), std::chrono::seconds(2));
  fedwq::net::LineReader reader(sock);
  const auto deadline = fedwq::net::Clock::now() + std::chrono::seconds(2);
  ASSERT_TRUE(reader.read_line(deadline));
  fedwq::net::write_all(sock, "{garbage\n", deadline);
  const auto reply = reader.read_line(deadline);
  ASSERT_TRUE(reply);
  const auto msg = fedwq::wire::decode(*reply);
  ASSERT_TRUE(std::holds_alternative<fedwq::wire::ErrorMessage>(msg));
  EXPECT_EQ(std::get<fedwq::wire::ErrorMessage>(msg).code, "parse");
  sock.close();
  EXPECT_THROW(server.wait(), fedwq::RoundAbortedError);
}

TEST(EndpointTest, ParseAndEnvironment) {
  const auto ep = fedwq::net::Endpoint::parse("10.0.0.1:9000");
  EXPECT_EQ(ep.host, "10.0.0.1");
  EXPECT_EQ(ep.port, 9000);
  EXPECT_THROW(fedwq::net::Endpoint::parse("nohost"), fedwq::ValidationError);
  EXPECT_THROW(fedwq::net::Endpoint::parse("h:99999"), fedwq::ValidationError);
  EXPECT_EQ(fedwq::net::resolve_bind(std::string("1.2.3.4:5")).port, 5);
}
