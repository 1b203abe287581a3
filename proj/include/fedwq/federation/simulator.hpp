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

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "fedwq/aggregation.hpp"
#include "fedwq/calibration.hpp"
#include "fedwq/error.hpp"
#include "fedwq/federation/wire.hpp"

namespace fedwq {

// Score vectors larger than this travel as several "scores" lines.
inline constexpr std::size_t kScoresChunkSize = 4096;

struct AgentScores {
  AgentId agent_id = 0;
  ScoreSample sample;
};

struct RoundResult {
  AggregatedThreshold threshold;
  wire::AuditLog audit;
};

namespace detail {

inline std::vector<wire::ScoresMessage> chunk_scores(const std::string& round_id, AgentId agent,
                                                     const ScoreSample& sample) {
  const auto& v = sample.vector();
  const std::size_t chunks = std::max<std::size_t>(1, (v.size() + kScoresChunkSize - 1) /
                                                          kScoresChunkSize);
  std::vector<wire::ScoresMessage> out;
  for (std::size_t c = 0; c < chunks; ++c) {
    wire::ScoresMessage m;
    m.round_id = round_id;
    m.agent_id = agent;
    m.chunk = static_cast<std::int64_t>(c);
    m.of = static_cast<std::int64_t>(chunks);
    const auto begin = std::min(v.size(), c * kScoresChunkSize);
    const auto end = std::min(v.size(), begin + kScoresChunkSize);
    m.values.assign(v.begin() + static_cast<std::ptrdiff_t>(begin),
                    v.begin() + static_cast<std::ptrdiff_t>(end));
    out.push_back(std::move(m));
  }
  return out;
}

template <typename T>
T decode_as(const std::string& line) {
  auto msg = wire::decode(line);
  if (auto* e = std::get_if<wire::ErrorMessage>(&msg)) wire::throw_remote_error(*e);
  auto* typed = std::get_if<T>(&msg);
  if (!typed) throw ProtocolError("unexpected message type " + std::string(wire::type_name(msg)));
  return *typed;
}

}  // namespace detail

// In-process run of the one-shot round. Every message is encoded to its wire
// line and decoded again, so the result is bit-identical to a networked round
// on the same inputs.
inline RoundResult run_round_simulated(const std::vector<AgentScores>& agents,
                                       const wire::CalibrationRoundConfig& cfg) {
  cfg.validate();
  if (agents.empty()) throw ValidationError("run_round_simulated: no agents");
  if (static_cast<std::int64_t>(agents.size()) != cfg.agent_count) {
    throw ValidationError("run_round_simulated: " + std::to_string(agents.size()) +
                          " agents but round expects " + std::to_string(cfg.agent_count));
  }
  const CalibrationConfig calib{cfg.alpha};
  const bool one_shot = is_one_shot(cfg.method);
  RoundResult out;
  out.audit.use_logical_clock();

  // Agent side: local calibration, one upstream message each.
  AggregationInput server_input;
  for (const auto& a : agents) {
    if (one_shot) {
      const auto local = local_threshold(a.sample, calib, a.agent_id);
      const auto line = wire::encode(wire::SummaryMessage{cfg.round_id, a.agent_id, local.q,
                                                          local.n});
      const auto received = detail::decode_as<wire::SummaryMessage>(line);
      out.audit.record("up", line, received, a.agent_id, true);
      LocalQuantileSummary s{received.agent_id, received.q, received.n};
      s.validate();
      server_input.summaries.push_back(s);
    } else {
      a.sample.validate();
      std::vector<double> values;
      for (const auto& chunk : detail::chunk_scores(cfg.round_id, a.agent_id, a.sample)) {
        const auto line = wire::encode(chunk);
        const auto received = detail::decode_as<wire::ScoresMessage>(line);
        out.audit.record("up", line, received, a.agent_id, false);
        values.insert(values.end(), received.values.begin(), received.values.end());
      }
      server_input.samples.emplace_back(std::move(values));
    }
  }

  // Server side: one aggregation, one broadcast line per agent.
  out.threshold = aggregate(server_input, cfg.method, calib);
  for (const auto& a : agents) {
    const auto line = wire::encode(wire::ThresholdMessage{
        cfg.round_id, cfg.method, out.threshold.threshold_for(a.agent_id)});
    const auto received = detail::decode_as<wire::ThresholdMessage>(line);
    out.audit.record("down", line, received, a.agent_id, one_shot);
  }
  return out;
}

// Convenience overload: agent ids are the positions 0..M-1.
inline RoundResult run_round_simulated(const std::vector<ScoreSample>& samples,
                                       const wire::CalibrationRoundConfig& cfg) {
  std::vector<AgentScores> agents;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    agents.push_back({static_cast<AgentId>(k), samples[k]});
  }
  return run_round_simulated(agents, cfg);
}

}  // namespace fedwq
