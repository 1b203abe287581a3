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

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fedwq/aggregation.hpp"
#include "fedwq/calibration.hpp"
#include "fedwq/error.hpp"
#include "fedwq/federation/simulator.hpp"
#include "fedwq/federation/socket.hpp"
#include "fedwq/federation/wire.hpp"

namespace fedwq {

// Server side of one networked calibration round. The listening socket is
// bound in the constructor so port() is valid before run() starts.
//
// run() accepts connections until agent_count contributions have arrived,
// aggregates exactly once, answers every contributing connection with the
// threshold and returns. A timeout or an agent that disconnects before
// contributing aborts the whole round: nothing partial is ever broadcast.
class CalibrationServer {
 public:
  CalibrationServer(const net::Endpoint& bind, wire::CalibrationRoundConfig cfg,
                    bool capture_payloads = false)
      : cfg_(std::move(cfg)), listener_(net::listen_tcp(bind)), audit_(capture_payloads) {
    cfg_.validate();
  }

  std::uint16_t port() const { return net::local_port(listener_); }
  const wire::CalibrationRoundConfig& config() const noexcept { return cfg_; }

  RoundResult run() {
    deadline_ = net::Clock::now() + cfg_.timeout;
    std::vector<std::thread> handlers;
    while (true) {
      {
        std::lock_guard lock(mu_);
        if (finished_ || aborted_) break;
      }
      if (net::Clock::now() >= deadline_) {
        abort("timeout: " + std::to_string(contributions()) + " of " +
              std::to_string(cfg_.agent_count) + " contributions before deadline");
        break;
      }
      const auto slice = std::min(deadline_, net::Clock::now() + std::chrono::milliseconds(50));
      if (auto conn = net::accept_until(listener_, slice)) {
        handlers.emplace_back([this, c = std::move(*conn)]() mutable { handle(std::move(c)); });
      }
    }
    for (auto& t : handlers) t.join();
    listener_.close();
    std::lock_guard lock(mu_);
    if (aborted_) throw RoundAbortedError(abort_reason_);
    return RoundResult{*result_, audit_};
  }

 private:
  struct Contribution {
    std::optional<LocalQuantileSummary> summary;
    std::vector<double> scores;
    std::int64_t chunks_seen = 0;
  };

  std::size_t contributions() {
    std::lock_guard lock(mu_);
    return complete_.size();
  }

  void abort(const std::string& reason) {
    {
      std::lock_guard lock(mu_);
      if (finished_ || aborted_) return;
      aborted_ = true;
      abort_reason_ = reason;
    }
    cv_.notify_all();
  }

  bool stopped() {
    std::lock_guard lock(mu_);
    return aborted_;
  }

  void send(const net::Socket& sock, const wire::Message& msg, AgentId agent) {
    const auto line = wire::encode(msg);
    audit_.record("down", line, msg, agent, is_one_shot(cfg_.method));
    net::write_all(sock, line, net::Clock::now() + std::chrono::seconds(5));
  }

  void reply_error(const net::Socket& sock, const Error& e, AgentId agent) {
    try {
      send(sock, wire::ErrorMessage{cfg_.round_id, e.code(), e.what()}, agent);
    } catch (const TransportError&) {
    }
  }

  // Registers a finished contribution; aggregates when it is the last one.
  void register_contribution(AgentId agent, Contribution c) {
    std::unique_lock lock(mu_);
    if (aborted_) throw RoundAbortedError(abort_reason_);
    if (finished_) throw ProtocolError("round " + cfg_.round_id + " already closed");
    if (complete_.count(agent)) {
      throw ProtocolError("duplicate contribution from agent " + std::to_string(agent));
    }
    complete_.emplace(agent, std::move(c));
    if (static_cast<std::int64_t>(complete_.size()) < cfg_.agent_count) return;

    std::call_once(aggregate_once_, [&] {
      AggregationInput input;
      for (auto& [id, contrib] : complete_) {
        if (contrib.summary) input.summaries.push_back(*contrib.summary);
        else input.samples.emplace_back(std::move(contrib.scores));
      }
      try {
        result_ = aggregate(input, cfg_.method, CalibrationConfig{cfg_.alpha});
        finished_ = true;
      } catch (const Error& e) {
        aborted_ = true;
        abort_reason_ = std::string("aggregation failed: ") + e.what();
      }
    });
    lock.unlock();
    cv_.notify_all();
  }

  void handle(net::Socket sock) {
    const bool one_shot = is_one_shot(cfg_.method);
    AgentId agent = -1;
    try {
      send(sock, wire::HelloMessage{cfg_.round_id, cfg_.alpha, cfg_.method, cfg_.agent_count},
           agent);
    } catch (const TransportError&) {
      abort("agent connection lost before contributing");
      return;
    }

    net::LineReader reader(sock);
    Contribution contrib;
    bool done = false;
    while (!done) {
      std::optional<std::string> line;
      try {
        line = reader.read_line(deadline_, [this] { return stopped(); });
      } catch (const TransportError&) {
        if (!stopped()) abort("timeout waiting for agent contribution");
        reply_error(sock, RoundAbortedError(abort_reason()), agent);
        return;
      }
      if (!line) {
        abort("agent " + std::to_string(agent) + " disconnected before contributing");
        return;
      }
      try {
        auto msg = wire::decode(*line);
        if (auto* s = std::get_if<wire::SummaryMessage>(&msg)) {
          agent = s->agent_id;
          audit_.record("up", *line, msg, agent, true);
          check_round(s->round_id);
          if (!one_shot) throw ProtocolError("pooled_scores round expects score chunks");
          LocalQuantileSummary summary{s->agent_id, s->q, s->n};
          summary.validate();
          contrib.summary = summary;
          done = true;
        } else if (auto* c = std::get_if<wire::ScoresMessage>(&msg)) {
          agent = c->agent_id;
          audit_.record("up", *line, msg, agent, false);
          check_round(c->round_id);
          if (one_shot) throw ProtocolError("one-shot round expects a summary, got scores");
          if (c->chunk != contrib.chunks_seen || c->of < 1 || c->chunk >= c->of) {
            throw ProtocolError("score chunks out of order");
          }
          contrib.scores.insert(contrib.scores.end(), c->values.begin(), c->values.end());
          ++contrib.chunks_seen;
          done = contrib.chunks_seen == c->of;
          if (done) ScoreSample{contrib.scores}.validate();
        } else {
          audit_.record("up", *line, msg, agent, one_shot);
          throw ProtocolError("unexpected message type " + std::string(wire::type_name(msg)));
        }
      } catch (const ParseError& e) {
        reply_error(sock, e, agent);
        return;
      } catch (const Error& e) {
        reply_error(sock, e, agent);
        return;
      }
    }

    try {
      register_contribution(agent, std::move(contrib));
    } catch (const Error& e) {
      reply_error(sock, e, agent);
      return;
    }

    std::unique_lock lock(mu_);
    const bool settled = cv_.wait_until(lock, deadline_, [this] { return finished_ || aborted_; });
    if (!settled) {
      aborted_ = true;
      abort_reason_ = "timeout waiting for the remaining agents";
    }
    const bool ok = finished_ && !aborted_;
    const double q = ok ? result_->threshold_for(agent) : 0.0;
    const auto reason = abort_reason_;
    lock.unlock();
    cv_.notify_all();
    try {
      if (ok) send(sock, wire::ThresholdMessage{cfg_.round_id, cfg_.method, q}, agent);
      else reply_error(sock, RoundAbortedError(reason), agent);
    } catch (const TransportError&) {
    }
  }

  void check_round(const std::string& round_id) const {
    if (round_id != cfg_.round_id) {
      throw ProtocolError("round_id '" + round_id + "' does not match '" + cfg_.round_id + "'");
    }
  }

  std::string abort_reason() {
    std::lock_guard lock(mu_);
    return abort_reason_;
  }

  wire::CalibrationRoundConfig cfg_;
  net::Socket listener_;
  wire::AuditLog audit_;
  net::Clock::time_point deadline_{};

  std::mutex mu_;
  std::condition_variable cv_;
  std::map<AgentId, Contribution> complete_;
  std::once_flag aggregate_once_;
  bool finished_ = false;
  bool aborted_ = false;
  std::string abort_reason_;
  std::optional<AggregatedThreshold> result_;
};

// A CalibrationServer running on a background thread.
class ServerHandle {
 public:
  ServerHandle(const net::Endpoint& bind, wire::CalibrationRoundConfig cfg, bool capture)
      : server_(std::make_unique<CalibrationServer>(bind, std::move(cfg), capture)) {
    port_ = server_->port();
    std::packaged_task<RoundResult()> task([s = server_.get()] { return s->run(); });
    result_ = task.get_future();
    thread_ = std::thread(std::move(task));
  }
  ServerHandle(ServerHandle&&) = default;
  ServerHandle& operator=(ServerHandle&&) = default;
  ~ServerHandle() {
    if (thread_.joinable()) thread_.join();
  }

  std::uint16_t port() const noexcept { return port_; }
  net::Endpoint endpoint() const { return {"127.0.0.1", port_}; }

  // Blocks until the round ends; rethrows RoundAbortedError and friends.
  RoundResult wait() {
    if (thread_.joinable()) thread_.join();
    return result_.get();
  }

 private:
  std::unique_ptr<CalibrationServer> server_;
  std::uint16_t port_ = 0;
  std::future<RoundResult> result_;
  std::thread thread_;
};

inline ServerHandle serve(const net::Endpoint& bind, const wire::CalibrationRoundConfig& cfg,
                          bool capture_payloads = false) {
  return ServerHandle(bind, cfg, capture_payloads);
}

inline constexpr std::chrono::seconds kAgentReplyGrace{2};

struct AgentResult {
  wire::ThresholdMessage threshold;
  wire::AuditLog audit{true};
};

namespace detail {

inline wire::Message read_message(net::LineReader& reader, net::Clock::time_point deadline) {
  const auto line = reader.read_line(deadline);
  if (!line) throw TransportError("server closed the connection");
  return wire::decode(*line);
}

// Connects, checks the server's hello against the agent's round config and
// hands the socket to `contribute`, then waits for the broadcast.
template <typename Contribute>
AgentResult agent_session(const net::Endpoint& server, const wire::CalibrationRoundConfig& cfg,
                          AgentId agent_id, Contribute contribute) {
  const auto deadline = net::Clock::now() + cfg.timeout;
  auto sock = net::connect_tcp(server, cfg.timeout);
  net::LineReader reader(sock);
  AgentResult out;

  auto hello_msg = read_message(reader, deadline);
  if (auto* e = std::get_if<wire::ErrorMessage>(&hello_msg)) wire::throw_remote_error(*e);
  const auto* hello = std::get_if<wire::HelloMessage>(&hello_msg);
  if (!hello) throw ProtocolError("expected hello from server");
  if (hello->round_id != cfg.round_id) {
    throw ProtocolError("server runs round '" + hello->round_id + "', agent expects '" +
                        cfg.round_id + "'");
  }
  if (hello->alpha != cfg.alpha) {
    throw ProtocolError("server alpha " + wire::hex_double(hello->alpha) +
                        " differs from agent alpha " + wire::hex_double(cfg.alpha));
  }
  if (hello->method != cfg.method) {
    throw ProtocolError("server method " + std::string(to_string(hello->method)) +
                        " differs from agent method " + std::string(to_string(cfg.method)));
  }

  for (const auto& msg : contribute()) {
    const auto line = wire::encode(msg);
    out.audit.record("up", line, msg, agent_id, is_one_shot(cfg.method));
    net::write_all(sock, line, deadline);
  }

  // The server decides the round's fate at its own deadline; allow time for
  // that verdict to arrive.
  auto reply = read_message(reader, deadline + kAgentReplyGrace);
  out.audit.record("down", wire::encode(reply), reply, agent_id, is_one_shot(cfg.method));
  if (auto* e = std::get_if<wire::ErrorMessage>(&reply)) wire::throw_remote_error(*e);
  const auto* threshold = std::get_if<wire::ThresholdMessage>(&reply);
  if (!threshold) throw ProtocolError("expected threshold from server");
  if (threshold->round_id != cfg.round_id) throw ProtocolError("threshold for a different round");
  out.threshold = *threshold;
  return out;
}

}  // namespace detail

// Sends a prepared summary verbatim (no local validation).
inline AgentResult send_summary(const net::Endpoint& server, const LocalQuantileSummary& summary,
                                const wire::CalibrationRoundConfig& cfg) {
  return detail::agent_session(server, cfg, summary.agent_id, [&] {
    return std::vector<wire::Message>{
        wire::SummaryMessage{cfg.round_id, summary.agent_id, summary.q, summary.n}};
  });
}

// Networked agent: calibrate locally, send one summary
// (or the raw score chunks for pooled_scores), block for the threshold.
inline AgentResult run_agent(const net::Endpoint& server, AgentId agent_id,
                             const ScoreSample& sample, const wire::CalibrationRoundConfig& cfg) {
  cfg.validate();
  sample.validate();
  if (!is_one_shot(cfg.method)) {
    return detail::agent_session(server, cfg, agent_id, [&] {
      std::vector<wire::Message> msgs;
      for (auto& c : detail::chunk_scores(cfg.round_id, agent_id, sample)) msgs.push_back(c);
      return msgs;
    });
  }
  const auto local = local_threshold(sample, CalibrationConfig{cfg.alpha}, agent_id);
  return send_summary(server, local, cfg);
}

// Networked counterpart of run_round_simulated: a loopback server plus one
// thread per agent, launched in agent order.
inline RoundResult run_round_loopback(const std::vector<AgentScores>& agents,
                                      const wire::CalibrationRoundConfig& cfg,
                                      bool capture_payloads = false) {
  auto server = serve(net::Endpoint{"127.0.0.1", 0}, cfg, capture_payloads);
  std::vector<std::future<AgentResult>> results;
  for (const auto& a : agents) {
    results.push_back(std::async(std::launch::async, [&, ep = server.endpoint()] {
      return run_agent(ep, a.agent_id, a.sample, cfg);
    }));
  }
  std::exception_ptr agent_error;
  for (auto& r : results) {
    try {
      r.get();
    } catch (...) {
      if (!agent_error) agent_error = std::current_exception();
    }
  }
  auto out = server.wait();
  if (agent_error) std::rethrow_exception(agent_error);
  return out;
}

}  // namespace fedwq
