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

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedwq/aggregation.hpp"
#include "fedwq/calibration.hpp"
#include "fedwq/error.hpp"

// Newline-delimited JSON messages exchanged in one calibration round. Reals
// travel twice: a shortest round-trip decimal for humans and a hex-float
// string that the decoder treats as authoritative. The unbounded threshold
// is the string "inf" in both fields.
namespace fedwq::wire {

using Json = nlohmann::ordered_json;

struct CalibrationRoundConfig {
  double alpha = 0.05;
  AggregationMethod method = AggregationMethod::WeightedAverage;
  std::int64_t agent_count = 1;
  std::string round_id = "round-0";
  std::chrono::milliseconds timeout{30'000};

  void validate() const {
    CalibrationConfig{alpha}.validate();
    if (agent_count < 1) throw ValidationError("round config: agent_count must be >= 1");
    if (round_id.empty()) throw ValidationError("round config: round_id must be non-empty");
    if (timeout.count() <= 0) throw ValidationError("round config: timeout must be positive");
  }
};

// Server -> agent on connect: what round this is and at which alpha.
struct HelloMessage {
  std::string round_id;
  double alpha = 0.0;
  AggregationMethod method = AggregationMethod::WeightedAverage;
  std::int64_t agent_count = 0;
};

// Agent -> server: the whole one-shot payload.
struct SummaryMessage {
  std::string round_id;
  AgentId agent_id = 0;
  double q = 0.0;
  std::int64_t n = 0;
};

// Agent -> server, PooledScores only: one slice of the raw score vector.
struct ScoresMessage {
  std::string round_id;
  AgentId agent_id = 0;
  std::int64_t chunk = 0;
  std::int64_t of = 1;
  std::vector<double> values;
};

// Server -> agent: the broadcast global threshold.
struct ThresholdMessage {
  std::string round_id;
  AggregationMethod method = AggregationMethod::WeightedAverage;
  double q_hat = 0.0;
};

struct ErrorMessage {
  std::string round_id;
  std::string code;
  std::string detail;
};

using Message =
    std::variant<HelloMessage, SummaryMessage, ScoresMessage, ThresholdMessage, ErrorMessage>;

inline std::string hex_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline double parse_hex_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || std::isnan(v)) {
    throw ParseError("bad hex float '" + s + "'");
  }
  return v;
}

namespace detail {

inline Json decimal(double v) { return std::isinf(v) ? Json(v > 0 ? "inf" : "-inf") : Json(v); }

inline double decimal_value(const Json& j) {
  if (j.is_string()) return parse_hex_double(j.get<std::string>());
  if (!j.is_number()) throw ParseError("expected a number");
  return j.get<double>();
}

// Authoritative value from the hex field, cross-checked against the decimal.
inline double real_field(const Json& obj, const char* name, const char* hex_name) {
  const double v = parse_hex_double(obj.at(hex_name).get<std::string>());
  const double d = decimal_value(obj.at(name));
  if (!(v == d)) {
    throw ParseError(std::string("field '") + name + "' disagrees with '" + hex_name + "'");
  }
  return v;
}

inline void expect_keys(const Json& obj, std::initializer_list<std::string_view> keys) {
  if (obj.size() != keys.size()) throw ParseError("unexpected field set");
  for (auto k : keys) {
    if (!obj.contains(std::string(k))) {
      throw ParseError("missing field '" + std::string(k) + "'");
    }
  }
}

inline std::string line(const Json& j) { return j.dump() + "\n"; }

}  // namespace detail

inline std::string encode(const HelloMessage& m) {
  return detail::line(Json{{"type", "hello"},
                           {"round_id", m.round_id},
                           {"alpha", m.alpha},
                           {"alpha_hex", hex_double(m.alpha)},
                           {"method", to_string(m.method)},
                           {"agents", m.agent_count}});
}

inline std::string encode(const SummaryMessage& m) {
  return detail::line(Json{{"type", "summary"},
                           {"round_id", m.round_id},
                           {"agent_id", m.agent_id},
                           {"q", detail::decimal(m.q)},
                           {"q_hex", hex_double(m.q)},
                           {"n", m.n}});
}

inline std::string encode(const ScoresMessage& m) {
  Json values = Json::array();
  Json hex = Json::array();
  for (double v : m.values) {
    values.push_back(detail::decimal(v));
    hex.push_back(hex_double(v));
  }
  return detail::line(Json{{"type", "scores"},
                           {"round_id", m.round_id},
                           {"agent_id", m.agent_id},
                           {"chunk", m.chunk},
                           {"of", m.of},
                           {"values", values},
                           {"values_hex", hex}});
}

inline std::string encode(const ThresholdMessage& m) {
  return detail::line(Json{{"type", "threshold"},
                           {"round_id", m.round_id},
                           {"method", to_string(m.method)},
                           {"q_hat", detail::decimal(m.q_hat)},
                           {"q_hat_hex", hex_double(m.q_hat)}});
}

inline std::string encode(const ErrorMessage& m) {
  return detail::line(Json{{"type", "error"},
                           {"round_id", m.round_id},
                           {"code", m.code},
                           {"detail", m.detail}});
}

inline std::string encode(const Message& m) {
  return std::visit([](const auto& v) { return encode(v); }, m);
}

// Parses one line (trailing newline optional). Field sets are exact: unknown
// or missing keys are parse errors.
inline Message decode(std::string_view text) {
  if (!text.empty() && text.back() == '\n') text.remove_suffix(1);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw ParseError("message lacks a string 'type'");
  }
  try {
    const auto type = j["type"].get<std::string>();
    if (type == "summary") {
      detail::expect_keys(j, {"type", "round_id", "agent_id", "q", "q_hex", "n"});
      SummaryMessage m;
      m.round_id = j.at("round_id").get<std::string>();
      m.agent_id = j.at("agent_id").get<AgentId>();
      m.q = detail::real_field(j, "q", "q_hex");
      m.n = j.at("n").get<std::int64_t>();
      return m;
    }
    if (type == "threshold") {
      detail::expect_keys(j, {"type", "round_id", "method", "q_hat", "q_hat_hex"});
      ThresholdMessage m;
      m.round_id = j.at("round_id").get<std::string>();
      m.method = parse_method(j.at("method").get<std::string>());
      m.q_hat = detail::real_field(j, "q_hat", "q_hat_hex");
      return m;
    }
    if (type == "scores") {
      detail::expect_keys(j, {"type", "round_id", "agent_id", "chunk", "of", "values",
                              "values_hex"});
      ScoresMessage m;
      m.round_id = j.at("round_id").get<std::string>();
      m.agent_id = j.at("agent_id").get<AgentId>();
      m.chunk = j.at("chunk").get<std::int64_t>();
      m.of = j.at("of").get<std::int64_t>();
      const auto& dec = j.at("values");
      const auto& hex = j.at("values_hex");
      if (!dec.is_array() || !hex.is_array() || dec.size() != hex.size()) {
        throw ParseError("scores: values and values_hex differ in length");
      }
      for (std::size_t i = 0; i < hex.size(); ++i) {
        const double v = parse_hex_double(hex[i].get<std::string>());
        if (!(v == detail::decimal_value(dec[i]))) {
          throw ParseError("scores: decimal and hex values disagree");
        }
        m.values.push_back(v);
      }
      return m;
    }
    if (type == "hello") {
      detail::expect_keys(j, {"type", "round_id", "alpha", "alpha_hex", "method", "agents"});
      HelloMessage m;
      m.round_id = j.at("round_id").get<std::string>();
      m.alpha = detail::real_field(j, "alpha", "alpha_hex");
      m.method = parse_method(j.at("method").get<std::string>());
      m.agent_count = j.at("agents").get<std::int64_t>();
      return m;
    }
    if (type == "error") {
      detail::expect_keys(j, {"type", "round_id", "code", "detail"});
      return ErrorMessage{j.at("round_id").get<std::string>(), j.at("code").get<std::string>(),
                          j.at("detail").get<std::string>()};
    }
    throw ParseError("unknown message type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad field: ") + e.what());
  } catch (const ValidationError& e) {
    throw ParseError(e.what());
  }
}

inline std::string_view type_name(const Message& m) {
  static constexpr std::string_view names[] = {"hello", "summary", "scores", "threshold", "error"};
  return names[m.index()];
}

// Rebuilds the typed exception an error message stands for.
[[noreturn]] inline void throw_remote_error(const ErrorMessage& e) {
  const std::string what = "server error [" + e.code + "]: " + e.detail;
  if (e.code == "validation" || e.code == "index" || e.code == "task_mismatch") {
    throw ValidationError(what);
  }
  if (e.code == "round_aborted") throw RoundAbortedError(what);
  if (e.code == "transport") throw TransportError(what);
  throw ProtocolError(what);
}

// One record per message crossing the agent/server boundary.
struct AuditRecord {
  std::string direction;  // "up" (agent -> server) or "down"
  std::string type;
  std::string round_id;
  AgentId agent_id = -1;
  std::size_t bytes = 0;
  std::int64_t timestamp_us = 0;  // since round start; message sequence number in simulation
  bool one_shot = true;
  std::string payload;  // raw line, kept only when capture is enabled
};

class AuditLog {
 public:
  explicit AuditLog(bool capture_payloads = false)
      : capture_(capture_payloads), start_(std::chrono::steady_clock::now()) {}

  AuditLog(const AuditLog& other)
      : capture_(other.capture_), logical_(other.logical_), start_(other.start_) {
    std::lock_guard lock(other.mutex_);
    records_ = other.records_;
  }
  AuditLog& operator=(const AuditLog& other) {
    if (this != &other) {
      std::scoped_lock lock(mutex_, other.mutex_);
      capture_ = other.capture_;
      logical_ = other.logical_;
      start_ = other.start_;
      records_ = other.records_;
    }
    return *this;
  }

  // Logical clock: timestamps become sequence numbers (deterministic logs).
  void use_logical_clock() { logical_ = true; }

  void record(std::string direction, std::string_view line, const Message& decoded,
              AgentId agent_id, bool one_shot) {
    std::lock_guard lock(mutex_);
    AuditRecord r;
    r.direction = std::move(direction);
    r.type = std::string(type_name(decoded));
    r.round_id = std::visit([](const auto& m) { return m.round_id; }, decoded);
    r.agent_id = agent_id;
    r.bytes = line.size();
    r.one_shot = one_shot;
    r.timestamp_us =
        logical_ ? static_cast<std::int64_t>(records_.size())
                 : std::chrono::duration_cast<std::chrono::microseconds>(
                       std::chrono::steady_clock::now() - start_)
                       .count();
    if (capture_) r.payload = std::string(line);
    records_.push_back(std::move(r));
  }

  std::vector<AuditRecord> records() const {
    std::lock_guard lock(mutex_);
    return records_;
  }

  std::size_t count(std::string_view direction, AgentId agent_id) const {
    std::lock_guard lock(mutex_);
    std::size_t c = 0;
    for (const auto& r : records_) c += (r.direction == direction && r.agent_id == agent_id);
    return c;
  }

  std::string to_jsonl() const {
    std::lock_guard lock(mutex_);
    std::string out;
    for (const auto& r : records_) {
      out += Json{{"direction", r.direction},
                  {"type", r.type},
                  {"round_id", r.round_id},
                  {"agent_id", r.agent_id},
                  {"bytes", r.bytes},
                  {"timestamp_us", r.timestamp_us},
                  {"one_shot", r.one_shot}}
                 .dump();
      out += "\n";
    }
    return out;
  }

  void append_to(const std::string& path) const {
    std::ofstream out(path, std::ios::app);
    if (!out) throw Error("cannot open audit log " + path);
    out << to_jsonl();
  }

 private:
  mutable std::mutex mutex_;
  bool capture_ = false;
  bool logical_ = false;
  std::chrono::steady_clock::time_point start_;
  std::vector<AuditRecord> records_;
};

}  // namespace fedwq::wire
