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

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedwq/error.hpp"
#include "fedwq/evaluation.hpp"
#include "fedwq/experiment.hpp"
#include "fedwq/federation/network.hpp"
#include "fedwq/theory.hpp"

// Subcommand bodies behind the fedwq executable. Each returns a process exit
// code: 0 success, 1 runtime failure, 2 usage or configuration error.
namespace fedwq::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct RunOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool networked = false;
};

struct ServeOptions {
  std::optional<std::string> bind;
  std::string round_id = "round-0";
  double alpha = 0.05;
  std::string method = "weighted_average";
  std::int64_t agents = 1;
  double timeout_s = 30.0;
  std::optional<std::string> out;
};

struct AgentOptions {
  std::string connect;
  std::optional<AgentId> agent_id;
  std::string scores_path;
  std::string round_id = "round-0";
  double alpha = 0.05;
  std::string method = "weighted_average";
  double timeout_s = 30.0;
};

struct AuditOptions {
  std::string which = "all";
  std::size_t cases = 100;
  std::uint64_t seed = 0;
  std::size_t trend_seeds = 20;
  std::optional<std::string> out;
};

struct ReportOptions {
  std::vector<std::string> inputs;
  std::optional<std::string> out;
};

namespace detail {

inline std::chrono::milliseconds to_ms(double seconds) {
  if (!(seconds > 0.0)) throw ValidationError("timeout must be positive");
  return std::chrono::milliseconds(static_cast<std::int64_t>(seconds * 1000.0));
}

inline int fail(std::ostream& err, int code, const std::string& what, const std::string& msg) {
  err << "fedwq: " << what << ": " << msg << "\n";
  return code;
}

inline wire::CalibrationRoundConfig round_config(const std::string& round_id, double alpha,
                                                 const std::string& method, std::int64_t agents,
                                                 double timeout_s) {
  wire::CalibrationRoundConfig cfg;
  cfg.round_id = round_id;
  cfg.alpha = alpha;
  cfg.method = parse_method(method);
  cfg.agent_count = agents;
  cfg.timeout = to_ms(timeout_s);
  cfg.validate();
  return cfg;
}

inline nlohmann::json threshold_json(const AggregatedThreshold& t) {
  nlohmann::json per_agent = nlohmann::json::array();
  for (const auto& s : t.per_agent) {
    per_agent.push_back({{"agent_id", s.agent_id}, {"q_hex", wire::hex_double(s.q)}, {"n", s.n}});
  }
  return {{"method", to_string(t.method)},       {"q_hat", format_double(t.q_hat)},
          {"q_hat_hex", wire::hex_double(t.q_hat)}, {"total_n", t.total_n},
          {"agent_count", t.agent_count},        {"per_agent", per_agent}};
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline int cmd_run(const RunOptions& opt, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  try {
    cfg = load_experiment_config(opt.config_path);
    if (opt.seed) cfg.seeds = {*opt.seed};
    if (opt.out) cfg.output_dir = *opt.out;
    if (opt.networked) cfg.networked = true;
    cfg.validate();
  } catch (const Error& e) {
    return detail::fail(err, kExitUsage, "config", e.what());
  }
  try {
    const auto result = run_experiment(cfg);
    for (const auto& s : result.seeds) {
      for (const auto& w : s.prepared.warnings) err << "fedwq: warning: " << w << "\n";
    }
    write_artifacts(result, cfg.output_dir);
    out << "wrote " << (std::filesystem::path(cfg.output_dir) / "coverage.csv").string() << " ("
        << result.seeds.size() << " seeds x " << cfg.methods.size() << " methods)\n";
    return kExitOk;
  } catch (const Error& e) {
    return detail::fail(err, kExitFailure, e.code(), e.what());
  } catch (const std::exception& e) {
    return detail::fail(err, kExitFailure, "run", e.what());
  }
}

inline int cmd_serve(const ServeOptions& opt, std::ostream& out, std::ostream& err) {
  wire::CalibrationRoundConfig cfg;
  net::Endpoint bind;
  try {
    cfg = detail::round_config(opt.round_id, opt.alpha, opt.method, opt.agents, opt.timeout_s);
    bind = net::resolve_bind(opt.bind);
  } catch (const Error& e) {
    return detail::fail(err, kExitUsage, "serve", e.what());
  }
  try {
    auto server = serve(bind, cfg);
    out << "listening on " << bind.host << ":" << server.port() << std::endl;
    const auto result = server.wait();
    out << detail::threshold_json(result.threshold).dump() << std::endl;
    if (opt.out) result.audit.append_to((std::filesystem::path(*opt.out) / "audit.jsonl").string());
    return kExitOk;
  } catch (const Error& e) {
    return detail::fail(err, kExitFailure, e.code(), e.what());
  } catch (const std::exception& e) {
    return detail::fail(err, kExitFailure, "serve", e.what());
  }
}

inline int cmd_agent(const AgentOptions& opt, std::ostream& out, std::ostream& err) {
  wire::CalibrationRoundConfig cfg;
  net::Endpoint server;
  std::pair<AgentId, ScoreSample> scores;
  try {
    cfg = detail::round_config(opt.round_id, opt.alpha, opt.method, 1, opt.timeout_s);
    server = net::Endpoint::parse(opt.connect);
    scores = load_score_file(opt.scores_path);
  } catch (const Error& e) {
    return detail::fail(err, kExitUsage, "agent", e.what());
  }
  const AgentId id = opt.agent_id.value_or(scores.first);
  try {
    const auto result = run_agent(server, id, scores.second, cfg);
    const auto& t = result.threshold;
    out << nlohmann::json{{"round_id", t.round_id},
                          {"agent_id", id},
                          {"q_hat", format_double(t.q_hat)},
                          {"q_hat_hex", wire::hex_double(t.q_hat)},
                          {"method", to_string(t.method)}}
               .dump()
        << std::endl;
    return kExitOk;
  } catch (const Error& e) {
    return detail::fail(err, kExitFailure, e.code(), e.what());
  } catch (const std::exception& e) {
    return detail::fail(err, kExitFailure, "agent", e.what());
  }
}

inline const std::vector<std::string>& audit_names() {
  static const std::vector<std::string> names = {"prop1", "prop2", "theorem1", "theorem2", "all"};
  return names;
}

inline int cmd_audit(const AuditOptions& opt, std::ostream& out, std::ostream& err) {
  const auto& names = audit_names();
  if (std::find(names.begin(), names.end(), opt.which) == names.end()) {
    return detail::fail(err, kExitUsage, "audit", "unknown audit '" + opt.which +
                                                      "' (expected prop1, prop2, theorem1, theorem2 or all)");
  }
  if (opt.cases < 1) return detail::fail(err, kExitUsage, "audit", "--cases must be >= 1");
  try {
    std::vector<theory::AuditSummary> audits;
    const bool all = opt.which == "all";
    if (all || opt.which == "prop1") audits.push_back(theory::audit_oracle_shift(opt.cases, opt.seed));
    if (all || opt.which == "prop2") audits.push_back(theory::audit_stability(opt.cases, opt.seed));
    if (all || opt.which == "theorem1") audits.push_back(theory::audit_decomposition(opt.seed));
    if (all || opt.which == "theorem2") audits.push_back(theory::audit_trend(opt.seed, opt.trend_seeds));
    bool ok = true;
    for (const auto& a : audits) {
      out << a.name << ": " << (a.passed() ? "pass" : "FAIL") << " (cases=" << a.cases
          << " violations=" << a.violations << " skipped=" << a.skipped << ")\n";
      ok = ok && a.passed();
      if (opt.out) {
        const auto dir = std::filesystem::path(*opt.out);
        write_file_atomic(dir / ("audit_" + a.name + ".json"), theory::audit_json(a).dump(2) + "\n");
        write_file_atomic(dir / ("audit_" + a.name + ".csv"), theory::audit_csv(a));
      }
    }
    return ok ? kExitOk : kExitFailure;
  } catch (const Error& e) {
    return detail::fail(err, kExitFailure, e.code(), e.what());
  } catch (const std::exception& e) {
    return detail::fail(err, kExitFailure, "audit", e.what());
  }
}

// Rebuilds seed summaries from one or more coverage CSV files.
inline int cmd_report(const ReportOptions& opt, std::ostream& out, std::ostream& err) {
  if (opt.inputs.empty()) return detail::fail(err, kExitUsage, "report", "no input CSV given");
  using Key = std::tuple<std::string, std::string, std::string>;
  std::map<Key, std::pair<std::vector<double>, std::vector<double>>> groups;
  try {
    for (const auto& path : opt.inputs) {
      std::ifstream in(path);
      if (!in) throw ValidationError("cannot read " + path);
      std::string line;
      if (!std::getline(in, line) || line != kCoverageCsvHeader) {
        throw ValidationError(path + ": unexpected header");
      }
      std::size_t lineno = 1;
      while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != 7) {
          throw ValidationError(path + ":" + std::to_string(lineno) + ": expected 7 columns");
        }
        auto& g = groups[{cells[0], cells[1], cells[3]}];
        g.first.push_back(std::stod(cells[4]));
        g.second.push_back(std::stod(cells[5]));
      }
    }
  } catch (const Error& e) {
    return detail::fail(err, kExitUsage, "report", e.what());
  } catch (const std::exception& e) {
    return detail::fail(err, kExitUsage, "report", std::string("malformed CSV: ") + e.what());
  }
  std::vector<SummaryRow> rows;
  for (const auto& [key, values] : groups) {
    const auto& [dataset, method, agent] = key;
    rows.push_back({dataset, method, agent, "coverage", seed_summary(values.first)});
    rows.push_back({dataset, method, agent, "efficiency", seed_summary(values.second)});
  }
  const auto csv = summary_csv(rows);
  try {
    if (opt.out) {
      write_file_atomic(std::filesystem::path(*opt.out) / "summary.csv", csv);
      write_file_atomic(std::filesystem::path(*opt.out) / "summary.json", summary_json(rows).dump(2) + "\n");
    } else {
      out << csv;
    }
  } catch (const std::exception& e) {
    return detail::fail(err, kExitFailure, "report", e.what());
  }
  return kExitOk;
}

}  // namespace fedwq::cli
