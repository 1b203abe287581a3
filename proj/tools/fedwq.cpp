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

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedwq/commands.hpp"

namespace {

template <typename T>
std::optional<T> opt_if(const CLI::Option* o, const T& v) {
  return o->count() > 0 ? std::optional<T>(v) : std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace fedwq::cli;
  CLI::App app{"One-shot federated conformal calibration"};
  app.require_subcommand(1);

  RunOptions run;
  std::uint64_t run_seed = 0;
  std::string run_out;
  auto* run_cmd = app.add_subcommand("run", "run an experiment from a JSON config");
  run_cmd->add_option("--config", run.config_path, "experiment config")->required();
  auto* run_seed_opt = run_cmd->add_option("--seed", run_seed, "run a single seed");
  auto* run_out_opt = run_cmd->add_option("--out", run_out, "output directory");
  run_cmd->add_flag("--networked", run.networked, "run rounds over loopback TCP");

  ServeOptions serve;
  std::string serve_bind;
  std::string serve_out;
  auto* serve_cmd = app.add_subcommand("serve", "host one calibration round");
  auto* serve_bind_opt = serve_cmd->add_option("--bind", serve_bind, "host:port (default $FEDWQ_BIND)");
  serve_cmd->add_option("--round-id", serve.round_id, "round identifier");
  serve_cmd->add_option("--alpha", serve.alpha, "miscoverage level");
  serve_cmd->add_option("--method", serve.method, "aggregation method");
  serve_cmd->add_option("--agents", serve.agents, "number of agents")->required();
  serve_cmd->add_option("--timeout-s", serve.timeout_s, "round timeout in seconds");
  auto* serve_out_opt = serve_cmd->add_option("--out", serve_out, "directory for audit.jsonl");

  AgentOptions agent;
  fedwq::AgentId agent_id = 0;
  auto* agent_cmd = app.add_subcommand("agent", "contribute one score file to a round");
  agent_cmd->add_option("--connect", agent.connect, "server host:port")->required();
  agent_cmd->add_option("--scores", agent.scores_path, "score JSON file")->required();
  auto* agent_id_opt = agent_cmd->add_option("--agent-id", agent_id, "override the file's agent id");
  agent_cmd->add_option("--round-id", agent.round_id, "round identifier");
  agent_cmd->add_option("--alpha", agent.alpha, "miscoverage level");
  agent_cmd->add_option("--method", agent.method, "aggregation method");
  agent_cmd->add_option("--timeout-s", agent.timeout_s, "timeout in seconds");

  AuditOptions audit;
  std::string audit_out;
  auto* audit_cmd = app.add_subcommand("audit", "numerical bound audits");
  audit_cmd->add_option("which", audit.which, "prop1 | prop2 | theorem1 | theorem2 | all");
  audit_cmd->add_option("--cases", audit.cases, "randomized cases per audit");
  audit_cmd->add_option("--seed", audit.seed, "base seed");
  audit_cmd->add_option("--trend-seeds", audit.trend_seeds, "seeds for the trend audit");
  auto* audit_out_opt = audit_cmd->add_option("--out", audit_out, "directory for audit files");

  ReportOptions report;
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "re-summarize coverage CSV files");
  report_cmd->add_option("inputs", report.inputs, "coverage.csv files")->required();
  auto* report_out_opt = report_cmd->add_option("--out", report_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  if (*run_cmd) {
    run.seed = opt_if(run_seed_opt, run_seed);
    run.out = opt_if(run_out_opt, run_out);
    return cmd_run(run, std::cout, std::cerr);
  }
  if (*serve_cmd) {
    serve.bind = opt_if(serve_bind_opt, serve_bind);
    serve.out = opt_if(serve_out_opt, serve_out);
    return cmd_serve(serve, std::cout, std::cerr);
  }
  if (*agent_cmd) {
    agent.agent_id = opt_if(agent_id_opt, agent_id);
    return cmd_agent(agent, std::cout, std::cerr);
  }
  if (*audit_cmd) {
    audit.out = opt_if(audit_out_opt, audit_out);
    return cmd_audit(audit, std::cout, std::cerr);
  }
  report.out = opt_if(report_out_opt, report_out);
  return cmd_report(report, std::cout, std::cerr);
}
