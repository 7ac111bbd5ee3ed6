#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "ranum/cli.hpp"

namespace {

struct CommonArgs {
  std::string graph;
  std::string config;
  std::string out;
  std::string mode;
  std::string fix_at;
  std::string granularity;
  int64_t seed = -1;
  double budget_seconds = -1.0;
  int runs = -1;
  bool timings = false;
  bool gd = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--graph", a.graph, "graph JSON file");
  cmd->add_option("--config", a.config, "run configuration JSON file");
  cmd->add_option("--seed", a.seed, "random seed");
  cmd->add_option("--mode", a.mode, "matmul abstraction mode: tight|fast");
  cmd->add_option("--granularity", a.granularity, "default partition granularity: coarsest|finest");
  cmd->add_option("--fix-at", a.fix_at, "weights|inputs|both|defect|list:<ids>");
  cmd->add_option("--budget-seconds", a.budget_seconds, "wall-clock budget per job");
  cmd->add_option("--out", a.out, "output directory for reports and fixed graphs");
  cmd->add_option("--runs", a.runs, "repeated runs per case (bench)");
  cmd->add_flag("--timings", a.timings, "include wall-clock timings in reports");
  cmd->add_flag("--gd", a.gd, "plain gradient-descent update rule (baseline)");
}

ranum::RunConfig build_config(const CommonArgs& a) {
  ranum::RunConfig cfg;
  if (!a.config.empty()) cfg = ranum::load_config_file(a.config);
  if (!a.graph.empty()) cfg.graph_path = a.graph;
  if (a.seed >= 0) cfg.seed = static_cast<uint64_t>(a.seed);
  if (!a.mode.empty())
    cfg.aopt.matmul_mode = a.mode == "fast" ? ranum::AnalyzeOptions::Mode::Fast
                                            : ranum::AnalyzeOptions::Mode::Tight;
  if (!a.granularity.empty())
    cfg.pol.default_gran = a.granularity == "finest" ? ranum::GranularityPolicy::Gran::Finest
                                                     : ranum::GranularityPolicy::Gran::Coarsest;
  if (!a.fix_at.empty()) {
    nlohmann::json j;
    j["fix_at"] = a.fix_at;
    ranum::RunConfig tmp = ranum::config_from_json(j, "");
    cfg.preset = tmp.preset;
    cfg.explicit_fix_nodes = tmp.explicit_fix_nodes;
  }
  if (a.budget_seconds > 0) cfg.budgets.wall_seconds = a.budget_seconds;
  if (a.runs > 0) cfg.bench_runs = a.runs;
  if (!a.out.empty()) cfg.out_dir = a.out;
  cfg.timings = a.timings;
  cfg.fopt.gd_update = cfg.fopt.gd_update || a.gd;
  return cfg;
}

int finish(const ranum::CmdResult& r, const ranum::RunConfig& cfg) {
  ranum::emit_report(r, cfg);
  std::cout << r.report.dump(2) << "\n";
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reliability analysis for tensor computation graphs"};
  app.require_subcommand(1);

  CommonArgs detect_args, confirm_args, fix_args, run_args, bench_args;
  std::string corpus;

  CLI::App* cdet = app.add_subcommand("detect", "flag potential numerical defects");
  add_common(cdet, detect_args);
  CLI::App* ccon = app.add_subcommand("confirm", "generate failure-exhibiting tests");
  add_common(ccon, confirm_args);
  CLI::App* cfix = app.add_subcommand("fix", "synthesize interval precondition fixes");
  add_common(cfix, fix_args);
  CLI::App* crun = app.add_subcommand("run", "detect, confirm and fix in one pass");
  add_common(crun, run_args);
  CLI::App* cben = app.add_subcommand("bench", "run the bundled corpus harness");
  add_common(cben, bench_args);
  cben->add_option("--corpus", corpus, "directory of graph+config pairs")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cdet->parsed()) {
      ranum::RunConfig cfg = build_config(detect_args);
      return finish(ranum::cmd_detect(cfg), cfg);
    }
    if (ccon->parsed()) {
      ranum::RunConfig cfg = build_config(confirm_args);
      return finish(ranum::cmd_confirm(cfg), cfg);
    }
    if (cfix->parsed()) {
      ranum::RunConfig cfg = build_config(fix_args);
      return finish(ranum::cmd_fix(cfg), cfg);
    }
    if (crun->parsed()) {
      ranum::RunConfig cfg = build_config(run_args);
      return finish(ranum::cmd_run(cfg), cfg);
    }
    if (cben->parsed()) {
      ranum::RunConfig cfg = build_config(bench_args);
      return finish(ranum::cmd_bench(corpus, cfg), cfg);
    }
  } catch (const ranum::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return ranum::kExitConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return ranum::kExitConfigError;
  }
  return ranum::kExitConfigError;
}
