#pragma once

#include <string>

#include "ranum/fixgen.hpp"

namespace ranum {

// Exit codes shared by the command layer.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitDefectsFound = 10;
inline constexpr int kExitConfirmIncomplete = 11;
inline constexpr int kExitFixFailed = 12;

struct RunConfig {
  std::string graph_path;
  std::string config_path;
  ValidRanges vr;
  GranularityPolicy pol;
  AnalyzeOptions aopt;
  GenBudgets budgets;
  FixOptions fopt;
  FixPreset preset = FixPreset::WeightsInputs;
  std::vector<std::string> explicit_fix_nodes;
  GradientOverride overrides = GradientOverride::default_ste();
  uint64_t seed = 0;
  double gamma = 1.0;
  bool timings = false;
  int bench_runs = 10;
  std::string out_dir;
  std::vector<std::string> expected_defects;  // bench recall accounting
};

// Parses the JSON config file; CLI flags are applied on top by the driver.
RunConfig load_config_file(const std::string& path);
RunConfig config_from_json(const nlohmann::json& doc, const std::string& base_dir);

std::string read_text_file(const std::string& path);
Graph load_graph_file(const std::string& path);

struct CmdResult {
  nlohmann::ordered_json report;
  int exit_code = 0;
};

CmdResult cmd_detect(const RunConfig& cfg);
CmdResult cmd_confirm(const RunConfig& cfg);
CmdResult cmd_fix(const RunConfig& cfg);
CmdResult cmd_run(const RunConfig& cfg);
CmdResult cmd_bench(const std::string& corpus_dir, const RunConfig& base);

// Writes report.json (and any side artifacts) under cfg.out_dir when set.
void emit_report(const CmdResult& r, const RunConfig& cfg);

}  // namespace ranum
