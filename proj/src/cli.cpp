#include "ranum/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ranum {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

const char* kVersion = "0.1.0";

nlohmann::ordered_json report_header(const char* command, const RunConfig& cfg,
                                     const std::string& graph_name) {
  nlohmann::ordered_json j;
  j["tool"] = "ranum";
  j["version"] = kVersion;
  j["schema"] = 1;
  j["command"] = command;
  j["graph"] = graph_name;
  j["seed"] = cfg.seed;
  j["mode"] = cfg.aopt.matmul_mode == AnalyzeOptions::Mode::Tight ? "tight" : "fast";
  return j;
}

nlohmann::ordered_json defect_json(const DefectReport& d) {
  nlohmann::ordered_json j;
  j["node"] = d.node;
  j["op"] = op_info(d.op).name;
  j["slot"] = d.slot;
  j["input_lo"] = d.input_lo;
  j["input_hi"] = d.input_hi;
  j["witness_lo"] = d.witness_lo;
  j["witness_hi"] = d.witness_hi;
  j["note"] = d.note;
  return j;
}

nlohmann::ordered_json binding_json(const Binding& b) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [id, t] : b) j[id] = tensor_to_json(t);
  return j;
}

void maybe_log(const std::string& line) {
  const char* v = std::getenv("RANUM_LOG");
  if (v && *v) std::fprintf(stderr, "[ranum] %s\n", line.c_str());
}

std::vector<DefectReport> run_detect(const Graph& g, const RunConfig& cfg) {
  AbstractState st = analyze(g, cfg.vr, cfg.pol, cfg.aopt);
  return detect(g, st);
}

struct ConfirmOutcome {
  nlohmann::ordered_json json;
  bool unit_ok = false;
  bool system_ok = false;
};

ConfirmOutcome confirm_one(const Graph& g, const DefectReport& d, const RunConfig& cfg,
                           uint64_t seed) {
  ConfirmOutcome out;
  nlohmann::ordered_json j;
  j["defect_node"] = d.node;
  j["seed"] = seed;
  auto unit = gen_unit_test(g, d, cfg.vr, seed, cfg.budgets);
  if (!unit) {
    j["unit"] = {{"status", "failed"}};
    j["system"] = {{"status", "skipped"}};
    out.json = j;
    return out;
  }
  out.unit_ok = true;
  nlohmann::ordered_json ju;
  ju["status"] = "ok";
  ju["verified"] = unit->verified;
  ju["x_infer"] = binding_json(unit->x_infer);
  ju["w_infer"] = binding_json(unit->w_infer);
  j["unit"] = ju;

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  Binding w0 = sample_weights(g, cfg.vr, rng);
  auto sys = gen_training_example(g, *unit, w0, cfg.gamma, seed, cfg.overrides, cfg.vr,
                                  cfg.budgets);
  if (!sys) {
    j["system"] = {{"status", "failed"}};
    out.json = j;
    return out;
  }
  out.system_ok = true;
  nlohmann::ordered_json js;
  js["status"] = "ok";
  js["verified"] = sys->verified;
  js["gamma"] = sys->gamma;
  js["x_train"] = binding_json(sys->x_train);
  js["x_infer"] = binding_json(sys->x_infer);
  js["w_0"] = binding_json(sys->w0);
  j["system"] = js;
  out.json = j;
  return out;
}

nlohmann::ordered_json fix_json(const FixRequest& req, const std::optional<Fix>& fix) {
  nlohmann::ordered_json j;
  if (!fix) {
    j["status"] = "failed";
    return j;
  }
  j["status"] = "ok";
  j["verified"] = fix->verified;
  j["span"] = fix->span;
  j["iterations"] = fix->iterations;
  j["nodes"] = nlohmann::ordered_json::array();
  for (const FixSite& s : req.sites) {
    auto it = fix->bounds.find(s.node);
    if (it == fix->bounds.end()) continue;
    nlohmann::ordered_json e;
    e["id"] = s.node;
    e["slot"] = s.slot;
    e["l"] = it->second.first;
    e["u"] = it->second.second;
    j["nodes"].push_back(e);
  }
  return j;
}

}  // namespace

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Graph load_graph_file(const std::string& path) { return parse_graph(read_text_file(path)); }

RunConfig config_from_json(const nlohmann::json& doc, const std::string& base_dir) {
  RunConfig cfg;
  if (doc.contains("graph")) {
    fs::path p = doc.at("graph").get<std::string>();
    cfg.graph_path = p.is_absolute() || base_dir.empty() ? p.string()
                                                         : (fs::path(base_dir) / p).string();
  }
  if (doc.contains("seed")) cfg.seed = doc.at("seed").get<uint64_t>();
  if (doc.contains("gamma")) cfg.gamma = doc.at("gamma").get<double>();
  if (doc.contains("mode"))
    cfg.aopt.matmul_mode = doc.at("mode").get<std::string>() == "fast"
                               ? AnalyzeOptions::Mode::Fast
                               : AnalyzeOptions::Mode::Tight;
  if (doc.contains("granularity"))
    cfg.pol.default_gran = doc.at("granularity").get<std::string>() == "finest"
                               ? GranularityPolicy::Gran::Finest
                               : GranularityPolicy::Gran::Coarsest;
  if (doc.contains("valid_ranges")) {
    const auto& v = doc.at("valid_ranges");
    if (v.contains("default_input")) {
      cfg.vr.default_input_lo = v.at("default_input").at(0).get<double>();
      cfg.vr.default_input_hi = v.at("default_input").at(1).get<double>();
    }
    if (v.contains("default_weight")) {
      cfg.vr.default_weight_lo = v.at("default_weight").at(0).get<double>();
      cfg.vr.default_weight_hi = v.at("default_weight").at(1).get<double>();
    }
    if (v.contains("nodes")) {
      for (auto it = v.at("nodes").begin(); it != v.at("nodes").end(); ++it) {
        ValidRange r;
        if (it.value().is_array()) {
          r.lo = it.value().at(0).get<double>();
          r.hi = it.value().at(1).get<double>();
        } else {
          throw ConfigError("per-node valid range must be [lo, hi]");
        }
        cfg.vr.per_node[it.key()] = r;
      }
    }
  }
  if (doc.contains("budgets")) {
    const auto& b = doc.at("budgets");
    if (b.contains("restarts")) cfg.budgets.restarts = b.at("restarts").get<int>();
    if (b.contains("grad_iters")) cfg.budgets.grad_iters = b.at("grad_iters").get<int>();
    if (b.contains("dlg_iters")) cfg.budgets.dlg_iters = b.at("dlg_iters").get<int>();
    if (b.contains("wall_seconds")) cfg.budgets.wall_seconds = b.at("wall_seconds").get<double>();
    if (b.contains("loop_budget")) {
      cfg.budgets.loop_budget = b.at("loop_budget").get<int64_t>();
      cfg.aopt.loop_budget = cfg.budgets.loop_budget;
    }
    if (b.contains("fix_iters")) cfg.fopt.maxiter = b.at("fix_iters").get<int>();
  }
  if (doc.contains("fix_at")) {
    std::string f = doc.at("fix_at").get<std::string>();
    if (f == "both" || f == "weights+inputs") cfg.preset = FixPreset::WeightsInputs;
    else if (f == "weights") cfg.preset = FixPreset::Weights;
    else if (f == "inputs") cfg.preset = FixPreset::Inputs;
    else if (f == "defect") cfg.preset = FixPreset::DefectNodes;
    else if (f.rfind("list:", 0) == 0) {
      cfg.preset = FixPreset::Explicit;
      std::stringstream ss(f.substr(5));
      std::string id;
      while (std::getline(ss, id, ',')) cfg.explicit_fix_nodes.push_back(id);
    } else {
      throw ConfigError("unknown fix_at '" + f + "'");
    }
  }
  if (doc.contains("gd_update")) cfg.fopt.gd_update = doc.at("gd_update").get<bool>();
  if (doc.contains("bench_runs")) cfg.bench_runs = doc.at("bench_runs").get<int>();
  if (doc.contains("expected_defects"))
    cfg.expected_defects = doc.at("expected_defects").get<std::vector<std::string>>();
  if (doc.contains("ste")) {
    cfg.overrides = GradientOverride::none();
    for (const auto& name : doc.at("ste")) {
      if (name.get<std::string>() == "Relu") cfg.overrides.softplus_ste.insert(OpTag::Relu);
      else throw ConfigError("no straight-through rule for '" + name.get<std::string>() + "'");
    }
  }
  if (cfg.budgets.restarts < 0 || cfg.budgets.grad_iters < 0 || cfg.budgets.dlg_iters < 0 ||
      cfg.fopt.maxiter <= 0 || cfg.budgets.wall_seconds <= 0)
    throw ConfigError("budgets must be positive");
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid config JSON: " + std::string(e.what()));
  }
  RunConfig cfg = config_from_json(doc, fs::path(path).parent_path().string());
  cfg.config_path = path;
  return cfg;
}

CmdResult cmd_detect(const RunConfig& cfg) {
  auto t0 = Clock::now();
  Graph g = load_graph_file(cfg.graph_path);
  std::vector<DefectReport> defects = run_detect(g, cfg);
  CmdResult r;
  r.report = report_header("detect", cfg, g.name);
  r.report["defects"] = nlohmann::ordered_json::array();
  for (const DefectReport& d : defects) r.report["defects"].push_back(defect_json(d));
  r.report["timings"] = nullptr;
  if (cfg.timings) r.report["timings"] = {{"total_ms", ms_since(t0)}};
  r.exit_code = defects.empty() ? kExitOk : kExitDefectsFound;
  return r;
}

CmdResult cmd_confirm(const RunConfig& cfg) {
  auto t0 = Clock::now();
  Graph g = load_graph_file(cfg.graph_path);
  std::vector<DefectReport> defects = run_detect(g, cfg);
  CmdResult r;
  r.report = report_header("confirm", cfg, g.name);
  r.report["defects"] = nlohmann::ordered_json::array();
  for (const DefectReport& d : defects) r.report["defects"].push_back(defect_json(d));
  r.report["confirm"] = nlohmann::ordered_json::array();
  bool all_ok = true;
  for (const DefectReport& d : defects) {
    maybe_log("confirming defect at node " + d.node);
    ConfirmOutcome oc = confirm_one(g, d, cfg, cfg.seed);
    r.report["confirm"].push_back(oc.json);
    all_ok = all_ok && oc.unit_ok && oc.system_ok;
  }
  r.report["timings"] = nullptr;
  if (cfg.timings) r.report["timings"] = {{"total_ms", ms_since(t0)}};
  r.exit_code = all_ok ? kExitOk : kExitConfirmIncomplete;
  return r;
}

CmdResult cmd_fix(const RunConfig& cfg) {
  auto t0 = Clock::now();
  Graph g = load_graph_file(cfg.graph_path);
  std::vector<DefectReport> defects = run_detect(g, cfg);
  CmdResult r;
  r.report = report_header("fix", cfg, g.name);
  r.report["defects"] = nlohmann::ordered_json::array();
  for (const DefectReport& d : defects) r.report["defects"].push_back(defect_json(d));
  if (defects.empty()) {
    r.report["fix"] = {{"status", "nothing_to_fix"}};
    r.report["timings"] = nullptr;
    if (cfg.timings) r.report["timings"] = {{"total_ms", ms_since(t0)}};
    r.exit_code = kExitOk;
    return r;
  }
  FixOptions fopt = cfg.fopt;
  fopt.verify_seed = cfg.seed;
  FixRequest req = make_fix_request(g, defects, cfg.preset, cfg.explicit_fix_nodes, cfg.vr,
                                    cfg.pol, cfg.aopt);
  auto fix = abstraction_optimization(g, req, cfg.vr, cfg.pol, cfg.aopt, fopt);
  r.report["fix"] = fix_json(req, fix);
  if (fix && !cfg.out_dir.empty()) {
    Graph fixed = apply_fix(g, req, *fix);
    fs::create_directories(cfg.out_dir);
    fs::path out = fs::path(cfg.out_dir) / (g.name + ".fixed.graph.json");
    std::ofstream f(out);
    f << serialize_graph_text(fixed);
    r.report["fix"]["fixed_graph"] = out.filename().string();
  }
  r.report["timings"] = nullptr;
  if (cfg.timings) r.report["timings"] = {{"total_ms", ms_since(t0)}};
  r.exit_code = fix ? kExitOk : kExitFixFailed;
  return r;
}

CmdResult cmd_run(const RunConfig& cfg) {
  CmdResult det = cmd_detect(cfg);
  CmdResult conf = cmd_confirm(cfg);
  CmdResult fix = cmd_fix(cfg);
  CmdResult r;
  r.report = report_header("run", cfg, det.report["graph"].get<std::string>());
  r.report["defects"] = det.report["defects"];
  r.report["confirm"] = conf.report["confirm"];
  r.report["fix"] = fix.report["fix"];
  r.report["timings"] = nullptr;
  if (conf.exit_code == kExitConfirmIncomplete) r.exit_code = kExitConfirmIncomplete;
  else if (fix.exit_code == kExitFixFailed) r.exit_code = kExitFixFailed;
  else r.exit_code = kExitOk;
  return r;
}

CmdResult cmd_bench(const std::string& corpus_dir, const RunConfig& base) {
  std::vector<std::string> configs;
  for (const auto& e : fs::directory_iterator(corpus_dir)) {
    std::string name = e.path().filename().string();
    if (name.size() > 12 && name.substr(name.size() - 12) == ".config.json")
      configs.push_back(e.path().string());
  }
  std::sort(configs.begin(), configs.end());

  CmdResult r;
  r.report = report_header("bench", base, corpus_dir);
  r.report["cases"] = nlohmann::ordered_json::array();

  int total_defects = 0, recalled = 0, confirmed = 0, fixed_cases = 0, fixable_cases = 0;
  bool any_confirm_short = false, any_fix_fail = false;

  std::fprintf(stderr, "%-24s %8s %8s %8s %8s %8s %10s\n", "case", "defects", "recall",
               "unit", "system", "fix", "T(s)");
  for (const std::string& cpath : configs) {
    auto t0 = Clock::now();
    RunConfig cfg = load_config_file(cpath);
    cfg.timings = base.timings;
    cfg.bench_runs = base.bench_runs;
    Graph g = load_graph_file(cfg.graph_path);
    std::vector<DefectReport> defects = run_detect(g, cfg);

    nlohmann::ordered_json cj;
    cj["case"] = g.name;
    cj["defects"] = nlohmann::ordered_json::array();
    for (const DefectReport& d : defects) cj["defects"].push_back(defect_json(d));

    // recall against the seeded defect list
    int found = 0;
    for (const std::string& want : cfg.expected_defects)
      for (const DefectReport& d : defects)
        if (d.node == want) {
          ++found;
          break;
        }
    total_defects += static_cast<int>(cfg.expected_defects.size());
    recalled += found;
    double recall = cfg.expected_defects.empty()
                        ? 1.0
                        : static_cast<double>(found) / cfg.expected_defects.size();
    cj["recall"] = recall;

    // confirmation: C successes over bench_runs seeded runs per defect
    cj["per_defect"] = nlohmann::ordered_json::array();
    int unit_c_sum = 0, sys_c_sum = 0;
    for (const DefectReport& d : defects) {
      int unit_c = 0, sys_c = 0;
      for (int run = 0; run < cfg.bench_runs; ++run) {
        ConfirmOutcome oc = confirm_one(g, d, cfg, cfg.seed + static_cast<uint64_t>(run));
        if (oc.unit_ok) ++unit_c;
        if (oc.system_ok) ++sys_c;
      }
      nlohmann::ordered_json dj;
      dj["node"] = d.node;
      dj["unit_C"] = unit_c;
      dj["system_C"] = sys_c;
      dj["runs"] = cfg.bench_runs;
      dj["confirmed"] = sys_c > 0;
      cj["per_defect"].push_back(dj);
      if (sys_c > 0) ++confirmed;
      else any_confirm_short = true;
      unit_c_sum += unit_c;
      sys_c_sum += sys_c;
    }

    // fix under weights+inputs, deterministic single run
    std::optional<Fix> fix;
    FixRequest req;
    if (!defects.empty()) {
      ++fixable_cases;
      FixOptions fopt = cfg.fopt;
      fopt.verify_seed = cfg.seed;
      req = make_fix_request(g, defects, FixPreset::WeightsInputs, {}, cfg.vr, cfg.pol,
                             cfg.aopt);
      fix = abstraction_optimization(g, req, cfg.vr, cfg.pol, cfg.aopt, fopt);
      if (fix) ++fixed_cases;
      else any_fix_fail = true;
    }
    cj["fix"] = fix_json(req, fix);
    double secs = ms_since(t0) / 1000.0;
    if (base.timings) cj["time_s"] = secs;
    r.report["cases"].push_back(cj);

    std::fprintf(stderr, "%-24s %8zu %8.2f %8d %8d %8s %10.2f\n", g.name.c_str(),
                 cfg.expected_defects.size(), recall, unit_c_sum, sys_c_sum,
                 fix ? "ok" : (defects.empty() ? "-" : "fail"), secs);
  }

  nlohmann::ordered_json sum;
  sum["seeded_defects"] = total_defects;
  sum["recall"] = total_defects ? static_cast<double>(recalled) / total_defects : 1.0;
  sum["detected_defects_confirmed"] = confirmed;
  sum["fix_cases"] = fixable_cases;
  sum["fix_successes"] = fixed_cases;
  r.report["summary"] = sum;
  r.report["timings"] = nullptr;

  if (any_fix_fail) r.exit_code = kExitFixFailed;
  else if (any_confirm_short) r.exit_code = kExitConfirmIncomplete;
  else r.exit_code = kExitOk;
  return r;
}

void emit_report(const CmdResult& r, const RunConfig& cfg) {
  if (cfg.out_dir.empty()) return;
  fs::create_directories(cfg.out_dir);
  std::ofstream f(fs::path(cfg.out_dir) / "report.json");
  f << r.report.dump(2) << "\n";
}

}  // namespace ranum
