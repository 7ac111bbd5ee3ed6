#pragma once

#include <optional>

#include "ranum/detect.hpp"
#include "ranum/testgen.hpp"

namespace ranum {

enum class FixPreset { WeightsInputs, Weights, Inputs, DefectNodes, Explicit };

// One clipping location: an initial node's output (slot 0) or an internal
// node's 1-based input slot, with the scalar valid range the precondition
// may occupy.
struct FixSite {
  std::string node;
  int slot = 0;
  double valid_lo = 0.0;
  double valid_hi = 0.0;
};

struct FixRequest {
  std::vector<DefectReport> targets;
  std::vector<FixSite> sites;
};

struct Fix {
  std::map<std::string, std::pair<double, double>> bounds;  // node -> [l_n, u_n]
  double span = 0.0;
  int iterations = 0;
  bool verified = false;
};

struct FixOptions {
  int maxiter = 1000;
  double gamma_s = 0.9;
  double gamma_c = 0.1;
  double minstep = 0.1;
  bool gd_update = false;  // plain gradient-descent baseline instead of the sign rule
  int verify_samples = 1000;
  uint64_t verify_seed = 0;
};

// Resolves the preset into concrete sites with their valid ranges; internal
// (defect-node) sites take the hull of the unfixed input abstraction.
FixRequest make_fix_request(const Graph& g, const std::vector<DefectReport>& defects,
                            FixPreset preset, const std::vector<std::string>& explicit_nodes,
                            const ValidRanges& vr, const GranularityPolicy& pol,
                            const AnalyzeOptions& opt);

// L^precondgen for a candidate assignment: max over targeted defects of the
// signed penetration of the (re-analyzed) abstraction into the invalid range;
// negative means every target is clear.
double precond_loss(const Graph& g, const FixRequest& req,
                    const std::map<std::string, std::pair<double, double>>& bounds,
                    const ValidRanges& vr, const GranularityPolicy& pol,
                    const AnalyzeOptions& opt);

// Tape gradients of the precondition loss w.r.t. every imposed (l_n, u_n).
std::map<std::string, std::pair<double, double>> precond_loss_gradients(
    const Graph& g, const FixRequest& req,
    const std::map<std::string, std::pair<double, double>>& bounds, const ValidRanges& vr,
    const GranularityPolicy& pol, const AnalyzeOptions& opt);

// The abstraction-optimization search: shared span shrinking by gamma_s with
// per-site sign-gradient center updates; a candidate is returned only after
// full re-analysis plus random-sample verification passes.
std::optional<Fix> abstraction_optimization(const Graph& g, const FixRequest& req,
                                            const ValidRanges& vr, const GranularityPolicy& pol,
                                            const AnalyzeOptions& opt, const FixOptions& fopt);

// Splices Clip nodes carrying the preconditions onto the fixed locations.
Graph apply_fix(const Graph& g, const FixRequest& req, const Fix& fix);

// Static half: re-analysis reports none of the targeted defects. Dynamic
// half: `samples` uniform draws execute with every output finite.
bool verify_fix(const Graph& g_fixed, const std::vector<DefectReport>& targets,
                const ValidRanges& vr, const GranularityPolicy& pol, const AnalyzeOptions& opt,
                int samples, uint64_t seed);

}  // namespace ranum
