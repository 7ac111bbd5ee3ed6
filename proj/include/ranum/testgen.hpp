#pragma once

#include <optional>
#include <random>

#include "ranum/detect.hpp"

namespace ranum {

// Weights plus an inference input that drive the target node's input into
// its invalid range; verified by concrete execution before being reported.
struct UnitTest {
  Binding x_infer;
  Binding w_infer;
  std::string defect_node;
  bool verified = false;
};

// Training example such that one SGD step from w0 followed by inference on
// x_infer produces a non-finite value at (or downstream of) the defect node.
struct SystemTest {
  Binding x_train;
  Binding x_infer;
  Binding w0;
  double gamma = 1.0;
  std::string defect_node;
  bool verified = false;
};

struct GenBudgets {
  int restarts = 100;
  int grad_iters = 100;
  int dlg_iters = 300;
  double wall_seconds = 1800.0;
  int64_t loop_budget = 100000;
};

// Weight nodes the search may vary: no stored value, or an explicit
// per-node valid range overrides the stored one.
std::vector<std::string> free_weight_ids(const Graph& g, const ValidRanges& vr);

// Fills every free weight uniformly at random; stored weights keep their values.
Binding sample_weights(const Graph& g, const ValidRanges& vr, std::mt19937_64& rng);
Binding sample_inputs(const Graph& g, const ValidRanges& vr, std::mt19937_64& rng);

// Signed distance from the defect node's current input to its invalid range;
// <= 0 exactly when the failure condition is met.
double defect_objective(const Graph& g, const DefectReport& defect, const Binding& x,
                        const Binding& w, const ExecOptions& opt = {});

bool verify_unit_test(const Graph& g, const UnitTest& ut, const ExecOptions& opt = {});
bool verify_system_test(const Graph& g, const SystemTest& st, const ExecOptions& opt = {});

// Step a: uniform random restarts, then projected adaptive-moment descent on
// the defect objective. Every success is re-verified by concrete execution.
std::optional<UnitTest> gen_unit_test(const Graph& g, const DefectReport& defect,
                                      const ValidRanges& vr, uint64_t seed,
                                      const GenBudgets& budgets = {});

// w_infer = w0 - gamma * grad_w(loss at x_train); throws NonFiniteGradient
// when training itself fails.
Binding one_step_sgd(const Graph& g, const Binding& x_train, const Binding& w0, double gamma,
                     const ExecOptions& opt = {});

// Step b: recovers a training example whose single SGD step moves the weights
// toward the unit test's, minimizing the gradient-match loss with the
// straight-through overrides active; acceptance is end-to-end verification,
// not exact gradient match.
std::optional<SystemTest> gen_training_example(const Graph& g, const UnitTest& unit,
                                               const Binding& w0, double gamma, uint64_t seed,
                                               const GradientOverride& overrides,
                                               const ValidRanges& vr,
                                               const GenBudgets& budgets = {});

}  // namespace ranum
