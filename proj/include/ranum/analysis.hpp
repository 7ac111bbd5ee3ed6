#pragma once

#include <memory>
#include <optional>
#include <set>

#include "ranum/graph.hpp"
#include "ranum/interval.hpp"

namespace ranum {

// Partition granularity for initial nodes that the backward labeling pass
// does not force to finest.
struct GranularityPolicy {
  enum class Gran { Coarsest, Finest };
  Gran default_gran = Gran::Coarsest;
  std::map<std::string, Gran> per_node;

  Gran for_node(const std::string& id) const {
    auto it = per_node.find(id);
    return it == per_node.end() ? default_gran : it->second;
  }
};

// Valid value ranges for input/weight nodes; scalar or elementwise.
struct ValidRange {
  double lo = -10.0, hi = 10.0;
  std::optional<Tensor> lo_t, hi_t;
  bool is_scalar() const { return !lo_t.has_value(); }
};

struct ValidRanges {
  double default_input_lo = -10.0, default_input_hi = 10.0;
  double default_weight_lo = -10.0, default_weight_hi = 10.0;
  std::map<std::string, ValidRange> per_node;

  bool has_override(const std::string& id) const { return per_node.count(id) > 0; }
  ValidRange resolve(const Node& n) const;
  // Elementwise bounds, used by the samplers and projections.
  std::pair<Tensor, Tensor> element_bounds(const Node& n) const;
};

// Interval bounds tracked on a tape so downstream scalars stay
// differentiable w.r.t. the endpoints.
struct AbstractValue {
  Var lb, ub;      // block-shaped
  SplitSet splits;
  Shape shape;
};

struct AnalyzeOptions {
  enum class Mode { Tight, Fast };
  Mode matmul_mode = Mode::Tight;
  bool differentiable = false;
  int64_t loop_budget = 1000;
};

// Candidate interval imposed on a node: slot 0 replaces an initial node's
// output abstraction, slot >= 1 replaces that (1-based) input slot.
struct ImposedInterval {
  Var lb, ub;  // scalar leaves on the analysis tape
  int slot = 0;
};
using Impositions = std::map<std::string, ImposedInterval>;

class AbstractState {
 public:
  struct NodeAbs {
    std::vector<AbstractValue> inputs;
    AbstractValue output;
  };

  std::shared_ptr<Tape> tape;
  std::map<std::string, NodeAbs> nodes;
  std::map<std::string, AbstractValue> aux;  // e.g. "nll_denom:<id>"
  std::map<std::string, Var> endpoints;      // "<id>:lb", "<id>:ub", "<id>:imposed_*"
  bool differentiable = false;

  const AbstractValue& output_of(const std::string& id) const;
  const AbstractValue& input_of(const std::string& id, size_t slot) const;
  PartitionedInterval concrete(const AbstractValue& av) const;
  PartitionedInterval concrete_output(const std::string& id) const;
  PartitionedInterval concrete_input(const std::string& id, size_t slot) const;
};

// Initial nodes that start a valid path to a fine-grained requiring slot
// without crossing a stopping operator; reverse-topological boolean
// propagation over the inverted graph.
std::set<std::string> label_fine_grained(const Graph& g);

AbstractState analyze(const Graph& g, const ValidRanges& vr, const GranularityPolicy& pol,
                      const AnalyzeOptions& opt);

// As analyze(), but on a caller-owned tape with candidate intervals imposed;
// the fix search drives this directly.
AbstractState analyze_with_tape(const Graph& g, const ValidRanges& vr,
                                const GranularityPolicy& pol, const AnalyzeOptions& opt,
                                std::shared_ptr<Tape> tape, const Impositions& imposed);

// Gradients of a scalar objective (built on state.tape) w.r.t. every
// registered interval endpoint.
std::map<std::string, Tensor> endpoint_gradients(const AbstractState& state, Var objective);

// Concrete transfer-function entry points (exercised directly by tests;
// analyze() uses the tape-level equivalents).
PartitionedInterval transfer_matmul_tight(const PartitionedInterval& a,
                                          const PartitionedInterval& b);
PartitionedInterval transfer_matmul_fast(const PartitionedInterval& a,
                                         const PartitionedInterval& b);
PartitionedInterval transfer_softmax(const PartitionedInterval& a, int64_t axis);
PartitionedInterval transfer_conv(const PartitionedInterval& x, const PartitionedInterval& k,
                                  const PartitionedInterval* bias, const Attrs& attrs);
PartitionedInterval transfer_elementwise(Op op, const std::vector<PartitionedInterval>& operands,
                                         const Attrs& attrs, DType dtype);

// Tape-level transfers shared between analyze() and the wrappers above.
AbstractValue av_lift(Tape& t, const PartitionedInterval& p);
AbstractValue av_refine(Tape& t, const AbstractValue& a, const SplitSet& target);
AbstractValue av_join(Tape& t, const AbstractValue& a, const AbstractValue& b);
AbstractValue av_matmul(Tape& t, const AbstractValue& a, const AbstractValue& b, bool tight);
AbstractValue av_softmax(Tape& t, const AbstractValue& a, int64_t axis, bool log_variant);
AbstractValue av_conv(Tape& t, const AbstractValue& x, const AbstractValue& k,
                      const AbstractValue* bias, const ConvAttrs& attrs);
AbstractValue av_elementwise(Tape& t, Op op, const std::vector<AbstractValue>& operands,
                             const Attrs& attrs, DType dtype);
std::optional<Tensor> av_point_value(Tape& t, const AbstractValue& a);

}  // namespace ranum
