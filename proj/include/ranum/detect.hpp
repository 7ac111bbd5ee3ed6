#pragma once

#include "ranum/analysis.hpp"

namespace ranum {

// Operator-specific input region that produces NaN/Inf, parameterized by the
// dtype constants U_min (smallest positive normal) and U_max (largest finite).
struct InvalidRange {
  Op op;
  DType dtype;
  double umin;
  double umax;
  // per-slot regions, 1-based slot -> [lo, hi]; an unconstrained slot is absent
  std::map<int, std::pair<double, double>> slot_regions;
  std::string description;
};

// Throws NotDefectProne for operators outside the eight-entry table.
InvalidRange invalid_range(Op op, DType dtype);
bool is_defect_prone(Op op);

struct DefectReport {
  std::string node;
  Op op = Op::None;
  int slot = 1;  // 1-based offending input slot
  double input_lo = 0.0, input_hi = 0.0;      // hull of the offending input abstraction
  double witness_lo = 0.0, witness_hi = 0.0;  // overlap with the invalid region
  std::string note;
};

// Flags every (node, slot) whose input abstraction overlaps the operator's
// invalid range; bounds are judged in the node's dtype. Deterministic order
// by topological position.
std::vector<DefectReport> detect(const Graph& g, const AbstractState& state);

}  // namespace ranum
