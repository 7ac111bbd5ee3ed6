#include "ranum/detect.hpp"

#include <cmath>

namespace ranum {

bool is_defect_prone(Op op) { return op_info(op).defect_prone; }

InvalidRange invalid_range(Op op, DType dtype) {
  const double umin = dtype_umin(dtype);
  const double umax = dtype_umax(dtype);
  const double inf = std::numeric_limits<double>::infinity();
  InvalidRange r;
  r.op = op;
  r.dtype = dtype;
  r.umin = umin;
  r.umax = umax;
  switch (op) {
    case Op::Pow:
      r.slot_regions[1] = {-umin, umin};
      r.slot_regions[2] = {-inf, -umin};
      r.description = "base in [-U_min, U_min] with exponent in (-inf, -U_min]";
      break;
    case Op::Div:
      r.slot_regions[2] = {-umin, umin};
      r.description = "divisor in [-U_min, U_min]";
      break;
    case Op::Reciprocal:
      r.slot_regions[1] = {-umin, umin};
      r.description = "operand in [-U_min, U_min]";
      break;
    case Op::Sqrt:
      r.slot_regions[1] = {-inf, umin};
      r.description = "operand in (-inf, U_min]";
      break;
    case Op::Exp:
      r.slot_regions[1] = {std::log(umax), inf};
      r.description = "operand in [ln U_max, inf)";
      break;
    case Op::Log:
      r.slot_regions[1] = {-inf, umin};
      r.description = "operand in (-inf, U_min]";
      break;
    case Op::Range:
      r.slot_regions[3] = {-umin, umin};
      r.description = "delta in [-U_min, U_min]";
      break;
    case Op::NegativeLogLikelihoodLoss:
      r.slot_regions[3] = {-umin, umin};
      r.description = "total non-zero cell weight can vanish under mean reduction";
      break;
    default:
      throw NotDefectProne(std::string(op_info(op).name) + " has no invalid input range");
  }
  return r;
}

namespace {

// Element bounds of an operand aligned against a broadcast output index.
std::pair<double, double> elem_bounds_bc(const PartitionedInterval& p,
                                         const std::vector<int64_t>& out_idx,
                                         const Shape& out_shape) {
  size_t off = out_shape.size() - p.shape.size();
  std::vector<int64_t> idx(p.shape.size());
  for (size_t d = 0; d < p.shape.size(); ++d)
    idx[d] = p.shape[d] == 1 ? 0 : out_idx[d + off];
  auto strides = row_major_strides(p.shape);
  return p.element_bounds(ravel(idx, strides));
}

struct Hull {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  bool any = false;
  void add(double l, double h) {
    lo = std::min(lo, l);
    hi = std::max(hi, h);
    any = true;
  }
};

bool overlaps(double lb, double ub, double rlo, double rhi) { return lb <= rhi && ub >= rlo; }

}  // namespace

std::vector<DefectReport> detect(const Graph& g, const AbstractState& state) {
  std::vector<DefectReport> reports;
  for (const std::string& id : g.topo_order()) {
    const Node& n = g.node(id);
    if (n.kind != NodeKind::Operator || !is_defect_prone(n.op)) continue;
    InvalidRange inv = invalid_range(n.op, n.dtype);

    if (n.op == Op::Pow) {
      // both coordinates of the product region must overlap simultaneously
      PartitionedInterval base = state.concrete_input(id, 0);
      PartitionedInterval expo = state.concrete_input(id, 1);
      Shape os = broadcast_shapes(base.shape, expo.shape);
      auto [blo, bhi] = inv.slot_regions.at(1);
      auto [elo, ehi] = inv.slot_regions.at(2);
      Hull hull;
      std::vector<int64_t> idx(os.size(), 0);
      int64_t total = shape_numel(os);
      for (int64_t i = 0; i < total; ++i) {
        auto [bl, bu] = elem_bounds_bc(base, idx, os);
        auto [el, eu] = elem_bounds_bc(expo, idx, os);
        bl = cast_bound_down(bl, n.dtype);
        bu = cast_bound_up(bu, n.dtype);
        el = cast_bound_down(el, n.dtype);
        eu = cast_bound_up(eu, n.dtype);
        if (overlaps(bl, bu, blo, bhi) && overlaps(el, eu, elo, ehi))
          hull.add(std::max(bl, blo), std::min(bu, bhi));
        next_index(idx, os);
      }
      if (hull.any) {
        DefectReport r;
        r.node = id;
        r.op = n.op;
        r.slot = 1;
        r.input_lo = cast_bound_down(base.lb.min_value(), n.dtype);
        r.input_hi = cast_bound_up(base.ub.max_value(), n.dtype);
        r.witness_lo = hull.lo;
        r.witness_hi = hull.hi;
        r.note = inv.description;
        reports.push_back(std::move(r));
      }
      continue;
    }

    if (n.op == Op::NegativeLogLikelihoodLoss) {
      auto it = state.aux.find("nll_denom:" + id);
      if (it == state.aux.end()) continue;  // reduction "none"
      PartitionedInterval den = state.concrete(it->second);
      auto [dl, du] = den.element_bounds(0);
      double l = cast_bound_down(dl, n.dtype);
      double u = cast_bound_up(du, n.dtype);
      auto [rlo, rhi] = inv.slot_regions.at(3);
      if (n.attrs.get_string("reduction", "mean") == "mean" && overlaps(l, u, rlo, rhi)) {
        DefectReport r;
        r.node = id;
        r.op = n.op;
        r.slot = 3;
        r.input_lo = l;
        r.input_hi = u;
        r.witness_lo = std::max(l, rlo);
        r.witness_hi = std::min(u, rhi);
        r.note = inv.description;
        reports.push_back(std::move(r));
      }
      continue;
    }

    for (const auto& [slot, region] : inv.slot_regions) {
      size_t slot0 = static_cast<size_t>(slot) - 1;
      if (slot0 >= g.inputs_of(id).size()) continue;
      PartitionedInterval p = state.concrete_input(id, slot0);
      auto [rlo, rhi] = region;
      Hull hull;
      for (int64_t i = 0; i < shape_numel(p.shape); ++i) {
        auto [el, eu] = p.element_bounds(i);
        double l = cast_bound_down(el, n.dtype);
        double u = cast_bound_up(eu, n.dtype);
        if (overlaps(l, u, rlo, rhi)) hull.add(std::max(l, rlo), std::min(u, rhi));
      }
      if (hull.any) {
        DefectReport r;
        r.node = id;
        r.op = n.op;
        r.slot = slot;
        r.input_lo = cast_bound_down(p.lb.min_value(), n.dtype);
        r.input_hi = cast_bound_up(p.ub.max_value(), n.dtype);
        r.witness_lo = hull.lo;
        r.witness_hi = hull.hi;
        r.note = inv.description;
        reports.push_back(std::move(r));
      }
    }
  }
  return reports;
}

}  // namespace ranum
