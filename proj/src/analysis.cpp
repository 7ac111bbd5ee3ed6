#include "ranum/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "ranum/indexmaps.hpp"

namespace ranum {

namespace {

constexpr double kBig = std::numeric_limits<double>::max();

Var clamp_finite(Tape& t, Var v) {
  return t.clip(v, t.scalar_const(-kBig), t.scalar_const(kBig));
}

Tensor mask2(const Tape& t, Var a, Var b, double (*f)(double, double)) {
  return binary_broadcast(t.value(a), t.value(b), f);
}

double straddle_fn(double lo, double hi) { return lo <= 0.0 && hi >= 0.0 ? 1.0 : 0.0; }

}  // namespace

// --- valid ranges -----------------------------------------------------------

ValidRange ValidRanges::resolve(const Node& n) const {
  auto it = per_node.find(n.id);
  if (it != per_node.end()) return it->second;
  ValidRange r;
  if (n.kind == NodeKind::Input) {
    r.lo = default_input_lo;
    r.hi = default_input_hi;
  } else if (n.kind == NodeKind::Weight) {
    r.lo = default_weight_lo;
    r.hi = default_weight_hi;
  } else {
    throw AnalysisError("valid range requested for constant node '" + n.id + "'");
  }
  return r;
}

std::pair<Tensor, Tensor> ValidRanges::element_bounds(const Node& n) const {
  ValidRange r = resolve(n);
  if (r.is_scalar()) return {Tensor(n.shape, r.lo), Tensor(n.shape, r.hi)};
  if (!shapes_equal(r.lo_t->shape(), n.shape) || !shapes_equal(r.hi_t->shape(), n.shape))
    throw ConfigError("tensor valid range shape mismatch for '" + n.id + "'");
  return {*r.lo_t, *r.hi_t};
}

// --- abstract state ---------------------------------------------------------

const AbstractValue& AbstractState::output_of(const std::string& id) const {
  auto it = nodes.find(id);
  if (it == nodes.end()) throw AnalysisError("no abstraction stored for node '" + id + "'");
  return it->second.output;
}

const AbstractValue& AbstractState::input_of(const std::string& id, size_t slot) const {
  auto it = nodes.find(id);
  if (it == nodes.end() || slot >= it->second.inputs.size())
    throw AnalysisError("no input abstraction for node '" + id + "'");
  return it->second.inputs[slot];
}

PartitionedInterval AbstractState::concrete(const AbstractValue& av) const {
  PartitionedInterval p;
  p.lb = tape->value(av.lb);
  p.ub = tape->value(av.ub);
  p.splits = av.splits;
  p.shape = av.shape;
  return p;
}

PartitionedInterval AbstractState::concrete_output(const std::string& id) const {
  return concrete(output_of(id));
}

PartitionedInterval AbstractState::concrete_input(const std::string& id, size_t slot) const {
  return concrete(input_of(id, slot));
}

// --- backward fine-grained node labeling -------------------------------------

std::set<std::string> label_fine_grained(const Graph& g) {
  std::map<std::string, bool> label;
  for (const Node& n : g.nodes) label[n.id] = false;
  const auto& topo = g.topo_order();
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const Node& n = g.node(*it);
    if (n.kind != NodeKind::Operator) continue;
    const OpInfo& info = op_info(n.op);
    bool pass_through = label[n.id] && !info.fg_stopping;
    const auto& ins = g.inputs_of(n.id);
    for (size_t s = 0; s < ins.size(); ++s) {
      bool lbl = pass_through;
      if (std::find(info.fg_slots.begin(), info.fg_slots.end(), static_cast<int>(s) + 1) !=
          info.fg_slots.end())
        lbl = true;
      if (lbl) label[ins[s]] = true;
    }
  }
  std::set<std::string> out;
  for (const Node& n : g.nodes)
    if (n.is_initial() && label[n.id]) out.insert(n.id);
  return out;
}

// --- abstract value helpers ---------------------------------------------------

AbstractValue av_lift(Tape& t, const PartitionedInterval& p) {
  AbstractValue av;
  av.lb = t.constant(p.lb);
  av.ub = t.constant(p.ub);
  av.splits = p.splits;
  av.shape = p.shape;
  return av;
}

AbstractValue av_refine(Tape& t, const AbstractValue& a, const SplitSet& target) {
  if (a.splits == target) return a;
  auto map = refine_map(a.splits, target, a.shape);
  AbstractValue out;
  out.lb = t.reindex(a.lb, target.block_shape(), map);
  out.ub = t.reindex(a.ub, target.block_shape(), map);
  out.splits = target;
  out.shape = a.shape;
  return out;
}

namespace {

// Element-resolution view (finest refinement; block shape equals shape).
AbstractValue av_elements(Tape& t, const AbstractValue& a) {
  return av_refine(t, a, SplitSet::finest(a.shape));
}

AbstractValue av_detach(Tape& t, const AbstractValue& a) {
  AbstractValue out = a;
  out.lb = t.constant(t.value(a.lb));
  out.ub = t.constant(t.value(a.ub));
  return out;
}

// Shared-splits alignment of broadcastable operands: output splits are the
// per-dimension union of contributing operand splits; each operand is refined
// so its block tensor broadcasts elementwise against the others.
struct AlignResult {
  std::vector<AbstractValue> ops;
  SplitSet out_splits;
  Shape out_shape;
};

AlignResult align_many(Tape& t, const std::vector<AbstractValue>& ops) {
  Shape os = ops[0].shape;
  for (size_t i = 1; i < ops.size(); ++i) os = broadcast_shapes(os, ops[i].shape);
  size_t rank = os.size();
  SplitSet outs;
  outs.dims.resize(rank);
  for (size_t d = 0; d < rank; ++d) {
    std::set<int64_t> merged{0};
    for (const AbstractValue& a : ops) {
      int64_t da = static_cast<int64_t>(d) - static_cast<int64_t>(rank - a.shape.size());
      if (da >= 0 && a.shape[static_cast<size_t>(da)] == os[d])
        merged.insert(a.splits.dims[static_cast<size_t>(da)].begin(),
                      a.splits.dims[static_cast<size_t>(da)].end());
    }
    outs.dims[d].assign(merged.begin(), merged.end());
  }
  AlignResult r;
  r.out_splits = outs;
  r.out_shape = os;
  for (const AbstractValue& a : ops) {
    SplitSet target;
    target.dims.resize(a.shape.size());
    for (size_t da = 0; da < a.shape.size(); ++da) {
      size_t d = da + (rank - a.shape.size());
      target.dims[da] = a.shape[da] == os[d] ? outs.dims[d] : std::vector<int64_t>{0};
    }
    r.ops.push_back(av_refine(t, a, target));
  }
  return r;
}

struct Bounds {
  Var lo, hi;
};

Bounds interval_mul(Tape& t, Var la, Var ua, Var lb, Var ub) {
  Var p1 = t.mul(la, lb), p2 = t.mul(la, ub), p3 = t.mul(ua, lb), p4 = t.mul(ua, ub);
  return {t.minimum(t.minimum(p1, p2), t.minimum(p3, p4)),
          t.maximum(t.maximum(p1, p2), t.maximum(p3, p4))};
}

// Quotient bounds with the divide-by-zero surrogate: a divisor interval that
// touches zero widens the element to [-U_max, U_max] of the node dtype and
// the detector reports the defect separately.
Bounds interval_div(Tape& t, Var la, Var ua, Var lb, Var ub, DType dtype) {
  Tensor straddle = mask2(t, lb, ub, straddle_fn);
  Var one = t.scalar_const(1.0);
  Var lbs = t.select(straddle, one, lb);
  Var ubs = t.select(straddle, one, ub);
  Var q1 = t.div(la, lbs), q2 = t.div(la, ubs), q3 = t.div(ua, lbs), q4 = t.div(ua, ubs);
  Var lo = t.minimum(t.minimum(q1, q2), t.minimum(q3, q4));
  Var hi = t.maximum(t.maximum(q1, q2), t.maximum(q3, q4));
  double umax = dtype_umax(dtype);
  return {t.select(straddle, t.scalar_const(-umax), lo),
          t.select(straddle, t.scalar_const(umax), hi)};
}

Bounds interval_pow(Tape& t, const AbstractValue& base, const AbstractValue& expnt, Var la,
                    Var ua, Var lb, Var ub, DType dtype) {
  Tape& tp = t;
  // constant nonnegative-integer exponent: exact parity rules
  Tensor le = tp.value(lb), uee = tp.value(ub);
  bool point = true, nonneg_int = true;
  for (int64_t i = 0; i < le.numel(); ++i) {
    if (le.at(i) != uee.at(i)) point = false;
    double v = le.at(i);
    if (!(std::isfinite(v) && v >= 0.0 && v == std::floor(v))) nonneg_int = false;
  }
  if (point && nonneg_int) {
    Tensor p = le;
    Tensor odd = unary_map(p, [](double v) { return std::fmod(v, 2.0) != 0.0 ? 1.0 : 0.0; });
    Var lo_odd = tp.pow_const(la, p), hi_odd = tp.pow_const(ua, p);
    Tensor straddle = mask2(tp, la, ua, straddle_fn);
    Var absl = tp.abs(la), absu = tp.abs(ua);
    Var mn = tp.select(straddle, tp.scalar_const(0.0), tp.minimum(absl, absu));
    Var mx = tp.maximum(absl, absu);
    Var lo_even = tp.pow_const(mn, p), hi_even = tp.pow_const(mx, p);
    return {tp.select(odd, lo_odd, lo_even), tp.select(odd, hi_odd, hi_even)};
  }
  if (tp.value(la).min_value() > 0.0) {
    // strictly positive base: x^y is monotone per coordinate, corners suffice
    Var c1 = tp.pow_vv(la, lb), c2 = tp.pow_vv(la, ub), c3 = tp.pow_vv(ua, lb),
        c4 = tp.pow_vv(ua, ub);
    return {tp.minimum(tp.minimum(c1, c2), tp.minimum(c3, c4)),
            tp.maximum(tp.maximum(c1, c2), tp.maximum(c3, c4))};
  }
  (void)base;
  (void)expnt;
  double umax = dtype_umax(dtype);
  Shape bshape = broadcast_shapes(tp.value(la).shape(), tp.value(lb).shape());
  return {tp.constant(Tensor(bshape, -umax)), tp.constant(Tensor(bshape, umax))};
}

std::vector<int64_t> merge_sorted(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  std::set<int64_t> m(a.begin(), a.end());
  m.insert(b.begin(), b.end());
  return std::vector<int64_t>(m.begin(), m.end());
}

AbstractValue av_reshape_blocks(Tape& t, const AbstractValue& a, const Shape& new_shape,
                                SplitSet new_splits) {
  AbstractValue out;
  out.lb = t.reshape(a.lb, new_splits.block_shape());
  out.ub = t.reshape(a.ub, new_splits.block_shape());
  out.splits = std::move(new_splits);
  out.shape = new_shape;
  return out;
}

}  // namespace

std::optional<Tensor> av_point_value(Tape& t, const AbstractValue& a) {
  const Tensor& lo = t.value(a.lb);
  const Tensor& hi = t.value(a.ub);
  for (int64_t i = 0; i < lo.numel(); ++i)
    if (lo.at(i) != hi.at(i)) return std::nullopt;
  auto map = refine_map(a.splits, SplitSet::finest(a.shape), a.shape);
  return reindex(lo, a.shape, map);
}

AbstractValue av_join(Tape& t, const AbstractValue& a, const AbstractValue& b) {
  if (!shapes_equal(a.shape, b.shape)) throw ShapeMismatch("join of different shapes");
  SplitSet u = union_splits(a.splits, b.splits);
  AbstractValue ra = av_refine(t, a, u), rb = av_refine(t, b, u);
  AbstractValue out;
  out.lb = t.minimum(ra.lb, rb.lb);
  out.ub = t.maximum(ra.ub, rb.ub);
  out.splits = u;
  out.shape = a.shape;
  return out;
}

// --- MatMul ------------------------------------------------------------------

namespace {

AbstractValue av_as_matrix(Tape& t, const AbstractValue& a, bool row) {
  if (a.shape.size() == 2) return a;
  if (a.shape.size() != 1) throw UnsupportedOperator("MatMul supports rank-1/2 operands only");
  Shape ns = row ? Shape{1, a.shape[0]} : Shape{a.shape[0], 1};
  SplitSet sp;
  sp.dims = row ? std::vector<std::vector<int64_t>>{{0}, a.splits.dims[0]}
                : std::vector<std::vector<int64_t>>{a.splits.dims[0], {0}};
  return av_reshape_blocks(t, a, ns, sp);
}

Var weighted_matmul(Tape& t, Var a, Var b, const Tensor& v_row) {
  return t.matmul(t.mul(a, t.constant(v_row)), b);
}

struct SignClasses {
  Var ln, un, lm, um, lp, up;  // negative / straddling / positive parts
};

SignClasses sign_classes(Tape& t, Var lo, Var hi) {
  Tensor neg = mask2(t, lo, hi, [](double, double u) { return u < 0.0 ? 1.0 : 0.0; });
  Tensor mid = mask2(t, lo, hi, straddle_fn);
  Tensor pos = mask2(t, lo, hi, [](double l, double) { return l > 0.0 ? 1.0 : 0.0; });
  SignClasses s;
  s.ln = t.mul(lo, t.constant(neg));
  s.un = t.mul(hi, t.constant(neg));
  s.lm = t.mul(lo, t.constant(mid));
  s.um = t.mul(hi, t.constant(mid));
  s.lp = t.mul(lo, t.constant(pos));
  s.up = t.mul(hi, t.constant(pos));
  return s;
}

}  // namespace

AbstractValue av_matmul(Tape& t, const AbstractValue& a_in, const AbstractValue& b_in,
                        bool tight) {
  bool a1 = a_in.shape.size() == 1, b1 = b_in.shape.size() == 1;
  AbstractValue a = av_as_matrix(t, a_in, /*row=*/true);
  AbstractValue b = av_as_matrix(t, b_in, /*row=*/false);
  if (a.shape[1] != b.shape[0]) throw ShapeMismatch("MatMul inner dimensions disagree");

  // dynamic partitioning: union the inner split sets and refine both operands
  std::vector<int64_t> U = merge_sorted(a.splits.dims[1], b.splits.dims[0]);
  SplitSet ta, tb;
  ta.dims = {a.splits.dims[0], U};
  tb.dims = {U, b.splits.dims[1]};
  a = av_refine(t, a, ta);
  b = av_refine(t, b, tb);

  int64_t R = static_cast<int64_t>(a.splits.dims[0].size());
  int64_t K = static_cast<int64_t>(U.size());
  int64_t C = static_cast<int64_t>(b.splits.dims[1].size());
  int64_t inner = a.shape[1];
  std::vector<double> v(static_cast<size_t>(K));
  for (int64_t k = 0; k < K; ++k) {
    int64_t end = k + 1 < K ? U[static_cast<size_t>(k) + 1] : inner;
    v[static_cast<size_t>(k)] = static_cast<double>(end - U[static_cast<size_t>(k)]);
  }

  Var lo, hi;
  if (tight) {
    // per-block minimum/maximum over the four endpoint products, weighted by
    // the block multiplicities
    for (int64_t k = 0; k < K; ++k) {
      std::vector<int64_t> colmap(static_cast<size_t>(R));
      for (int64_t i = 0; i < R; ++i) colmap[static_cast<size_t>(i)] = i * K + k;
      std::vector<int64_t> rowmap(static_cast<size_t>(C));
      for (int64_t j = 0; j < C; ++j) rowmap[static_cast<size_t>(j)] = k * C + j;
      Var lac = t.reindex(a.lb, Shape{R, 1}, colmap), uac = t.reindex(a.ub, Shape{R, 1}, colmap);
      Var lbr = t.reindex(b.lb, Shape{1, C}, rowmap), ubr = t.reindex(b.ub, Shape{1, C}, rowmap);
      Var p1 = t.matmul(lac, lbr), p2 = t.matmul(lac, ubr), p3 = t.matmul(uac, lbr),
          p4 = t.matmul(uac, ubr);
      Var mn = t.minimum(t.minimum(p1, p2), t.minimum(p3, p4));
      Var mx = t.maximum(t.maximum(p1, p2), t.maximum(p3, p4));
      Var w = t.scalar_const(v[static_cast<size_t>(k)]);
      mn = t.mul(mn, w);
      mx = t.mul(mx, w);
      lo = lo.valid() ? t.add(lo, mn) : mn;
      hi = hi.valid() ? t.add(hi, mx) : mx;
    }
  } else {
    // sign-decomposed fast mode expressed with plain matrix products
    SignClasses A = sign_classes(t, a.lb, a.ub);
    SignClasses B = sign_classes(t, b.lb, b.ub);
    Tensor vrow(Shape{1, K}, v);
    auto wmm = [&](Var x, Var y) { return weighted_matmul(t, x, y, vrow); };
    lo = wmm(A.un, B.un);
    lo = t.add(lo, wmm(A.um, B.ln));
    lo = t.add(lo, wmm(A.up, B.ln));
    lo = t.add(lo, wmm(A.ln, B.um));
    lo = t.add(lo, wmm(A.um, B.lm));
    lo = t.add(lo, wmm(A.lm, B.um));
    lo = t.add(lo, wmm(A.up, B.lm));
    lo = t.add(lo, wmm(A.ln, B.up));
    lo = t.add(lo, wmm(A.lm, B.up));
    lo = t.add(lo, wmm(A.lp, B.lp));
    hi = wmm(A.ln, B.ln);
    hi = t.add(hi, wmm(A.lm, B.ln));
    hi = t.add(hi, wmm(A.lp, B.un));
    hi = t.add(hi, wmm(A.ln, B.lm));
    hi = t.add(hi, wmm(A.lm, B.lm));
    hi = t.add(hi, wmm(A.um, B.um));
    hi = t.add(hi, wmm(A.up, B.um));
    hi = t.add(hi, wmm(A.un, B.lp));
    hi = t.add(hi, wmm(A.um, B.up));
    hi = t.add(hi, wmm(A.up, B.up));
  }

  AbstractValue out;
  out.lb = lo;
  out.ub = hi;
  out.splits.dims = {a.splits.dims[0], b.splits.dims[1]};
  out.shape = Shape{a.shape[0], b.shape[1]};
  // undo the rank-1 promotion
  if (a1 || b1) {
    Shape ns;
    SplitSet sp;
    if (!a1) {
      ns.push_back(out.shape[0]);
      sp.dims.push_back(out.splits.dims[0]);
    }
    if (!b1) {
      ns.push_back(out.shape[1]);
      sp.dims.push_back(out.splits.dims[1]);
    }
    out = av_reshape_blocks(t, out, ns, sp);
  }
  return out;
}

// --- Softmax -----------------------------------------------------------------

AbstractValue av_softmax(Tape& t, const AbstractValue& a, int64_t axis, bool log_variant) {
  int64_t ax = axis < 0 ? axis + static_cast<int64_t>(a.shape.size()) : axis;
  if (ax < 0 || ax >= static_cast<int64_t>(a.shape.size()))
    throw UnsupportedAttribute("softmax axis out of range");

  // block multiplicities along the normalization axis
  auto sizes = a.splits.block_sizes(a.shape);
  Shape vshape(a.splits.rank(), 1);
  vshape[static_cast<size_t>(ax)] = static_cast<int64_t>(sizes[static_cast<size_t>(ax)].size());
  std::vector<double> vdata(sizes[static_cast<size_t>(ax)].begin(),
                            sizes[static_cast<size_t>(ax)].end());
  Var v = t.constant(Tensor(vshape, vdata));

  // max-shift for overflow safety; softmax is shift invariant
  Var m = t.reduce_max(a.ub, {ax}, true);
  Var eu = t.exp(t.sub(a.ub, m));
  Var el = t.exp(t.sub(a.lb, m));
  Var sum_u = t.reduce_sum(t.mul(eu, v), {ax}, true);
  Var sum_l = t.reduce_sum(t.mul(el, v), {ax}, true);
  Var den_lo = t.add(t.sub(sum_u, eu), el);  // exp(u)'v - exp(u_i) + exp(l_i)
  Var den_hi = t.add(t.sub(sum_l, el), eu);
  Var tiny = t.scalar_const(1e-300);
  den_lo = t.maximum(den_lo, tiny);
  den_hi = t.maximum(den_hi, tiny);

  AbstractValue out;
  if (!log_variant) {
    out.lb = t.div(el, den_lo);
    out.ub = t.div(eu, den_hi);
  } else {
    out.lb = t.sub(t.sub(a.lb, m), t.log(den_lo));
    out.ub = t.sub(t.sub(a.ub, m), t.log(den_hi));
  }
  out.splits = a.splits;
  out.shape = a.shape;
  return out;
}

// --- Conv --------------------------------------------------------------------

namespace {

std::vector<int64_t> conv_group_splits(const std::vector<int64_t>& xsplits, int64_t extent,
                                       int64_t kernel, int64_t stride, int64_t pad_begin,
                                       int64_t out_extent) {
  std::vector<int64_t> splits{0};
  std::vector<int64_t> prev;
  for (int64_t o = 0; o < out_extent; ++o) {
    std::vector<int64_t> sig;
    sig.reserve(static_cast<size_t>(kernel));
    for (int64_t d = 0; d < kernel; ++d) {
      int64_t h = o * stride - pad_begin + d;
      sig.push_back(h < 0 || h >= extent ? -1 : block_of(xsplits, h));
    }
    if (o > 0 && sig != prev) splits.push_back(o);
    prev = std::move(sig);
  }
  return splits;
}

}  // namespace

AbstractValue av_conv(Tape& t, const AbstractValue& x, const AbstractValue& k,
                      const AbstractValue* bias, const ConvAttrs& attrs) {
  Shape out_shape = conv2d_out_shape(x.shape, k.shape, attrs);
  AbstractValue xe = av_elements(t, x);
  AbstractValue ke = av_elements(t, k);

  // sign-decomposed scheme with convolution in place of the matrix product
  SignClasses A = sign_classes(t, xe.lb, xe.ub);
  SignClasses B = sign_classes(t, ke.lb, ke.ub);
  auto cv = [&](Var a, Var b) { return t.conv2d(a, b, attrs); };
  Var lo = cv(A.un, B.un);
  lo = t.add(lo, cv(A.um, B.ln));
  lo = t.add(lo, cv(A.up, B.ln));
  lo = t.add(lo, cv(A.ln, B.um));
  lo = t.add(lo, cv(A.um, B.lm));
  lo = t.add(lo, cv(A.lm, B.um));
  lo = t.add(lo, cv(A.up, B.lm));
  lo = t.add(lo, cv(A.ln, B.up));
  lo = t.add(lo, cv(A.lm, B.up));
  lo = t.add(lo, cv(A.lp, B.lp));
  Var hi = cv(A.ln, B.ln);
  hi = t.add(hi, cv(A.lm, B.ln));
  hi = t.add(hi, cv(A.lp, B.un));
  hi = t.add(hi, cv(A.ln, B.lm));
  hi = t.add(hi, cv(A.lm, B.lm));
  hi = t.add(hi, cv(A.um, B.um));
  hi = t.add(hi, cv(A.up, B.um));
  hi = t.add(hi, cv(A.un, B.lp));
  hi = t.add(hi, cv(A.um, B.up));
  hi = t.add(hi, cv(A.up, B.up));

  if (bias) {
    AbstractValue be = av_elements(t, *bias);
    Shape bshape{1, bias->shape[0], 1, 1};
    lo = t.add(lo, t.reshape(be.lb, bshape));
    hi = t.add(hi, t.reshape(be.ub, bshape));
  }

  // positions whose receptive fields land in the same operand subblocks share
  // one output subblock
  SplitSet osp;
  osp.dims.resize(4);
  osp.dims[0] = x.splits.dims[0];
  osp.dims[1] = SplitSet::finest(Shape{out_shape[1]}).dims[0];
  osp.dims[2] = conv_group_splits(x.splits.dims[2], x.shape[2], k.shape[2], attrs.stride_h,
                                  attrs.pad_top, out_shape[2]);
  osp.dims[3] = conv_group_splits(x.splits.dims[3], x.shape[3], k.shape[3], attrs.stride_w,
                                  attrs.pad_left, out_shape[3]);

  Shape bs = osp.block_shape();
  auto estr = row_major_strides(out_shape);
  std::vector<int64_t> map(static_cast<size_t>(shape_numel(bs)));
  std::vector<int64_t> idx(4, 0);
  for (int64_t i = 0; i < shape_numel(bs); ++i) {
    int64_t flat = 0;
    for (size_t d = 0; d < 4; ++d)
      flat += osp.dims[d][static_cast<size_t>(idx[d])] * estr[d];
    map[static_cast<size_t>(i)] = flat;
    next_index(idx, bs);
  }

  AbstractValue out;
  out.lb = t.reindex(lo, bs, map);
  out.ub = t.reindex(hi, bs, map);
  out.splits = osp;
  out.shape = out_shape;
  return out;
}

// --- elementwise / structural -------------------------------------------------

AbstractValue av_elementwise(Tape& t, Op op, const std::vector<AbstractValue>& in,
                             const Attrs& attrs, DType dtype) {
  auto monotone = [&](const AbstractValue& a, const std::function<Var(Var)>& f) {
    AbstractValue out = a;
    out.lb = f(a.lb);
    out.ub = f(a.ub);
    return out;
  };
  auto anti_monotone = [&](const AbstractValue& a, const std::function<Var(Var)>& f) {
    AbstractValue out = a;
    out.lb = f(a.ub);
    out.ub = f(a.lb);
    return out;
  };

  switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Pow:
    case Op::Min:
    case Op::Max: {
      AlignResult al = align_many(t, {in[0], in[1]});
      Var la = al.ops[0].lb, ua = al.ops[0].ub, lb = al.ops[1].lb, ub = al.ops[1].ub;
      AbstractValue out;
      out.splits = al.out_splits;
      out.shape = al.out_shape;
      if (op == Op::Add) {
        out.lb = t.add(la, lb);
        out.ub = t.add(ua, ub);
      } else if (op == Op::Sub) {
        out.lb = t.sub(la, ub);
        out.ub = t.sub(ua, lb);
      } else if (op == Op::Min) {
        out.lb = t.minimum(la, lb);
        out.ub = t.minimum(ua, ub);
      } else if (op == Op::Max) {
        out.lb = t.maximum(la, lb);
        out.ub = t.maximum(ua, ub);
      } else if (op == Op::Mul) {
        Bounds b = interval_mul(t, la, ua, lb, ub);
        out.lb = b.lo;
        out.ub = b.hi;
      } else if (op == Op::Div) {
        Bounds b = interval_div(t, la, ua, lb, ub, dtype);
        out.lb = b.lo;
        out.ub = b.hi;
      } else {
        Bounds b = interval_pow(t, in[0], in[1], la, ua, lb, ub, dtype);
        out.lb = b.lo;
        out.ub = b.hi;
      }
      return out;
    }
    case Op::Neg:
      return anti_monotone(in[0], [&](Var v) { return t.neg(v); });
    case Op::SubFromConstant: {
      double c = attrs.get_double("value", 0.0);
      return anti_monotone(in[0], [&](Var v) { return t.sub(t.scalar_const(c), v); });
    }
    case Op::Exp:
      return monotone(in[0], [&](Var v) { return t.exp(v); });
    case Op::Sigmoid:
      return monotone(in[0], [&](Var v) { return t.sigmoid(v); });
    case Op::Tanh:
      return monotone(in[0], [&](Var v) { return t.tanh(v); });
    case Op::Softplus:
      return monotone(in[0], [&](Var v) { return t.softplus(v); });
    case Op::Relu:
      return monotone(in[0], [&](Var v) { return t.relu(v); });
    case Op::Log: {
      if (t.value(in[0].ub).max_value() < 0.0)
        throw DomainError("Log input interval is entirely negative");
      double umax = dtype_umax(dtype);
      auto guarded = [&](Var v) {
        Tensor pos = unary_map(t.value(v), [](double x) { return x > 0.0 ? 1.0 : 0.0; });
        Var safe = t.select(pos, v, t.scalar_const(1.0));
        return t.select(pos, t.log(safe), t.scalar_const(-umax));
      };
      // a lower bound below zero admits NaN from negative operands, which
      // only the total-uncertainty surrogate represents
      Tensor neg = unary_map(t.value(in[0].lb), [](double x) { return x < 0.0 ? 1.0 : 0.0; });
      AbstractValue out = in[0];
      out.lb = t.select(neg, t.scalar_const(-umax), guarded(in[0].lb));
      out.ub = t.select(neg, t.scalar_const(umax), guarded(in[0].ub));
      return out;
    }
    case Op::Sqrt: {
      if (t.value(in[0].ub).max_value() < 0.0)
        throw DomainError("Sqrt input interval is entirely negative");
      double umax = dtype_umax(dtype);
      auto guarded = [&](Var v) {
        Tensor pos = unary_map(t.value(v), [](double x) { return x > 0.0 ? 1.0 : 0.0; });
        Var safe = t.select(pos, v, t.scalar_const(1.0));
        return t.select(pos, t.sqrt(safe), t.scalar_const(0.0));
      };
      Tensor neg = unary_map(t.value(in[0].lb), [](double x) { return x < 0.0 ? 1.0 : 0.0; });
      AbstractValue out = in[0];
      out.lb = t.select(neg, t.scalar_const(-umax), guarded(in[0].lb));
      out.ub = t.select(neg, t.scalar_const(umax), guarded(in[0].ub));
      return out;
    }
    case Op::Reciprocal: {
      AbstractValue one;
      one.lb = t.scalar_const(1.0);
      one.ub = t.scalar_const(1.0);
      one.splits = SplitSet::coarsest(Shape{});
      one.shape = Shape{};
      AlignResult al = align_many(t, {one, in[0]});
      Bounds b = interval_div(t, al.ops[0].lb, al.ops[0].ub, al.ops[1].lb, al.ops[1].ub, dtype);
      AbstractValue out;
      out.lb = b.lo;
      out.ub = b.hi;
      out.splits = al.out_splits;
      out.shape = al.out_shape;
      return out;
    }
    case Op::Abs: {
      Tensor straddle = mask2(t, in[0].lb, in[0].ub, straddle_fn);
      Var absl = t.abs(in[0].lb), absu = t.abs(in[0].ub);
      AbstractValue out = in[0];
      out.lb = t.select(straddle, t.scalar_const(0.0), t.minimum(absl, absu));
      out.ub = t.maximum(absl, absu);
      return out;
    }
    case Op::Clip: {
      double lo_d = attrs.get_double("min", -std::numeric_limits<double>::infinity());
      double hi_d = attrs.get_double("max", std::numeric_limits<double>::infinity());
      AbstractValue loav, hiav;
      if (in.size() > 1) {
        loav = in[1];
      } else {
        loav.lb = loav.ub = t.scalar_const(lo_d);
        loav.splits = SplitSet::coarsest(Shape{});
        loav.shape = Shape{};
      }
      if (in.size() > 2) {
        hiav = in[2];
      } else {
        hiav.lb = hiav.ub = t.scalar_const(hi_d);
        hiav.splits = SplitSet::coarsest(Shape{});
        hiav.shape = Shape{};
      }
      AlignResult al = align_many(t, {in[0], loav, hiav});
      AbstractValue out;
      out.splits = al.out_splits;
      out.shape = al.out_shape;
      // clip is monotone in data, lower bound and upper bound
      out.lb = t.minimum(t.maximum(al.ops[0].lb, al.ops[1].lb), al.ops[2].lb);
      out.ub = t.minimum(t.maximum(al.ops[0].ub, al.ops[1].ub), al.ops[2].ub);
      return out;
    }
    case Op::Identity:
      return in[0];
    case Op::Shape_: {
      std::vector<double> vals(in[0].shape.begin(), in[0].shape.end());
      Tensor s(Shape{static_cast<int64_t>(in[0].shape.size())}, vals);
      AbstractValue out;
      out.lb = t.constant(s);
      out.ub = t.constant(s);
      out.shape = s.shape();
      out.splits = SplitSet::finest(out.shape);
      return out;
    }
    case Op::ConstantOfShape: {
      auto sv = av_point_value(t, in[0]);
      if (!sv) throw AnalysisError("ConstantOfShape requires a concrete shape operand");
      auto dims = tensor_to_ints(*sv, "shape");
      Shape os(dims.begin(), dims.end());
      Tensor fill(os, attrs.get_double("value", 0.0));
      AbstractValue out;
      out.lb = t.constant(fill);
      out.ub = t.constant(fill);
      out.shape = os;
      out.splits = SplitSet::finest(os);
      return out;
    }
    case Op::Transpose: {
      std::vector<int64_t> perm = attrs.get_ints("perm", {});
      if (perm.empty())
        for (int64_t i = static_cast<int64_t>(in[0].shape.size()) - 1; i >= 0; --i)
          perm.push_back(i);
      Shape bout;
      auto bmap = transpose_map(in[0].splits.block_shape(), perm, &bout);
      AbstractValue out;
      out.lb = t.reindex(in[0].lb, bout, bmap);
      out.ub = t.reindex(in[0].ub, bout, bmap);
      out.splits.dims.resize(perm.size());
      out.shape.resize(perm.size());
      for (size_t d = 0; d < perm.size(); ++d) {
        out.splits.dims[d] = in[0].splits.dims[static_cast<size_t>(perm[d])];
        out.shape[d] = in[0].shape[static_cast<size_t>(perm[d])];
      }
      return out;
    }
    case Op::Squeeze:
    case Op::Unsqueeze: {
      std::vector<Tensor> vals;
      vals.push_back(Tensor(in[0].shape, 0.0));  // placeholder carrying the shape
      if (in.size() > 1) {
        auto axes = av_point_value(t, in[1]);
        if (!axes) throw AnalysisError("Squeeze/Unsqueeze axes must be concrete");
        vals.push_back(*axes);
      }
      Shape target = eval_op(op, vals, attrs).shape();
      // squeeze/unsqueeze only inserts or drops unit dimensions; map splits
      AbstractValue xe = av_elements(t, in[0]);
      AbstractValue out;
      out.lb = t.reshape(xe.lb, target);
      out.ub = t.reshape(xe.ub, target);
      out.shape = target;
      out.splits = SplitSet::finest(target);
      return out;
    }
    case Op::Reshape: {
      auto spec = av_point_value(t, in[1]);
      if (!spec) throw AnalysisError("Reshape requires a concrete shape operand");
      Shape target = reshape_target_shape(in[0].shape, *spec);
      AbstractValue xe = av_elements(t, in[0]);
      AbstractValue out;
      out.lb = t.reshape(xe.lb, target);
      out.ub = t.reshape(xe.ub, target);
      out.shape = target;
      out.splits = SplitSet::finest(target);
      return out;
    }
    case Op::Slice: {
      auto starts = av_point_value(t, in[1]);
      auto ends = av_point_value(t, in[2]);
      std::optional<Tensor> axes, steps;
      if (in.size() > 3) axes = av_point_value(t, in[3]);
      if (in.size() > 4) steps = av_point_value(t, in[4]);
      if (!starts || !ends || (in.size() > 3 && !axes) || (in.size() > 4 && !steps))
        throw AnalysisError("Slice requires concrete start/end/axes/step operands");
      SliceSpec spec = resolve_slice(in[0].shape, *starts, *ends, axes ? &*axes : nullptr,
                                     steps ? &*steps : nullptr);
      Shape os;
      auto m = slice_map(in[0].shape, spec, &os);
      AbstractValue xe = av_elements(t, in[0]);
      AbstractValue out;
      out.lb = t.reindex(xe.lb, os, m);
      out.ub = t.reindex(xe.ub, os, m);
      out.shape = os;
      out.splits = SplitSet::finest(os);
      return out;
    }
    case Op::Gather: {
      auto idx = av_point_value(t, in[1]);
      if (!idx) throw AnalysisError("Gather requires concrete indices");
      Shape os;
      auto m = gather_map(in[0].shape, *idx, attrs.get_int("axis", 0), &os);
      AbstractValue xe = av_elements(t, in[0]);
      AbstractValue out;
      out.lb = t.reindex(xe.lb, os, m);
      out.ub = t.reindex(xe.ub, os, m);
      out.shape = os;
      out.splits = SplitSet::finest(os);
      return out;
    }
    case Op::Concat: {
      int64_t axis = attrs.get_int("axis", 0);
      std::vector<Var> lbs, ubs;
      std::vector<Shape> shapes;
      for (const AbstractValue& a : in) {
        AbstractValue e = av_elements(t, a);
        lbs.push_back(e.lb);
        ubs.push_back(e.ub);
        shapes.push_back(a.shape);
      }
      Shape os;
      concat_maps(shapes, axis, &os);
      AbstractValue out;
      out.lb = t.concat(lbs, axis);
      out.ub = t.concat(ubs, axis);
      out.shape = os;
      out.splits = SplitSet::finest(os);
      return out;
    }
    case Op::ReduceSum:
    case Op::ReduceMean:
    case Op::ReduceMax:
    case Op::ReduceMin: {
      std::vector<int64_t> axes;
      if (op == Op::ReduceSum && in.size() > 1) {
        auto a = av_point_value(t, in[1]);
        if (!a) throw AnalysisError("ReduceSum axes must be concrete");
        axes = tensor_to_ints(*a, "axes");
      } else if (attrs.has("axes")) {
        axes = attrs.get_ints("axes", {});
      } else {
        for (size_t i = 0; i < in[0].shape.size(); ++i) axes.push_back(static_cast<int64_t>(i));
      }
      for (int64_t& a : axes)
        if (a < 0) a += static_cast<int64_t>(in[0].shape.size());
      bool keep = attrs.get_int("keepdims", 1) != 0;

      std::vector<bool> red(in[0].shape.size(), false);
      for (int64_t a : axes) red[static_cast<size_t>(a)] = true;

      AbstractValue out;
      out.shape = reduce_out_shape(in[0].shape, axes, keep);
      out.splits.dims.clear();
      for (size_t d = 0; d < in[0].shape.size(); ++d) {
        if (red[d]) {
          if (keep) out.splits.dims.push_back({0});
        } else {
          out.splits.dims.push_back(in[0].splits.dims[d]);
        }
      }

      if (op == Op::ReduceMax) {
        out.lb = t.reduce_max(in[0].lb, axes, keep);
        out.ub = t.reduce_max(in[0].ub, axes, keep);
        return out;
      }
      if (op == Op::ReduceMin) {
        out.lb = t.reduce_min(in[0].lb, axes, keep);
        out.ub = t.reduce_min(in[0].ub, axes, keep);
        return out;
      }
      // sums accumulate block bounds with their multiplicities
      auto sizes = in[0].splits.block_sizes(in[0].shape);
      Shape bs = in[0].splits.block_shape();
      Tensor v(bs, 1.0);
      std::vector<int64_t> bidx(bs.size(), 0);
      for (int64_t i = 0; i < v.numel(); ++i) {
        double prod = 1.0;
        for (size_t d = 0; d < bs.size(); ++d)
          if (red[d]) prod *= static_cast<double>(sizes[d][static_cast<size_t>(bidx[d])]);
        v.at(i) = prod;
        next_index(bidx, bs);
      }
      Var vc = t.constant(v);
      out.lb = t.reduce_sum(t.mul(in[0].lb, vc), axes, keep);
      out.ub = t.reduce_sum(t.mul(in[0].ub, vc), axes, keep);
      if (op == Op::ReduceMean) {
        double count = 1.0;
        for (size_t d = 0; d < red.size(); ++d)
          if (red[d]) count *= static_cast<double>(in[0].shape[d]);
        Var inv = t.scalar_const(1.0 / count);
        out.lb = t.mul(out.lb, inv);
        out.ub = t.mul(out.ub, inv);
      }
      return out;
    }
    default:
      throw UnsupportedOperator("no transfer function registered for this operator");
  }
}

// --- public concrete wrappers ---------------------------------------------------

namespace {

PartitionedInterval read_back(const Tape& t, const AbstractValue& av) {
  PartitionedInterval p;
  p.lb = t.value(av.lb);
  p.ub = t.value(av.ub);
  p.splits = av.splits;
  p.shape = av.shape;
  return p;
}

}  // namespace

PartitionedInterval transfer_matmul_tight(const PartitionedInterval& a,
                                          const PartitionedInterval& b) {
  Tape t;
  return read_back(t, av_matmul(t, av_lift(t, a), av_lift(t, b), true));
}

PartitionedInterval transfer_matmul_fast(const PartitionedInterval& a,
                                         const PartitionedInterval& b) {
  Tape t;
  return read_back(t, av_matmul(t, av_lift(t, a), av_lift(t, b), false));
}

PartitionedInterval transfer_softmax(const PartitionedInterval& a, int64_t axis) {
  Tape t;
  return read_back(t, av_softmax(t, av_lift(t, a), axis, false));
}

PartitionedInterval transfer_conv(const PartitionedInterval& x, const PartitionedInterval& k,
                                  const PartitionedInterval* bias, const Attrs& attrs) {
  Tape t;
  AbstractValue bav;
  if (bias) bav = av_lift(t, *bias);
  return read_back(t, av_conv(t, av_lift(t, x), av_lift(t, k), bias ? &bav : nullptr,
                              conv_attrs_from(attrs)));
}

PartitionedInterval transfer_elementwise(Op op, const std::vector<PartitionedInterval>& operands,
                                         const Attrs& attrs, DType dtype) {
  Tape t;
  std::vector<AbstractValue> in;
  for (const PartitionedInterval& p : operands) in.push_back(av_lift(t, p));
  return read_back(t, av_elementwise(t, op, in, attrs, dtype));
}

// --- the analysis driver --------------------------------------------------------

namespace {

struct DriverCtx {
  Tape& t;
  const AnalyzeOptions& opt;
};

std::map<std::string, AbstractValue> analyze_subgraph(DriverCtx& c, const Graph& g,
                                                      const std::map<std::string, AbstractValue>&
                                                          injected);

AbstractValue av_range_transfer(DriverCtx& c, const Node& n,
                                const std::vector<AbstractValue>& in) {
  Tape& t = c.t;
  auto s = av_point_value(t, in[0]);
  auto l = av_point_value(t, in[1]);
  auto d = av_point_value(t, in[2]);
  if (s && l && d) {
    double start = s->scalar_value(), limit = l->scalar_value(), delta = d->scalar_value();
    double cnt = std::ceil((limit - start) / delta);
    if (std::isfinite(cnt) && cnt >= 1 && static_cast<int64_t>(cnt) == n.shape[0]) {
      Tensor vals(n.shape);
      for (int64_t i = 0; i < vals.numel(); ++i)
        vals.at(i) = start + static_cast<double>(i) * delta;
      AbstractValue out;
      out.lb = t.constant(vals);
      out.ub = t.constant(vals);
      out.shape = n.shape;
      out.splits = SplitSet::finest(n.shape);
      return out;
    }
  }
  // extent or values unresolved: total-uncertainty surrogate
  double umax = dtype_umax(n.dtype);
  AbstractValue out;
  out.lb = t.constant(Tensor(n.shape, -umax));
  out.ub = t.constant(Tensor(n.shape, umax));
  out.shape = n.shape;
  out.splits = SplitSet::finest(n.shape);
  return out;
}

AbstractValue av_nll_transfer(DriverCtx& c, const Node& n, const std::vector<AbstractValue>& in,
                              AbstractValue* denom_out) {
  Tape& t = c.t;
  auto target = av_point_value(t, in[1]);
  int64_t N = in[0].shape[0], C = in[0].shape[1];
  AbstractValue se = av_elements(t, in[0]);

  Var sl, su;
  if (target) {
    auto targets = tensor_to_ints(*target, "nll target");
    std::vector<int64_t> pick(static_cast<size_t>(N));
    for (int64_t i = 0; i < N; ++i) {
      if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= C)
        throw AnalysisError("nll target out of range");
      pick[static_cast<size_t>(i)] = i * C + targets[static_cast<size_t>(i)];
    }
    sl = t.reindex(se.lb, Shape{N}, pick);
    su = t.reindex(se.ub, Shape{N}, pick);
  } else {
    // unknown targets: any class may be selected
    sl = t.reduce_min(t.reshape(se.lb, Shape{N, C}), {1}, false);
    su = t.reduce_max(t.reshape(se.ub, Shape{N, C}), {1}, false);
  }

  Var wl, wu;
  if (in.size() > 2) {
    AbstractValue we = av_elements(t, in[2]);
    if (target) {
      auto targets = tensor_to_ints(*target, "nll target");
      std::vector<int64_t> wm(static_cast<size_t>(N));
      for (int64_t i = 0; i < N; ++i) wm[static_cast<size_t>(i)] = targets[static_cast<size_t>(i)];
      wl = t.reindex(we.lb, Shape{N}, wm);
      wu = t.reindex(we.ub, Shape{N}, wm);
    } else {
      Var mn = t.reduce_min_all(we.lb);
      Var mx = t.reduce_max_all(we.ub);
      wl = t.broadcast(t.reshape(mn, Shape{1}), Shape{N});
      wu = t.broadcast(t.reshape(mx, Shape{1}), Shape{N});
    }
  } else {
    wl = t.constant(Tensor(Shape{N}, 1.0));
    wu = t.constant(Tensor(Shape{N}, 1.0));
  }

  Bounds prod = interval_mul(t, wl, wu, sl, su);  // w * s
  Var lo_i = t.neg(prod.hi), hi_i = t.neg(prod.lo);

  std::string red = n.attrs.get_string("reduction", "mean");
  if (red == "none") {
    AbstractValue out;
    out.lb = lo_i;
    out.ub = hi_i;
    out.shape = Shape{N};
    out.splits = SplitSet::finest(out.shape);
    return out;
  }
  Var num_lo = t.reduce_sum_all(lo_i), num_hi = t.reduce_sum_all(hi_i);
  Var den_lo = t.reduce_sum_all(wl), den_hi = t.reduce_sum_all(wu);
  AbstractValue den;
  den.lb = t.reshape(den_lo, Shape{});
  den.ub = t.reshape(den_hi, Shape{});
  den.shape = Shape{};
  den.splits = SplitSet::coarsest(Shape{});
  if (denom_out) *denom_out = den;

  AbstractValue out;
  out.shape = Shape{};
  out.splits = SplitSet::coarsest(Shape{});
  if (red == "sum") {
    out.lb = t.reshape(num_lo, Shape{});
    out.ub = t.reshape(num_hi, Shape{});
    return out;
  }
  Bounds q = interval_div(t, t.reshape(num_lo, Shape{}), t.reshape(num_hi, Shape{}), den.lb,
                          den.ub, n.dtype);
  out.lb = q.lo;
  out.ub = q.hi;
  return out;
}

AbstractValue av_loop_transfer(DriverCtx& c, const Node& n,
                               const std::vector<AbstractValue>& in) {
  Tape& t = c.t;
  const Graph& body = *n.body;
  // endpoint gradients stop at loop boundaries: iterate on detached values
  AbstractValue carried = av_detach(t, in[2]);
  AbstractValue cond = av_detach(t, in[1]);
  double ml = t.value(in[0].lb).min_value();
  double mu = t.value(in[0].ub).max_value();

  int64_t i = 0;
  while (true) {
    double cl = t.value(cond.lb).min_value();
    double cu = t.value(cond.ub).max_value();
    bool cond_definitely_false = cl == 0.0 && cu == 0.0;
    bool cond_definitely_true = cl > 0.0 || cu < 0.0;
    bool possibly_more = static_cast<double>(i) < mu && !cond_definitely_false;
    if (!possibly_more) break;
    bool definitely_more = static_cast<double>(i) < ml && cond_definitely_true;

    std::map<std::string, AbstractValue> injected;
    Tensor iter = Tensor(body.node(body.body_inputs[0]).shape, static_cast<double>(i));
    AbstractValue iter_av;
    iter_av.lb = t.constant(iter);
    iter_av.ub = t.constant(iter);
    iter_av.shape = iter.shape();
    iter_av.splits = SplitSet::finest(iter.shape());
    injected[body.body_inputs[0]] = iter_av;
    injected[body.body_inputs[1]] = cond;
    injected[body.body_inputs[2]] = carried;
    auto body_abs = analyze_subgraph(c, body, injected);
    AbstractValue next_cond = body_abs.at(body.body_outputs[0]);
    AbstractValue next_carried = body_abs.at(body.body_outputs[1]);

    if (definitely_more) {
      carried = next_carried;
      cond = next_cond;
    } else {
      carried = av_join(t, carried, next_carried);
      cond = av_join(t, cond, next_cond);
    }
    if (++i > c.opt.loop_budget)
      throw LoopBudgetExceeded("abstract Loop iteration exceeded " +
                               std::to_string(c.opt.loop_budget) +
                               " steps; a widening operator would be required");
  }
  return carried;
}

AbstractValue transfer_node(DriverCtx& c, const Node& n, const std::vector<AbstractValue>& in,
                            AbstractValue* aux_out) {
  Tape& t = c.t;
  AbstractValue out;
  switch (n.op) {
    case Op::MatMul:
      out = av_matmul(t, in[0], in[1], c.opt.matmul_mode == AnalyzeOptions::Mode::Tight);
      break;
    case Op::Gemm: {
      AbstractValue a = in[0], b = in[1];
      auto transpose_av = [&](const AbstractValue& x) {
        Shape bout;
        auto bmap = transpose_map(x.splits.block_shape(), {1, 0}, &bout);
        AbstractValue o;
        o.lb = t.reindex(x.lb, bout, bmap);
        o.ub = t.reindex(x.ub, bout, bmap);
        o.shape = Shape{x.shape[1], x.shape[0]};
        o.splits.dims = {x.splits.dims[1], x.splits.dims[0]};
        return o;
      };
      if (n.attrs.get_int("transA", 0)) a = transpose_av(a);
      if (n.attrs.get_int("transB", 0)) b = transpose_av(b);
      out = av_matmul(t, a, b, c.opt.matmul_mode == AnalyzeOptions::Mode::Tight);
      double alpha = n.attrs.get_double("alpha", 1.0);
      if (alpha != 1.0) {
        Var s = t.scalar_const(alpha);
        Var l2 = t.mul(alpha >= 0 ? out.lb : out.ub, s);
        Var u2 = t.mul(alpha >= 0 ? out.ub : out.lb, s);
        out.lb = l2;
        out.ub = u2;
      }
      if (in.size() > 2) {
        AbstractValue cpart = in[2];
        double beta = n.attrs.get_double("beta", 1.0);
        if (beta != 1.0) {
          Var s = t.scalar_const(beta);
          Var l2 = t.mul(beta >= 0 ? cpart.lb : cpart.ub, s);
          Var u2 = t.mul(beta >= 0 ? cpart.ub : cpart.lb, s);
          cpart.lb = l2;
          cpart.ub = u2;
        }
        out = av_elementwise(t, Op::Add, {out, cpart}, Attrs{}, n.dtype);
      }
      break;
    }
    case Op::Conv: {
      out = av_conv(t, in[0], in[1], in.size() > 2 ? &in[2] : nullptr,
                    conv_attrs_from(n.attrs));
      break;
    }
    case Op::Softmax:
      out = av_softmax(t, in[0], n.attrs.get_int("axis", -1), false);
      break;
    case Op::LogSoftmax:
      out = av_softmax(t, in[0], n.attrs.get_int("axis", -1), true);
      break;
    case Op::Range:
      out = av_range_transfer(c, n, in);
      break;
    case Op::NegativeLogLikelihoodLoss:
      out = av_nll_transfer(c, n, in, aux_out);
      break;
    case Op::Loop:
      out = av_loop_transfer(c, n, in);
      break;
    default:
      out = av_elementwise(t, n.op, in, n.attrs, n.dtype);
      break;
  }
  out.lb = clamp_finite(t, out.lb);
  out.ub = clamp_finite(t, out.ub);
  // execution flushes node outputs below the dtype's smallest normal to
  // zero; flushing is monotone, so flushing the bounds is exact
  double umin = dtype_umin(n.dtype);
  auto flush_bound = [&](Var v) {
    Tensor keep = unary_map(
        t.value(v), [umin](double x) { return x == 0.0 || std::abs(x) >= umin ? 1.0 : 0.0; });
    return t.select(keep, v, t.scalar_const(0.0));
  };
  out.lb = flush_bound(out.lb);
  out.ub = flush_bound(out.ub);
  return out;
}

AbstractValue initial_abstraction(DriverCtx& c, const Node& n, const SplitSet& splits,
                                  const ValidRanges& vr, bool differentiable,
                                  std::map<std::string, Var>* endpoints) {
  Tape& t = c.t;
  // stored values abstract exactly; otherwise the valid range supplies bounds
  if (n.kind == NodeKind::Constant || (n.init && !vr.has_override(n.id))) {
    return av_lift(t, PartitionedInterval::point(*n.init, splits));
  }
  ValidRange r = vr.resolve(n);
  Shape bs = splits.block_shape();
  Tensor lo_b(bs), hi_b(bs);
  if (r.is_scalar()) {
    lo_b = Tensor(bs, r.lo);
    hi_b = Tensor(bs, r.hi);
  } else {
    auto [lo_t, hi_t] = vr.element_bounds(n);
    lo_b = abstract_from_samples({lo_t}, splits).lb;
    hi_b = abstract_from_samples({hi_t}, splits).ub;
  }
  AbstractValue av;
  if (differentiable) {
    av.lb = t.leaf(lo_b);
    av.ub = t.leaf(hi_b);
    if (endpoints) {
      (*endpoints)[n.id + ":lb"] = av.lb;
      (*endpoints)[n.id + ":ub"] = av.ub;
    }
  } else {
    av.lb = t.constant(lo_b);
    av.ub = t.constant(hi_b);
  }
  av.splits = splits;
  av.shape = n.shape;
  return av;
}

// Loop bodies: constants plus injected formal inputs, no valid ranges.
std::map<std::string, AbstractValue> analyze_subgraph(
    DriverCtx& c, const Graph& g, const std::map<std::string, AbstractValue>& injected) {
  std::set<std::string> labels = label_fine_grained(g);
  std::map<std::string, AbstractValue> abs;
  for (const std::string& id : g.topo_order()) {
    const Node& n = g.node(id);
    if (n.is_initial()) {
      auto it = injected.find(id);
      if (it != injected.end()) {
        abs[id] = it->second;
      } else if (n.init) {
        SplitSet sp = labels.count(id) ? SplitSet::finest(n.shape) : SplitSet::coarsest(n.shape);
        abs[id] = av_lift(c.t, PartitionedInterval::point(*n.init, sp));
      } else {
        throw AnalysisError("loop body node '" + id + "' has no injected abstraction");
      }
      continue;
    }
    std::vector<AbstractValue> in;
    for (const std::string& p : g.inputs_of(id)) in.push_back(abs.at(p));
    abs[id] = transfer_node(c, n, in, nullptr);
  }
  return abs;
}

}  // namespace

AbstractState analyze_with_tape(const Graph& g, const ValidRanges& vr,
                                const GranularityPolicy& pol, const AnalyzeOptions& opt,
                                std::shared_ptr<Tape> tape, const Impositions& imposed) {
  AbstractState st;
  st.tape = tape;
  st.differentiable = opt.differentiable;
  DriverCtx c{*tape, opt};
  std::set<std::string> labels = label_fine_grained(g);

  auto imposed_av = [&](const ImposedInterval& imp, const Shape& shape,
                        const SplitSet& splits) {
    AbstractValue av;
    av.lb = tape->broadcast(imp.lb, splits.block_shape());
    av.ub = tape->broadcast(imp.ub, splits.block_shape());
    av.splits = splits;
    av.shape = shape;
    return av;
  };

  for (const std::string& id : g.topo_order()) {
    const Node& n = g.node(id);
    AbstractState::NodeAbs na;
    if (n.is_initial()) {
      // labeled nodes must be elementwise; stored values are free to keep
      // exact at element resolution; the policy covers the rest
      GranularityPolicy::Gran gran;
      if (labels.count(id)) gran = GranularityPolicy::Gran::Finest;
      else if (pol.per_node.count(id)) gran = pol.per_node.at(id);
      else if (n.init && !vr.has_override(id)) gran = GranularityPolicy::Gran::Finest;
      else gran = pol.default_gran;
      SplitSet splits = gran == GranularityPolicy::Gran::Finest ? SplitSet::finest(n.shape)
                                                                : SplitSet::coarsest(n.shape);
      auto imp = imposed.find(id);
      if (imp != imposed.end() && imp->second.slot == 0) {
        na.output = imposed_av(imp->second, n.shape, splits);
        st.endpoints[id + ":imposed_lb"] = imp->second.lb;
        st.endpoints[id + ":imposed_ub"] = imp->second.ub;
      } else {
        na.output = initial_abstraction(c, n, splits, vr, opt.differentiable, &st.endpoints);
      }
    } else {
      for (size_t s = 0; s < g.inputs_of(id).size(); ++s) {
        const std::string& p = g.inputs_of(id)[s];
        AbstractValue in_av = st.nodes.at(p).output;
        auto imp = imposed.find(id);
        if (imp != imposed.end() && imp->second.slot == static_cast<int>(s) + 1) {
          in_av = imposed_av(imp->second, in_av.shape, SplitSet::coarsest(in_av.shape));
          st.endpoints[id + ":imposed_lb"] = imp->second.lb;
          st.endpoints[id + ":imposed_ub"] = imp->second.ub;
        }
        na.inputs.push_back(in_av);
      }
      AbstractValue aux;
      bool want_aux = n.op == Op::NegativeLogLikelihoodLoss;
      na.output = transfer_node(c, n, na.inputs, want_aux ? &aux : nullptr);
      if (want_aux && aux.lb.valid()) st.aux["nll_denom:" + id] = aux;
    }
    st.nodes[id] = std::move(na);
  }
  return st;
}

AbstractState analyze(const Graph& g, const ValidRanges& vr, const GranularityPolicy& pol,
                      const AnalyzeOptions& opt) {
  return analyze_with_tape(g, vr, pol, opt, std::make_shared<Tape>(), {});
}

std::map<std::string, Tensor> endpoint_gradients(const AbstractState& state, Var objective) {
  if (!state.differentiable)
    throw NotDifferentiableMode("analysis was not run in differentiable mode");
  std::vector<std::string> names;
  std::vector<Var> vars;
  for (const auto& [name, v] : state.endpoints) {
    names.push_back(name);
    vars.push_back(v);
  }
  std::vector<Var> grads = state.tape->backward(objective, vars);
  std::map<std::string, Tensor> out;
  for (size_t i = 0; i < names.size(); ++i) out[names[i]] = state.tape->value(grads[i]);
  return out;
}

}  // namespace ranum
