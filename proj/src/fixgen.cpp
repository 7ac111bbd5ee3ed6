#include "ranum/fixgen.hpp"

#include <algorithm>
#include <cmath>

namespace ranum {

namespace {

// Penetration of one defect's (re-analyzed) input abstraction into its
// invalid range, as a differentiable scalar on the analysis tape.
Var penetration_var(Tape& t, const Graph& g, const AbstractState& st, const DefectReport& d) {
  const Node& n = g.node(d.node);
  double umin = dtype_umin(n.dtype);
  auto expand = [&](const AbstractValue& av) {
    return av_refine(t, av, SplitSet::finest(av.shape));
  };
  switch (d.op) {
    case Op::Log:
    case Op::Sqrt: {
      const AbstractValue& av = st.input_of(d.node, 0);
      return t.sub(t.scalar_const(umin), t.reduce_min_all(av.lb));
    }
    case Op::Exp: {
      const AbstractValue& av = st.input_of(d.node, 0);
      return t.sub(t.reduce_max_all(av.ub), t.scalar_const(dtype_ln_umax(n.dtype)));
    }
    case Op::Div:
    case Op::Reciprocal:
    case Op::Range: {
      size_t slot = d.op == Op::Div ? 1 : (d.op == Op::Range ? 2 : 0);
      const AbstractValue& av = st.input_of(d.node, slot);
      Var a = t.sub(t.scalar_const(umin), av.lb);   // > 0 iff lb < U_min
      Var b = t.add(av.ub, t.scalar_const(umin));   // > 0 iff ub > -U_min
      return t.reduce_max_all(t.minimum(a, b));
    }
    case Op::Pow: {
      AbstractValue base = expand(st.input_of(d.node, 0));
      AbstractValue expo = expand(st.input_of(d.node, 1));
      Var base_pen = t.minimum(t.sub(t.scalar_const(umin), base.lb),
                               t.add(base.ub, t.scalar_const(umin)));
      Var exp_pen = t.sub(t.scalar_const(-umin), expo.lb);  // > 0 iff lb < -U_min
      return t.reduce_max_all(t.minimum(base_pen, exp_pen));
    }
    case Op::NegativeLogLikelihoodLoss: {
      auto it = st.aux.find("nll_denom:" + d.node);
      if (it == st.aux.end()) throw AnalysisError("missing NLL denominator abstraction");
      Var a = t.sub(t.scalar_const(umin), it->second.lb);
      Var b = t.add(it->second.ub, t.scalar_const(umin));
      return t.reduce_max_all(t.minimum(a, b));
    }
    default:
      throw NotDefectProne("no precondition loss for this operator");
  }
}

Var total_penetration(Tape& t, const Graph& g, const AbstractState& st,
                      const std::vector<DefectReport>& targets) {
  Var loss;
  for (const DefectReport& d : targets) {
    Var p = penetration_var(t, g, st, d);
    loss = loss.valid() ? t.maximum(loss, p) : p;
  }
  if (!loss.valid()) throw ConfigError("fix request has no targeted defects");
  return loss;
}

std::pair<double, double> site_valid_range(const Graph& g, const FixSite& proto,
                                           const ValidRanges& vr, const AbstractState& baseline) {
  const Node& n = g.node(proto.node);
  if (proto.slot == 0) {
    ValidRange r = vr.resolve(n);
    if (r.is_scalar()) return {r.lo, r.hi};
    return {r.lo_t->min_value(), r.hi_t->max_value()};
  }
  PartitionedInterval p = baseline.concrete_input(proto.node, static_cast<size_t>(proto.slot) - 1);
  double umax = dtype_umax(n.dtype);
  double lo = std::clamp(p.lb.min_value(), -umax, umax);
  double hi = std::clamp(p.ub.max_value(), -umax, umax);
  return {lo, hi};
}

}  // namespace

FixRequest make_fix_request(const Graph& g, const std::vector<DefectReport>& defects,
                            FixPreset preset, const std::vector<std::string>& explicit_nodes,
                            const ValidRanges& vr, const GranularityPolicy& pol,
                            const AnalyzeOptions& opt) {
  FixRequest req;
  req.targets = defects;

  std::vector<FixSite> protos;
  auto add_initial = [&](const std::string& id) { protos.push_back(FixSite{id, 0, 0, 0}); };
  switch (preset) {
    case FixPreset::WeightsInputs:
      for (const std::string& id : g.weight_node_ids()) add_initial(id);
      for (const std::string& id : g.input_node_ids()) add_initial(id);
      break;
    case FixPreset::Weights:
      for (const std::string& id : g.weight_node_ids()) add_initial(id);
      break;
    case FixPreset::Inputs:
      for (const std::string& id : g.input_node_ids()) add_initial(id);
      break;
    case FixPreset::DefectNodes:
      for (const DefectReport& d : defects) protos.push_back(FixSite{d.node, d.slot, 0, 0});
      break;
    case FixPreset::Explicit:
      for (const std::string& id : explicit_nodes) {
        const Node& n = g.node(id);
        if (n.is_initial()) {
          add_initial(id);
        } else {
          int slot = 1;
          for (const DefectReport& d : defects)
            if (d.node == id) slot = d.slot;
          protos.push_back(FixSite{id, slot, 0, 0});
        }
      }
      break;
  }
  if (protos.empty()) throw ConfigError("fix preset resolves to an empty node set");

  bool need_baseline = false;
  for (const FixSite& s : protos)
    if (s.slot != 0) need_baseline = true;
  AbstractState baseline;
  if (need_baseline) baseline = analyze(g, vr, pol, opt);

  for (FixSite s : protos) {
    auto [lo, hi] = site_valid_range(g, s, vr, baseline);
    s.valid_lo = lo;
    s.valid_hi = hi;
    req.sites.push_back(s);
  }
  std::sort(req.sites.begin(), req.sites.end(),
            [](const FixSite& a, const FixSite& b) { return a.node < b.node; });
  return req;
}

namespace {

struct ImposedLeaves {
  std::shared_ptr<Tape> tape;
  Impositions imp;
  std::map<std::string, std::pair<Var, Var>> leaves;  // node -> (lb leaf, ub leaf)
};

ImposedLeaves build_leaves(const FixRequest& req,
                           const std::map<std::string, std::pair<double, double>>& bounds) {
  ImposedLeaves out;
  out.tape = std::make_shared<Tape>();
  for (const FixSite& s : req.sites) {
    auto [l, u] = bounds.at(s.node);
    Var lv = out.tape->leaf(Tensor::scalar(l));
    Var uv = out.tape->leaf(Tensor::scalar(u));
    out.imp[s.node] = ImposedInterval{lv, uv, s.slot};
    out.leaves[s.node] = {lv, uv};
  }
  return out;
}

}  // namespace

double precond_loss(const Graph& g, const FixRequest& req,
                    const std::map<std::string, std::pair<double, double>>& bounds,
                    const ValidRanges& vr, const GranularityPolicy& pol,
                    const AnalyzeOptions& opt) {
  AnalyzeOptions dopt = opt;
  dopt.differentiable = true;
  ImposedLeaves il = build_leaves(req, bounds);
  AbstractState st = analyze_with_tape(g, vr, pol, dopt, il.tape, il.imp);
  Var loss = total_penetration(*il.tape, g, st, req.targets);
  return il.tape->value(loss).scalar_value();
}

std::map<std::string, std::pair<double, double>> precond_loss_gradients(
    const Graph& g, const FixRequest& req,
    const std::map<std::string, std::pair<double, double>>& bounds, const ValidRanges& vr,
    const GranularityPolicy& pol, const AnalyzeOptions& opt) {
  AnalyzeOptions dopt = opt;
  dopt.differentiable = true;
  ImposedLeaves il = build_leaves(req, bounds);
  AbstractState st = analyze_with_tape(g, vr, pol, dopt, il.tape, il.imp);
  Var loss = total_penetration(*il.tape, g, st, req.targets);
  std::vector<Var> wrt;
  std::vector<std::string> names;
  for (const auto& [node, lv] : il.leaves) {
    wrt.push_back(lv.first);
    wrt.push_back(lv.second);
    names.push_back(node);
  }
  std::vector<Var> grads = il.tape->backward(loss, wrt);
  std::map<std::string, std::pair<double, double>> out;
  for (size_t i = 0; i < names.size(); ++i)
    out[names[i]] = {il.tape->value(grads[2 * i]).scalar_value(),
                     il.tape->value(grads[2 * i + 1]).scalar_value()};
  return out;
}

std::optional<Fix> abstraction_optimization(const Graph& g, const FixRequest& req,
                                            const ValidRanges& vr, const GranularityPolicy& pol,
                                            const AnalyzeOptions& opt, const FixOptions& fopt) {
  AnalyzeOptions dopt = opt;
  dopt.differentiable = true;

  std::map<std::string, double> center;
  std::map<std::string, std::pair<double, double>> bounds;
  for (const FixSite& s : req.sites) {
    center[s.node] = 0.5 * (s.valid_lo + s.valid_hi);
    bounds[s.node] = {s.valid_lo, s.valid_hi};
  }

  double span = 1.0;
  for (int iter = 1; iter <= fopt.maxiter; ++iter) {
    for (const FixSite& s : req.sites) {
      ImposedLeaves il = build_leaves(req, bounds);
      AbstractState st = analyze_with_tape(g, vr, pol, dopt, il.tape, il.imp);
      Var loss = total_penetration(*il.tape, g, st, req.targets);
      auto [lv, uv] = il.leaves.at(s.node);
      std::vector<Var> grads = il.tape->backward(loss, {lv, uv});
      double gc = il.tape->value(grads[0]).scalar_value() +
                  il.tape->value(grads[1]).scalar_value();
      double& c = center[s.node];
      if (fopt.gd_update) {
        c -= fopt.gamma_c * gc;
      } else {
        double sign = gc > 0.0 ? 1.0 : (gc < 0.0 ? -1.0 : 0.0);
        c -= fopt.gamma_c * std::max(std::abs(c), fopt.minstep) * sign;
      }
      double half = 0.5 * span * (s.valid_hi - s.valid_lo);
      double l = std::max(c - half, s.valid_lo);
      double u = std::min(c + half, s.valid_hi);
      if (l > u) std::swap(l, u);
      bounds[s.node] = {l, u};
    }
    double loss = precond_loss(g, req, bounds, vr, pol, opt);
    if (loss < 0.0) {
      Fix fix;
      fix.bounds = bounds;
      fix.span = span;
      fix.iterations = iter;
      Graph fixed = apply_fix(g, req, fix);
      if (verify_fix(fixed, req.targets, vr, pol, opt, fopt.verify_samples, fopt.verify_seed)) {
        fix.verified = true;
        return fix;
      }
      // marginal dtype-rounding miss: keep shrinking
    }
    span *= fopt.gamma_s;
  }
  return std::nullopt;
}

Graph apply_fix(const Graph& g, const FixRequest& req, const Fix& fix) {
  Graph out;
  out.name = g.name;
  out.nodes = g.nodes;
  out.edges = g.edges;
  out.loss_node = g.loss_node;

  auto unique_id = [&](std::string base) {
    auto exists = [&](const std::string& id) {
      for (const Node& n : out.nodes)
        if (n.id == id) return true;
      return false;
    };
    while (exists(base)) base += "_";
    return base;
  };

  for (const FixSite& s : req.sites) {
    auto it = fix.bounds.find(s.node);
    if (it == fix.bounds.end()) continue;
    auto [l, u] = it->second;
    const Node& target = g.node(s.node);
    Node clip;
    clip.id = unique_id(s.node + "__clip");
    clip.kind = NodeKind::Operator;
    clip.op = Op::Clip;
    clip.attrs.json["min"] = l;
    clip.attrs.json["max"] = u;

    if (s.slot == 0) {
      // initial node: clip on its output edge
      clip.shape = target.shape;
      clip.dtype = target.dtype;
      for (Edge& e : out.edges)
        if (e.from == s.node) e.from = clip.id;
      out.edges.push_back(Edge{s.node, 0, clip.id, 0});
    } else {
      // internal node: clip on the offending input edge
      bool found = false;
      for (Edge& e : out.edges) {
        if (e.to == s.node && e.to_slot == s.slot - 1) {
          const Node& producer = g.node(e.from);
          clip.shape = producer.shape;
          clip.dtype = producer.dtype;
          std::string from = e.from;
          e.from = clip.id;
          e.from_slot = 0;
          out.edges.push_back(Edge{from, 0, clip.id, 0});
          found = true;
          break;
        }
      }
      if (!found) throw ConfigError("fix site '" + s.node + "' slot not connected");
    }
    out.nodes.push_back(std::move(clip));
  }
  out.finalize();
  return out;
}

bool verify_fix(const Graph& g_fixed, const std::vector<DefectReport>& targets,
                const ValidRanges& vr, const GranularityPolicy& pol, const AnalyzeOptions& opt,
                int samples, uint64_t seed) {
  AbstractState st = analyze(g_fixed, vr, pol, opt);
  std::vector<DefectReport> reports = detect(g_fixed, st);
  for (const DefectReport& t : targets)
    for (const DefectReport& r : reports)
      if (r.node == t.node && r.slot == t.slot) return false;

  std::mt19937_64 rng(seed);
  for (int i = 0; i < samples; ++i) {
    Binding x = sample_inputs(g_fixed, vr, rng);
    Binding w = sample_weights(g_fixed, vr, rng);
    ExecResult r = execute(g_fixed, x, w);
    if (!r.finite_report.empty()) return false;
  }
  return true;
}

}  // namespace ranum
