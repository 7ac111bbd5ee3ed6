#include "ranum/testgen.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "ranum/indexmaps.hpp"

namespace ranum {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Adam with the paper's settings: step size 1, default moment coefficients.
class Adam {
 public:
  explicit Adam(double lr = 1.0) : lr_(lr) {}

  void reset() {
    m_.clear();
    v_.clear();
    t_ = 0;
  }

  void step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& [id, p] : params) {
      const Tensor& g = grads.at(id);
      Tensor& m = m_.try_emplace(id, Tensor::zeros(p.shape())).first->second;
      Tensor& v = v_.try_emplace(id, Tensor::zeros(p.shape())).first->second;
      for (int64_t i = 0; i < p.numel(); ++i) {
        m.at(i) = beta1_ * m.at(i) + (1.0 - beta1_) * g.at(i);
        v.at(i) = beta2_ * v.at(i) + (1.0 - beta2_) * g.at(i) * g.at(i);
        double mh = m.at(i) / bc1;
        double vh = v.at(i) / bc2;
        p.at(i) -= lr_ * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

 private:
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

bool binding_finite(const Binding& b) {
  for (const auto& [id, t] : b)
    if (!t.all_finite()) return false;
  return true;
}

void project_binding(Binding& b, const std::map<std::string, std::pair<Tensor, Tensor>>& ranges) {
  for (auto& [id, t] : b) {
    const auto& [lo, hi] = ranges.at(id);
    for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = std::clamp(t.at(i), lo.at(i), hi.at(i));
  }
}

std::map<std::string, std::pair<Tensor, Tensor>> range_table(const Graph& g, const ValidRanges& vr,
                                                             const std::vector<std::string>& ids) {
  std::map<std::string, std::pair<Tensor, Tensor>> out;
  for (const std::string& id : ids) out[id] = vr.element_bounds(g.node(id));
  return out;
}

// The defect objective as a tape expression over a traced forward pass.
Var objective_expr(Tape& t, const Graph& g, const Trace& tr, const DefectReport& d) {
  const Node& n = g.node(d.node);
  double umin = dtype_umin(n.dtype);
  const auto& in = tr.node_inputs.at(d.node);
  switch (d.op) {
    case Op::Log:
    case Op::Sqrt:
      return t.sub(t.reduce_min_all(in[0]), t.scalar_const(umin));
    case Op::Exp:
      return t.sub(t.scalar_const(dtype_ln_umax(n.dtype)), t.reduce_max_all(in[0]));
    case Op::Div:
      return t.sub(t.reduce_min_all(t.abs(in[1])), t.scalar_const(umin));
    case Op::Reciprocal:
      return t.sub(t.reduce_min_all(t.abs(in[0])), t.scalar_const(umin));
    case Op::Range:
      return t.sub(t.reduce_min_all(t.abs(in[2])), t.scalar_const(umin));
    case Op::Pow: {
      // both the base and the exponent coordinate must enter the region
      Var base_pen = t.sub(t.abs(in[0]), t.scalar_const(umin));
      Var exp_pen = t.add(in[1], t.scalar_const(umin));
      return t.reduce_min_all(t.maximum(base_pen, exp_pen));
    }
    case Op::NegativeLogLikelihoodLoss: {
      const Tensor& scores = t.value(in[0]);
      int64_t N = scores.shape()[0], C = scores.shape()[1];
      auto targets = tensor_to_ints(t.value(in[1]), "nll target");
      Var denom;
      if (in.size() > 2) {
        std::vector<int64_t> wm(static_cast<size_t>(N));
        for (int64_t i = 0; i < N; ++i) {
          if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= C)
            throw UnsupportedAttribute("nll target out of range");
          wm[static_cast<size_t>(i)] = targets[static_cast<size_t>(i)];
        }
        denom = t.reduce_sum_all(t.reindex(in[2], Shape{N}, wm));
      } else {
        denom = t.scalar_const(static_cast<double>(N));
      }
      return t.sub(t.abs(denom), t.scalar_const(umin));
    }
    default:
      throw NotDefectProne(std::string(op_info(d.op).name) + " has no defect objective");
  }
}

std::map<std::string, Var> constant_vars(Tape& t, const Binding& b) {
  std::map<std::string, Var> out;
  for (const auto& [id, v] : b) out[id] = t.constant(v);
  return out;
}

// Same objective judged on dtype-rounded execution values, keeping the
// "objective <= 0 iff the run flags the node" correspondence for f32 graphs.
double objective_from_exec(const Graph& g, const DefectReport& d, const ExecResult& r) {
  const Node& n = g.node(d.node);
  double umin = dtype_umin(n.dtype);
  const auto& in = r.values.at(d.node).inputs;
  auto min_all = [](const Tensor& t) { return t.min_value(); };
  auto max_all = [](const Tensor& t) { return t.max_value(); };
  auto min_abs = [](const Tensor& t) {
    double m = std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < t.numel(); ++i) m = std::min(m, std::abs(t.at(i)));
    return m;
  };
  switch (d.op) {
    case Op::Log:
    case Op::Sqrt:
      return min_all(in[0]) - umin;
    case Op::Exp:
      return dtype_ln_umax(n.dtype) - max_all(in[0]);
    case Op::Div:
      return min_abs(in[1]) - umin;
    case Op::Reciprocal:
      return min_abs(in[0]) - umin;
    case Op::Range:
      return min_abs(in[2]) - umin;
    case Op::Pow: {
      Tensor pen = binary_broadcast(in[0], in[1], [umin](double base, double ex) {
        return std::max(std::abs(base) - umin, ex + umin);
      });
      return pen.min_value();
    }
    case Op::NegativeLogLikelihoodLoss: {
      int64_t N = in[0].shape()[0], C = in[0].shape()[1];
      auto targets = tensor_to_ints(in[1], "nll target");
      double denom = 0.0;
      for (int64_t i = 0; i < N; ++i) {
        int64_t tt = targets[static_cast<size_t>(i)];
        if (tt < 0 || tt >= C) throw UnsupportedAttribute("nll target out of range");
        denom += in.size() > 2 ? in[2].at(tt) : 1.0;
      }
      return std::abs(denom) - umin;
    }
    default:
      throw NotDefectProne(std::string(op_info(d.op).name) + " has no defect objective");
  }
}

}  // namespace

std::vector<std::string> free_weight_ids(const Graph& g, const ValidRanges& vr) {
  std::vector<std::string> out;
  for (const std::string& id : g.weight_node_ids()) {
    const Node& n = g.node(id);
    if (!n.init || vr.has_override(id)) out.push_back(id);
  }
  return out;
}

Binding sample_weights(const Graph& g, const ValidRanges& vr, std::mt19937_64& rng) {
  Binding w;
  for (const std::string& id : free_weight_ids(g, vr)) {
    auto [lo, hi] = vr.element_bounds(g.node(id));
    w[id] = uniform_tensor_between(lo, hi, rng);
  }
  return w;
}

Binding sample_inputs(const Graph& g, const ValidRanges& vr, std::mt19937_64& rng) {
  Binding x;
  for (const std::string& id : g.input_node_ids()) {
    auto [lo, hi] = vr.element_bounds(g.node(id));
    x[id] = uniform_tensor_between(lo, hi, rng);
  }
  return x;
}

double defect_objective(const Graph& g, const DefectReport& defect, const Binding& x,
                        const Binding& w, const ExecOptions& opt) {
  return objective_from_exec(g, defect, execute(g, x, w, opt));
}

bool verify_unit_test(const Graph& g, const UnitTest& ut, const ExecOptions& opt) {
  ExecResult r = execute(g, ut.x_infer, ut.w_infer, opt);
  return r.finite_report.flags(ut.defect_node);
}

bool verify_system_test(const Graph& g, const SystemTest& st, const ExecOptions& opt) {
  Binding w1;
  try {
    w1 = one_step_sgd(g, st.x_train, st.w0, st.gamma, opt);
  } catch (const NonFiniteGradient&) {
    return false;
  }
  ExecResult r = execute(g, st.x_infer, w1, opt);
  if (r.finite_report.flags(st.defect_node)) return true;
  for (const std::string& d : g.descendants(st.defect_node))
    if (r.finite_report.flags(d)) return true;
  return false;
}

std::optional<UnitTest> gen_unit_test(const Graph& g, const DefectReport& defect,
                                      const ValidRanges& vr, uint64_t seed,
                                      const GenBudgets& budgets) {
  auto t0 = Clock::now();
  std::mt19937_64 rng(seed);
  ExecOptions eopt;
  eopt.loop_budget = budgets.loop_budget;

  std::vector<std::string> xin = g.input_node_ids();
  std::vector<std::string> wfree = free_weight_ids(g, vr);
  auto xranges = range_table(g, vr, xin);
  auto wranges = range_table(g, vr, wfree);

  auto try_candidate = [&](const Binding& x, const Binding& w,
                           double* obj_out) -> std::optional<UnitTest> {
    double obj;
    try {
      obj = defect_objective(g, defect, x, w, eopt);
    } catch (const Error&) {
      obj = std::numeric_limits<double>::infinity();
    }
    if (obj_out) *obj_out = obj;
    if (!(obj <= 0.0)) return std::nullopt;
    UnitTest ut{x, w, defect.node, false};
    if (verify_unit_test(g, ut, eopt)) {
      ut.verified = true;
      return ut;
    }
    return std::nullopt;
  };

  // phase 1: uniform random restarts
  Binding best_x, best_w;
  double best_obj = std::numeric_limits<double>::infinity();
  for (int r = 0; r < budgets.restarts; ++r) {
    if (seconds_since(t0) > budgets.wall_seconds) return std::nullopt;
    Binding x = sample_inputs(g, vr, rng);
    Binding w = sample_weights(g, vr, rng);
    double obj;
    if (auto ut = try_candidate(x, w, &obj)) return ut;
    if (obj < best_obj) {
      best_obj = obj;
      best_x = x;
      best_w = w;
    }
  }
  if (best_x.empty() && best_w.empty() && budgets.grad_iters > 0) {
    best_x = sample_inputs(g, vr, rng);
    best_w = sample_weights(g, vr, rng);
  }

  // phase 2: projected gradient descent from the best sample
  Binding cur_x = best_x, cur_w = best_w;
  Adam adam(1.0);
  for (int it = 0; it < budgets.grad_iters; ++it) {
    if (seconds_since(t0) > budgets.wall_seconds) return std::nullopt;
    if (auto ut = try_candidate(cur_x, cur_w, nullptr)) return ut;

    Tape t;
    std::map<std::string, Var> vars;
    std::vector<std::string> names;
    std::vector<Var> leaves;
    for (const auto& [id, v] : cur_x) {
      vars[id] = t.leaf(v);
      names.push_back(id);
      leaves.push_back(vars[id]);
    }
    for (const auto& [id, v] : cur_w) {
      vars[id] = t.leaf(v);
      names.push_back(id);
      leaves.push_back(vars[id]);
    }
    bool bad = false;
    std::map<std::string, Tensor> grads;
    try {
      Trace tr = trace_execute(t, g, vars, eopt);
      Var obj = objective_expr(t, g, tr, defect);
      if (!std::isfinite(t.value(obj).scalar_value())) bad = true;
      if (!bad) {
        std::vector<Var> gs = t.backward(obj, leaves);
        for (size_t i = 0; i < names.size(); ++i) {
          if (!t.value(gs[i]).all_finite()) bad = true;
          grads[names[i]] = t.value(gs[i]);
        }
      }
    } catch (const Error&) {
      bad = true;
    }
    if (bad) {
      cur_x = sample_inputs(g, vr, rng);
      cur_w = sample_weights(g, vr, rng);
      adam.reset();
      continue;
    }
    std::map<std::string, Tensor> params;
    for (const auto& [id, v] : cur_x) params[id] = v;
    for (const auto& [id, v] : cur_w) params[id] = v;
    adam.step(params, grads);
    for (auto& [id, v] : cur_x) v = params[id];
    for (auto& [id, v] : cur_w) v = params[id];
    project_binding(cur_x, xranges);
    project_binding(cur_w, wranges);
    if (!binding_finite(cur_x) || !binding_finite(cur_w)) {
      cur_x = sample_inputs(g, vr, rng);
      cur_w = sample_weights(g, vr, rng);
      adam.reset();
    }
  }
  if (auto ut = try_candidate(cur_x, cur_w, nullptr)) return ut;
  return std::nullopt;
}

Binding one_step_sgd(const Graph& g, const Binding& x_train, const Binding& w0, double gamma,
                     const ExecOptions& opt) {
  if (!g.loss_node) throw ConfigError("graph '" + g.name + "' has no designated loss node");
  Tape t;
  std::map<std::string, Var> vars = constant_vars(t, x_train);
  std::vector<std::string> wids = g.weight_node_ids();
  std::vector<Var> leaves;
  Binding w_full;
  for (const std::string& id : wids) {
    auto it = w0.find(id);
    const Node& n = g.node(id);
    Tensor v;
    if (it != w0.end()) v = it->second;
    else if (n.init) v = *n.init;
    else throw MissingBinding("weight node '" + id + "' has no value for the SGD step");
    w_full[id] = v;
    vars[id] = t.leaf(v);
    leaves.push_back(vars[id]);
  }
  Trace tr = trace_execute(t, g, vars, opt);
  Var loss = tr.node_outputs.at(*g.loss_node);
  std::vector<Var> grads = t.backward(loss, leaves);
  Binding w1;
  for (size_t i = 0; i < wids.size(); ++i) {
    const Tensor& gt = t.value(grads[i]);
    if (!gt.all_finite())
      throw NonFiniteGradient("gradient at weight '" + wids[i] + "' is not finite");
    Tensor w = w_full[wids[i]];
    for (int64_t j = 0; j < w.numel(); ++j) w.at(j) -= gamma * gt.at(j);
    w1[wids[i]] = std::move(w);
  }
  return w1;
}

std::optional<SystemTest> gen_training_example(const Graph& g, const UnitTest& unit,
                                               const Binding& w0, double gamma, uint64_t seed,
                                               const GradientOverride& overrides,
                                               const ValidRanges& vr, const GenBudgets& budgets) {
  auto t0 = Clock::now();
  std::mt19937_64 rng(seed);
  ExecOptions eopt;
  eopt.loop_budget = budgets.loop_budget;
  if (!g.loss_node) throw ConfigError("graph '" + g.name + "' has no designated loss node");

  std::vector<std::string> wids = g.weight_node_ids();
  Binding w0_full;
  for (const std::string& id : wids) {
    auto it = w0.find(id);
    const Node& n = g.node(id);
    if (it != w0.end()) w0_full[id] = it->second;
    else if (n.init) w0_full[id] = *n.init;
    else throw MissingBinding("weight node '" + id + "' lacks an initial value");
  }

  // target gradients from inverting the one-step update
  Binding target_grad;
  for (const std::string& id : wids) {
    Tensor tg = w0_full[id];
    auto it = unit.w_infer.find(id);
    const Tensor& wi = it != unit.w_infer.end() ? it->second : *g.node(id).init;
    for (int64_t i = 0; i < tg.numel(); ++i) tg.at(i) = (tg.at(i) - wi.at(i)) / gamma;
    target_grad[id] = std::move(tg);
  }

  std::vector<std::string> xin = g.input_node_ids();
  auto xranges = range_table(g, vr, xin);
  Binding cur_x = sample_inputs(g, vr, rng);
  Adam adam(1.0);

  for (int it = 0; it < budgets.dlg_iters; ++it) {
    if (seconds_since(t0) > budgets.wall_seconds) return std::nullopt;

    SystemTest st{cur_x, unit.x_infer, w0_full, gamma, unit.defect_node, false};
    if (verify_system_test(g, st, eopt)) {
      st.verified = true;
      return st;
    }

    // match loss || grad_w L(x; w0) - target ||^2, twice differentiated with
    // the straight-through overrides active
    bool bad = false;
    std::map<std::string, Tensor> grads;
    try {
      Tape t;
      std::map<std::string, Var> vars;
      std::vector<Var> xleaves, wleaves;
      std::vector<std::string> xnames;
      for (const auto& [id, v] : cur_x) {
        vars[id] = t.leaf(v);
        xleaves.push_back(vars[id]);
        xnames.push_back(id);
      }
      for (const std::string& id : wids) {
        vars[id] = t.leaf(w0_full[id]);
        wleaves.push_back(vars[id]);
      }
      Trace tr = trace_execute(t, g, vars, eopt);
      Var loss = tr.node_outputs.at(*g.loss_node);
      std::vector<Var> gw = t.backward(loss, wleaves, overrides);
      Var match;
      for (size_t i = 0; i < wids.size(); ++i) {
        Var diff = t.sub(gw[i], t.constant(target_grad[wids[i]]));
        Var sq = t.sum_squares(diff);
        match = match.valid() ? t.add(match, sq) : sq;
      }
      if (!std::isfinite(t.value(match).scalar_value())) bad = true;
      if (!bad) {
        std::vector<Var> gx = t.backward(match, xleaves, overrides);
        for (size_t i = 0; i < xnames.size(); ++i) {
          if (!t.value(gx[i]).all_finite()) bad = true;
          grads[xnames[i]] = t.value(gx[i]);
        }
      }
    } catch (const Error&) {
      bad = true;
    }
    if (bad) {
      cur_x = sample_inputs(g, vr, rng);
      adam.reset();
      continue;
    }
    adam.step(cur_x, grads);
    project_binding(cur_x, xranges);
    if (!binding_finite(cur_x)) {
      cur_x = sample_inputs(g, vr, rng);
      adam.reset();
    }
  }
  SystemTest st{cur_x, unit.x_infer, w0_full, gamma, unit.defect_node, false};
  if (verify_system_test(g, st, eopt)) {
    st.verified = true;
    return st;
  }
  return std::nullopt;
}

}  // namespace ranum
