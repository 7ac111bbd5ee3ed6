#include <algorithm>
#include <cmath>
#include <set>

#include "ranum/graph.hpp"
#include "ranum/indexmaps.hpp"

namespace ranum {

namespace {

double softplus_val(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }

std::vector<int64_t> reduce_axes(Op op, const Attrs& attrs, const std::vector<Tensor>& inputs) {
  if (op == Op::ReduceSum && inputs.size() > 1) return tensor_to_ints(inputs[1], "reduce axes");
  if (attrs.has("axes")) return attrs.get_ints("axes", {});
  std::vector<int64_t> all(inputs[0].rank());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int64_t>(i);
  return all;
}

Tensor gemm_eval(const std::vector<Tensor>& inputs, const Attrs& attrs) {
  Tensor a = inputs[0], b = inputs[1];
  if (attrs.get_int("transA", 0)) {
    Shape os;
    auto m = transpose_map(a.shape(), {1, 0}, &os);
    a = reindex(a, os, m);
  }
  if (attrs.get_int("transB", 0)) {
    Shape os;
    auto m = transpose_map(b.shape(), {1, 0}, &os);
    b = reindex(b, os, m);
  }
  Tensor y = matmul2d(a, b);
  double alpha = attrs.get_double("alpha", 1.0);
  if (alpha != 1.0) y = unary_map(y, [alpha](double v) { return alpha * v; });
  if (inputs.size() > 2) {
    double beta = attrs.get_double("beta", 1.0);
    Tensor c = unary_map(inputs[2], [beta](double v) { return beta * v; });
    y = binary_broadcast(y, c, [](double x, double z) { return x + z; });
  }
  return y;
}

Tensor nll_eval(const std::vector<Tensor>& inputs, const Attrs& attrs) {
  const Tensor& scores = inputs[0];
  int64_t N = scores.shape()[0], C = scores.shape()[1];
  auto targets = tensor_to_ints(inputs[1], "nll target");
  std::string reduction = attrs.get_string("reduction", "mean");
  Tensor losses(Shape{N});
  double num = 0.0, den = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    int64_t t = targets[static_cast<size_t>(i)];
    if (t < 0 || t >= C) throw UnsupportedAttribute("nll target out of range");
    double w = inputs.size() > 2 ? inputs[2].at(t) : 1.0;
    double li = -w * scores.at(i * C + t);
    losses.at(i) = li;
    num += li;
    den += w;
  }
  if (reduction == "none") return losses;
  if (reduction == "sum") return Tensor::scalar(num);
  return Tensor::scalar(num / den);  // mean: 0/0 -> NaN when every weight is zero
}

Tensor range_eval(const std::vector<Tensor>& inputs) {
  double start = inputs[0].scalar_value();
  double limit = inputs[1].scalar_value();
  double delta = inputs[2].scalar_value();
  double cnt = std::ceil((limit - start) / delta);
  if (!std::isfinite(cnt) || cnt < 1 || cnt > 1e9)
    throw DomainError("Range cannot materialize " + std::to_string(cnt) + " elements");
  int64_t n = static_cast<int64_t>(cnt);
  Tensor out(Shape{n});
  for (int64_t i = 0; i < n; ++i) out.at(i) = start + static_cast<double>(i) * delta;
  return out;
}

}  // namespace

Tensor eval_op(Op op, const std::vector<Tensor>& inputs, const Attrs& attrs) {
  switch (op) {
    case Op::Add:
      return binary_broadcast(inputs[0], inputs[1], [](double a, double b) { return a + b; });
    case Op::Sub:
      return binary_broadcast(inputs[0], inputs[1], [](double a, double b) { return a - b; });
    case Op::Mul:
      return binary_broadcast(inputs[0], inputs[1], [](double a, double b) { return a * b; });
    case Op::Div:
      return binary_broadcast(inputs[0], inputs[1], [](double a, double b) { return a / b; });
    case Op::Pow:
      return binary_broadcast(inputs[0], inputs[1],
                              [](double a, double b) { return std::pow(a, b); });
    case Op::Min:
      return binary_broadcast(inputs[0], inputs[1],
                              [](double a, double b) { return std::fmin(a, b); });
    case Op::Max:
      return binary_broadcast(inputs[0], inputs[1],
                              [](double a, double b) { return std::fmax(a, b); });
    case Op::Neg:
      return unary_map(inputs[0], [](double v) { return -v; });
    case Op::Exp:
      return unary_map(inputs[0], [](double v) { return std::exp(v); });
    case Op::Log:
      return unary_map(inputs[0], [](double v) { return std::log(v); });
    case Op::Sqrt:
      return unary_map(inputs[0], [](double v) { return std::sqrt(v); });
    case Op::Reciprocal:
      return unary_map(inputs[0], [](double v) { return 1.0 / v; });
    case Op::Abs:
      return unary_map(inputs[0], [](double v) { return std::abs(v); });
    case Op::Relu:
      return unary_map(inputs[0], [](double v) { return v > 0.0 ? v : 0.0; });
    case Op::Sigmoid:
      return unary_map(inputs[0], [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    case Op::Tanh:
      return unary_map(inputs[0], [](double v) { return std::tanh(v); });
    case Op::Softplus:
      return unary_map(inputs[0], softplus_val);
    case Op::SubFromConstant: {
      double c = attrs.get_double("value", 0.0);
      return unary_map(inputs[0], [c](double v) { return c - v; });
    }
    case Op::Softmax:
    case Op::LogSoftmax: {
      const Tensor& x = inputs[0];
      int64_t ax = attrs.get_int("axis", -1);
      if (ax < 0) ax += x.rank();
      Tensor m = reduce_max(x, {ax}, true);
      Tensor sh = binary_broadcast(x, m, [](double a, double b) { return a - b; });
      Tensor e = unary_map(sh, [](double v) { return std::exp(v); });
      Tensor s = reduce_sum(e, {ax}, true);
      if (op == Op::Softmax)
        return binary_broadcast(e, s, [](double a, double b) { return a / b; });
      Tensor ls = unary_map(s, [](double v) { return std::log(v); });
      return binary_broadcast(sh, ls, [](double a, double b) { return a - b; });
    }
    case Op::MatMul: {
      Tensor a = inputs[0], b = inputs[1];
      bool a1 = a.rank() == 1, b1 = b.rank() == 1;
      if (a1) a = a.reshaped(Shape{1, a.shape()[0]});
      if (b1) b = b.reshaped(Shape{b.shape()[0], 1});
      Tensor y = matmul2d(a, b);
      Shape os;
      if (!a1) os.push_back(y.shape()[0]);
      if (!b1) os.push_back(y.shape()[1]);
      return y.reshaped(os);
    }
    case Op::Gemm:
      return gemm_eval(inputs, attrs);
    case Op::Conv: {
      Tensor y = conv2d(inputs[0], inputs[1], conv_attrs_from(attrs));
      if (inputs.size() > 2) {
        Tensor b = inputs[2].reshaped(Shape{1, inputs[2].shape()[0], 1, 1});
        y = binary_broadcast(y, b, [](double x, double z) { return x + z; });
      }
      return y;
    }
    case Op::Reshape:
      return inputs[0].reshaped(reshape_target_shape(inputs[0].shape(), inputs[1]));
    case Op::Shape_: {
      const Shape& s = inputs[0].shape();
      std::vector<double> vals(s.begin(), s.end());
      return Tensor(Shape{static_cast<int64_t>(s.size())}, vals);
    }
    case Op::Slice: {
      SliceSpec spec = resolve_slice(inputs[0].shape(), inputs[1], inputs[2],
                                     inputs.size() > 3 ? &inputs[3] : nullptr,
                                     inputs.size() > 4 ? &inputs[4] : nullptr);
      Shape os;
      auto m = slice_map(inputs[0].shape(), spec, &os);
      return reindex(inputs[0], os, m);
    }
    case Op::Gather: {
      Shape os;
      auto m = gather_map(inputs[0].shape(), inputs[1], attrs.get_int("axis", 0), &os);
      return reindex(inputs[0], os, m);
    }
    case Op::Squeeze: {
      const Shape& data = inputs[0].shape();
      std::set<int64_t> drop;
      if (inputs.size() > 1 || attrs.has("axes")) {
        std::vector<int64_t> axes = inputs.size() > 1 ? tensor_to_ints(inputs[1], "axes")
                                                      : attrs.get_ints("axes", {});
        for (int64_t a : axes) {
          if (a < 0) a += inputs[0].rank();
          if (data[static_cast<size_t>(a)] != 1) throw ShapeMismatch("squeeze of non-unit dim");
          drop.insert(a);
        }
      } else {
        for (size_t i = 0; i < data.size(); ++i)
          if (data[i] == 1) drop.insert(static_cast<int64_t>(i));
      }
      Shape out;
      for (size_t i = 0; i < data.size(); ++i)
        if (!drop.count(static_cast<int64_t>(i))) out.push_back(data[i]);
      return inputs[0].reshaped(out);
    }
    case Op::Unsqueeze: {
      std::vector<int64_t> axes = inputs.size() > 1 ? tensor_to_ints(inputs[1], "axes")
                                                    : attrs.get_ints("axes", {});
      const Shape& data = inputs[0].shape();
      size_t out_rank = data.size() + axes.size();
      std::set<int64_t> at;
      for (int64_t a : axes) {
        if (a < 0) a += static_cast<int64_t>(out_rank);
        at.insert(a);
      }
      Shape out;
      size_t src = 0;
      for (size_t i = 0; i < out_rank; ++i) {
        if (at.count(static_cast<int64_t>(i))) out.push_back(1);
        else out.push_back(data[src++]);
      }
      return inputs[0].reshaped(out);
    }
    case Op::Concat:
      return concat(inputs, attrs.get_int("axis", 0));
    case Op::Transpose: {
      std::vector<int64_t> perm = attrs.get_ints("perm", {});
      if (perm.empty())
        for (int64_t i = inputs[0].rank() - 1; i >= 0; --i) perm.push_back(i);
      Shape os;
      auto m = transpose_map(inputs[0].shape(), perm, &os);
      return reindex(inputs[0], os, m);
    }
    case Op::ReduceSum:
    case Op::ReduceMean:
    case Op::ReduceMax:
    case Op::ReduceMin: {
      auto axes = reduce_axes(op, attrs, inputs);
      bool keep = attrs.get_int("keepdims", 1) != 0;
      if (op == Op::ReduceSum) return reduce_sum(inputs[0], axes, keep);
      if (op == Op::ReduceMax) return reduce_max(inputs[0], axes, keep);
      if (op == Op::ReduceMin) return reduce_min(inputs[0], axes, keep);
      Tensor s = reduce_sum(inputs[0], axes, keep);
      double count = static_cast<double>(inputs[0].numel()) / static_cast<double>(s.numel());
      return unary_map(s, [count](double v) { return v / count; });
    }
    case Op::Clip: {
      double lo = attrs.get_double("min", -std::numeric_limits<double>::infinity());
      double hi = attrs.get_double("max", std::numeric_limits<double>::infinity());
      Tensor tlo = inputs.size() > 1 ? inputs[1] : Tensor::scalar(lo);
      Tensor thi = inputs.size() > 2 ? inputs[2] : Tensor::scalar(hi);
      Tensor m = binary_broadcast(inputs[0], tlo, [](double a, double b) { return std::fmax(a, b); });
      return binary_broadcast(m, thi, [](double a, double b) { return std::fmin(a, b); });
    }
    case Op::Range:
      return range_eval(inputs);
    case Op::NegativeLogLikelihoodLoss:
      return nll_eval(inputs, attrs);
    case Op::Identity:
      return inputs[0];
    case Op::ConstantOfShape: {
      auto dims = tensor_to_ints(inputs[0], "shape");
      return Tensor(Shape(dims.begin(), dims.end()), attrs.get_double("value", 0.0));
    }
    case Op::Loop:
      throw UnsupportedOperator("Loop requires graph context; use execute()");
    default:
      throw UnsupportedOperator("no concrete evaluator registered");
  }
}

namespace {

Tensor exec_loop(const Node& n, const std::vector<Tensor>& ins, const ExecOptions& opt) {
  const Graph& body = *n.body;
  double trip_max = ins[0].scalar_value();
  Tensor cond = ins[1];
  Tensor carried = ins[2];
  int64_t i = 0;
  while (static_cast<double>(i) < trip_max && cond.scalar_value() != 0.0) {
    Binding b;
    b[body.body_inputs[0]] = Tensor::scalar(static_cast<double>(i));
    b[body.body_inputs[1]] = cond;
    b[body.body_inputs[2]] = carried;
    ExecResult r = execute(body, b, {}, opt);
    cond = r.values.at(body.body_outputs[0]).output;
    carried = r.values.at(body.body_outputs[1]).output;
    if (++i > opt.loop_budget)
      throw LoopBudgetExceeded("Loop '" + n.id + "' exceeded " +
                               std::to_string(opt.loop_budget) + " iterations");
  }
  return carried;
}

}  // namespace

ExecResult execute(const Graph& g, const Binding& inputs, const Binding& weights,
                   const ExecOptions& opt) {
  ExecResult res;
  for (const std::string& id : g.topo_order()) {
    const Node& n = g.node(id);
    NodeVal nv;
    Tensor out;
    if (n.kind == NodeKind::Input) {
      auto it = inputs.find(id);
      if (it == inputs.end()) throw MissingBinding("input node '" + id + "' has no binding");
      if (!shapes_equal(it->second.shape(), n.shape))
        throw ShapeMismatch("binding for '" + id + "' has shape " +
                            shape_str(it->second.shape()) + ", declared " + shape_str(n.shape));
      out = it->second;
    } else if (n.kind == NodeKind::Weight) {
      auto it = weights.find(id);
      if (it != weights.end()) {
        if (!shapes_equal(it->second.shape(), n.shape))
          throw ShapeMismatch("binding for '" + id + "' has shape " +
                              shape_str(it->second.shape()) + ", declared " + shape_str(n.shape));
        out = it->second;
      } else if (n.init) {
        out = *n.init;
      } else {
        throw MissingBinding("weight node '" + id + "' has no binding and no stored value");
      }
    } else if (n.kind == NodeKind::Constant) {
      out = *n.init;
    } else {
      for (const std::string& p : g.inputs_of(id)) nv.inputs.push_back(res.values.at(p).output);
      if (n.op == Op::Loop) {
        out = exec_loop(n, nv.inputs, opt);
      } else if (n.op == Op::Range) {
        // a Range that cannot materialize its declared extent is a failed
        // computation; keep execution total and let the report flag it
        try {
          out = eval_op(Op::Range, nv.inputs, n.attrs);
        } catch (const DomainError&) {
          out = Tensor(n.shape, std::numeric_limits<double>::quiet_NaN());
        }
        if (!shapes_equal(out.shape(), n.shape))
          out = Tensor(n.shape, std::numeric_limits<double>::quiet_NaN());
      } else {
        out = eval_op(n.op, nv.inputs, n.attrs);
        if (!shapes_equal(out.shape(), n.shape))
          throw ShapeMismatch("node '" + id + "' produced " + shape_str(out.shape()) +
                              ", declared " + shape_str(n.shape));
      }
    }
    out = flush_tensor_to_dtype_range(out, n.dtype);
    if (!out.all_finite()) res.finite_report.nonfinite_nodes.push_back(id);
    nv.output = std::move(out);
    res.values.emplace(id, std::move(nv));
  }
  return res;
}

// --- traced forward ----------------------------------------------------------

namespace {

Var trace_op(Tape& t, const Graph& g, const Node& n, const std::vector<Var>& in,
             const ExecOptions& opt);

Var trace_loop(Tape& t, const Graph& g, const Node& n, const std::vector<Var>& ins,
               const ExecOptions& opt) {
  const Graph& body = *n.body;
  double trip_max = t.value(ins[0]).scalar_value();
  Var cond = ins[1];
  Var carried = ins[2];
  int64_t i = 0;
  while (static_cast<double>(i) < trip_max && t.value(cond).scalar_value() != 0.0) {
    std::map<std::string, Var> bvars;
    bvars[body.body_inputs[0]] = t.constant(Tensor::scalar(static_cast<double>(i)));
    bvars[body.body_inputs[1]] = cond;
    bvars[body.body_inputs[2]] = carried;
    Trace tr = trace_execute(t, body, bvars, opt);
    cond = tr.node_outputs.at(body.body_outputs[0]);
    carried = tr.node_outputs.at(body.body_outputs[1]);
    if (++i > opt.loop_budget)
      throw LoopBudgetExceeded("Loop '" + n.id + "' exceeded " +
                               std::to_string(opt.loop_budget) + " iterations");
  }
  (void)g;
  return carried;
}

Var trace_op(Tape& t, const Graph& g, const Node& n, const std::vector<Var>& in,
             const ExecOptions& opt) {
  auto val = [&](size_t i) -> const Tensor& { return t.value(in[i]); };
  switch (n.op) {
    case Op::Add: return t.add(in[0], in[1]);
    case Op::Sub: return t.sub(in[0], in[1]);
    case Op::Mul: return t.mul(in[0], in[1]);
    case Op::Div: return t.div(in[0], in[1]);
    case Op::Pow: return t.pow_vv(in[0], in[1]);
    case Op::Min: return t.minimum(in[0], in[1]);
    case Op::Max: return t.maximum(in[0], in[1]);
    case Op::Neg: return t.neg(in[0]);
    case Op::Exp: return t.exp(in[0]);
    case Op::Log: return t.log(in[0]);
    case Op::Sqrt: return t.sqrt(in[0]);
    case Op::Reciprocal: return t.reciprocal(in[0]);
    case Op::Abs: return t.abs(in[0]);
    case Op::Relu: return t.relu(in[0]);
    case Op::Sigmoid: return t.sigmoid(in[0]);
    case Op::Tanh: return t.tanh(in[0]);
    case Op::Softplus: return t.softplus(in[0]);
    case Op::SubFromConstant:
      return t.sub(t.scalar_const(n.attrs.get_double("value", 0.0)), in[0]);
    case Op::Softmax: return t.softmax(in[0], n.attrs.get_int("axis", -1));
    case Op::LogSoftmax: return t.log_softmax(in[0], n.attrs.get_int("axis", -1));
    case Op::MatMul: {
      Var a = in[0], b = in[1];
      bool a1 = t.shape(a).size() == 1, b1 = t.shape(b).size() == 1;
      if (a1) a = t.reshape(a, Shape{1, t.shape(a)[0]});
      if (b1) b = t.reshape(b, Shape{t.shape(b)[0], 1});
      Var y = t.matmul(a, b);
      Shape os;
      if (!a1) os.push_back(t.shape(y)[0]);
      if (!b1) os.push_back(t.shape(y)[1]);
      return t.reshape(y, os);
    }
    case Op::Gemm: {
      Var a = in[0], b = in[1];
      if (n.attrs.get_int("transA", 0)) {
        Shape os;
        auto m = transpose_map(t.shape(a), {1, 0}, &os);
        a = t.reindex(a, os, m);
      }
      if (n.attrs.get_int("transB", 0)) {
        Shape os;
        auto m = transpose_map(t.shape(b), {1, 0}, &os);
        b = t.reindex(b, os, m);
      }
      Var y = t.matmul(a, b);
      double alpha = n.attrs.get_double("alpha", 1.0);
      if (alpha != 1.0) y = t.mul(y, t.scalar_const(alpha));
      if (in.size() > 2) {
        double beta = n.attrs.get_double("beta", 1.0);
        Var c = beta == 1.0 ? in[2] : t.mul(in[2], t.scalar_const(beta));
        y = t.add(y, c);
      }
      return y;
    }
    case Op::Conv: {
      Var y = t.conv2d(in[0], in[1], conv_attrs_from(n.attrs));
      if (in.size() > 2) {
        Var b = t.reshape(in[2], Shape{1, t.shape(in[2])[0], 1, 1});
        y = t.add(y, b);
      }
      return y;
    }
    case Op::Reshape:
      return t.reshape(in[0], reshape_target_shape(t.shape(in[0]), val(1)));
    case Op::Shape_: {
      const Shape& s = t.shape(in[0]);
      std::vector<double> vals(s.begin(), s.end());
      return t.constant(Tensor(Shape{static_cast<int64_t>(s.size())}, vals));
    }
    case Op::Slice: {
      SliceSpec spec = resolve_slice(t.shape(in[0]), val(1), val(2),
                                     in.size() > 3 ? &val(3) : nullptr,
                                     in.size() > 4 ? &val(4) : nullptr);
      Shape os;
      auto m = slice_map(t.shape(in[0]), spec, &os);
      return t.reindex(in[0], os, m);
    }
    case Op::Gather: {
      Shape os;
      auto m = gather_map(t.shape(in[0]), val(1), n.attrs.get_int("axis", 0), &os);
      return t.reindex(in[0], os, m);
    }
    case Op::Squeeze:
    case Op::Unsqueeze: {
      // shape arithmetic matches eval_op; reuse it on the value to get the target
      std::vector<Tensor> vals{val(0)};
      if (in.size() > 1) vals.push_back(val(1));
      Shape target = eval_op(n.op, vals, n.attrs).shape();
      return t.reshape(in[0], target);
    }
    case Op::Concat: {
      std::vector<Var> parts(in.begin(), in.end());
      return t.concat(parts, n.attrs.get_int("axis", 0));
    }
    case Op::Transpose: {
      std::vector<int64_t> perm = n.attrs.get_ints("perm", {});
      if (perm.empty())
        for (int64_t i = static_cast<int64_t>(t.shape(in[0]).size()) - 1; i >= 0; --i)
          perm.push_back(i);
      Shape os;
      auto m = transpose_map(t.shape(in[0]), perm, &os);
      return t.reindex(in[0], os, m);
    }
    case Op::ReduceSum:
    case Op::ReduceMean:
    case Op::ReduceMax:
    case Op::ReduceMin: {
      std::vector<Tensor> vals{val(0)};
      if (in.size() > 1) vals.push_back(val(1));
      auto axes = reduce_axes(n.op, n.attrs, vals);
      bool keep = n.attrs.get_int("keepdims", 1) != 0;
      if (n.op == Op::ReduceSum) return t.reduce_sum(in[0], axes, keep);
      if (n.op == Op::ReduceMean) return t.reduce_mean(in[0], axes, keep);
      if (n.op == Op::ReduceMax) return t.reduce_max(in[0], axes, keep);
      return t.reduce_min(in[0], axes, keep);
    }
    case Op::Clip: {
      Var lo = in.size() > 1
                   ? in[1]
                   : t.scalar_const(n.attrs.get_double("min", -std::numeric_limits<double>::infinity()));
      Var hi = in.size() > 2
                   ? in[2]
                   : t.scalar_const(n.attrs.get_double("max", std::numeric_limits<double>::infinity()));
      return t.clip(in[0], lo, hi);
    }
    case Op::Range: {
      // start + j*delta keeps gradients to start/delta when the extent is sane
      double start = val(0).scalar_value();
      double limit = val(1).scalar_value();
      double delta = val(2).scalar_value();
      double cnt = std::ceil((limit - start) / delta);
      if (!std::isfinite(cnt) || cnt < 1 || cnt > 1e9 ||
          static_cast<int64_t>(cnt) != n.shape[0]) {
        return t.constant(Tensor(n.shape, std::numeric_limits<double>::quiet_NaN()));
      }
      int64_t cnt_i = static_cast<int64_t>(cnt);
      Tensor j(Shape{cnt_i});
      for (int64_t i = 0; i < cnt_i; ++i) j.at(i) = static_cast<double>(i);
      Var sv = t.reshape(in[0], Shape{});
      Var dv = t.reshape(in[2], Shape{});
      return t.add(sv, t.mul(t.constant(j), dv));
    }
    case Op::NegativeLogLikelihoodLoss: {
      const Tensor& scores_v = val(0);
      int64_t N = scores_v.shape()[0], C = scores_v.shape()[1];
      auto targets = tensor_to_ints(val(1), "nll target");
      std::vector<int64_t> pick(static_cast<size_t>(N));
      for (int64_t i = 0; i < N; ++i) {
        int64_t tt = targets[static_cast<size_t>(i)];
        if (tt < 0 || tt >= C) throw UnsupportedAttribute("nll target out of range");
        pick[static_cast<size_t>(i)] = i * C + tt;
      }
      Var st = t.reindex(in[0], Shape{N}, pick);
      Var w;
      if (in.size() > 2) {
        std::vector<int64_t> wmap(static_cast<size_t>(N));
        for (int64_t i = 0; i < N; ++i) wmap[static_cast<size_t>(i)] = targets[static_cast<size_t>(i)];
        w = t.reindex(in[2], Shape{N}, wmap);
      } else {
        w = t.constant(Tensor(Shape{N}, 1.0));
      }
      Var losses = t.neg(t.mul(w, st));
      std::string red = n.attrs.get_string("reduction", "mean");
      if (red == "none") return losses;
      Var total = t.reduce_sum_all(losses);
      if (red == "sum") return total;
      return t.div(total, t.reduce_sum_all(w));
    }
    case Op::Identity:
      return in[0];
    case Op::ConstantOfShape: {
      auto dims = tensor_to_ints(val(0), "shape");
      return t.constant(Tensor(Shape(dims.begin(), dims.end()), n.attrs.get_double("value", 0.0)));
    }
    case Op::Loop:
      return trace_loop(t, g, n, in, opt);
    default:
      throw NonDifferentiableNode(std::string("operator lacks a traced rule"));
  }
}

}  // namespace

Trace trace_execute(Tape& t, const Graph& g, const std::map<std::string, Var>& initial_vars,
                    const ExecOptions& opt) {
  Trace tr;
  for (const std::string& id : g.topo_order()) {
    const Node& n = g.node(id);
    Var out;
    if (n.is_initial()) {
      auto it = initial_vars.find(id);
      if (it != initial_vars.end()) {
        if (!shapes_equal(t.shape(it->second), n.shape))
          throw ShapeMismatch("traced binding for '" + id + "' has the wrong shape");
        out = it->second;
      } else if (n.init) {
        out = t.constant(*n.init);
      } else {
        throw MissingBinding("initial node '" + id + "' has no traced binding or stored value");
      }
    } else {
      std::vector<Var> in;
      for (const std::string& p : g.inputs_of(id)) in.push_back(tr.node_outputs.at(p));
      tr.node_inputs[id] = in;
      out = trace_op(t, g, n, in, opt);
    }
    tr.node_outputs[id] = out;
  }
  return tr;
}

}  // namespace ranum

