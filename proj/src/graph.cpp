#include "ranum/graph.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <sstream>

namespace ranum {

namespace {

const std::vector<OpInfo>& op_table() {
  static const std::vector<OpInfo> table = {
      {Op::Add, "Add", 2, 2, false, {}, false},
      {Op::Sub, "Sub", 2, 2, false, {}, false},
      {Op::Mul, "Mul", 2, 2, false, {}, false},
      {Op::Div, "Div", 2, 2, true, {}, false},
      {Op::Pow, "Pow", 2, 2, true, {}, false},
      {Op::MatMul, "MatMul", 2, 2, false, {}, false},
      {Op::Gemm, "Gemm", 2, 3, false, {}, false},
      {Op::Conv, "Conv", 2, 3, false, {}, false},
      {Op::Neg, "Neg", 1, 1, false, {}, false},
      {Op::Exp, "Exp", 1, 1, true, {}, false},
      {Op::Log, "Log", 1, 1, true, {}, false},
      {Op::Sqrt, "Sqrt", 1, 1, true, {}, false},
      {Op::Reciprocal, "Reciprocal", 1, 1, true, {}, false},
      {Op::Abs, "Abs", 1, 1, false, {}, false},
      {Op::Relu, "Relu", 1, 1, false, {}, false},
      {Op::Sigmoid, "Sigmoid", 1, 1, false, {}, false},
      {Op::Tanh, "Tanh", 1, 1, false, {}, false},
      {Op::Softplus, "Softplus", 1, 1, false, {}, false},
      {Op::Softmax, "Softmax", 1, 1, false, {}, false},
      {Op::LogSoftmax, "LogSoftmax", 1, 1, false, {}, false},
      {Op::SubFromConstant, "SubFromConstant", 1, 1, false, {}, false},
      {Op::Reshape, "Reshape", 2, 2, false, {2}, false},
      {Op::Shape_, "Shape", 1, 1, false, {}, true},
      {Op::Slice, "Slice", 3, 5, false, {2, 3, 4, 5}, false},
      {Op::Gather, "Gather", 2, 2, false, {2}, false},
      {Op::Squeeze, "Squeeze", 1, 2, false, {2}, false},
      {Op::Unsqueeze, "Unsqueeze", 1, 2, false, {2}, false},
      {Op::Concat, "Concat", 1, -1, false, {}, false},
      {Op::Transpose, "Transpose", 1, 1, false, {}, false},
      {Op::ReduceSum, "ReduceSum", 1, 2, false, {2}, false},
      {Op::ReduceMean, "ReduceMean", 1, 1, false, {}, false},
      {Op::ReduceMax, "ReduceMax", 1, 1, false, {}, false},
      {Op::ReduceMin, "ReduceMin", 1, 1, false, {}, false},
      {Op::Clip, "Clip", 1, 3, false, {2, 3}, false},
      {Op::Min, "Min", 2, 2, false, {}, false},
      {Op::Max, "Max", 2, 2, false, {}, false},
      {Op::Range, "Range", 3, 3, true, {}, false},
      {Op::NegativeLogLikelihoodLoss, "NegativeLogLikelihoodLoss", 2, 3, true, {2}, false},
      {Op::Loop, "Loop", 3, 3, false, {1, 2}, false},
      {Op::Identity, "Identity", 1, 1, false, {}, false},
      {Op::ConstantOfShape, "ConstantOfShape", 1, 1, false, {1}, false},
  };
  return table;
}

}  // namespace

const OpInfo& op_info(Op op) {
  for (const OpInfo& i : op_table())
    if (i.op == op) return i;
  throw Error("unknown operator enum value");
}

std::optional<Op> op_from_name(const std::string& name) {
  for (const OpInfo& i : op_table())
    if (name == i.name) return i.op;
  return std::nullopt;
}

const std::vector<Op>& all_ops() {
  static std::vector<Op> ops = [] {
    std::vector<Op> v;
    for (const OpInfo& i : op_table()) v.push_back(i.op);
    return v;
  }();
  return ops;
}

ConvAttrs conv_attrs_from(const Attrs& a) {
  auto strides = a.get_ints("strides", {1, 1});
  auto pads = a.get_ints("pads", {0, 0, 0, 0});
  auto dil = a.get_ints("dilations", {1, 1});
  int64_t group = a.get_int("group", 1);
  if (strides.size() != 2 || pads.size() != 4 || dil.size() != 2)
    throw UnsupportedAttribute("Conv expects 2-D strides/dilations and 4-entry pads");
  if (dil[0] != 1 || dil[1] != 1 || group != 1)
    throw UnsupportedAttribute("Conv supports dilation 1 and a single group");
  ConvAttrs c;
  c.stride_h = strides[0];
  c.stride_w = strides[1];
  c.pad_top = pads[0];
  c.pad_left = pads[1];
  c.pad_bottom = pads[2];
  c.pad_right = pads[3];
  return c;
}

int64_t Attrs::get_int(const std::string& k, int64_t dflt) const {
  if (!json.contains(k)) return dflt;
  return json.at(k).get<int64_t>();
}

double Attrs::get_double(const std::string& k, double dflt) const {
  if (!json.contains(k)) return dflt;
  return json.at(k).get<double>();
}

std::string Attrs::get_string(const std::string& k, const std::string& dflt) const {
  if (!json.contains(k)) return dflt;
  return json.at(k).get<std::string>();
}

std::vector<int64_t> Attrs::get_ints(const std::string& k, std::vector<int64_t> dflt) const {
  if (!json.contains(k)) return dflt;
  return json.at(k).get<std::vector<int64_t>>();
}

// --- tensor (de)serialization ------------------------------------------------

namespace {

void flatten_json_array(const nlohmann::json& j, std::vector<double>& out, Shape& shape,
                        size_t depth) {
  if (j.is_array()) {
    if (depth == shape.size()) shape.push_back(static_cast<int64_t>(j.size()));
    else if (shape[depth] != static_cast<int64_t>(j.size()))
      throw SchemaError("ragged tensor literal");
    for (const auto& e : j) flatten_json_array(e, out, shape, depth + 1);
  } else if (j.is_number()) {
    if (depth != shape.size()) throw SchemaError("tensor literal depth mismatch");
    out.push_back(j.get<double>());
  } else {
    throw SchemaError("tensor literal must contain numbers");
  }
}

nlohmann::ordered_json nest_values(const Tensor& t, size_t dim, int64_t& cursor) {
  if (dim == t.shape().size()) return nlohmann::ordered_json(t.at(cursor++));
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (int64_t i = 0; i < t.shape()[dim]; ++i) arr.push_back(nest_values(t, dim + 1, cursor));
  return arr;
}

}  // namespace

Tensor tensor_from_json(const nlohmann::json& j, const Shape& expect_shape) {
  std::vector<double> data;
  Shape shape;
  flatten_json_array(j, data, shape, 0);
  Tensor t(shape, std::move(data));
  if (!shapes_equal(shape, expect_shape))
    throw SchemaError("tensor literal shape " + shape_str(shape) + " does not match declared " +
                      shape_str(expect_shape));
  return t;
}

nlohmann::ordered_json tensor_to_json(const Tensor& t) {
  int64_t cursor = 0;
  return nest_values(t, 0, cursor);
}

// --- graph indexes ------------------------------------------------------------

const Node& Graph::node(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw SchemaError("unknown node id '" + id + "'");
  return nodes[it->second];
}

size_t Graph::node_pos(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw SchemaError("unknown node id '" + id + "'");
  return it->second;
}

const std::vector<std::string>& Graph::inputs_of(const std::string& id) const {
  static const std::vector<std::string> empty;
  auto it = in_edges_.find(id);
  return it == in_edges_.end() ? empty : it->second;
}

const std::vector<std::string>& Graph::consumers_of(const std::string& id) const {
  static const std::vector<std::string> empty;
  auto it = consumers_.find(id);
  return it == consumers_.end() ? empty : it->second;
}

std::vector<std::string> Graph::descendants(const std::string& id) const {
  std::set<std::string> seen;
  std::vector<std::string> stack{id};
  while (!stack.empty()) {
    std::string cur = stack.back();
    stack.pop_back();
    for (const std::string& c : consumers_of(cur))
      if (seen.insert(c).second) stack.push_back(c);
  }
  return std::vector<std::string>(seen.begin(), seen.end());
}

std::vector<std::string> Graph::input_node_ids() const {
  std::vector<std::string> out;
  for (const Node& n : nodes)
    if (n.kind == NodeKind::Input) out.push_back(n.id);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> Graph::weight_node_ids() const {
  std::vector<std::string> out;
  for (const Node& n : nodes)
    if (n.kind == NodeKind::Weight) out.push_back(n.id);
  std::sort(out.begin(), out.end());
  return out;
}

void Graph::compute_topo() {
  std::map<std::string, int> indeg;
  std::map<std::string, std::vector<std::string>> out;  // per edge, duplicates kept
  for (const Node& n : nodes) indeg[n.id] = 0;
  for (const Edge& e : edges) {
    indeg[e.to]++;
    out[e.from].push_back(e.to);
  }
  std::priority_queue<std::string, std::vector<std::string>, std::greater<>> ready;
  for (auto& [id, d] : indeg)
    if (d == 0) ready.push(id);
  topo_.clear();
  while (!ready.empty()) {
    std::string id = ready.top();
    ready.pop();
    topo_.push_back(id);
    for (const std::string& c : out[id])
      if (--indeg[c] == 0) ready.push(c);
  }
  if (topo_.size() != nodes.size()) throw CycleError("graph '" + name + "' contains a cycle");
}

void Graph::finalize() {
  index_.clear();
  for (size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id.empty()) throw SchemaError("empty node id");
    if (!index_.emplace(nodes[i].id, i).second)
      throw SchemaError("duplicate node id '" + nodes[i].id + "'");
  }

  in_edges_.clear();
  consumers_.clear();
  for (const Edge& e : edges) {
    if (!has_node(e.from)) throw SchemaError("edge from unknown node '" + e.from + "'");
    if (!has_node(e.to)) throw SchemaError("edge to unknown node '" + e.to + "'");
    if (e.from_slot != 0) throw SchemaError("multi-output producers are not supported");
    if (e.to_slot < 0) throw SchemaError("negative input slot");
    const Node& to = node(e.to);
    if (to.kind != NodeKind::Operator)
      throw SchemaError("initial node '" + e.to + "' cannot have inputs");
    auto& slots = in_edges_[e.to];
    if (static_cast<int>(slots.size()) <= e.to_slot) slots.resize(static_cast<size_t>(e.to_slot) + 1);
    if (!slots[static_cast<size_t>(e.to_slot)].empty())
      throw SchemaError("node '" + e.to + "' input slot " + std::to_string(e.to_slot) +
                        " connected twice");
    slots[static_cast<size_t>(e.to_slot)] = e.from;
  }
  for (const Edge& e : edges) consumers_[e.from].push_back(e.to);
  for (auto& [id, cs] : consumers_) {
    std::sort(cs.begin(), cs.end());
    cs.erase(std::unique(cs.begin(), cs.end()), cs.end());
  }

  validate();
  compute_topo();
  infer_shapes();
}

void Graph::validate() const {
  for (const Node& n : nodes) {
    for (int64_t d : n.shape)
      if (d < 1) throw SchemaError("node '" + n.id + "' has non-positive shape entry");
    switch (n.kind) {
      case NodeKind::Constant:
        if (!n.init) throw SchemaError("constant node '" + n.id + "' requires an initial value");
        break;
      case NodeKind::Input:
        if (n.init) throw SchemaError("input node '" + n.id + "' cannot carry an initial value");
        break;
      default:
        break;
    }
    if (n.init && !shapes_equal(n.init->shape(), n.shape))
      throw SchemaError("initial value shape mismatch on node '" + n.id + "'");
    if (n.kind == NodeKind::Operator) {
      const OpInfo& info = op_info(n.op);
      const auto& ins = inputs_of(n.id);
      int arity = static_cast<int>(ins.size());
      for (const std::string& p : ins)
        if (p.empty())
          throw SchemaError("node '" + n.id + "' has an unconnected input slot");
      if (arity < info.min_arity || (info.max_arity >= 0 && arity > info.max_arity))
        throw SchemaError("node '" + n.id + "' (" + info.name + ") has arity " +
                          std::to_string(arity));
    } else if (!inputs_of(n.id).empty()) {
      throw SchemaError("initial node '" + n.id + "' has inputs");
    }
  }
  if (loss_node) {
    const Node& l = node(*loss_node);
    if (shape_numel(l.shape) != 1)
      throw SchemaError("loss node '" + *loss_node + "' must be scalar");
  }
  if (!body_inputs.empty()) {
    if (body_inputs.size() != 3) throw SchemaError("loop body must declare 3 inputs");
    for (const std::string& id : body_inputs)
      if (node(id).kind != NodeKind::Input)
        throw SchemaError("loop body input '" + id + "' is not an input node");
    if (body_outputs.size() != 2) throw SchemaError("loop body must declare 2 outputs");
    for (const std::string& id : body_outputs) node(id);
    for (const Node& n : nodes)
      if (n.kind == NodeKind::Weight)
        throw SchemaError("loop bodies cannot contain weight nodes");
  }
}

// --- constant folding -----------------------------------------------------

std::optional<Tensor> try_const_value(const Graph& g, const std::string& id) {
  const Node& n = g.node(id);
  if (n.kind == NodeKind::Constant) return n.init;
  if (n.kind != NodeKind::Operator) return std::nullopt;
  const auto& ins = g.inputs_of(id);
  auto fold = [&](size_t slot) -> std::optional<Tensor> {
    if (slot >= ins.size()) return std::nullopt;
    return try_const_value(g, ins[slot]);
  };
  switch (n.op) {
    case Op::Shape_: {
      const Shape& s = g.node(ins[0]).shape;
      std::vector<double> vals(s.begin(), s.end());
      return Tensor(Shape{static_cast<int64_t>(s.size())}, vals);
    }
    case Op::Identity:
      return fold(0);
    case Op::Concat: {
      std::vector<Tensor> parts;
      for (size_t i = 0; i < ins.size(); ++i) {
        auto v = fold(i);
        if (!v) return std::nullopt;
        parts.push_back(*v);
      }
      return concat(parts, n.attrs.get_int("axis", 0));
    }
    case Op::Squeeze:
    case Op::Unsqueeze: {
      auto v = fold(0);
      if (!v) return std::nullopt;
      return v->reshaped(n.shape);
    }
    case Op::Gather: {
      auto v = fold(0);
      auto ix = fold(1);
      if (!v || !ix) return std::nullopt;
      return eval_op(Op::Gather, {*v, *ix}, n.attrs);
    }
    default:
      return std::nullopt;
  }
}

namespace {

std::optional<std::vector<int64_t>> const_ints(const Graph& g, const std::string& id) {
  auto v = try_const_value(g, id);
  if (!v) return std::nullopt;
  std::vector<int64_t> out;
  for (int64_t i = 0; i < v->numel(); ++i) {
    double d = v->at(i);
    int64_t r = std::llround(d);
    if (!std::isfinite(d) || std::abs(d - static_cast<double>(r)) > 1e-9)
      throw SchemaError("expected integral values in node '" + id + "'");
    out.push_back(r);
  }
  return out;
}

std::vector<int64_t> normalize_axes(std::vector<int64_t> axes, size_t rank) {
  for (int64_t& a : axes) {
    if (a < 0) a += static_cast<int64_t>(rank);
    if (a < 0 || a >= static_cast<int64_t>(rank))
      throw UnsupportedAttribute("axis out of range");
  }
  return axes;
}

// Axes for reductions: optional attr, optional second input, default = all.
std::optional<std::vector<int64_t>> resolve_reduce_axes(const Graph& g, const Node& n) {
  const auto& ins = g.inputs_of(n.id);
  const Shape& data = g.node(ins[0]).shape;
  if (n.op == Op::ReduceSum && ins.size() > 1) {
    auto ax = const_ints(g, ins[1]);
    if (!ax) return std::nullopt;
    return normalize_axes(*ax, data.size());
  }
  if (n.attrs.has("axes")) return normalize_axes(n.attrs.get_ints("axes", {}), data.size());
  std::vector<int64_t> all(data.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int64_t>(i);
  return all;
}

Shape matmul_shape(const Shape& a, const Shape& b) {
  if (a.size() > 2 || b.size() > 2 || a.empty() || b.empty())
    throw UnsupportedOperator("MatMul supports rank-1/2 operands only");
  int64_t n = a.size() == 2 ? a[0] : 1;
  int64_t k1 = a.size() == 2 ? a[1] : a[0];
  int64_t k2 = b.size() == 2 ? b[0] : b[0];
  int64_t l = b.size() == 2 ? b[1] : 1;
  if (k1 != k2) throw ShapeMismatch("MatMul inner dimensions disagree");
  Shape out;
  if (a.size() == 2) out.push_back(n);
  if (b.size() == 2) out.push_back(l);
  return out;
}

std::optional<Shape> slice_out_shape(const Graph& g, const Node& n) {
  const auto& ins = g.inputs_of(n.id);
  const Shape& data = g.node(ins[0]).shape;
  auto starts = const_ints(g, ins[1]);
  auto ends = const_ints(g, ins[2]);
  if (!starts || !ends) return std::nullopt;
  std::optional<std::vector<int64_t>> axes, steps;
  if (ins.size() > 3) {
    axes = const_ints(g, ins[3]);
    if (!axes) return std::nullopt;
  }
  if (ins.size() > 4) {
    steps = const_ints(g, ins[4]);
    if (!steps) return std::nullopt;
  }
  std::vector<int64_t> ax;
  if (axes) ax = normalize_axes(*axes, data.size());
  else
    for (size_t i = 0; i < starts->size(); ++i) ax.push_back(static_cast<int64_t>(i));
  Shape out = data;
  for (size_t i = 0; i < ax.size(); ++i) {
    int64_t dim = data[static_cast<size_t>(ax[i])];
    int64_t st = (*starts)[i], en = (*ends)[i];
    int64_t sp = steps ? (*steps)[i] : 1;
    if (sp <= 0) throw UnsupportedAttribute("Slice supports positive steps only");
    if (st < 0) st += dim;
    if (en < 0) en += dim;
    st = std::clamp<int64_t>(st, 0, dim);
    en = std::clamp<int64_t>(en, 0, dim);
    out[static_cast<size_t>(ax[i])] = en > st ? (en - st + sp - 1) / sp : 0;
    if (out[static_cast<size_t>(ax[i])] < 1) throw ShapeMismatch("Slice produces an empty dimension");
  }
  return out;
}

// Returns nullopt when the output shape depends on runtime data.
std::optional<Shape> infer_op_shape(const Graph& g, const Node& n) {
  const auto& ins = g.inputs_of(n.id);
  auto in_shape = [&](size_t i) -> const Shape& { return g.node(ins[i]).shape; };
  switch (n.op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Min:
    case Op::Max:
      return broadcast_shapes(in_shape(0), in_shape(1));
    case Op::Pow: {
      // a constant exponent must be a nonnegative integer; data-dependent
      // exponents are resolved by the analysis
      if (auto e = try_const_value(g, ins[1])) {
        for (int64_t i = 0; i < e->numel(); ++i) {
          double v = e->at(i);
          if (!std::isfinite(v) || v < 0.0 || v != std::floor(v))
            throw UnsupportedAttribute("Pow with constant exponent requires nonnegative integers");
        }
      }
      return broadcast_shapes(in_shape(0), in_shape(1));
    }
    case Op::Neg:
    case Op::Exp:
    case Op::Log:
    case Op::Sqrt:
    case Op::Reciprocal:
    case Op::Abs:
    case Op::Relu:
    case Op::Sigmoid:
    case Op::Tanh:
    case Op::Softplus:
    case Op::Identity:
    case Op::SubFromConstant:
      return in_shape(0);
    case Op::Softmax:
    case Op::LogSoftmax: {
      normalize_axes({n.attrs.get_int("axis", -1)}, in_shape(0).size());
      return in_shape(0);
    }
    case Op::MatMul:
      return matmul_shape(in_shape(0), in_shape(1));
    case Op::Gemm: {
      if (in_shape(0).size() != 2 || in_shape(1).size() != 2)
        throw UnsupportedOperator("Gemm expects rank-2 A and B");
      bool ta = n.attrs.get_int("transA", 0) != 0;
      bool tb = n.attrs.get_int("transB", 0) != 0;
      int64_t m = ta ? in_shape(0)[1] : in_shape(0)[0];
      int64_t ka = ta ? in_shape(0)[0] : in_shape(0)[1];
      int64_t kb = tb ? in_shape(1)[1] : in_shape(1)[0];
      int64_t l = tb ? in_shape(1)[0] : in_shape(1)[1];
      if (ka != kb) throw ShapeMismatch("Gemm inner dimensions disagree");
      Shape out{m, l};
      if (ins.size() > 2) broadcast_shapes(in_shape(2), out);
      return out;
    }
    case Op::Conv: {
      Shape out = conv2d_out_shape(in_shape(0), in_shape(1), conv_attrs_from(n.attrs));
      if (ins.size() > 2 && !(in_shape(2).size() == 1 && in_shape(2)[0] == out[1]))
        throw ShapeMismatch("Conv bias must have shape [M]");
      return out;
    }
    case Op::Reshape: {
      auto target = const_ints(g, ins[1]);
      if (!target) return std::nullopt;
      Shape out;
      int64_t known = 1, infer_at = -1;
      for (size_t i = 0; i < target->size(); ++i) {
        int64_t d = (*target)[i];
        if (d == -1) {
          if (infer_at >= 0) throw SchemaError("Reshape allows a single -1");
          infer_at = static_cast<int64_t>(i);
          out.push_back(1);
        } else if (d == 0) {
          if (i >= in_shape(0).size()) throw ShapeMismatch("Reshape 0-dim out of range");
          out.push_back(in_shape(0)[i]);
          known *= out.back();
        } else {
          out.push_back(d);
          known *= d;
        }
      }
      int64_t total = shape_numel(in_shape(0));
      if (infer_at >= 0) {
        if (known == 0 || total % known != 0) throw ShapeMismatch("Reshape cannot infer -1");
        out[static_cast<size_t>(infer_at)] = total / known;
      } else if (known != total) {
        throw ShapeMismatch("Reshape changes element count");
      }
      return out;
    }
    case Op::Shape_:
      return Shape{static_cast<int64_t>(in_shape(0).size())};
    case Op::Slice:
      return slice_out_shape(g, n);
    case Op::Gather: {
      int64_t axis = normalize_axes({n.attrs.get_int("axis", 0)}, in_shape(0).size())[0];
      Shape out;
      const Shape& data = in_shape(0);
      const Shape& idx = in_shape(1);
      for (int64_t i = 0; i < axis; ++i) out.push_back(data[static_cast<size_t>(i)]);
      for (int64_t d : idx) out.push_back(d);
      for (size_t i = static_cast<size_t>(axis) + 1; i < data.size(); ++i) out.push_back(data[i]);
      return out;
    }
    case Op::Squeeze: {
      std::optional<std::vector<int64_t>> axes;
      if (ins.size() > 1) {
        axes = const_ints(g, ins[1]);
        if (!axes) return std::nullopt;
      } else if (n.attrs.has("axes")) {
        axes = n.attrs.get_ints("axes", {});
      }
      const Shape& data = in_shape(0);
      std::set<int64_t> drop;
      if (axes) {
        for (int64_t a : normalize_axes(*axes, data.size())) {
          if (data[static_cast<size_t>(a)] != 1) throw ShapeMismatch("Squeeze of non-unit dim");
          drop.insert(a);
        }
      } else {
        for (size_t i = 0; i < data.size(); ++i)
          if (data[i] == 1) drop.insert(static_cast<int64_t>(i));
      }
      Shape out;
      for (size_t i = 0; i < data.size(); ++i)
        if (!drop.count(static_cast<int64_t>(i))) out.push_back(data[i]);
      return out;
    }
    case Op::Unsqueeze: {
      std::optional<std::vector<int64_t>> axes;
      if (ins.size() > 1) {
        axes = const_ints(g, ins[1]);
        if (!axes) return std::nullopt;
      } else {
        axes = n.attrs.get_ints("axes", {});
      }
      const Shape& data = in_shape(0);
      size_t out_rank = data.size() + axes->size();
      std::set<int64_t> at;
      for (int64_t a : *axes) {
        if (a < 0) a += static_cast<int64_t>(out_rank);
        if (a < 0 || a >= static_cast<int64_t>(out_rank))
          throw UnsupportedAttribute("Unsqueeze axis out of range");
        at.insert(a);
      }
      Shape out;
      size_t src = 0;
      for (size_t i = 0; i < out_rank; ++i) {
        if (at.count(static_cast<int64_t>(i))) out.push_back(1);
        else out.push_back(data[src++]);
      }
      return out;
    }
    case Op::Concat: {
      std::vector<Shape> parts;
      for (size_t i = 0; i < ins.size(); ++i) parts.push_back(in_shape(i));
      Shape out;
      concat_maps(parts, n.attrs.get_int("axis", 0), &out);
      return out;
    }
    case Op::Transpose: {
      const Shape& data = in_shape(0);
      std::vector<int64_t> perm = n.attrs.get_ints("perm", {});
      if (perm.empty())
        for (int64_t i = static_cast<int64_t>(data.size()) - 1; i >= 0; --i) perm.push_back(i);
      if (perm.size() != data.size()) throw UnsupportedAttribute("Transpose perm rank mismatch");
      Shape out;
      for (int64_t p : perm) out.push_back(data[static_cast<size_t>(p)]);
      return out;
    }
    case Op::ReduceSum:
    case Op::ReduceMean:
    case Op::ReduceMax:
    case Op::ReduceMin: {
      auto axes = resolve_reduce_axes(g, n);
      if (!axes) return std::nullopt;
      return reduce_out_shape(in_shape(0), *axes, n.attrs.get_int("keepdims", 1) != 0);
    }
    case Op::Clip:
      return in_shape(0);
    case Op::Range: {
      auto s = try_const_value(g, ins[0]);
      auto l = try_const_value(g, ins[1]);
      auto d = try_const_value(g, ins[2]);
      if (!s || !l || !d) return std::nullopt;
      double cnt = std::ceil((l->scalar_value() - s->scalar_value()) / d->scalar_value());
      if (!std::isfinite(cnt) || cnt < 1) throw ShapeMismatch("Range produces no elements");
      return Shape{static_cast<int64_t>(cnt)};
    }
    case Op::NegativeLogLikelihoodLoss: {
      const Shape& scores = in_shape(0);
      const Shape& target = in_shape(1);
      if (scores.size() != 2 || target.size() != 1 || target[0] != scores[0])
        throw ShapeMismatch("NegativeLogLikelihoodLoss expects (N,C) scores and (N) target");
      if (ins.size() > 2 && !(in_shape(2).size() == 1 && in_shape(2)[0] == scores[1]))
        throw ShapeMismatch("NegativeLogLikelihoodLoss weight must have shape (C)");
      std::string red = n.attrs.get_string("reduction", "mean");
      if (red == "none") return Shape{scores[0]};
      if (red != "mean" && red != "sum") throw UnsupportedAttribute("NLL reduction '" + red + "'");
      return Shape{};
    }
    case Op::Loop: {
      if (!n.body) throw SchemaError("Loop node '" + n.id + "' lacks a body");
      if (shape_numel(in_shape(0)) != 1 || shape_numel(in_shape(1)) != 1)
        throw ShapeMismatch("Loop trip count and condition must be scalar");
      const Graph& b = *n.body;
      const Shape& carried = in_shape(2);
      if (!shapes_equal(b.node(b.body_inputs[2]).shape, carried) ||
          !shapes_equal(b.node(b.body_outputs[1]).shape, carried))
        throw ShapeMismatch("Loop carried value shape is not invariant");
      if (shape_numel(b.node(b.body_outputs[0]).shape) != 1)
        throw ShapeMismatch("Loop body condition output must be scalar");
      return carried;
    }
    case Op::ConstantOfShape: {
      auto s = const_ints(g, ins[0]);
      if (!s) return std::nullopt;
      return Shape(s->begin(), s->end());
    }
    default:
      throw UnsupportedOperator("no shape rule for operator");
  }
}

}  // namespace

void Graph::infer_shapes() const {
  for (const std::string& id : topo_) {
    const Node& n = node(id);
    if (n.kind != NodeKind::Operator) continue;
    std::optional<Shape> s = infer_op_shape(*this, n);
    if (s && !shapes_equal(*s, n.shape))
      throw ShapeMismatch("node '" + id + "' declares shape " + shape_str(n.shape) +
                          " but operator produces " + shape_str(*s));
  }
}

std::vector<std::string> topo_order(const Graph& g) { return g.topo_order(); }

// --- parse / serialize ------------------------------------------------------

namespace {

DType dtype_from_string(const std::string& s) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  throw SchemaError("unknown dtype '" + s + "'");
}

NodeKind kind_from_string(const std::string& s) {
  if (s == "input") return NodeKind::Input;
  if (s == "weight") return NodeKind::Weight;
  if (s == "constant") return NodeKind::Constant;
  if (s == "op") return NodeKind::Operator;
  throw SchemaError("unknown node kind '" + s + "'");
}

std::string kind_to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Input: return "input";
    case NodeKind::Weight: return "weight";
    case NodeKind::Constant: return "constant";
    case NodeKind::Operator: return "op";
  }
  return "op";
}

}  // namespace

Graph parse_graph_json(const nlohmann::json& doc, bool is_body) {
  if (!doc.is_object()) throw SchemaError("graph document must be a JSON object");
  Graph g;
  g.name = doc.value("name", std::string("graph"));
  if (!doc.contains("nodes") || !doc.at("nodes").is_array())
    throw SchemaError("graph requires a 'nodes' array");

  for (const auto& jn : doc.at("nodes")) {
    Node n;
    if (!jn.contains("id") || !jn.at("id").is_string()) throw SchemaError("node requires an id");
    n.id = jn.at("id").get<std::string>();
    n.kind = kind_from_string(jn.value("kind", std::string("op")));
    if (n.kind == NodeKind::Operator) {
      if (!jn.contains("op")) throw SchemaError("operator node '" + n.id + "' requires 'op'");
      std::string opname = jn.at("op").get<std::string>();
      auto op = op_from_name(opname);
      if (!op) throw UnsupportedOperator("operator '" + opname + "' on node '" + n.id + "'");
      n.op = *op;
    }
    if (!jn.contains("shape") || !jn.at("shape").is_array())
      throw SchemaError("node '" + n.id + "' requires a shape");
    n.shape = jn.at("shape").get<Shape>();
    n.dtype = dtype_from_string(jn.value("dtype", std::string("f64")));
    if (jn.contains("attrs")) {
      if (!jn.at("attrs").is_object()) throw SchemaError("attrs must be an object");
      n.attrs.json = jn.at("attrs");
    }
    if (jn.contains("init")) n.init = tensor_from_json(jn.at("init"), n.shape);
    if (n.op == Op::Loop) {
      if (!n.attrs.has("body")) throw SchemaError("Loop node '" + n.id + "' requires attrs.body");
      auto body = std::make_shared<Graph>(parse_graph_json(n.attrs.json.at("body"), true));
      n.body = body;
      n.attrs.json.erase("body");
    }
    g.nodes.push_back(std::move(n));
  }

  if (doc.contains("edges")) {
    for (const auto& je : doc.at("edges")) {
      Edge e;
      e.from = je.at("from").get<std::string>();
      e.from_slot = je.value("from_slot", 0);
      e.to = je.at("to").get<std::string>();
      e.to_slot = je.value("to_slot", 0);
      g.edges.push_back(std::move(e));
    }
  }
  if (doc.contains("loss_node")) g.loss_node = doc.at("loss_node").get<std::string>();
  if (is_body) {
    if (!doc.contains("inputs") || !doc.contains("outputs"))
      throw SchemaError("loop body requires 'inputs' and 'outputs'");
    g.body_inputs = doc.at("inputs").get<std::vector<std::string>>();
    g.body_outputs = doc.at("outputs").get<std::vector<std::string>>();
  } else if (doc.contains("inputs") || doc.contains("outputs")) {
    throw SchemaError("'inputs'/'outputs' are reserved for loop bodies");
  }

  g.finalize();
  if (g.loss_node && !g.has_node(*g.loss_node))
    throw SchemaError("loss node '" + *g.loss_node + "' does not exist");
  return g;
}

Graph parse_graph(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("invalid JSON: ") + e.what());
  }
  try {
    return parse_graph_json(doc);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed graph document: ") + e.what());
  }
}

nlohmann::ordered_json serialize_graph(const Graph& g) {
  nlohmann::ordered_json doc;
  doc["name"] = g.name;
  doc["nodes"] = nlohmann::ordered_json::array();
  for (const Node& n : g.nodes) {
    nlohmann::ordered_json jn;
    jn["id"] = n.id;
    jn["kind"] = kind_to_string(n.kind);
    if (n.kind == NodeKind::Operator) jn["op"] = op_info(n.op).name;
    nlohmann::ordered_json attrs = n.attrs.json;
    if (n.body) attrs["body"] = serialize_graph(*n.body);
    if (!attrs.empty()) jn["attrs"] = attrs;
    jn["shape"] = n.shape;
    jn["dtype"] = dtype_name(n.dtype);
    if (n.init) jn["init"] = tensor_to_json(*n.init);
    doc["nodes"].push_back(jn);
  }
  doc["edges"] = nlohmann::ordered_json::array();
  for (const Edge& e : g.edges) {
    nlohmann::ordered_json je;
    je["from"] = e.from;
    je["from_slot"] = e.from_slot;
    je["to"] = e.to;
    je["to_slot"] = e.to_slot;
    doc["edges"].push_back(je);
  }
  if (g.loss_node) doc["loss_node"] = *g.loss_node;
  if (!g.body_inputs.empty()) {
    doc["inputs"] = g.body_inputs;
    doc["outputs"] = g.body_outputs;
  }
  return doc;
}

std::string serialize_graph_text(const Graph& g) { return serialize_graph(g).dump(2) + "\n"; }

bool FiniteReport::flags(const std::string& id) const {
  return std::find(nonfinite_nodes.begin(), nonfinite_nodes.end(), id) != nonfinite_nodes.end();
}

}  // namespace ranum
