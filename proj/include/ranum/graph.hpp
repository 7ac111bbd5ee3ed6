#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ranum/autodiff.hpp"
#include "ranum/tensor.hpp"

namespace ranum {

enum class NodeKind { Input, Weight, Constant, Operator };

enum class Op {
  None,
  Add, Sub, Mul, Div, Pow, MatMul, Gemm, Conv,
  Neg, Exp, Log, Sqrt, Reciprocal, Abs, Relu, Sigmoid, Tanh, Softplus,
  Softmax, LogSoftmax, SubFromConstant,
  Reshape, Shape_, Slice, Gather, Squeeze, Unsqueeze, Concat, Transpose,
  ReduceSum, ReduceMean, ReduceMax, ReduceMin,
  Clip, Min, Max, Range, NegativeLogLikelihoodLoss, Loop, Identity, ConstantOfShape,
};

struct OpInfo {
  Op op;
  const char* name;
  int min_arity;
  int max_arity;             // -1 for variadic
  bool defect_prone;
  std::vector<int> fg_slots; // 1-based fine-grained requiring input slots
  bool fg_stopping;
};

const OpInfo& op_info(Op op);
std::optional<Op> op_from_name(const std::string& name);
const std::vector<Op>& all_ops();

struct Attrs {
  nlohmann::json json = nlohmann::json::object();

  bool has(const std::string& k) const { return json.contains(k); }
  int64_t get_int(const std::string& k, int64_t dflt) const;
  double get_double(const std::string& k, double dflt) const;
  std::string get_string(const std::string& k, const std::string& dflt) const;
  std::vector<int64_t> get_ints(const std::string& k, std::vector<int64_t> dflt) const;
};

class Graph;

struct Node {
  std::string id;
  NodeKind kind = NodeKind::Operator;
  Op op = Op::None;
  Attrs attrs;
  Shape shape;
  DType dtype = DType::F64;
  std::optional<Tensor> init;
  std::shared_ptr<const Graph> body;  // Loop only

  bool is_initial() const { return kind != NodeKind::Operator; }
};

struct Edge {
  std::string from;
  int from_slot = 0;
  std::string to;
  int to_slot = 0;
};

// Immutable after finalize(); safe to share across threads.
class Graph {
 public:
  std::string name;
  std::vector<Node> nodes;
  std::vector<Edge> edges;
  std::optional<std::string> loss_node;
  // Loop bodies only: ordered formal inputs (iteration counter, incoming
  // condition, carried value) and outputs (condition, carried value).
  std::vector<std::string> body_inputs;
  std::vector<std::string> body_outputs;

  void finalize();  // build indexes, validate, infer shapes

  bool has_node(const std::string& id) const { return index_.count(id) > 0; }
  const Node& node(const std::string& id) const;
  size_t node_pos(const std::string& id) const;

  // Producer id per input slot, in slot order; empty producers are invalid
  // post-finalize for operator nodes.
  const std::vector<std::string>& inputs_of(const std::string& id) const;
  const std::vector<std::string>& consumers_of(const std::string& id) const;

  const std::vector<std::string>& topo_order() const { return topo_; }
  // Node ids reachable strictly downstream of `id`.
  std::vector<std::string> descendants(const std::string& id) const;

  std::vector<std::string> input_node_ids() const;
  std::vector<std::string> weight_node_ids() const;

 private:
  std::map<std::string, size_t> index_;
  std::map<std::string, std::vector<std::string>> in_edges_;
  std::map<std::string, std::vector<std::string>> consumers_;
  std::vector<std::string> topo_;

  void validate() const;
  void compute_topo();
  void infer_shapes() const;
};

Graph parse_graph(const std::string& json_text);
Graph parse_graph_json(const nlohmann::json& doc, bool is_body = false);
nlohmann::ordered_json serialize_graph(const Graph& g);
std::string serialize_graph_text(const Graph& g);

Tensor tensor_from_json(const nlohmann::json& j, const Shape& expect_shape);
nlohmann::ordered_json tensor_to_json(const Tensor& t);

// Deterministic topological order (producers first, ties by node id).
std::vector<std::string> topo_order(const Graph& g);

// Constant folding over Constant/Shape/Identity/Concat/Squeeze/Unsqueeze/
// Gather chains; used by shape inference and static validation.
std::optional<Tensor> try_const_value(const Graph& g, const std::string& id);

using Binding = std::map<std::string, Tensor>;

struct NodeVal {
  std::vector<Tensor> inputs;
  Tensor output;
};

struct FiniteReport {
  std::vector<std::string> nonfinite_nodes;  // topo order
  bool flags(const std::string& id) const;
  bool empty() const { return nonfinite_nodes.empty(); }
};

struct ExecResult {
  std::map<std::string, NodeVal> values;
  FiniteReport finite_report;
};

struct ExecOptions {
  int64_t loop_budget = 100000;
};

// Concrete execution in topological order. Arithmetic runs in f64 and each
// node's output is rounded to its declared dtype; non-finite values propagate
// per IEEE semantics so one run reports every triggered node.
ExecResult execute(const Graph& g, const Binding& inputs, const Binding& weights,
                   const ExecOptions& opt = {});

// Stateless single-operator evaluation (everything except Loop).
Tensor eval_op(Op op, const std::vector<Tensor>& inputs, const Attrs& attrs);

ConvAttrs conv_attrs_from(const Attrs& attrs);

// Tape-recorded f64 forward pass used for gradient-based search. Initial
// nodes resolve to `initial_vars` when present, else to their stored values.
struct Trace {
  std::map<std::string, std::vector<Var>> node_inputs;
  std::map<std::string, Var> node_outputs;
};

Trace trace_execute(Tape& t, const Graph& g, const std::map<std::string, Var>& initial_vars,
                    const ExecOptions& opt = {});

}  // namespace ranum
