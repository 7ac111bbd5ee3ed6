#pragma once

#include <functional>
#include <map>
#include <set>
#include <vector>

#include "ranum/tensor.hpp"

namespace ranum {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int32_t id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Which recorded operations an override may re-route during backward.
enum class OpTag { None, Relu };

// Backward-rule overrides. Forward values are never touched; only the vjp
// consulted during backward changes. The one rule shipped replaces Relu's
// subgradient with the softplus derivative 1 - 1/(1+exp(x)).
struct GradientOverride {
  std::set<OpTag> softplus_ste;
  bool active_for(OpTag t) const { return softplus_ste.count(t) > 0; }
  static GradientOverride none() { return {}; }
  static GradientOverride default_ste() { return GradientOverride{{OpTag::Relu}}; }
};

// Eager reverse-mode tape. Every op computes its value immediately and
// records a vjp closure built from tape ops, so backward() itself extends
// the tape and gradients stay differentiable (grad-of-grad).
class Tape {
 public:
  using Vjp = std::function<std::vector<Var>(Tape&, const std::vector<Var>&, Var, Var)>;

  Var leaf(Tensor v);            // differentiable leaf
  Var constant(Tensor v);        // non-differentiable value
  Var scalar_const(double v) { return constant(Tensor::scalar(v)); }

  const Tensor& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  size_t size() const { return nodes_.size(); }

  // elementwise (broadcasting)
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var minimum(Var a, Var b);
  Var maximum(Var a, Var b);
  Var pow_vv(Var a, Var b);                 // general a^b, IEEE semantics
  Var pow_const(Var a, Tensor p);           // exponent fixed at record time
  Var select(Tensor mask, Var a, Var b);    // mask is a constant

  // unary
  Var neg(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var sqrt(Var a);
  Var reciprocal(Var a);
  Var abs(Var a);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var softplus(Var a);

  // structure
  Var matmul(Var a, Var b);
  Var conv2d(Var x, Var k, ConvAttrs attrs);
  Var reindex(Var x, Shape out_shape, std::vector<int64_t> map);
  Var scatter(Var x, Shape dst_shape, std::vector<int64_t> map);
  Var concat(const std::vector<Var>& parts, int64_t axis);
  Var reshape(Var x, const Shape& s);
  Var broadcast(Var x, const Shape& s);
  Var sum_to_shape(Var x, const Shape& s);

  // reductions
  Var reduce_sum(Var a, std::vector<int64_t> axes, bool keepdims);
  Var reduce_mean(Var a, std::vector<int64_t> axes, bool keepdims);
  Var reduce_max(Var a, std::vector<int64_t> axes, bool keepdims);
  Var reduce_min(Var a, std::vector<int64_t> axes, bool keepdims);
  Var reduce_sum_all(Var a) { return reduce_sum(a, all_axes(a), false); }
  Var reduce_min_all(Var a) { return reduce_min(a, all_axes(a), false); }
  Var reduce_max_all(Var a) { return reduce_max(a, all_axes(a), false); }

  // compositions
  Var softmax(Var x, int64_t axis);
  Var log_softmax(Var x, int64_t axis);
  Var clip(Var x, Var lo, Var hi) { return minimum(maximum(x, lo), hi); }
  Var square(Var x) { return mul(x, x); }
  Var sum_squares(Var x) { return reduce_sum_all(square(x)); }

  // Gradients of a scalar seed w.r.t. `wrt`. Appends the vjp computation to
  // the tape so results are themselves differentiable. Vars with no path to
  // the seed get zero gradients.
  std::vector<Var> backward(Var seed, const std::vector<Var>& wrt,
                            const GradientOverride& ov = GradientOverride::none());

 private:
  struct Node {
    Tensor value;
    std::vector<int32_t> parents;
    Vjp vjp;
    bool requires_grad = false;
    OpTag tag = OpTag::None;
  };

  std::vector<int64_t> all_axes(Var a) const {
    std::vector<int64_t> ax(shape(a).size());
    for (size_t i = 0; i < ax.size(); ++i) ax[i] = static_cast<int64_t>(i);
    return ax;
  }

  Var record(Tensor value, std::vector<Var> parents, Vjp vjp, OpTag tag = OpTag::None);
  Var unary_op(Var a, const std::function<double(double)>& f,
               const std::function<Var(Tape&, Var x, Var y, Var g)>& grad, OpTag tag = OpTag::None);
  Var binary_op(Var a, Var b, const std::function<double(double, double)>& f,
                const std::function<Var(Tape&, Var a, Var b, Var y, Var g)>& ga,
                const std::function<Var(Tape&, Var a, Var b, Var y, Var g)>& gb);

  std::vector<Node> nodes_;
};

}  // namespace ranum
