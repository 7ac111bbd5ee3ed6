#include "ranum/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace ranum {

namespace {

Tensor mask_gt_zero(const Tensor& x) {
  return unary_map(x, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor mask_sign(const Tensor& x) {
  return unary_map(x, [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

}  // namespace

Var Tape::record(Tensor value, std::vector<Var> parents, Vjp vjp, OpTag tag) {
  Node n;
  n.value = std::move(value);
  n.vjp = std::move(vjp);
  n.tag = tag;
  for (const Var& p : parents) {
    if (p.tape != this) throw Error("mixed tapes in one expression");
    n.parents.push_back(p.id);
    if (nodes_[static_cast<size_t>(p.id)].requires_grad) n.requires_grad = true;
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor v) {
  Node n;
  n.value = std::move(v);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor v) {
  Node n;
  n.value = std::move(v);
  n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int32_t>(nodes_.size()))
    throw Error("invalid tape variable");
  return nodes_[static_cast<size_t>(v.id)].value;
}

Var Tape::unary_op(Var a, const std::function<double(double)>& f,
                   const std::function<Var(Tape&, Var, Var, Var)>& grad, OpTag tag) {
  Tensor y = unary_map(value(a), f);
  return record(std::move(y), {a},
                [grad](Tape& t, const std::vector<Var>& ps, Var out, Var g) {
                  Var x{&t, ps[0].id};
                  return std::vector<Var>{grad(t, x, out, g)};
                },
                tag);
}

Var Tape::binary_op(Var a, Var b, const std::function<double(double, double)>& f,
                    const std::function<Var(Tape&, Var, Var, Var, Var)>& ga,
                    const std::function<Var(Tape&, Var, Var, Var, Var)>& gb) {
  Tensor y = binary_broadcast(value(a), value(b), f);
  Shape sa = value(a).shape(), sb = value(b).shape();
  return record(std::move(y), {a, b},
                [ga, gb, sa, sb](Tape& t, const std::vector<Var>& ps, Var out, Var g) {
                  Var x{&t, ps[0].id}, y2{&t, ps[1].id};
                  Var da = t.sum_to_shape(ga(t, x, y2, out, g), sa);
                  Var db = t.sum_to_shape(gb(t, x, y2, out, g), sb);
                  return std::vector<Var>{da, db};
                });
}

Var Tape::add(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](Tape&, Var, Var, Var, Var g) { return g; },
      [](Tape&, Var, Var, Var, Var g) { return g; });
}

Var Tape::sub(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](Tape&, Var, Var, Var, Var g) { return g; },
      [](Tape& t, Var, Var, Var, Var g) { return t.neg(g); });
}

Var Tape::mul(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](Tape& t, Var, Var b2, Var, Var g) { return t.mul(g, b2); },
      [](Tape& t, Var a2, Var, Var, Var g) { return t.mul(g, a2); });
}

Var Tape::div(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; },
      [](Tape& t, Var, Var b2, Var, Var g) { return t.div(g, b2); },
      [](Tape& t, Var, Var b2, Var out, Var g) {
        return t.neg(t.div(t.mul(g, out), b2));  // -g*a/b^2 = -g*out/b
      });
}

Var Tape::minimum(Var a, Var b) {
  Tensor m = binary_broadcast(value(a), value(b),
                              [](double x, double y) { return x <= y ? 1.0 : 0.0; });
  return binary_op(
      a, b, [](double x, double y) { return std::min(x, y); },
      [m](Tape& t, Var, Var, Var, Var g) { return t.mul(g, t.constant(m)); },
      [m](Tape& t, Var, Var, Var, Var g) {
        Tensor inv = unary_map(m, [](double v) { return 1.0 - v; });
        return t.mul(g, t.constant(inv));
      });
}

Var Tape::maximum(Var a, Var b) {
  Tensor m = binary_broadcast(value(a), value(b),
                              [](double x, double y) { return x >= y ? 1.0 : 0.0; });
  return binary_op(
      a, b, [](double x, double y) { return std::max(x, y); },
      [m](Tape& t, Var, Var, Var, Var g) { return t.mul(g, t.constant(m)); },
      [m](Tape& t, Var, Var, Var, Var g) {
        Tensor inv = unary_map(m, [](double v) { return 1.0 - v; });
        return t.mul(g, t.constant(inv));
      });
}

Var Tape::pow_vv(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return std::pow(x, y); },
      [](Tape& t, Var a2, Var b2, Var, Var g) {
        // d/da a^b = b * a^(b-1)
        return t.mul(g, t.mul(b2, t.pow_vv(a2, t.sub(b2, t.scalar_const(1.0)))));
      },
      [](Tape& t, Var a2, Var, Var out, Var g) {
        return t.mul(g, t.mul(out, t.log(a2)));  // a^b * ln a
      });
}

Var Tape::pow_const(Var a, Tensor p) {
  Tensor y = binary_broadcast(value(a), p, [](double x, double e) { return std::pow(x, e); });
  Shape sa = value(a).shape();
  return record(std::move(y), {a},
                [p, sa](Tape& t, const std::vector<Var>& ps, Var, Var g) {
                  Var x{&t, ps[0].id};
                  // p * x^(p-1), forced to zero where p == 0
                  Tensor pm1 = unary_map(p, [](double e) { return e - 1.0; });
                  Tensor nz = unary_map(p, [](double e) { return e != 0.0 ? 1.0 : 0.0; });
                  Var coef = t.mul(t.constant(p), t.pow_const(x, pm1));
                  coef = t.mul(coef, t.constant(nz));
                  return std::vector<Var>{t.sum_to_shape(t.mul(g, coef), sa)};
                });
}

Var Tape::select(Tensor mask, Var a, Var b) {
  Tensor y = ranum::select(mask, value(a), value(b));
  Shape sa = value(a).shape(), sb = value(b).shape();
  return record(std::move(y), {a, b},
                [mask, sa, sb](Tape& t, const std::vector<Var>&, Var, Var g) {
                  Tensor inv = unary_map(mask, [](double v) { return v != 0.0 ? 0.0 : 1.0; });
                  Tensor m = unary_map(mask, [](double v) { return v != 0.0 ? 1.0 : 0.0; });
                  Var da = t.sum_to_shape(t.mul(g, t.constant(m)), sa);
                  Var db = t.sum_to_shape(t.mul(g, t.constant(inv)), sb);
                  return std::vector<Var>{da, db};
                });
}

Var Tape::neg(Var a) {
  return unary_op(a, [](double v) { return -v; },
                  [](Tape& t, Var, Var, Var g) { return t.neg(g); });
}

Var Tape::exp(Var a) {
  return unary_op(a, [](double v) { return std::exp(v); },
                  [](Tape& t, Var, Var y, Var g) { return t.mul(g, y); });
}

Var Tape::log(Var a) {
  return unary_op(a, [](double v) { return std::log(v); },
                  [](Tape& t, Var x, Var, Var g) { return t.div(g, x); });
}

Var Tape::sqrt(Var a) {
  return unary_op(a, [](double v) { return std::sqrt(v); },
                  [](Tape& t, Var, Var y, Var g) {
                    return t.div(g, t.mul(t.scalar_const(2.0), y));
                  });
}

Var Tape::reciprocal(Var a) {
  return unary_op(a, [](double v) { return 1.0 / v; },
                  [](Tape& t, Var, Var y, Var g) { return t.neg(t.mul(g, t.mul(y, y))); });
}

Var Tape::abs(Var a) {
  Tensor s = mask_sign(value(a));
  return unary_op(a, [](double v) { return std::abs(v); },
                  [s](Tape& t, Var, Var, Var g) { return t.mul(g, t.constant(s)); });
}

Var Tape::relu(Var a) {
  Tensor m = mask_gt_zero(value(a));
  return unary_op(
      a, [](double v) { return v > 0.0 ? v : 0.0; },
      [m](Tape& t, Var, Var, Var g) { return t.mul(g, t.constant(m)); }, OpTag::Relu);
}

Var Tape::sigmoid(Var a) {
  return unary_op(a, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                  [](Tape& t, Var, Var y, Var g) {
                    return t.mul(g, t.mul(y, t.sub(t.scalar_const(1.0), y)));
                  });
}

Var Tape::tanh(Var a) {
  return unary_op(a, [](double v) { return std::tanh(v); },
                  [](Tape& t, Var, Var y, Var g) {
                    return t.mul(g, t.sub(t.scalar_const(1.0), t.mul(y, y)));
                  });
}

Var Tape::softplus(Var a) {
  // log(1+exp(x)) with the usual large-x guard
  return unary_op(a,
                  [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
                  [](Tape& t, Var x, Var, Var g) { return t.mul(g, t.sigmoid(x)); });
}

Var Tape::matmul(Var a, Var b) {
  Tensor y = matmul2d(value(a), value(b));
  return record(std::move(y), {a, b},
                [](Tape& t, const std::vector<Var>& ps, Var, Var g) {
                  Var a2{&t, ps[0].id}, b2{&t, ps[1].id};
                  const Shape& sa = t.shape(a2);
                  const Shape& sb = t.shape(b2);
                  // transposes via reindex
                  auto transpose2d = [&t](Var m) {
                    const Shape& s = t.shape(m);
                    Shape os{s[1], s[0]};
                    std::vector<int64_t> map(static_cast<size_t>(s[0] * s[1]));
                    for (int64_t i = 0; i < s[1]; ++i)
                      for (int64_t j = 0; j < s[0]; ++j)
                        map[static_cast<size_t>(i * s[0] + j)] = j * s[1] + i;
                    return t.reindex(m, os, map);
                  };
                  Var da = t.matmul(g, transpose2d(b2));
                  Var db = t.matmul(transpose2d(a2), g);
                  (void)sa;
                  (void)sb;
                  return std::vector<Var>{da, db};
                });
}

namespace {

// Maps for 4-D permute and spatial flip, built once per vjp call.
std::vector<int64_t> perm4_map(const Shape& in, const std::vector<int64_t>& perm, Shape* out) {
  Shape os(4);
  for (int i = 0; i < 4; ++i) os[static_cast<size_t>(i)] = in[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  *out = os;
  auto si = row_major_strides(in);
  std::vector<int64_t> map(static_cast<size_t>(shape_numel(os)));
  std::vector<int64_t> idx(4, 0);
  for (int64_t i = 0; i < shape_numel(os); ++i) {
    int64_t flat = 0;
    for (int d = 0; d < 4; ++d) flat += idx[static_cast<size_t>(d)] * si[static_cast<size_t>(perm[static_cast<size_t>(d)])];
    map[static_cast<size_t>(i)] = flat;
    next_index(idx, os);
  }
  return map;
}

std::vector<int64_t> flip_hw_map(const Shape& s) {
  auto st = row_major_strides(s);
  std::vector<int64_t> map(static_cast<size_t>(shape_numel(s)));
  std::vector<int64_t> idx(4, 0);
  for (int64_t i = 0; i < shape_numel(s); ++i) {
    std::vector<int64_t> j = idx;
    j[2] = s[2] - 1 - j[2];
    j[3] = s[3] - 1 - j[3];
    map[static_cast<size_t>(i)] = ravel(j, st);
    next_index(idx, s);
  }
  return map;
}

}  // namespace

Var Tape::conv2d(Var x, Var k, ConvAttrs attrs) {
  Tensor y = ranum::conv2d(value(x), value(k), attrs);
  return record(std::move(y), {x, k},
                [attrs](Tape& t, const std::vector<Var>& ps, Var, Var g) {
                  if (attrs.stride_h != 1 || attrs.stride_w != 1)
                    throw UnsupportedAttribute("conv2d backward supports stride 1 only");
                  Var x2{&t, ps[0].id}, k2{&t, ps[1].id};
                  const Shape& sk = t.shape(k2);
                  int64_t kh = sk[2], kw = sk[3];
                  // grad wrt input: full correlation with the channel-swapped,
                  // spatially flipped kernel
                  Shape skt;
                  auto pm = perm4_map(sk, {1, 0, 2, 3}, &skt);
                  Var kswap = t.reindex(k2, skt, pm);
                  Var kflip = t.reindex(kswap, skt, flip_hw_map(skt));
                  ConvAttrs ai;
                  ai.pad_top = kh - 1 - attrs.pad_top;
                  ai.pad_bottom = kh - 1 - attrs.pad_bottom;
                  ai.pad_left = kw - 1 - attrs.pad_left;
                  ai.pad_right = kw - 1 - attrs.pad_right;
                  Var dx = t.conv2d(g, kflip, ai);
                  // grad wrt kernel: correlate input with the output gradient,
                  // batching over channels
                  Shape sxt, sgt;
                  auto pmx = perm4_map(t.shape(x2), {1, 0, 2, 3}, &sxt);
                  Var xswap = t.reindex(x2, sxt, pmx);
                  auto pmg = perm4_map(t.shape(g), {1, 0, 2, 3}, &sgt);
                  Var gswap = t.reindex(g, sgt, pmg);
                  ConvAttrs ak;
                  ak.pad_top = attrs.pad_top;
                  ak.pad_bottom = attrs.pad_bottom;
                  ak.pad_left = attrs.pad_left;
                  ak.pad_right = attrs.pad_right;
                  Var dkt = t.conv2d(xswap, gswap, ak);  // (C, M, kh, kw)
                  Shape sdk;
                  auto pmk = perm4_map(t.shape(dkt), {1, 0, 2, 3}, &sdk);
                  Var dk = t.reindex(dkt, sdk, pmk);
                  return std::vector<Var>{dx, dk};
                });
}

Var Tape::reindex(Var x, Shape out_shape, std::vector<int64_t> map) {
  Tensor y = ranum::reindex(value(x), out_shape, map);
  Shape src_shape = value(x).shape();
  return record(std::move(y), {x},
                [map, src_shape](Tape& t, const std::vector<Var>&, Var, Var g) {
                  return std::vector<Var>{t.scatter(g, src_shape, map)};
                });
}

Var Tape::scatter(Var x, Shape dst_shape, std::vector<int64_t> map) {
  Tensor y = ranum::scatter_add(value(x), dst_shape, map);
  Shape src_shape = value(x).shape();
  return record(std::move(y), {x},
                [map, src_shape](Tape& t, const std::vector<Var>&, Var, Var g) {
                  return std::vector<Var>{t.reindex(g, src_shape, map)};
                });
}

Var Tape::concat(const std::vector<Var>& parts, int64_t axis) {
  std::vector<Shape> shapes;
  std::vector<Tensor> vals;
  for (Var p : parts) {
    shapes.push_back(value(p).shape());
    vals.push_back(value(p));
  }
  Shape os;
  auto maps = concat_maps(shapes, axis, &os);
  Tensor y(os);
  for (size_t p = 0; p < vals.size(); ++p)
    for (int64_t i = 0; i < vals[p].numel(); ++i) y.at(maps[p][static_cast<size_t>(i)]) = vals[p].at(i);
  std::vector<Var> ps(parts.begin(), parts.end());
  return record(std::move(y), ps,
                [maps, shapes](Tape& t, const std::vector<Var>&, Var, Var g) {
                  std::vector<Var> grads;
                  for (size_t p = 0; p < maps.size(); ++p) {
                    // gather this part's slots back out of the concatenated gradient
                    grads.push_back(t.reindex(g, shapes[p], maps[p]));
                  }
                  return grads;
                });
}

Var Tape::reshape(Var x, const Shape& s) {
  if (shape_numel(s) != value(x).numel())
    throw ShapeMismatch("reshape " + shape_str(value(x).shape()) + " -> " + shape_str(s));
  std::vector<int64_t> map(static_cast<size_t>(shape_numel(s)));
  for (size_t i = 0; i < map.size(); ++i) map[i] = static_cast<int64_t>(i);
  return reindex(x, s, map);
}

Var Tape::broadcast(Var x, const Shape& s) {
  if (shapes_equal(value(x).shape(), s)) return x;
  const Shape& in = value(x).shape();
  auto si = row_major_strides(in);
  std::vector<int64_t> map(static_cast<size_t>(shape_numel(s)));
  std::vector<int64_t> idx(s.size(), 0);
  size_t off = s.size() - in.size();
  for (int64_t i = 0; i < shape_numel(s); ++i) {
    int64_t flat = 0;
    for (size_t d = 0; d < in.size(); ++d) {
      int64_t j = in[d] == 1 ? 0 : idx[d + off];
      flat += j * si[d];
    }
    map[static_cast<size_t>(i)] = flat;
    next_index(idx, s);
  }
  return reindex(x, s, map);
}

Var Tape::sum_to_shape(Var x, const Shape& s) {
  if (shapes_equal(value(x).shape(), s)) return x;
  const Shape& in = value(x).shape();
  auto st = row_major_strides(s);
  std::vector<int64_t> map(static_cast<size_t>(value(x).numel()));
  std::vector<int64_t> idx(in.size(), 0);
  size_t off = in.size() - s.size();
  for (int64_t i = 0; i < value(x).numel(); ++i) {
    int64_t flat = 0;
    for (size_t d = 0; d < s.size(); ++d) {
      int64_t j = s[d] == 1 ? 0 : idx[d + off];
      flat += j * st[d];
    }
    map[static_cast<size_t>(i)] = flat;
    next_index(idx, in);
  }
  return scatter(x, s, map);
}

Var Tape::reduce_sum(Var a, std::vector<int64_t> axes, bool keepdims) {
  Tensor y = ranum::reduce_sum(value(a), axes, keepdims);
  Shape in = value(a).shape();
  return record(std::move(y), {a},
                [axes, keepdims, in](Tape& t, const std::vector<Var>&, Var, Var g) {
                  Var gk = g;
                  if (!keepdims) gk = t.reshape(g, reduce_out_shape(in, axes, true));
                  return std::vector<Var>{t.broadcast(gk, in)};
                });
}

Var Tape::reduce_mean(Var a, std::vector<int64_t> axes, bool keepdims) {
  Tensor s = ranum::reduce_sum(value(a), axes, true);
  double count = static_cast<double>(value(a).numel()) / static_cast<double>(s.numel());
  Var total = reduce_sum(a, axes, keepdims);
  return mul(total, scalar_const(1.0 / count));
}

namespace {

// One-hot mask of the first extremal element within each reduction group.
Tensor extremum_mask(const Tensor& a, const std::vector<int64_t>& axes, bool take_max) {
  Tensor ext = take_max ? reduce_max(a, axes, true) : reduce_min(a, axes, true);
  Tensor extb = broadcast_to(ext, a.shape());
  Tensor mask(a.shape());
  // mark first match per group: walk in row-major order with a "claimed" buffer
  Tensor claimed = Tensor::zeros(ext.shape());
  const Shape& in = a.shape();
  std::vector<bool> red(in.size(), false);
  for (int64_t ax : axes) {
    int64_t x = ax < 0 ? ax + static_cast<int64_t>(in.size()) : ax;
    red[static_cast<size_t>(x)] = true;
  }
  auto so = row_major_strides(ext.shape());
  std::vector<int64_t> idx(in.size(), 0);
  for (int64_t i = 0; i < a.numel(); ++i) {
    int64_t flat = 0;
    size_t od = 0;
    for (size_t d = 0; d < in.size(); ++d) {
      int64_t j = red[d] ? 0 : idx[d];
      flat += j * so[od++];
    }
    if (claimed.at(flat) == 0.0 && a.at(i) == extb.at(i)) {
      mask.at(i) = 1.0;
      claimed.at(flat) = 1.0;
    }
    next_index(idx, in);
  }
  return mask;
}

}  // namespace

Var Tape::reduce_max(Var a, std::vector<int64_t> axes, bool keepdims) {
  Tensor y = ranum::reduce_max(value(a), axes, keepdims);
  Tensor mask = extremum_mask(value(a), axes, true);
  Shape in = value(a).shape();
  return record(std::move(y), {a},
                [axes, keepdims, in, mask](Tape& t, const std::vector<Var>&, Var, Var g) {
                  Var gk = g;
                  if (!keepdims) gk = t.reshape(g, reduce_out_shape(in, axes, true));
                  return std::vector<Var>{t.mul(t.broadcast(gk, in), t.constant(mask))};
                });
}

Var Tape::reduce_min(Var a, std::vector<int64_t> axes, bool keepdims) {
  Tensor y = ranum::reduce_min(value(a), axes, keepdims);
  Tensor mask = extremum_mask(value(a), axes, false);
  Shape in = value(a).shape();
  return record(std::move(y), {a},
                [axes, keepdims, in, mask](Tape& t, const std::vector<Var>&, Var, Var g) {
                  Var gk = g;
                  if (!keepdims) gk = t.reshape(g, reduce_out_shape(in, axes, true));
                  return std::vector<Var>{t.mul(t.broadcast(gk, in), t.constant(mask))};
                });
}

Var Tape::softmax(Var x, int64_t axis) {
  int64_t ax = axis < 0 ? axis + static_cast<int64_t>(shape(x).size()) : axis;
  Var m = reduce_max(x, {ax}, true);
  Var e = exp(sub(x, m));
  Var s = reduce_sum(e, {ax}, true);
  return div(e, s);
}

Var Tape::log_softmax(Var x, int64_t axis) {
  int64_t ax = axis < 0 ? axis + static_cast<int64_t>(shape(x).size()) : axis;
  Var m = reduce_max(x, {ax}, true);
  Var sh = sub(x, m);
  Var lse = log(reduce_sum(exp(sh), {ax}, true));
  return sub(sh, lse);
}

std::vector<Var> Tape::backward(Var seed, const std::vector<Var>& wrt,
                                const GradientOverride& ov) {
  if (seed.tape != this) throw Error("backward: seed from another tape");
  if (value(seed).numel() != 1)
    throw Error("backward: seed must be a scalar");
  size_t frontier = static_cast<size_t>(seed.id) + 1;
  std::vector<Var> adj(frontier);
  adj[static_cast<size_t>(seed.id)] = constant(Tensor(value(seed).shape(), 1.0));

  for (int32_t id = seed.id; id >= 0; --id) {
    // the vjp may grow nodes_ and invalidate references; copy what we need
    Vjp rule = nodes_[static_cast<size_t>(id)].vjp;
    OpTag tag = nodes_[static_cast<size_t>(id)].tag;
    std::vector<int32_t> parent_ids = nodes_[static_cast<size_t>(id)].parents;
    bool needs_grad = nodes_[static_cast<size_t>(id)].requires_grad;
    Var a = adj[static_cast<size_t>(id)];
    if (!a.valid() || !needs_grad || parent_ids.empty() || !rule) continue;

    if (tag == OpTag::Relu && ov.active_for(OpTag::Relu)) {
      // straight-through estimator: softplus derivative in place of the step
      rule = [](Tape& t, const std::vector<Var>& ps, Var, Var g) {
        Var x{&t, ps[0].id};
        return std::vector<Var>{t.mul(g, t.sigmoid(x))};
      };
    }
    std::vector<Var> parents;
    for (int32_t p : parent_ids) parents.push_back(Var{this, p});
    std::vector<Var> contribs = rule(*this, parents, Var{this, id}, a);
    if (contribs.size() != parent_ids.size()) throw Error("vjp arity mismatch");
    for (size_t i = 0; i < contribs.size(); ++i) {
      int32_t pid = parent_ids[i];
      if (!nodes_[static_cast<size_t>(pid)].requires_grad) continue;
      Var& slot = adj[static_cast<size_t>(pid)];
      slot = slot.valid() ? add(slot, contribs[i]) : contribs[i];
    }
  }

  std::vector<Var> out;
  for (Var w : wrt) {
    if (w.tape != this) throw Error("backward: wrt from another tape");
    if (static_cast<size_t>(w.id) < adj.size() && adj[static_cast<size_t>(w.id)].valid())
      out.push_back(adj[static_cast<size_t>(w.id)]);
    else
      out.push_back(constant(Tensor::zeros(value(w).shape())));
  }
  return out;
}

}  // namespace ranum
