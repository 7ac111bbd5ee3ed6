#include "ranum/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ranum {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int64_t i = static_cast<int64_t>(s.size()) - 2; i >= 0; --i)
    st[i] = st[i + 1] * s[i + 1];
  return st;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

bool shapes_equal(const Shape& a, const Shape& b) { return a == b; }

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeMismatch("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
    throw ShapeMismatch("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_str(shape_));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
}

double Tensor::scalar_value() const {
  if (data_.size() != 1) throw ShapeMismatch("expected a single-element tensor");
  return data_[0];
}

Tensor Tensor::reshaped(const Shape& s) const {
  if (shape_numel(s) != numel())
    throw ShapeMismatch("reshape " + shape_str(shape_) + " -> " + shape_str(s));
  return Tensor(s, data_);
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::min_value() const {
  double m = std::numeric_limits<double>::infinity();
  for (double v : data_) m = std::min(m, v);
  return m;
}

double Tensor::max_value() const {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : data_) m = std::max(m, v);
  return m;
}

std::vector<int64_t> unravel(int64_t flat, const Shape& shape) {
  std::vector<int64_t> idx(shape.size(), 0);
  for (int64_t i = static_cast<int64_t>(shape.size()) - 1; i >= 0; --i) {
    idx[i] = flat % shape[i];
    flat /= shape[i];
  }
  return idx;
}

bool next_index(std::vector<int64_t>& idx, const Shape& shape) {
  for (int64_t i = static_cast<int64_t>(shape.size()) - 1; i >= 0; --i) {
    if (++idx[i] < shape[i]) return true;
    idx[i] = 0;
  }
  return false;
}

Tensor unary_map(const Tensor& a, const std::function<double(double)>& f) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.at(i) = f(a.at(i));
  return out;
}

namespace {

// Flat source index of a broadcast operand for a given output position.
int64_t broadcast_src_flat(const std::vector<int64_t>& out_idx, const Shape& out_shape,
                           const Shape& src_shape, const std::vector<int64_t>& src_strides) {
  size_t off = out_shape.size() - src_shape.size();
  int64_t flat = 0;
  for (size_t i = 0; i < src_shape.size(); ++i) {
    int64_t j = src_shape[i] == 1 ? 0 : out_idx[i + off];
    flat += j * src_strides[i];
  }
  return flat;
}

}  // namespace

Tensor binary_broadcast(const Tensor& a, const Tensor& b,
                        const std::function<double(double, double)>& f) {
  Shape os = broadcast_shapes(a.shape(), b.shape());
  Tensor out(os);
  auto sa = row_major_strides(a.shape());
  auto sb = row_major_strides(b.shape());
  std::vector<int64_t> idx(os.size(), 0);
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    out.at(i) = f(a.at(broadcast_src_flat(idx, os, a.shape(), sa)),
                  b.at(broadcast_src_flat(idx, os, b.shape(), sb)));
    next_index(idx, os);
  }
  return out;
}

Tensor select(const Tensor& mask, const Tensor& on_true, const Tensor& on_false) {
  Shape os = broadcast_shapes(broadcast_shapes(mask.shape(), on_true.shape()), on_false.shape());
  Tensor out(os);
  auto sm = row_major_strides(mask.shape());
  auto st = row_major_strides(on_true.shape());
  auto sf = row_major_strides(on_false.shape());
  std::vector<int64_t> idx(os.size(), 0);
  for (int64_t i = 0; i < out.numel(); ++i) {
    double m = mask.at(broadcast_src_flat(idx, os, mask.shape(), sm));
    out.at(i) = m != 0.0 ? on_true.at(broadcast_src_flat(idx, os, on_true.shape(), st))
                         : on_false.at(broadcast_src_flat(idx, os, on_false.shape(), sf));
    next_index(idx, os);
  }
  return out;
}

Tensor broadcast_to(const Tensor& a, const Shape& target) {
  if (shapes_equal(a.shape(), target)) return a;
  Shape chk = broadcast_shapes(a.shape(), target);
  if (!shapes_equal(chk, target))
    throw ShapeMismatch("cannot broadcast " + shape_str(a.shape()) + " to " + shape_str(target));
  Tensor out(target);
  auto sa = row_major_strides(a.shape());
  std::vector<int64_t> idx(target.size(), 0);
  for (int64_t i = 0; i < out.numel(); ++i) {
    out.at(i) = a.at(broadcast_src_flat(idx, target, a.shape(), sa));
    next_index(idx, target);
  }
  return out;
}

Tensor sum_to(const Tensor& a, const Shape& target) {
  if (shapes_equal(a.shape(), target)) return a;
  Tensor out(target);
  auto st = row_major_strides(target);
  std::vector<int64_t> idx(a.shape().size(), 0);
  for (int64_t i = 0; i < a.numel(); ++i) {
    size_t off = a.shape().size() - target.size();
    int64_t flat = 0;
    for (size_t d = 0; d < target.size(); ++d) {
      int64_t j = target[d] == 1 ? 0 : idx[d + off];
      flat += j * st[d];
    }
    out.at(flat) += a.at(i);
    next_index(idx, a.shape());
  }
  return out;
}

Tensor matmul2d(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeMismatch("matmul2d expects rank-2 operands");
  int64_t n = a.shape()[0], m = a.shape()[1], m2 = b.shape()[0], l = b.shape()[1];
  if (m != m2)
    throw ShapeMismatch("matmul inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out(Shape{n, l});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < m; ++k) {
      double av = a.at(i * m + k);
      if (av == 0.0) continue;
      for (int64_t j = 0; j < l; ++j) out.at(i * l + j) += av * b.at(k * l + j);
    }
  return out;
}

Shape conv2d_out_shape(const Shape& x, const Shape& k, const ConvAttrs& a) {
  if (x.size() != 4 || k.size() != 4) throw ShapeMismatch("conv2d expects NCHW and MCKhKw");
  if (x[1] != k[1]) throw ShapeMismatch("conv2d channel mismatch");
  int64_t oh = (x[2] + a.pad_top + a.pad_bottom - k[2]) / a.stride_h + 1;
  int64_t ow = (x[3] + a.pad_left + a.pad_right - k[3]) / a.stride_w + 1;
  if (oh < 1 || ow < 1) throw ShapeMismatch("conv2d output would be empty");
  return Shape{x[0], k[0], oh, ow};
}

Tensor conv2d(const Tensor& x, const Tensor& k, const ConvAttrs& a) {
  Shape os = conv2d_out_shape(x.shape(), k.shape(), a);
  int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  int64_t M = k.shape()[0], KH = k.shape()[2], KW = k.shape()[3];
  int64_t OH = os[2], OW = os[3];
  Tensor out(os);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t m = 0; m < M; ++m)
      for (int64_t oh = 0; oh < OH; ++oh)
        for (int64_t ow = 0; ow < OW; ++ow) {
          double acc = 0.0;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t dh = 0; dh < KH; ++dh)
              for (int64_t dw = 0; dw < KW; ++dw) {
                int64_t h = oh * a.stride_h - a.pad_top + dh;
                int64_t w = ow * a.stride_w - a.pad_left + dw;
                if (h < 0 || h >= H || w < 0 || w >= W) continue;
                acc += x.at(((n * C + c) * H + h) * W + w) *
                       k.at(((m * C + c) * KH + dh) * KW + dw);
              }
          out.at(((n * M + m) * OH + oh) * OW + ow) = acc;
        }
  return out;
}

Shape reduce_out_shape(const Shape& in, const std::vector<int64_t>& axes, bool keepdims) {
  std::vector<bool> red(in.size(), false);
  for (int64_t ax : axes) {
    int64_t a = ax < 0 ? ax + static_cast<int64_t>(in.size()) : ax;
    if (a < 0 || a >= static_cast<int64_t>(in.size()))
      throw UnsupportedAttribute("reduce axis out of range");
    red[static_cast<size_t>(a)] = true;
  }
  Shape out;
  for (size_t i = 0; i < in.size(); ++i) {
    if (red[i]) {
      if (keepdims) out.push_back(1);
    } else {
      out.push_back(in[i]);
    }
  }
  return out;
}

namespace {

template <typename Acc>
Tensor reduce_impl(const Tensor& a, const std::vector<int64_t>& axes, bool keepdims, double init,
                   Acc acc) {
  const Shape& in = a.shape();
  std::vector<bool> red(in.size(), false);
  std::vector<int64_t> ax_norm;
  for (int64_t ax : axes) {
    int64_t x = ax < 0 ? ax + static_cast<int64_t>(in.size()) : ax;
    red[static_cast<size_t>(x)] = true;
  }
  (void)ax_norm;
  Shape os = reduce_out_shape(in, axes, keepdims);
  Tensor out(os, init);
  auto so = row_major_strides(os);
  std::vector<int64_t> idx(in.size(), 0);
  for (int64_t i = 0; i < a.numel(); ++i) {
    int64_t flat = 0;
    size_t od = 0;
    for (size_t d = 0; d < in.size(); ++d) {
      if (red[d]) {
        if (keepdims) ++od;
        continue;
      }
      flat += idx[d] * so[od++];
    }
    out.at(flat) = acc(out.at(flat), a.at(i));
    next_index(idx, in);
  }
  return out;
}

}  // namespace

Tensor reduce_sum(const Tensor& a, const std::vector<int64_t>& axes, bool keepdims) {
  return reduce_impl(a, axes, keepdims, 0.0, [](double x, double y) { return x + y; });
}

Tensor reduce_max(const Tensor& a, const std::vector<int64_t>& axes, bool keepdims) {
  return reduce_impl(a, axes, keepdims, -std::numeric_limits<double>::infinity(),
                     [](double x, double y) { return std::max(x, y); });
}

Tensor reduce_min(const Tensor& a, const std::vector<int64_t>& axes, bool keepdims) {
  return reduce_impl(a, axes, keepdims, std::numeric_limits<double>::infinity(),
                     [](double x, double y) { return std::min(x, y); });
}

Tensor reindex(const Tensor& src, const Shape& out_shape, const std::vector<int64_t>& map) {
  if (static_cast<int64_t>(map.size()) != shape_numel(out_shape))
    throw ShapeMismatch("reindex map size does not match output shape");
  Tensor out(out_shape);
  for (size_t i = 0; i < map.size(); ++i)
    out.at(static_cast<int64_t>(i)) = map[i] >= 0 ? src.at(map[i]) : 0.0;
  return out;
}

Tensor scatter_add(const Tensor& src, const Shape& dst_shape, const std::vector<int64_t>& map) {
  Tensor out(dst_shape);
  for (size_t i = 0; i < map.size(); ++i)
    if (map[i] >= 0) out.at(map[i]) += src.at(static_cast<int64_t>(i));
  return out;
}

std::vector<std::vector<int64_t>> concat_maps(const std::vector<Shape>& parts, int64_t axis,
                                              Shape* out_shape) {
  if (parts.empty()) throw ShapeMismatch("concat of zero tensors");
  Shape base = parts[0];
  int64_t ax = axis < 0 ? axis + static_cast<int64_t>(base.size()) : axis;
  if (ax < 0 || ax >= static_cast<int64_t>(base.size()))
    throw UnsupportedAttribute("concat axis out of range");
  Shape os = base;
  int64_t total = 0;
  for (const Shape& p : parts) {
    if (p.size() != base.size()) throw ShapeMismatch("concat rank mismatch");
    for (size_t d = 0; d < p.size(); ++d)
      if (static_cast<int64_t>(d) != ax && p[d] != base[d])
        throw ShapeMismatch("concat non-axis dim mismatch");
    total += p[ax];
  }
  os[static_cast<size_t>(ax)] = total;
  if (out_shape) *out_shape = os;

  std::vector<std::vector<int64_t>> maps;
  int64_t offset = 0;
  auto so = row_major_strides(os);
  for (const Shape& p : parts) {
    std::vector<int64_t> m(static_cast<size_t>(shape_numel(p)));
    std::vector<int64_t> idx(p.size(), 0);
    for (int64_t i = 0; i < shape_numel(p); ++i) {
      int64_t flat = 0;
      for (size_t d = 0; d < p.size(); ++d) {
        int64_t j = idx[d] + (static_cast<int64_t>(d) == ax ? offset : 0);
        flat += j * so[d];
      }
      m[static_cast<size_t>(i)] = flat;
      next_index(idx, p);
    }
    maps.push_back(std::move(m));
    offset += p[static_cast<size_t>(ax)];
  }
  return maps;
}

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
  std::vector<Shape> shapes;
  for (const Tensor& t : parts) shapes.push_back(t.shape());
  Shape os;
  auto maps = concat_maps(shapes, axis, &os);
  Tensor out(os);
  for (size_t p = 0; p < parts.size(); ++p)
    for (int64_t i = 0; i < parts[p].numel(); ++i) out.at(maps[p][static_cast<size_t>(i)]) = parts[p].at(i);
  return out;
}

Tensor flush_tensor_to_dtype_range(const Tensor& t, DType d) {
  if (d == DType::F64) return t;
  return unary_map(t, [](double v) { return flush_to_dtype_range(v, DType::F32); });
}

Tensor uniform_tensor(const Shape& s, double lo, double hi, std::mt19937_64& rng) {
  Tensor out(s);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = dist(rng);
  return out;
}

Tensor uniform_tensor_between(const Tensor& lo, const Tensor& hi, std::mt19937_64& rng) {
  if (!shapes_equal(lo.shape(), hi.shape())) throw ShapeMismatch("uniform bounds shape mismatch");
  Tensor out(lo.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    std::uniform_real_distribution<double> dist(lo.at(i), hi.at(i));
    out.at(i) = dist(rng);
  }
  return out;
}

}  // namespace ranum
