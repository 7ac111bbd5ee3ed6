#include "ranum/indexmaps.hpp"

#include <algorithm>
#include <cmath>

namespace ranum {

int64_t checked_int(double v, const char* what) {
  int64_t r = std::llround(v);
  if (!std::isfinite(v) || std::abs(v - static_cast<double>(r)) > 1e-9)
    throw UnsupportedAttribute(std::string(what) + " must be integral, got " + std::to_string(v));
  return r;
}

std::vector<int64_t> tensor_to_ints(const Tensor& t, const char* what) {
  std::vector<int64_t> out;
  for (int64_t i = 0; i < t.numel(); ++i) out.push_back(checked_int(t.at(i), what));
  return out;
}

std::vector<int64_t> identity_map(int64_t n) {
  std::vector<int64_t> m(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) m[static_cast<size_t>(i)] = i;
  return m;
}

std::vector<int64_t> transpose_map(const Shape& in, const std::vector<int64_t>& perm, Shape* out) {
  if (perm.size() != in.size()) throw UnsupportedAttribute("transpose perm rank mismatch");
  Shape os(in.size());
  for (size_t i = 0; i < in.size(); ++i) os[i] = in[static_cast<size_t>(perm[i])];
  auto si = row_major_strides(in);
  std::vector<int64_t> map(static_cast<size_t>(shape_numel(os)));
  std::vector<int64_t> idx(os.size(), 0);
  for (int64_t i = 0; i < shape_numel(os); ++i) {
    int64_t flat = 0;
    for (size_t d = 0; d < os.size(); ++d) flat += idx[d] * si[static_cast<size_t>(perm[d])];
    map[static_cast<size_t>(i)] = flat;
    next_index(idx, os);
  }
  if (out) *out = os;
  return map;
}

std::vector<int64_t> gather_map(const Shape& data, const Tensor& indices, int64_t axis, Shape* out) {
  if (axis < 0) axis += static_cast<int64_t>(data.size());
  if (axis < 0 || axis >= static_cast<int64_t>(data.size()))
    throw UnsupportedAttribute("gather axis out of range");
  Shape os;
  for (int64_t i = 0; i < axis; ++i) os.push_back(data[static_cast<size_t>(i)]);
  for (int64_t d : indices.shape()) os.push_back(d);
  for (size_t i = static_cast<size_t>(axis) + 1; i < data.size(); ++i) os.push_back(data[i]);
  auto sd = row_major_strides(data);
  std::vector<int64_t> map(static_cast<size_t>(shape_numel(os)));
  std::vector<int64_t> idx(os.size(), 0);
  int64_t dim = data[static_cast<size_t>(axis)];
  for (int64_t i = 0; i < shape_numel(os); ++i) {
    int64_t flat = 0;
    // output dims: [0,axis) from data, then indices dims, then the rest
    size_t q = indices.shape().size();
    int64_t ix_flat = 0;
    auto sq = row_major_strides(indices.shape());
    for (size_t d = 0; d < q; ++d) ix_flat += idx[static_cast<size_t>(axis) + d] * sq[d];
    int64_t j = checked_int(indices.at(ix_flat), "gather index");
    if (j < 0) j += dim;
    if (j < 0 || j >= dim) throw UnsupportedAttribute("gather index out of range");
    for (size_t d = 0; d < data.size(); ++d) {
      int64_t pos;
      if (static_cast<int64_t>(d) < axis) pos = idx[d];
      else if (static_cast<int64_t>(d) == axis) pos = j;
      else pos = idx[d - 1 + q];
      flat += pos * sd[d];
    }
    map[static_cast<size_t>(i)] = flat;
    next_index(idx, os);
  }
  if (out) *out = os;
  return map;
}

SliceSpec resolve_slice(const Shape& data, const Tensor& starts, const Tensor& ends,
                        const Tensor* axes, const Tensor* steps) {
  SliceSpec s;
  s.starts = tensor_to_ints(starts, "slice start");
  s.ends = tensor_to_ints(ends, "slice end");
  if (axes) s.axes = tensor_to_ints(*axes, "slice axis");
  else
    for (size_t i = 0; i < s.starts.size(); ++i) s.axes.push_back(static_cast<int64_t>(i));
  if (steps) s.steps = tensor_to_ints(*steps, "slice step");
  else s.steps.assign(s.starts.size(), 1);
  if (s.starts.size() != s.ends.size() || s.starts.size() != s.axes.size() ||
      s.starts.size() != s.steps.size())
    throw UnsupportedAttribute("slice parameter lengths disagree");
  for (size_t i = 0; i < s.axes.size(); ++i) {
    if (s.axes[i] < 0) s.axes[i] += static_cast<int64_t>(data.size());
    if (s.axes[i] < 0 || s.axes[i] >= static_cast<int64_t>(data.size()))
      throw UnsupportedAttribute("slice axis out of range");
    if (s.steps[i] <= 0) throw UnsupportedAttribute("slice supports positive steps only");
    int64_t dim = data[static_cast<size_t>(s.axes[i])];
    if (s.starts[i] < 0) s.starts[i] += dim;
    if (s.ends[i] < 0) s.ends[i] += dim;
    s.starts[i] = std::clamp<int64_t>(s.starts[i], 0, dim);
    s.ends[i] = std::clamp<int64_t>(s.ends[i], 0, dim);
  }
  return s;
}

Shape reshape_target_shape(const Shape& data, const Tensor& spec) {
  auto target = tensor_to_ints(spec, "reshape shape");
  Shape out;
  int64_t known = 1, infer_at = -1;
  for (size_t i = 0; i < target.size(); ++i) {
    int64_t d = target[i];
    if (d == -1) {
      if (infer_at >= 0) throw ShapeMismatch("reshape allows a single -1");
      infer_at = static_cast<int64_t>(i);
      out.push_back(1);
    } else if (d == 0) {
      if (i >= data.size()) throw ShapeMismatch("reshape 0-dim out of range");
      out.push_back(data[i]);
      known *= out.back();
    } else {
      out.push_back(d);
      known *= d;
    }
  }
  int64_t total = shape_numel(data);
  if (infer_at >= 0) {
    if (known == 0 || total % known != 0) throw ShapeMismatch("reshape cannot infer -1");
    out[static_cast<size_t>(infer_at)] = total / known;
  } else if (known != total) {
    throw ShapeMismatch("reshape changes element count");
  }
  return out;
}

std::vector<int64_t> slice_map(const Shape& data, const SliceSpec& spec, Shape* out) {
  Shape os = data;
  std::vector<int64_t> start_of(data.size(), 0), step_of(data.size(), 1);
  for (size_t i = 0; i < spec.axes.size(); ++i) {
    size_t ax = static_cast<size_t>(spec.axes[i]);
    int64_t len = spec.ends[i] > spec.starts[i]
                      ? (spec.ends[i] - spec.starts[i] + spec.steps[i] - 1) / spec.steps[i]
                      : 0;
    if (len < 1) throw ShapeMismatch("slice produces an empty dimension");
    os[ax] = len;
    start_of[ax] = spec.starts[i];
    step_of[ax] = spec.steps[i];
  }
  auto sd = row_major_strides(data);
  std::vector<int64_t> map(static_cast<size_t>(shape_numel(os)));
  std::vector<int64_t> idx(os.size(), 0);
  for (int64_t i = 0; i < shape_numel(os); ++i) {
    int64_t flat = 0;
    for (size_t d = 0; d < os.size(); ++d) flat += (start_of[d] + idx[d] * step_of[d]) * sd[d];
    map[static_cast<size_t>(i)] = flat;
    next_index(idx, os);
  }
  if (out) *out = os;
  return map;
}

}  // namespace ranum
