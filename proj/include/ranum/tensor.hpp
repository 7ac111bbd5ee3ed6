#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "ranum/common.hpp"

namespace ranum {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::vector<int64_t> row_major_strides(const Shape& s);
std::string shape_str(const Shape& s);
bool shapes_equal(const Shape& a, const Shape& b);

// Standard trailing-dimension broadcast of two shapes.
Shape broadcast_shapes(const Shape& a, const Shape& b);

// Dense row-major f64 tensor. The value domain of graph execution; analysis
// and optimization keep everything in f64 and only round at the edges.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);
  Tensor(Shape shape, double fill);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor zeros(const Shape& s) { return Tensor(s, 0.0); }
  static Tensor full(const Shape& s, double v) { return Tensor(s, v); }

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool is_scalar() const { return data_.size() == 1 && shape_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& at(int64_t flat) { return data_[static_cast<size_t>(flat)]; }
  double at(int64_t flat) const { return data_[static_cast<size_t>(flat)]; }
  double scalar_value() const;

  std::vector<double>& buffer() { return data_; }
  const std::vector<double>& buffer() const { return data_; }

  Tensor reshaped(const Shape& s) const;
  bool all_finite() const;
  double min_value() const;
  double max_value() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// index helpers -------------------------------------------------------------

inline int64_t ravel(const std::vector<int64_t>& idx, const std::vector<int64_t>& strides) {
  int64_t f = 0;
  for (size_t i = 0; i < idx.size(); ++i) f += idx[i] * strides[i];
  return f;
}

std::vector<int64_t> unravel(int64_t flat, const Shape& shape);

// Advance a multi-index through `shape` in row-major order; returns false on wrap.
bool next_index(std::vector<int64_t>& idx, const Shape& shape);

// elementwise ---------------------------------------------------------------

Tensor unary_map(const Tensor& a, const std::function<double(double)>& f);
Tensor binary_broadcast(const Tensor& a, const Tensor& b,
                        const std::function<double(double, double)>& f);
// Mask-driven three-way merge; mask broadcasts with both branches.
Tensor select(const Tensor& mask, const Tensor& on_true, const Tensor& on_false);
Tensor broadcast_to(const Tensor& a, const Shape& target);
// Reduce `a` back to `target` by summing broadcast dimensions (adjoint of broadcasting).
Tensor sum_to(const Tensor& a, const Shape& target);

// linear algebra ------------------------------------------------------------

Tensor matmul2d(const Tensor& a, const Tensor& b);

struct ConvAttrs {
  int64_t stride_h = 1, stride_w = 1;
  int64_t pad_top = 0, pad_left = 0, pad_bottom = 0, pad_right = 0;
};

Shape conv2d_out_shape(const Shape& x, const Shape& k, const ConvAttrs& a);
// Cross-correlation, NCHW input, MCKhKw kernel, single group.
Tensor conv2d(const Tensor& x, const Tensor& k, const ConvAttrs& a);

// reductions ----------------------------------------------------------------

Shape reduce_out_shape(const Shape& in, const std::vector<int64_t>& axes, bool keepdims);
Tensor reduce_sum(const Tensor& a, const std::vector<int64_t>& axes, bool keepdims);
Tensor reduce_max(const Tensor& a, const std::vector<int64_t>& axes, bool keepdims);
Tensor reduce_min(const Tensor& a, const std::vector<int64_t>& axes, bool keepdims);

// index plumbing ------------------------------------------------------------

// out[i] = (map[i] >= 0) ? src[map[i]] : 0. The single workhorse behind
// reshape/transpose/slice/gather/refinement; its adjoint is scatter_add.
Tensor reindex(const Tensor& src, const Shape& out_shape, const std::vector<int64_t>& map);
// dst[map[i]] += src[i] for map[i] >= 0, dst zero-initialized with shape dst_shape.
Tensor scatter_add(const Tensor& src, const Shape& dst_shape, const std::vector<int64_t>& map);

Tensor concat(const std::vector<Tensor>& parts, int64_t axis);
// The flat index ranges each part occupies in the concatenated tensor.
std::vector<std::vector<int64_t>> concat_maps(const std::vector<Shape>& parts, int64_t axis,
                                              Shape* out_shape);

// misc ----------------------------------------------------------------------

Tensor flush_tensor_to_dtype_range(const Tensor& t, DType d);
Tensor uniform_tensor(const Shape& s, double lo, double hi, std::mt19937_64& rng);
Tensor uniform_tensor_between(const Tensor& lo, const Tensor& hi, std::mt19937_64& rng);

}  // namespace ranum
