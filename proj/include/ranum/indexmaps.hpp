#pragma once

#include "ranum/tensor.hpp"

namespace ranum {

// Flat gather maps shared by execution, autodiff and the abstract transfers.

int64_t checked_int(double v, const char* what);
std::vector<int64_t> tensor_to_ints(const Tensor& t, const char* what);

std::vector<int64_t> identity_map(int64_t n);
std::vector<int64_t> transpose_map(const Shape& in, const std::vector<int64_t>& perm, Shape* out);
std::vector<int64_t> gather_map(const Shape& data, const Tensor& indices, int64_t axis, Shape* out);

struct SliceSpec {
  std::vector<int64_t> starts, ends, axes, steps;  // normalized, per listed axis
};

SliceSpec resolve_slice(const Shape& data, const Tensor& starts, const Tensor& ends,
                        const Tensor* axes, const Tensor* steps);
std::vector<int64_t> slice_map(const Shape& data, const SliceSpec& spec, Shape* out);

// Target shape of a reshape given the spec tensor (supports 0 = copy dim and
// a single -1 = inferred extent).
Shape reshape_target_shape(const Shape& data, const Tensor& spec);

}  // namespace ranum
