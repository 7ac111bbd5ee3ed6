#pragma once

#include <vector>

#include "ranum/tensor.hpp"

namespace ranum {

// Per-dimension sorted split indices; every dimension starts at 0 and the
// terminal index n_i is implicit. {0} is the coarsest partition of a
// dimension, {0,1,...,n_i-1} the finest.
struct SplitSet {
  std::vector<std::vector<int64_t>> dims;

  size_t rank() const { return dims.size(); }
  bool operator==(const SplitSet& o) const { return dims == o.dims; }

  static SplitSet coarsest(const Shape& shape);
  static SplitSet finest(const Shape& shape);

  void check_valid(const Shape& shape) const;
  bool is_finest(const Shape& shape) const;
  // Shape of the block-level bound tensors: (|S_1|, ..., |S_m|).
  Shape block_shape() const;
  // Block sizes per dimension: v_k = S[k+1] - S[k] with S[|S|] = n.
  std::vector<std::vector<int64_t>> block_sizes(const Shape& shape) const;
};

SplitSet union_splits(const SplitSet& p, const SplitSet& q);

// Block index of the element index along one dimension.
int64_t block_of(const std::vector<int64_t>& splits, int64_t element);

// Gather map from `from` block layout to the `to` block layout (to must
// refine from); also used to expand blocks to element resolution with
// to = finest.
std::vector<int64_t> refine_map(const SplitSet& from, const SplitSet& to, const Shape& shape);

// Interval abstraction with tensor partitioning: one [lb,ub] per subblock.
struct PartitionedInterval {
  Tensor lb, ub;   // block-shaped
  SplitSet splits;
  Shape shape;     // full tensor shape

  void check_valid() const;
  // Element-level bounds.
  std::pair<double, double> element_bounds(int64_t flat) const;

  static PartitionedInterval point(const Tensor& value, const SplitSet& splits);
  static PartitionedInterval constant_bounds(const Shape& shape, const SplitSet& splits,
                                             double lo, double hi);
};

// Exact realization of the abstraction function: block-wise min/max over
// every sample and every element of the subblock.
PartitionedInterval abstract_from_samples(const std::vector<Tensor>& samples,
                                          const SplitSet& splits);

// Membership in the concretization.
bool contains(const PartitionedInterval& a, const Tensor& x);

// Membership after judging bounds in the graph dtype: bounds are cast
// outward to the dtype and a bound at the dtype's largest finite value is
// treated as unbounded (the analysis uses +-U_max as infinity surrogates).
bool contains_cast(const PartitionedInterval& a, const Tensor& x, DType dtype);

// Re-expresses `a` on strictly finer splits; concretization is preserved
// exactly (every new block copies its enclosing old bound).
PartitionedInterval refine(const PartitionedInterval& a, const SplitSet& target);

}  // namespace ranum
