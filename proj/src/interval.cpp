#include "ranum/interval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace ranum {

SplitSet SplitSet::coarsest(const Shape& shape) {
  SplitSet s;
  s.dims.assign(shape.size(), {0});
  return s;
}

SplitSet SplitSet::finest(const Shape& shape) {
  SplitSet s;
  for (int64_t n : shape) {
    std::vector<int64_t> d(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) d[static_cast<size_t>(i)] = i;
    s.dims.push_back(std::move(d));
  }
  return s;
}

void SplitSet::check_valid(const Shape& shape) const {
  if (dims.size() != shape.size()) throw ShapeMismatch("split set rank mismatch");
  for (size_t d = 0; d < dims.size(); ++d) {
    const auto& s = dims[d];
    if (s.empty() || s[0] != 0) throw ShapeMismatch("split set must start at 0");
    for (size_t i = 0; i + 1 < s.size(); ++i)
      if (s[i] >= s[i + 1]) throw ShapeMismatch("split indices must be strictly increasing");
    if (s.back() >= shape[d]) throw ShapeMismatch("split index beyond dimension extent");
  }
}

bool SplitSet::is_finest(const Shape& shape) const {
  for (size_t d = 0; d < dims.size(); ++d)
    if (static_cast<int64_t>(dims[d].size()) != shape[d]) return false;
  return true;
}

Shape SplitSet::block_shape() const {
  Shape b;
  for (const auto& s : dims) b.push_back(static_cast<int64_t>(s.size()));
  return b;
}

std::vector<std::vector<int64_t>> SplitSet::block_sizes(const Shape& shape) const {
  std::vector<std::vector<int64_t>> out;
  for (size_t d = 0; d < dims.size(); ++d) {
    const auto& s = dims[d];
    std::vector<int64_t> v(s.size());
    for (size_t i = 0; i < s.size(); ++i) {
      int64_t end = i + 1 < s.size() ? s[i + 1] : shape[d];
      v[i] = end - s[i];
    }
    out.push_back(std::move(v));
  }
  return out;
}

SplitSet union_splits(const SplitSet& p, const SplitSet& q) {
  if (p.rank() != q.rank()) throw ShapeMismatch("union of split sets with different rank");
  SplitSet out;
  for (size_t d = 0; d < p.rank(); ++d) {
    std::set<int64_t> merged(p.dims[d].begin(), p.dims[d].end());
    merged.insert(q.dims[d].begin(), q.dims[d].end());
    out.dims.emplace_back(merged.begin(), merged.end());
  }
  return out;
}

int64_t block_of(const std::vector<int64_t>& splits, int64_t element) {
  auto it = std::upper_bound(splits.begin(), splits.end(), element);
  return static_cast<int64_t>(it - splits.begin()) - 1;
}

std::vector<int64_t> refine_map(const SplitSet& from, const SplitSet& to, const Shape& shape) {
  if (from.rank() != to.rank()) throw NotARefinement("rank mismatch");
  for (size_t d = 0; d < from.rank(); ++d)
    for (int64_t s : from.dims[d])
      if (!std::binary_search(to.dims[d].begin(), to.dims[d].end(), s))
        throw NotARefinement("target split set does not contain the source splits");
  (void)shape;
  Shape to_blocks = to.block_shape();
  Shape from_blocks = from.block_shape();
  auto from_strides = row_major_strides(from_blocks);
  std::vector<int64_t> map(static_cast<size_t>(shape_numel(to_blocks)));
  std::vector<int64_t> idx(to_blocks.size(), 0);
  for (int64_t i = 0; i < shape_numel(to_blocks); ++i) {
    int64_t flat = 0;
    for (size_t d = 0; d < to_blocks.size(); ++d) {
      int64_t start = to.dims[d][static_cast<size_t>(idx[d])];
      flat += block_of(from.dims[d], start) * from_strides[d];
    }
    map[static_cast<size_t>(i)] = flat;
    next_index(idx, to_blocks);
  }
  return map;
}

void PartitionedInterval::check_valid() const {
  splits.check_valid(shape);
  Shape bs = splits.block_shape();
  if (!shapes_equal(lb.shape(), bs) || !shapes_equal(ub.shape(), bs))
    throw ShapeMismatch("bound tensors must have the block shape");
  for (int64_t i = 0; i < lb.numel(); ++i)
    if (!(lb.at(i) <= ub.at(i)))
      throw ShapeMismatch("lower bound exceeds upper bound at block " + std::to_string(i));
}

std::pair<double, double> PartitionedInterval::element_bounds(int64_t flat) const {
  std::vector<int64_t> idx = unravel(flat, shape);
  auto bstr = row_major_strides(splits.block_shape());
  int64_t b = 0;
  for (size_t d = 0; d < idx.size(); ++d) b += block_of(splits.dims[d], idx[d]) * bstr[d];
  return {lb.at(b), ub.at(b)};
}

PartitionedInterval PartitionedInterval::point(const Tensor& value, const SplitSet& splits) {
  return abstract_from_samples({value}, splits);
}

PartitionedInterval PartitionedInterval::constant_bounds(const Shape& shape,
                                                         const SplitSet& splits, double lo,
                                                         double hi) {
  PartitionedInterval p;
  p.shape = shape;
  p.splits = splits;
  p.lb = Tensor(splits.block_shape(), lo);
  p.ub = Tensor(splits.block_shape(), hi);
  return p;
}

PartitionedInterval abstract_from_samples(const std::vector<Tensor>& samples,
                                          const SplitSet& splits) {
  if (samples.empty()) throw EmptySampleSet("abstraction of an empty sample set");
  const Shape& shape = samples[0].shape();
  splits.check_valid(shape);
  for (const Tensor& s : samples)
    if (!shapes_equal(s.shape(), shape)) throw ShapeMismatch("samples must share one shape");

  PartitionedInterval out;
  out.shape = shape;
  out.splits = splits;
  Shape bs = splits.block_shape();
  out.lb = Tensor(bs, std::numeric_limits<double>::infinity());
  out.ub = Tensor(bs, -std::numeric_limits<double>::infinity());
  auto bstr = row_major_strides(bs);

  std::vector<int64_t> idx(shape.size(), 0);
  int64_t n = shape_numel(shape);
  for (int64_t i = 0; i < n; ++i) {
    int64_t b = 0;
    for (size_t d = 0; d < shape.size(); ++d) b += block_of(splits.dims[d], idx[d]) * bstr[d];
    for (const Tensor& s : samples) {
      out.lb.at(b) = std::min(out.lb.at(b), s.at(i));
      out.ub.at(b) = std::max(out.ub.at(b), s.at(i));
    }
    next_index(idx, shape);
  }
  return out;
}

bool contains(const PartitionedInterval& a, const Tensor& x) {
  if (!shapes_equal(a.shape, x.shape()))
    throw ShapeMismatch("contains: tensor shape differs from the abstraction");
  auto bstr = row_major_strides(a.splits.block_shape());
  std::vector<int64_t> idx(a.shape.size(), 0);
  for (int64_t i = 0; i < x.numel(); ++i) {
    int64_t b = 0;
    for (size_t d = 0; d < a.shape.size(); ++d) b += block_of(a.splits.dims[d], idx[d]) * bstr[d];
    if (!(x.at(i) >= a.lb.at(b) && x.at(i) <= a.ub.at(b))) return false;
    next_index(idx, a.shape);
  }
  return true;
}

bool contains_cast(const PartitionedInterval& a, const Tensor& x, DType dtype) {
  if (!shapes_equal(a.shape, x.shape()))
    throw ShapeMismatch("contains_cast: tensor shape differs from the abstraction");
  const double umax = dtype_umax(dtype);
  const double inf = std::numeric_limits<double>::infinity();
  auto bstr = row_major_strides(a.splits.block_shape());
  std::vector<int64_t> idx(a.shape.size(), 0);
  for (int64_t i = 0; i < x.numel(); ++i) {
    int64_t b = 0;
    for (size_t d = 0; d < a.shape.size(); ++d) b += block_of(a.splits.dims[d], idx[d]) * bstr[d];
    double lo = cast_bound_down(a.lb.at(b), dtype);
    double hi = cast_bound_up(a.ub.at(b), dtype);
    if (lo <= -umax) lo = -inf;
    if (hi >= umax) hi = inf;
    double v = x.at(i);
    if (std::isnan(v)) {
      // NaN is representable only under a total-uncertainty surrogate
      if (!(lo == -inf && hi == inf)) return false;
    } else if (!(v >= lo && v <= hi)) {
      return false;
    }
    next_index(idx, a.shape);
  }
  return true;
}

PartitionedInterval refine(const PartitionedInterval& a, const SplitSet& target) {
  target.check_valid(a.shape);
  auto map = refine_map(a.splits, target, a.shape);
  PartitionedInterval out;
  out.shape = a.shape;
  out.splits = target;
  out.lb = reindex(a.lb, target.block_shape(), map);
  out.ub = reindex(a.ub, target.block_shape(), map);
  return out;
}

}  // namespace ranum
