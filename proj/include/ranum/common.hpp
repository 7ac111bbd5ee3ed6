#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace ranum {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define RANUM_DEFINE_ERROR(Name)                                  \
  struct Name : Error {                                           \
    explicit Name(const std::string& msg) : Error(#Name ": " + msg) {} \
  }

RANUM_DEFINE_ERROR(SchemaError);
RANUM_DEFINE_ERROR(UnsupportedOperator);
RANUM_DEFINE_ERROR(CycleError);
RANUM_DEFINE_ERROR(ShapeMismatch);
RANUM_DEFINE_ERROR(UnsupportedAttribute);
RANUM_DEFINE_ERROR(MissingBinding);
RANUM_DEFINE_ERROR(DomainError);
RANUM_DEFINE_ERROR(EmptySampleSet);
RANUM_DEFINE_ERROR(NotARefinement);
RANUM_DEFINE_ERROR(NonDifferentiableNode);
RANUM_DEFINE_ERROR(NotDifferentiableMode);
RANUM_DEFINE_ERROR(LoopBudgetExceeded);
RANUM_DEFINE_ERROR(NotDefectProne);
RANUM_DEFINE_ERROR(NonFiniteGradient);
RANUM_DEFINE_ERROR(AnalysisError);
RANUM_DEFINE_ERROR(ConfigError);

#undef RANUM_DEFINE_ERROR

enum class DType { F32, F64 };

inline const char* dtype_name(DType d) { return d == DType::F32 ? "f32" : "f64"; }

// Smallest positive normal value of the dtype.
inline double dtype_umin(DType d) {
  return d == DType::F32 ? static_cast<double>(std::numeric_limits<float>::min())
                         : std::numeric_limits<double>::min();
}

// Largest finite value of the dtype.
inline double dtype_umax(DType d) {
  return d == DType::F32 ? static_cast<double>(std::numeric_limits<float>::max())
                         : std::numeric_limits<double>::max();
}

inline double dtype_ln_umax(DType d) { return std::log(dtype_umax(d)); }

// Execution-side dtype semantics: arithmetic runs in f64 and every node
// output is flushed to the dtype's magnitude range (flush-to-zero below the
// smallest positive normal, overflow to infinity beyond the largest finite),
// the way FTZ/DAZ hardware modes treat narrow floats. This makes the
// invalid-range constants U_min/U_max operationally exact.
inline double flush_to_dtype_range(double v, DType d) {
  if (std::isnan(v) || v == 0.0) return v;
  double a = std::abs(v);
  if (a > dtype_umax(d)) return std::copysign(std::numeric_limits<double>::infinity(), v);
  if (a < dtype_umin(d)) return std::copysign(0.0, v);
  return v;
}

// Outward-directed casts used when judging f64 analysis bounds in the graph
// dtype: lower bounds must not move up, upper bounds must not move down.
inline double cast_bound_down(double v, DType d) {
  if (d != DType::F32 || !std::isfinite(v)) return v;
  float f = static_cast<float>(v);
  if (static_cast<double>(f) > v) f = std::nextafterf(f, -std::numeric_limits<float>::infinity());
  return static_cast<double>(f);
}

inline double cast_bound_up(double v, DType d) {
  if (d != DType::F32 || !std::isfinite(v)) return v;
  float f = static_cast<float>(v);
  if (static_cast<double>(f) < v) f = std::nextafterf(f, std::numeric_limits<float>::infinity());
  return static_cast<double>(f);
}

}  // namespace ranum
