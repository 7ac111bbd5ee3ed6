#include "test_util.hpp"

using namespace ranum;

TEST_SUITE_BEGIN("autodiff");

namespace {

// Scalar-valued probe: sum of a weighted transform of the op output, so the
// finite-difference oracle sees a generic adjoint.
template <typename Build>
void check_grad(const char* what, const Tensor& x, Build build, double tol = 1e-4) {
  Tape t;
  Var xv = t.leaf(x);
  Var y = build(t, xv);
  Var obj = t.reduce_sum_all(t.mul(y, y));
  Var g = t.backward(obj, {xv})[0];
  Tensor fd = tu::finite_diff(
      [&](const Tensor& xp) {
        Tape t2;
        Var v = t2.leaf(xp);
        Var y2 = build(t2, v);
        return t2.value(t2.reduce_sum_all(t2.mul(y2, y2))).scalar_value();
      },
      x);
  INFO(what);
  CHECK(tu::max_rel_err(t.value(g), fd) < tol);
}

}  // namespace

TEST_CASE("unary operator gradients match central differences") {
  std::mt19937_64 rng(3);
  Tensor x = tu::rand_tensor(Shape{2, 3}, 0.3, 2.0, rng);  // positive, away from kinks
  check_grad("exp", x, [](Tape& t, Var v) { return t.exp(v); });
  check_grad("log", x, [](Tape& t, Var v) { return t.log(v); });
  check_grad("sqrt", x, [](Tape& t, Var v) { return t.sqrt(v); });
  check_grad("reciprocal", x, [](Tape& t, Var v) { return t.reciprocal(v); });
  check_grad("sigmoid", x, [](Tape& t, Var v) { return t.sigmoid(v); });
  check_grad("tanh", x, [](Tape& t, Var v) { return t.tanh(v); });
  check_grad("softplus", x, [](Tape& t, Var v) { return t.softplus(v); });
  check_grad("neg", x, [](Tape& t, Var v) { return t.neg(v); });
  Tensor mixed = tu::rand_tensor(Shape{2, 3}, -2.0, 2.0, rng);
  for (int64_t i = 0; i < mixed.numel(); ++i)
    if (std::abs(mixed.at(i)) < 1e-2) mixed.at(i) = 0.5;  // stay clear of kinks
  check_grad("abs", mixed, [](Tape& t, Var v) { return t.abs(v); });
  check_grad("relu", mixed, [](Tape& t, Var v) { return t.relu(v); });
  check_grad("softmax", mixed, [](Tape& t, Var v) { return t.softmax(v, -1); });
  check_grad("log_softmax", mixed, [](Tape& t, Var v) { return t.log_softmax(v, -1); });
}

TEST_CASE("binary, matmul, conv and reduction gradients") {
  std::mt19937_64 rng(5);
  Tensor a = tu::rand_tensor(Shape{2, 3}, 0.5, 2.0, rng);
  Tensor b = tu::rand_tensor(Shape{3}, 0.5, 2.0, rng);
  check_grad("add-broadcast", a, [&](Tape& t, Var v) { return t.add(v, t.constant(b)); });
  check_grad("mul-broadcast", a, [&](Tape& t, Var v) { return t.mul(v, t.constant(b)); });
  check_grad("div", a, [&](Tape& t, Var v) { return t.div(v, t.constant(b)); });
  check_grad("div-denominator", a,
             [&](Tape& t, Var v) { return t.div(t.constant(broadcast_to(b, a.shape())), v); });
  check_grad("pow_vv", a, [&](Tape& t, Var v) { return t.pow_vv(v, t.constant(b)); });
  check_grad("pow_const", a,
             [&](Tape& t, Var v) { return t.pow_const(v, Tensor(Shape{}, 3.0)); });
  Tensor c = tu::rand_tensor(Shape{3, 2}, -1, 1, rng);
  check_grad("matmul-left", a, [&](Tape& t, Var v) { return t.matmul(v, t.constant(c)); });
  check_grad("matmul-right", c, [&](Tape& t, Var v) {
    return t.matmul(t.constant(a), v);
  });
  Tensor img = tu::rand_tensor(Shape{1, 2, 4, 4}, -1, 1, rng);
  Tensor ker = tu::rand_tensor(Shape{2, 2, 2, 2}, -1, 1, rng);
  ConvAttrs ca;
  ca.pad_top = 1;
  ca.pad_bottom = 1;
  check_grad("conv-input", img, [&](Tape& t, Var v) { return t.conv2d(v, t.constant(ker), ca); });
  check_grad("conv-kernel", ker, [&](Tape& t, Var v) { return t.conv2d(t.constant(img), v, ca); });
  check_grad("reduce_sum", a, [](Tape& t, Var v) { return t.reduce_sum(v, {1}, false); });
  check_grad("reduce_mean", a, [](Tape& t, Var v) { return t.reduce_mean(v, {0}, true); });
  check_grad("reduce_max", a, [](Tape& t, Var v) { return t.reduce_max(v, {1}, false); });
  check_grad("reduce_min", a, [](Tape& t, Var v) { return t.reduce_min(v, {0}, false); });
  check_grad("minimum", a, [&](Tape& t, Var v) {
    return t.minimum(v, t.constant(broadcast_to(b, a.shape())));
  });
  check_grad("maximum", a, [&](Tape& t, Var v) {
    return t.maximum(v, t.constant(broadcast_to(b, a.shape())));
  });
  check_grad("clip", a, [&](Tape& t, Var v) {
    return t.clip(v, t.scalar_const(0.7), t.scalar_const(1.6));
  });
  check_grad("concat-reshape", a, [&](Tape& t, Var v) {
    Var r = t.reshape(v, Shape{6});
    return t.concat({r, t.constant(Tensor(Shape{2}, 1.0))}, 0);
  });
}

TEST_CASE("relu straight-through override changes backward only") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(0.0));
  Var y = t.relu(x);
  CHECK(t.value(y).scalar_value() == 0.0);  // forward untouched

  Var g_plain = t.backward(t.reduce_sum_all(y), {x})[0];
  CHECK(t.value(g_plain).scalar_value() == 0.0);  // subgradient 0 at the kink

  Tape t2;
  Var x2 = t2.leaf(Tensor::scalar(0.0));
  Var y2 = t2.relu(x2);
  Var g_ste = t2.backward(t2.reduce_sum_all(y2), {x2}, GradientOverride::default_ste())[0];
  CHECK(t2.value(g_ste).scalar_value() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("forward values are bit-identical with and without overrides") {
  std::mt19937_64 rng(9);
  Tensor x = tu::rand_tensor(Shape{4}, -2, 2, rng);
  Tape t1, t2;
  Var y1 = t1.sigmoid(t1.relu(t1.leaf(x)));
  Var y2 = t2.sigmoid(t2.relu(t2.leaf(x)));
  t2.backward(t2.reduce_sum_all(y2), {}, GradientOverride::default_ste());
  CHECK(tu::tensors_equal(t1.value(y1), t2.value(y2)));
}

TEST_CASE("d/dx of x*x at 3 is 6") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(3.0));
  Var g = t.backward(t.mul(x, x), {x})[0];
  CHECK(t.value(g).scalar_value() == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("double backward produces correct second-order products") {
  // f(x) = x^3, g = (f'(x) - c)^2, dg/dx = 2 (3x^2 - c) * 6x
  double c = 5.0, x0 = 1.7;
  Tape t;
  Var x = t.leaf(Tensor::scalar(x0));
  Var f = t.mul(t.mul(x, x), x);
  Var fp = t.backward(f, {x})[0];
  Var g = t.square(t.sub(fp, t.scalar_const(c)));
  Var gx = t.backward(g, {x})[0];
  double want = 2.0 * (3 * x0 * x0 - c) * 6.0 * x0;
  CHECK(t.value(gx).scalar_value() == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("gradient of an unrelated leaf is zero") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(2.0));
  Var z = t.leaf(Tensor::scalar(4.0));
  Var g = t.backward(t.mul(x, x), {z})[0];
  CHECK(t.value(g).scalar_value() == 0.0);
}

TEST_SUITE_END();
