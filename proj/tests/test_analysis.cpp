#include "test_util.hpp"

using namespace ranum;

TEST_SUITE_BEGIN("analysis");

namespace {

ValidRanges running_ranges() {
  ValidRanges vr;
  vr.per_node["11"] = ValidRange{0, 1, std::nullopt, std::nullopt};
  return vr;
}

// Elementwise enumeration oracle for the tight MatMul transfer: expand both
// operands to element resolution and take sum_k min/max over the four
// endpoint products.
std::pair<Tensor, Tensor> matmul_enum_oracle(const PartitionedInterval& a,
                                             const PartitionedInterval& b) {
  PartitionedInterval ae = refine(a, SplitSet::finest(a.shape));
  PartitionedInterval be = refine(b, SplitSet::finest(b.shape));
  int64_t n = a.shape[0], m = a.shape[1], l = b.shape[1];
  Tensor lo(Shape{n, l}), hi(Shape{n, l});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < l; ++j) {
      double s_lo = 0, s_hi = 0;
      for (int64_t k = 0; k < m; ++k) {
        double la = ae.lb.at(i * m + k), ua = ae.ub.at(i * m + k);
        double lb = be.lb.at(k * l + j), ub = be.ub.at(k * l + j);
        double p[4] = {la * lb, la * ub, ua * lb, ua * ub};
        s_lo += std::min(std::min(p[0], p[1]), std::min(p[2], p[3]));
        s_hi += std::max(std::max(p[0], p[1]), std::max(p[2], p[3]));
      }
      lo.at(i * l + j) = s_lo;
      hi.at(i * l + j) = s_hi;
    }
  return {lo, hi};
}

Tensor expand_elements(const PartitionedInterval& p, bool upper) {
  PartitionedInterval e = refine(p, SplitSet::finest(p.shape));
  return upper ? e.ub : e.lb;
}

}  // namespace

TEST_CASE("backward fine-grained labeling") {
  // constant feeding a Reshape shape slot is labeled
  Graph g = parse_graph(R"({"name":"lab","nodes":[
    {"id":"x","kind":"input","shape":[2,3],"dtype":"f64"},
    {"id":"c","kind":"constant","shape":[2],"dtype":"f64","init":[3.0,2.0]},
    {"id":"r","kind":"op","op":"Reshape","shape":[3,2],"dtype":"f64"}],
    "edges":[{"from":"x","to":"r","to_slot":0},{"from":"c","to":"r","to_slot":1}]})");
  auto labels = label_fine_grained(g);
  CHECK(labels == std::set<std::string>{"c"});

  // Shape stops the propagation toward its producer
  Graph g2 = parse_graph(R"({"name":"lab2","nodes":[
    {"id":"x","kind":"input","shape":[3,2],"dtype":"f64"},
    {"id":"y","kind":"input","shape":[2,3],"dtype":"f64"},
    {"id":"sh","kind":"op","op":"Shape","shape":[2],"dtype":"f64"},
    {"id":"r","kind":"op","op":"Reshape","shape":[3,2],"dtype":"f64"}],
    "edges":[{"from":"y","to":"r","to_slot":0},{"from":"x","to":"sh","to_slot":0},
             {"from":"sh","to":"r","to_slot":1}]})");
  CHECK(label_fine_grained(g2).empty());

  // no requiring operators at all
  Graph g3 = tu::load_corpus_graph("div_gap");
  CHECK(label_fine_grained(g3).empty());

  // the dynamic-reshape corpus graph labels the shape constants through Concat
  Graph g4 = tu::load_corpus_graph("reshape_div");
  CHECK(label_fine_grained(g4) == std::set<std::string>{"s3", "s4"});
}

TEST_CASE("running example abstractions match the worked bounds exactly") {
  Graph g = tu::load_corpus_graph("running_example");
  AbstractState st = analyze(g, running_ranges(), GranularityPolicy{}, AnalyzeOptions{});

  PartitionedInterval n5 = st.concrete_input("5", 0);
  CHECK(n5.lb.min_value() == -200.0);
  CHECK(n5.ub.max_value() == 200.0);

  PartitionedInterval n6 = st.concrete_input("6", 0);
  CHECK(n6.lb.min_value() == -210.0);
  CHECK(n6.ub.max_value() == 210.0);

  PartitionedInterval n8 = st.concrete_output("8");
  CHECK(n8.lb.min_value() >= 0.0);
  CHECK(n8.ub.max_value() <= 1.0);

  for (const char* log : {"9", "10"}) {
    PartitionedInterval in = st.concrete_input(log, 0);
    CHECK(in.lb.min_value() >= 0.0);
    CHECK(in.ub.max_value() <= 1.0);
  }
}

TEST_CASE("all-constant graphs analyze to point intervals equal to execution") {
  Graph g = parse_graph(R"({"name":"k","nodes":[
    {"id":"a","kind":"constant","shape":[2],"dtype":"f64","init":[2.0,3.0]},
    {"id":"b","kind":"constant","shape":[2],"dtype":"f64","init":[4.0,5.0]},
    {"id":"m","kind":"op","op":"Mul","shape":[2],"dtype":"f64"},
    {"id":"e","kind":"op","op":"Exp","shape":[2],"dtype":"f64"}],
    "edges":[{"from":"a","to":"m","to_slot":0},{"from":"b","to":"m","to_slot":1},
             {"from":"m","to":"e","to_slot":0}]})");
  AbstractState st = analyze(g, ValidRanges{}, GranularityPolicy{}, AnalyzeOptions{});
  ExecResult r = execute(g, {}, {});
  for (const char* id : {"m", "e"}) {
    PartitionedInterval p = st.concrete_output(id);
    Tensor lo = expand_elements(p, false), hi = expand_elements(p, true);
    CHECK(tu::max_rel_err(lo, r.values.at(id).output) < 1e-12);
    CHECK(tu::max_rel_err(hi, r.values.at(id).output) < 1e-12);
  }
}

TEST_CASE("tight matmul reproduces the worked 1x2 * 2x1 bound") {
  PartitionedInterval a =
      PartitionedInterval::constant_bounds(Shape{1, 2}, SplitSet::coarsest(Shape{1, 2}), -10, 10);
  PartitionedInterval b =
      PartitionedInterval::constant_bounds(Shape{2, 1}, SplitSet::coarsest(Shape{2, 1}), -10, 10);
  PartitionedInterval c = transfer_matmul_tight(a, b);
  CHECK(c.lb.scalar_value() == -200.0);
  CHECK(c.ub.scalar_value() == 200.0);
}

TEST_CASE("tight matmul equals the enumeration oracle; point operands are exact") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    Shape sa{1 + static_cast<int64_t>(rng() % 4), 1 + static_cast<int64_t>(rng() % 4)};
    Shape sb{sa[1], 1 + static_cast<int64_t>(rng() % 4)};
    PartitionedInterval a = tu::rand_interval(sa, -3, 3, rng);
    PartitionedInterval b = tu::rand_interval(sb, -3, 3, rng);
    PartitionedInterval c = transfer_matmul_tight(a, b);
    auto [lo, hi] = matmul_enum_oracle(a, b);
    CHECK(tu::max_rel_err(expand_elements(c, false), lo) < 1e-9);
    CHECK(tu::max_rel_err(expand_elements(c, true), hi) < 1e-9);
  }
  // point intervals multiply exactly
  std::mt19937_64 rng2(43);
  Tensor av = tu::rand_tensor(Shape{3, 2}, -2, 2, rng2);
  Tensor bv = tu::rand_tensor(Shape{2, 4}, -2, 2, rng2);
  PartitionedInterval pa = PartitionedInterval::point(av, SplitSet::finest(Shape{3, 2}));
  PartitionedInterval pb = PartitionedInterval::point(bv, SplitSet::finest(Shape{2, 4}));
  PartitionedInterval pc = transfer_matmul_tight(pa, pb);
  Tensor prod = matmul2d(av, bv);
  CHECK(tu::max_rel_err(expand_elements(pc, false), prod) < 1e-12);
  CHECK(tu::max_rel_err(expand_elements(pc, true), prod) < 1e-12);
}

TEST_CASE("fast matmul contains tight and is sound under sampling") {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 150; ++trial) {
    Shape sa{1 + static_cast<int64_t>(rng() % 3), 1 + static_cast<int64_t>(rng() % 3)};
    Shape sb{sa[1], 1 + static_cast<int64_t>(rng() % 3)};
    PartitionedInterval a = tu::rand_interval(sa, -3, 3, rng);
    PartitionedInterval b = tu::rand_interval(sb, -3, 3, rng);
    PartitionedInterval tight = transfer_matmul_tight(a, b);
    PartitionedInterval fast = transfer_matmul_fast(a, b);
    Tensor tl = expand_elements(tight, false), th = expand_elements(tight, true);
    Tensor fl = expand_elements(fast, false), fh = expand_elements(fast, true);
    for (int64_t i = 0; i < tl.numel(); ++i) {
      CHECK(fl.at(i) <= tl.at(i) + 1e-12);
      CHECK(fh.at(i) >= th.at(i) - 1e-12);
    }
    for (int s = 0; s < 3; ++s) {
      Tensor av = tu::sample_from(a, rng);
      Tensor bv = tu::sample_from(b, rng);
      CHECK(contains(fast, matmul2d(av, bv)));
    }
  }
  // nonnegative point intervals stay exact in fast mode
  Tensor av(Shape{2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor bv(Shape{2, 2}, std::vector<double>{5, 6, 7, 8});
  PartitionedInterval fa = transfer_matmul_fast(
      PartitionedInterval::point(av, SplitSet::finest(Shape{2, 2})),
      PartitionedInterval::point(bv, SplitSet::finest(Shape{2, 2})));
  CHECK(tu::max_rel_err(expand_elements(fa, false), matmul2d(av, bv)) < 1e-12);
}

TEST_CASE("softmax transfer: symmetry point, f32 rendering, corner oracle") {
  PartitionedInterval z =
      PartitionedInterval::point(Tensor(Shape{2}, 0.0), SplitSet::finest(Shape{2}));
  PartitionedInterval y = transfer_softmax(z, -1);
  CHECK(y.lb.at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y.ub.at(1) == doctest::Approx(0.5).epsilon(1e-12));

  PartitionedInterval wide =
      PartitionedInterval::constant_bounds(Shape{2}, SplitSet::coarsest(Shape{2}), -210, 210);
  PartitionedInterval yw = transfer_softmax(wide, -1);
  CHECK(cast_bound_down(yw.lb.min_value(), DType::F32) == 0.0);  // underflows f32
  CHECK(yw.ub.max_value() == 1.0);

  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 200; ++trial) {
    PartitionedInterval p = tu::rand_interval(Shape{3}, -4, 4, rng);
    p = refine(p, SplitSet::finest(Shape{3}));
    PartitionedInterval out = transfer_softmax(p, 0);
    for (int s = 0; s < 3; ++s) {
      Tensor x = tu::sample_from(p, rng);
      CHECK(contains(out, eval_op(Op::Softmax, {x}, Attrs{})));
    }
    for (int64_t i = 0; i < 3; ++i) {
      Tensor corner_lo(Shape{3}), corner_hi(Shape{3});
      for (int64_t j = 0; j < 3; ++j) {
        corner_lo.at(j) = j == i ? p.lb.at(j) : p.ub.at(j);
        corner_hi.at(j) = j == i ? p.ub.at(j) : p.lb.at(j);
      }
      Tensor smin = eval_op(Op::Softmax, {corner_lo}, Attrs{});
      Tensor smax = eval_op(Op::Softmax, {corner_hi}, Attrs{});
      CHECK(out.lb.at(i) == doctest::Approx(smin.at(i)).epsilon(1e-9));
      CHECK(out.ub.at(i) == doctest::Approx(smax.at(i)).epsilon(1e-9));
    }
  }
}

TEST_CASE("conv transfer: point exactness, coarse sharing, sampled soundness") {
  Attrs attrs;
  std::mt19937_64 rng(59);

  Tensor img = tu::rand_tensor(Shape{1, 1, 4, 4}, -1, 1, rng);
  Tensor ker = tu::rand_tensor(Shape{1, 1, 2, 2}, -1, 1, rng);
  PartitionedInterval pc = transfer_conv(
      PartitionedInterval::point(img, SplitSet::finest(img.shape())),
      PartitionedInterval::point(ker, SplitSet::finest(ker.shape())), nullptr, attrs);
  Tensor want = conv2d(img, ker, ConvAttrs{});
  CHECK(tu::max_rel_err(expand_elements(pc, false), want) < 1e-12);
  CHECK(tu::max_rel_err(expand_elements(pc, true), want) < 1e-12);

  PartitionedInterval xiv = PartitionedInterval::constant_bounds(
      Shape{1, 1, 3, 3}, SplitSet::coarsest(Shape{1, 1, 3, 3}), 0, 1);
  PartitionedInterval kiv =
      PartitionedInterval::point(Tensor(Shape{1, 1, 2, 2}, 1.0), SplitSet::finest(Shape{1, 1, 2, 2}));
  PartitionedInterval co = transfer_conv(xiv, kiv, nullptr, attrs);
  CHECK(co.lb.numel() == 1);  // identical receptive-field signatures share one block
  CHECK(co.lb.scalar_value() == 0.0);
  CHECK(co.ub.scalar_value() == 4.0);

  for (int trial = 0; trial < 30; ++trial) {
    PartitionedInterval xi = tu::rand_interval(Shape{1, 1, 5, 5}, -1, 1, rng);
    PartitionedInterval ki = tu::rand_interval(Shape{1, 1, 2, 2}, -1, 1, rng);
    PartitionedInterval out = transfer_conv(xi, ki, nullptr, attrs);
    for (int s = 0; s < 5; ++s) {
      Tensor xs = tu::sample_from(xi, rng);
      Tensor ks = tu::sample_from(ki, rng);
      CHECK(contains(out, conv2d(xs, ks, ConvAttrs{})));
    }
  }
}

TEST_CASE("loop transfer: concrete counter, interval body, budget error") {
  // x <- x + 1, three trips
  const char* tmpl = R"({"name":"lp","nodes":[
    {"id":"v0","kind":"input","shape":[1],"dtype":"f64"},
    {"id":"M","kind":"constant","shape":[],"dtype":"f64","init":%s},
    {"id":"c1","kind":"constant","shape":[],"dtype":"f64","init":1.0},
    {"id":"lp","kind":"op","op":"Loop","shape":[1],"dtype":"f64","attrs":{"body":{
      "name":"b","nodes":[
        {"id":"it","kind":"input","shape":[],"dtype":"f64"},
        {"id":"ci","kind":"input","shape":[],"dtype":"f64"},
        {"id":"vi","kind":"input","shape":[1],"dtype":"f64"},
        {"id":"k","kind":"constant","shape":[],"dtype":"f64","init":%s},
        {"id":"vo","kind":"op","op":"%s","shape":[1],"dtype":"f64"},
        {"id":"co","kind":"op","op":"Identity","shape":[],"dtype":"f64"}],
      "edges":[{"from":"vi","to":"vo","to_slot":0},{"from":"k","to":"vo","to_slot":1},
               {"from":"ci","to":"co","to_slot":0}],
      "inputs":["it","ci","vi"],"outputs":["co","vo"]}}}],
    "edges":[{"from":"M","to":"lp","to_slot":0},{"from":"c1","to":"lp","to_slot":1},
             {"from":"v0","to":"lp","to_slot":2}]})";
  char buf[4096];

  std::snprintf(buf, sizeof buf, tmpl, "3.0", "1.0", "Add");
  Graph g = parse_graph(buf);
  ValidRanges vr;
  vr.per_node["v0"] = ValidRange{0, 0, std::nullopt, std::nullopt};
  AbstractState st = analyze(g, vr, GranularityPolicy{}, AnalyzeOptions{});
  PartitionedInterval out = st.concrete_output("lp");
  CHECK(out.lb.min_value() == 3.0);
  CHECK(out.ub.max_value() == 3.0);

  // doubling body over [1,2] with trip count two
  std::snprintf(buf, sizeof buf, tmpl, "2.0", "2.0", "Mul");
  Graph g2 = parse_graph(buf);
  ValidRanges vr2;
  vr2.per_node["v0"] = ValidRange{1, 2, std::nullopt, std::nullopt};
  AbstractState st2 = analyze(g2, vr2, GranularityPolicy{}, AnalyzeOptions{});
  PartitionedInterval out2 = st2.concrete_output("lp");
  CHECK(out2.lb.min_value() == 4.0);
  CHECK(out2.ub.max_value() == 8.0);

  // undecidable trip count exhausts the budget
  std::snprintf(buf, sizeof buf, tmpl, "1000000.0", "1.0", "Add");
  Graph g3 = parse_graph(buf);
  AnalyzeOptions small;
  small.loop_budget = 50;
  CHECK_THROWS_AS(analyze(g3, vr, GranularityPolicy{}, small), LoopBudgetExceeded);
}

TEST_CASE("elementwise transfers") {
  DType f64 = DType::F64;
  auto iv = [](double lo, double hi) {
    return PartitionedInterval::constant_bounds(Shape{1}, SplitSet::coarsest(Shape{1}), lo, hi);
  };
  PartitionedInterval lg = transfer_elementwise(Op::Log, {iv(1.0, std::exp(2.0))}, Attrs{}, f64);
  CHECK(lg.lb.scalar_value() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lg.ub.scalar_value() == doctest::Approx(2.0).epsilon(1e-12));

  Attrs sub1;
  sub1.json["value"] = 1.0;
  PartitionedInterval sb = transfer_elementwise(Op::SubFromConstant, {iv(0, 1)}, sub1, f64);
  CHECK(sb.lb.scalar_value() == 0.0);
  CHECK(sb.ub.scalar_value() == 1.0);

  PartitionedInterval mu = transfer_elementwise(Op::Mul, {iv(-1, 2), iv(-3, 1)}, Attrs{}, f64);
  CHECK(mu.lb.scalar_value() == -6.0);
  CHECK(mu.ub.scalar_value() == 3.0);

  // divisor straddling zero widens to the dtype surrogate
  PartitionedInterval dv =
      transfer_elementwise(Op::Div, {iv(1, 2), iv(-0.5, 0.5)}, Attrs{}, DType::F32);
  CHECK(dv.lb.scalar_value() == -dtype_umax(DType::F32));
  CHECK(dv.ub.scalar_value() == dtype_umax(DType::F32));

  CHECK_THROWS_AS(transfer_elementwise(Op::Log, {iv(-5, -1)}, Attrs{}, f64), DomainError);
}

TEST_CASE("Monte-Carlo soundness on a few corpus graphs") {
  std::mt19937_64 rng(61);
  for (const char* name : {"running_example", "mix_pipeline", "loop_scale", "squeeze_exp"}) {
    RunConfig cfg = tu::load_corpus_config(name);
    Graph g = load_graph_file(cfg.graph_path);
    AbstractState st = analyze(g, cfg.vr, cfg.pol, cfg.aopt);
    int violations = 0;
    for (int s = 0; s < 100; ++s) {
      Binding x = sample_inputs(g, cfg.vr, rng);
      Binding w = sample_weights(g, cfg.vr, rng);
      ExecResult r = execute(g, x, w);
      for (const std::string& id : g.topo_order()) {
        const Node& n = g.node(id);
        if (!contains_cast(st.concrete_output(id), r.values.at(id).output, n.dtype)) ++violations;
      }
    }
    INFO(name);
    CHECK(violations == 0);
  }
}

TEST_CASE("elementwise transfer soundness fuzz across the operator set") {
  std::mt19937_64 rng(73);
  struct Case {
    Op op;
    double lo, hi;
    Attrs attrs;
    int arity;
  };
  Attrs none;
  Attrs axis1;
  axis1.json["axis"] = 1;
  Attrs red;
  red.json["axes"] = std::vector<int64_t>{1};
  red.json["keepdims"] = 0;
  Attrs sfc;
  sfc.json["value"] = 2.0;
  std::vector<Case> cases = {
      {Op::Add, -3, 3, none, 2},       {Op::Sub, -3, 3, none, 2},
      {Op::Mul, -3, 3, none, 2},       {Op::Div, -3, 3, none, 2},
      {Op::Min, -3, 3, none, 2},       {Op::Max, -3, 3, none, 2},
      {Op::Neg, -3, 3, none, 1},       {Op::Exp, -3, 3, none, 1},
      {Op::Log, 0.1, 4, none, 1},      {Op::Sqrt, 0.1, 4, none, 1},
      {Op::Reciprocal, -3, 3, none, 1},{Op::Abs, -3, 3, none, 1},
      {Op::Relu, -3, 3, none, 1},      {Op::Sigmoid, -3, 3, none, 1},
      {Op::Tanh, -3, 3, none, 1},      {Op::Softplus, -3, 3, none, 1},
      {Op::SubFromConstant, -3, 3, sfc, 1},
      {Op::Softmax, -3, 3, axis1, 1},  {Op::LogSoftmax, -3, 3, axis1, 1},
      {Op::ReduceSum, -3, 3, red, 1},  {Op::ReduceMean, -3, 3, red, 1},
      {Op::ReduceMax, -3, 3, red, 1},  {Op::ReduceMin, -3, 3, red, 1},
      {Op::Concat, -3, 3, Attrs{nlohmann::json{{"axis", 0}}}, 2},
  };
  for (const Case& c : cases) {
    for (int trial = 0; trial < 25; ++trial) {
      Shape shape{2, 3};
      std::vector<PartitionedInterval> in;
      for (int i = 0; i < c.arity; ++i) in.push_back(tu::rand_interval(shape, c.lo, c.hi, rng));
      PartitionedInterval out;
      if (c.op == Op::Softmax || c.op == Op::LogSoftmax) {
        out = transfer_softmax(in[0], 1);
        if (c.op == Op::LogSoftmax) {
          Tape t;
          out = [&] {
            AbstractValue av = av_softmax(t, av_lift(t, in[0]), 1, true);
            PartitionedInterval p;
            p.lb = t.value(av.lb);
            p.ub = t.value(av.ub);
            p.splits = av.splits;
            p.shape = av.shape;
            return p;
          }();
        }
      } else {
        out = transfer_elementwise(c.op, in, c.attrs, DType::F64);
      }
      for (int s = 0; s < 6; ++s) {
        std::vector<Tensor> xs;
        for (const auto& p : in) xs.push_back(tu::sample_from(p, rng));
        Tensor y = eval_op(c.op, xs, c.attrs);
        if (!y.all_finite()) continue;  // IEEE blowups are covered by surrogates
        INFO("op ", op_info(c.op).name);
        CHECK(contains(out, y));
      }
    }
  }
}

TEST_CASE("gemm transfer honors transposes and scaling") {
  std::mt19937_64 rng(79);
  Graph g = parse_graph(R"({"name":"gm","nodes":[
    {"id":"a","kind":"input","shape":[3,2],"dtype":"f64"},
    {"id":"b","kind":"input","shape":[4,3],"dtype":"f64"},
    {"id":"c","kind":"input","shape":[4],"dtype":"f64"},
    {"id":"y","kind":"op","op":"Gemm","attrs":{"transA":1,"transB":1,"alpha":0.5,"beta":-2.0},
     "shape":[2,4],"dtype":"f64"}],
    "edges":[{"from":"a","to":"y","to_slot":0},{"from":"b","to":"y","to_slot":1},
             {"from":"c","to":"y","to_slot":2}]})");
  ValidRanges vr;
  vr.default_input_lo = -2;
  vr.default_input_hi = 2;
  AbstractState st = analyze(g, vr, GranularityPolicy{}, AnalyzeOptions{});
  PartitionedInterval out = st.concrete_output("y");
  for (int s = 0; s < 200; ++s) {
    Binding x{{"a", tu::rand_tensor(Shape{3, 2}, -2, 2, rng)},
              {"b", tu::rand_tensor(Shape{4, 3}, -2, 2, rng)},
              {"c", tu::rand_tensor(Shape{4}, -2, 2, rng)}};
    ExecResult r = execute(g, x, {});
    CHECK(contains(out, r.values.at("y").output));
  }
}

TEST_CASE("pow transfer: positive base corners and integer exponents") {
  std::mt19937_64 rng(83);
  // strictly positive base with a data-dependent exponent uses the corners
  Graph g = parse_graph(R"({"name":"pw","nodes":[
    {"id":"b","kind":"input","shape":[2],"dtype":"f64"},
    {"id":"e","kind":"input","shape":[2],"dtype":"f64"},
    {"id":"y","kind":"op","op":"Pow","shape":[2],"dtype":"f64"}],
    "edges":[{"from":"b","to":"y","to_slot":0},{"from":"e","to":"y","to_slot":1}]})");
  ValidRanges vr;
  vr.per_node["b"] = ValidRange{0.5, 3.0, std::nullopt, std::nullopt};
  vr.per_node["e"] = ValidRange{-2.0, 2.0, std::nullopt, std::nullopt};
  AbstractState st = analyze(g, vr, GranularityPolicy{}, AnalyzeOptions{});
  PartitionedInterval out = st.concrete_output("y");
  for (int s = 0; s < 300; ++s) {
    Binding x{{"b", tu::rand_tensor(Shape{2}, 0.5, 3.0, rng)},
              {"e", tu::rand_tensor(Shape{2}, -2.0, 2.0, rng)}};
    ExecResult r = execute(g, x, {});
    CHECK(contains(out, r.values.at("y").output));
  }

  // constant integer exponents stay tight per parity
  Graph g2 = parse_graph(R"({"name":"pi","nodes":[
    {"id":"b","kind":"input","shape":[2],"dtype":"f64"},
    {"id":"e","kind":"constant","shape":[2],"dtype":"f64","init":[2.0,3.0]},
    {"id":"y","kind":"op","op":"Pow","shape":[2],"dtype":"f64"}],
    "edges":[{"from":"b","to":"y","to_slot":0},{"from":"e","to":"y","to_slot":1}]})");
  ValidRanges vr2;
  vr2.per_node["b"] = ValidRange{-2.0, 1.0, std::nullopt, std::nullopt};
  AbstractState st2 = analyze(g2, vr2, GranularityPolicy{}, AnalyzeOptions{});
  PartitionedInterval out2 = st2.concrete_output("y");
  auto [l0, u0] = out2.element_bounds(0);
  CHECK(l0 == 0.0);   // even power of a straddling interval
  CHECK(u0 == 4.0);
  auto [l1, u1] = out2.element_bounds(1);
  CHECK(l1 == -8.0);  // odd power is monotone
  CHECK(u1 == 1.0);
}

TEST_CASE("reduce-sum with a concrete axes operand") {
  Graph g = parse_graph(R"({"name":"rs","nodes":[
    {"id":"x","kind":"input","shape":[2,3],"dtype":"f64"},
    {"id":"ax","kind":"constant","shape":[1],"dtype":"f64","init":[0.0]},
    {"id":"y","kind":"op","op":"ReduceSum","attrs":{"keepdims":0},"shape":[3],"dtype":"f64"}],
    "edges":[{"from":"x","to":"y","to_slot":0},{"from":"ax","to":"y","to_slot":1}]})");
  CHECK(label_fine_grained(g) == std::set<std::string>{"ax"});
  ValidRanges vr;
  vr.per_node["x"] = ValidRange{-1.0, 1.0, std::nullopt, std::nullopt};
  AbstractState st = analyze(g, vr, GranularityPolicy{}, AnalyzeOptions{});
  PartitionedInterval out = st.concrete_output("y");
  CHECK(out.lb.min_value() == -2.0);  // two elements per column
  CHECK(out.ub.max_value() == 2.0);
}

TEST_CASE("endpoint gradients") {
  // objective = upper bound of Exp output with input [0, t]: d/dt = exp(t)
  Graph g = parse_graph(R"({"name":"e","nodes":[
    {"id":"x","kind":"input","shape":[1],"dtype":"f64"},
    {"id":"e","kind":"op","op":"Exp","shape":[1],"dtype":"f64"}],
    "edges":[{"from":"x","to":"e","to_slot":0}]})");
  double t0 = 1.3;
  ValidRanges vr;
  vr.per_node["x"] = ValidRange{0.0, t0, std::nullopt, std::nullopt};
  AnalyzeOptions opt;
  opt.differentiable = true;
  AbstractState st = analyze(g, vr, GranularityPolicy{}, opt);
  Var obj = st.tape->reduce_max_all(st.output_of("e").ub);
  auto grads = endpoint_gradients(st, obj);
  CHECK(grads.at("x:ub").scalar_value() == doctest::Approx(std::exp(t0)).epsilon(1e-10));
  CHECK(grads.at("x:lb").scalar_value() == 0.0);  // objective independent of the lower endpoint

  // non-differentiable mode refuses
  AbstractState st2 = analyze(g, vr, GranularityPolicy{}, AnalyzeOptions{});
  CHECK_THROWS_AS(endpoint_gradients(st2, obj), NotDifferentiableMode);
}

TEST_CASE("endpoint gradients match finite differences on the precondition loss") {
  Graph g = tu::load_corpus_graph("running_example");
  RunConfig cfg = tu::load_corpus_config("running_example");
  AbstractState st0 = analyze(g, cfg.vr, cfg.pol, cfg.aopt);
  auto defects = detect(g, st0);
  FixRequest req =
      make_fix_request(g, defects, FixPreset::WeightsInputs, {}, cfg.vr, cfg.pol, cfg.aopt);
  std::map<std::string, std::pair<double, double>> bounds;
  for (const FixSite& s : req.sites) bounds[s.node] = {0.4 * s.valid_lo, 0.4 * s.valid_hi};

  auto grads = precond_loss_gradients(g, req, bounds, cfg.vr, cfg.pol, cfg.aopt);
  double h = 1e-6;
  for (const FixSite& s : req.sites) {
    auto up = bounds, dn = bounds;
    up[s.node].first += h;
    dn[s.node].first -= h;
    double fd_l = (precond_loss(g, req, up, cfg.vr, cfg.pol, cfg.aopt) -
                   precond_loss(g, req, dn, cfg.vr, cfg.pol, cfg.aopt)) /
                  (2 * h);
    up = bounds;
    dn = bounds;
    up[s.node].second += h;
    dn[s.node].second -= h;
    double fd_u = (precond_loss(g, req, up, cfg.vr, cfg.pol, cfg.aopt) -
                   precond_loss(g, req, dn, cfg.vr, cfg.pol, cfg.aopt)) /
                  (2 * h);
    auto [gl, gu] = grads.at(s.node);
    INFO("site ", s.node);
    CHECK(std::abs(gl - fd_l) <= 1e-4 * std::max({1.0, std::abs(gl), std::abs(fd_l)}));
    CHECK(std::abs(gu - fd_u) <= 1e-4 * std::max({1.0, std::abs(gu), std::abs(fd_u)}));
  }
}

TEST_SUITE_END();
