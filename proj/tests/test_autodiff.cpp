#include <doctest.h>

#include <cmath>

#include "czsl/tape_function.hpp"
#include "testutil.hpp"

using namespace czsl;
using czsl::test::random_normal_tensor;
using czsl::test::random_tensor;

namespace {

// Softmax cross-entropy against a fixed target, composed from primitive ops.
Var ce_vec(Graph& g, Var scores, const Tensor& target) {
  int64_t n = scores.value().size();
  Var row = reshape(scores, {1, n});
  Var lse = row_logsumexp(row);
  Var dot = row_sum(mul(row, g.value(Tensor::from({1, n},
                                                  std::vector<double>(target.data(),
                                                                      target.data() + n)))));
  return reshape(sub(lse, dot), {1});
}

}  // namespace

TEST_CASE("evaluate: identity, identity matmul, uniform softmax") {
  TapeFunction identity = [](Graph&, const VarTree&, const std::vector<Var>& in) {
    return in.at(0);
  };
  Tensor out = evaluate(identity, {}, {Tensor::from({3}, {1, 2, 3})});
  CHECK(out == Tensor::from({3}, {1, 2, 3}));

  TapeFunction apply_w = [](Graph&, const VarTree& p, const std::vector<Var>& in) {
    return matmul(p.at("w"), in.at(0));
  };
  ParamTree params;
  params.set("w", Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  out = evaluate(apply_w, params, {Tensor::from({3, 1}, {4, 5, 6})});
  CHECK(out == Tensor::from({3, 1}, {4, 5, 6}));

  TapeFunction soft = [](Graph&, const VarTree&, const std::vector<Var>& in) {
    return softmax_vec(in.at(0));
  };
  out = evaluate(soft, {}, {Tensor::from({4}, {0, 0, 0, 0})});
  for (int64_t i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("evaluate is referentially transparent") {
  rng::Engine eng = rng::make_engine(21);
  ParamTree params;
  params.set("w1", random_normal_tensor({5, 7}, eng, 0.5));
  params.set("w2", random_normal_tensor({7, 1}, eng, 0.5));
  TapeFunction f = [](Graph&, const VarTree& p, const std::vector<Var>& in) {
    return sum_all(matmul(relu(matmul(in.at(0), p.at("w1"))), p.at("w2")));
  };
  Tensor x = random_tensor({3, 5}, eng);
  Tensor a = evaluate(f, params, {x});
  Tensor b = evaluate(f, params, {x});
  CHECK(a == b);  // bit-identical
}

TEST_CASE("gradient: analytic cases") {
  TapeFunction dot_self = [](Graph&, const VarTree& p, const std::vector<Var>&) {
    Var w = p.at("w");
    return sum_all(mul(w, w));
  };
  ParamTree params;
  params.set("w", Tensor::from({1}, {3.0}));
  ParamTree grad = gradient(dot_self, params, {});
  CHECK(grad.at("w")[0] == doctest::Approx(6.0).epsilon(1e-14));

  TapeFunction constant = [](Graph& g, const VarTree&, const std::vector<Var>&) {
    return g.value(Tensor::scalar(2.5));
  };
  grad = gradient(constant, params, {});
  CHECK(grad.at("w")[0] == 0.0);
}

TEST_CASE("gradient rejects non-scalar outputs") {
  TapeFunction vector_out = [](Graph&, const VarTree& p, const std::vector<Var>&) {
    return p.at("w");
  };
  ParamTree params;
  params.set("w", Tensor::from({3}, {1, 2, 3}));
  CHECK_THROWS_AS(gradient(vector_out, params, {}), NumericError);
}

TEST_CASE("shape mismatches name the offending op") {
  Graph g;
  Var a = g.value(Tensor::zeros({2, 3}));
  Var b = g.value(Tensor::zeros({3, 3}));
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
  try {
    matmul(a, g.value(Tensor::zeros({2, 2})));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
}

TEST_CASE("two-layer mlp gradient matches finite differences") {
  rng::Engine eng = rng::make_engine(33);
  ParamTree params;
  params.set("w1", random_normal_tensor({6, 9}, eng, 0.6));
  params.set("b1", random_normal_tensor({9}, eng, 0.2));
  params.set("w2", random_normal_tensor({9, 1}, eng, 0.6));
  Tensor x = random_normal_tensor({4, 6}, eng);
  TapeFunction f = [](Graph&, const VarTree& p, const std::vector<Var>& in) {
    Var h = relu(affine(in.at(0), p.at("w1"), reshape(p.at("b1"), {1, 9})));
    return mean_all(matmul(h, p.at("w2")));
  };
  FiniteDiffReport report = finite_diff_check(f, params, {x}, 1e-5);
  CHECK(report.checked > 0);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("finite differences: linear function is near-exact") {
  ParamTree params;
  params.set("w", Tensor::from({4}, {0.3, -0.4, 0.5, 1.0}));
  TapeFunction f = [](Graph& g, const VarTree& p, const std::vector<Var>&) {
    return sum_all(mul(p.at("w"), g.value(Tensor::from({4}, {2, -1, 3, 0.5}))));
  };
  FiniteDiffReport report = finite_diff_check(f, params, {}, 1e-5);
  CHECK(report.checked == 4);
  CHECK(report.max_rel_error < 1e-9);
}

TEST_CASE("finite differences: kink coordinates are excluded") {
  ParamTree params;
  params.set("w", Tensor::from({2}, {0.0, 1.0}));  // relu input exactly at the kink
  TapeFunction f = [](Graph&, const VarTree& p, const std::vector<Var>&) {
    return sum_all(relu(p.at("w")));
  };
  FiniteDiffReport report = finite_diff_check(f, params, {}, 1e-5);
  CHECK(report.skipped == 1);
  CHECK(report.checked == 1);
  CHECK(report.max_rel_error < 1e-9);
}

// Per-op gradient property suite: randomized inputs, 100 seeded trials spread
// over the op set, every op checked against central differences.
TEST_CASE("primitive op gradients match finite differences") {
  struct OpCase {
    const char* name;
    TapeFunction f;
    std::function<ParamTree(rng::Engine&)> make_params;
  };

  auto params_one = [](Shape shape, double scale = 1.0) {
    return [shape, scale](rng::Engine& eng) {
      ParamTree p;
      p.set("a", random_normal_tensor(shape, eng, scale));
      return p;
    };
  };
  auto params_two = [](Shape sa, Shape sb, double scale = 1.0) {
    return [sa, sb, scale](rng::Engine& eng) {
      ParamTree p;
      p.set("a", random_normal_tensor(sa, eng, scale));
      p.set("b", random_normal_tensor(sb, eng, scale));
      return p;
    };
  };

  std::vector<OpCase> cases;
  cases.push_back({"add",
                   [](Graph&, const VarTree& p, const std::vector<Var>&) {
                     return sum_all(add(p.at("a"), p.at("b")));
                   },
                   params_two({3, 4}, {3, 4})});
  cases.push_back({"sub_mul",
                   [](Graph&, const VarTree& p, const std::vector<Var>&) {
                     return sum_all(mul(sub(p.at("a"), p.at("b")), p.at("b")));
                   },
                   params_two({2, 5}, {2, 5})});
  cases.push_back({"div",
                   [](Graph&, const VarTree& p, const std::vector<Var>&) {
                     return sum_all(vdiv(p.at("a"), add_const(mul(p.at("b"), p.at("b")), 1.0)));
                   },
                   params_two({6}, {6})});
  cases.push_back({"matmul",
                   [](Graph&, const VarTree& p, const std::vector<Var>&) {
                     return sum_all(matmul(p.at("a"), p.at("b")));
                   },
                   params_two({3, 4}, {4, 2})});
  cases.push_back({"matmul_transpose",
                   [](Graph&, const VarTree& p, const std::vector<Var>&) {
                     return sum_all(matmul(transpose(p.at("a")), p.at("a")));
                   },
                   params_one({3, 4})});
  cases.push_back({"relu",
                   [](Graph&, const VarTree& p, const std::vector<Var>&) {
                     return sum_all(relu(p.at("a")));
                   },
                   params_one({4, 4})});
  cases.push_back({"sigmoid",
                   [](Graph&, const VarTree& p, const std::vector<Var>&) {
                     return sum_all(sigmoid(p.at("a")));
                   },
                   params_one({10})});
  cases.push_back({"exp_log",
                   [](Graph&, const VarTree& p, const std::vector<Var>&) {
                     return sum_all(vlog(add_const(vexp(p.at("a")), 1.0)));
                   },
                   params_one({7})});
  cases.push_back({"softmax_ce",
                   [](Graph& g, const VarTree& p, const std::vector<Var>&) {
                     Tensor target = Tensor::zeros({5});
                     target[2] = 1.0;
                     return ce_vec(g, p.at("a"), target);
                   },
                   params_one({5}, 2.0)});
  cases.push_back({"gap",
                   [](Graph&, const VarTree& p, const std::vector<Var>&) {
                     return sum_all(mul(gap_spatial(p.at("a")), gap_spatial(p.at("a"))));
                   },
                   params_one({3, 4, 4})});
  cases.push_back({"mul_channels",
                   [](Graph&, const VarTree& p, const std::vector<Var>&) {
                     return sum_all(mul_channels(p.at("a"), sigmoid(p.at("b"))));
                   },
                   params_two({3, 2, 2}, {3})});
  cases.push_back({"concat_slice",
                   [](Graph&, const VarTree& p, const std::vector<Var>&) {
                     Var cat = concat0(p.at("a"), p.at("b"));
                     return sum_all(mul(slice_rows(cat, 1, 4), slice_rows(cat, 3, 4)));
                   },
                   params_two({4}, {4})});
  cases.push_back({"rows_bcast",
                   [](Graph&, const VarTree& p, const std::vector<Var>&) {
                     Var m = bcast_cols(row_sum(p.at("a")), 3);
                     return sum_all(mul(m, bcast_rows(col_sum(p.at("a")), 4)));
                   },
                   params_one({4, 3})});
  cases.push_back({"repeat_tile",
                   [](Graph&, const VarTree& p, const std::vector<Var>&) {
                     Var r = repeat_rows(p.at("a"), 3);
                     Var t = tile_rows(p.at("b"), 2);
                     return sum_all(mul(r, t));
                   },
                   params_two({2, 3}, {3, 3})});
  cases.push_back({"gather_scatter",
                   [](Graph&, const VarTree& p, const std::vector<Var>&) {
                     auto idx = std::make_shared<std::vector<int64_t>>(
                         std::vector<int64_t>{0, 2, 2, 1});
                     Var gathered = gather_rows(p.at("a"), idx);
                     return sum_all(mul(gathered, gathered));
                   },
                   params_one({3, 4})});
  cases.push_back({"avg_pool",
                   [](Graph&, const VarTree& p, const std::vector<Var>&) {
                     return sum_all(mul(avg_pool2(p.at("a")), avg_pool2(p.at("a"))));
                   },
                   params_one({2, 4, 4})});
  cases.push_back({"conv2d",
                   [](Graph&, const VarTree& p, const std::vector<Var>&) {
                     Var y = conv2d(p.at("a"), p.at("b"), 1, 1);
                     return sum_all(mul(y, y));
                   },
                   params_two({2, 5, 5}, {3, 2, 3, 3}, 0.5)});

  int trial = 0;
  for (const OpCase& c : cases) {
    for (int rep = 0; rep < 7; ++rep, ++trial) {
      rng::Engine eng = rng::make_engine(1000 + static_cast<uint64_t>(trial));
      ParamTree params = c.make_params(eng);
      FiniteDiffReport report = finite_diff_check(c.f, params, {}, 1e-5);
      INFO(c.name << " rep " << rep);
      CHECK(report.checked > 0);
      CHECK(report.max_rel_error < 1e-4);
    }
  }
  CHECK(trial >= 100);
}

TEST_CASE("gradient is additive over function sums") {
  rng::Engine eng = rng::make_engine(77);
  ParamTree params;
  params.set("w", random_normal_tensor({4, 4}, eng));
  TapeFunction f = [](Graph&, const VarTree& p, const std::vector<Var>&) {
    return sum_all(mul(p.at("w"), p.at("w")));
  };
  TapeFunction h = [](Graph&, const VarTree& p, const std::vector<Var>&) {
    return sum_all(sigmoid(p.at("w")));
  };
  TapeFunction fh = [&](Graph& g, const VarTree& p, const std::vector<Var>& in) {
    return add(f(g, p, in), h(g, p, in));
  };
  ParamTree gf = gradient(f, params, {});
  ParamTree gh = gradient(h, params, {});
  ParamTree gfh = gradient(fh, params, {});
  gf.add_scaled(gh, 1.0);
  for (const auto& [name, t] : gfh) {
    CHECK(max_abs_diff(t, gf.at(name)) < 1e-10);
  }
}

TEST_CASE("detach blocks gradient flow") {
  ParamTree params;
  params.set("w", Tensor::from({2}, {1.5, -0.5}));
  TapeFunction f = [](Graph&, const VarTree& p, const std::vector<Var>&) {
    return sum_all(mul(detach(p.at("w")), p.at("w")));
  };
  ParamTree grad = gradient(f, params, {});
  // d/dw of detach(w) * w is just detach(w).
  CHECK(grad.at("w")[0] == doctest::Approx(1.5));
  CHECK(grad.at("w")[1] == doctest::Approx(-0.5));
}

TEST_CASE("second-order gradients through taped first backward") {
  // f(w) = sum(w^3); g = sum(grad f) = sum(3 w^2); dg/dw = 6 w.
  Graph g;
  Var w = g.param(Tensor::from({3}, {1.0, -2.0, 0.5}));
  Var f = sum_all(mul(mul(w, w), w));
  std::vector<Var> first = g.backward(f, {w});
  Var sum_grad = sum_all(first[0]);
  std::vector<Var> second = g.backward(sum_grad, {w});
  CHECK(second[0].value()[0] == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(second[0].value()[1] == doctest::Approx(-12.0).epsilon(1e-12));
  CHECK(second[0].value()[2] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("second-order conv gradients are rejected") {
  Graph g;
  Var x = g.param(Tensor::full({1, 4, 4}, 0.5));
  Var w = g.param(Tensor::full({1, 1, 3, 3}, 0.1));
  Var y = conv2d(x, w, 1, 1);
  std::vector<Var> first = g.backward(sum_all(mul(y, y)), {w});
  CHECK_THROWS_AS(g.backward(sum_all(mul(first[0], first[0])), {w}), NumericError);
}

TEST_CASE("relu subgradient at zero is zero") {
  ParamTree params;
  params.set("w", Tensor::from({3}, {0.0, -1.0, 2.0}));
  TapeFunction f = [](Graph&, const VarTree& p, const std::vector<Var>&) {
    return sum_all(relu(p.at("w")));
  };
  ParamTree grad = gradient(f, params, {});
  CHECK(grad.at("w")[0] == 0.0);
  CHECK(grad.at("w")[1] == 0.0);
  CHECK(grad.at("w")[2] == 1.0);
}
