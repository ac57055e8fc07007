#include <gtest/gtest.h>

#include <cmath>

#include "rcg/autograd.hpp"
#include "rcg/grad_check.hpp"
#include "support.hpp"

using namespace rcg;
using rcg::test::random_tensor;

namespace {

// Runs grad_check on a scalar built from freshly drawn parameters.
GradCheckReport check(std::vector<Shape> shapes, const std::function<Var(Tape&, std::vector<Var>&)>& f,
                      std::uint64_t seed = 3, double scale = 1.0) {
  ParameterSet set;
  Rng rng(seed);
  std::vector<Parameter*> ps;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    ps.push_back(&set.add("p" + std::to_string(i), random_tensor(shapes[i], rng, scale)));
  }
  return grad_check(ps, [&](Tape& t) {
    std::vector<Var> vs;
    for (Parameter* p : ps) vs.push_back(t.param(*p));
    return f(t, vs);
  }, 1e-4);
}

// Weighted sum so every output element gets a distinct upstream gradient.
Var probe(Tape& t, Var x, std::uint64_t seed = 11) {
  Rng rng(seed);
  return sum(mul(x, t.constant(random_tensor(x.shape(), rng))));
}

}  // namespace

TEST(Tensor, ShapesAndAccess) {
  Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_DOUBLE_EQ(m.at(1, 2), 6.0);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(m.item(), ShapeError);
  EXPECT_EQ(m.reshaped(Shape{3, 2}).at(2, 1), 6.0);
  EXPECT_THROW(m.reshaped(Shape{4}), ShapeError);
  EXPECT_DOUBLE_EQ(Tensor::scalar(2.5).item(), 2.5);
}

TEST(Autograd, MatmulValues) {
  Tape t;
  Var a = t.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var b = t.constant(Tensor::matrix({{5, 6}, {7, 8}}));
  EXPECT_EQ(matmul(a, b).value(), Tensor::matrix({{19, 22}, {43, 50}}));
  Var v = t.constant(Tensor::vector({1, 1}));
  EXPECT_EQ(matmul(v, a).value(), Tensor::vector({4, 6}));
  EXPECT_EQ(matmul(a, v).value(), Tensor::vector({3, 7}));
  EXPECT_THROW(matmul(a, t.constant(Tensor::vector({1, 2, 3}))), ShapeError);
}

TEST(Autograd, SoftmaxIsStableAndNormalized) {
  Tape t;
  Var x = t.constant(Tensor::vector({1000.0, 1000.0, -1000.0}));
  const Tensor p = softmax(x).value();
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[1], 0.5, 1e-15);
  EXPECT_EQ(p[2], 0.0);
}

TEST(Autograd, LogRejectsNonPositive) {
  Tape t;
  EXPECT_THROW(log(t.constant(Tensor::vector({1.0, 0.0}))), NumericalError);
}

TEST(Autograd, L2NormalizeRejectsZero) {
  Tape t;
  EXPECT_THROW(l2_normalize(t.constant(Tensor::vector({0.0, 0.0}))), NumericalError);
}

TEST(Autograd, BackwardRequiresScalar) {
  Tape t;
  Var x = t.constant(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Autograd, ScatterAddAccumulatesDuplicates) {
  Tape t;
  Var w = t.constant(Tensor::vector({0.5, 0.25, 0.25}));
  const std::size_t ids[] = {4, 4, 1};
  const Tensor out = scatter_add(w, ids, 6).value();
  EXPECT_EQ(out, Tensor::vector({0, 0.25, 0, 0, 0.75, 0}));
}

TEST(Autograd, ParameterGradientsAccumulateAcrossTapes) {
  ParameterSet ps;
  Parameter& p = ps.add("w", Tensor::vector({1.0, 2.0}));
  p.zero_grad();
  for (int i = 0; i < 2; ++i) {
    Tape t;
    t.backward(sum(mul(t.param(p), t.param(p))));
  }
  EXPECT_EQ(p.grad, Tensor::vector({4.0, 8.0}));
}

TEST(GradCheck, ElementwiseOps) {
  auto r = check({{3, 4}, {3, 4}}, [](Tape& t, auto& v) {
    return probe(t, add(mul(sigmoid(v[0]), tanh(v[1])), sub(relu(v[0]), affine(v[1], 0.3, 0.1))));
  });
  EXPECT_TRUE(r.passed) << r.worst_parameter << " " << r.max_rel_error;
}

TEST(GradCheck, Broadcasting) {
  auto r = check({{3, 4}, {4}, {3, 1}}, [](Tape& t, auto& v) {
    return probe(t, mul(add(v[0], v[1]), v[2]));
  });
  EXPECT_TRUE(r.passed) << r.worst_parameter << " " << r.max_rel_error;
}

TEST(GradCheck, MatmulAllRanks) {
  auto r = check({{3, 4}, {4, 2}, {3}, {4}}, [](Tape& t, auto& v) {
    Var a = probe(t, matmul(v[0], v[1]));
    Var b = probe(t, matmul(v[2], v[0]), 5);
    Var c = probe(t, matmul(v[0], v[3]), 6);
    return add(add(a, b), c);
  });
  EXPECT_TRUE(r.passed) << r.worst_parameter << " " << r.max_rel_error;
}

TEST(GradCheck, SoftmaxLogAndReductions) {
  auto r = check({{2, 5}}, [](Tape& t, auto& v) {
    Var p = softmax(v[0]);
    return add(probe(t, log(p)), add(mean(sum_last(p)), sum(max_last(v[0]))));
  });
  EXPECT_TRUE(r.passed) << r.worst_parameter << " " << r.max_rel_error;
}

TEST(GradCheck, StructuralOps) {
  auto r = check({{3, 2}, {3, 3}, {2}}, [](Tape& t, auto& v) {
    Var c = concat({v[0], v[1]});
    Var s = stack({v[2], v[2]});
    const std::size_t rows[] = {2, 0, 2};
    Var g = gather(c, rows);
    Var sl = slice_last(g, 1, 3);
    Var tr = transpose(sl);
    return add(add(probe(t, tr), probe(t, reshape(s, Shape{4}), 2)), probe(t, l2_normalize(v[1]), 3));
  });
  EXPECT_TRUE(r.passed) << r.worst_parameter << " " << r.max_rel_error;
}

TEST(GradCheck, ScatterMaskClamp) {
  auto r = check({{2, 3}}, [](Tape& t, auto& v) {
    const std::size_t ids[] = {1, 1, 4, 0, 3, 3};
    const std::uint8_t keep[] = {1, 0, 1};
    Var s = scatter_add(v[0], ids, 5);
    Var m = masked_fill(v[0], keep, -2.0);
    Var c = clamp_min(v[0], -0.5);
    return add(add(probe(t, s), probe(t, m, 4)), probe(t, c, 9));
  });
  EXPECT_TRUE(r.passed) << r.worst_parameter << " " << r.max_rel_error;
}

TEST(GradCheck, DetectsCorruptedBackward) {
  ParameterSet ps;
  Parameter& p = ps.add("w", Tensor::vector({0.3, -0.7, 1.1}));
  Parameter* list[] = {&p};
  auto build = [&](Tape& t) {
    Var x = t.param(p);
    Tensor y = x.value();
    for (double& e : y.storage()) e = e * e;
    Var sq = t.custom({x}, y, [](const Tensor& g, auto in, auto grads) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*grads[0])[i] += g[i] * 3.0 * (*in[0])[i];  // should be 2x
    });
    return sum(sq);
  };
  const auto r = grad_check(list, build, 1e-4);
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_rel_error, 0.1);
  EXPECT_EQ(r.worst_parameter, "w");
}

TEST(Autograd, SoftmaxExamples) {
  Tape t;
  const Tensor u = softmax(t.constant(Tensor::vector({0, 0, 0}))).value();
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x = random_tensor(Shape{3, 7}, rng, 5.0);
    Tensor shifted = x;
    const double c = rng.uniform(-50, 50);
    for (double& v : shifted.storage()) v += c;
    const Tensor a = softmax(t.constant(x)).value();
    const Tensor b = softmax(t.constant(shifted)).value();
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_GE(a.at(r, j), 0.0);
        EXPECT_NEAR(a.at(r, j), b.at(r, j), 1e-12);
        s += a.at(r, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Autograd, L2NormalizeExamples) {
  Tape t;
  const Tensor e = l2_normalize(t.constant(Tensor::vector({3, 4}))).value();
  EXPECT_NEAR(e[0], 0.6, 1e-15);
  EXPECT_NEAR(e[1], 0.8, 1e-15);
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x = l2_normalize(t.constant(random_tensor(Shape{2, 9}, rng, 3.0))).value();
    for (std::size_t r = 0; r < 2; ++r) {
      double n = 0.0;
      for (double v : x.row(r)) n += v * v;
      EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
    }
  }
}

TEST(Autograd, BackwardExamples) {
  ParameterSet ps;
  Parameter& p = ps.add("p", Tensor::vector({1.5, -2.0, 0.5}));
  Parameter& q = ps.add("q", Tensor::vector({1.0}));
  ps.zero_grads();
  {
    Tape t;
    t.backward(sum(t.param(p)));
  }
  EXPECT_EQ(p.grad, Tensor::vector({1, 1, 1}));
  EXPECT_EQ(q.grad, Tensor::vector({0}));  // unreachable
  ps.zero_grads();
  {
    Tape t;
    t.backward(sum(affine(t.param(p), 0.0, 0.0)));
  }
  EXPECT_EQ(p.grad, Tensor::vector({0, 0, 0}));
}

TEST(Autograd, ShapeErrorsNameTheOp) {
  Tape t;
  Var a = t.constant(Tensor(Shape{2, 3}));
  Var b = t.constant(Tensor(Shape{3, 2}));
  try {
    add(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos) << e.what();
  }
}

TEST(Autograd, ForwardIsPure) {
  Rng rng(1);
  const Tensor x = random_tensor(Shape{4, 6}, rng);
  const Tensor w = random_tensor(Shape{6, 3}, rng);
  Tape t1, t2;
  const Tensor a = softmax(matmul(t1.constant(x), t1.constant(w))).value();
  const Tensor b = softmax(matmul(t2.constant(x), t2.constant(w))).value();
  EXPECT_EQ(a, b);
}

TEST(GradCheck, RandomComposedGraphs) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng pick(seed);
    const int a = static_cast<int>(pick.below(4));
    const int b = static_cast<int>(pick.below(3));
    auto r = check({{2, 3}, {3, 3}, {3}}, [&](Tape& t, auto& v) {
      Var h = matmul(v[0], v[1]);
      switch (a) {
        case 0: h = sigmoid(h); break;
        case 1: h = tanh(h); break;
        case 2: h = softmax(h); break;
        default: h = l2_normalize(h); break;
      }
      h = add(h, v[2]);
      switch (b) {
        case 0: h = mul(h, h); break;
        case 1: h = concat({h, v[0]}); break;
        default: h = max_last(h); break;
      }
      return probe(t, h, seed);
    }, seed);
    EXPECT_TRUE(r.passed) << "seed " << seed << " " << r.worst_parameter << " " << r.max_rel_error;
  }
}
