#include <gtest/gtest.h>

#include <cmath>

#include "rcg/grad_check.hpp"
#include "rcg/nn.hpp"
#include "support.hpp"

using namespace rcg;
using rcg::test::random_tensor;

namespace {

Var probe(Tape& t, Var x, std::uint64_t seed = 11) {
  Rng rng(seed);
  return sum(mul(x, t.constant(random_tensor(x.shape(), rng))));
}

void zero_all(ParameterSet& ps) {
  for (Parameter* p : ps.list()) p->value.fill(0.0);
}

}  // namespace

TEST(Lstm, ZeroWeightsGiveZeroHidden) {
  ParameterSet ps;
  Rng rng(1);
  nn::LstmCell cell(ps, "c", 3, 4, rng);
  zero_all(ps);
  Tape t;
  auto s = cell.step(t, t.constant(Tensor::vector({1, 2, 3})), cell.zero_state(t));
  for (double v : s.h.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, SaturatedForgetGateKeepsCell) {
  ParameterSet ps;
  Rng rng(1);
  nn::LstmCell cell(ps, "c", 3, 2, rng);
  zero_all(ps);
  for (std::size_t i = 2; i < 4; ++i) cell.bias().value[i] = 50.0;
  Tape t;
  nn::LstmState s{t.constant(Tensor::vector({0.3, -0.2})), t.constant(Tensor::vector({0.7, -1.1}))};
  auto next = cell.step(t, t.constant(Tensor::vector({1, 2, 3})), s);
  EXPECT_NEAR(next.c.value()[0], 0.7, 1e-3);
  EXPECT_NEAR(next.c.value()[1], -1.1, 1e-3);
}

TEST(Lstm, DimensionErrors) {
  ParameterSet ps;
  Rng rng(1);
  nn::LstmCell cell(ps, "c", 3, 2, rng);
  Tape t;
  EXPECT_THROW(cell.step(t, t.constant(Tensor::vector({1, 2})), cell.zero_state(t)), ShapeError);
  EXPECT_THROW(cell.step(t, t.constant(Tensor::vector({1, 2, 3})), nn::LstmState{}), std::invalid_argument);
}

TEST(Lstm, GradCheck) {
  ParameterSet ps;
  Rng rng(2);
  nn::LstmCell cell(ps, "c", 3, 4, rng);
  Parameter& x = ps.add("x", random_tensor(Shape{3}, rng));
  const auto list = ps.list();
  auto r = grad_check(list, [&](Tape& t) {
    auto s = cell.step(t, t.param(x), cell.zero_state(t));
    s = cell.step(t, t.param(x), s);
    return probe(t, concat({s.h, s.c}));
  }, 1e-4);
  EXPECT_TRUE(r.passed) << r.worst_parameter << " " << r.max_rel_error;
}

TEST(BiLstm, LengthOneIsMeanOfDirections) {
  ParameterSet ps;
  Rng rng(3);
  nn::LstmCell f(ps, "f", 3, 4, rng), b(ps, "b", 3, 4, rng);
  Tape t;
  Var x = t.constant(Tensor::matrix({{0.1, -0.4, 0.9}}));
  const std::uint8_t mask[] = {1};
  const Tensor out = nn::bilstm_encode(t, f, b, x, mask).value();
  const Tensor hf = f.step(t, nn::row(x, 0), f.zero_state(t)).h.value();
  const Tensor hb = b.step(t, nn::row(x, 0), b.zero_state(t)).h.value();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.at(0, i), 0.5 * (hf[i] + hb[i]), 1e-15);
}

TEST(BiLstm, PalindromeWithTiedCellsIsPalindromic) {
  ParameterSet ps;
  Rng rng(4);
  nn::LstmCell cell(ps, "c", 2, 3, rng);
  Tape t;
  Var x = t.constant(Tensor::matrix({{1, 2}, {-1, 0.5}, {0.3, 0.3}, {-1, 0.5}, {1, 2}}));
  const std::uint8_t mask[] = {1, 1, 1, 1, 1};
  const Tensor out = nn::bilstm_encode(t, cell, cell, x, mask).value();
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out.at(i, j), out.at(4 - i, j), 1e-14);
  }
}

TEST(BiLstm, PaddingDoesNotChangeAggregate) {
  ParameterSet ps;
  Rng rng(5);
  nn::LstmCell f(ps, "f", 2, 3, rng), b(ps, "b", 2, 3, rng);
  nn::MultiplicativeAggregator agg(ps, "agg", 3, rng);
  Tape t;
  Tensor base = random_tensor(Shape{3, 2}, rng);
  Tensor padded(Shape{5, 2});
  std::copy(base.data().begin(), base.data().end(), padded.data().begin());
  padded.at(3, 0) = 9.0;
  padded.at(4, 1) = -7.0;
  const std::uint8_t m3[] = {1, 1, 1};
  const std::uint8_t m5[] = {1, 1, 1, 0, 0};
  const Tensor a = agg(t, nn::bilstm_encode(t, f, b, t.constant(base), m3), m3).value();
  const Tensor c = agg(t, nn::bilstm_encode(t, f, b, t.constant(padded), m5), m5).value();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a[i], c[i], 1e-6);
  EXPECT_THROW(nn::bilstm_encode(t, f, b, t.constant(base), std::vector<std::uint8_t>{0, 0, 0}), std::invalid_argument);
}

TEST(Aggregator, Examples) {
  ParameterSet ps;
  Rng rng(6);
  nn::MultiplicativeAggregator agg(ps, "agg", 2, rng);
  Tape t;
  // Core orthogonal to all rows: uniform weights.
  agg.core().value = Tensor::vector({1.0, 0.0});
  Var seq = t.constant(Tensor::matrix({{0, 1}, {0, 3}, {0, -1}}));
  const std::uint8_t all[] = {1, 1, 1};
  const Tensor mean = agg(t, seq, all).value();
  EXPECT_NEAR(mean[1], 1.0, 1e-15);
  // Single unmasked position.
  const std::uint8_t one[] = {0, 1, 0};
  EXPECT_EQ(agg(t, seq, one).value(), Tensor::vector({0, 3}));
  // Scores (ln 3, 0) weight 0.75 / 0.25.
  agg.core().value = Tensor::vector({1.0, 0.0});
  Var two = t.constant(Tensor::matrix({{std::log(3.0), 2.0}, {0.0, 6.0}}));
  const std::uint8_t both[] = {1, 1};
  const auto res = agg.aggregate(t, two, both);
  EXPECT_NEAR(res.weights.value()[0], 0.75, 1e-15);
  EXPECT_NEAR(res.output.value()[1], 0.75 * 2.0 + 0.25 * 6.0, 1e-14);
  const std::uint8_t none[] = {0, 0};
  EXPECT_THROW(agg(t, two, none), std::invalid_argument);
}

TEST(Attention, Examples) {
  ParameterSet ps;
  Rng rng(7);
  nn::AdditiveAttention att(ps, "att", 3, 2, 4, rng);
  Tape t;
  Var q = t.constant(Tensor::vector({0.2, -0.5, 1.0}));
  Var keys = t.constant(Tensor::matrix({{1, 1}, {1, 1}, {1, 1}}));
  Var values = t.constant(Tensor::matrix({{1, 0}, {2, 0}, {6, 3}}));
  const std::uint8_t all[] = {1, 1, 1};
  auto r = att(t, q, keys, values, all);
  for (double w : r.weights.value().data()) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.context.value()[0], 3.0, 1e-14);
  const std::uint8_t one[] = {0, 0, 1};
  auto s = att(t, q, t.constant(random_tensor(Shape{3, 2}, rng)), values, one);
  EXPECT_EQ(s.weights.value()[0], 0.0);
  EXPECT_NEAR(s.context.value()[0], 6.0, 1e-15);
  const std::uint8_t none[] = {0, 0, 0};
  EXPECT_THROW(att(t, q, keys, values, none), std::invalid_argument);
}

TEST(Attention, WeightsAreDistributions) {
  ParameterSet ps;
  Rng rng(8);
  nn::AdditiveAttention att(ps, "att", 3, 4, 5, rng);
  for (int trial = 0; trial < 100; ++trial) {
    Tape t;
    const std::size_t n = 1 + rng.below(6);
    std::vector<std::uint8_t> mask(n);
    for (auto& m : mask) m = rng.below(3) != 0;
    mask[rng.below(n)] = 1;
    auto r = att(t, t.constant(random_tensor(Shape{3}, rng)), t.constant(random_tensor(Shape{n, 4}, rng)),
                 t.constant(random_tensor(Shape{n, 2}, rng)), mask);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = r.weights.value()[i];
      EXPECT_GE(w, 0.0);
      if (!mask[i]) EXPECT_EQ(w, 0.0);
      s += w;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Layers, GradCheckAttentionAggregatorEmbedding) {
  ParameterSet ps;
  Rng rng(9);
  nn::AdditiveAttention att(ps, "att", 3, 4, 5, rng);
  nn::MultiplicativeAggregator agg(ps, "agg", 4, rng);
  nn::Linear lin(ps, "lin", 4, 3, rng);
  Parameter& table = ps.add("table", random_tensor(Shape{6, 4}, rng));
  Parameter& q = ps.add("q", random_tensor(Shape{3}, rng));
  const auto list = ps.list();
  auto r = grad_check(list, [&](Tape& t) {
    const std::size_t ids[] = {2, 5, 2, 0};
    Var seq = nn::embed(t, table, ids);
    const std::uint8_t mask[] = {1, 1, 0, 1};
    auto a = att(t, t.param(q), seq, seq, mask);
    Var g = agg(t, seq, mask);
    return add(probe(t, sigmoid(lin(t, add(a.context, g)))), probe(t, a.weights, 3));
  }, 1e-4);
  EXPECT_TRUE(r.passed) << r.worst_parameter << " " << r.max_rel_error;
}

TEST(Embed, LookupAndGradientCounts) {
  ParameterSet ps;
  Rng rng(10);
  Parameter& table = ps.add("table", random_tensor(Shape{4, 2}, rng));
  table.zero_grad();
  Tape t;
  const std::size_t ids[] = {1, 1, 3};
  Var e = nn::embed(t, table, ids);
  EXPECT_EQ(e.value().at(0, 0), e.value().at(1, 0));
  t.backward(sum(e));
  EXPECT_EQ(table.grad, Tensor::matrix({{0, 0}, {2, 2}, {0, 0}, {1, 1}}));
  const std::size_t bad[] = {4};
  EXPECT_THROW(nn::embed(t, table, bad), std::out_of_range);
}
