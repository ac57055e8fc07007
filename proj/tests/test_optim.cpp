#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "rcg/checkpoint.hpp"
#include "rcg/grad_check.hpp"
#include "rcg/nn.hpp"
#include "rcg/optim.hpp"
#include "support.hpp"

using namespace rcg;

TEST(Adam, ZeroGradsLeaveParametersUnchanged) {
  ParameterSet ps;
  Parameter& p = ps.add("x", Tensor::vector({1.0, -3.0}));
  p.zero_grad();
  Adam adam(AdamConfig{0.1});
  const auto list = ps.list();
  adam.step(list);
  EXPECT_EQ(p.value, Tensor::vector({1.0, -3.0}));
}

TEST(Adam, DescendsOnQuadratic) {
  ParameterSet ps;
  Parameter& p = ps.add("x", Tensor::vector({1.0}));
  Adam adam(AdamConfig{0.1});
  const auto list = ps.list();
  p.zero_grad();
  p.grad[0] = 2.0 * p.value[0];
  adam.step(list);
  EXPECT_LT(p.value[0], 1.0);
}

TEST(Adam, ConvergesOnTwoDimensionalQuadratic) {
  ParameterSet ps;
  Parameter& p = ps.add("x", Tensor::vector({1.0, -2.0}));
  Adam adam(AdamConfig{0.05});
  const auto list = ps.list();
  double loss = 0.0;
  for (int i = 0; i < 200; ++i) {
    p.zero_grad();
    Tape t;
    Var x = t.param(p);
    Var l = sum(mul(mul(x, x), t.constant(Tensor::vector({1.0, 3.0}))));
    loss = l.value().item();
    t.backward(l);
    adam.step(list);
  }
  Tape t;
  Var x = t.param(p);
  loss = sum(mul(mul(x, x), t.constant(Tensor::vector({1.0, 3.0})))).value().item();
  EXPECT_LT(loss, 1e-4);
}

TEST(Adam, RejectsNonFiniteGradientsWithoutTouchingParameters) {
  ParameterSet ps;
  Parameter& a = ps.add("a", Tensor::vector({1.0}));
  Parameter& b = ps.add("b", Tensor::vector({2.0}));
  a.zero_grad();
  b.zero_grad();
  a.grad[0] = 1.0;
  b.grad[0] = NAN;
  Adam adam;
  const auto list = ps.list();
  EXPECT_THROW(adam.step(list), NumericalError);
  EXPECT_EQ(a.value[0], 1.0);
  EXPECT_EQ(adam.steps(), 0);
}

TEST(Optim, ClipAndDecay) {
  ParameterSet ps;
  Parameter& a = ps.add("a", Tensor::vector({3.0, 4.0}));
  a.grad = Tensor::vector({30.0, 40.0});
  const auto list = ps.list();
  EXPECT_DOUBLE_EQ(clip_grad_norm(list, 5.0), 50.0);
  EXPECT_NEAR(a.grad[0], 3.0, 1e-12);
  EXPECT_NEAR(a.grad[1], 4.0, 1e-12);
  EXPECT_DOUBLE_EQ(step_decay_lr(2e-4, 0, 0.5, 3), 2e-4);
  EXPECT_DOUBLE_EQ(step_decay_lr(2e-4, 2, 0.5, 3), 2e-4);
  EXPECT_DOUBLE_EQ(step_decay_lr(2e-4, 3, 0.5, 3), 1e-4);
  EXPECT_DOUBLE_EQ(step_decay_lr(2e-4, 7, 0.5, 3), 5e-5);
}

TEST(Optim, XavierBounds) {
  Rng rng(4);
  const Tensor w = xavier_uniform(Shape{20, 30}, 20, 30, rng);
  const double bound = std::sqrt(6.0 / 50.0);
  for (double v : w.data()) EXPECT_LE(std::abs(v), bound);
}

TEST(Rng, ReproducibleAndUniform) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(Rng(42).next_u64(), c.next_u64());
  Rng r(9);
  std::vector<int> hist(5, 0);
  for (int i = 0; i < 5000; ++i) ++hist[r.below(5)];
  for (int h : hist) EXPECT_NEAR(h, 1000, 150);
  double m = 0.0, s = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double x = r.normal();
    m += x;
    s += x * x;
  }
  EXPECT_NEAR(m / 20000, 0.0, 0.03);
  EXPECT_NEAR(s / 20000, 1.0, 0.05);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ParameterSet ps;
  Rng rng(2);
  ps.add("layer.weight", test::random_tensor(Shape{3, 4}, rng));
  ps.add("layer.bias", test::random_tensor(Shape{4}, rng));
  Adam adam;
  for (Parameter* p : ps.list()) p->grad = test::random_tensor(p->value.shape(), rng);
  const auto list = ps.list();
  adam.step(list);

  Checkpoint ck;
  ck.put_parameters(ps, "m/");
  ck.put_optimizer(adam, "opt/");
  ck.put_bytes("config", "{\"a\": 1}");
  ck.put("scalar32", Tensor::vector({0.1}), DTypeCode::f32);
  std::stringstream ss;
  ck.write(ss);
  const Checkpoint back = Checkpoint::read(ss, "memory");

  ParameterSet other;
  other.add("layer.weight", Tensor(Shape{3, 4}));
  other.add("layer.bias", Tensor(Shape{4}));
  back.restore_parameters(other, "m/");
  EXPECT_EQ(other.get("layer.weight").value, ps.get("layer.weight").value);
  EXPECT_EQ(other.get("layer.bias").value, ps.get("layer.bias").value);
  Adam restored;
  back.restore_optimizer(restored, "opt/");
  EXPECT_EQ(restored.steps(), 1);
  EXPECT_EQ(restored.moments().at("layer.bias").v, adam.moments().at("layer.bias").v);
  EXPECT_EQ(back.bytes("config"), "{\"a\": 1}");
  EXPECT_EQ(back.tensor("scalar32")[0], static_cast<double>(0.1f));

  std::stringstream again;
  back.write(again);
  EXPECT_EQ(again.str(), ss.str());
}

TEST(Checkpoint, RejectsCorruptionAndShapeMismatch) {
  Checkpoint ck;
  ck.put("w", Tensor::vector({1, 2}));
  std::stringstream ss;
  ck.write(ss);
  std::string bytes = ss.str();
  bytes[0] = 'X';
  std::stringstream bad(bytes);
  EXPECT_THROW(Checkpoint::read(bad, "bad"), DataError);
  std::stringstream cut(ss.str().substr(0, ss.str().size() - 3));
  EXPECT_THROW(Checkpoint::read(cut, "cut"), DataError);

  ParameterSet ps;
  ps.add("w", Tensor::vector({0, 0, 0}));
  EXPECT_THROW(ck.restore_parameters(ps), DataError);
}
