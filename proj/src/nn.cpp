#include "rcg/nn.hpp"

#include <algorithm>
#include <cmath>

#include "rcg/optim.hpp"

namespace rcg::nn {

namespace {

double sigmoid_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Var row(Var x, std::size_t r) {
  const std::size_t ids[1] = {r};
  Var g = gather(x, ids);
  return reshape(g, Shape{x.value().cols()});
}

Var masked_softmax(Var scores, std::span<const std::uint8_t> mask, const char* who) {
  if (mask.size() != scores.value().numel()) {
    throw ShapeError(std::string(who) + ": mask length " + std::to_string(mask.size()) + " for " +
                     std::to_string(scores.value().numel()) + " positions");
  }
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
    throw std::invalid_argument(std::string(who) + ": every position is masked");
  }
  if (std::all_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) return softmax(scores);
  return softmax(masked_fill(scores, mask, kMaskedLogit));
}

// ---------------------------------------------------------------------------

Linear::Linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias)
    : in_(in), out_(out) {
  w_ = &ps.add(name + ".weight", xavier_uniform(Shape{in, out}, in, out, rng));
  if (bias) b_ = &ps.add(name + ".bias", Tensor(Shape{out}));
}

Var Linear::operator()(Tape& t, Var x) const {
  Var y = matmul(x, t.param(*w_));
  return b_ ? add(y, t.param(*b_)) : y;
}

// ---------------------------------------------------------------------------

LstmCell::LstmCell(ParameterSet& ps, const std::string& name, std::size_t input_size, std::size_t hidden_size,
                   Rng& rng, double forget_bias)
    : input_(input_size), hidden_(hidden_size) {
  wx_ = &ps.add(name + ".w_input", xavier_uniform(Shape{input_size, 4 * hidden_size}, input_size, hidden_size, rng));
  wh_ = &ps.add(name + ".w_hidden", xavier_uniform(Shape{hidden_size, 4 * hidden_size}, hidden_size, hidden_size, rng));
  Tensor b(Shape{4 * hidden_size});
  for (std::size_t i = hidden_size; i < 2 * hidden_size; ++i) b[i] = forget_bias;
  b_ = &ps.add(name + ".bias", std::move(b));
}

LstmState LstmCell::zero_state(Tape& t) const {
  return {t.constant(Tensor(Shape{hidden_})), t.constant(Tensor(Shape{hidden_}))};
}

Var LstmCell::project_inputs(Tape& t, Var xs) const {
  if (xs.value().cols() != input_) {
    throw ShapeError("lstm: input width " + std::to_string(xs.value().cols()) + " != cell input size " +
                     std::to_string(input_));
  }
  return add(matmul(xs, t.param(*wx_)), t.param(*b_));
}

LstmState LstmCell::step(Tape& t, Var x, LstmState s) const {
  if (x.value().rank() != 1) throw ShapeError("lstm: step input must be a vector, got " + shape_str(x.shape()));
  return step_projected(t, project_inputs(t, x), s);
}

LstmState LstmCell::step_projected(Tape& t, Var px, LstmState s) const {
  if (!s.h.valid() || !s.c.valid()) throw std::invalid_argument("lstm: uninitialized state");
  if (s.h.value().numel() != hidden_ || s.c.value().numel() != hidden_) {
    throw ShapeError("lstm: state of shape " + shape_str(s.h.shape()) + " for hidden size " + std::to_string(hidden_));
  }
  if (px.value().numel() != 4 * hidden_) {
    throw ShapeError("lstm: projected input of shape " + shape_str(px.shape()) + " for hidden size " +
                     std::to_string(hidden_));
  }
  const std::size_t h = hidden_;
  Var gates = add(px, matmul(s.h, t.param(*wh_)));
  // Gate nonlinearities and the state update as one node: [h_new; c_new].
  const Tensor& gv = gates.value();
  const Tensor& cv = s.c.value();
  Tensor out(Shape{2 * h});
  for (std::size_t j = 0; j < h; ++j) {
    const double i = sigmoid_scalar(gv[j]);
    const double f = sigmoid_scalar(gv[h + j]);
    const double g = std::tanh(gv[2 * h + j]);
    const double o = sigmoid_scalar(gv[3 * h + j]);
    const double c = f * cv[j] + i * g;
    out[j] = o * std::tanh(c);
    out[h + j] = c;
  }
  Var both = t.custom({gates, s.c}, std::move(out),
                      [h](const Tensor& go, std::span<const Tensor* const> in, std::span<Tensor* const> gin) {
                        const Tensor& gv = *in[0];
                        const Tensor& cv = *in[1];
                        Tensor& gg = *gin[0];
                        Tensor& gc = *gin[1];
                        for (std::size_t j = 0; j < h; ++j) {
                          const double i = sigmoid_scalar(gv[j]);
                          const double f = sigmoid_scalar(gv[h + j]);
                          const double g = std::tanh(gv[2 * h + j]);
                          const double o = sigmoid_scalar(gv[3 * h + j]);
                          const double c = f * cv[j] + i * g;
                          const double tc = std::tanh(c);
                          const double dc = go[h + j] + go[j] * o * (1.0 - tc * tc);
                          gg[j] += dc * g * i * (1.0 - i);
                          gg[h + j] += dc * cv[j] * f * (1.0 - f);
                          gg[2 * h + j] += dc * i * (1.0 - g * g);
                          gg[3 * h + j] += go[j] * tc * o * (1.0 - o);
                          gc[j] += dc * f;
                        }
                      });
  return {slice_last(both, 0, h), slice_last(both, h, h)};
}

// ---------------------------------------------------------------------------

Var bilstm_encode(Tape& t, const LstmCell& fwd, const LstmCell& bwd, Var xs, std::span<const std::uint8_t> mask) {
  const Tensor& xv = xs.value();
  if (xv.rank() != 2) throw ShapeError("bilstm: expected (L, input) sequence, got " + shape_str(xv.shape()));
  const std::size_t len = xv.dim(0);
  if (mask.size() != len) throw ShapeError("bilstm: mask length differs from sequence length");
  std::size_t valid = 0;
  while (valid < len && mask[valid]) ++valid;
  if (valid == 0) throw std::invalid_argument("bilstm: empty sequence");
  for (std::size_t i = valid; i < len; ++i) {
    if (mask[i]) throw std::invalid_argument("bilstm: mask must mark a prefix of valid positions");
  }
  if (fwd.hidden_size() != bwd.hidden_size()) throw ShapeError("bilstm: direction hidden sizes differ");

  Var pf = fwd.project_inputs(t, xs);
  Var pb = bwd.project_inputs(t, xs);
  std::vector<Var> hf(valid);
  std::vector<Var> hb(valid);
  LstmState s = fwd.zero_state(t);
  for (std::size_t i = 0; i < valid; ++i) {
    s = fwd.step_projected(t, row(pf, i), s);
    hf[i] = s.h;
  }
  s = bwd.zero_state(t);
  for (std::size_t i = valid; i-- > 0;) {
    s = bwd.step_projected(t, row(pb, i), s);
    hb[i] = s.h;
  }
  std::vector<Var> rows;
  rows.reserve(len);
  for (std::size_t i = 0; i < valid; ++i) rows.push_back(affine(add(hf[i], hb[i]), 0.5, 0.0));
  if (valid < len) {
    Var zero = t.constant(Tensor(Shape{fwd.hidden_size()}));
    for (std::size_t i = valid; i < len; ++i) rows.push_back(zero);
  }
  return stack(rows);
}

// ---------------------------------------------------------------------------

MultiplicativeAggregator::MultiplicativeAggregator(ParameterSet& ps, const std::string& name, std::size_t dim,
                                                   Rng& rng) {
  v_ = &ps.add(name + ".core", xavier_uniform(Shape{dim}, dim, 1, rng));
}

MultiplicativeAggregator::Result MultiplicativeAggregator::aggregate(Tape& t, Var seq,
                                                                     std::span<const std::uint8_t> mask) const {
  const Tensor& sv = seq.value();
  if (sv.rank() != 2 || sv.cols() != v_->value.numel()) {
    throw ShapeError("aggregate: sequence " + shape_str(sv.shape()) + " incompatible with core of size " +
                     std::to_string(v_->value.numel()));
  }
  Var scores = matmul(seq, t.param(*v_));
  Var w = masked_softmax(scores, mask, "aggregate");
  return {w, matmul(w, seq)};
}

// ---------------------------------------------------------------------------

AdditiveAttention::AdditiveAttention(ParameterSet& ps, const std::string& name, std::size_t query_dim,
                                     std::size_t key_dim, std::size_t att_dim, Rng& rng) {
  wq_ = &ps.add(name + ".w_query", xavier_uniform(Shape{query_dim, att_dim}, query_dim, att_dim, rng));
  wk_ = &ps.add(name + ".w_key", xavier_uniform(Shape{key_dim, att_dim}, key_dim, att_dim, rng));
  v_ = &ps.add(name + ".score", xavier_uniform(Shape{att_dim}, att_dim, 1, rng));
}

Var AdditiveAttention::project_keys(Tape& t, Var keys) const {
  if (keys.value().rank() != 2) throw ShapeError("attention: keys must be (L, key_dim), got " + shape_str(keys.shape()));
  return matmul(keys, t.param(*wk_));
}

AdditiveAttention::Result AdditiveAttention::attend(Tape& t, Var query, Var projected_keys, Var values,
                                                    std::span<const std::uint8_t> mask) const {
  const Tensor& kv = projected_keys.value();
  const Tensor& vv = values.value();
  if (vv.rank() != 2 || vv.dim(0) != kv.dim(0)) {
    throw ShapeError("attention: " + std::to_string(kv.dim(0)) + " keys but values of shape " + shape_str(vv.shape()));
  }
  Var hidden = tanh(add(projected_keys, matmul(query, t.param(*wq_))));
  Var scores = matmul(hidden, t.param(*v_));
  Var w = masked_softmax(scores, mask, "attention");
  return {w, matmul(w, values)};
}

// ---------------------------------------------------------------------------

Var embed(Tape& t, Parameter& table, std::span<const std::size_t> ids) {
  if (table.value.rank() != 2) throw ShapeError("embed: table must be rank 2");
  for (std::size_t id : ids) {
    if (id >= table.value.dim(0)) {
      throw std::out_of_range("embed: token id " + std::to_string(id) + " >= table rows " +
                              std::to_string(table.value.dim(0)));
    }
  }
  return gather(t.param(table), ids);
}

}  // namespace rcg::nn
