#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rcg/autograd.hpp"
#include "rcg/rng.hpp"

namespace rcg::nn {

/// Logit assigned to masked positions before a softmax.
inline constexpr double kMaskedLogit = -1e9;

using Mask = std::vector<std::uint8_t>;

/// Rank-1 view of row r of a rank-2 variable.
Var row(Var x, std::size_t r);

/// y = x W + b for x of shape (in) or (n, in). W is stored as (in, out).
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  Var operator()(Tape& t, Var x) const;
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  Parameter& weight() const { return *w_; }
  Parameter* bias() const { return b_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  std::size_t in_ = 0;
  std::size_t out_ = 0;
};

struct LstmState {
  Var h;
  Var c;
};

/// Standard LSTM cell, gate order (input, forget, cell, output).
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(ParameterSet& ps, const std::string& name, std::size_t input_size, std::size_t hidden_size, Rng& rng,
           double forget_bias = 1.0);

  LstmState zero_state(Tape& t) const;
  LstmState step(Tape& t, Var x, LstmState s) const;

  /// x W_x + b for a whole (L, input) sequence; rows feed step_projected().
  Var project_inputs(Tape& t, Var xs) const;
  LstmState step_projected(Tape& t, Var projected_x, LstmState s) const;

  std::size_t input_size() const { return input_; }
  std::size_t hidden_size() const { return hidden_; }
  Parameter& w_input() const { return *wx_; }
  Parameter& w_hidden() const { return *wh_; }
  Parameter& bias() const { return *b_; }

 private:
  Parameter* wx_ = nullptr;
  Parameter* wh_ = nullptr;
  Parameter* b_ = nullptr;
  std::size_t input_ = 0;
  std::size_t hidden_ = 0;
};

/// Bidirectional encoding where each output is the mean of the forward and
/// backward hidden states at that position. `xs` is (L, input); `mask` marks
/// valid positions and must be a non-empty prefix. Padded rows are zero.
Var bilstm_encode(Tape& t, const LstmCell& fwd, const LstmCell& bwd, Var xs, std::span<const std::uint8_t> mask);

/// Softmax(v^T w_t)-weighted sum of the unmasked rows of a sequence.
class MultiplicativeAggregator {
 public:
  MultiplicativeAggregator() = default;
  MultiplicativeAggregator(ParameterSet& ps, const std::string& name, std::size_t dim, Rng& rng);

  struct Result {
    Var weights;  // (L)
    Var output;   // (d)
  };
  Result aggregate(Tape& t, Var seq, std::span<const std::uint8_t> mask) const;
  Var operator()(Tape& t, Var seq, std::span<const std::uint8_t> mask) const { return aggregate(t, seq, mask).output; }

  Parameter& core() const { return *v_; }

 private:
  Parameter* v_ = nullptr;
};

/// score_j = v^T tanh(W_q q + W_k k_j); weights = masked softmax(score);
/// context = sum_j weights_j value_j.
class AdditiveAttention {
 public:
  AdditiveAttention() = default;
  AdditiveAttention(ParameterSet& ps, const std::string& name, std::size_t query_dim, std::size_t key_dim,
                    std::size_t att_dim, Rng& rng);

  struct Result {
    Var weights;  // (L)
    Var context;  // (value_dim)
  };

  /// Keys projected once per sequence, reused across decoding steps.
  Var project_keys(Tape& t, Var keys) const;
  Result attend(Tape& t, Var query, Var projected_keys, Var values, std::span<const std::uint8_t> mask) const;
  Result operator()(Tape& t, Var query, Var keys, Var values, std::span<const std::uint8_t> mask) const {
    return attend(t, query, project_keys(t, keys), values, mask);
  }

  Parameter& w_query() const { return *wq_; }
  Parameter& w_key() const { return *wk_; }
  Parameter& score() const { return *v_; }

 private:
  Parameter* wq_ = nullptr;
  Parameter* wk_ = nullptr;
  Parameter* v_ = nullptr;
};

/// Row lookup; gradient accumulates into the looked-up rows only.
Var embed(Tape& t, Parameter& table, std::span<const std::size_t> ids);

/// Masked softmax over a rank-1 score vector; throws if every position is masked.
Var masked_softmax(Var scores, std::span<const std::uint8_t> mask, const char* who);

}  // namespace rcg::nn
