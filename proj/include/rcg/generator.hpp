#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "json.hpp"
#include "rcg/autograd.hpp"
#include "rcg/data.hpp"
#include "rcg/nn.hpp"

namespace rcg {

struct GeneratorConfig {
  std::size_t vocab_size = 0;
  std::size_t appearance_dim = 0;
  std::size_t motion_dim = 0;
  std::size_t word_dim = 300;
  std::size_t hidden = 1024;      // both decoder LSTMs
  std::size_t feat_dim = 512;     // per-modality projection; keys are 2 * feat_dim wide
  std::size_t att_dim = 512;
  std::size_t copy_hidden = 512;  // retrieved-sentence BiLSTM
  bool share_copy_embedding = false;
  bool gate_bias = false;

  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

enum class CopyMode {
  copy,          // full mixture
  gates_zero,    // gates forced to 0
  decoder_only,  // p_final = p_voc, retrieval ignored
};

enum class LossReduction { mean, sum };

struct DecoderState {
  nn::LstmState att;
  nn::LstmState lang;
};

struct VisualContext {
  Var feats;  // (K, 2F): [motion; appearance] along features
  Var keys;   // (K, A)
  nn::Mask mask;
};

/// k retrieved sentences padded to a common length and encoded once.
struct RetrievedBatch {
  std::size_t k = 0;
  std::size_t lmax = 0;
  std::vector<data::TokenIds> tokens;   // unpadded ids
  Var z;                                // (k * lmax, Hz), zero rows at padding
  Var keys;                             // (k * lmax, A)
  std::vector<std::size_t> vocab_ids;   // k * lmax, PAD at padding
  std::vector<std::size_t> block_ids;   // i * lmax + j
  nn::Mask mask;                        // k * lmax
};

struct StepDistribution {
  DecoderState state;
  Var h_lang;
  Var c_vis;
  Var p_voc;    // (V)
  Var p_ret;    // (k, V)
  Var p_copy;   // (k)
  Var p_theta;  // (k, V)
  Var p_final;  // (V)
  Var attn;     // (k, lmax)
};

class Generator {
 public:
  Generator(const GeneratorConfig& cfg, std::uint64_t seed);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  const GeneratorConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  struct Context {
    VisualContext visual;
    RetrievedBatch retrieved;
    Var p_eta;  // (k)
    CopyMode mode = CopyMode::copy;
  };

  VisualContext encode_visual(Tape& t, const Tensor& appearance, const Tensor& motion) const;
  RetrievedBatch encode_retrieved(Tape& t, const std::vector<data::TokenIds>& sentences) const;
  Context prepare(Tape& t, const Tensor& appearance, const Tensor& motion, const std::vector<data::TokenIds>& retrieved,
                  Var p_eta, CopyMode mode) const;

  DecoderState initial_state(Tape& t) const;
  struct StepOut {
    DecoderState state;
    Var h_lang;
    Var c_vis;
    Var vis_weights;
  };
  StepOut decode_step(Tape& t, const DecoderState& s, std::size_t prev_token, const VisualContext& v) const;
  Var vocab_distribution(Tape& t, Var h_lang) const;

  struct Pointer {
    Var p_ret;     // (k, V)
    Var p_copy;    // (k)
    Var contexts;  // (k, Hz)
    Var attn;      // (k, lmax)
  };
  Pointer multi_pointer(Tape& t, Var h_lang, const RetrievedBatch& r) const;

  StepDistribution step(Tape& t, const Context& ctx, const DecoderState& s, std::size_t prev_token) const;

  /// Teacher-forced -sum_t log p_final(y_t), floored at 1e-12. `target` ends
  /// with EOS, optionally followed by PAD.
  Var loss(Tape& t, const Context& ctx, const data::TokenIds& target, LossReduction reduction = LossReduction::mean) const;

 private:
  GeneratorConfig cfg_;
  ParameterSet params_;
  Parameter* words_ = nullptr;
  Parameter* copy_words_ = nullptr;
  nn::Linear proj_m_;
  nn::Linear proj_a_;
  nn::LstmCell att_lstm_;
  nn::AdditiveAttention vis_att_;
  nn::LstmCell lang_lstm_;
  nn::Linear vocab_;
  nn::LstmCell copy_fwd_;
  nn::LstmCell copy_bwd_;
  nn::AdditiveAttention copy_att_;
  Parameter* gate_r_ = nullptr;
  Parameter* gate_l_ = nullptr;
  Parameter* gate_b_ = nullptr;
};

struct MixResult {
  Var p_theta;  // (k, V)
  Var p_final;  // (V)
};

/// p_theta[i] = (1 - g_i) p_voc + g_i p_ret[i]; p_final = sum_i p_eta[i] p_theta[i].
MixResult mix_step(Var p_voc, Var p_ret, Var p_copy, Var p_eta);

// ---------------------------------------------------------------------------
// Decoding

/// Next-token log-probabilities given a prefix (BOS excluded).
class SequenceScorer {
 public:
  virtual ~SequenceScorer() = default;
  virtual std::vector<double> next_log_probs(const data::TokenIds& prefix) = 0;
};

struct Hypothesis {
  data::TokenIds tokens;  // includes the final EOS unless forced
  double score = 0.0;     // sum of log-probabilities
  bool forced = false;    // max_len reached without EOS
  std::size_t finished_at = 0;
};

/// Beam search without length normalization. Ties go to the hypothesis
/// finalized earlier, then to the lexicographically smaller token sequence.
Hypothesis beam_search(SequenceScorer& scorer, std::size_t beam_width, std::size_t max_len,
                       std::size_t eos = data::kEos);
Hypothesis greedy_decode(SequenceScorer& scorer, std::size_t max_len, std::size_t eos = data::kEos);

/// Scores prefixes with a generator, caching decoder states per prefix.
class GeneratorScorer : public SequenceScorer {
 public:
  GeneratorScorer(const Generator& gen, const Tensor& appearance, const Tensor& motion,
                  const std::vector<data::TokenIds>& retrieved, std::span<const double> p_eta, CopyMode mode);

  std::vector<double> next_log_probs(const data::TokenIds& prefix) override;
  /// Full step bundle for the last call with this prefix.
  const StepDistribution& last_step() const { return last_; }

 private:
  const Generator& gen_;
  std::unique_ptr<Tape> tape_;
  Generator::Context ctx_;
  std::map<data::TokenIds, DecoderState> after_;
  StepDistribution last_;
};

/// Per-step copy gates and per-sentence attention rows while teacher-forcing
/// `caption` (EOS appended if missing).
/// Schema: {"video_id", "steps": [{"token", "p_copy": [k], "attn": [[L_i] x k]}]}.
nlohmann::ordered_json export_copy_weights(const Generator& gen, std::uint64_t video_id, const Tensor& appearance,
                                           const Tensor& motion, const std::vector<data::TokenIds>& retrieved,
                                           std::span<const double> p_eta, const data::TokenIds& caption,
                                           const data::Vocabulary& vocab, CopyMode mode = CopyMode::copy);

}  // namespace rcg
