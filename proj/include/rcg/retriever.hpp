#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "json.hpp"
#include "rcg/autograd.hpp"
#include "rcg/data.hpp"
#include "rcg/hash.hpp"
#include "rcg/nn.hpp"

namespace rcg {

struct RetrieverConfig {
  std::size_t vocab_size = 0;
  std::size_t word_dim = 300;
  std::size_t embed_dim = 1024;
  std::size_t appearance_dim = 0;
  std::size_t motion_dim = 0;

  nlohmann::json to_json() const;
  static RetrieverConfig from_json(const nlohmann::json& j);
};

/// Video embeddings of both modalities, before normalization.
struct VideoEmbedding {
  Var appearance;
  Var motion;
};

/// Bi-encoder: a textual encoder (embedding, BiLSTM, aggregation) and a
/// visual encoder (per-modality projection and aggregation) into one space.
class Retriever {
 public:
  Retriever(const RetrieverConfig& cfg, std::uint64_t seed);
  Retriever(const Retriever&) = delete;
  Retriever& operator=(const Retriever&) = delete;

  const RetrieverConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  Var encode_sentence(Tape& t, std::span<const std::size_t> ids) const;
  VideoEmbedding encode_video(Tape& t, const Tensor& appearance, const Tensor& motion) const;

  /// Normalized embeddings without recording gradients.
  Tensor sentence_vector(std::span<const std::size_t> ids) const;
  std::pair<Tensor, Tensor> video_vectors(const Tensor& appearance, const Tensor& motion) const;

  /// Hash of all parameter names, shapes and values.
  Digest fingerprint() const;

 private:
  RetrieverConfig cfg_;
  ParameterSet params_;
  Parameter* words_ = nullptr;
  nn::LstmCell fwd_;
  nn::LstmCell bwd_;
  nn::MultiplicativeAggregator word_agg_;
  nn::Linear proj_a_;
  nn::Linear proj_m_;
  nn::MultiplicativeAggregator agg_a_;
  nn::MultiplicativeAggregator agg_m_;
};

/// e_w^T (e_m + e_a) / 2 on L2-normalized inputs.
Var similarity(Var e_w, Var e_m, Var e_a);

/// S[i][j] = sim(video i, sentence j) for stacked (B, d) embeddings.
Var similarity_matrix(Var sentences, Var motion, Var appearance);

enum class RankingMode { hardest, sum };

/// Max-margin ranking loss on a square similarity matrix whose diagonal holds
/// the positive pairs. Pairs with skip[i*B+j] != 0 are not negatives of each
/// other. Mean over rows.
Var ranking_loss(Var sim, double margin, std::span<const std::uint8_t> skip = {},
                 RankingMode mode = RankingMode::hardest);

Digest parameter_fingerprint(const ParameterSet& ps);

}  // namespace rcg
