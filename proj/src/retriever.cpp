#include "rcg/retriever.hpp"

#include "rcg/optim.hpp"

namespace rcg {

nlohmann::json RetrieverConfig::to_json() const {
  return {{"vocab_size", vocab_size},
          {"word_dim", word_dim},
          {"embed_dim", embed_dim},
          {"appearance_dim", appearance_dim},
          {"motion_dim", motion_dim}};
}

RetrieverConfig RetrieverConfig::from_json(const nlohmann::json& j) {
  RetrieverConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.word_dim = j.at("word_dim").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.appearance_dim = j.at("appearance_dim").get<std::size_t>();
  c.motion_dim = j.at("motion_dim").get<std::size_t>();
  return c;
}

Retriever::Retriever(const RetrieverConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.vocab_size == 0 || cfg.word_dim == 0 || cfg.embed_dim == 0) {
    throw std::invalid_argument("retriever: vocab_size, word_dim and embed_dim must be positive");
  }
  if (cfg.appearance_dim == 0 || cfg.motion_dim == 0) {
    throw std::invalid_argument("retriever: both appearance and motion feature dims are required");
  }
  Rng rng(seed);
  Tensor table(Shape{cfg.vocab_size, cfg.word_dim});
  for (double& v : table.storage()) v = 0.1 * rng.normal();
  words_ = &params_.add("text.embedding", std::move(table));
  fwd_ = nn::LstmCell(params_, "text.lstm_fwd", cfg.word_dim, cfg.embed_dim, rng);
  bwd_ = nn::LstmCell(params_, "text.lstm_bwd", cfg.word_dim, cfg.embed_dim, rng);
  word_agg_ = nn::MultiplicativeAggregator(params_, "text.agg", cfg.embed_dim, rng);
  proj_a_ = nn::Linear(params_, "video.proj_appearance", cfg.appearance_dim, cfg.embed_dim, rng);
  proj_m_ = nn::Linear(params_, "video.proj_motion", cfg.motion_dim, cfg.embed_dim, rng);
  agg_a_ = nn::MultiplicativeAggregator(params_, "video.agg_appearance", cfg.embed_dim, rng);
  agg_m_ = nn::MultiplicativeAggregator(params_, "video.agg_motion", cfg.embed_dim, rng);
}

Var Retriever::encode_sentence(Tape& t, std::span<const std::size_t> ids) const {
  if (ids.empty()) throw std::invalid_argument("encode_sentence: empty sentence");
  if (ids.size() > data::kMaxTokens) {
    throw std::invalid_argument("encode_sentence: " + std::to_string(ids.size()) + " tokens exceeds the maximum of " +
                                std::to_string(data::kMaxTokens));
  }
  const nn::Mask mask(ids.size(), 1);
  Var words = nn::embed(t, *words_, ids);
  Var seq = nn::bilstm_encode(t, fwd_, bwd_, words, mask);
  return word_agg_(t, seq, mask);
}

VideoEmbedding Retriever::encode_video(Tape& t, const Tensor& appearance, const Tensor& motion) const {
  if (appearance.empty() || motion.empty()) throw std::invalid_argument("encode_video: both modalities are required");
  if (appearance.rank() != 2 || motion.rank() != 2 || appearance.dim(0) != motion.dim(0)) {
    throw ShapeError("encode_video: expected (K, d_a) and (K, d_m) with equal K, got " + shape_str(appearance.shape()) +
                     " and " + shape_str(motion.shape()));
  }
  const nn::Mask mask(appearance.dim(0), 1);
  Var a = proj_a_(t, t.constant(appearance));
  Var m = proj_m_(t, t.constant(motion));
  return {agg_a_(t, a, mask), agg_m_(t, m, mask)};
}

Tensor Retriever::sentence_vector(std::span<const std::size_t> ids) const {
  Tape t;
  return l2_normalize(encode_sentence(t, ids)).value();
}

std::pair<Tensor, Tensor> Retriever::video_vectors(const Tensor& appearance, const Tensor& motion) const {
  Tape t;
  VideoEmbedding e = encode_video(t, appearance, motion);
  return {l2_normalize(e.appearance).value(), l2_normalize(e.motion).value()};
}

Digest Retriever::fingerprint() const { return parameter_fingerprint(params_); }

Digest parameter_fingerprint(const ParameterSet& ps) {
  Sha256 h;
  for (const Parameter* p : ps.list()) {
    h.update(p->name);
    h.update_pod(static_cast<std::uint64_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) h.update_pod(static_cast<std::uint64_t>(d));
    h.update(p->value.data().data(), p->value.numel() * sizeof(double));
  }
  return h.finish();
}

Var similarity(Var e_w, Var e_m, Var e_a) {
  Var w = l2_normalize(e_w);
  Var both = add(l2_normalize(e_m), l2_normalize(e_a));
  return affine(sum(mul(w, both)), 0.5, 0.0);
}

Var similarity_matrix(Var sentences, Var motion, Var appearance) {
  Var videos = affine(add(l2_normalize(motion), l2_normalize(appearance)), 0.5, 0.0);
  return matmul(videos, transpose(l2_normalize(sentences)));
}

Var ranking_loss(Var sim, double margin, std::span<const std::uint8_t> skip, RankingMode mode) {
  const Tensor& s = sim.value();
  if (s.rank() != 2 || s.dim(0) != s.dim(1)) throw ShapeError("ranking_loss: expected a square matrix, got " + shape_str(s.shape()));
  const std::size_t b = s.dim(0);
  if (b < 2) throw std::invalid_argument("ranking_loss: batch of " + std::to_string(b) + " has no negatives");
  if (!skip.empty() && skip.size() != b * b) throw ShapeError("ranking_loss: skip mask must have B*B entries");

  // keep[i*B+j] marks (i, j) as a valid negative pair.
  std::vector<std::uint8_t> keep(b * b, 1);
  std::vector<std::uint8_t> diag(b * b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (i == j || (!skip.empty() && skip[i * b + j])) keep[i * b + j] = 0;
    }
    diag[i * b + i] = 1;
  }
  Tape& t = *sim.tape();
  Var pos = sum_last(masked_fill(sim, diag, 0.0));  // (B)
  std::vector<std::uint8_t> keep_t(b * b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) keep_t[j * b + i] = keep[i * b + j];
  }
  Var sim_t = transpose(sim);
  if (mode == RankingMode::hardest) {
    // Rows without any valid negative get a very negative max and contribute 0.
    Var neg_v = max_last(masked_fill(sim, keep, -1e9));      // max_j sim(x_i, z_j)
    Var neg_s = max_last(masked_fill(sim_t, keep_t, -1e9));  // max_j sim(x_j, z_i)
    Var a = relu(affine(sub(neg_v, pos), 1.0, margin));
    Var c = relu(affine(sub(neg_s, pos), 1.0, margin));
    return mean(add(a, c));
  }
  Var pos_col = reshape(pos, Shape{b, 1});
  Tensor keep_f(Shape{b, b});
  Tensor keep_tf(Shape{b, b});
  for (std::size_t i = 0; i < b * b; ++i) {
    keep_f[i] = keep[i];
    keep_tf[i] = keep_t[i];
  }
  Var a = mul(relu(affine(sub(sim, pos_col), 1.0, margin)), t.constant(std::move(keep_f)));
  Var c = mul(relu(affine(sub(sim_t, pos_col), 1.0, margin)), t.constant(std::move(keep_tf)));
  return affine(sum(add(a, c)), 1.0 / static_cast<double>(b), 0.0);
}

}  // namespace rcg
