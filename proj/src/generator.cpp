#include "rcg/generator.hpp"

#include <algorithm>
#include <cmath>

#include "rcg/optim.hpp"

namespace rcg {

nlohmann::json GeneratorConfig::to_json() const {
  return {{"vocab_size", vocab_size},
          {"appearance_dim", appearance_dim},
          {"motion_dim", motion_dim},
          {"word_dim", word_dim},
          {"hidden", hidden},
          {"feat_dim", feat_dim},
          {"att_dim", att_dim},
          {"copy_hidden", copy_hidden},
          {"share_copy_embedding", share_copy_embedding},
          {"gate_bias", gate_bias}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.appearance_dim = j.at("appearance_dim").get<std::size_t>();
  c.motion_dim = j.at("motion_dim").get<std::size_t>();
  c.word_dim = j.at("word_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.feat_dim = j.at("feat_dim").get<std::size_t>();
  c.att_dim = j.at("att_dim").get<std::size_t>();
  c.copy_hidden = j.at("copy_hidden").get<std::size_t>();
  c.share_copy_embedding = j.at("share_copy_embedding").get<bool>();
  c.gate_bias = j.at("gate_bias").get<bool>();
  return c;
}

namespace {

Tensor normal_table(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  Tensor t(Shape{rows, cols});
  for (double& v : t.storage()) v = scale * rng.normal();
  return t;
}

}  // namespace

Generator::Generator(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.vocab_size <= data::kUnk || cfg.appearance_dim == 0 || cfg.motion_dim == 0 || cfg.word_dim == 0 ||
      cfg.hidden == 0 || cfg.feat_dim == 0 || cfg.att_dim == 0 || cfg.copy_hidden == 0) {
    throw std::invalid_argument("generator: every dimension must be positive and the vocabulary must hold the specials");
  }
  Rng rng(seed);
  const std::size_t keys = 2 * cfg.feat_dim;
  words_ = &params_.add("decoder.embedding", normal_table(cfg.vocab_size, cfg.word_dim, 0.1, rng));
  proj_m_ = nn::Linear(params_, "decoder.proj_motion", cfg.motion_dim, cfg.feat_dim, rng);
  proj_a_ = nn::Linear(params_, "decoder.proj_appearance", cfg.appearance_dim, cfg.feat_dim, rng);
  att_lstm_ = nn::LstmCell(params_, "decoder.att_lstm", cfg.word_dim, cfg.hidden, rng);
  vis_att_ = nn::AdditiveAttention(params_, "decoder.visual_att", cfg.hidden, keys, cfg.att_dim, rng);
  lang_lstm_ = nn::LstmCell(params_, "decoder.lang_lstm", cfg.hidden + keys, cfg.hidden, rng);
  vocab_ = nn::Linear(params_, "decoder.vocab", cfg.hidden, cfg.vocab_size, rng);
  copy_words_ = cfg.share_copy_embedding
                    ? words_
                    : &params_.add("copy.embedding", normal_table(cfg.vocab_size, cfg.word_dim, 0.1, rng));
  copy_fwd_ = nn::LstmCell(params_, "copy.lstm_fwd", cfg.word_dim, cfg.copy_hidden, rng);
  copy_bwd_ = nn::LstmCell(params_, "copy.lstm_bwd", cfg.word_dim, cfg.copy_hidden, rng);
  copy_att_ = nn::AdditiveAttention(params_, "copy.att", cfg.hidden, cfg.copy_hidden, cfg.att_dim, rng);
  gate_r_ = &params_.add("copy.gate_context", xavier_uniform(Shape{cfg.copy_hidden}, cfg.copy_hidden, 1, rng));
  gate_l_ = &params_.add("copy.gate_state", xavier_uniform(Shape{cfg.hidden}, cfg.hidden, 1, rng));
  if (cfg.gate_bias) gate_b_ = &params_.add("copy.gate_bias", Tensor(Shape{1}));
}

VisualContext Generator::encode_visual(Tape& t, const Tensor& appearance, const Tensor& motion) const {
  if (appearance.empty() || motion.empty()) throw std::invalid_argument("generator: both modalities are required");
  if (appearance.rank() != 2 || motion.rank() != 2 || appearance.dim(0) != motion.dim(0)) {
    throw ShapeError("generator: expected (K, d_a) and (K, d_m) with equal K, got " + shape_str(appearance.shape()) +
                     " and " + shape_str(motion.shape()));
  }
  VisualContext v;
  v.feats = concat({proj_m_(t, t.constant(motion)), proj_a_(t, t.constant(appearance))});
  v.keys = vis_att_.project_keys(t, v.feats);
  v.mask.assign(appearance.dim(0), 1);
  return v;
}

RetrievedBatch Generator::encode_retrieved(Tape& t, const std::vector<data::TokenIds>& sentences) const {
  RetrievedBatch r;
  r.k = sentences.size();
  if (r.k == 0) throw std::invalid_argument("multi_pointer: no retrieved sentences");
  for (const auto& s : sentences) {
    if (s.empty()) throw std::invalid_argument("multi_pointer: empty retrieved sentence");
    for (std::size_t id : s) {
      if (id >= cfg_.vocab_size) throw std::out_of_range("multi_pointer: token id " + std::to_string(id) + " outside vocabulary");
    }
    r.lmax = std::max(r.lmax, s.size());
  }
  r.tokens = sentences;
  std::vector<Var> encoded;
  for (std::size_t i = 0; i < r.k; ++i) {
    const auto& s = sentences[i];
    data::TokenIds padded(s);
    padded.resize(r.lmax, data::kPad);
    nn::Mask m(r.lmax, 0);
    std::fill(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(s.size()), 1);
    Var xs = nn::embed(t, *copy_words_, padded);
    encoded.push_back(nn::bilstm_encode(t, copy_fwd_, copy_bwd_, xs, m));
    r.vocab_ids.insert(r.vocab_ids.end(), padded.begin(), padded.end());
    r.mask.insert(r.mask.end(), m.begin(), m.end());
    for (std::size_t j = 0; j < r.lmax; ++j) r.block_ids.push_back(i * r.lmax + j);
  }
  r.z = reshape(stack(encoded), Shape{r.k * r.lmax, cfg_.copy_hidden});
  r.keys = copy_att_.project_keys(t, r.z);
  return r;
}

Generator::Context Generator::prepare(Tape& t, const Tensor& appearance, const Tensor& motion,
                                      const std::vector<data::TokenIds>& retrieved, Var p_eta, CopyMode mode) const {
  Context c;
  c.mode = mode;
  c.visual = encode_visual(t, appearance, motion);
  if (mode != CopyMode::decoder_only) {
    c.retrieved = encode_retrieved(t, retrieved);
    if (!p_eta.valid() || p_eta.value().rank() != 1 || p_eta.value().numel() != c.retrieved.k) {
      throw ShapeError("generator: retrieval probabilities must be a vector of length " +
                       std::to_string(c.retrieved.k));
    }
    c.p_eta = p_eta;
  }
  return c;
}

DecoderState Generator::initial_state(Tape& t) const { return {att_lstm_.zero_state(t), lang_lstm_.zero_state(t)}; }

Generator::StepOut Generator::decode_step(Tape& t, const DecoderState& s, std::size_t prev_token,
                                          const VisualContext& v) const {
  if (prev_token >= cfg_.vocab_size) {
    throw std::out_of_range("decode_step: token id " + std::to_string(prev_token) + " outside vocabulary");
  }
  if (!s.att.h.valid() || !s.lang.h.valid()) throw std::invalid_argument("decode_step: uninitialized decoder state");
  const std::size_t ids[1] = {prev_token};
  Var e = reshape(nn::embed(t, *words_, ids), Shape{cfg_.word_dim});
  StepOut out;
  out.state.att = att_lstm_.step(t, e, s.att);
  auto r = vis_att_.attend(t, out.state.att.h, v.keys, v.feats, v.mask);
  out.state.lang = lang_lstm_.step(t, concat({out.state.att.h, r.context}), s.lang);
  out.h_lang = out.state.lang.h;
  out.c_vis = r.context;
  out.vis_weights = r.weights;
  return out;
}

Var Generator::vocab_distribution(Tape& t, Var h_lang) const { return softmax(vocab_(t, h_lang)); }

Generator::Pointer Generator::multi_pointer(Tape& t, Var h_lang, const RetrievedBatch& r) const {
  if (r.k == 0 || !r.z.valid()) throw std::invalid_argument("multi_pointer: no encoded retrieved sentences");
  Var q = matmul(h_lang, t.param(copy_att_.w_query()));
  Var hidden = tanh(add(r.keys, q));
  Var scores = masked_fill(matmul(hidden, t.param(copy_att_.score())), r.mask, nn::kMaskedLogit);
  Pointer p;
  p.attn = softmax(reshape(scores, Shape{r.k, r.lmax}));
  p.p_ret = scatter_add(p.attn, r.vocab_ids, cfg_.vocab_size);
  p.contexts = matmul(scatter_add(p.attn, r.block_ids, r.k * r.lmax), r.z);
  Var logit = add(matmul(p.contexts, t.param(*gate_r_)), reshape(matmul(h_lang, t.param(*gate_l_)), Shape{1}));
  if (gate_b_) logit = add(logit, t.param(*gate_b_));
  p.p_copy = sigmoid(logit);
  return p;
}

MixResult mix_step(Var p_voc, Var p_ret, Var p_copy, Var p_eta) {
  const std::size_t v = p_voc.value().numel();
  const std::size_t k = p_copy.value().numel();
  if (p_voc.value().rank() != 1 || p_ret.value().rank() != 2 || p_ret.value().dim(0) != k ||
      p_ret.value().dim(1) != v || p_eta.value().rank() != 1 || p_eta.value().numel() != k) {
    throw ShapeError("mix_step: p_voc " + shape_str(p_voc.shape()) + ", p_ret " + shape_str(p_ret.shape()) +
                     ", p_copy " + shape_str(p_copy.shape()) + ", p_eta " + shape_str(p_eta.shape()));
  }
  Var g = reshape(p_copy, Shape{k, 1});
  Var pv = reshape(p_voc, Shape{1, v});
  MixResult m;
  m.p_theta = add(mul(affine(g, -1.0, 1.0), pv), mul(g, p_ret));
  m.p_final = matmul(p_eta, m.p_theta);
  return m;
}

StepDistribution Generator::step(Tape& t, const Context& ctx, const DecoderState& s, std::size_t prev_token) const {
  StepOut o = decode_step(t, s, prev_token, ctx.visual);
  StepDistribution d;
  d.state = o.state;
  d.h_lang = o.h_lang;
  d.c_vis = o.c_vis;
  d.p_voc = vocab_distribution(t, o.h_lang);
  if (ctx.mode == CopyMode::decoder_only) {
    d.p_final = d.p_voc;
    return d;
  }
  Pointer p = multi_pointer(t, o.h_lang, ctx.retrieved);
  d.p_ret = p.p_ret;
  d.attn = p.attn;
  d.p_copy = ctx.mode == CopyMode::gates_zero ? t.constant(Tensor(Shape{ctx.retrieved.k})) : p.p_copy;
  MixResult m = mix_step(d.p_voc, d.p_ret, d.p_copy, ctx.p_eta);
  d.p_theta = m.p_theta;
  d.p_final = m.p_final;
  return d;
}

Var Generator::loss(Tape& t, const Context& ctx, const data::TokenIds& target, LossReduction reduction) const {
  std::size_t len = target.size();
  while (len > 0 && target[len - 1] == data::kPad) --len;
  if (len == 0) throw std::invalid_argument("generation_loss: empty target");
  if (target[len - 1] != data::kEos) throw std::invalid_argument("generation_loss: target must end with EOS");
  for (std::size_t i = 0; i < len; ++i) {
    if (target[i] == data::kPad) throw std::invalid_argument("generation_loss: PAD inside target");
    if (target[i] >= cfg_.vocab_size) throw std::out_of_range("generation_loss: target id outside vocabulary");
  }
  DecoderState s = initial_state(t);
  std::vector<Var> terms;
  terms.reserve(len);
  for (std::size_t i = 0; i < len; ++i) {
    const std::size_t prev = i == 0 ? data::kBos : target[i - 1];
    StepDistribution d = step(t, ctx, s, prev);
    const std::size_t y[1] = {target[i]};
    terms.push_back(log(clamp_min(gather(d.p_final, y), 1e-12)));
    s = d.state;
  }
  Var total = sum(concat(terms));
  const double scale = reduction == LossReduction::mean ? -1.0 / static_cast<double>(len) : -1.0;
  return affine(total, scale, 0.0);
}

// ---------------------------------------------------------------------------

namespace {

bool better_final(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.finished_at != b.finished_at) return a.finished_at < b.finished_at;
  return a.tokens < b.tokens;
}

}  // namespace

Hypothesis beam_search(SequenceScorer& scorer, std::size_t beam_width, std::size_t max_len, std::size_t eos) {
  if (beam_width == 0) throw std::invalid_argument("beam_search: beam width must be >= 1");
  if (max_len == 0) throw std::invalid_argument("beam_search: max_len must be >= 1");
  struct Live {
    data::TokenIds tokens;
    double score;
  };
  struct Cand {
    std::size_t parent;
    std::size_t token;
    double score;
  };
  std::vector<Live> beam{{{}, 0.0}};
  std::vector<Hypothesis> done;
  for (std::size_t step = 1; step <= max_len && !beam.empty(); ++step) {
    std::vector<Cand> cands;
    for (std::size_t b = 0; b < beam.size(); ++b) {
      const auto lp = scorer.next_log_probs(beam[b].tokens);
      for (std::size_t w = 0; w < lp.size(); ++w) cands.push_back({b, w, beam[b].score + lp[w]});
    }
    auto before = [&](const Cand& a, const Cand& c) {
      if (a.score != c.score) return a.score > c.score;
      // Same length prefixes: compare parent sequences, then the new token.
      if (a.parent != c.parent) return beam[a.parent].tokens < beam[c.parent].tokens;
      return a.token < c.token;
    };
    const std::size_t keep = std::min(beam_width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), before);
    std::vector<Live> next;
    for (std::size_t i = 0; i < keep; ++i) {
      data::TokenIds toks = beam[cands[i].parent].tokens;
      toks.push_back(cands[i].token);
      if (cands[i].token == eos) {
        done.push_back({std::move(toks), cands[i].score, false, step});
      } else {
        next.push_back({std::move(toks), cands[i].score});
      }
    }
    beam = std::move(next);
    if (step == max_len) {
      for (auto& l : beam) done.push_back({std::move(l.tokens), l.score, true, max_len});
      beam.clear();
    }
    if (!done.empty() && !beam.empty()) {
      const auto best = std::min_element(done.begin(), done.end(), better_final);
      if (best->score >= beam.front().score) break;
    }
  }
  return *std::min_element(done.begin(), done.end(), better_final);
}

Hypothesis greedy_decode(SequenceScorer& scorer, std::size_t max_len, std::size_t eos) {
  if (max_len == 0) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
  Hypothesis h;
  for (std::size_t step = 1; step <= max_len; ++step) {
    const auto lp = scorer.next_log_probs(h.tokens);
    const std::size_t w = static_cast<std::size_t>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    h.tokens.push_back(w);
    h.score += lp[w];
    if (w == eos) {
      h.finished_at = step;
      return h;
    }
  }
  h.forced = true;
  h.finished_at = max_len;
  return h;
}

GeneratorScorer::GeneratorScorer(const Generator& gen, const Tensor& appearance, const Tensor& motion,
                                 const std::vector<data::TokenIds>& retrieved, std::span<const double> p_eta,
                                 CopyMode mode)
    : gen_(gen), tape_(std::make_unique<Tape>()) {
  Var eta;
  if (mode != CopyMode::decoder_only) eta = tape_->constant(Tensor::vector({p_eta.begin(), p_eta.end()}));
  ctx_ = gen_.prepare(*tape_, appearance, motion, retrieved, eta, mode);
}

std::vector<double> GeneratorScorer::next_log_probs(const data::TokenIds& prefix) {
  DecoderState s;
  std::size_t prev = data::kBos;
  if (prefix.empty()) {
    s = gen_.initial_state(*tape_);
  } else {
    const data::TokenIds parent(prefix.begin(), prefix.end() - 1);
    auto it = after_.find(parent);
    if (it == after_.end()) throw std::logic_error("GeneratorScorer: prefix extended before its parent was scored");
    s = it->second;
    prev = prefix.back();
  }
  last_ = gen_.step(*tape_, ctx_, s, prev);
  after_[prefix] = last_.state;
  const Tensor& p = last_.p_final.value();
  std::vector<double> lp(p.numel());
  for (std::size_t i = 0; i < lp.size(); ++i) lp[i] = std::log(std::max(p[i], 1e-300));
  return lp;
}

nlohmann::ordered_json export_copy_weights(const Generator& gen, std::uint64_t video_id, const Tensor& appearance,
                                           const Tensor& motion, const std::vector<data::TokenIds>& retrieved,
                                           std::span<const double> p_eta, const data::TokenIds& caption,
                                           const data::Vocabulary& vocab, CopyMode mode) {
  if (mode == CopyMode::decoder_only) throw std::invalid_argument("export_copy_weights: decoder-only model has no copy weights");
  data::TokenIds target = caption;
  if (target.empty() || target.back() != data::kEos) target.push_back(data::kEos);
  Tape t;
  Var eta = t.constant(Tensor::vector({p_eta.begin(), p_eta.end()}));
  const auto ctx = gen.prepare(t, appearance, motion, retrieved, eta, mode);
  nlohmann::ordered_json out;
  out["video_id"] = video_id;
  out["steps"] = nlohmann::ordered_json::array();
  DecoderState s = gen.initial_state(t);
  std::size_t prev = data::kBos;
  for (std::size_t y : target) {
    StepDistribution d = gen.step(t, ctx, s, prev);
    nlohmann::ordered_json step;
    step["token"] = vocab.token(y);
    step["p_copy"] = std::vector<double>(d.p_copy.value().data().begin(), d.p_copy.value().data().end());
    nlohmann::ordered_json attn = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < ctx.retrieved.k; ++i) {
      const auto row = d.attn.value().row(i);
      attn.push_back(std::vector<double>(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(ctx.retrieved.tokens[i].size())));
    }
    step["attn"] = std::move(attn);
    out["steps"].push_back(std::move(step));
    s = d.state;
    prev = y;
  }
  return out;
}

}  // namespace rcg
