#include "rcg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "rcg/checkpoint.hpp"
#include "rcg/hash.hpp"
#include "rcg/metrics.hpp"

namespace rcg {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::retriever_pretrain: return "retriever-pretrain";
    case TrainMode::rcg_fixed: return "rcg-fixed";
    case TrainMode::rcg_joint: return "rcg-joint";
    case TrainMode::baseline: return "baseline";
  }
  return "?";
}

TrainMode parse_train_mode(std::string_view text) {
  if (text == "retriever-pretrain") return TrainMode::retriever_pretrain;
  if (text == "rcg-fixed" || text == "fixed") return TrainMode::rcg_fixed;
  if (text == "rcg-joint" || text == "joint") return TrainMode::rcg_joint;
  if (text == "baseline") return TrainMode::baseline;
  throw std::invalid_argument("unknown training mode '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Config

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = to_string(mode);
  j["word_dim"] = word_dim;
  j["retriever_dim"] = retriever_dim;
  j["hidden"] = hidden;
  j["feat_dim"] = feat_dim;
  j["att_dim"] = att_dim;
  j["copy_hidden"] = copy_hidden;
  j["share_copy_embedding"] = share_copy_embedding;
  j["gate_bias"] = gate_bias;
  j["min_freq"] = min_freq;
  j["topk_train"] = topk_train;
  j["topk_test"] = topk_test;
  j["temperature"] = temperature;
  j["margin"] = margin;
  j["lr"] = lr;
  j["lr_decay"] = lr_decay;
  j["decay_every"] = decay_every;
  j["clip_norm"] = clip_norm;
  j["retriever_batch"] = retriever_batch;
  j["generator_batch"] = generator_batch;
  j["retriever_epochs"] = retriever_epochs;
  j["epochs"] = epochs;
  j["refresh_every"] = refresh_every;
  j["ret_weight"] = ret_weight;
  j["gen_weight"] = gen_weight;
  j["captions_per_epoch"] = captions_per_epoch;
  j["beam"] = beam;
  j["max_decode_len"] = max_decode_len;
  j["seed"] = seed;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw DataError("config: expected a JSON object");
  static const std::set<std::string> known = [] {
    std::set<std::string> keys;
    const auto defaults = TrainConfig{}.to_json();
    for (const auto& [k, v] : defaults.items()) keys.insert(k);
    return keys;
  }();
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw DataError("config: unknown key '" + k + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    if (j.contains("mode")) c.mode = parse_train_mode(j.at("mode").get<std::string>());
    get("word_dim", c.word_dim);
    get("retriever_dim", c.retriever_dim);
    get("hidden", c.hidden);
    get("feat_dim", c.feat_dim);
    get("att_dim", c.att_dim);
    get("copy_hidden", c.copy_hidden);
    get("share_copy_embedding", c.share_copy_embedding);
    get("gate_bias", c.gate_bias);
    get("min_freq", c.min_freq);
    get("topk_train", c.topk_train);
    get("topk_test", c.topk_test);
    get("temperature", c.temperature);
    get("margin", c.margin);
    get("lr", c.lr);
    get("lr_decay", c.lr_decay);
    get("decay_every", c.decay_every);
    get("clip_norm", c.clip_norm);
    get("retriever_batch", c.retriever_batch);
    get("generator_batch", c.generator_batch);
    get("retriever_epochs", c.retriever_epochs);
    get("epochs", c.epochs);
    get("refresh_every", c.refresh_every);
    get("ret_weight", c.ret_weight);
    get("gen_weight", c.gen_weight);
    get("captions_per_epoch", c.captions_per_epoch);
    get("beam", c.beam);
    get("max_decode_len", c.max_decode_len);
    get("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("config: ") + e.what());
  }
  return c;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

std::string TrainConfig::hash() const { return to_hex(sha256(to_json().dump())); }

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("config: ") + what);
  };
  need(word_dim > 0 && retriever_dim > 0 && hidden > 0 && feat_dim > 0 && att_dim > 0 && copy_hidden > 0,
       "model dimensions must be positive");
  need(topk_train >= 1 && topk_test >= 1, "topk_train and topk_test must be >= 1");
  need(lr >= 0.0 && std::isfinite(lr), "lr must be finite and >= 0");
  need(lr_decay > 0.0 && decay_every > 0, "lr_decay and decay_every must be positive");
  need(temperature > 0.0 && margin >= 0.0 && clip_norm > 0.0, "temperature and clip_norm must be positive");
  need(retriever_batch >= 2 && generator_batch >= 1, "retriever_batch must be >= 2 and generator_batch >= 1");
  need(retriever_epochs >= 0 && epochs >= 0 && refresh_every >= 0, "epoch counts must be >= 0");
  need(beam >= 1 && max_decode_len >= 1, "beam and max_decode_len must be >= 1");
  need(min_freq >= 1, "min_freq must be >= 1");
}

RetrieverConfig TrainConfig::retriever_config(std::size_t vocab, std::size_t d_a, std::size_t d_m) const {
  RetrieverConfig r;
  r.vocab_size = vocab;
  r.word_dim = word_dim;
  r.embed_dim = retriever_dim;
  r.appearance_dim = d_a;
  r.motion_dim = d_m;
  return r;
}

GeneratorConfig TrainConfig::generator_config(std::size_t vocab, std::size_t d_a, std::size_t d_m) const {
  GeneratorConfig g;
  g.vocab_size = vocab;
  g.appearance_dim = d_a;
  g.motion_dim = d_m;
  g.word_dim = word_dim;
  g.hidden = hidden;
  g.feat_dim = feat_dim;
  g.att_dim = att_dim;
  g.copy_hidden = copy_hidden;
  g.share_copy_embedding = share_copy_embedding;
  g.gate_bias = gate_bias;
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

constexpr const char* kFormat = "rcg-model-1";

std::string copy_mode_name(CopyMode m) {
  switch (m) {
    case CopyMode::copy: return "copy";
    case CopyMode::gates_zero: return "gates-zero";
    case CopyMode::decoder_only: return "decoder-only";
  }
  return "?";
}

CopyMode parse_copy_mode(const std::string& s) {
  if (s == "copy") return CopyMode::copy;
  if (s == "gates-zero") return CopyMode::gates_zero;
  if (s == "decoder-only") return CopyMode::decoder_only;
  throw DataError("checkpoint: unknown copy mode '" + s + "'");
}

Digest from_hex(const std::string& hex) {
  Digest d{};
  if (hex.size() != 64) throw DataError("checkpoint: bad fingerprint");
  for (std::size_t i = 0; i < 32; ++i) d[i] = static_cast<std::uint8_t>(std::stoul(hex.substr(2 * i, 2), nullptr, 16));
  return d;
}

struct Snapshot {
  std::vector<Tensor> values;
  Adam opt;
};

Snapshot snapshot(const ParameterSet& ps, const Adam& opt) {
  Snapshot s;
  for (const Parameter* p : ps.list()) s.values.push_back(p->value);
  s.opt = opt;
  return s;
}

void restore(ParameterSet& ps, Adam& opt, const Snapshot& s) {
  auto list = ps.list();
  for (std::size_t i = 0; i < list.size(); ++i) list[i]->value = s.values[i];
  opt = s.opt;
}

void copy_values(const ParameterSet& from, ParameterSet& to) {
  for (Parameter* p : to.list()) {
    const Parameter& src = from.get(p->name);
    if (src.value.shape() != p->value.shape()) throw ShapeError("parameter copy: shape mismatch for " + p->name);
    p->value = src.value;
  }
}

std::vector<Parameter*> concat_lists(std::vector<Parameter*> a, const std::vector<Parameter*>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

void Model::save(const std::filesystem::path& path) const {
  Checkpoint ck;
  ck.put_bytes("meta/format", kFormat);
  ck.put_bytes("meta/config", config.to_json().dump());
  ck.put_bytes("meta/vocab", nlohmann::json(vocab.tokens()).dump());
  nlohmann::ordered_json state;
  state["epoch"] = epoch;
  state["best_epoch"] = best_epoch;
  state["copy_mode"] = copy_mode_name(copy_mode);
  state["index_fingerprint"] = to_hex(index_fingerprint);
  if (retriever) state["retriever"] = retriever->config().to_json();
  if (generator) state["generator"] = generator->config().to_json();
  ck.put_bytes("meta/state", state.dump());
  ck.put_bytes("meta/history", history.dump());
  if (retriever) {
    ck.put_parameters(retriever->params(), "retriever/");
    ck.put_optimizer(retriever_opt, "opt/retriever/");
  }
  if (generator) {
    ck.put_parameters(generator->params(), "generator/");
    ck.put_optimizer(generator_opt, "opt/generator/");
  }
  ck.save(path);
}

Model Model::load(const std::filesystem::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  if (!ck.has("meta/format") || ck.bytes("meta/format") != kFormat) {
    throw DataError(path.string() + ": not a model checkpoint");
  }
  Model m;
  try {
    m.config = TrainConfig::from_json(nlohmann::json::parse(ck.bytes("meta/config")));
    m.vocab = data::Vocabulary::from_tokens(nlohmann::json::parse(ck.bytes("meta/vocab")).get<std::vector<std::string>>());
    const auto state = nlohmann::json::parse(ck.bytes("meta/state"));
    m.epoch = state.at("epoch").get<int>();
    m.best_epoch = state.at("best_epoch").get<int>();
    m.copy_mode = parse_copy_mode(state.at("copy_mode").get<std::string>());
    m.index_fingerprint = from_hex(state.at("index_fingerprint").get<std::string>());
    m.history = nlohmann::ordered_json::parse(ck.bytes("meta/history"));
    if (state.contains("retriever")) {
      m.retriever = std::make_unique<Retriever>(RetrieverConfig::from_json(state.at("retriever")), 0);
      ck.restore_parameters(m.retriever->params(), "retriever/");
      ck.restore_optimizer(m.retriever_opt, "opt/retriever/");
    }
    if (state.contains("generator")) {
      m.generator = std::make_unique<Generator>(GeneratorConfig::from_json(state.at("generator")), 0);
      ck.restore_parameters(m.generator->params(), "generator/");
      ck.restore_optimizer(m.generator_opt, "opt/generator/");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint metadata: " + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Retriever pretraining

data::Vocabulary build_vocabulary(const data::Dataset& ds, std::size_t min_freq) {
  std::vector<data::Tokens> caps;
  for (const auto* v : ds.split("train")) caps.insert(caps.end(), v->captions.begin(), v->captions.end());
  if (caps.empty()) throw DataError("dataset has no training captions");
  return data::Vocabulary::build(caps, min_freq);
}

Model init_retriever(const TrainConfig& cfg, const data::Dataset& ds) {
  cfg.validate();
  Model m;
  m.config = cfg;
  m.config.mode = TrainMode::retriever_pretrain;
  m.vocab = build_vocabulary(ds, cfg.min_freq);
  m.retriever = std::make_unique<Retriever>(cfg.retriever_config(m.vocab.size(), ds.appearance_dim(), ds.motion_dim()),
                                            Rng::derive(cfg.seed, 0x524554).next_u64());
  return m;
}

RetrievalMetrics retrieval_eval(const Retriever& r, const data::Vocabulary& vocab, const data::Dataset& ds,
                                std::string_view split) {
  const auto corpus = ds.sentences(split);
  const auto videos = ds.split(split);
  if (corpus.empty() || videos.empty()) throw DataError("retrieval_eval: split '" + std::string(split) + "' is empty");
  const EmbeddingIndex index = build_index(r, vocab, corpus);
  std::vector<std::vector<std::uint64_t>> ranked;
  std::vector<std::set<std::uint64_t>> correct;
  for (const auto* v : videos) {
    const auto [app, mot] = r.video_vectors(v->appearance, v->motion);
    const auto scores = score_all(index, mot.data(), app.data());
    const auto rows = topk_rows(scores, index.sentence_ids, index.video_ids, index.size(), std::nullopt);
    std::vector<std::uint64_t> ids;
    ids.reserve(rows.size());
    for (std::size_t row : rows) ids.push_back(index.sentence_ids[row]);
    ranked.push_back(std::move(ids));
    std::set<std::uint64_t> ok;
    for (const auto& s : corpus) {
      if (ds.relevant(v->id, s.video_id)) ok.insert(s.sentence_id);
    }
    correct.push_back(std::move(ok));
  }
  return retrieval_metrics(ranked, correct);
}

namespace {

struct Pair {
  const data::VideoRecord* video;
  std::size_t caption;
};

std::vector<Pair> training_pairs(const data::Dataset& ds) {
  std::vector<Pair> out;
  for (const auto* v : ds.split("train")) {
    for (std::size_t c = 0; c < v->captions.size(); ++c) out.push_back({v, c});
  }
  if (out.empty()) throw DataError("dataset has no training pairs");
  return out;
}

void log_line(const TrainHooks& hooks, const std::string& s) {
  if (hooks.log) hooks.log(s);
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

/// Skip mask for in-batch negatives: pairs whose videos are mutually relevant.
std::vector<std::uint8_t> relevance_mask(const data::Dataset& ds, std::span<const Pair> batch) {
  const std::size_t b = batch.size();
  std::vector<std::uint8_t> skip(b * b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (i != j && ds.relevant(batch[i].video->id, batch[j].video->id)) skip[i * b + j] = 1;
    }
  }
  return skip;
}

Var batch_ranking_loss(Tape& t, const Retriever& r, const data::Vocabulary& vocab, const data::Dataset& ds,
                       std::span<const Pair> batch, double margin) {
  std::vector<Var> w, m, a;
  for (const Pair& p : batch) {
    w.push_back(r.encode_sentence(t, vocab.encode(p.video->captions[p.caption])));
    const auto v = r.encode_video(t, p.video->appearance, p.video->motion);
    m.push_back(v.motion);
    a.push_back(v.appearance);
  }
  const auto skip = relevance_mask(ds, batch);
  return ranking_loss(similarity_matrix(stack(w), stack(m), stack(a)), margin, skip);
}

void check_finite(double v, const char* what, int epoch, std::size_t batch) {
  if (!std::isfinite(v)) {
    throw NumericalError(std::string(what) + " diverged (non-finite loss) at epoch " + std::to_string(epoch + 1) +
                         ", batch " + std::to_string(batch + 1));
  }
}

}  // namespace

Model pretrain_retriever(const TrainConfig& cfg, const data::Dataset& ds, const TrainHooks& hooks) {
  Model m = init_retriever(cfg, ds);
  Retriever& r = *m.retriever;
  auto params = r.params().list();
  auto pairs = training_pairs(ds);
  const bool has_val = !ds.splits.val.empty();
  double best = -1.0;
  Snapshot best_state = snapshot(r.params(), m.retriever_opt);

  for (int epoch = 0; epoch < cfg.retriever_epochs; ++epoch) {
    m.retriever_opt.set_lr(step_decay_lr(cfg.lr, epoch, cfg.lr_decay, cfg.decay_every));
    Rng rng = Rng::derive(cfg.seed, 0x52455400ULL + static_cast<std::uint64_t>(epoch));
    rng.shuffle(pairs);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + 2 <= pairs.size(); start += cfg.retriever_batch) {
      const std::size_t n = std::min(cfg.retriever_batch, pairs.size() - start);
      const std::span<const Pair> batch(pairs.data() + start, n);
      r.params().zero_grads();
      Tape t;
      Var loss = batch_ranking_loss(t, r, m.vocab, ds, batch, cfg.margin);
      check_finite(loss.value().item(), "retriever training", epoch, batches);
      t.backward(loss);
      clip_grad_norm(params, cfg.clip_norm);
      m.retriever_opt.step(params);
      total += loss.value().item();
      ++batches;
    }
    nlohmann::ordered_json h;
    h["epoch"] = epoch + 1;
    h["lr"] = m.retriever_opt.lr();
    h["train_loss"] = batches ? total / static_cast<double>(batches) : 0.0;
    double score = 0.0;
    if (has_val) {
      const auto val = retrieval_eval(r, m.vocab, ds, "val");
      h["val"] = val.to_json();
      score = val.r1;
    }
    m.history.push_back(h);
    m.epoch = epoch + 1;
    log_line(hooks, "retriever epoch " + std::to_string(epoch + 1) + " loss " + fmt(h["train_loss"].get<double>()) +
                        (has_val ? " val R@1 " + fmt(score) : ""));
    if (score > best) {
      best = score;
      m.best_epoch = epoch + 1;
      best_state = snapshot(r.params(), m.retriever_opt);
    }
  }
  restore(r.params(), m.retriever_opt, best_state);
  return m;
}

// ---------------------------------------------------------------------------
// Caption generator training

RetrievedSet retrieve(const Retriever& r, const EmbeddingIndex& index, const data::VideoRecord& v, std::size_t k,
                      double temperature, bool exclude_own) {
  const auto [app, mot] = r.video_vectors(v.appearance, v.motion);
  return topk_search(index, mot.data(), app.data(), k, exclude_own ? std::optional<std::uint64_t>(v.id) : std::nullopt,
                     temperature, v.id);
}

namespace {

struct SentenceTable {
  std::map<std::uint64_t, data::TokenIds> ids;

  SentenceTable(const std::vector<data::CorpusSentence>& corpus, const data::Vocabulary& vocab) {
    for (const auto& s : corpus) ids.emplace(s.sentence_id, vocab.encode(s.tokens));
  }
  std::vector<data::TokenIds> tokens(const RetrievedSet& set) const {
    std::vector<data::TokenIds> out;
    for (const auto& it : set.items) out.push_back(ids.at(it.sentence_id));
    return out;
  }
};

std::vector<double> probabilities(const RetrievedSet& set) {
  std::vector<double> p;
  for (const auto& it : set.items) p.push_back(it.probability);
  return p;
}

data::TokenIds target_ids(const data::Vocabulary& vocab, const data::Tokens& caption) {
  data::TokenIds y = vocab.encode(caption);
  y.push_back(data::kEos);
  return y;
}

EvalResult evaluate_with(const Model& model, const data::Dataset& ds, const EvalOptions& opt,
                         const EmbeddingIndex* index, const SentenceTable* table, bool exclude_own,
                         bool with_retrieval_metrics, const TrainHooks& hooks) {
  const Generator& gen = *model.generator;
  const auto videos = ds.split(opt.split);
  if (videos.empty()) throw DataError("evaluate: split '" + opt.split + "' is empty");
  EvalResult out;
  std::vector<EvalPair> pairs;
  for (const auto* v : videos) {
    CaptionResult cr;
    cr.video_id = v->id;
    Hypothesis h;
    if (model.copy_mode == CopyMode::decoder_only) {
      GeneratorScorer scorer(gen, v->appearance, v->motion, {}, {}, CopyMode::decoder_only);
      h = beam_search(scorer, opt.beam, model.config.max_decode_len);
    } else {
      const RetrievedSet set = retrieve(*model.retriever, *index, *v, opt.topk, model.config.temperature, exclude_own);
      if (hooks.on_retrieval) hooks.on_retrieval(v->id, set);
      for (const auto& it : set.items) cr.retrieved.push_back(it.sentence_id);
      const auto p = probabilities(set);
      GeneratorScorer scorer(gen, v->appearance, v->motion, table->tokens(set), p, model.copy_mode);
      h = beam_search(scorer, opt.beam, model.config.max_decode_len);
    }
    cr.caption = model.vocab.decode(h.tokens);
    cr.score = h.score;
    cr.forced = h.forced;
    pairs.push_back({v->id, cr.caption, v->captions});
    out.captions.push_back(std::move(cr));
  }
  nlohmann::ordered_json rep;
  rep["epoch"] = model.epoch;
  rep["split"] = opt.split;
  rep["cider"] = pairs.size() >= 2 ? cider(pairs) : 0.0;
  rep["bleu4"] = bleu4(pairs);
  rep["rougeL"] = rouge_l(pairs);
  if (with_retrieval_metrics && model.retriever) {
    const auto rm = retrieval_eval(*model.retriever, model.vocab, ds, opt.split);
    const auto j = rm.to_json();
    rep["r_at"] = j.at("r_at");
    rep["medr"] = rm.medr;
    rep["mnr"] = rm.mnr;
  } else {
    rep["r_at"] = nullptr;
    rep["medr"] = nullptr;
    rep["mnr"] = nullptr;
  }
  rep["config_hash"] = model.config.hash();
  rep["mode"] = to_string(model.config.mode);
  rep["corpus"] = opt.corpus.to_string();
  rep["topk_test"] = opt.topk;
  rep["beam"] = opt.beam;
  rep["pairs"] = pairs.size();
  out.report = std::move(rep);
  return out;
}

}  // namespace

Model train_rcg(const TrainConfig& cfg, const data::Dataset& ds, const Model* source, const EmbeddingIndex* given,
                const TrainHooks& hooks) {
  cfg.validate();
  const bool retrieval = cfg.mode == TrainMode::rcg_fixed || cfg.mode == TrainMode::rcg_joint;
  const bool joint = cfg.mode == TrainMode::rcg_joint;
  if (cfg.mode == TrainMode::retriever_pretrain) throw std::invalid_argument("train_rcg: use pretrain_retriever");
  if (retrieval && (source == nullptr || !source->retriever)) {
    throw std::invalid_argument("train_rcg: " + to_string(cfg.mode) + " needs a retriever checkpoint");
  }

  Model m;
  m.config = cfg;
  m.vocab = retrieval ? source->vocab : build_vocabulary(ds, cfg.min_freq);
  m.copy_mode = retrieval ? CopyMode::copy : CopyMode::decoder_only;
  m.generator = std::make_unique<Generator>(cfg.generator_config(m.vocab.size(), ds.appearance_dim(), ds.motion_dim()),
                                            Rng::derive(cfg.seed, 0x47454E).next_u64());
  const auto corpus = ds.sentences("train");
  std::unique_ptr<SentenceTable> table;
  EmbeddingIndex index;
  Digest frozen{};
  if (retrieval) {
    m.retriever = std::make_unique<Retriever>(source->retriever->config(), 0);
    copy_values(source->retriever->params(), m.retriever->params());
    frozen = m.retriever->fingerprint();
    table = std::make_unique<SentenceTable>(corpus, m.vocab);
    const Digest expected = corpus_fingerprint(frozen, corpus);
    if (given) {
      if (given->fingerprint != expected) {
        throw DataError("index fingerprint does not match the retriever checkpoint and training corpus");
      }
      index = *given;
    } else {
      index = build_index(*m.retriever, m.vocab, corpus);
    }
    m.index_fingerprint = index.fingerprint;
  }

  Generator& gen = *m.generator;
  const auto gen_params = gen.params().list();
  const auto ret_params = retrieval ? m.retriever->params().list() : std::vector<Parameter*>{};
  const auto all_params = joint ? concat_lists(gen_params, ret_params) : gen_params;
  const auto train_videos = ds.split("train");
  std::map<std::uint64_t, RetrievedSet> cache;
  double best = -1.0;
  Snapshot best_gen = snapshot(gen.params(), m.generator_opt);
  std::optional<Snapshot> best_ret;
  if (joint) best_ret = snapshot(m.retriever->params(), m.retriever_opt);
  Digest best_index = m.index_fingerprint;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = step_decay_lr(cfg.lr, epoch, cfg.lr_decay, cfg.decay_every);
    m.generator_opt.set_lr(lr);
    m.retriever_opt.set_lr(lr);

    if (retrieval) {
      const bool refresh = joint && epoch > 0 && cfg.refresh_every > 0 && epoch % cfg.refresh_every == 0;
      if (refresh) index = build_index(*m.retriever, m.vocab, corpus);
      if (refresh || cache.empty()) {
        cache.clear();
        for (const auto* v : train_videos) {
          RetrievedSet set = retrieve(*m.retriever, index, *v, cfg.topk_train, cfg.temperature);
          if (hooks.on_retrieval) hooks.on_retrieval(v->id, set);
          cache.emplace(v->id, std::move(set));
        }
      }
    }

    Rng rng = Rng::derive(cfg.seed, 0x47454E00ULL + static_cast<std::uint64_t>(epoch));
    std::vector<Pair> samples;
    for (const auto* v : train_videos) {
      std::vector<std::size_t> caps(v->captions.size());
      for (std::size_t c = 0; c < caps.size(); ++c) caps[c] = c;
      if (cfg.captions_per_epoch > 0 && cfg.captions_per_epoch < caps.size()) {
        rng.shuffle(caps);
        caps.resize(cfg.captions_per_epoch);
        std::sort(caps.begin(), caps.end());
      }
      for (std::size_t c : caps) samples.push_back({v, c});
    }
    rng.shuffle(samples);

    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < samples.size(); start += cfg.generator_batch) {
      const std::size_t n = std::min(cfg.generator_batch, samples.size() - start);
      const std::span<const Pair> batch(samples.data() + start, n);
      for (Parameter* p : all_params) p->zero_grad();
      double batch_loss = 0.0;
      for (const Pair& p : batch) {
        const data::VideoRecord& v = *p.video;
        Tape t;
        Var eta;
        std::vector<data::TokenIds> retrieved;
        if (retrieval) {
          const RetrievedSet& set = cache.at(v.id);
          retrieved = table->tokens(set);
          if (joint) {
            const auto ve = m.retriever->encode_video(t, v.appearance, v.motion);
            std::vector<Var> sims;
            for (const auto& ids : retrieved) sims.push_back(similarity(m.retriever->encode_sentence(t, ids), ve.motion, ve.appearance));
            eta = softmax(affine(concat(sims), 1.0 / cfg.temperature, 0.0));
          } else {
            eta = t.constant(Tensor::vector(probabilities(set)));
          }
        }
        const auto ctx = gen.prepare(t, v.appearance, v.motion, retrieved, eta, m.copy_mode);
        Var loss = gen.loss(t, ctx, target_ids(m.vocab, v.captions[p.caption]));
        batch_loss += loss.value().item();
        t.backward(affine(loss, cfg.gen_weight / static_cast<double>(n), 0.0));
      }
      batch_loss /= static_cast<double>(n);
      if (joint && n >= 2 && cfg.ret_weight > 0.0) {
        Tape t;
        Var lr_loss = batch_ranking_loss(t, *m.retriever, m.vocab, ds, batch, cfg.margin);
        check_finite(lr_loss.value().item(), "joint retrieval loss", epoch, batches);
        t.backward(affine(lr_loss, cfg.ret_weight, 0.0));
      }
      check_finite(batch_loss, "caption training", epoch, batches);
      clip_grad_norm(all_params, cfg.clip_norm);
      m.generator_opt.step(gen_params);
      if (joint) m.retriever_opt.step(ret_params);
      total += batch_loss;
      ++batches;
    }

    m.epoch = epoch + 1;
    nlohmann::ordered_json h;
    h["epoch"] = epoch + 1;
    h["lr"] = lr;
    h["train_loss"] = batches ? total / static_cast<double>(batches) : 0.0;
    if (retrieval) h["index_fingerprint"] = to_hex(index.fingerprint);
    double score = 0.0;
    if (!ds.splits.val.empty()) {
      EvalOptions opt;
      opt.split = "val";
      opt.topk = cfg.topk_test;
      opt.beam = cfg.beam;
      const auto res = evaluate_with(m, ds, opt, retrieval ? &index : nullptr, table.get(), true, false, hooks);
      score = res.report.at("cider").get<double>();
      h["val_cider"] = score;
      h["val_bleu4"] = res.report.at("bleu4");
    }
    m.history.push_back(h);
    log_line(hooks, to_string(cfg.mode) + " epoch " + std::to_string(epoch + 1) + " loss " +
                        fmt(h["train_loss"].get<double>()) + " val CIDEr " + fmt(score));
    if (score > best) {
      best = score;
      m.best_epoch = epoch + 1;
      best_gen = snapshot(gen.params(), m.generator_opt);
      if (joint) best_ret = snapshot(m.retriever->params(), m.retriever_opt);
      if (retrieval) best_index = corpus_fingerprint(m.retriever->fingerprint(), corpus);
    }
  }

  restore(gen.params(), m.generator_opt, best_gen);
  if (joint) restore(m.retriever->params(), m.retriever_opt, *best_ret);
  if (retrieval) m.index_fingerprint = best_index;
  if (cfg.mode == TrainMode::rcg_fixed && m.retriever->fingerprint() != frozen) {
    throw std::logic_error("fixed-mode training modified the retriever");
  }
  return m;
}

EvalResult evaluate(const Model& model, const data::Dataset& ds, const EvalOptions& opt, const TrainHooks& hooks) {
  if (!model.generator) throw std::invalid_argument("evaluate: checkpoint has no caption generator");
  if (opt.topk == 0 || opt.beam == 0) throw std::invalid_argument("evaluate: topk and beam must be >= 1");
  if (model.copy_mode == CopyMode::decoder_only) {
    return evaluate_with(model, ds, opt, nullptr, nullptr, true, false, hooks);
  }
  if (!model.retriever) throw DataError("evaluate: checkpoint has no retriever");
  const auto corpus = data::corpus_view(ds, opt.corpus, opt.corpus_seed);
  const EmbeddingIndex index = build_index(*model.retriever, model.vocab, corpus);
  const SentenceTable table(corpus, model.vocab);
  // The oracle corpus exists to contain the test videos' own sentences.
  const bool exclude_own = opt.corpus.kind != data::CorpusSpec::Kind::oracle;
  return evaluate_with(model, ds, opt, &index, &table, exclude_own, true, hooks);
}

nlohmann::ordered_json copy_weights_report(const Model& model, const data::Dataset& ds, const EvalOptions& opt,
                                           std::size_t max_videos) {
  if (!model.generator || !model.retriever || model.copy_mode == CopyMode::decoder_only) {
    throw std::invalid_argument("export-copy-weights: checkpoint has no copy mechanism");
  }
  const auto videos = ds.split(opt.split);
  if (videos.empty()) throw DataError("export-copy-weights: split '" + opt.split + "' is empty");
  const auto corpus = data::corpus_view(ds, opt.corpus, opt.corpus_seed);
  const EmbeddingIndex index = build_index(*model.retriever, model.vocab, corpus);
  const SentenceTable table(corpus, model.vocab);
  const bool exclude_own = opt.corpus.kind != data::CorpusSpec::Kind::oracle;
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < videos.size() && i < max_videos; ++i) {
    const auto& v = *videos[i];
    const RetrievedSet set = retrieve(*model.retriever, index, v, opt.topk, model.config.temperature, exclude_own);
    const auto p = probabilities(set);
    const auto sentences = table.tokens(set);
    GeneratorScorer scorer(*model.generator, v.appearance, v.motion, sentences, p, model.copy_mode);
    const Hypothesis h = beam_search(scorer, opt.beam, model.config.max_decode_len);
    auto entry = export_copy_weights(*model.generator, v.id, v.appearance, v.motion, sentences, p, h.tokens,
                                     model.vocab, model.copy_mode);
    nlohmann::ordered_json retrieved = nlohmann::ordered_json::array();
    for (std::size_t j = 0; j < set.items.size(); ++j) {
      const auto& it = set.items[j];
      retrieved.push_back({{"sentence_id", it.sentence_id},
                           {"video_id", it.video_id},
                           {"probability", it.probability},
                           {"text", data::join(model.vocab.decode(sentences[j]))}});
    }
    entry["caption"] = data::join(model.vocab.decode(h.tokens));
    entry["retrieved"] = std::move(retrieved);
    out.push_back(std::move(entry));
  }
  return out;
}

}  // namespace rcg
