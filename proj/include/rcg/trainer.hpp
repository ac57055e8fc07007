#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rcg/data.hpp"
#include "rcg/generator.hpp"
#include "rcg/index.hpp"
#include "rcg/optim.hpp"
#include "rcg/retriever.hpp"

namespace rcg {

enum class TrainMode {
  retriever_pretrain,
  rcg_fixed,
  rcg_joint,
  baseline,  // decoder only, no retrieval
};

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(std::string_view text);

struct TrainConfig {
  TrainMode mode = TrainMode::rcg_fixed;

  std::size_t word_dim = 300;
  std::size_t retriever_dim = 1024;
  std::size_t hidden = 1024;
  std::size_t feat_dim = 512;
  std::size_t att_dim = 512;
  std::size_t copy_hidden = 512;
  bool share_copy_embedding = false;
  bool gate_bias = false;
  std::size_t min_freq = 1;

  std::size_t topk_train = 3;
  std::size_t topk_test = 10;
  double temperature = 1.0;
  double margin = 0.2;
  double lr = 2e-4;
  double lr_decay = 0.5;
  int decay_every = 3;
  double clip_norm = 5.0;
  std::size_t retriever_batch = 128;
  std::size_t generator_batch = 64;
  int retriever_epochs = 10;
  int epochs = 10;
  int refresh_every = 1;  // epochs between index rebuilds in joint mode; 0 never
  double ret_weight = 1.0;
  double gen_weight = 1.0;
  std::size_t captions_per_epoch = 0;  // captions sampled per video each epoch; 0 uses all
  std::size_t beam = 3;
  std::size_t max_decode_len = 20;
  std::uint64_t seed = 1;

  nlohmann::ordered_json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
  static TrainConfig from_json(const nlohmann::json& j);
  /// SHA-256 of the canonical JSON form, hex encoded.
  std::string hash() const;
  void validate() const;

  RetrieverConfig retriever_config(std::size_t vocab, std::size_t d_a, std::size_t d_m) const;
  GeneratorConfig generator_config(std::size_t vocab, std::size_t d_a, std::size_t d_m) const;
};

/// Everything a checkpoint holds: vocabulary, models, optimizer state and history.
struct Model {
  TrainConfig config;
  data::Vocabulary vocab;
  std::unique_ptr<Retriever> retriever;
  std::unique_ptr<Generator> generator;
  CopyMode copy_mode = CopyMode::copy;
  Adam retriever_opt;
  Adam generator_opt;
  int epoch = 0;  // epochs completed
  int best_epoch = 0;
  Digest index_fingerprint{};  // corpus index the generator was trained against
  nlohmann::ordered_json history = nlohmann::ordered_json::array();

  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);
};

/// Receives every retrieval made for a query video, for audit.
using RetrievalHook = std::function<void(std::uint64_t query_video, const RetrievedSet& result)>;
using LogFn = std::function<void(const std::string&)>;

struct TrainHooks {
  LogFn log;
  RetrievalHook on_retrieval;
};

data::Vocabulary build_vocabulary(const data::Dataset& ds, std::size_t min_freq);

/// Untrained retriever over the dataset's training vocabulary.
Model init_retriever(const TrainConfig& cfg, const data::Dataset& ds);

/// Contrastive pretraining; keeps the epoch with the best validation R@1.
Model pretrain_retriever(const TrainConfig& cfg, const data::Dataset& ds, const TrainHooks& hooks = {});

/// Video-to-text retrieval metrics of the split's videos against the split's sentences.
RetrievalMetrics retrieval_eval(const Retriever& r, const data::Vocabulary& vocab, const data::Dataset& ds,
                                std::string_view split);

/// Trains a caption generator. Fixed and joint modes start from `retriever`
/// (required); `index`, when given, must match that retriever and the
/// training corpus. Keeps the epoch with the best validation CIDEr.
Model train_rcg(const TrainConfig& cfg, const data::Dataset& ds, const Model* retriever,
                const EmbeddingIndex* index = nullptr, const TrainHooks& hooks = {});

struct CaptionResult {
  std::uint64_t video_id = 0;
  data::Tokens caption;
  double score = 0.0;
  bool forced = false;
  std::vector<std::uint64_t> retrieved;
};

struct EvalOptions {
  std::string split = "test";
  std::size_t topk = 10;
  std::size_t beam = 3;
  data::CorpusSpec corpus;
  std::uint64_t corpus_seed = 1;
};

struct EvalResult {
  std::vector<CaptionResult> captions;
  nlohmann::ordered_json report;
};

/// Beam-search captions for a split and score them.
EvalResult evaluate(const Model& model, const data::Dataset& ds, const EvalOptions& opt, const TrainHooks& hooks = {});

/// Copy gates and pointer attention while each split video decodes its own
/// beam-search caption; at most `max_videos` entries.
nlohmann::ordered_json copy_weights_report(const Model& model, const data::Dataset& ds, const EvalOptions& opt,
                                           std::size_t max_videos);

/// Per-video top-k retrieval against an index, excluding the video's own sentences.
RetrievedSet retrieve(const Retriever& r, const EmbeddingIndex& index, const data::VideoRecord& v, std::size_t k,
                      double temperature, bool exclude_own = true);

}  // namespace rcg
