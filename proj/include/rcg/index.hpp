#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "json.hpp"
#include "rcg/data.hpp"
#include "rcg/hash.hpp"
#include "rcg/retriever.hpp"

namespace rcg {

/// Unit-normalized sentence embeddings with ownership metadata.
struct EmbeddingIndex {
  Tensor embeddings;  // (N, d)
  std::vector<std::uint64_t> sentence_ids;
  std::vector<std::uint64_t> video_ids;
  Digest fingerprint{};

  std::size_t size() const { return sentence_ids.size(); }
  std::size_t dim() const { return embeddings.cols(); }

  // "RCGI1" | u32 N | u32 d | u64 ids[N] | u64 video_ids[N] | f32 emb[N*d] | fingerprint[32]
  void save(const std::filesystem::path& path) const;
  static EmbeddingIndex load(const std::filesystem::path& path);
};

/// Hash of the sentence list together with the encoder fingerprint.
Digest corpus_fingerprint(const Digest& encoder, const std::vector<data::CorpusSentence>& corpus);

EmbeddingIndex build_index(const Retriever& retriever, const data::Vocabulary& vocab,
                           const std::vector<data::CorpusSentence>& corpus);

struct RetrievedItem {
  std::uint64_t sentence_id = 0;
  std::uint64_t video_id = 0;
  std::size_t row = 0;  // position in the index
  double similarity = 0.0;
  double probability = 0.0;
};

struct RetrievedSet {
  std::uint64_t query = 0;
  std::vector<RetrievedItem> items;
};

/// Softmax of similarity / temperature.
std::vector<double> retrieval_probs(std::span<const double> sims, double temperature = 1.0);

/// Scores every row against normalized video embeddings by e_w . (e_m + e_a) / 2.
std::vector<double> score_all(const EmbeddingIndex& index, std::span<const double> motion,
                              std::span<const double> appearance);

/// Exact top-k by descending score, ties by ascending sentence id. Sentences
/// owned by `exclude_video` are removed before ranking.
RetrievedSet topk_search(const EmbeddingIndex& index, std::span<const double> motion,
                         std::span<const double> appearance, std::size_t k,
                         std::optional<std::uint64_t> exclude_video, double temperature = 1.0,
                         std::uint64_t query = 0);

/// Same selection rule on precomputed scores; returns row positions.
std::vector<std::size_t> topk_rows(std::span<const double> scores, std::span<const std::uint64_t> sentence_ids,
                                   std::span<const std::uint64_t> video_ids, std::size_t k,
                                   std::optional<std::uint64_t> exclude_video);

struct RetrievalMetrics {
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
  double medr = 0.0;
  double mnr = 0.0;
  std::size_t queries = 0;

  nlohmann::ordered_json to_json() const;
};

/// ranked[q] lists candidate ids best first; correct[q] holds the ids that
/// count as hits. A query's rank is its best (1-based) hit position.
RetrievalMetrics retrieval_metrics(const std::vector<std::vector<std::uint64_t>>& ranked,
                                   const std::vector<std::set<std::uint64_t>>& correct);
RetrievalMetrics summarize_ranks(std::vector<std::size_t> ranks);

}  // namespace rcg
