#include "rcg/index.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "rcg/binary_io.hpp"

namespace rcg {

void EmbeddingIndex::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write index " + path.string());
  os.write("RCGI1", 5);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(size()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dim()));
  for (auto id : sentence_ids) io::write_le<std::uint64_t>(os, id);
  for (auto id : video_ids) io::write_le<std::uint64_t>(os, id);
  for (double v : embeddings.data()) io::write_le<float>(os, static_cast<float>(v));
  os.write(reinterpret_cast<const char*>(fingerprint.data()), static_cast<std::streamsize>(fingerprint.size()));
  if (!os) throw DataError("failed writing index " + path.string());
}

EmbeddingIndex EmbeddingIndex::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  const std::string what = path.string();
  if (!is) throw DataError("missing index file " + what);
  io::expect_magic(is, "RCGI1", what);
  const auto n = io::read_le<std::uint32_t>(is, what);
  const auto d = io::read_le<std::uint32_t>(is, what);
  EmbeddingIndex idx;
  idx.sentence_ids.resize(n);
  idx.video_ids.resize(n);
  for (auto& id : idx.sentence_ids) id = io::read_le<std::uint64_t>(is, what);
  for (auto& id : idx.video_ids) id = io::read_le<std::uint64_t>(is, what);
  idx.embeddings = Tensor(Shape{n, d});
  for (double& v : idx.embeddings.storage()) v = io::read_le<float>(is, what);
  if (!is.read(reinterpret_cast<char*>(idx.fingerprint.data()), 32)) throw DataError(what + ": truncated fingerprint");
  if (!idx.embeddings.all_finite()) throw DataError(what + ": non-finite embedding");
  return idx;
}

Digest corpus_fingerprint(const Digest& encoder, const std::vector<data::CorpusSentence>& corpus) {
  Sha256 h;
  h.update(encoder.data(), encoder.size());
  h.update_pod(static_cast<std::uint64_t>(corpus.size()));
  for (const auto& s : corpus) {
    h.update_pod(s.sentence_id);
    h.update_pod(s.video_id);
    h.update(data::join(s.tokens));
    h.update(std::string_view("\n", 1));
  }
  return h.finish();
}

EmbeddingIndex build_index(const Retriever& retriever, const data::Vocabulary& vocab,
                           const std::vector<data::CorpusSentence>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("build_index: empty corpus");
  const std::size_t d = retriever.config().embed_dim;
  EmbeddingIndex idx;
  idx.embeddings = Tensor(Shape{corpus.size(), d});
  std::set<std::uint64_t> seen;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& s = corpus[i];
    if (!seen.insert(s.sentence_id).second) {
      throw std::invalid_argument("build_index: duplicate sentence id " + std::to_string(s.sentence_id));
    }
    Tensor e;
    try {
      e = retriever.sentence_vector(vocab.encode(s.tokens));
    } catch (const std::exception& ex) {
      throw std::runtime_error("build_index: sentence " + std::to_string(s.sentence_id) + ": " + ex.what());
    }
    // Stored at f32 precision so a saved and reloaded index is bit-identical.
    std::transform(e.data().begin(), e.data().end(), idx.embeddings.row(i).begin(),
                   [](double v) { return static_cast<double>(static_cast<float>(v)); });
    idx.sentence_ids.push_back(s.sentence_id);
    idx.video_ids.push_back(s.video_id);
  }
  idx.fingerprint = corpus_fingerprint(retriever.fingerprint(), corpus);
  return idx;
}

std::vector<double> retrieval_probs(std::span<const double> sims, double temperature) {
  if (sims.empty()) throw std::invalid_argument("retrieval_probs: empty similarity list");
  if (!(temperature > 0.0)) throw std::invalid_argument("retrieval_probs: temperature must be positive");
  const double mx = *std::max_element(sims.begin(), sims.end());
  std::vector<double> p(sims.size());
  double z = 0.0;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    p[i] = std::exp((sims[i] - mx) / temperature);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

std::vector<double> score_all(const EmbeddingIndex& index, std::span<const double> motion,
                              std::span<const double> appearance) {
  const std::size_t d = index.dim();
  if (motion.size() != d || appearance.size() != d) {
    throw ShapeError("score_all: query dims " + std::to_string(motion.size()) + "/" +
                     std::to_string(appearance.size()) + " vs index dim " + std::to_string(d));
  }
  Eigen::VectorXd q(d);
  for (std::size_t i = 0; i < d; ++i) q[static_cast<Eigen::Index>(i)] = 0.5 * (motion[i] + appearance[i]);
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> e(index.embeddings.data().data(), static_cast<Eigen::Index>(index.size()),
                             static_cast<Eigen::Index>(d));
  Eigen::VectorXd s = e * q;
  return std::vector<double>(s.data(), s.data() + s.size());
}

std::vector<std::size_t> topk_rows(std::span<const double> scores, std::span<const std::uint64_t> sentence_ids,
                                   std::span<const std::uint64_t> video_ids, std::size_t k,
                                   std::optional<std::uint64_t> exclude_video) {
  if (k == 0) throw std::invalid_argument("topk_search: k must be >= 1");
  std::vector<std::size_t> rows;
  rows.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!exclude_video || video_ids[i] != *exclude_video) rows.push_back(i);
  }
  if (k > rows.size()) {
    throw std::invalid_argument("topk_search: k=" + std::to_string(k) + " exceeds the " + std::to_string(rows.size()) +
                                " eligible sentences");
  }
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return sentence_ids[a] < sentence_ids[b];
  };
  std::partial_sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(k), rows.end(), better);
  rows.resize(k);
  return rows;
}

RetrievedSet topk_search(const EmbeddingIndex& index, std::span<const double> motion,
                         std::span<const double> appearance, std::size_t k,
                         std::optional<std::uint64_t> exclude_video, double temperature, std::uint64_t query) {
  const std::vector<double> scores = score_all(index, motion, appearance);
  const auto rows = topk_rows(scores, index.sentence_ids, index.video_ids, k, exclude_video);
  RetrievedSet out;
  out.query = query;
  std::vector<double> sims;
  for (std::size_t r : rows) {
    out.items.push_back({index.sentence_ids[r], index.video_ids[r], r, scores[r], 0.0});
    sims.push_back(scores[r]);
  }
  const auto p = retrieval_probs(sims, temperature);
  for (std::size_t i = 0; i < p.size(); ++i) out.items[i].probability = p[i];
  return out;
}

nlohmann::ordered_json RetrievalMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["r_at"] = {{"1", r1}, {"5", r5}, {"10", r10}};
  j["medr"] = medr;
  j["mnr"] = mnr;
  j["queries"] = queries;
  return j;
}

RetrievalMetrics summarize_ranks(std::vector<std::size_t> ranks) {
  if (ranks.empty()) throw std::invalid_argument("retrieval_metrics: no queries");
  RetrievalMetrics m;
  m.queries = ranks.size();
  const double n = static_cast<double>(ranks.size());
  double total = 0.0;
  for (std::size_t r : ranks) {
    m.r1 += r <= 1;
    m.r5 += r <= 5;
    m.r10 += r <= 10;
    total += static_cast<double>(r);
  }
  m.r1 /= n;
  m.r5 /= n;
  m.r10 /= n;
  m.mnr = total / n;
  std::sort(ranks.begin(), ranks.end());
  m.medr = static_cast<double>(ranks[(ranks.size() - 1) / 2]);
  return m;
}

RetrievalMetrics retrieval_metrics(const std::vector<std::vector<std::uint64_t>>& ranked,
                                   const std::vector<std::set<std::uint64_t>>& correct) {
  if (ranked.size() != correct.size()) throw std::invalid_argument("retrieval_metrics: ranked/correct size mismatch");
  std::vector<std::size_t> ranks;
  for (std::size_t q = 0; q < ranked.size(); ++q) {
    const auto& list = ranked[q];
    auto it = std::find_if(list.begin(), list.end(), [&](std::uint64_t id) { return correct[q].count(id) != 0; });
    if (it == list.end()) {
      throw std::invalid_argument("retrieval_metrics: query " + std::to_string(q) + " has no correct target");
    }
    ranks.push_back(static_cast<std::size_t>(it - list.begin()) + 1);
  }
  return summarize_ranks(std::move(ranks));
}

}  // namespace rcg
