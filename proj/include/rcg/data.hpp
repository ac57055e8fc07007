#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rcg/tensor.hpp"

namespace rcg::data {

inline constexpr std::size_t kMaxTokens = 40;

inline constexpr std::size_t kPad = 0;
inline constexpr std::size_t kBos = 1;
inline constexpr std::size_t kEos = 2;
inline constexpr std::size_t kUnk = 3;

using Tokens = std::vector<std::string>;
using TokenIds = std::vector<std::size_t>;

/// Lowercases ASCII, splits on whitespace and around ASCII punctuation, and
/// truncates to max_tokens. Throws std::invalid_argument if nothing remains.
Tokens tokenize(std::string_view text, std::size_t max_tokens = kMaxTokens);
std::string join(const Tokens& tokens);

/// Token <-> id bijection with fixed specials PAD=0, BOS=1, EOS=2, UNK=3.
class Vocabulary {
 public:
  Vocabulary();

  /// Tokens with count >= min_freq, by descending count then ascending text.
  static Vocabulary build(const std::vector<Tokens>& captions, std::size_t min_freq = 1);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(std::size_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenIds encode(const Tokens& tokens) const;
  /// Decodes ids, dropping PAD/BOS and stopping at the first EOS.
  Tokens decode(const TokenIds& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

struct VideoRecord {
  std::uint64_t id = 0;
  Tensor appearance;  // (K, d_a)
  Tensor motion;      // (K, d_m)
  std::vector<Tokens> captions;
  std::vector<std::uint64_t> caption_ids;  // parallel to captions
};

struct Splits {
  std::vector<std::uint64_t> train;
  std::vector<std::uint64_t> val;
  std::vector<std::uint64_t> test;

  const std::vector<std::uint64_t>& get(std::string_view name) const;
};

/// A retrievable sentence and the video it belongs to.
struct CorpusSentence {
  std::uint64_t sentence_id = 0;
  std::uint64_t video_id = 0;
  Tokens tokens;
};

class Dataset {
 public:
  std::vector<VideoRecord> videos;
  Splits splits;
  /// Optional semantic group per video (synthetic clusters). When present,
  /// retrieval ground truth is "same group" instead of "same video".
  std::map<std::uint64_t, std::uint32_t> groups;

  void index();
  const VideoRecord& video(std::uint64_t id) const;
  bool has_video(std::uint64_t id) const { return by_id_.count(id) != 0; }
  std::vector<const VideoRecord*> split(std::string_view name) const;
  std::vector<CorpusSentence> sentences(std::string_view split_name) const;
  std::size_t frames() const;
  std::size_t appearance_dim() const;
  std::size_t motion_dim() const;
  /// Whether a sentence of video `owner` is a correct retrieval target for `query`.
  bool relevant(std::uint64_t query, std::uint64_t owner) const;

 private:
  std::unordered_map<std::uint64_t, std::size_t> by_id_;
};

/// Failure categories of dataset loading.
class DatasetError : public DataError {
 public:
  enum class Kind { missing_file, bad_feature_file, inconsistent_dims, malformed_json, unknown_video, invalid_record };
  DatasetError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// "RCT1" feature container: magic | u32 rank | u32 dims[rank] | f32 LE payload.
void write_rct(std::ostream& os, const Tensor& t);
Tensor read_rct(std::istream& is, const std::string& what);

/// Layout: features/<video_id>.rct (appearance block then motion block),
/// captions.jsonl, splits.json, and optionally groups.json.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Order-independent content hash over the files save_dataset() writes.
std::string dataset_checksum(const std::filesystem::path& dir);

struct SyntheticSpec {
  std::size_t clusters = 64;
  std::size_t videos_per_cluster = 16;
  std::size_t captions_per_video = 5;
  std::size_t frames = 8;
  std::size_t appearance_dim = 64;
  std::size_t motion_dim = 64;
  double noise = 0.2;                 // per-video offset std-dev; frames jitter at half of it
  std::size_t phrases_per_cluster = 3;  // 3-token idioms per cluster
  std::size_t slot_words_per_cluster = 3;
  double phrase_overlap = 0.85;       // chance a caption uses a cluster idiom
  std::size_t min_caption_len = 6;
  std::size_t max_caption_len = 16;
  std::size_t val_per_cluster = 2;
  std::size_t test_per_cluster = 2;
  std::uint64_t seed = 7;
};

/// Clustered videos with cluster-specific phrases in their captions.
Dataset generate_synthetic(const SyntheticSpec& spec);

struct CorpusSpec {
  enum class Kind { train_fraction, oracle } kind = Kind::train_fraction;
  double fraction = 1.0;

  static CorpusSpec parse(std::string_view text);  // "train", "fraction:F", "oracle"
  std::string to_string() const;
};

/// Retrieval corpus: a seeded uniform subsample of training sentences, or
/// training plus test sentences for the oracle condition.
std::vector<CorpusSentence> corpus_view(const Dataset& ds, const CorpusSpec& spec, std::uint64_t seed);

}  // namespace rcg::data
