#include "rcg/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "rcg/binary_io.hpp"
#include "rcg/hash.hpp"
#include "rcg/rng.hpp"

namespace rcg::data {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Tokens

Tokens tokenize(std::string_view text, std::size_t max_tokens) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 0x80 && std::isspace(u)) {
      flush();
    } else if (u < 0x80 && std::ispunct(u)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : ch);
    }
  }
  flush();
  if (out.size() > max_tokens) out.resize(max_tokens);
  if (out.empty()) throw std::invalid_argument("tokenize: no tokens in \"" + std::string(text) + "\"");
  return out;
}

std::string join(const Tokens& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s.push_back(' ');
    s += tokens[i];
  }
  return s;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : tokens_{"<pad>", "<bos>", "<eos>", "<unk>"} {
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = i;
}

Vocabulary Vocabulary::build(const std::vector<Tokens>& captions, std::size_t min_freq) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& c : captions) {
    for (const auto& tok : c) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [tok, n] : ranked) {
    if (n < std::max<std::size_t>(min_freq, 1) || v.ids_.count(tok)) continue;
    v.ids_[tok] = v.tokens_.size();
    v.tokens_.push_back(tok);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  if (tokens.size() < 4) throw DataError("vocabulary: fewer than 4 entries");
  for (std::size_t i = 0; i < 4; ++i) {
    if (tokens[i] != v.tokens_[i]) throw DataError("vocabulary: special token " + std::to_string(i) + " remapped");
  }
  for (std::size_t i = 4; i < tokens.size(); ++i) {
    if (!v.ids_.emplace(tokens[i], i).second) throw DataError("vocabulary: duplicate token '" + tokens[i] + "'");
    v.tokens_.push_back(tokens[i]);
  }
  return v;
}

std::size_t Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

TokenIds Vocabulary::encode(const Tokens& tokens) const {
  TokenIds ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Tokens Vocabulary::decode(const TokenIds& ids) const {
  Tokens out;
  for (std::size_t id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    out.push_back(token(id));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

const std::vector<std::uint64_t>& Splits::get(std::string_view name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

void Dataset::index() {
  by_id_.clear();
  for (std::size_t i = 0; i < videos.size(); ++i) {
    if (!by_id_.emplace(videos[i].id, i).second) {
      throw DatasetError(DatasetError::Kind::invalid_record, "duplicate video id " + std::to_string(videos[i].id));
    }
  }
}

const VideoRecord& Dataset::video(std::uint64_t id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw DatasetError(DatasetError::Kind::unknown_video, "unknown video id " + std::to_string(id));
  return videos[it->second];
}

std::vector<const VideoRecord*> Dataset::split(std::string_view name) const {
  std::vector<const VideoRecord*> out;
  for (std::uint64_t id : splits.get(name)) out.push_back(&video(id));
  return out;
}

std::vector<CorpusSentence> Dataset::sentences(std::string_view split_name) const {
  std::vector<CorpusSentence> out;
  for (const VideoRecord* v : split(split_name)) {
    for (std::size_t i = 0; i < v->captions.size(); ++i) {
      out.push_back(CorpusSentence{v->caption_ids[i], v->id, v->captions[i]});
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.sentence_id < b.sentence_id; });
  return out;
}

std::size_t Dataset::frames() const { return videos.empty() ? 0 : videos.front().appearance.dim(0); }
std::size_t Dataset::appearance_dim() const { return videos.empty() ? 0 : videos.front().appearance.dim(1); }
std::size_t Dataset::motion_dim() const { return videos.empty() ? 0 : videos.front().motion.dim(1); }

bool Dataset::relevant(std::uint64_t query, std::uint64_t owner) const {
  if (query == owner) return true;
  if (groups.empty()) return false;
  auto a = groups.find(query);
  auto b = groups.find(owner);
  return a != groups.end() && b != groups.end() && a->second == b->second;
}

// ---------------------------------------------------------------------------
// RCT1

void write_rct(std::ostream& os, const Tensor& t) {
  os.write("RCT1", 4);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (double v : t.data()) io::write_le<float>(os, static_cast<float>(v));
}

Tensor read_rct(std::istream& is, const std::string& what) {
  io::expect_magic(is, "RCT1", what);
  const auto rank = io::read_le<std::uint32_t>(is, what);
  if (rank > 8) throw DataError(what + ": implausible rank " + std::to_string(rank));
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(io::read_le<std::uint32_t>(is, what));
  Tensor t(shape);
  for (double& v : t.storage()) v = static_cast<double>(io::read_le<float>(is, what));
  if (!t.all_finite()) throw DataError(what + ": non-finite feature value");
  return t;
}

namespace {

std::filesystem::path feature_path(const std::filesystem::path& dir, std::uint64_t id) {
  return dir / "features" / (std::to_string(id) + ".rct");
}

json read_json_file(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw DatasetError(DatasetError::Kind::missing_file, "missing file " + p.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw DatasetError(DatasetError::Kind::malformed_json, "malformed JSON in " + p.string() + ": " + e.what());
  }
}

std::vector<std::uint64_t> id_list(const json& j, const char* key, const std::filesystem::path& p) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_array()) {
    throw DatasetError(DatasetError::Kind::malformed_json, p.string() + ": missing array \"" + key + "\"");
  }
  std::vector<std::uint64_t> out;
  for (const auto& v : j[key]) {
    if (!v.is_number_unsigned()) {
      throw DatasetError(DatasetError::Kind::malformed_json, p.string() + ": non-integer id in \"" + key + "\"");
    }
    out.push_back(v.get<std::uint64_t>());
  }
  return out;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");
  for (const VideoRecord& v : ds.videos) {
    std::ofstream os(feature_path(dir, v.id), std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + feature_path(dir, v.id).string());
    write_rct(os, v.appearance);
    write_rct(os, v.motion);
  }
  std::vector<std::tuple<std::uint64_t, std::uint64_t, const Tokens*>> lines;
  for (const VideoRecord& v : ds.videos) {
    for (std::size_t i = 0; i < v.captions.size(); ++i) lines.emplace_back(v.caption_ids[i], v.id, &v.captions[i]);
  }
  std::sort(lines.begin(), lines.end());
  {
    std::ofstream os(dir / "captions.jsonl", std::ios::trunc);
    for (const auto& [sid, vid, toks] : lines) {
      json j;
      j["video_id"] = vid;
      j["caption"] = join(*toks);
      os << j.dump() << '\n';
    }
  }
  {
    json j;
    j["train"] = ds.splits.train;
    j["val"] = ds.splits.val;
    j["test"] = ds.splits.test;
    std::ofstream os(dir / "splits.json", std::ios::trunc);
    os << j.dump() << '\n';
  }
  if (!ds.groups.empty()) {
    json j = json::object();
    for (const auto& [vid, g] : ds.groups) j[std::to_string(vid)] = g;
    std::ofstream os(dir / "groups.json", std::ios::trunc);
    os << j.dump() << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  Dataset ds;
  const fs::path splits_path = dir / "splits.json";
  const json splits = read_json_file(splits_path);
  ds.splits.train = id_list(splits, "train", splits_path);
  ds.splits.val = id_list(splits, "val", splits_path);
  ds.splits.test = id_list(splits, "test", splits_path);

  std::set<std::uint64_t> ids;
  for (const auto* list : {&ds.splits.train, &ds.splits.val, &ds.splits.test}) {
    for (std::uint64_t id : *list) {
      if (!ids.insert(id).second) {
        throw DatasetError(DatasetError::Kind::invalid_record, "video " + std::to_string(id) + " listed in two splits");
      }
    }
  }
  std::map<std::uint64_t, VideoRecord> records;
  for (std::uint64_t id : ids) records[id].id = id;

  const fs::path cap_path = dir / "captions.jsonl";
  std::ifstream cap(cap_path);
  if (!cap) throw DatasetError(DatasetError::Kind::missing_file, "missing file " + cap_path.string());
  std::string line;
  std::uint64_t sentence_id = 0;
  std::size_t line_no = 0;
  while (std::getline(cap, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DatasetError(DatasetError::Kind::malformed_json,
                         cap_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("video_id") || !j["video_id"].is_number_unsigned() || !j.contains("caption") ||
        !j["caption"].is_string()) {
      throw DatasetError(DatasetError::Kind::malformed_json,
                         cap_path.string() + ":" + std::to_string(line_no) + ": expected {\"video_id\", \"caption\"}");
    }
    const auto vid = j["video_id"].get<std::uint64_t>();
    auto it = records.find(vid);
    if (it == records.end()) {
      throw DatasetError(DatasetError::Kind::unknown_video,
                         cap_path.string() + ":" + std::to_string(line_no) + ": unknown video_id " + std::to_string(vid));
    }
    Tokens toks;
    try {
      toks = tokenize(j["caption"].get<std::string>());
    } catch (const std::invalid_argument&) {
      throw DatasetError(DatasetError::Kind::invalid_record,
                         cap_path.string() + ":" + std::to_string(line_no) + ": empty caption");
    }
    it->second.captions.push_back(std::move(toks));
    it->second.caption_ids.push_back(sentence_id++);
  }

  std::optional<std::size_t> frames, da, dm;
  for (auto& [id, rec] : records) {
    const fs::path fp = feature_path(dir, id);
    std::ifstream is(fp, std::ios::binary);
    if (!is) throw DatasetError(DatasetError::Kind::missing_file, "missing feature file " + fp.string());
    try {
      rec.appearance = read_rct(is, fp.string());
      rec.motion = read_rct(is, fp.string());
    } catch (const DatasetError&) {
      throw;
    } catch (const DataError& e) {
      throw DatasetError(DatasetError::Kind::bad_feature_file, e.what());
    }
    if (rec.appearance.rank() != 2 || rec.motion.rank() != 2 || rec.appearance.dim(0) != rec.motion.dim(0) ||
        rec.appearance.dim(0) == 0) {
      throw DatasetError(DatasetError::Kind::inconsistent_dims,
                         fp.string() + ": expected (K, d_a) and (K, d_m) blocks with equal K >= 1");
    }
    if (!frames) {
      frames = rec.appearance.dim(0);
      da = rec.appearance.dim(1);
      dm = rec.motion.dim(1);
    } else if (*frames != rec.appearance.dim(0) || *da != rec.appearance.dim(1) || *dm != rec.motion.dim(1)) {
      throw DatasetError(DatasetError::Kind::inconsistent_dims,
                         fp.string() + ": feature shape differs from the rest of the dataset");
    }
    if (rec.captions.empty()) {
      throw DatasetError(DatasetError::Kind::invalid_record, "video " + std::to_string(id) + " has no captions");
    }
  }

  const fs::path groups_path = dir / "groups.json";
  if (fs::exists(groups_path)) {
    const json g = read_json_file(groups_path);
    if (!g.is_object()) throw DatasetError(DatasetError::Kind::malformed_json, groups_path.string() + ": expected object");
    for (const auto& [k, v] : g.items()) {
      if (!v.is_number_unsigned()) {
        throw DatasetError(DatasetError::Kind::malformed_json, groups_path.string() + ": non-integer group");
      }
      ds.groups[std::stoull(k)] = v.get<std::uint32_t>();
    }
  }

  for (auto& [id, rec] : records) ds.videos.push_back(std::move(rec));
  ds.index();
  return ds;
}

std::string dataset_checksum(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  }
  std::sort(files.begin(), files.end());
  Sha256 h;
  for (const auto& rel : files) {
    std::ifstream is(dir / rel, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    const std::string name = rel.generic_string();
    h.update(name);
    h.update(std::string_view("\0", 1));
    const std::string body = ss.str();
    h.update_pod(static_cast<std::uint64_t>(body.size()));
    h.update(body);
  }
  return to_hex(h.finish());
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

class WordFactory {
 public:
  explicit WordFactory(Rng rng) : rng_(rng) {
    for (const char* w : {"a", "the", "is", "in", "with", "and", "near", "there", "that", "slowly", "again", "today",
                          "moving", "around", "stands", "still", "turns", "to", "side", "looks", "away", "while",
                          "of", "on"}) {
      used_.insert(w);
    }
  }

  std::string make() {
    static constexpr char kCons[] = "bdfgklmnprstvz";
    static constexpr char kVow[] = "aeiou";
    for (;;) {
      const std::size_t syl = 2 + rng_.below(2);
      std::string w;
      for (std::size_t i = 0; i < syl; ++i) {
        w.push_back(kCons[rng_.below(sizeof(kCons) - 1)]);
        w.push_back(kVow[rng_.below(sizeof(kVow) - 1)]);
      }
      if (used_.insert(w).second) return w;
    }
  }

 private:
  Rng rng_;
  std::set<std::string> used_;
};

struct ClusterLexicon {
  std::string noun;
  std::vector<Tokens> idioms;
  std::vector<std::string> slots;
};

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.clusters < 2) throw std::invalid_argument("synthetic: need at least 2 clusters");
  if (spec.videos_per_cluster < spec.val_per_cluster + spec.test_per_cluster + 1) {
    throw std::invalid_argument("synthetic: videos_per_cluster leaves no training videos");
  }
  if (spec.frames == 0 || spec.appearance_dim == 0 || spec.motion_dim == 0 || spec.captions_per_video == 0) {
    throw std::invalid_argument("synthetic: frames, feature dims and captions per video must be positive");
  }
  if (spec.phrases_per_cluster == 0 || spec.slot_words_per_cluster == 0) {
    throw std::invalid_argument("synthetic: clusters need at least one idiom and one slot word");
  }
  if (spec.noise < 0.0 || spec.phrase_overlap < 0.0 || spec.phrase_overlap > 1.0) {
    throw std::invalid_argument("synthetic: noise must be >= 0 and phrase_overlap in [0, 1]");
  }
  if (spec.min_caption_len > spec.max_caption_len || spec.max_caption_len > kMaxTokens) {
    throw std::invalid_argument("synthetic: invalid caption length bounds");
  }

  WordFactory words(Rng::derive(spec.seed, 1));
  std::vector<std::string> places;
  for (int i = 0; i < 6; ++i) places.push_back(words.make());
  const std::vector<Tokens> generic_phrases = {
      {"is", "moving", "around"}, {"stands", "still"}, {"turns", "to", "the", "side"}, {"looks", "away"}};
  std::vector<ClusterLexicon> lex(spec.clusters);
  for (auto& l : lex) {
    l.noun = words.make();
    for (std::size_t p = 0; p < spec.phrases_per_cluster; ++p) l.idioms.push_back({words.make(), words.make(), words.make()});
    for (std::size_t s = 0; s < spec.slot_words_per_cluster; ++s) l.slots.push_back(words.make());
  }

  Rng feat_rng = Rng::derive(spec.seed, 2);
  std::vector<Tensor> proto_a, proto_m;
  for (std::size_t c = 0; c < spec.clusters; ++c) {
    Tensor a(Shape{spec.appearance_dim});
    Tensor m(Shape{spec.motion_dim});
    for (double& v : a.storage()) v = feat_rng.normal();
    for (double& v : m.storage()) v = feat_rng.normal();
    proto_a.push_back(std::move(a));
    proto_m.push_back(std::move(m));
  }

  auto make_frames = [&](const Tensor& proto) {
    const std::size_t d = proto.numel();
    std::vector<double> offset(d);
    for (double& v : offset) v = spec.noise * feat_rng.normal();
    Tensor out(Shape{spec.frames, d});
    for (std::size_t k = 0; k < spec.frames; ++k) {
      for (std::size_t i = 0; i < d; ++i) {
        const double x = proto[i] + offset[i] + 0.5 * spec.noise * feat_rng.normal();
        out.at(k, i) = static_cast<double>(static_cast<float>(x));
      }
    }
    return out;
  };

  Rng cap_rng = Rng::derive(spec.seed, 3);
  const std::vector<std::string> fillers = {"slowly", "again", "today"};
  auto make_caption = [&](const ClusterLexicon& l) {
    const Tokens& idiom = cap_rng.uniform() < spec.phrase_overlap ? l.idioms[cap_rng.below(l.idioms.size())]
                                                                  : generic_phrases[cap_rng.below(generic_phrases.size())];
    const std::string& slot = l.slots[cap_rng.below(l.slots.size())];
    const std::string& place = places[cap_rng.below(places.size())];
    Tokens t;
    auto put = [&](std::initializer_list<std::string> ws) { t.insert(t.end(), ws.begin(), ws.end()); };
    auto put_idiom = [&] { t.insert(t.end(), idiom.begin(), idiom.end()); };
    switch (cap_rng.below(5)) {
      case 0:
        put({"a", l.noun});
        put_idiom();
        put({"with", "the", slot});
        break;
      case 1:
        put({"the", l.noun});
        put_idiom();
        put({"in", "the", place});
        break;
      case 2:
        put({"in", "the", place, "a", l.noun});
        put_idiom();
        put({"near", "a", slot});
        break;
      case 3:
        put({"a", slot, "and", "a", l.noun});
        put_idiom();
        break;
      default:
        put({"there", "is", "a", l.noun, "that"});
        put_idiom();
        put({"with", "a", slot, "in", "the", place});
        break;
    }
    while (t.size() < spec.min_caption_len) t.push_back(fillers[cap_rng.below(fillers.size())]);
    if (t.size() > spec.max_caption_len) t.resize(spec.max_caption_len);
    return t;
  };

  Dataset ds;
  std::uint64_t sentence_id = 0;
  for (std::size_t c = 0; c < spec.clusters; ++c) {
    for (std::size_t j = 0; j < spec.videos_per_cluster; ++j) {
      VideoRecord v;
      v.id = static_cast<std::uint64_t>(c * spec.videos_per_cluster + j + 1);
      v.appearance = make_frames(proto_a[c]);
      v.motion = make_frames(proto_m[c]);
      for (std::size_t k = 0; k < spec.captions_per_video; ++k) {
        v.captions.push_back(make_caption(lex[c]));
        v.caption_ids.push_back(sentence_id++);
      }
      ds.groups[v.id] = static_cast<std::uint32_t>(c);
      ds.videos.push_back(std::move(v));
    }
  }

  Rng split_rng = Rng::derive(spec.seed, 4);
  for (std::size_t c = 0; c < spec.clusters; ++c) {
    std::vector<std::uint64_t> members;
    for (std::size_t j = 0; j < spec.videos_per_cluster; ++j) {
      members.push_back(static_cast<std::uint64_t>(c * spec.videos_per_cluster + j + 1));
    }
    split_rng.shuffle(members);
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (i < spec.test_per_cluster) ds.splits.test.push_back(members[i]);
      else if (i < spec.test_per_cluster + spec.val_per_cluster) ds.splits.val.push_back(members[i]);
      else ds.splits.train.push_back(members[i]);
    }
  }
  std::sort(ds.splits.train.begin(), ds.splits.train.end());
  std::sort(ds.splits.val.begin(), ds.splits.val.end());
  std::sort(ds.splits.test.begin(), ds.splits.test.end());
  ds.index();
  return ds;
}

// ---------------------------------------------------------------------------
// Corpus views

CorpusSpec CorpusSpec::parse(std::string_view text) {
  CorpusSpec s;
  if (text == "train") return s;
  if (text == "oracle") {
    s.kind = Kind::oracle;
    return s;
  }
  constexpr std::string_view prefix = "fraction:";
  if (text.substr(0, prefix.size()) == prefix) {
    const std::string num(text.substr(prefix.size()));
    try {
      std::size_t used = 0;
      s.fraction = std::stod(num, &used);
      if (used != num.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw std::invalid_argument("corpus: bad fraction '" + num + "'");
    }
    if (!(s.fraction > 0.0 && s.fraction <= 1.0)) throw std::invalid_argument("corpus: fraction must be in (0, 1]");
    return s;
  }
  throw std::invalid_argument("corpus: expected train, fraction:F or oracle, got '" + std::string(text) + "'");
}

std::string CorpusSpec::to_string() const {
  if (kind == Kind::oracle) return "oracle";
  if (fraction == 1.0) return "train";
  std::ostringstream os;
  os << "fraction:" << fraction;
  return os.str();
}

std::vector<CorpusSentence> corpus_view(const Dataset& ds, const CorpusSpec& spec, std::uint64_t seed) {
  std::vector<CorpusSentence> train = ds.sentences("train");
  if (spec.kind == CorpusSpec::Kind::oracle) {
    auto test = ds.sentences("test");
    train.insert(train.end(), test.begin(), test.end());
    std::sort(train.begin(), train.end(), [](const auto& a, const auto& b) { return a.sentence_id < b.sentence_id; });
    if (train.empty()) throw std::invalid_argument("corpus: empty oracle view");
    return train;
  }
  if (!(spec.fraction > 0.0 && spec.fraction <= 1.0)) throw std::invalid_argument("corpus: fraction must be in (0, 1]");
  const auto count = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(train.size())));
  if (count == 0) throw std::invalid_argument("corpus: fraction selects no sentences");
  if (count >= train.size()) return train;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng::derive(seed, 0xC0A905);
  rng.shuffle(order);
  order.resize(count);
  std::sort(order.begin(), order.end());
  std::vector<CorpusSentence> out;
  out.reserve(count);
  for (std::size_t i : order) out.push_back(std::move(train[i]));
  return out;
}

}  // namespace rcg::data
