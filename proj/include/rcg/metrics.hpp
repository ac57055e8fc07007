#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "rcg/data.hpp"

namespace rcg {

struct EvalPair {
  std::uint64_t video_id = 0;
  data::Tokens hypothesis;
  std::vector<data::Tokens> references;
};

struct BleuStats {
  std::array<double, 4> precisions{};  // clipped n-gram precisions
  double brevity_penalty = 0.0;
  double hyp_length = 0.0;
  double ref_length = 0.0;
  double score = 0.0;
};

/// Corpus BLEU-4: clipped counts summed over pairs, closest reference length
/// for the brevity penalty, no smoothing.
BleuStats bleu4_stats(std::span<const EvalPair> pairs);
double bleu4(std::span<const EvalPair> pairs);

/// Mean over pairs of the best LCS-based F-measure (beta = 1.2) over references.
double rouge_l(std::span<const EvalPair> pairs, double beta = 1.2);

/// CIDEr-D per pair, scaled by 10. Needs at least two distinct videos.
std::vector<double> cider_scores(std::span<const EvalPair> pairs, double sigma = 6.0);
double cider(std::span<const EvalPair> pairs, double sigma = 6.0);

/// {"bleu4", "rougeL", "cider", "pairs"}
nlohmann::ordered_json metric_report(std::span<const EvalPair> pairs);

}  // namespace rcg
