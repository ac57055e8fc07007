#include "rcg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace rcg {

namespace {

using NGram = std::vector<std::string>;
using Counts = std::map<NGram, double>;

Counts ngram_counts(const data::Tokens& toks, std::size_t n) {
  Counts c;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) c[NGram(toks.begin() + i, toks.begin() + i + n)] += 1.0;
  return c;
}

void check_pairs(std::span<const EvalPair> pairs, const char* who) {
  if (pairs.empty()) throw std::invalid_argument(std::string(who) + ": no pairs");
  for (const auto& p : pairs) {
    if (p.references.empty()) {
      throw std::invalid_argument(std::string(who) + ": video " + std::to_string(p.video_id) + " has no references");
    }
  }
}

std::size_t lcs(const data::Tokens& a, const data::Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

BleuStats bleu4_stats(std::span<const EvalPair> pairs) {
  check_pairs(pairs, "bleu4");
  BleuStats s;
  std::array<double, 4> match{}, total{};
  for (const auto& p : pairs) {
    const double hl = static_cast<double>(p.hypothesis.size());
    s.hyp_length += hl;
    double best = 0.0;
    double best_gap = INFINITY;
    for (const auto& r : p.references) {
      const double rl = static_cast<double>(r.size());
      const double gap = std::abs(rl - hl);
      if (gap < best_gap || (gap == best_gap && rl < best)) {
        best_gap = gap;
        best = rl;
      }
    }
    s.ref_length += best;
    for (std::size_t n = 1; n <= 4; ++n) {
      const Counts hyp = ngram_counts(p.hypothesis, n);
      Counts max_ref;
      for (const auto& r : p.references) {
        for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : hyp) {
        auto it = max_ref.find(g);
        if (it != max_ref.end()) match[n - 1] += std::min(c, it->second);
        total[n - 1] += c;
      }
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    s.precisions[n] = total[n] > 0 ? match[n] / total[n] : 0.0;
    if (s.precisions[n] == 0.0) zero = true;
    else log_sum += std::log(s.precisions[n]);
  }
  if (s.hyp_length == 0.0) s.brevity_penalty = 0.0;
  else s.brevity_penalty = s.hyp_length > s.ref_length ? 1.0 : std::exp(1.0 - s.ref_length / s.hyp_length);
  s.score = zero ? 0.0 : s.brevity_penalty * std::exp(log_sum / 4.0);
  return s;
}

double bleu4(std::span<const EvalPair> pairs) { return bleu4_stats(pairs).score; }

double rouge_l(std::span<const EvalPair> pairs, double beta) {
  check_pairs(pairs, "rouge_l");
  double total = 0.0;
  const double b2 = beta * beta;
  for (const auto& p : pairs) {
    double best = 0.0;
    for (const auto& r : p.references) {
      if (p.hypothesis.empty() || r.empty()) continue;
      const double l = static_cast<double>(lcs(p.hypothesis, r));
      if (l == 0.0) continue;
      const double prec = l / static_cast<double>(p.hypothesis.size());
      const double rec = l / static_cast<double>(r.size());
      best = std::max(best, (1.0 + b2) * prec * rec / (rec + b2 * prec));
    }
    total += best;
  }
  return total / static_cast<double>(pairs.size());
}

std::vector<double> cider_scores(std::span<const EvalPair> pairs, double sigma) {
  check_pairs(pairs, "cider");
  std::set<std::uint64_t> videos;
  for (const auto& p : pairs) videos.insert(p.video_id);
  if (videos.size() < 2) throw std::invalid_argument("cider: needs at least two distinct videos for document frequencies");

  // Document frequency over the reference sets, one document per pair.
  std::map<NGram, double> df;
  for (const auto& p : pairs) {
    std::set<NGram> seen;
    for (const auto& r : p.references) {
      for (std::size_t n = 1; n <= 4; ++n) {
        for (const auto& [g, c] : ngram_counts(r, n)) seen.insert(g);
      }
    }
    for (const auto& g : seen) df[g] += 1.0;
  }
  const double log_n = std::log(static_cast<double>(pairs.size()));

  struct Vec {
    std::array<std::map<NGram, double>, 4> v;
    std::array<double, 4> norm{};
    double length = 0.0;
  };
  auto to_vec = [&](const data::Tokens& toks) {
    Vec out;
    out.length = static_cast<double>(toks.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      for (const auto& [g, c] : ngram_counts(toks, n)) {
        auto it = df.find(g);
        const double d = std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
        const double w = c * (log_n - d);
        out.v[n - 1][g] = w;
        out.norm[n - 1] += w * w;
      }
    }
    for (double& x : out.norm) x = std::sqrt(x);
    return out;
  };
  auto sim = [&](const Vec& h, const Vec& r) {
    const double delta = h.length - r.length;
    double total = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
      double val = 0.0;
      for (const auto& [g, w] : h.v[n]) {
        auto it = r.v[n].find(g);
        if (it != r.v[n].end()) val += std::min(w, it->second) * it->second;
      }
      if (h.norm[n] != 0.0 && r.norm[n] != 0.0) val /= h.norm[n] * r.norm[n];
      total += val * std::exp(-(delta * delta) / (2.0 * sigma * sigma));
    }
    return total / 4.0;
  };

  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const auto& p : pairs) {
    const Vec h = to_vec(p.hypothesis);
    double s = 0.0;
    for (const auto& r : p.references) s += sim(h, to_vec(r));
    scores.push_back(10.0 * s / static_cast<double>(p.references.size()));
  }
  return scores;
}

double cider(std::span<const EvalPair> pairs, double sigma) {
  const auto s = cider_scores(pairs, sigma);
  double total = 0.0;
  for (double v : s) total += v;
  return total / static_cast<double>(s.size());
}

nlohmann::ordered_json metric_report(std::span<const EvalPair> pairs) {
  nlohmann::ordered_json j;
  j["bleu4"] = bleu4(pairs);
  j["rougeL"] = rouge_l(pairs);
  j["cider"] = cider(pairs);
  j["pairs"] = pairs.size();
  return j;
}

}  // namespace rcg
