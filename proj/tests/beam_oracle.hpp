#pragma once

#include <algorithm>
#include <functional>

#include "oracle.hpp"
#include "rcg/generator.hpp"
#include "rcg/rng.hpp"

namespace rcg::oracle {

// Fixed pseudo-random log-probabilities keyed by prefix.
class TableScorer : public SequenceScorer {
 public:
  TableScorer(std::size_t vocab, std::uint64_t seed, bool coarse = false) : v_(vocab), seed_(seed), coarse_(coarse) {}
  std::vector<double> next_log_probs(const data::TokenIds& prefix) override {
    std::uint64_t h = seed_;
    for (std::size_t w : prefix) h = h * 1000003 + w + 1;
    Rng rng(h);
    std::vector<double> s(v_);
    for (double& x : s) x = coarse_ ? static_cast<double>(rng.below(2)) : rng.normal();
    auto p = oracle::softmax(s);
    for (double& x : p) x = std::log(x);
    return p;
  }

 private:
  std::size_t v_;
  std::uint64_t seed_;
  bool coarse_;
};

inline Hypothesis exhaustive(SequenceScorer& sc, std::size_t vocab, std::size_t max_len, std::size_t eos) {
  std::vector<Hypothesis> all;
  std::function<void(data::TokenIds, double)> rec = [&](data::TokenIds prefix, double score) {
    const auto lp = sc.next_log_probs(prefix);
    for (std::size_t w = 0; w < vocab; ++w) {
      data::TokenIds next = prefix;
      next.push_back(w);
      if (w == eos) {
        all.push_back({next, score + lp[w], false, next.size()});
      } else if (next.size() == max_len) {
        all.push_back({next, score + lp[w], true, max_len});
      } else {
        rec(next, score + lp[w]);
      }
    }
  };
  rec({}, 0.0);
  return *std::min_element(all.begin(), all.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.finished_at != b.finished_at) return a.finished_at < b.finished_at;
    return a.tokens < b.tokens;
  });
}


}  // namespace rcg::oracle
