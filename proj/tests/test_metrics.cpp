#include <gtest/gtest.h>

#include <fstream>

#include "rcg/metrics.hpp"

using namespace rcg;

namespace {

data::Tokens words(const std::string& s) { return data::tokenize(s); }

EvalPair pair(std::uint64_t id, const std::string& hyp, std::vector<std::string> refs) {
  EvalPair p{id, words(hyp), {}};
  for (const auto& r : refs) p.references.push_back(words(r));
  return p;
}

}  // namespace

TEST(Bleu, Examples) {
  const std::vector<EvalPair> same = {pair(1, "a man is cooking pasta", {"a man is cooking pasta"})};
  EXPECT_DOUBLE_EQ(bleu4(same), 1.0);
  const std::vector<EvalPair> none = {pair(1, "x y z w", {"a b c d"})};
  EXPECT_EQ(bleu4(none), 0.0);

  const std::vector<EvalPair> cat = {pair(1, "the cat sat on the mat", {"the cat is on the mat"})};
  const auto s = bleu4_stats(cat);
  EXPECT_DOUBLE_EQ(s.precisions[0], 5.0 / 6.0);
  EXPECT_DOUBLE_EQ(s.precisions[1], 3.0 / 5.0);
  EXPECT_DOUBLE_EQ(s.precisions[2], 1.0 / 4.0);
  EXPECT_DOUBLE_EQ(s.precisions[3], 0.0);
  EXPECT_DOUBLE_EQ(s.brevity_penalty, 1.0);
  EXPECT_EQ(s.score, 0.0);
}

TEST(Bleu, ClippingAndBrevity) {
  // "the the the" against one "the": clipped unigram precision 1/3.
  const auto clipped = bleu4_stats(std::vector<EvalPair>{pair(1, "the the the", {"the cat"})});
  EXPECT_DOUBLE_EQ(clipped.precisions[0], 1.0 / 3.0);
  // Closest reference length; ties go to the shorter one.
  const auto bp = bleu4_stats(std::vector<EvalPair>{pair(1, "a b c d", {"a b c d e f", "a b"})});
  EXPECT_DOUBLE_EQ(bp.ref_length, 2.0);
  const auto tie = bleu4_stats(std::vector<EvalPair>{pair(1, "a b c d e", {"a b c d e f", "a b c d"})});
  EXPECT_DOUBLE_EQ(tie.ref_length, 4.0);
  const auto shortened = bleu4_stats(std::vector<EvalPair>{pair(1, "a b c d", {"a b c d e f g h"})});
  EXPECT_DOUBLE_EQ(shortened.brevity_penalty, std::exp(1.0 - 8.0 / 4.0));
  EXPECT_DOUBLE_EQ(shortened.score, std::exp(1.0 - 2.0));
}

TEST(RougeL, Examples) {
  EXPECT_DOUBLE_EQ(rouge_l(std::vector<EvalPair>{pair(1, "a b c", {"a b c"})}), 1.0);
  EXPECT_EQ(rouge_l(std::vector<EvalPair>{pair(1, "a b c", {"d e f"})}), 0.0);
  EXPECT_DOUBLE_EQ(rouge_l(std::vector<EvalPair>{pair(1, "a b c d", {"a c d e"})}), 0.75);
  // Best reference wins, then the corpus mean.
  const std::vector<EvalPair> two = {pair(1, "a b c d", {"x y", "a c d e"}), pair(2, "a b", {"c d"})};
  EXPECT_DOUBLE_EQ(rouge_l(two), 0.375);
}

TEST(Cider, Examples) {
  const std::vector<EvalPair> same = {pair(1, "a man slices bread", {"a man slices bread"}),
                                      pair(2, "two dogs swim fast", {"two dogs swim fast"}),
                                      pair(3, "kids ride bikes outside", {"kids ride bikes outside"})};
  for (double s : cider_scores(same)) EXPECT_NEAR(s, 10.0, 1e-12);
  // Without any 4-gram the fourth term is zero.
  const std::vector<EvalPair> short_caps = {pair(1, "kids ride bikes", {"kids ride bikes"}), pair(2, "dogs swim", {"dogs swim"})};
  EXPECT_NEAR(cider_scores(short_caps)[0], 7.5, 1e-12);
  const std::vector<EvalPair> disjoint = {pair(1, "p q r", {"a b c"}), pair(2, "s t u", {"d e f"})};
  EXPECT_EQ(cider(disjoint), 0.0);
  EXPECT_THROW(cider(std::vector<EvalPair>{pair(1, "a", {"a"}), pair(1, "a", {"a"})}), std::invalid_argument);
  EXPECT_THROW(cider(std::vector<EvalPair>{pair(1, "a", {})}), std::invalid_argument);
}

TEST(Metrics, MatchReferenceImplementations) {
  std::ifstream in(std::string(RCG_TEST_DATA) + "/metric_fixtures.json");
  ASSERT_TRUE(in) << "missing metric fixtures";
  const auto fixtures = nlohmann::json::parse(in);
  for (const auto& c : fixtures.at("cases")) {
    std::vector<EvalPair> pairs;
    for (const auto& p : c.at("pairs")) {
      EvalPair e;
      e.video_id = p.at("video_id").get<std::uint64_t>();
      e.hypothesis = p.at("hypothesis").get<data::Tokens>();
      e.references = p.at("references").get<std::vector<data::Tokens>>();
      pairs.push_back(std::move(e));
    }
    const std::string name = c.at("name");
    EXPECT_NEAR(bleu4(pairs), c.at("bleu4").get<double>(), 1e-6) << name;
    EXPECT_NEAR(rouge_l(pairs), c.at("rougeL").get<double>(), 1e-9) << name;
    EXPECT_NEAR(cider(pairs), c.at("cider").get<double>(), 1e-9) << name;
    const auto per = cider_scores(pairs);
    const auto want = c.at("cider_per_pair").get<std::vector<double>>();
    ASSERT_EQ(per.size(), want.size());
    for (std::size_t i = 0; i < per.size(); ++i) {
      EXPECT_NEAR(per[i], want[i], 1e-9) << name << " pair " << i;
      EXPECT_GE(per[i], 0.0);
    }
  }
}

TEST(Metrics, ReportFieldOrder) {
  const std::vector<EvalPair> p = {pair(1, "a b c d", {"a b c d"}), pair(2, "e f g h", {"e f g x"})};
  const auto j = metric_report(p);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"bleu4", "rougeL", "cider", "pairs"}));
  EXPECT_EQ(j.at("pairs"), 2);
}
