#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>

#include "beam_oracle.hpp"
#include "oracle.hpp"
#include "rcg/generator.hpp"
#include "rcg/grad_check.hpp"
#include "support.hpp"

using namespace rcg;
using rcg::test::random_tensor;

namespace {

GeneratorConfig tiny_config(std::size_t vocab = 9) {
  GeneratorConfig c;
  c.vocab_size = vocab;
  c.appearance_dim = 3;
  c.motion_dim = 2;
  c.word_dim = 4;
  c.hidden = 5;
  c.feat_dim = 3;
  c.att_dim = 4;
  c.copy_hidden = 4;
  return c;
}

struct Instance {
  Tensor app, mot;
  std::vector<data::TokenIds> retrieved;
  std::vector<double> eta;
};

Instance random_instance(Rng& rng, const GeneratorConfig& c, std::size_t k, std::size_t frames = 3) {
  Instance in;
  in.app = random_tensor(Shape{frames, c.appearance_dim}, rng);
  in.mot = random_tensor(Shape{frames, c.motion_dim}, rng);
  std::vector<double> s;
  for (std::size_t i = 0; i < k; ++i) {
    data::TokenIds toks(1 + rng.below(5));
    for (auto& w : toks) w = data::kUnk + rng.below(c.vocab_size - data::kUnk);
    in.retrieved.push_back(toks);
    s.push_back(rng.uniform(-1, 1));
  }
  in.eta = oracle::softmax(s);
  return in;
}

// Wider-ranging parameters so distributions are far from uniform.
void scramble(Generator& g, Rng& rng, double scale = 1.0) {
  for (Parameter* p : g.params().list())
    for (double& v : p->value.storage()) v = scale * rng.normal();
}

double l1(const std::vector<double>& a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

}  // namespace

TEST(Generator, StepMatchesOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto cfg = tiny_config();
    cfg.gate_bias = trial % 2 == 1;
    cfg.share_copy_embedding = trial % 3 == 0;
    Generator g(cfg, 100 + trial);
    scramble(g, rng, 0.7);
    const auto in = random_instance(rng, cfg, 1 + rng.below(4), 1 + rng.below(4));
    Tape t;
    const auto ctx = g.prepare(t, in.app, in.mot, in.retrieved, t.constant(Tensor::vector(in.eta)), CopyMode::copy);
    oracle::CopyDecoder ref(g.params(), cfg.hidden, in.app, in.mot, in.retrieved, in.eta,
                            cfg.share_copy_embedding ? "decoder.embedding" : "copy.embedding");
    DecoderState s = g.initial_state(t);
    std::size_t prev = data::kBos;
    for (int step = 0; step < 3; ++step) {
      const auto d = g.step(t, ctx, s, prev);
      const auto o = ref.step(prev, cfg.vocab_size);
      for (std::size_t w = 0; w < cfg.vocab_size; ++w) {
        EXPECT_NEAR(d.p_voc.value()[w], o.p_voc[w], 1e-12);
        EXPECT_NEAR(d.p_final.value()[w], o.p_final[w], 1e-12);
        for (std::size_t i = 0; i < in.retrieved.size(); ++i) EXPECT_NEAR(d.p_ret.value().at(i, w), o.p_ret[i][w], 1e-12);
      }
      for (std::size_t i = 0; i < in.retrieved.size(); ++i) EXPECT_NEAR(d.p_copy.value()[i], o.p_copy[i], 1e-12);
      for (std::size_t j = 0; j < o.c_vis.size(); ++j) EXPECT_NEAR(d.c_vis.value()[j], o.c_vis[j], 1e-12);
      for (std::size_t j = 0; j < cfg.hidden; ++j) EXPECT_NEAR(d.h_lang.value()[j], ref.hl[j], 1e-12);
      s = d.state;
      prev = data::kUnk + rng.below(cfg.vocab_size - data::kUnk);
    }
  }
}

TEST(Generator, DecodeStepDeterministicAndSingleFrame) {
  const auto cfg = tiny_config();
  Generator g(cfg, 1);
  Rng rng(2);
  const auto in = random_instance(rng, cfg, 1, 1);
  Tape t;
  const auto v = g.encode_visual(t, in.app, in.mot);
  const auto a = g.decode_step(t, g.initial_state(t), data::kBos, v);
  const auto b = g.decode_step(t, g.initial_state(t), data::kBos, v);
  EXPECT_EQ(a.h_lang.value(), b.h_lang.value());
  EXPECT_EQ(a.c_vis.value(), v.feats.value().reshaped(Shape{2 * cfg.feat_dim}));
  EXPECT_THROW(g.decode_step(t, DecoderState{}, data::kBos, v), std::invalid_argument);
  EXPECT_THROW(g.decode_step(t, g.initial_state(t), cfg.vocab_size, v), std::out_of_range);
}

TEST(Generator, VocabDistribution) {
  const auto cfg = tiny_config();
  Generator g(cfg, 3);
  Rng rng(4);
  Tape t;
  for (int i = 0; i < 50; ++i) {
    const Tensor h = random_tensor(Shape{cfg.hidden}, rng, 3.0);
    const Tensor p = g.vocab_distribution(t, t.constant(h)).value();
    double total = 0;
    for (double v : p.data()) total += v;
    EXPECT_NEAR(total, 1.0, 1e-6);
    const auto logits = oracle::plus(oracle::vecmat(oracle::as_vec(h), g.params().get("decoder.vocab.weight").value),
                                     oracle::as_vec(g.params().get("decoder.vocab.bias").value));
    const auto top = [](auto first, auto last) { return std::max_element(first, last) - first; };
    EXPECT_EQ(top(p.data().begin(), p.data().end()), top(logits.begin(), logits.end()));
  }
  g.params().get("decoder.vocab.weight").value = Tensor(Shape{cfg.hidden, cfg.vocab_size});
  const Tensor u = g.vocab_distribution(t, t.constant(random_tensor(Shape{cfg.hidden}, rng))).value();
  for (double v : u.data()) EXPECT_DOUBLE_EQ(v, 1.0 / static_cast<double>(cfg.vocab_size));
}

TEST(MultiPointer, Examples) {
  const auto cfg = tiny_config();
  Generator g(cfg, 5);
  Rng rng(6);
  Tape t;
  const Var h = t.constant(random_tensor(Shape{cfg.hidden}, rng));
  const std::size_t dog = 6, a = 4, b = 7;
  auto one = g.multi_pointer(t, h, g.encode_retrieved(t, {{dog}}));
  for (std::size_t w = 0; w < cfg.vocab_size; ++w) EXPECT_EQ(one.p_ret.value().at(0, w), w == dog ? 1.0 : 0.0);

  g.params().get("copy.att.score").value = Tensor(Shape{cfg.att_dim});
  g.params().get("copy.gate_context").value = Tensor(Shape{cfg.copy_hidden});
  g.params().get("copy.gate_state").value = Tensor(Shape{cfg.hidden});
  auto p = g.multi_pointer(t, h, g.encode_retrieved(t, {{a, a, b}, {b}}));
  EXPECT_NEAR(p.p_ret.value().at(0, a), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p.p_ret.value().at(0, b), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(p.p_ret.value().at(1, b), 1.0);
  EXPECT_EQ(p.p_copy.value()[0], 0.5);
  EXPECT_EQ(p.p_copy.value()[1], 0.5);
  // Padding positions get no attention.
  EXPECT_EQ(p.attn.value().at(1, 1), 0.0);
  EXPECT_THROW(g.encode_retrieved(t, {}), std::invalid_argument);
  EXPECT_THROW(g.encode_retrieved(t, {{a}, {}}), std::invalid_argument);
}

TEST(MixStep, Examples) {
  Tape t;
  const Var p_voc = t.constant(Tensor::vector({0.1, 0.2, 0.3, 0.4}));
  const Var p_ret = t.constant(Tensor::matrix({{0, 0, 1, 0}, {0.5, 0.5, 0, 0}}));
  const Var eta = t.constant(Tensor::vector({0.6, 0.4}));
  const auto zero = mix_step(p_voc, p_ret, t.constant(Tensor::vector({0, 0})), eta);
  for (std::size_t w = 0; w < 4; ++w) EXPECT_NEAR(zero.p_final.value()[w], p_voc.value()[w], 1e-15);
  const auto m = mix_step(p_voc, p_ret, t.constant(Tensor::vector({1, 0})), eta);
  EXPECT_NEAR(m.p_final.value()[2], 0.6 + 0.4 * 0.3, 1e-15);
  EXPECT_NEAR(m.p_final.value()[0], 0.4 * 0.1, 1e-15);
  const auto single = mix_step(p_voc, t.constant(Tensor::matrix({{0, 0.5, 0, 0.5}})), t.constant(Tensor::vector({1})),
                               t.constant(Tensor::vector({1})));
  EXPECT_EQ(single.p_final.value(), Tensor::vector({0, 0.5, 0, 0.5}));
  EXPECT_THROW(mix_step(p_voc, p_ret, t.constant(Tensor::vector({0, 0})), t.constant(Tensor::vector({1}))), ShapeError);
}

TEST(MixStep, DistributionsOnRandomModels) {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto cfg = tiny_config(4 + rng.below(7));
    Generator g(cfg, trial);
    if (trial % 2) scramble(g, rng, 1.5);
    const auto in = random_instance(rng, cfg, 1 + rng.below(5), 1 + rng.below(3));
    Tape t;
    const auto ctx = g.prepare(t, in.app, in.mot, in.retrieved, t.constant(Tensor::vector(in.eta)), CopyMode::copy);
    const auto d = g.step(t, ctx, g.initial_state(t), data::kBos);
    auto check_rows = [](const Tensor& p) {
      const std::size_t rows = p.rank() == 1 ? 1 : p.dim(0);
      const std::size_t cols = p.numel() / rows;
      for (std::size_t r = 0; r < rows; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < cols; ++c) {
          EXPECT_GE(p[r * cols + c], 0.0);
          s += p[r * cols + c];
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    };
    check_rows(d.p_voc.value());
    check_rows(d.p_ret.value());
    check_rows(d.p_theta.value());
    check_rows(d.p_final.value());
    for (double gate : d.p_copy.value().data()) {
      EXPECT_GT(gate, 0.0);
      EXPECT_LT(gate, 1.0);
    }
  }
}

TEST(MixStep, CopyInfluenceIsMonotone) {
  Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t v = 4 + rng.below(6);
    std::vector<double> pv(v);
    for (double& x : pv) x = rng.uniform(-2, 2);
    pv = oracle::softmax(pv);
    Tensor pr(Shape{1, v});
    for (double& x : pr.storage()) x = rng.uniform(0, 1);
    double z = 0;
    for (double x : pr.data()) z += x;
    for (double& x : pr.storage()) x /= z;
    double last = 1e9;
    for (double gate = 0.0; gate <= 1.0 + 1e-12; gate += 0.05) {
      Tape t;
      const auto m = mix_step(t.constant(Tensor::vector(pv)), t.constant(pr), t.constant(Tensor::vector({gate})),
                              t.constant(Tensor::vector({1.0})));
      const double d = l1(std::vector<double>(m.p_final.value().data().begin(), m.p_final.value().data().end()),
                          pr.data());
      EXPECT_LE(d, last + 1e-12);
      last = d;
    }
    EXPECT_NEAR(last, 0.0, 1e-9);
  }
}

TEST(Generator, GatesZeroEqualsDecoderOnly) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cfg = tiny_config();
    Generator g(cfg, 40 + trial);
    const auto in = random_instance(rng, cfg, 1 + rng.below(4));
    Tape t;
    const auto zero = g.prepare(t, in.app, in.mot, in.retrieved, t.constant(Tensor::vector(in.eta)), CopyMode::gates_zero);
    const auto base = g.prepare(t, in.app, in.mot, {}, Var(), CopyMode::decoder_only);
    DecoderState a = g.initial_state(t), b = g.initial_state(t);
    std::size_t prev = data::kBos;
    for (int step = 0; step < 4; ++step) {
      const auto da = g.step(t, zero, a, prev);
      const auto db = g.step(t, base, b, prev);
      for (std::size_t w = 0; w < cfg.vocab_size; ++w) EXPECT_NEAR(da.p_final.value()[w], db.p_final.value()[w], 1e-6);
      for (double gate : da.p_copy.value().data()) EXPECT_EQ(gate, 0.0);
      a = da.state;
      b = db.state;
      prev = 4 + step;
    }
  }
}

TEST(GenerationLoss, MatchesEnumeration) {
  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const auto cfg = tiny_config(5 + rng.below(6));
    Generator g(cfg, 500 + trial);
    scramble(g, rng, 0.8);
    const auto in = random_instance(rng, cfg, 1 + rng.below(5));
    data::TokenIds target(rng.below(3));
    for (auto& w : target) w = data::kUnk + rng.below(cfg.vocab_size - data::kUnk);
    target.push_back(data::kEos);
    oracle::CopyDecoder ref(g.params(), cfg.hidden, in.app, in.mot, in.retrieved, in.eta, "copy.embedding");
    double want = 0;
    std::size_t prev = data::kBos;
    for (std::size_t y : target) {
      const auto o = ref.step(prev, cfg.vocab_size);
      want -= std::log(std::max(o.p_final[y], 1e-12));
      prev = y;
    }
    Tape t;
    const auto ctx = g.prepare(t, in.app, in.mot, in.retrieved, t.constant(Tensor::vector(in.eta)), CopyMode::copy);
    EXPECT_NEAR(g.loss(t, ctx, target, LossReduction::sum).value().item(), want, 1e-10);
    EXPECT_NEAR(g.loss(t, ctx, target, LossReduction::mean).value().item(), want / target.size(), 1e-10);
    target.push_back(data::kPad);
    EXPECT_NEAR(g.loss(t, ctx, target, LossReduction::sum).value().item(), want, 1e-10);
  }
}

TEST(GenerationLoss, ExamplesAndErrors) {
  auto cfg = tiny_config(6);
  Generator g(cfg, 12);
  Rng rng(13);
  const auto in = random_instance(rng, cfg, 2);
  g.params().get("decoder.vocab.weight").value = Tensor(Shape{cfg.hidden, cfg.vocab_size});
  {
    Tape t;
    const auto ctx = g.prepare(t, in.app, in.mot, in.retrieved, t.constant(Tensor::vector(in.eta)), CopyMode::gates_zero);
    EXPECT_NEAR(g.loss(t, ctx, {4, 5, data::kEos}).value().item(), std::log(6.0), 1e-12);
    EXPECT_THROW(g.loss(t, ctx, {4, 5}), std::invalid_argument);
    EXPECT_THROW(g.loss(t, ctx, {4, data::kPad, data::kEos}), std::invalid_argument);
  }
  {
    // Every retrieved sentence is the single target token and every gate saturates.
    g.params().get("copy.gate_state").value = Tensor(Shape{cfg.hidden});
    g.params().get("copy.gate_context").value = Tensor(Shape{cfg.copy_hidden});
    cfg.gate_bias = true;
    Generator sure(cfg, 12);
    sure.params().get("copy.gate_state").value = Tensor(Shape{cfg.hidden});
    sure.params().get("copy.gate_context").value = Tensor(Shape{cfg.copy_hidden});
    sure.params().get("copy.gate_bias").value = Tensor::vector({1e3});
    Tape t;
    const auto ctx = sure.prepare(t, in.app, in.mot, {{data::kEos}, {data::kEos}}, t.constant(Tensor::vector(in.eta)),
                                  CopyMode::copy);
    EXPECT_NEAR(sure.loss(t, ctx, {data::kEos}).value().item(), 0.0, 1e-12);
  }
}

TEST(GenerationLoss, GradCheckFullPipeline) {
  // Fixture chosen so the smallest nonzero gradient element stays above
  // ~2e-7; below that, central differences at eps 1e-5 are dominated by
  // round-off.
  for (bool shared : {false, true}) {
    auto cfg = tiny_config(7);
    cfg.share_copy_embedding = shared;
    cfg.gate_bias = shared;
    Generator g(cfg, 0);
    Rng rng(129);
    scramble(g, rng, 0.6);
    Tensor app = random_tensor(Shape{2, 3}, rng), mot = random_tensor(Shape{2, 2}, rng);
    const std::vector<data::TokenIds> retrieved = {{4, 5, 6}, {6, 5, 4, 5}, {5, 4, 6}};
    ParameterSet extra;
    Parameter& logits = extra.add("eta_logits", Tensor::vector({0.4, -0.2, 0.1}));
    auto list = g.params().list();
    list.push_back(&logits);
    const auto report = grad_check(list, [&](Tape& t) {
      const auto ctx = g.prepare(t, app, mot, retrieved, softmax(t.param(logits)), CopyMode::copy);
      return g.loss(t, ctx, {4, 6, 5, 4, 6, data::kEos});
    }, 1e-4);
    EXPECT_TRUE(report.passed) << report.worst_parameter << "[" << report.worst_index << "] " << report.analytic << " vs "
                               << report.numeric;
  }
}

TEST(GenerationLoss, GradientsMatchWiderDifferencesOnRandomModels) {
  Rng rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    const auto cfg = tiny_config(6);
    Generator g(cfg, 300 + trial);
    scramble(g, rng, 0.2 + 0.1 * (trial % 6));
    const auto in = random_instance(rng, cfg, 1 + rng.below(3), 1 + rng.below(3));
    auto list = g.params().list();
    const auto report = grad_check(list, [&](Tape& t) {
      const auto ctx = g.prepare(t, in.app, in.mot, in.retrieved, t.constant(Tensor::vector(in.eta)), CopyMode::copy);
      return g.loss(t, ctx, {4, 5, data::kEos});
    }, 1e-4, 1e-3);
    EXPECT_TRUE(report.passed) << trial << " " << report.worst_parameter << " " << report.max_rel_error;
  }
}

using oracle::TableScorer;
using oracle::exhaustive;

TEST(BeamSearch, MatchesExhaustiveSearch) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    TableScorer sc(3, seed, seed % 3 == 0);
    const auto want = exhaustive(sc, 3, 2, 2);
    const auto got = beam_search(sc, 9, 2, 2);
    EXPECT_EQ(got.tokens, want.tokens) << seed;
    EXPECT_DOUBLE_EQ(got.score, want.score);
    EXPECT_EQ(got.forced, want.forced);
  }
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    TableScorer sc(4, seed);
    const auto want = exhaustive(sc, 4, 3, 1);
    EXPECT_EQ(beam_search(sc, 64, 3, 1).tokens, want.tokens);
  }
}

TEST(BeamSearch, WidthOneEqualsGreedy) {
  Rng rng(16);
  for (int trial = 0; trial < 50; ++trial) {
    const auto cfg = tiny_config(6);
    Generator g(cfg, 900 + trial);
    scramble(g, rng, 1.0);
    const auto in = random_instance(rng, cfg, 2);
    GeneratorScorer a(g, in.app, in.mot, in.retrieved, in.eta, CopyMode::copy);
    GeneratorScorer b(g, in.app, in.mot, in.retrieved, in.eta, CopyMode::copy);
    const auto beam = beam_search(a, 1, 8);
    const auto greedy = greedy_decode(b, 8);
    EXPECT_EQ(beam.tokens, greedy.tokens);
    EXPECT_EQ(beam.score, greedy.score);
    EXPECT_EQ(beam.forced, greedy.forced);
    GeneratorScorer c(g, in.app, in.mot, in.retrieved, in.eta, CopyMode::copy);
    EXPECT_EQ(beam_search(c, 3, 8).tokens, beam_search(a, 3, 8).tokens);
  }
  TableScorer sc(3, 1);
  EXPECT_THROW(beam_search(sc, 0, 3), std::invalid_argument);
}

TEST(BeamSearch, ForcedFinalizationIsFlagged) {
  TableScorer sc(3, 5);
  // EOS id outside the vocabulary can never be produced.
  const auto h = beam_search(sc, 2, 4, 99);
  EXPECT_TRUE(h.forced);
  EXPECT_EQ(h.tokens.size(), 4u);
}

TEST(ExportCopyWeights, Schema) {
  const auto cfg = tiny_config();
  Generator g(cfg, 17);
  Rng rng(18);
  const auto vocab = data::Vocabulary::build({{"a", "b", "c", "d", "e"}});
  auto in = random_instance(rng, cfg, 3);
  const data::TokenIds caption = {4, 5, 6};
  const auto j = export_copy_weights(g, 42, in.app, in.mot, in.retrieved, in.eta, caption, vocab);
  const auto back = nlohmann::ordered_json::parse(j.dump());
  EXPECT_EQ(back, j);
  EXPECT_EQ(back.at("video_id").get<std::uint64_t>(), 42u);
  const auto& steps = back.at("steps");
  ASSERT_EQ(steps.size(), 4u);
  EXPECT_EQ(steps[3].at("token"), "<eos>");
  EXPECT_EQ(steps[0].at("token"), vocab.token(4));
  for (const auto& s : steps) {
    ASSERT_EQ(s.at("p_copy").size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
      const double gate = s.at("p_copy")[i].get<double>();
      EXPECT_GT(gate, 0.0);
      EXPECT_LT(gate, 1.0);
      const auto row = s.at("attn")[i].get<std::vector<double>>();
      EXPECT_EQ(row.size(), in.retrieved[i].size());
      double total = 0;
      for (double w : row) total += w;
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
  const auto zero = export_copy_weights(g, 42, in.app, in.mot, in.retrieved, in.eta, caption, vocab, CopyMode::gates_zero);
  for (const auto& s : zero.at("steps"))
    for (const auto& gate : s.at("p_copy")) EXPECT_EQ(gate.get<double>(), 0.0);
  EXPECT_THROW(export_copy_weights(g, 1, in.app, in.mot, in.retrieved, in.eta, caption, vocab, CopyMode::decoder_only),
               std::invalid_argument);
}
