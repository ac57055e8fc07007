#include "rcg/diagnostics.hpp"

#include <algorithm>

#include "rcg/generator.hpp"
#include "rcg/nn.hpp"
#include "rcg/retriever.hpp"

namespace rcg {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = scale * rng.normal();
  return t;
}

// Random projection to a scalar so no output element has a symmetric gradient.
Var probe(Tape& t, Var x, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(x, t.constant(random_tensor(x.shape(), rng))));
}

void scramble(ParameterSet& ps, Rng& rng, double scale) {
  for (Parameter* p : ps.list()) {
    for (double& v : p->value.storage()) v = scale * rng.normal();
  }
}

GeneratorConfig small_generator(bool shared) {
  GeneratorConfig c;
  c.vocab_size = 7;
  c.appearance_dim = 3;
  c.motion_dim = 2;
  c.word_dim = 4;
  c.hidden = 5;
  c.feat_dim = 3;
  c.att_dim = 4;
  c.copy_hidden = 4;
  c.share_copy_embedding = shared;
  c.gate_bias = shared;
  return c;
}

RetrieverConfig small_retriever() {
  RetrieverConfig c;
  c.vocab_size = 12;
  c.word_dim = 4;
  c.embed_dim = 5;
  c.appearance_dim = 3;
  c.motion_dim = 2;
  return c;
}

}  // namespace

nlohmann::ordered_json gradient_suite(double tolerance, double eps) {
  nlohmann::ordered_json checks = nlohmann::ordered_json::array();
  double worst = 0.0;
  bool all = true;
  auto record = [&](const std::string& name, const GradCheckReport& r) {
    nlohmann::ordered_json j;
    j["name"] = name;
    j["passed"] = r.passed;
    j["max_rel_error"] = r.max_rel_error;
    j["checked"] = r.checked;
    j["worst"] = r.worst_parameter + "[" + std::to_string(r.worst_index) + "]";
    if (!r.failure.empty()) j["failure"] = r.failure;
    checks.push_back(j);
    worst = std::max(worst, r.max_rel_error);
    all = all && r.passed;
  };

  {
    ParameterSet ps;
    Rng rng(1);
    nn::Linear lin(ps, "linear", 4, 3, rng);
    Parameter& x = ps.add("x", random_tensor(Shape{2, 4}, rng));
    const auto list = ps.list();
    record("linear", grad_check(list, [&](Tape& t) { return probe(t, tanh(lin(t, t.param(x))), 2); }, tolerance, eps));
  }
  {
    ParameterSet ps;
    Rng rng(2);
    nn::LstmCell cell(ps, "lstm", 3, 4, rng);
    Parameter& x = ps.add("x", random_tensor(Shape{3}, rng));
    const auto list = ps.list();
    record("lstm_cell", grad_check(list, [&](Tape& t) {
      auto s = cell.step(t, t.param(x), cell.zero_state(t));
      s = cell.step(t, t.param(x), s);
      return probe(t, concat({s.h, s.c}), 11);
    }, tolerance, eps));
  }
  {
    ParameterSet ps;
    Rng rng(3);
    nn::LstmCell fwd(ps, "fwd", 3, 4, rng);
    nn::LstmCell bwd(ps, "bwd", 3, 4, rng);
    Parameter& xs = ps.add("xs", random_tensor(Shape{4, 3}, rng));
    const auto list = ps.list();
    const std::uint8_t mask[] = {1, 1, 1, 0};
    record("bilstm", grad_check(list, [&](Tape& t) {
      return probe(t, nn::bilstm_encode(t, fwd, bwd, t.param(xs), mask), 12);
    }, tolerance, eps));
  }
  {
    ParameterSet ps;
    Rng rng(9);
    nn::AdditiveAttention att(ps, "attention", 3, 4, 5, rng);
    nn::MultiplicativeAggregator agg(ps, "aggregator", 4, rng);
    Parameter& table = ps.add("embedding", random_tensor(Shape{6, 4}, rng));
    Parameter& q = ps.add("query", random_tensor(Shape{3}, rng));
    const auto list = ps.list();
    record("attention_aggregator_embedding", grad_check(list, [&](Tape& t) {
      const std::size_t ids[] = {2, 5, 2, 0};
      const std::uint8_t mask[] = {1, 1, 0, 1};
      Var seq = nn::embed(t, table, ids);
      auto a = att(t, t.param(q), seq, seq, mask);
      Var g = agg(t, seq, mask);
      return add(probe(t, add(a.context, g), 13), probe(t, a.weights, 3));
    }, tolerance, eps));
  }
  {
    Retriever r(small_retriever(), 5);
    Rng rng(6);
    std::vector<Tensor> apps, mots;
    for (int i = 0; i < 3; ++i) {
      apps.push_back(random_tensor(Shape{2, 3}, rng));
      mots.push_back(random_tensor(Shape{2, 2}, rng));
    }
    const std::vector<std::vector<std::size_t>> sents = {{4, 5, 6}, {7, 4}, {9, 10, 11, 4}};
    const auto list = r.params().list();
    record("retriever_ranking_loss", grad_check(list, [&](Tape& t) {
      std::vector<Var> w, m, a;
      for (int i = 0; i < 3; ++i) {
        w.push_back(r.encode_sentence(t, sents[i]));
        const auto v = r.encode_video(t, apps[i], mots[i]);
        m.push_back(v.motion);
        a.push_back(v.appearance);
      }
      // A wide margin keeps every hinge active, so the loss is smooth at this point.
      return ranking_loss(similarity_matrix(stack(w), stack(m), stack(a)), 3.0);
    }, tolerance, eps));
  }
  for (bool shared : {false, true}) {
    Generator g(small_generator(shared), 0);
    Rng rng(129);
    scramble(g.params(), rng, 0.6);
    const Tensor app = random_tensor(Shape{2, 3}, rng);
    const Tensor mot = random_tensor(Shape{2, 2}, rng);
    const std::vector<data::TokenIds> retrieved = {{4, 5, 6}, {6, 5, 4, 5}, {5, 4, 6}};
    ParameterSet extra;
    Parameter& logits = extra.add("eta_logits", Tensor::vector({0.4, -0.2, 0.1}));
    auto list = g.params().list();
    list.push_back(&logits);
    record(shared ? "caption_loss_shared_embedding" : "caption_loss", grad_check(list, [&](Tape& t) {
      const auto ctx = g.prepare(t, app, mot, retrieved, softmax(t.param(logits)), CopyMode::copy);
      return g.loss(t, ctx, {4, 6, 5, 4, 6, data::kEos});
    }, tolerance, eps));
  }
  {
    // Caption loss flowing into the retriever through the retrieval probabilities.
    // Fixture picked so no gradient element is small enough for round-off to dominate.
    auto gc = small_generator(false);
    gc.vocab_size = 12;
    Generator g(gc, 0);
    Retriever r(small_retriever(), 8);
    Rng rng(105);
    scramble(g.params(), rng, 0.6);
    const Tensor app = random_tensor(Shape{2, 3}, rng);
    const Tensor mot = random_tensor(Shape{2, 2}, rng);
    const std::vector<data::TokenIds> retrieved = {{4, 5, 6}, {7, 8, 4, 9}, {10, 11, 5}};
    auto list = g.params().list();
    for (Parameter* p : r.params().list()) list.push_back(p);
    record("joint_retrieval_path", grad_check(list, [&](Tape& t) {
      const auto v = r.encode_video(t, app, mot);
      std::vector<Var> sims;
      for (const auto& s : retrieved) sims.push_back(similarity(r.encode_sentence(t, s), v.motion, v.appearance));
      Var eta = softmax(affine(concat(sims), 4.0, 0.0));
      const auto ctx = g.prepare(t, app, mot, retrieved, eta, CopyMode::copy);
      return g.loss(t, ctx, {4, 7, 10, 5, data::kEos});
    }, tolerance, eps));
  }

  nlohmann::ordered_json out;
  out["passed"] = all;
  out["max_rel_error"] = worst;
  out["tolerance"] = tolerance;
  out["eps"] = eps;
  out["checks"] = checks;
  return out;
}

}  // namespace rcg
