// rcg: command-line driver for dataset synthesis, training and evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rcg/data.hpp"
#include "rcg/diagnostics.hpp"
#include "rcg/index.hpp"
#include "rcg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace rcg;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void progress(const std::string& line) { std::cerr << line << std::endl; }

TrainHooks hooks() {
  TrainHooks h;
  h.log = progress;
  return h;
}

void write_json(const fs::path& path, const ordered_json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw DataError("cannot write " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void prepare_out(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw DataError("cannot create output directory " + out.string());
}

// Inputs are read-only: refuse to write into a directory that is also an input.
void check_disjoint(const fs::path& out, const std::vector<fs::path>& inputs) {
  const auto o = fs::weakly_canonical(out);
  for (const auto& in : inputs) {
    if (in.empty()) continue;
    const auto i = fs::weakly_canonical(in);
    if (i == o || (fs::is_regular_file(i) && i.parent_path() == o)) {
      throw UsageError("--out must differ from input location " + in.string());
    }
  }
}

/// "key=value" overrides; the value is parsed as JSON, falling back to a string.
nlohmann::json parse_sets(const std::vector<std::string>& sets) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    const std::string key = s.substr(0, eq);
    const std::string val = s.substr(eq + 1);
    j[key] = nlohmann::json::accept(val) ? nlohmann::json::parse(val) : nlohmann::json(val);
  }
  return j;
}

// Training configuration: defaults < --config file < --set < dedicated flags.
struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> lr;

  void add(CLI::App* app) {
    app->add_option("--config", file, "JSON training configuration")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "Override a configuration key (key=value), repeatable");
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--lr", lr, "Learning rate");
  }

  TrainConfig resolve(nlohmann::json flags) const {
    TrainConfig c;
    if (!file.empty()) c = TrainConfig::from_json(read_json(file));
    nlohmann::json over = parse_sets(sets);
    if (seed) flags["seed"] = *seed;
    if (lr) flags["lr"] = *lr;
    over.update(flags);
    try {
      c = TrainConfig::from_json(over, c);
      c.validate();
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

void log_run(const fs::path& out, const std::string& command, const ordered_json& config, const std::string& hash,
             std::uint64_t seed, const ordered_json& inputs) {
  ordered_json run;
  run["command"] = command;
  run["config_hash"] = hash;
  run["seed"] = seed;
  run["config"] = config;
  run["inputs"] = inputs;
  write_json(out / "run.json", run);
}

std::string checkpoint_digest(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DataError("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  const std::string bytes = ss.str();
  return to_hex(sha256(bytes));
}

data::Dataset load_data(const std::string& dir) {
  progress("loading dataset " + dir);
  return data::load_dataset(dir);
}

Model load_model(const std::string& path) {
  progress("loading checkpoint " + path);
  return Model::load(path);
}

ordered_json synth_json(const data::SyntheticSpec& s) {
  ordered_json j;
  j["clusters"] = s.clusters;
  j["videos_per_cluster"] = s.videos_per_cluster;
  j["captions_per_video"] = s.captions_per_video;
  j["frames"] = s.frames;
  j["appearance_dim"] = s.appearance_dim;
  j["motion_dim"] = s.motion_dim;
  j["noise"] = s.noise;
  j["phrases_per_cluster"] = s.phrases_per_cluster;
  j["slot_words_per_cluster"] = s.slot_words_per_cluster;
  j["phrase_overlap"] = s.phrase_overlap;
  j["min_caption_len"] = s.min_caption_len;
  j["max_caption_len"] = s.max_caption_len;
  j["val_per_cluster"] = s.val_per_cluster;
  j["test_per_cluster"] = s.test_per_cluster;
  j["seed"] = s.seed;
  return j;
}

std::vector<std::size_t> parse_sizes(const std::string& list) {
  std::vector<std::size_t> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item.empty() || v == 0) throw UsageError("bad list entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

std::vector<std::string> split_list(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  if (out.empty()) throw UsageError("empty list");
  return out;
}

ordered_json captions_json(const EvalResult& r) {
  ordered_json a = ordered_json::array();
  for (const auto& c : r.captions) {
    ordered_json e;
    e["video_id"] = c.video_id;
    e["caption"] = data::join(c.caption);
    e["score"] = c.score;
    e["forced"] = c.forced;
    e["retrieved"] = c.retrieved;
    a.push_back(std::move(e));
  }
  return a;
}

// Evaluation options shared by generate / evaluate / ablations.
struct EvalArgs {
  std::string data;
  std::string model;
  std::string out;
  std::string split = "test";
  std::optional<std::size_t> topk;
  std::optional<std::size_t> beam;
  std::string corpus = "train";
  std::uint64_t corpus_seed = 1;

  void add(CLI::App* app, bool with_topk, bool with_corpus) {
    app->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    app->add_option("--model", model, "Model checkpoint")->required()->check(CLI::ExistingFile);
    app->add_option("--out", out, "Output directory")->required();
    app->add_option("--split", split, "Split to caption")->check(CLI::IsMember({"train", "val", "test"}));
    app->add_option("--beam", beam, "Beam width")->check(CLI::PositiveNumber);
    if (with_topk) app->add_option("--topk-test", topk, "Retrieved sentences at test time")->check(CLI::PositiveNumber);
    if (with_corpus) app->add_option("--corpus", corpus, "Retrieval corpus: train, fraction:F or oracle");
    app->add_option("--corpus-seed", corpus_seed, "Seed of the corpus subsample");
  }

  EvalOptions options(const Model& m) const {
    EvalOptions o;
    o.split = split;
    o.topk = topk.value_or(m.config.topk_test);
    o.beam = beam.value_or(m.config.beam);
    o.corpus = data::CorpusSpec::parse(corpus);
    o.corpus_seed = corpus_seed;
    return o;
  }

  ordered_json inputs() const {
    return {{"data", data}, {"data_checksum", data::dataset_checksum(data)}, {"model", model},
            {"model_sha256", checkpoint_digest(model)}};
  }
};

ordered_json eval_settings(const EvalOptions& o) {
  return {{"split", o.split}, {"topk_test", o.topk}, {"beam", o.beam}, {"corpus", o.corpus.to_string()},
          {"corpus_seed", o.corpus_seed}};
}

void log_eval_run(const EvalArgs& a, const std::string& command, const Model& m, const ordered_json& settings) {
  ordered_json cfg;
  cfg["model_config"] = m.config.to_json();
  cfg["eval"] = settings;
  log_run(a.out, command, cfg, m.config.hash(), m.config.seed, a.inputs());
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Retrieve-copy-generate video captioning"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  // synth
  data::SyntheticSpec synth;
  std::string synth_out;
  auto* c_synth = app.add_subcommand("synth", "Generate the synthetic clustered benchmark");
  c_synth->add_option("--out", synth_out, "Output directory")->required();
  c_synth->add_option("--seed", synth.seed, "Random seed");
  c_synth->add_option("--clusters", synth.clusters)->check(CLI::PositiveNumber);
  c_synth->add_option("--videos-per-cluster", synth.videos_per_cluster)->check(CLI::PositiveNumber);
  c_synth->add_option("--captions-per-video", synth.captions_per_video)->check(CLI::PositiveNumber);
  c_synth->add_option("--frames", synth.frames)->check(CLI::PositiveNumber);
  c_synth->add_option("--appearance-dim", synth.appearance_dim)->check(CLI::PositiveNumber);
  c_synth->add_option("--motion-dim", synth.motion_dim)->check(CLI::PositiveNumber);
  c_synth->add_option("--noise", synth.noise)->check(CLI::NonNegativeNumber);
  c_synth->add_option("--val-per-cluster", synth.val_per_cluster);
  c_synth->add_option("--test-per-cluster", synth.test_per_cluster);

  // pretrain-retriever
  std::string pre_data, pre_out;
  ConfigArgs pre_cfg;
  auto* c_pre = app.add_subcommand("pretrain-retriever", "Train the video-to-text retriever");
  c_pre->add_option("--data", pre_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_pre->add_option("--out", pre_out, "Output directory")->required();
  pre_cfg.add(c_pre);

  // build-index
  std::string idx_data, idx_retriever, idx_out, idx_corpus = "train";
  std::uint64_t idx_corpus_seed = 1;
  auto* c_idx = app.add_subcommand("build-index", "Embed a sentence corpus with a trained retriever");
  c_idx->add_option("--data", idx_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_idx->add_option("--retriever", idx_retriever, "Retriever checkpoint")->required()->check(CLI::ExistingFile);
  c_idx->add_option("--out", idx_out, "Output directory")->required();
  c_idx->add_option("--corpus", idx_corpus, "Corpus: train, fraction:F or oracle");
  c_idx->add_option("--corpus-seed", idx_corpus_seed, "Seed of the corpus subsample");

  // train
  std::string tr_data, tr_retriever, tr_index, tr_out, tr_mode;
  std::optional<std::size_t> tr_topk;
  ConfigArgs tr_cfg;
  auto* c_train = app.add_subcommand("train", "Train the caption generator");
  c_train->add_option("--data", tr_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_train->add_option("--retriever", tr_retriever, "Retriever checkpoint (fixed and joint modes)")
      ->check(CLI::ExistingFile);
  c_train->add_option("--index", tr_index, "Prebuilt index of the training corpus")->check(CLI::ExistingFile);
  c_train->add_option("--out", tr_out, "Output directory")->required();
  c_train->add_option("--mode", tr_mode, "fixed, joint or baseline")
      ->check(CLI::IsMember({"fixed", "joint", "baseline", "rcg-fixed", "rcg-joint"}));
  c_train->add_option("--topk-train", tr_topk, "Retrieved sentences per training caption")
      ->check(CLI::PositiveNumber);
  tr_cfg.add(c_train);

  // generate / evaluate
  EvalArgs gen_args, ev_args;
  auto* c_gen = app.add_subcommand("generate", "Caption a split with beam search");
  gen_args.add(c_gen, true, true);
  auto* c_eval = app.add_subcommand("evaluate", "Caption a split and score it");
  ev_args.add(c_eval, true, true);

  // ablations
  EvalArgs abk_args, abc_args;
  std::string abk_list = "1,3,5,10,20,30";
  std::string abc_list = "0.25,0.5,0.75,1.0,oracle";
  auto* c_abk = app.add_subcommand("ablate-k", "Sweep the number of test-time retrieved sentences");
  abk_args.add(c_abk, false, true);
  c_abk->add_option("--ks", abk_list, "Comma-separated k values");
  auto* c_abc = app.add_subcommand("ablate-corpus", "Sweep the retrieval corpus");
  abc_args.add(c_abc, true, false);
  c_abc->add_option("--fractions", abc_list, "Comma-separated training fractions, or 'oracle'");

  // export-copy-weights
  EvalArgs cw_args;
  std::size_t cw_videos = 8;
  auto* c_cw = app.add_subcommand("export-copy-weights", "Dump copy gates and pointer attention");
  cw_args.add(c_cw, true, true);
  c_cw->add_option("--videos", cw_videos, "Videos to export")->check(CLI::PositiveNumber);

  // grad-check
  std::string gc_out;
  double gc_tol = 1e-4;
  double gc_eps = 1e-5;
  auto* c_gc = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  c_gc->add_option("--out", gc_out, "Output directory");
  c_gc->add_option("--tolerance", gc_tol, "Relative error tolerance")->check(CLI::PositiveNumber);
  c_gc->add_option("--eps", gc_eps, "Finite-difference step")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help() << std::flush;
    return kUsage;
  }

  if (c_synth->parsed()) {
    const fs::path out = synth_out;
    prepare_out(out);
    progress("generating synthetic dataset, seed " + std::to_string(synth.seed));
    const auto ds = data::generate_synthetic(synth);
    data::save_dataset(ds, out);
    const std::string checksum = data::dataset_checksum(out);
    const auto cfg = synth_json(synth);
    log_run(out, "synth", cfg, to_hex(sha256(cfg.dump())), synth.seed, ordered_json::object());
    write_json(out / "synth.json", {{"checksum", checksum},
                                    {"videos", ds.videos.size()},
                                    {"train", ds.splits.train.size()},
                                    {"val", ds.splits.val.size()},
                                    {"test", ds.splits.test.size()}});
    progress("dataset checksum " + checksum);
    return kOk;
  }

  if (c_pre->parsed()) {
    const fs::path out = pre_out;
    check_disjoint(out, {pre_data});
    TrainConfig cfg = pre_cfg.resolve({{"mode", "retriever-pretrain"}});
    if (pre_cfg.epochs) cfg.retriever_epochs = *pre_cfg.epochs;
    cfg.validate();
    const auto ds = load_data(pre_data);
    prepare_out(out);
    log_run(out, "pretrain-retriever", cfg.to_json(), cfg.hash(), cfg.seed,
            {{"data", pre_data}, {"data_checksum", data::dataset_checksum(pre_data)}});
    progress("config " + cfg.hash());
    const Model m = pretrain_retriever(cfg, ds, hooks());
    m.save(out / "retriever.ckpt");
    ordered_json rep;
    rep["best_epoch"] = m.best_epoch;
    rep["val"] = retrieval_eval(*m.retriever, m.vocab, ds, "val").to_json();
    rep["test"] = retrieval_eval(*m.retriever, m.vocab, ds, "test").to_json();
    rep["config_hash"] = cfg.hash();
    rep["history"] = m.history;
    write_json(out / "report.json", rep);
    return kOk;
  }

  if (c_idx->parsed()) {
    const fs::path out = idx_out;
    check_disjoint(out, {idx_data, idx_retriever});
    const auto spec = data::CorpusSpec::parse(idx_corpus);
    const auto ds = load_data(idx_data);
    const Model m = load_model(idx_retriever);
    if (!m.retriever) throw DataError("build-index: checkpoint has no retriever");
    prepare_out(out);
    const auto corpus = data::corpus_view(ds, spec, idx_corpus_seed);
    progress("embedding " + std::to_string(corpus.size()) + " sentences");
    const EmbeddingIndex index = build_index(*m.retriever, m.vocab, corpus);
    index.save(out / "index.rcgi");
    ordered_json rep;
    rep["sentences"] = index.size();
    rep["dim"] = index.dim();
    rep["corpus"] = spec.to_string();
    rep["fingerprint"] = to_hex(index.fingerprint);
    rep["val"] = retrieval_eval(*m.retriever, m.vocab, ds, "val").to_json();
    rep["test"] = retrieval_eval(*m.retriever, m.vocab, ds, "test").to_json();
    write_json(out / "index.json", rep);
    ordered_json cfg{{"corpus", spec.to_string()}, {"corpus_seed", idx_corpus_seed}};
    log_run(out, "build-index", cfg, m.config.hash(), idx_corpus_seed,
            {{"data", idx_data},
             {"data_checksum", data::dataset_checksum(idx_data)},
             {"retriever", idx_retriever},
             {"retriever_sha256", checkpoint_digest(idx_retriever)}});
    std::cout << rep["test"].dump() << std::endl;
    return kOk;
  }

  if (c_train->parsed()) {
    const fs::path out = tr_out;
    check_disjoint(out, {tr_data, tr_retriever, tr_index});
    nlohmann::json flags = nlohmann::json::object();
    if (!tr_mode.empty()) flags["mode"] = tr_mode;
    if (tr_topk) flags["topk_train"] = *tr_topk;
    if (tr_cfg.epochs) flags["epochs"] = *tr_cfg.epochs;
    const TrainConfig cfg = tr_cfg.resolve(flags);
    if (cfg.mode == TrainMode::retriever_pretrain) throw UsageError("train: use pretrain-retriever");
    const bool retrieval = cfg.mode != TrainMode::baseline;
    if (retrieval && tr_retriever.empty()) throw UsageError("train: --retriever is required for mode " + to_string(cfg.mode));
    if (!tr_index.empty() && !retrieval) throw UsageError("train: --index is only used with a retriever");
    const auto ds = load_data(tr_data);
    std::optional<Model> source;
    if (!tr_retriever.empty()) source = load_model(tr_retriever);
    std::optional<EmbeddingIndex> index;
    if (!tr_index.empty()) index = EmbeddingIndex::load(tr_index);
    prepare_out(out);
    ordered_json inputs{{"data", tr_data}, {"data_checksum", data::dataset_checksum(tr_data)}};
    if (source) inputs["retriever_sha256"] = checkpoint_digest(tr_retriever);
    if (index) inputs["index_fingerprint"] = to_hex(index->fingerprint);
    log_run(out, "train", cfg.to_json(), cfg.hash(), cfg.seed, inputs);
    progress("config " + cfg.hash() + ", mode " + to_string(cfg.mode));
    const Model m = train_rcg(cfg, ds, source ? &*source : nullptr, index ? &*index : nullptr, hooks());
    m.save(out / "model.ckpt");
    write_json(out / "history.json", m.history);
    EvalOptions o;
    o.split = "val";
    o.topk = cfg.topk_test;
    o.beam = cfg.beam;
    const auto r = evaluate(m, ds, o, hooks());
    write_json(out / "report.json", r.report);
    return kOk;
  }

  if (c_gen->parsed() || c_eval->parsed()) {
    const bool gen = c_gen->parsed();
    const EvalArgs& a = gen ? gen_args : ev_args;
    check_disjoint(a.out, {a.data, a.model});
    const auto ds = load_data(a.data);
    const Model m = load_model(a.model);
    const EvalOptions o = a.options(m);
    prepare_out(a.out);
    log_eval_run(a, gen ? "generate" : "evaluate", m, eval_settings(o));
    const auto r = evaluate(m, ds, o, hooks());
    if (gen) write_json(fs::path(a.out) / "captions.json", captions_json(r));
    write_json(fs::path(a.out) / "report.json", r.report);
    progress("CIDEr " + std::to_string(r.report["cider"].get<double>()));
    return kOk;
  }

  if (c_abk->parsed()) {
    const auto& a = abk_args;
    check_disjoint(a.out, {a.data, a.model});
    const auto ks = parse_sizes(abk_list);
    const auto ds = load_data(a.data);
    const Model m = load_model(a.model);
    EvalOptions o = a.options(m);
    prepare_out(a.out);
    auto settings = eval_settings(o);
    settings.erase("topk_test");
    settings["ks"] = ks;
    log_eval_run(a, "ablate-k", m, settings);
    ordered_json rows = ordered_json::array();
    for (std::size_t k : ks) {
      o.topk = k;
      progress("k = " + std::to_string(k));
      rows.push_back(evaluate(m, ds, o, hooks()).report);
    }
    write_json(fs::path(a.out) / "ablate_k.json", rows);
    return kOk;
  }

  if (c_abc->parsed()) {
    const auto& a = abc_args;
    check_disjoint(a.out, {a.data, a.model});
    std::vector<data::CorpusSpec> specs;
    for (const auto& item : split_list(abc_list)) {
      specs.push_back(item == "oracle" || item == "train" ? data::CorpusSpec::parse(item)
                                                          : data::CorpusSpec::parse("fraction:" + item));
    }
    const auto ds = load_data(a.data);
    const Model m = load_model(a.model);
    EvalOptions o = a.options(m);
    prepare_out(a.out);
    auto settings = eval_settings(o);
    settings.erase("corpus");
    ordered_json names = ordered_json::array();
    for (const auto& s : specs) names.push_back(s.to_string());
    settings["corpora"] = names;
    log_eval_run(a, "ablate-corpus", m, settings);
    ordered_json rows = ordered_json::array();
    for (const auto& s : specs) {
      o.corpus = s;
      progress("corpus " + s.to_string());
      rows.push_back(evaluate(m, ds, o, hooks()).report);
    }
    write_json(fs::path(a.out) / "ablate_corpus.json", rows);
    return kOk;
  }

  if (c_cw->parsed()) {
    const auto& a = cw_args;
    check_disjoint(a.out, {a.data, a.model});
    const auto ds = load_data(a.data);
    const Model m = load_model(a.model);
    const EvalOptions o = a.options(m);
    prepare_out(a.out);
    auto settings = eval_settings(o);
    settings["videos"] = cw_videos;
    log_eval_run(a, "export-copy-weights", m, settings);
    write_json(fs::path(a.out) / "copy_weights.json", copy_weights_report(m, ds, o, cw_videos));
    return kOk;
  }

  if (c_gc->parsed()) {
    progress("running gradient checks");
    const auto rep = gradient_suite(gc_tol, gc_eps);
    for (const auto& c : rep["checks"]) {
      progress((c["passed"].get<bool>() ? "ok   " : "FAIL ") + c["name"].get<std::string>() +
               "  max rel " + std::to_string(c["max_rel_error"].get<double>()));
    }
    if (!gc_out.empty()) {
      prepare_out(gc_out);
      ordered_json cfg{{"tolerance", gc_tol}, {"eps", gc_eps}};
      log_run(gc_out, "grad-check", cfg, to_hex(sha256(cfg.dump())), 0, ordered_json::object());
      write_json(fs::path(gc_out) / "grad_check.json", rep);
    }
    progress("max rel error " + std::to_string(rep["max_rel_error"].get<double>()));
    return rep["passed"].get<bool>() ? kOk : kNumerical;
  }
  return kUsage;
}

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << std::endl;
    return kNumerical;
  } catch (const UsageError& e) {
    std::cerr << "usage: " << e.what() << std::endl;
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage: " << e.what() << std::endl;
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kData;
  }
}
