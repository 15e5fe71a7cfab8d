#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "metaparse/experiment.hpp"
#include "metaparse/metalearn.hpp"
#include "metaparse/synthetic.hpp"

using namespace metaparse;

namespace {

struct CliState {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  bool seed_given = false;
  bool out_given = false;

  // gen-synthetic
  std::string grammar_path;
  std::size_t examples = 600;
  double ambiguity = 0.5;
  std::size_t context_patterns = 12;
  std::size_t test_count = 0;

  // dataset/artifact overrides
  std::string train_path;
  std::string test_path;
  std::string predictions_path;
  std::string mode;

  // retrieve
  std::string query_id;
  std::size_t k = 5;
  bool utterance_only = false;
};

ExperimentConfig effective_config(const CliState& st) {
  ExperimentConfig cfg;
  if (!st.config_path.empty()) cfg = load_experiment_config(st.config_path);
  if (st.seed_given) cfg.seed = st.seed;
  if (st.out_given) cfg.out_dir = st.out_dir;
  if (!st.train_path.empty()) cfg.train_path = st.train_path;
  if (!st.test_path.empty()) cfg.test_path = st.test_path;
  if (!st.mode.empty()) cfg.mode = st.mode;
  return cfg;
}

Dataset load_train(const ExperimentConfig& cfg) {
  if (cfg.train_path.empty())
    throw std::invalid_argument(
        "a training dataset is required (--train or config key 'train')");
  return load_dataset(cfg.train_path);
}

int cmd_gen_synthetic(const CliState& st) {
  ExperimentConfig cfg = effective_config(st);
  if (st.grammar_path.empty())
    throw std::invalid_argument("gen-synthetic: --grammar is required");
  if (st.test_count >= st.examples)
    throw std::invalid_argument(
        "gen-synthetic: --test-count must be smaller than --examples");

  SyntheticTaskConfig scfg;
  scfg.examples = st.examples;
  scfg.ambiguity = st.ambiguity;
  scfg.context_patterns = st.context_patterns;
  scfg.seed = cfg.seed;
  Grammar g = load_grammar_file(st.grammar_path);

  // The grammar is copied next to the dataset and referenced by file name,
  // so the generated directory stays relocatable.
  std::filesystem::create_directories(cfg.out_dir);
  std::string grammar_name =
      std::filesystem::path(st.grammar_path).filename().string();
  std::filesystem::copy_file(
      st.grammar_path, cfg.out_dir + "/" + grammar_name,
      std::filesystem::copy_options::overwrite_existing);
  Dataset all = generate_synthetic(scfg, g, grammar_name);
  if (st.test_count == 0) {
    std::string path = cfg.out_dir + "/train.jsonl";
    save_dataset(all, path);
    std::cout << "wrote " << path << " (" << all.examples.size()
              << " examples)\n";
    return 0;
  }
  auto [train, test] = split_tail(all, st.test_count);
  save_dataset(train, cfg.out_dir + "/train.jsonl");
  save_dataset(test, cfg.out_dir + "/test.jsonl");
  std::cout << "wrote " << cfg.out_dir << "/train.jsonl ("
            << train.examples.size() << " examples)\n";
  std::cout << "wrote " << cfg.out_dir << "/test.jsonl ("
            << test.examples.size() << " examples)\n";
  return 0;
}

int cmd_train_retriever(const CliState& st) {
  ExperimentConfig cfg = effective_config(st);
  Dataset train = load_train(cfg);
  Vocabulary vocab = build_vocab(train.examples, cfg.vocab_min_count);
  ExperimentPaths paths{cfg.out_dir};
  std::filesystem::create_directories(cfg.out_dir);
  stage_train_retriever(cfg, train, vocab, paths, false, &std::cout);
  return 0;
}

int cmd_build_index(const CliState& st) {
  ExperimentConfig cfg = effective_config(st);
  Dataset train = load_train(cfg);
  Vocabulary vocab = build_vocab(train.examples, cfg.vocab_min_count);
  ExperimentPaths paths{cfg.out_dir};
  if (!std::filesystem::exists(paths.retriever_ckpt()))
    throw std::runtime_error("build-index: missing " + paths.retriever_ckpt() +
                             " (run train-retriever first)");
  ModelParams rp = load_checkpoint(paths.retriever_ckpt());
  stage_build_index(cfg, train, rp, vocab, paths, false, &std::cout);
  return 0;
}

int cmd_retrieve(const CliState& st) {
  ExperimentConfig cfg = effective_config(st);
  Dataset train = load_train(cfg);
  Vocabulary vocab = build_vocab(train.examples, cfg.vocab_min_count);
  ExperimentPaths paths{cfg.out_dir};
  ModelParams rp = load_checkpoint(paths.retriever_ckpt());
  RetrievalIndex index = load_index(paths.index_file());

  const Example* query = nullptr;
  for (const Example& ex : train.examples)
    if (ex.id == st.query_id) query = &ex;
  if (query == nullptr)
    throw std::invalid_argument("retrieve: id " + st.query_id +
                                " is not in " + cfg.train_path);

  LatentCode code = encode_example(rp, cfg.retriever, vocab, *query);
  DistanceKind kind = st.utterance_only ? DistanceKind::kUtteranceOnly
                                        : DistanceKind::kFull;
  std::vector<Retrieved> hits =
      retrieve(index, code, query->id, st.k, kind);
  std::size_t rank = 1;
  for (const Retrieved& hit : hits)
    std::cout << rank++ << "\t" << hit.id << "\t" << hit.distance << "\n";
  return 0;
}

int cmd_train_parser(const CliState& st) {
  ExperimentConfig cfg = effective_config(st);
  cfg.mode = "s2a";
  Dataset train = load_train(cfg);
  Vocabulary vocab = build_vocab(train.examples, cfg.vocab_min_count);
  ExperimentPaths paths{cfg.out_dir};
  std::filesystem::create_directories(cfg.out_dir);
  stage_train_parser(cfg, train, RetrievalIndex{}, vocab, paths, false,
                     &std::cout);
  return 0;
}

int cmd_meta_train(const CliState& st) {
  ExperimentConfig cfg = effective_config(st);
  cfg.mode = "s2a+maml";
  Dataset train = load_train(cfg);
  Vocabulary vocab = build_vocab(train.examples, cfg.vocab_min_count);
  ExperimentPaths paths{cfg.out_dir};
  if (!std::filesystem::exists(paths.index_file()))
    throw std::runtime_error("meta-train: missing " + paths.index_file() +
                             " (run build-index first)");
  RetrievalIndex index = load_index(paths.index_file());
  std::filesystem::create_directories(cfg.out_dir);
  stage_train_parser(cfg, train, index, vocab, paths, false, &std::cout);
  return 0;
}

int cmd_predict(const CliState& st) {
  ExperimentConfig cfg = effective_config(st);
  validate_experiment_config(cfg);
  Dataset train = load_train(cfg);
  if (cfg.test_path.empty())
    throw std::invalid_argument(
        "predict: a test dataset is required (--test or config key 'test')");
  Dataset test = load_dataset(cfg.test_path);
  Vocabulary vocab = build_vocab(train.examples, cfg.vocab_min_count);
  ExperimentPaths paths{cfg.out_dir};

  const bool wants_maml =
      cfg.mode == "s2a+maml" || cfg.mode == "s2a+maml-nofinetune";
  ModelParams rp;
  RetrievalIndex index;
  if (cfg.mode != "s2a") {
    rp = load_checkpoint(paths.retriever_ckpt());
    index = load_index(paths.index_file());
  }
  ModelParams parser_params;
  if (cfg.mode != "retrieval-only")
    parser_params =
        load_checkpoint(paths.parser_ckpt(wants_maml ? "maml" : "s2a"));

  std::vector<PredictionRecord> preds =
      stage_predict(cfg, train, test, parser_params, rp, index, vocab);
  write_predictions(paths.predictions(cfg.mode), preds);
  std::cout << "predict: wrote " << paths.predictions(cfg.mode) << "\n";
  return 0;
}

int cmd_evaluate(const CliState& st) {
  ExperimentConfig cfg = effective_config(st);
  if (st.predictions_path.empty())
    throw std::invalid_argument("evaluate: --predictions is required");
  if (cfg.test_path.empty())
    throw std::invalid_argument(
        "evaluate: a test dataset is required (--test or config key 'test')");
  std::vector<PredictionRecord> preds =
      read_predictions(st.predictions_path);
  Dataset test = load_dataset(cfg.test_path);
  EvalReport report = evaluate_predictions(preds, test.examples, cfg.mode);
  ExperimentPaths paths{cfg.out_dir};
  std::filesystem::create_directories(cfg.out_dir);
  write_report(report, paths.report_txt(cfg.mode),
               paths.report_json(cfg.mode));
  std::cout << "examples " << report.rows.size() << "\n"
            << "exact_match_pct " << report.exact_pct << "\n"
            << "corpus_bleu " << report.corpus_bleu << "\n"
            << "failures " << report.failures << "\n";
  return 0;
}

int cmd_run_experiment(const CliState& st) {
  ExperimentConfig cfg = effective_config(st);
  EvalReport report = run_experiment(cfg, &std::cout);
  std::cout << "mode " << report.mode << " exact_match_pct "
            << report.exact_pct << " corpus_bleu " << report.corpus_bleu
            << " failures " << report.failures << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"retrieval-coupled meta-learning for semantic parsing"};
  app.require_subcommand(1);
  CliState st;

  app.add_option("--config", st.config_path,
                 "flat key=value experiment config file");
  auto* seed_opt = app.add_option("--seed", st.seed, "master rng seed");
  auto* out_opt = app.add_option("--out", st.out_dir,
                                 "output directory for artifacts");

  auto* gen = app.add_subcommand("gen-synthetic",
                                 "generate a context-dependent dataset");
  gen->add_option("--grammar", st.grammar_path, "grammar file")->required();
  gen->add_option("--examples", st.examples, "total examples");
  gen->add_option("--ambiguity", st.ambiguity,
                  "fraction of context-dependent utterances");
  gen->add_option("--context-patterns", st.context_patterns,
                  "distinct context environments");
  gen->add_option("--test-count", st.test_count,
                  "tail examples split into test.jsonl");

  auto* tr = app.add_subcommand("train-retriever",
                                "train the variational retriever");
  tr->add_option("--train", st.train_path, "training dataset");

  auto* bi = app.add_subcommand("build-index",
                                "encode the training set into an index");
  bi->add_option("--train", st.train_path, "training dataset");

  auto* rv = app.add_subcommand("retrieve",
                                "query the index for nearest neighbors");
  rv->add_option("--train", st.train_path, "training dataset");
  rv->add_option("--id", st.query_id, "query example id")->required();
  rv->add_option("--k", st.k, "neighbors to print");
  rv->add_flag("--utterance-only", st.utterance_only,
               "ignore the context half of the distance");

  auto* tp = app.add_subcommand("train-parser",
                                "train the plain seq2action parser");
  tp->add_option("--train", st.train_path, "training dataset");

  auto* mt = app.add_subcommand("meta-train",
                                "meta-train the parser with retrieval");
  mt->add_option("--train", st.train_path, "training dataset");

  auto* pr = app.add_subcommand("predict", "decode a test set");
  pr->add_option("--train", st.train_path, "training dataset");
  pr->add_option("--test", st.test_path, "test dataset");
  pr->add_option("--mode", st.mode,
                 "s2a | s2a+maml | s2a+maml-nofinetune | retrieval-only");

  auto* ev = app.add_subcommand("evaluate",
                                "score a predictions file against gold");
  ev->add_option("--predictions", st.predictions_path, "predictions file")
      ->required();
  ev->add_option("--test", st.test_path, "test dataset");
  ev->add_option("--mode", st.mode, "mode label for the report");

  auto* rx = app.add_subcommand("run-experiment",
                                "run the full stage chain for one mode");
  rx->add_option("--mode", st.mode, "override the config's mode");

  for (CLI::App* sub : {gen, tr, bi, rv, tp, mt, pr, ev, rx})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  st.seed_given = seed_opt->count() > 0;
  st.out_given = out_opt->count() > 0;

  try {
    if (gen->parsed()) return cmd_gen_synthetic(st);
    if (tr->parsed()) return cmd_train_retriever(st);
    if (bi->parsed()) return cmd_build_index(st);
    if (rv->parsed()) return cmd_retrieve(st);
    if (tp->parsed()) return cmd_train_parser(st);
    if (mt->parsed()) return cmd_meta_train(st);
    if (pr->parsed()) return cmd_predict(st);
    if (ev->parsed()) return cmd_evaluate(st);
    if (rx->parsed()) return cmd_run_experiment(st);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
