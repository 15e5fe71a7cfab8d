#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "metaparse/data.hpp"
#include "metaparse/metalearn.hpp"
#include "metaparse/parser.hpp"
#include "metaparse/retriever.hpp"

namespace metaparse {

// One experiment run: datasets, mode, seed, and every model hyperparameter,
// loaded from a flat key=value file (# comments, blank lines skipped).
// Generic keys (embed, hidden, dropout, lr, batch, epochs, patience) set
// both the retriever and the parser; prefixed keys (retriever_lr,
// parser_epochs, ...) override one side. Later lines win. Unknown keys are
// a validation error.
struct ExperimentConfig {
  std::string train_path;
  std::string test_path;
  std::string mode = "s2a";  // s2a | s2a+maml | s2a+maml-nofinetune | retrieval-only
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::size_t vocab_min_count = 1;
  RetrieverConfig retriever;
  ParserConfig parser;
  MetaConfig meta;
};

ExperimentConfig load_experiment_config(const std::string& path);
// Applies one key=value pair; shared by the file loader and CLI overrides.
void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                        const std::string& value);
void validate_experiment_config(const ExperimentConfig& cfg);

// Artifact locations inside an experiment's output directory. Modes share
// the retriever, index, and meta-trained parser, so a finished stage is
// reused by later runs pointed at the same directory.
struct ExperimentPaths {
  std::string out_dir;
  std::string retriever_ckpt() const;
  std::string retriever_log() const;
  std::string index_file() const;
  std::string parser_ckpt(const std::string& mode) const;
  std::string parser_log(const std::string& mode) const;
  std::string predictions(const std::string& mode) const;
  std::string report_txt(const std::string& mode) const;
  std::string report_json(const std::string& mode) const;
};

struct PredictionRecord {
  std::string id;
  bool ok = false;
  std::vector<Action> actions;
  std::vector<std::string> surface;
};

// One prediction per line: id, status, space-joined action tokens
// (A<rule> / I<category>:<constant>), space-joined surface tokens, the four
// fields tab-separated. Failed predictions leave the last two fields empty.
void write_predictions(const std::string& path,
                       const std::vector<PredictionRecord>& preds);
std::vector<PredictionRecord> read_predictions(const std::string& path);

struct EvalReport {
  struct Row {
    std::string id;
    bool exact = false;
    double bleu = 0.0;  // sentence-level, smoothed like the corpus score
    std::string status;
  };
  std::string mode;
  std::vector<Row> rows;
  double exact_pct = 0.0;    // mean of per-example exact flags, in percent
  double corpus_bleu = 0.0;  // corpus-level, never a mean of sentence scores
  std::size_t failures = 0;
};

// Scores predictions against gold examples (matched by position; ids must
// agree). Failed predictions count as empty token sequences.
EvalReport evaluate_predictions(const std::vector<PredictionRecord>& preds,
                                const std::vector<Example>& gold,
                                const std::string& mode);

// Line-oriented report plus a JSON twin.
void write_report(const EvalReport& report, const std::string& txt_path,
                  const std::string& json_path);

// Head/tail split for carving a held-out test set from one generated
// dataset; n_test must leave at least one training example.
std::pair<Dataset, Dataset> split_tail(const Dataset& ds, std::size_t n_test);

// Individual pipeline stages, shared by run_experiment and the CLI
// subcommands so both produce identical artifacts. Each trains (or, with
// reuse_existing, loads a previously written) artifact under paths. Stage
// rng streams are derived from cfg.seed independently per stage, so reusing
// one artifact never shifts another stage's draws.
ModelParams stage_train_retriever(const ExperimentConfig& cfg,
                                  const Dataset& train,
                                  const Vocabulary& vocab,
                                  const ExperimentPaths& paths,
                                  bool reuse_existing, std::ostream* log);
RetrievalIndex stage_build_index(const ExperimentConfig& cfg,
                                 const Dataset& train,
                                 const ModelParams& retriever_params,
                                 const Vocabulary& vocab,
                                 const ExperimentPaths& paths,
                                 bool reuse_existing, std::ostream* log);
// Mode-aware: the maml modes meta-train against the index, s2a trains the
// plain parser and ignores it.
ModelParams stage_train_parser(const ExperimentConfig& cfg,
                               const Dataset& train,
                               const RetrievalIndex& index,
                               const Vocabulary& vocab,
                               const ExperimentPaths& paths,
                               bool reuse_existing, std::ostream* log);
// One prediction per test example under cfg.mode; pass only the artifacts
// the mode needs (unused ones may be empty).
std::vector<PredictionRecord> stage_predict(const ExperimentConfig& cfg,
                                            const Dataset& train,
                                            const Dataset& test,
                                            const ModelParams& parser_params,
                                            const ModelParams& retriever_params,
                                            const RetrievalIndex& index,
                                            const Vocabulary& vocab);

// Runs the mode's stage chain (train-retriever, build-index, train or
// meta-train the parser, predict, evaluate), writing every artifact under
// cfg.out_dir. Existing stage artifacts are loaded instead of recomputed
// (noted on the log stream); predictions and reports are always rewritten.
// A stage failure surfaces as std::runtime_error naming the stage.
EvalReport run_experiment(const ExperimentConfig& cfg,
                          std::ostream* log = nullptr);

}  // namespace metaparse
