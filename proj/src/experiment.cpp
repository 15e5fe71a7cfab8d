#include "metaparse/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "metaparse/metrics.hpp"

namespace metaparse {

namespace {

// Stage-distinct rng streams so reusing one stage's artifact never shifts
// another stage's draws.
constexpr std::uint64_t kRetrieverSalt = 0x52455452;
constexpr std::uint64_t kParserSalt = 0x50415253;
constexpr std::uint64_t kMetaSalt = 0x4D455441;

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: " + key + ": not an integer: " + v);
  }
  if (pos != v.size())
    throw std::invalid_argument("config: " + key + ": not an integer: " + v);
  return out;
}

double parse_f64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: " + key + ": not a number: " + v);
  }
  if (pos != v.size())
    throw std::invalid_argument("config: " + key + ": not a number: " + v);
  return out;
}

std::string action_token(const Action& a) {
  if (a.kind == Action::Kind::kApply) return "A" + std::to_string(a.rule);
  return "I" + std::to_string(a.category) + ":" + std::to_string(a.constant);
}

Action parse_action_token(const std::string& tok) {
  if (tok.size() < 2)
    throw std::invalid_argument("predictions: bad action token: " + tok);
  if (tok[0] == 'A')
    return apply_action_of(parse_u64("action", tok.substr(1)));
  if (tok[0] == 'I') {
    std::size_t colon = tok.find(':');
    if (colon == std::string::npos || colon + 1 >= tok.size())
      throw std::invalid_argument("predictions: bad action token: " + tok);
    return instantiate_action_of(
        parse_u64("action", tok.substr(1, colon - 1)),
        parse_u64("action", tok.substr(colon + 1)));
  }
  throw std::invalid_argument("predictions: bad action token: " + tok);
}

void check_field(const std::string& what, const std::string& value) {
  if (value.empty())
    throw std::invalid_argument("predictions: empty " + what);
  if (value.find_first_of(" \t\n") != std::string::npos)
    throw std::invalid_argument("predictions: whitespace in " + what + ": " +
                                value);
}

std::vector<std::string> split_tokens(const std::string& field) {
  std::vector<std::string> out;
  std::istringstream in(field);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

}  // namespace

void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                        const std::string& value) {
  if (key == "train") {
    cfg.train_path = value;
  } else if (key == "test") {
    cfg.test_path = value;
  } else if (key == "mode") {
    cfg.mode = value;
  } else if (key == "seed") {
    cfg.seed = parse_u64(key, value);
  } else if (key == "out_dir") {
    cfg.out_dir = value;
  } else if (key == "vocab_min_count") {
    cfg.vocab_min_count = parse_u64(key, value);
  } else if (key == "embed") {
    cfg.retriever.embed = parse_u64(key, value);
    cfg.parser.embed = cfg.retriever.embed;
  } else if (key == "hidden") {
    cfg.retriever.hidden = parse_u64(key, value);
    cfg.parser.hidden = cfg.retriever.hidden;
  } else if (key == "enc_layers") {
    cfg.retriever.enc_layers = parse_u64(key, value);
    cfg.parser.enc_layers = cfg.retriever.enc_layers;
  } else if (key == "dec_layers") {
    cfg.retriever.dec_layers = parse_u64(key, value);
  } else if (key == "dropout") {
    cfg.retriever.dropout = parse_f64(key, value);
    cfg.parser.dropout = cfg.retriever.dropout;
  } else if (key == "lr") {
    cfg.retriever.lr = parse_f64(key, value);
    cfg.parser.lr = cfg.retriever.lr;
  } else if (key == "batch") {
    cfg.retriever.batch = parse_u64(key, value);
    cfg.parser.batch = cfg.retriever.batch;
  } else if (key == "epochs") {
    cfg.retriever.epochs = parse_u64(key, value);
    cfg.parser.epochs = cfg.retriever.epochs;
  } else if (key == "patience") {
    cfg.retriever.patience = parse_u64(key, value);
    cfg.parser.patience = cfg.retriever.patience;
  } else if (key == "dev_fraction") {
    cfg.retriever.dev_fraction = parse_f64(key, value);
    cfg.parser.dev_fraction = cfg.retriever.dev_fraction;
  } else if (key == "retriever_lr") {
    cfg.retriever.lr = parse_f64(key, value);
  } else if (key == "retriever_batch") {
    cfg.retriever.batch = parse_u64(key, value);
  } else if (key == "retriever_epochs") {
    cfg.retriever.epochs = parse_u64(key, value);
  } else if (key == "retriever_patience") {
    cfg.retriever.patience = parse_u64(key, value);
  } else if (key == "retriever_dev_fraction") {
    cfg.retriever.dev_fraction = parse_f64(key, value);
  } else if (key == "parser_lr") {
    cfg.parser.lr = parse_f64(key, value);
  } else if (key == "parser_batch") {
    cfg.parser.batch = parse_u64(key, value);
  } else if (key == "parser_epochs") {
    cfg.parser.epochs = parse_u64(key, value);
  } else if (key == "parser_patience") {
    cfg.parser.patience = parse_u64(key, value);
  } else if (key == "parser_dev_fraction") {
    cfg.parser.dev_fraction = parse_f64(key, value);
  } else if (key == "latent_half") {
    cfg.retriever.latent_half = parse_u64(key, value);
  } else if (key == "kappa") {
    cfg.retriever.kappa = parse_f64(key, value);
  } else if (key == "act_dim") {
    cfg.parser.act_dim = parse_u64(key, value);
  } else if (key == "nt_dim") {
    cfg.parser.nt_dim = parse_u64(key, value);
  } else if (key == "max_actions") {
    cfg.parser.max_actions = parse_u64(key, value);
  } else if (key == "alpha") {
    cfg.meta.alpha = parse_f64(key, value);
  } else if (key == "beta") {
    cfg.meta.beta = parse_f64(key, value);
  } else if (key == "k_support") {
    cfg.meta.k_support = parse_u64(key, value);
  } else if (key == "test_batch") {
    cfg.meta.test_batch = parse_u64(key, value);
  } else if (key == "inner_steps") {
    cfg.meta.inner_steps = parse_u64(key, value);
  } else if (key == "meta_iterations") {
    cfg.meta.iterations = parse_u64(key, value);
  } else {
    throw std::invalid_argument("config: unknown key: " + key);
  }
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  ExperimentConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  ": empty key");
    apply_config_entry(cfg, key, value);
  }
  return cfg;
}

void validate_experiment_config(const ExperimentConfig& cfg) {
  static const std::set<std::string> kModes = {
      "s2a", "s2a+maml", "s2a+maml-nofinetune", "retrieval-only"};
  if (kModes.count(cfg.mode) == 0)
    throw std::invalid_argument("config: unknown mode: " + cfg.mode);
  if (cfg.train_path.empty())
    throw std::invalid_argument("config: train dataset path is required");
  if (cfg.test_path.empty())
    throw std::invalid_argument("config: test dataset path is required");
  if (cfg.out_dir.empty())
    throw std::invalid_argument("config: out_dir is required");
}

std::string ExperimentPaths::retriever_ckpt() const {
  return out_dir + "/retriever.ckpt";
}
std::string ExperimentPaths::retriever_log() const {
  return out_dir + "/retriever-train.log";
}
std::string ExperimentPaths::index_file() const {
  return out_dir + "/index.vmf";
}
std::string ExperimentPaths::parser_ckpt(const std::string& mode) const {
  return out_dir + "/parser-" + mode + ".ckpt";
}
std::string ExperimentPaths::parser_log(const std::string& mode) const {
  return out_dir + "/parser-" + mode + ".log";
}
std::string ExperimentPaths::predictions(const std::string& mode) const {
  return out_dir + "/predictions-" + mode + ".tsv";
}
std::string ExperimentPaths::report_txt(const std::string& mode) const {
  return out_dir + "/report-" + mode + ".txt";
}
std::string ExperimentPaths::report_json(const std::string& mode) const {
  return out_dir + "/report-" + mode + ".json";
}

void write_predictions(const std::string& path,
                       const std::vector<PredictionRecord>& preds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("predictions: cannot write " + path);
  for (const PredictionRecord& p : preds) {
    check_field("id", p.id);
    out << p.id << '\t' << (p.ok ? "ok" : "failed") << '\t';
    for (std::size_t i = 0; i < p.actions.size(); ++i) {
      if (i) out << ' ';
      out << action_token(p.actions[i]);
    }
    out << '\t';
    for (std::size_t i = 0; i < p.surface.size(); ++i) {
      check_field("surface token", p.surface[i]);
      if (i) out << ' ';
      out << p.surface[i];
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("predictions: write failed: " + path);
}

std::vector<PredictionRecord> read_predictions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("predictions: cannot open " + path);
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == '\t') {
        fields.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (fields.size() != 4)
      throw std::invalid_argument("predictions: line " +
                                  std::to_string(lineno) +
                                  ": expected 4 tab-separated fields");
    PredictionRecord rec;
    rec.id = fields[0];
    if (fields[1] == "ok") {
      rec.ok = true;
    } else if (fields[1] == "failed") {
      rec.ok = false;
    } else {
      throw std::invalid_argument("predictions: line " +
                                  std::to_string(lineno) + ": bad status " +
                                  fields[1]);
    }
    for (const std::string& tok : split_tokens(fields[2]))
      rec.actions.push_back(parse_action_token(tok));
    rec.surface = split_tokens(fields[3]);
    out.push_back(std::move(rec));
  }
  return out;
}

EvalReport evaluate_predictions(const std::vector<PredictionRecord>& preds,
                                const std::vector<Example>& gold,
                                const std::string& mode) {
  if (preds.size() != gold.size())
    throw std::invalid_argument("evaluate: " + std::to_string(preds.size()) +
                                " predictions for " +
                                std::to_string(gold.size()) + " examples");
  EvalReport report;
  report.mode = mode;
  std::vector<SentencePair> corpus;
  double exact_sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].id != gold[i].id)
      throw std::invalid_argument("evaluate: prediction id " + preds[i].id +
                                  " does not match example " + gold[i].id);
    static const std::vector<std::string> kEmpty;
    const std::vector<std::string>& hyp = preds[i].ok ? preds[i].surface
                                                      : kEmpty;
    EvalReport::Row row;
    row.id = preds[i].id;
    row.exact = preds[i].ok && exact_match(preds[i].surface, gold[i].surface);
    row.bleu = bleu4({{hyp, gold[i].surface}});
    row.status = preds[i].ok ? "ok" : "failed";
    if (!preds[i].ok) ++report.failures;
    exact_sum += row.exact ? 1.0 : 0.0;
    corpus.push_back({hyp, gold[i].surface});
    report.rows.push_back(std::move(row));
  }
  report.exact_pct =
      preds.empty() ? 0.0
                    : 100.0 * exact_sum / static_cast<double>(preds.size());
  report.corpus_bleu = corpus.empty() ? 0.0 : bleu4(corpus);
  return report;
}

void write_report(const EvalReport& report, const std::string& txt_path,
                  const std::string& json_path) {
  {
    std::ofstream out(txt_path, std::ios::binary);
    if (!out) throw std::runtime_error("report: cannot write " + txt_path);
    out << "mode " << report.mode << "\n";
    out << "examples " << report.rows.size() << "\n";
    out << "exact_match_pct " << report.exact_pct << "\n";
    out << "corpus_bleu " << report.corpus_bleu << "\n";
    out << "failures " << report.failures << "\n";
    for (const EvalReport::Row& row : report.rows)
      out << "example " << row.id << " exact " << (row.exact ? 1 : 0)
          << " bleu " << row.bleu << " status " << row.status << "\n";
  }
  nlohmann::json j;
  j["mode"] = report.mode;
  j["examples"] = report.rows.size();
  j["exact_match_pct"] = report.exact_pct;
  j["corpus_bleu"] = report.corpus_bleu;
  j["failures"] = report.failures;
  j["per_example"] = nlohmann::json::array();
  for (const EvalReport::Row& row : report.rows)
    j["per_example"].push_back({{"id", row.id},
                                {"exact", row.exact},
                                {"bleu", row.bleu},
                                {"status", row.status}});
  std::ofstream out(json_path, std::ios::binary);
  if (!out) throw std::runtime_error("report: cannot write " + json_path);
  out << j.dump(2) << "\n";
}

std::pair<Dataset, Dataset> split_tail(const Dataset& ds,
                                       std::size_t n_test) {
  if (n_test == 0 || n_test >= ds.examples.size())
    throw std::invalid_argument(
        "split_tail: test size must leave at least one training example");
  Dataset train;
  train.grammar_path = ds.grammar_path;
  train.grammar = ds.grammar;
  Dataset test = train;
  std::size_t n_train = ds.examples.size() - n_test;
  train.examples.assign(ds.examples.begin(),
                        ds.examples.begin() + static_cast<long>(n_train));
  test.examples.assign(ds.examples.begin() + static_cast<long>(n_train),
                       ds.examples.end());
  return {std::move(train), std::move(test)};
}

ModelParams stage_train_retriever(const ExperimentConfig& cfg,
                                  const Dataset& train,
                                  const Vocabulary& vocab,
                                  const ExperimentPaths& paths,
                                  bool reuse_existing, std::ostream* log) {
  if (reuse_existing && std::filesystem::exists(paths.retriever_ckpt())) {
    if (log) *log << "train-retriever: reusing " << paths.retriever_ckpt()
                  << "\n";
    return load_checkpoint(paths.retriever_ckpt());
  }
  ModelParams params;
  Rng rng(cfg.seed ^ kRetrieverSalt);
  register_retriever(params, cfg.retriever, vocab, rng);
  std::ofstream stage_log(paths.retriever_log());
  train_retriever(train, params, cfg.retriever, vocab, rng, &stage_log);
  save_checkpoint(paths.retriever_ckpt(), params);
  if (log) *log << "train-retriever: wrote " << paths.retriever_ckpt()
                << "\n";
  return params;
}

RetrievalIndex stage_build_index(const ExperimentConfig& cfg,
                                 const Dataset& train,
                                 const ModelParams& retriever_params,
                                 const Vocabulary& vocab,
                                 const ExperimentPaths& paths,
                                 bool reuse_existing, std::ostream* log) {
  if (reuse_existing && std::filesystem::exists(paths.index_file())) {
    if (log) *log << "build-index: reusing " << paths.index_file() << "\n";
    return load_index(paths.index_file());
  }
  RetrievalIndex index =
      build_index(train, retriever_params, cfg.retriever, vocab);
  save_index(index, paths.index_file());
  if (log) *log << "build-index: wrote " << paths.index_file() << "\n";
  return index;
}

ModelParams stage_train_parser(const ExperimentConfig& cfg,
                               const Dataset& train,
                               const RetrievalIndex& index,
                               const Vocabulary& vocab,
                               const ExperimentPaths& paths,
                               bool reuse_existing, std::ostream* log) {
  const bool wants_maml =
      cfg.mode == "s2a+maml" || cfg.mode == "s2a+maml-nofinetune";
  const std::string kind = wants_maml ? "maml" : "s2a";
  const std::string stage_name = wants_maml ? "meta-train" : "train-parser";
  const std::string ckpt = paths.parser_ckpt(kind);
  if (reuse_existing && std::filesystem::exists(ckpt)) {
    if (log) *log << stage_name << ": reusing " << ckpt << "\n";
    return load_checkpoint(ckpt);
  }

  // The plain supervised parser is the root of the lineage: the maml modes
  // meta-train starting from its weights, so its checkpoint is built (or
  // reused) first and shared across all three s2a* modes in one out_dir.
  // For the maml modes the base is a prerequisite, not the artifact this
  // stage owns, so it is reused when present even if the caller asked for a
  // fresh meta-training run.
  const std::string base_ckpt = paths.parser_ckpt("s2a");
  ModelParams base;
  if ((reuse_existing || wants_maml) && std::filesystem::exists(base_ckpt)) {
    if (log) *log << "train-parser: reusing " << base_ckpt << "\n";
    base = load_checkpoint(base_ckpt);
  } else {
    std::ofstream base_log(paths.parser_log("s2a"));
    Rng rng(cfg.seed ^ kParserSalt);
    register_parser(base, cfg.parser, train.grammar, vocab, rng);
    train_parser(train, base, cfg.parser, vocab, rng, &base_log);
    save_checkpoint(base_ckpt, base);
    if (log) *log << "train-parser: wrote " << base_ckpt << "\n";
  }
  if (!wants_maml) return base;

  Rng rng(cfg.seed ^ kMetaSalt);
  std::ofstream stage_log(paths.parser_log(kind));
  ModelParams params = meta_train(train, index, cfg.parser, cfg.meta, vocab,
                                  rng, nullptr, &stage_log, &base);
  save_checkpoint(ckpt, params);
  if (log) *log << stage_name << ": wrote " << ckpt << "\n";
  return params;
}

std::vector<PredictionRecord> stage_predict(const ExperimentConfig& cfg,
                                            const Dataset& train,
                                            const Dataset& test,
                                            const ModelParams& parser_params,
                                            const ModelParams& retriever_params,
                                            const RetrievalIndex& index,
                                            const Vocabulary& vocab) {
  const bool wants_maml =
      cfg.mode == "s2a+maml" || cfg.mode == "s2a+maml-nofinetune";
  std::map<std::string, std::size_t> train_by_id;
  for (std::size_t i = 0; i < train.examples.size(); ++i)
    train_by_id[train.examples[i].id] = i;

  std::vector<PredictionRecord> preds;
  for (const Example& ex : test.examples) {
    PredictionRecord rec;
    rec.id = ex.id;
    if (cfg.mode == "retrieval-only") {
      LatentCode code =
          encode_example(retriever_params, cfg.retriever, vocab, ex);
      std::vector<Retrieved> hits = retrieve(index, code, ex.id, 1);
      if (!hits.empty()) {
        auto pos = train_by_id.find(hits[0].id);
        if (pos == train_by_id.end())
          throw std::runtime_error("retrieved id " + hits[0].id +
                                   " is not in the training set");
        rec.ok = true;
        rec.actions = train.examples[pos->second].actions;
        rec.surface = train.examples[pos->second].surface;
      }
    } else if (wants_maml) {
      AdaptedPrediction out = adapted_predict(
          parser_params, cfg.parser, train, index, retriever_params,
          cfg.retriever, cfg.meta, vocab, ex, cfg.mode == "s2a+maml");
      rec.ok = out.outcome.ok;
      if (rec.ok) {
        rec.actions = out.outcome.actions;
        rec.surface = out.outcome.surface;
      }
    } else {
      ParseOutcome out =
          parse_greedy(parser_params, cfg.parser, train.grammar, vocab,
                       ex.utterance, ex.context);
      rec.ok = out.ok;
      if (rec.ok) {
        rec.actions = out.actions;
        rec.surface = out.surface;
      }
    }
    preds.push_back(std::move(rec));
  }
  return preds;
}

EvalReport run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  validate_experiment_config(cfg);
  ExperimentPaths paths{cfg.out_dir};
  std::filesystem::create_directories(cfg.out_dir);

  auto note = [&](const std::string& line) {
    if (log) *log << line << "\n";
  };
  auto run_stage = [&](const char* name, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      throw std::runtime_error("stage " + std::string(name) + ": " + e.what());
    }
  };

  Dataset train;
  Dataset test;
  run_stage("load-data", [&] {
    train = load_dataset(cfg.train_path);
    test = load_dataset(cfg.test_path);
    if (train.grammar_path != test.grammar_path)
      throw std::invalid_argument("train grammar " + train.grammar_path +
                                  " differs from test grammar " +
                                  test.grammar_path);
  });
  Vocabulary vocab = build_vocab(train.examples, cfg.vocab_min_count);

  const bool wants_maml =
      cfg.mode == "s2a+maml" || cfg.mode == "s2a+maml-nofinetune";
  const bool wants_retriever = cfg.mode != "s2a";
  const bool wants_parser = cfg.mode != "retrieval-only";

  ModelParams retriever_params;
  RetrievalIndex index;
  if (wants_retriever) {
    run_stage("train-retriever", [&] {
      retriever_params =
          stage_train_retriever(cfg, train, vocab, paths, true, log);
    });
    run_stage("build-index", [&] {
      index = stage_build_index(cfg, train, retriever_params, vocab, paths,
                                true, log);
    });
  }

  ModelParams parser_params;
  if (wants_parser) {
    run_stage(wants_maml ? "meta-train" : "train-parser", [&] {
      parser_params =
          stage_train_parser(cfg, train, index, vocab, paths, true, log);
    });
  }

  std::vector<PredictionRecord> preds;
  run_stage("predict", [&] {
    preds = stage_predict(cfg, train, test, parser_params, retriever_params,
                          index, vocab);
    write_predictions(paths.predictions(cfg.mode), preds);
    note("predict: wrote " + paths.predictions(cfg.mode));
  });

  EvalReport report;
  run_stage("evaluate", [&] {
    report = evaluate_predictions(preds, test.examples, cfg.mode);
    write_report(report, paths.report_txt(cfg.mode),
                 paths.report_json(cfg.mode));
    note("evaluate: exact_match_pct " + std::to_string(report.exact_pct) +
         " corpus_bleu " + std::to_string(report.corpus_bleu) + " failures " +
         std::to_string(report.failures));
  });
  return report;
}

}  // namespace metaparse
