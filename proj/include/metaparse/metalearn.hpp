#pragma once

#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "metaparse/data.hpp"
#include "metaparse/params.hpp"
#include "metaparse/parser.hpp"
#include "metaparse/retriever.hpp"
#include "metaparse/rng.hpp"

namespace metaparse {

// First-order meta-learning knobs. alpha == 0 turns every adaptation into
// the identity, which reduces meta-training to plain Adam training on the
// sampled query batches and adapted prediction to a plain greedy parse.
struct MetaConfig {
  double alpha = 0.001;          // inner gradient step size
  double beta = 0.0002;          // outer Adam learning rate
  std::size_t k_support = 5;     // neighbors retrieved per query
  std::size_t test_batch = 10;   // query examples per meta iteration
  std::size_t inner_steps = 1;   // gradient steps per adaptation
  std::size_t iterations = 200;  // outer iterations of meta_train
};

// Scalar loss over a parameter point; when grads is non-null the callee
// fills d(loss)/d(param) for every parameter it touches.
using ParamLossFn = std::function<double(const ModelParams&, Gradients*)>;

// out = theta - alpha * grad, elementwise; theta itself is untouched and
// parameters missing from grad keep their values. Throws std::runtime_error
// on a non-finite gradient entry.
ModelParams gd_step(const ModelParams& theta, const Gradients& grad,
                    double alpha);

// Mean seq2action loss over a batch of examples. When grads is non-null it
// receives the mean gradient. dropout_rng non-null runs the parser in
// training mode (dropout active); null evaluates in inference mode.
double batch_loss(const ModelParams& theta, const ParserConfig& cfg,
                  const Grammar& g, const Vocabulary& vocab,
                  const std::vector<const Example*>& batch, Gradients* grads,
                  Rng* dropout_rng);

// inner_steps plain gradient-descent steps on the mean support loss,
// starting from a copy of theta. alpha == 0 or an empty support set returns
// theta unchanged without evaluating anything.
ModelParams inner_adapt(const ModelParams& theta, const ParserConfig& cfg,
                        const Grammar& g, const Vocabulary& vocab,
                        const std::vector<const Example*>& support,
                        double alpha, std::size_t inner_steps = 1,
                        Rng* dropout_rng = nullptr);

struct MetaStepStats {
  // Support loss before the first inner step; NaN when adaptation was
  // skipped (alpha == 0 or no support closure).
  double inner_loss = std::numeric_limits<double>::quiet_NaN();
  double outer_loss = 0.0;  // query loss at the adapted parameters
  bool adapted = false;
};

// One first-order meta update: adapt a copy of theta on the support loss,
// take the query gradient at the adapted point, and apply that gradient to
// theta itself through Adam with learning rate beta. The adapted copy is
// discarded; treating the adaptation Jacobian as identity is what makes the
// update first-order. An empty support closure or alpha == 0 skips
// adaptation, leaving a plain Adam step on the query loss.
MetaStepStats fomaml_step(ModelParams& theta, AdamState& adam, double beta,
                          double alpha, std::size_t inner_steps,
                          const ParamLossFn& support_loss,
                          const ParamLossFn& query_loss);

struct MetaIterationRecord {
  double inner_loss = std::numeric_limits<double>::quiet_NaN();
  double outer_loss = 0.0;
  double wall_ms = 0.0;
  bool adapted = false;
};

struct MetaTrainLog {
  std::vector<MetaIterationRecord> iterations;
};

// Meta-trains a parser on the training set. Each iteration samples
// test_batch query examples (with replacement), pools the k_support
// neighbors of every query into one support set (deduplicated, sorted by
// id), adapts on it, and updates theta with the query-batch gradient taken
// at the adapted parameters. Queries are looked up in the index by id; a
// query absent from the index contributes no neighbors, and an iteration
// whose pooled support set ends up empty skips adaptation (the log line
// then has inner_loss nan, adapted 0). Dropout is active in both the inner
// and outer passes. With alpha == 0 retrieval is bypassed entirely, so the
// run consumes the rng exactly like plain Adam training on the same query
// batches. theta starts from *init when given (the tensors must match what
// register_parser would build for parser_cfg); otherwise from a fresh
// initialization drawn from rng.
ModelParams meta_train(const Dataset& train, const RetrievalIndex& index,
                       const ParserConfig& parser_cfg,
                       const MetaConfig& meta_cfg, const Vocabulary& vocab,
                       Rng& rng, MetaTrainLog* log = nullptr,
                       std::ostream* out = nullptr,
                       const ModelParams* init = nullptr);

struct AdaptedPrediction {
  ParseOutcome outcome;
  std::vector<std::string> support_ids;  // what the adaptation trained on
};

// Test-time adaptation: encode the query, retrieve k_support neighbors from
// the index, take inner gradient steps on them with dropout off, and decode
// the query greedily under the adapted parameters. theta is untouched.
// finetune == false skips retrieval and adaptation outright, and alpha == 0
// likewise decodes under theta directly.
AdaptedPrediction adapted_predict(const ModelParams& theta,
                                  const ParserConfig& parser_cfg,
                                  const Dataset& train,
                                  const RetrievalIndex& index,
                                  const ModelParams& retr_params,
                                  const RetrieverConfig& retr_cfg,
                                  const MetaConfig& meta_cfg,
                                  const Vocabulary& vocab,
                                  const Example& query, bool finetune = true);

// Index of the candidate action sequence with the smallest edit distance to
// its closest retrieved neighbor. Ties prefer the shorter candidate, then
// the lowest sequence in canonical action order. Candidates must be
// non-empty; with no retrieved sequences the tie-breakers alone decide.
std::size_t filter_spurious(const std::vector<std::vector<Action>>& candidates,
                            const std::vector<std::vector<Action>>& retrieved);

}  // namespace metaparse
