#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "metaparse/data.hpp"
#include "metaparse/graph.hpp"
#include "metaparse/vmf.hpp"

namespace metaparse {

struct RetrieverConfig {
  std::size_t embed = 64;
  std::size_t hidden = 64;
  std::size_t enc_layers = 1;
  std::size_t dec_layers = 1;
  std::size_t latent_half = 32;  // per factor; the full code is twice this
  double kappa = 50.0;
  double dropout = 0.5;
  double lr = 0.002;
  std::size_t batch = 16;
  std::size_t epochs = 30;
  std::size_t patience = 5;     // epochs without dev improvement before stop
  double dev_fraction = 0.1;    // tail share held out; 0 disables early stop
};

// Registers all retriever parameters under the "ret." prefix: a shared token
// embedding table, the utterance/subword/member encoders, the two latent
// projection heads, and the reconstruction decoder.
void register_retriever(ModelParams& p, const RetrieverConfig& cfg,
                        const Vocabulary& vocab, Rng& rng);

// Bidirectional encoder state at the last utterance token. Throws on an
// empty utterance.
NodeId encode_utterance(Workspace& ws, const RetrieverConfig& cfg,
                        const Vocabulary& vocab,
                        const std::vector<std::string>& tokens);

// Summary vector of one identifier: camel-case subwords are embedded and run
// through the subword encoder; both end states are concatenated.
NodeId encode_identifier(Workspace& ws, const RetrieverConfig& cfg,
                         const Vocabulary& vocab, const std::string& name);

// Order-invariant context summary. Class members (variables then methods)
// each pass a two-step encoder over their type and name summaries; dialog
// turns reuse the utterance encoder. Member/turn vectors are mean pooled;
// an empty context yields zeros.
NodeId encode_context(Workspace& ws, const RetrieverConfig& cfg,
                      const Vocabulary& vocab, const ContextEnv& env);

struct LatentHeads {
  NodeId mu_x = kNoNode;
  NodeId mu_c = kNoNode;
};

// Unit mean directions for the utterance and context factors. Throws if a
// projection collapses to (near) zero and cannot be normalized.
LatentHeads latent_params(Workspace& ws, const RetrieverConfig& cfg,
                          NodeId h_x, NodeId h_c);

// Teacher-forced log p(target | z). z seeds the decoder stack through a
// linear map; every target token and the trailing end marker is scored.
NodeId reconstruction_logprob(Workspace& ws, const RetrieverConfig& cfg,
                              const Vocabulary& vocab, NodeId z,
                              const std::vector<std::string>& target);

// Mean latent directions for one example (no sampling, no dropout).
LatentCode encode_example(const ModelParams& p, const RetrieverConfig& cfg,
                          const Vocabulary& vocab, const Example& ex);

struct RetrieverTrainLog {
  std::vector<double> train_nll;  // mean per-token NLL per epoch
  std::vector<double> dev_nll;    // same, on the held-out tail
  std::size_t best_epoch = 0;
};

// Adam on the negative reconstruction logprob with one latent draw per
// example per visit. With a dev split, stops after `patience` stale epochs
// and restores the best parameters.
RetrieverTrainLog train_retriever(const Dataset& ds, ModelParams& p,
                                  const RetrieverConfig& cfg,
                                  const Vocabulary& vocab, Rng& rng,
                                  std::ostream* log = nullptr);

// Frozen latent codes for a training set, one row per example.
struct RetrievalIndex {
  std::size_t half = 0;
  double kappa = 0.0;
  std::vector<std::string> ids;
  std::vector<LatentCode> rows;
};

RetrievalIndex build_index(const Dataset& ds, const ModelParams& p,
                           const RetrieverConfig& cfg,
                           const Vocabulary& vocab);

// `<path>` holds packed little-endian f64 rows; `<path>.manifest` is a text
// header plus one id per line.
void save_index(const RetrievalIndex& idx, const std::string& path);
RetrievalIndex load_index(const std::string& path);

struct Retrieved {
  std::string id;
  double distance = 0.0;
};

enum class DistanceKind {
  kFull,           // utterance and context divergences summed
  kUtteranceOnly,  // utterance factor alone
};

// Linear scan over the index, ascending distance, ties broken by id. Rows
// matching exclude_id are skipped; at most K results are returned.
std::vector<Retrieved> retrieve(const RetrievalIndex& idx,
                                const LatentCode& query,
                                const std::string& exclude_id, std::size_t K,
                                DistanceKind kind = DistanceKind::kFull);

}  // namespace metaparse
