#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "metaparse/data.hpp"
#include "metaparse/grammar.hpp"
#include "metaparse/graph.hpp"
#include "metaparse/lstm.hpp"

namespace metaparse {

struct ParserConfig {
  std::size_t embed = 64;
  std::size_t hidden = 64;
  std::size_t enc_layers = 1;
  std::size_t act_dim = 32;  // action embeddings; constant summaries match
  std::size_t nt_dim = 32;   // frontier symbol embeddings
  double dropout = 0.5;
  double lr = 0.002;
  std::size_t batch = 16;
  std::size_t epochs = 30;
  std::size_t patience = 5;
  double dev_fraction = 0.1;
  std::size_t max_actions = 100;
};

// Registers all parser parameters under the "par." prefix. Table heights
// follow the grammar: one action row per rule plus one per category, one
// symbol row per nonterminal plus one per category. act_dim must be even
// (constant summaries concatenate two half-size end states).
void register_parser(ModelParams& p, const ParserConfig& cfg, const Grammar& g,
                     const Vocabulary& vocab, Rng& rng);

// Score-table row of an action: rule id, or rule count + category id.
std::size_t action_row(const Grammar& g, const Action& a);
// Embedding row of a frontier symbol: nonterminal id, or nonterminal count +
// category id. Terminals never reach the frontier; passing one throws.
std::size_t symbol_row(const Grammar& g, const Symbol& s);

struct ParserEncoding {
  std::vector<NodeId> per_token;  // bidirectional state above each token
  LstmState dec_init;             // linear map of the concatenated ends
};

ParserEncoding parser_encode(Workspace& ws, const ParserConfig& cfg,
                             const Vocabulary& vocab,
                             const std::vector<std::string>& tokens);

// Name-subword summary of one constant; doubles as its scorer vector and as
// the fed-back input after the constant is instantiated.
NodeId encode_constant(Workspace& ws, const ParserConfig& cfg,
                       const Vocabulary& vocab, const std::string& name);

// One decoder transition on the concatenation [n_t; y_prev; p_parent;
// s_parent], in that order.
struct DecoderInputs {
  NodeId n_t = kNoNode;       // frontier symbol embedding
  NodeId y_prev = kNoNode;    // previous action embedding or constant summary
  NodeId p_parent = kNoNode;  // embedding of the action that created n_t
  NodeId s_parent = kNoNode;  // decoder state at that action's step
};

LstmState decoder_step(Workspace& ws, const ParserConfig& cfg,
                       const LstmState& prev, const DecoderInputs& in);

// Masked distribution over the action score table: probabilities for the
// rows of `legal`, exact zeros elsewhere. Throws on an empty action set.
NodeId action_distribution(Workspace& ws, const ParserConfig& cfg,
                           const Grammar& g, NodeId s_t,
                           const std::vector<Action>& legal);

// Distribution over one category's constants: softmax of v_m . tanh(W s_t).
// An empty constant set is a derivation the grammar should have blocked.
NodeId instantiate_distribution(Workspace& ws, const ParserConfig& cfg,
                                NodeId s_t,
                                std::span<const NodeId> constant_encodings);

// Teacher-forced NLL of the example's gold action sequence: action factors
// at nonterminal steps, constant factors at instantiation steps. Throws on
// a gold sequence the grammar rejects, naming the offending index.
NodeId seq2action_loss(Workspace& ws, const ParserConfig& cfg,
                       const Grammar& g, const Vocabulary& vocab,
                       const Example& ex);

struct ParseOutcome {
  bool ok = false;  // false: budget exhausted or no action available
  std::vector<Action> actions;
  std::vector<std::string> surface;
};

// Greedy argmax decode under the grammar mask; ties break toward the
// canonically first action. Failure is a result state, never an exception.
ParseOutcome parse_greedy(const ModelParams& p, const ParserConfig& cfg,
                          const Grammar& g, const Vocabulary& vocab,
                          const std::vector<std::string>& utterance,
                          const ContextEnv& context);

struct ParserTrainLog {
  std::vector<double> train_nll;  // mean per-action NLL per epoch
  std::vector<double> dev_nll;
  std::size_t best_epoch = 0;
};

// Adam on the mean teacher-forced NLL; same dev-tail early stopping and
// best-epoch restore scheme as the retriever trainer.
ParserTrainLog train_parser(const Dataset& ds, ModelParams& p,
                            const ParserConfig& cfg, const Vocabulary& vocab,
                            Rng& rng, std::ostream* log = nullptr);

}  // namespace metaparse
