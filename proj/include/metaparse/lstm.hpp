#pragma once

#include <string>
#include <vector>

#include "metaparse/graph.hpp"
#include "metaparse/params.hpp"

namespace metaparse {

// One LSTM cell's parameter names share a dotted prefix, e.g.
// "enc.l0.fwd.Wi". Gate order throughout: input, forget, cell, output.
struct LstmCellSpec {
  std::string prefix;
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
};

struct LstmState {
  NodeId h = kNoNode;
  NodeId c = kNoNode;
};

void register_lstm(ModelParams& p, const LstmCellSpec& spec, Rng& rng);

LstmState zero_state(Workspace& ws, std::size_t hidden_size);

// h' = o  tanh(c'), c' = f  c + i  g. Dropout is the caller's business;
// the cell itself is deterministic.
LstmState lstm_cell(Workspace& ws, const LstmCellSpec& spec, NodeId x,
                    const LstmState& prev);

// Single-layer scan over the sequence (right to left when reverse). Output
// index i always holds the state produced at token i. Inputs pass through
// workspace dropout. Zero initial state unless one is given.
std::vector<NodeId> lstm_run(Workspace& ws, const LstmCellSpec& spec,
                             const std::vector<NodeId>& inputs, bool reverse,
                             const LstmState& init = LstmState{});

// Unidirectional multi-layer stack, stepped one input at a time (decoders).
struct StackedLstmSpec {
  std::string prefix;
  std::size_t layers = 1;
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;

  LstmCellSpec layer(std::size_t k) const {
    return {prefix + ".l" + std::to_string(k),
            k == 0 ? input_size : hidden_size, hidden_size};
  }
};

void register_stacked_lstm(ModelParams& p, const StackedLstmSpec& spec,
                           Rng& rng);

std::vector<LstmState> zero_states(Workspace& ws, const StackedLstmSpec& spec);

// Splits one packed vector of length layers*2*hidden into per-layer (h0, c0),
// h first within each layer slice. Used to inject encoder/latent summaries
// as decoder initial states.
std::vector<LstmState> inject_states(Workspace& ws, const StackedLstmSpec& spec,
                                     NodeId packed);

// Advances every layer by one step; layer k consumes layer k-1's new output.
// Each layer input passes through dropout. Returns the top-layer h.
NodeId stacked_lstm_step(Workspace& ws, const StackedLstmSpec& spec, NodeId x,
                         std::vector<LstmState>& states);

// Bidirectional multi-layer encoder. Layer k's input is layer k-1's
// per-token forward/backward concatenation.
struct BiLstmSpec {
  std::string prefix;
  std::size_t layers = 1;
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;

  LstmCellSpec layer(std::size_t k, bool forward) const {
    return {prefix + ".l" + std::to_string(k) + (forward ? ".fwd" : ".bwd"),
            k == 0 ? input_size : 2 * hidden_size, hidden_size};
  }
};

void register_bilstm(ModelParams& p, const BiLstmSpec& spec, Rng& rng);

struct EncoderOutput {
  std::vector<NodeId> per_token;  // position i: [forward_i ; backward_i]
  NodeId fwd_last = kNoNode;      // top-layer forward state at the last token
  NodeId bwd_first = kNoNode;     // top-layer backward state at the first token

  NodeId last_token() const { return per_token.back(); }
};

EncoderOutput bilstm_encode(Workspace& ws, const BiLstmSpec& spec,
                            const std::vector<NodeId>& tokens);

// [fwd_last ; bwd_first] summary.
NodeId both_ends(Workspace& ws, const EncoderOutput& enc);

}  // namespace metaparse
