#include "metaparse/lstm.hpp"

#include <stdexcept>

namespace metaparse {

namespace {

const char* const kGates[] = {"i", "f", "g", "o"};

}  // namespace

void register_lstm(ModelParams& p, const LstmCellSpec& spec, Rng& rng) {
  for (const char* gate : kGates) {
    add_uniform(p, spec.prefix + ".W" + gate,
                {spec.hidden_size, spec.input_size}, rng);
    add_uniform(p, spec.prefix + ".U" + gate,
                {spec.hidden_size, spec.hidden_size}, rng);
    add_zeros(p, spec.prefix + ".b" + gate, {spec.hidden_size});
  }
}

LstmState zero_state(Workspace& ws, std::size_t hidden_size) {
  NodeId z = ws.c(Tensor::zeros({hidden_size}));
  return {z, z};
}

LstmState lstm_cell(Workspace& ws, const LstmCellSpec& spec, NodeId x,
                    const LstmState& prev) {
  if (ws.tape.value(x).numel() != spec.input_size)
    throw std::invalid_argument("lstm_cell " + spec.prefix +
                                ": input size mismatch");
  Tape& t = ws.tape;
  auto gate = [&](const char* name) {
    NodeId a = t.matvec(ws.p(spec.prefix + ".W" + name), x);
    NodeId b = t.matvec(ws.p(spec.prefix + ".U" + name), prev.h);
    return t.add(t.add(a, b), ws.p(spec.prefix + ".b" + name));
  };
  NodeId i = t.sigmoid(gate("i"));
  NodeId f = t.sigmoid(gate("f"));
  NodeId g = t.tanh(gate("g"));
  NodeId o = t.sigmoid(gate("o"));
  NodeId c = t.add(t.mul(f, prev.c), t.mul(i, g));
  NodeId h = t.mul(o, t.tanh(c));
  return {h, c};
}

std::vector<NodeId> lstm_run(Workspace& ws, const LstmCellSpec& spec,
                             const std::vector<NodeId>& inputs, bool reverse,
                             const LstmState& init) {
  if (inputs.empty()) throw std::invalid_argument("lstm_run: empty sequence");
  LstmState state =
      init.h == kNoNode ? zero_state(ws, spec.hidden_size) : init;
  std::vector<NodeId> out(inputs.size());
  const std::size_t n = inputs.size();
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t i = reverse ? n - 1 - step : step;
    state = lstm_cell(ws, spec, ws.dropout(inputs[i]), state);
    out[i] = state.h;
  }
  return out;
}

void register_stacked_lstm(ModelParams& p, const StackedLstmSpec& spec,
                           Rng& rng) {
  for (std::size_t k = 0; k < spec.layers; ++k)
    register_lstm(p, spec.layer(k), rng);
}

std::vector<LstmState> zero_states(Workspace& ws,
                                   const StackedLstmSpec& spec) {
  std::vector<LstmState> states;
  states.reserve(spec.layers);
  for (std::size_t k = 0; k < spec.layers; ++k)
    states.push_back(zero_state(ws, spec.hidden_size));
  return states;
}

std::vector<LstmState> inject_states(Workspace& ws,
                                     const StackedLstmSpec& spec,
                                     NodeId packed) {
  const std::size_t h = spec.hidden_size;
  if (ws.tape.value(packed).numel() != spec.layers * 2 * h)
    throw std::invalid_argument("inject_states: packed state size mismatch");
  std::vector<LstmState> states;
  states.reserve(spec.layers);
  for (std::size_t k = 0; k < spec.layers; ++k) {
    NodeId h0 = ws.tape.slice(packed, k * 2 * h, h);
    NodeId c0 = ws.tape.slice(packed, k * 2 * h + h, h);
    states.push_back({h0, c0});
  }
  return states;
}

NodeId stacked_lstm_step(Workspace& ws, const StackedLstmSpec& spec, NodeId x,
                         std::vector<LstmState>& states) {
  if (states.size() != spec.layers)
    throw std::invalid_argument("stacked_lstm_step: state/layer mismatch");
  NodeId input = x;
  for (std::size_t k = 0; k < spec.layers; ++k) {
    states[k] = lstm_cell(ws, spec.layer(k), ws.dropout(input), states[k]);
    input = states[k].h;
  }
  return input;
}

void register_bilstm(ModelParams& p, const BiLstmSpec& spec, Rng& rng) {
  for (std::size_t k = 0; k < spec.layers; ++k) {
    register_lstm(p, spec.layer(k, true), rng);
    register_lstm(p, spec.layer(k, false), rng);
  }
}

EncoderOutput bilstm_encode(Workspace& ws, const BiLstmSpec& spec,
                            const std::vector<NodeId>& tokens) {
  if (tokens.empty())
    throw std::invalid_argument("bilstm_encode: empty sequence");
  EncoderOutput out;
  std::vector<NodeId> layer_in = tokens;
  for (std::size_t k = 0; k < spec.layers; ++k) {
    std::vector<NodeId> fwd =
        lstm_run(ws, spec.layer(k, true), layer_in, false);
    std::vector<NodeId> bwd =
        lstm_run(ws, spec.layer(k, false), layer_in, true);
    std::vector<NodeId> cat(layer_in.size());
    for (std::size_t i = 0; i < layer_in.size(); ++i) {
      const NodeId parts[] = {fwd[i], bwd[i]};
      cat[i] = ws.tape.concat(parts);
    }
    layer_in = std::move(cat);
    if (k + 1 == spec.layers) {
      out.fwd_last = fwd.back();
      out.bwd_first = bwd.front();
    }
  }
  out.per_token = std::move(layer_in);
  return out;
}

NodeId both_ends(Workspace& ws, const EncoderOutput& enc) {
  const NodeId parts[] = {enc.fwd_last, enc.bwd_first};
  return ws.tape.concat(parts);
}

}  // namespace metaparse
