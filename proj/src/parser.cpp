#include "metaparse/parser.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>

namespace metaparse {

namespace {

BiLstmSpec encoder_spec(const ParserConfig& cfg) {
  return {"par.enc", cfg.enc_layers, cfg.embed, cfg.hidden};
}

BiLstmSpec constant_spec(const ParserConfig& cfg) {
  return {"par.sub", 1, cfg.embed, cfg.act_dim / 2};
}

LstmCellSpec decoder_spec(const ParserConfig& cfg) {
  return {"par.dec", cfg.nt_dim + 2 * cfg.act_dim + cfg.hidden, cfg.hidden};
}

std::vector<NodeId> embed_tokens(Workspace& ws, const Vocabulary& vocab,
                                 const std::vector<std::string>& tokens) {
  NodeId table = ws.p("par.embed");
  std::vector<NodeId> out;
  out.reserve(tokens.size());
  for (const auto& tok : tokens)
    out.push_back(ws.tape.lookup_row(table, vocab.id_or_unk(tok)));
  return out;
}

// Shared decode bookkeeping: the grammar walk plus the parent-feeding
// plumbing (per-step decoder states addressable by frontier handles).
struct DecodeCursor {
  DerivationState ds;
  LstmState s;
  std::vector<NodeId> s_hist;  // decoder hidden after step t, handle = t
  NodeId y_prev;
  std::map<std::string, NodeId> constants;  // name -> summary, per tape

  DecodeCursor(Workspace& ws, const ParserConfig& cfg, const Grammar& g,
               const Vocabulary& vocab, const std::vector<std::string>& utt)
      : ds(g), s(parser_encode(ws, cfg, vocab, utt).dec_init),
        y_prev(ws.p("par.start.y")) {}
};

NodeId constant_summary(Workspace& ws, const ParserConfig& cfg,
                        const Vocabulary& vocab, DecodeCursor& cur,
                        const std::string& name) {
  auto it = cur.constants.find(name);
  if (it != cur.constants.end()) return it->second;
  NodeId v = encode_constant(ws, cfg, vocab, name);
  cur.constants.emplace(name, v);
  return v;
}

// Advances the decoder one transition for the current frontier top and
// records the new state under the next handle. Does not apply an action.
NodeId cursor_step(Workspace& ws, const ParserConfig& cfg, const Grammar& g,
                   DecodeCursor& cur) {
  const FrontierEntry& top = cur.ds.top();
  DecoderInputs in;
  in.n_t = ws.tape.lookup_row(ws.p("par.nt"), symbol_row(g, top.symbol));
  in.y_prev = cur.y_prev;
  if (top.has_parent) {
    in.p_parent =
        ws.tape.lookup_row(ws.p("par.act"), action_row(g, top.parent_action));
    in.s_parent = cur.s_hist.at(top.parent_state);
  } else {
    in.p_parent = ws.p("par.start.p");
    in.s_parent = ws.p("par.start.s");
  }
  cur.s = decoder_step(ws, cfg, cur.s, in);
  cur.s_hist.push_back(cur.s.h);
  return cur.s.h;
}

void cursor_apply(Workspace& ws, const ParserConfig& cfg, const Grammar& g,
                  const Vocabulary& vocab, const ContextConstants& ctx,
                  DecodeCursor& cur, const Action& a) {
  cur.ds.apply(g, a, ctx, cur.s_hist.size() - 1);
  if (a.kind == Action::Kind::kApply)
    cur.y_prev = ws.tape.lookup_row(ws.p("par.act"), action_row(g, a));
  else
    cur.y_prev =
        constant_summary(ws, cfg, vocab, cur, ctx[a.category][a.constant]);
}

}  // namespace

void register_parser(ModelParams& p, const ParserConfig& cfg, const Grammar& g,
                     const Vocabulary& vocab, Rng& rng) {
  if (cfg.embed == 0 || cfg.hidden == 0 || cfg.nt_dim == 0)
    throw std::invalid_argument("register_parser: zero-sized layer");
  if (cfg.act_dim == 0 || cfg.act_dim % 2 != 0)
    throw std::invalid_argument("register_parser: act_dim must be even");
  add_uniform(p, "par.embed", {vocab.size(), cfg.embed}, rng);
  register_bilstm(p, encoder_spec(cfg), rng);
  register_bilstm(p, constant_spec(cfg), rng);
  const std::size_t action_rows = g.rules.size() + g.categories.size();
  const std::size_t symbol_rows = g.nonterminals.size() + g.categories.size();
  add_uniform(p, "par.act", {action_rows, cfg.act_dim}, rng);
  add_uniform(p, "par.nt", {symbol_rows, cfg.nt_dim}, rng);
  add_uniform(p, "par.start.y", {cfg.act_dim}, rng);
  add_uniform(p, "par.start.p", {cfg.act_dim}, rng);
  add_uniform(p, "par.start.s", {cfg.hidden}, rng);
  add_uniform(p, "par.init.W", {2 * cfg.hidden, 2 * cfg.hidden}, rng);
  add_zeros(p, "par.init.b", {2 * cfg.hidden});
  register_lstm(p, decoder_spec(cfg), rng);
  add_uniform(p, "par.Wa", {action_rows, cfg.hidden}, rng);
  add_uniform(p, "par.Wc", {cfg.act_dim, cfg.hidden}, rng);
}

std::size_t action_row(const Grammar& g, const Action& a) {
  return a.kind == Action::Kind::kApply ? a.rule : g.rules.size() + a.category;
}

std::size_t symbol_row(const Grammar& g, const Symbol& s) {
  if (s.kind == SymbolKind::kNonterminal) return s.id;
  if (s.kind == SymbolKind::kCategory) return g.nonterminals.size() + s.id;
  throw std::invalid_argument("symbol_row: terminals carry no embedding");
}

ParserEncoding parser_encode(Workspace& ws, const ParserConfig& cfg,
                             const Vocabulary& vocab,
                             const std::vector<std::string>& tokens) {
  if (tokens.empty())
    throw std::invalid_argument("parser_encode: empty token sequence");
  EncoderOutput enc =
      bilstm_encode(ws, encoder_spec(cfg), embed_tokens(ws, vocab, tokens));
  NodeId packed = ws.tape.add(
      ws.tape.matvec(ws.p("par.init.W"), both_ends(ws, enc)),
      ws.p("par.init.b"));
  ParserEncoding out;
  out.per_token = enc.per_token;
  out.dec_init.h = ws.tape.slice(packed, 0, cfg.hidden);
  out.dec_init.c = ws.tape.slice(packed, cfg.hidden, cfg.hidden);
  return out;
}

NodeId encode_constant(Workspace& ws, const ParserConfig& cfg,
                       const Vocabulary& vocab, const std::string& name) {
  EncoderOutput enc =
      bilstm_encode(ws, constant_spec(cfg),
                    embed_tokens(ws, vocab, split_camel_case(name)));
  return both_ends(ws, enc);
}

LstmState decoder_step(Workspace& ws, const ParserConfig& cfg,
                       const LstmState& prev, const DecoderInputs& in) {
  NodeId x = ws.tape.concat(
      std::vector<NodeId>{in.n_t, in.y_prev, in.p_parent, in.s_parent});
  return lstm_cell(ws, decoder_spec(cfg), ws.dropout(x), prev);
}

NodeId action_distribution(Workspace& ws, const ParserConfig& cfg,
                           const Grammar& g, NodeId s_t,
                           const std::vector<Action>& legal) {
  (void)cfg;
  if (legal.empty())
    throw std::invalid_argument("action_distribution: empty action set");
  NodeId logits = ws.tape.matvec(ws.p("par.Wa"), s_t);
  std::vector<std::uint8_t> mask(ws.tape.value(logits).data.size(), 0);
  for (const Action& a : legal) mask[action_row(g, a)] = 1;
  return ws.tape.softmax_masked(logits, std::move(mask));
}

NodeId instantiate_distribution(Workspace& ws, const ParserConfig& cfg,
                                NodeId s_t,
                                std::span<const NodeId> constant_encodings) {
  (void)cfg;
  if (constant_encodings.empty())
    throw std::logic_error(
        "instantiate_distribution: no constants for the active category");
  NodeId probe = ws.tape.tanh(ws.tape.matvec(ws.p("par.Wc"), s_t));
  std::vector<NodeId> scores;
  scores.reserve(constant_encodings.size());
  for (NodeId v : constant_encodings)
    scores.push_back(ws.tape.dot(v, probe));
  NodeId packed = ws.tape.concat(scores);
  return ws.tape.softmax_masked(
      packed, std::vector<std::uint8_t>(scores.size(), 1));
}

NodeId seq2action_loss(Workspace& ws, const ParserConfig& cfg,
                       const Grammar& g, const Vocabulary& vocab,
                       const Example& ex) {
  ContextConstants ctx = context_constants(ex.context, g);
  DecodeCursor cur(ws, cfg, g, vocab, ex.utterance);
  NodeId total = kNoNode;
  for (std::size_t t = 0; t < ex.actions.size(); ++t) {
    if (cur.ds.complete())
      throw std::invalid_argument(
          "seq2action_loss: trailing gold action at index " +
          std::to_string(t));
    const Action& gold = ex.actions[t];
    const Symbol top = cur.ds.top().symbol;
    NodeId h = cursor_step(ws, cfg, g, cur);
    NodeId lp;
    if (top.kind == SymbolKind::kNonterminal) {
      // Stable form of the Eq. 9 factor: gold logit minus the masked
      // log-partition over the legitimate rows.
      NodeId logits = ws.tape.matvec(ws.p("par.Wa"), h);
      std::vector<std::uint8_t> mask(ws.tape.value(logits).data.size(), 0);
      for (const Action& a : legitimate_actions(g, cur.ds, ctx))
        mask[action_row(g, a)] = 1;
      lp = ws.tape.sub(ws.tape.pick(logits, action_row(g, gold)),
                       ws.tape.logsumexp_masked(logits, std::move(mask)));
    } else {
      const auto& names = ctx.at(top.id);
      if (names.empty())
        throw std::logic_error(
            "seq2action_loss: no constants for the active category");
      NodeId probe = ws.tape.tanh(ws.tape.matvec(ws.p("par.Wc"), h));
      std::vector<NodeId> scores;
      for (const auto& name : names)
        scores.push_back(
            ws.tape.dot(constant_summary(ws, cfg, vocab, cur, name), probe));
      NodeId packed = ws.tape.concat(scores);
      lp = ws.tape.sub(
          ws.tape.pick(packed, gold.constant),
          ws.tape.logsumexp_masked(
              packed, std::vector<std::uint8_t>(scores.size(), 1)));
    }
    try {
      cursor_apply(ws, cfg, g, vocab, ctx, cur, gold);
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument(
          "seq2action_loss: illegal gold action at index " +
          std::to_string(t));
    }
    total = (total == kNoNode) ? lp : ws.tape.add(total, lp);
  }
  if (!cur.ds.complete())
    throw std::invalid_argument("seq2action_loss: gold sequence incomplete");
  return ws.tape.mul_const(total, -1.0);
}

ParseOutcome parse_greedy(const ModelParams& p, const ParserConfig& cfg,
                          const Grammar& g, const Vocabulary& vocab,
                          const std::vector<std::string>& utterance,
                          const ContextEnv& context) {
  Workspace ws(p);
  ContextConstants ctx = context_constants(context, g);
  DecodeCursor cur(ws, cfg, g, vocab, utterance);
  ParseOutcome out;
  while (!cur.ds.complete() && out.actions.size() < cfg.max_actions) {
    std::vector<Action> legal = legitimate_actions(g, cur.ds, ctx);
    if (legal.empty()) return out;  // stuck: empty category, fail
    NodeId h = cursor_step(ws, cfg, g, cur);
    // Scores read as plain values; strict > keeps the canonically first
    // action on ties.
    Action best = legal.front();
    if (legal.size() > 1) {
      double best_score = -std::numeric_limits<double>::infinity();
      if (legal.front().kind == Action::Kind::kApply) {
        const Tensor& logits =
            ws.tape.value(ws.tape.matvec(ws.p("par.Wa"), h));
        for (const Action& a : legal) {
          double sc = logits.data[action_row(g, a)];
          if (sc > best_score) {
            best_score = sc;
            best = a;
          }
        }
      } else {
        NodeId probe = ws.tape.tanh(ws.tape.matvec(ws.p("par.Wc"), h));
        for (const Action& a : legal) {
          NodeId v = constant_summary(ws, cfg, vocab, cur,
                                      ctx[a.category][a.constant]);
          double sc = ws.tape.value(ws.tape.dot(v, probe)).data[0];
          if (sc > best_score) {
            best_score = sc;
            best = a;
          }
        }
      }
    }
    cursor_apply(ws, cfg, g, vocab, ctx, cur, best);
    out.actions.push_back(best);
  }
  if (!cur.ds.complete()) return out;  // budget exhausted, actions kept
  out.ok = true;
  out.surface = ast_to_tokens(g, cur.ds.ast(), ctx);
  return out;
}

ParserTrainLog train_parser(const Dataset& ds, ModelParams& p,
                            const ParserConfig& cfg, const Vocabulary& vocab,
                            Rng& rng, std::ostream* log) {
  const std::size_t n = ds.examples.size();
  if (n == 0) throw std::invalid_argument("train_parser: empty dataset");

  std::size_t n_dev = 0;
  if (cfg.dev_fraction > 0.0 && n >= 2) {
    n_dev = static_cast<std::size_t>(cfg.dev_fraction * static_cast<double>(n));
    n_dev = std::min(std::max<std::size_t>(n_dev, 1), n - 1);
  }
  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < n - n_dev; ++i) train_idx.push_back(i);

  auto dev_mean_nll = [&](const ModelParams& params) {
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t i = n - n_dev; i < n; ++i) {
      Workspace ws(params);
      NodeId loss = seq2action_loss(ws, cfg, ds.grammar, vocab, ds.examples[i]);
      total += ws.tape.value(loss).data[0];
      steps += ds.examples[i].actions.size();
    }
    return total / static_cast<double>(steps);
  };

  ParserTrainLog out;
  AdamState opt;
  ModelParams best;
  double best_nll = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    rng.shuffle(order);
    double epoch_nll = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      std::size_t stop = std::min(order.size(), start + cfg.batch);
      Gradients acc;
      for (std::size_t k = start; k < stop; ++k) {
        const Example& ex = ds.examples[order[k]];
        try {
          Workspace ws(p, true, cfg.dropout, &rng);
          NodeId loss = seq2action_loss(ws, cfg, ds.grammar, vocab, ex);
          epoch_nll += ws.tape.value(loss).data[0];
          epoch_steps += ex.actions.size();
          Gradients g = ws.grads(loss);
          if (acc.empty()) {
            acc = std::move(g);
          } else {
            for (auto& [name, t] : acc) {
              const Tensor& src = g.at(name);
              for (std::size_t i = 0; i < t.data.size(); ++i)
                t.data[i] += src.data[i];
            }
          }
        } catch (const std::runtime_error& e) {
          throw std::runtime_error("train_parser: example " + ex.id + ": " +
                                   e.what());
        }
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto& [name, t] : acc)
        for (double& x : t.data) x *= inv;
      adam_step(p, acc, opt, cfg.lr);
    }
    out.train_nll.push_back(epoch_nll / static_cast<double>(epoch_steps));

    if (n_dev > 0) {
      double dev = dev_mean_nll(p);
      out.dev_nll.push_back(dev);
      if (dev < best_nll) {
        best_nll = dev;
        best = p;
        out.best_epoch = epoch;
        stale = 0;
      } else {
        ++stale;
      }
      if (log)
        *log << "epoch " << epoch << " train_nll " << out.train_nll.back()
             << " dev_nll " << dev << "\n";
      if (stale >= cfg.patience) break;
    } else if (log) {
      *log << "epoch " << epoch << " train_nll " << out.train_nll.back()
           << "\n";
    }
  }
  if (n_dev > 0 && !best.values.empty()) p = best;
  return out;
}

}  // namespace metaparse
