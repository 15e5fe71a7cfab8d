#include "metaparse/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "metaparse/lstm.hpp"
#include "metaparse/serialize.hpp"

namespace metaparse {

namespace {

BiLstmSpec utterance_spec(const RetrieverConfig& cfg) {
  return {"ret.enc", cfg.enc_layers, cfg.embed, cfg.hidden};
}

BiLstmSpec subword_spec(const RetrieverConfig& cfg) {
  return {"ret.sub", 1, cfg.embed, cfg.hidden};
}

// Steps over the (type summary, name summary) pair of one class member.
BiLstmSpec member_spec(const RetrieverConfig& cfg) {
  return {"ret.mem", 1, 2 * cfg.hidden, cfg.hidden};
}

StackedLstmSpec decoder_spec(const RetrieverConfig& cfg) {
  return {"ret.dec", cfg.dec_layers, cfg.embed, cfg.hidden};
}

std::vector<NodeId> embed_tokens(Workspace& ws, const Vocabulary& vocab,
                                 const std::vector<std::string>& tokens) {
  NodeId table = ws.p("ret.embed");
  std::vector<NodeId> out;
  out.reserve(tokens.size());
  for (const auto& tok : tokens)
    out.push_back(ws.tape.lookup_row(table, vocab.id_or_unk(tok)));
  return out;
}

// Unit direction from a 2h summary. Checked eagerly: a collapsed direction
// would silently break the sphere geometry downstream.
NodeId project_to_sphere(Workspace& ws, const std::string& head, NodeId h) {
  NodeId pre = ws.tape.tanh(
      ws.tape.add(ws.tape.matvec(ws.p(head + ".W"), h), ws.p(head + ".b")));
  const Tensor& v = ws.tape.value(pre);
  double norm2 = 0.0;
  for (double x : v.data) norm2 += x * x;
  if (std::sqrt(norm2) < 1e-8)
    throw std::runtime_error(head + ": latent direction collapsed to zero");
  return ws.tape.l2_normalize(pre);
}

double mean_per_token_nll(const Dataset& ds, const std::vector<std::size_t>& idx,
                          const ModelParams& p, const RetrieverConfig& cfg,
                          const Vocabulary& vocab) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i : idx) {
    const Example& ex = ds.examples[i];
    Workspace ws(p);
    NodeId h_x = encode_utterance(ws, cfg, vocab, ex.utterance);
    NodeId h_c = encode_context(ws, cfg, vocab, ex.context);
    LatentHeads heads = latent_params(ws, cfg, h_x, h_c);
    NodeId z = ws.tape.concat(std::vector<NodeId>{heads.mu_x, heads.mu_c});
    NodeId lp = reconstruction_logprob(ws, cfg, vocab, z, ex.surface);
    total -= ws.tape.value(lp).data[0];
    tokens += ex.surface.size() + 1;
  }
  return total / static_cast<double>(tokens);
}

void accumulate(Gradients& acc, const Gradients& g) {
  if (acc.empty()) {
    acc = g;
    return;
  }
  for (auto& [name, t] : acc) {
    const Tensor& src = g.at(name);
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] += src.data[i];
  }
}

void scale(Gradients& acc, double s) {
  for (auto& [name, t] : acc)
    for (double& x : t.data) x *= s;
}

}  // namespace

void register_retriever(ModelParams& p, const RetrieverConfig& cfg,
                        const Vocabulary& vocab, Rng& rng) {
  if (cfg.embed == 0 || cfg.hidden == 0 || cfg.latent_half == 0)
    throw std::invalid_argument("register_retriever: zero-sized layer");
  if (cfg.kappa <= 0.0)
    throw std::invalid_argument("register_retriever: kappa must be positive");
  add_uniform(p, "ret.embed", {vocab.size(), cfg.embed}, rng);
  register_bilstm(p, utterance_spec(cfg), rng);
  register_bilstm(p, subword_spec(cfg), rng);
  register_bilstm(p, member_spec(cfg), rng);
  for (const char* head : {"ret.mu_x", "ret.mu_c"}) {
    add_uniform(p, std::string(head) + ".W", {cfg.latent_half, 2 * cfg.hidden},
                rng);
    add_zeros(p, std::string(head) + ".b", {cfg.latent_half});
  }
  StackedLstmSpec dec = decoder_spec(cfg);
  add_uniform(p, "ret.init.W",
              {dec.layers * 2 * cfg.hidden, 2 * cfg.latent_half}, rng);
  add_zeros(p, "ret.init.b", {dec.layers * 2 * cfg.hidden});
  register_stacked_lstm(p, dec, rng);
  add_uniform(p, "ret.out.W", {vocab.size(), cfg.hidden}, rng);
  add_zeros(p, "ret.out.b", {vocab.size()});
}

NodeId encode_utterance(Workspace& ws, const RetrieverConfig& cfg,
                        const Vocabulary& vocab,
                        const std::vector<std::string>& tokens) {
  if (tokens.empty())
    throw std::invalid_argument("encode_utterance: empty token sequence");
  EncoderOutput enc =
      bilstm_encode(ws, utterance_spec(cfg), embed_tokens(ws, vocab, tokens));
  return enc.last_token();
}

NodeId encode_identifier(Workspace& ws, const RetrieverConfig& cfg,
                         const Vocabulary& vocab, const std::string& name) {
  std::vector<std::string> subwords = split_camel_case(name);
  EncoderOutput enc =
      bilstm_encode(ws, subword_spec(cfg), embed_tokens(ws, vocab, subwords));
  return both_ends(ws, enc);
}

NodeId encode_context(Workspace& ws, const RetrieverConfig& cfg,
                      const Vocabulary& vocab, const ContextEnv& env) {
  std::vector<NodeId> parts;
  if (env.kind == ContextEnv::Kind::kClass) {
    std::vector<ClassMember> members = env.variables;
    members.insert(members.end(), env.methods.begin(), env.methods.end());
    for (const auto& m : members) {
      std::vector<NodeId> pair = {encode_identifier(ws, cfg, vocab, m.type),
                                  encode_identifier(ws, cfg, vocab, m.name)};
      EncoderOutput enc = bilstm_encode(ws, member_spec(cfg), pair);
      parts.push_back(both_ends(ws, enc));
    }
  } else {
    for (const auto& turn : env.history) {
      if (turn.empty()) continue;
      parts.push_back(encode_utterance(ws, cfg, vocab, turn));
    }
  }
  if (parts.empty()) return ws.c(Tensor::zeros({2 * cfg.hidden}));
  return ws.tape.mean_pool(parts);
}

LatentHeads latent_params(Workspace& ws, const RetrieverConfig& cfg,
                          NodeId h_x, NodeId h_c) {
  (void)cfg;
  LatentHeads out;
  out.mu_x = project_to_sphere(ws, "ret.mu_x", h_x);
  out.mu_c = project_to_sphere(ws, "ret.mu_c", h_c);
  return out;
}

NodeId reconstruction_logprob(Workspace& ws, const RetrieverConfig& cfg,
                              const Vocabulary& vocab, NodeId z,
                              const std::vector<std::string>& target) {
  StackedLstmSpec dec = decoder_spec(cfg);
  NodeId packed = ws.tape.add(ws.tape.matvec(ws.p("ret.init.W"), z),
                              ws.p("ret.init.b"));
  std::vector<LstmState> states = inject_states(ws, dec, packed);

  std::vector<std::size_t> targets;
  targets.reserve(target.size() + 1);
  for (const auto& tok : target) targets.push_back(vocab.id_or_unk(tok));
  targets.push_back(Vocabulary::kEos);

  NodeId table = ws.p("ret.embed");
  std::vector<std::uint8_t> all(vocab.size(), 1);
  NodeId x = ws.tape.lookup_row(table, Vocabulary::kBos);
  NodeId total = kNoNode;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    NodeId h = stacked_lstm_step(ws, dec, x, states);
    NodeId logits =
        ws.tape.add(ws.tape.matvec(ws.p("ret.out.W"), h), ws.p("ret.out.b"));
    NodeId lp = ws.tape.sub(ws.tape.pick(logits, targets[t]),
                            ws.tape.logsumexp_masked(logits, all));
    total = (total == kNoNode) ? lp : ws.tape.add(total, lp);
    x = ws.tape.lookup_row(table, targets[t]);
  }
  return total;
}

LatentCode encode_example(const ModelParams& p, const RetrieverConfig& cfg,
                          const Vocabulary& vocab, const Example& ex) {
  Workspace ws(p);
  NodeId h_x = encode_utterance(ws, cfg, vocab, ex.utterance);
  NodeId h_c = encode_context(ws, cfg, vocab, ex.context);
  LatentHeads heads = latent_params(ws, cfg, h_x, h_c);
  LatentCode code;
  code.mu_x = ws.tape.value(heads.mu_x).data;
  code.mu_c = ws.tape.value(heads.mu_c).data;
  // The tape op leaves a small norm deficit (its guarded denominator); the
  // stored directions are renormalized exactly so index rows are unit.
  for (auto* half : {&code.mu_x, &code.mu_c}) {
    double norm = l2_norm(*half);
    for (double& v : *half) v /= norm;
  }
  code.kappa = cfg.kappa;
  return code;
}

RetrieverTrainLog train_retriever(const Dataset& ds, ModelParams& p,
                                  const RetrieverConfig& cfg,
                                  const Vocabulary& vocab, Rng& rng,
                                  std::ostream* log) {
  const std::size_t n = ds.examples.size();
  if (n == 0) throw std::invalid_argument("train_retriever: empty dataset");

  std::size_t n_dev = 0;
  if (cfg.dev_fraction > 0.0 && n >= 2) {
    n_dev = static_cast<std::size_t>(cfg.dev_fraction * static_cast<double>(n));
    n_dev = std::min(std::max<std::size_t>(n_dev, 1), n - 1);
  }
  std::vector<std::size_t> train_idx, dev_idx;
  for (std::size_t i = 0; i < n - n_dev; ++i) train_idx.push_back(i);
  for (std::size_t i = n - n_dev; i < n; ++i) dev_idx.push_back(i);

  RetrieverTrainLog out;
  AdamState opt;
  ModelParams best;
  double best_nll = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    rng.shuffle(order);
    double epoch_nll = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      std::size_t stop = std::min(order.size(), start + cfg.batch);
      Gradients acc;
      for (std::size_t k = start; k < stop; ++k) {
        const Example& ex = ds.examples[order[k]];
        try {
          Workspace ws(p, true, cfg.dropout, &rng);
          NodeId h_x = encode_utterance(ws, cfg, vocab, ex.utterance);
          NodeId h_c = encode_context(ws, cfg, vocab, ex.context);
          LatentHeads heads = latent_params(ws, cfg, h_x, h_c);
          NodeId z_x = vmf_sample_node(ws, heads.mu_x, cfg.kappa, rng);
          NodeId z_c = vmf_sample_node(ws, heads.mu_c, cfg.kappa, rng);
          NodeId z = ws.tape.concat(std::vector<NodeId>{z_x, z_c});
          NodeId lp = reconstruction_logprob(ws, cfg, vocab, z, ex.surface);
          epoch_nll -= ws.tape.value(lp).data[0];
          epoch_tokens += ex.surface.size() + 1;
          Gradients g = ws.grads(lp);
          accumulate(acc, g);
        } catch (const std::runtime_error& e) {
          throw std::runtime_error("train_retriever: example " + ex.id + ": " +
                                   e.what());
        }
      }
      // Gradient of the mean NLL: logprob gradients averaged and negated.
      scale(acc, -1.0 / static_cast<double>(stop - start));
      adam_step(p, acc, opt, cfg.lr);
    }
    out.train_nll.push_back(epoch_nll / static_cast<double>(epoch_tokens));

    if (n_dev > 0) {
      double dev = mean_per_token_nll(ds, dev_idx, p, cfg, vocab);
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

RetrievalIndex build_index(const Dataset& ds, const ModelParams& p,
                           const RetrieverConfig& cfg,
                           const Vocabulary& vocab) {
  RetrievalIndex idx;
  idx.half = cfg.latent_half;
  idx.kappa = cfg.kappa;
  for (const auto& ex : ds.examples) {
    idx.ids.push_back(ex.id);
    idx.rows.push_back(encode_example(p, cfg, vocab, ex));
  }
  return idx;
}

void save_index(const RetrievalIndex& idx, const std::string& path) {
  for (const auto& id : idx.ids)
    if (id.empty() || id.find_first_of(" \t\n") != std::string::npos)
      throw std::invalid_argument("save_index: id not storable: '" + id + "'");
  std::ofstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error("save_index: cannot open " + path);
  for (const auto& row : idx.rows) {
    for (double v : row.mu_x) write_f64_le(bin, v);
    for (double v : row.mu_c) write_f64_le(bin, v);
  }
  if (!bin) throw std::runtime_error("save_index: write failed on " + path);

  std::ofstream man(path + ".manifest");
  if (!man)
    throw std::runtime_error("save_index: cannot open " + path + ".manifest");
  std::ostringstream kappa;
  kappa.precision(17);
  kappa << idx.kappa;
  man << "vmfindex 1 " << idx.rows.size() << " " << idx.half << " "
      << kappa.str() << "\n";
  for (const auto& id : idx.ids) man << id << "\n";
  if (!man)
    throw std::runtime_error("save_index: write failed on " + path +
                             ".manifest");
}

RetrievalIndex load_index(const std::string& path) {
  std::ifstream man(path + ".manifest");
  if (!man)
    throw std::runtime_error("load_index: cannot open " + path + ".manifest");
  std::string magic;
  int version = 0;
  std::size_t rows = 0;
  RetrievalIndex idx;
  man >> magic >> version >> rows >> idx.half >> idx.kappa;
  if (!man || magic != "vmfindex" || version != 1)
    throw std::runtime_error("load_index: bad manifest header in " + path);
  std::string id;
  while (man >> id) idx.ids.push_back(id);
  if (idx.ids.size() != rows)
    throw std::runtime_error("load_index: manifest lists " +
                             std::to_string(idx.ids.size()) + " ids, expected " +
                             std::to_string(rows));

  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error("load_index: cannot open " + path);
  for (std::size_t r = 0; r < rows; ++r) {
    LatentCode code;
    code.kappa = idx.kappa;
    code.mu_x.resize(idx.half);
    code.mu_c.resize(idx.half);
    for (auto& v : code.mu_x) v = read_f64_le(bin);
    for (auto& v : code.mu_c) v = read_f64_le(bin);
    idx.rows.push_back(std::move(code));
  }
  return idx;
}

std::vector<Retrieved> retrieve(const RetrievalIndex& idx,
                                const LatentCode& query,
                                const std::string& exclude_id, std::size_t K,
                                DistanceKind kind) {
  if (K == 0) throw std::invalid_argument("retrieve: K must be positive");
  if (idx.rows.empty()) throw std::runtime_error("retrieve: empty index");
  std::vector<Retrieved> hits;
  for (std::size_t i = 0; i < idx.rows.size(); ++i) {
    if (idx.ids[i] == exclude_id) continue;
    double d = (kind == DistanceKind::kFull)
                   ? latent_distance(query, idx.rows[i])
                   : vmf_kl(query.mu_x, idx.rows[i].mu_x, idx.kappa);
    hits.push_back({idx.ids[i], d});
  }
  std::sort(hits.begin(), hits.end(), [](const Retrieved& a, const Retrieved& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.id < b.id;
  });
  if (hits.size() > K) hits.resize(K);
  return hits;
}

}  // namespace metaparse
