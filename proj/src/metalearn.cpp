#include "metaparse/metalearn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>

#include "metaparse/graph.hpp"
#include "metaparse/metrics.hpp"

namespace metaparse {

namespace {

void check_meta(const MetaConfig& cfg) {
  if (!(cfg.alpha >= 0.0))
    throw std::invalid_argument("meta config: alpha must be >= 0");
  if (!(cfg.beta > 0.0))
    throw std::invalid_argument("meta config: beta must be > 0");
  if (cfg.k_support == 0)
    throw std::invalid_argument("meta config: k_support must be >= 1");
  if (cfg.test_batch == 0)
    throw std::invalid_argument("meta config: test_batch must be >= 1");
  if (cfg.inner_steps == 0)
    throw std::invalid_argument("meta config: inner_steps must be >= 1");
}

void accumulate(Gradients& acc, Gradients&& g) {
  if (acc.empty()) {
    acc = std::move(g);
    return;
  }
  for (auto& [name, t] : acc) {
    const Tensor& src = g.at(name);
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] += src.data[i];
  }
}

void require_finite(const Gradients& grads, const char* where) {
  for (const auto& [name, t] : grads)
    for (double x : t.data)
      if (!std::isfinite(x))
        throw std::runtime_error(std::string(where) +
                                 ": non-finite gradient for " + name);
}

}  // namespace

ModelParams gd_step(const ModelParams& theta, const Gradients& grad,
                    double alpha) {
  ModelParams out = theta;
  for (auto& [name, t] : out.values) {
    auto it = grad.find(name);
    if (it == grad.end()) continue;
    const Tensor& g = it->second;
    if (g.data.size() != t.data.size())
      throw std::invalid_argument("gd_step: shape mismatch for " + name);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      if (!std::isfinite(g.data[i]))
        throw std::runtime_error("gd_step: non-finite gradient for " + name);
      t.data[i] -= alpha * g.data[i];
    }
  }
  return out;
}

double batch_loss(const ModelParams& theta, const ParserConfig& cfg,
                  const Grammar& g, const Vocabulary& vocab,
                  const std::vector<const Example*>& batch, Gradients* grads,
                  Rng* dropout_rng) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  double total = 0.0;
  Gradients acc;
  for (const Example* ex : batch) {
    try {
      Workspace ws(theta, dropout_rng != nullptr,
                   dropout_rng != nullptr ? cfg.dropout : 0.0, dropout_rng);
      NodeId loss = seq2action_loss(ws, cfg, g, vocab, *ex);
      total += ws.tape.value(loss).data[0];
      if (grads) accumulate(acc, ws.grads(loss));
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("batch_loss: example " + ex->id + ": " +
                               e.what());
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  if (grads) {
    for (auto& [name, t] : acc)
      for (double& x : t.data) x *= inv;
    *grads = std::move(acc);
  }
  return total * inv;
}

ModelParams inner_adapt(const ModelParams& theta, const ParserConfig& cfg,
                        const Grammar& g, const Vocabulary& vocab,
                        const std::vector<const Example*>& support,
                        double alpha, std::size_t inner_steps,
                        Rng* dropout_rng) {
  if (!(alpha >= 0.0))
    throw std::invalid_argument("inner_adapt: alpha must be >= 0");
  if (alpha == 0.0 || support.empty()) return theta;
  ModelParams adapted = theta;
  for (std::size_t step = 0; step < inner_steps; ++step) {
    Gradients grad;
    batch_loss(adapted, cfg, g, vocab, support, &grad, dropout_rng);
    adapted = gd_step(adapted, grad, alpha);
  }
  return adapted;
}

MetaStepStats fomaml_step(ModelParams& theta, AdamState& adam, double beta,
                          double alpha, std::size_t inner_steps,
                          const ParamLossFn& support_loss,
                          const ParamLossFn& query_loss) {
  MetaStepStats stats;
  ModelParams adapted;
  const ModelParams* eval_point = &theta;
  if (alpha != 0.0 && support_loss) {
    adapted = theta;
    for (std::size_t step = 0; step < inner_steps; ++step) {
      Gradients grad;
      double loss = support_loss(adapted, &grad);
      if (step == 0) stats.inner_loss = loss;
      adapted = gd_step(adapted, grad, alpha);
    }
    eval_point = &adapted;
    stats.adapted = true;
  }
  Gradients outer;
  stats.outer_loss = query_loss(*eval_point, &outer);
  require_finite(outer, "fomaml_step");
  adam_step(theta, outer, adam, beta);
  return stats;
}

ModelParams meta_train(const Dataset& train, const RetrievalIndex& index,
                       const ParserConfig& parser_cfg,
                       const MetaConfig& meta_cfg, const Vocabulary& vocab,
                       Rng& rng, MetaTrainLog* log, std::ostream* out,
                       const ModelParams* init) {
  check_meta(meta_cfg);
  const std::size_t n = train.examples.size();
  if (n == 0) throw std::invalid_argument("meta_train: empty dataset");

  ModelParams theta;
  if (init) {
    theta = *init;
  } else {
    register_parser(theta, parser_cfg, train.grammar, vocab, rng);
  }

  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < n; ++i) by_id[train.examples[i].id] = i;
  std::map<std::string, std::size_t> index_row;
  for (std::size_t i = 0; i < index.ids.size(); ++i)
    index_row[index.ids[i]] = i;

  AdamState adam;
  for (std::size_t iter = 0; iter < meta_cfg.iterations; ++iter) {
    auto t0 = std::chrono::steady_clock::now();

    std::vector<const Example*> queries;
    queries.reserve(meta_cfg.test_batch);
    for (std::size_t k = 0; k < meta_cfg.test_batch; ++k)
      queries.push_back(&train.examples[rng.index(n)]);

    std::vector<const Example*> support;
    ParamLossFn support_fn;
    if (meta_cfg.alpha != 0.0) {
      std::set<std::string> pooled;
      for (const Example* q : queries) {
        auto row = index_row.find(q->id);
        if (row == index_row.end()) continue;
        for (const Retrieved& hit : retrieve(index, index.rows[row->second],
                                             q->id, meta_cfg.k_support))
          pooled.insert(hit.id);
      }
      for (const std::string& id : pooled) {
        auto pos = by_id.find(id);
        if (pos == by_id.end())
          throw std::runtime_error("meta_train: retrieved id " + id +
                                   " is not in the training set");
        support.push_back(&train.examples[pos->second]);
      }
      if (!support.empty())
        support_fn = [&](const ModelParams& p, Gradients* gr) {
          return batch_loss(p, parser_cfg, train.grammar, vocab, support, gr,
                            &rng);
        };
    }
    ParamLossFn query_fn = [&](const ModelParams& p, Gradients* gr) {
      return batch_loss(p, parser_cfg, train.grammar, vocab, queries, gr,
                        &rng);
    };

    MetaStepStats stats =
        fomaml_step(theta, adam, meta_cfg.beta, meta_cfg.alpha,
                    meta_cfg.inner_steps, support_fn, query_fn);

    double wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    if (log)
      log->iterations.push_back(
          {stats.inner_loss, stats.outer_loss, wall_ms, stats.adapted});
    if (out)
      *out << "iteration " << iter << " inner_loss " << stats.inner_loss
           << " outer_loss " << stats.outer_loss << " wall_ms " << wall_ms
           << " adapted " << (stats.adapted ? 1 : 0) << "\n";
  }
  return theta;
}

AdaptedPrediction adapted_predict(const ModelParams& theta,
                                  const ParserConfig& parser_cfg,
                                  const Dataset& train,
                                  const RetrievalIndex& index,
                                  const ModelParams& retr_params,
                                  const RetrieverConfig& retr_cfg,
                                  const MetaConfig& meta_cfg,
                                  const Vocabulary& vocab,
                                  const Example& query, bool finetune) {
  check_meta(meta_cfg);
  AdaptedPrediction out;
  if (!finetune || meta_cfg.alpha == 0.0 || index.ids.empty()) {
    out.outcome = parse_greedy(theta, parser_cfg, train.grammar, vocab,
                               query.utterance, query.context);
    return out;
  }

  LatentCode code = encode_example(retr_params, retr_cfg, vocab, query);
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < train.examples.size(); ++i)
    by_id[train.examples[i].id] = i;

  std::vector<const Example*> support;
  for (const Retrieved& hit :
       retrieve(index, code, query.id, meta_cfg.k_support)) {
    auto pos = by_id.find(hit.id);
    if (pos == by_id.end())
      throw std::runtime_error("adapted_predict: retrieved id " + hit.id +
                               " is not in the training set");
    support.push_back(&train.examples[pos->second]);
    out.support_ids.push_back(hit.id);
  }

  ModelParams adapted =
      inner_adapt(theta, parser_cfg, train.grammar, vocab, support,
                  meta_cfg.alpha, meta_cfg.inner_steps, nullptr);
  out.outcome = parse_greedy(adapted, parser_cfg, train.grammar, vocab,
                             query.utterance, query.context);
  return out;
}

std::size_t filter_spurious(const std::vector<std::vector<Action>>& candidates,
                            const std::vector<std::vector<Action>>& retrieved) {
  if (candidates.empty())
    throw std::invalid_argument("filter_spurious: no candidates");

  auto distance = [&](const std::vector<Action>& cand) {
    std::size_t best = std::numeric_limits<std::size_t>::max();
    for (const std::vector<Action>& r : retrieved)
      best = std::min(best, edit_distance<Action>(cand, r));
    return best;
  };

  std::size_t best = 0;
  std::size_t best_d = distance(candidates[0]);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    std::size_t d = distance(candidates[i]);
    if (d > best_d) continue;
    const std::vector<Action>& a = candidates[i];
    const std::vector<Action>& b = candidates[best];
    if (d < best_d || a.size() < b.size() ||
        (a.size() == b.size() &&
         std::lexicographical_compare(a.begin(), a.end(), b.begin(),
                                      b.end()))) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

}  // namespace metaparse
