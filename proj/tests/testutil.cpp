#include "testutil.hpp"

#include <algorithm>

namespace testutil {

using metaparse::NodeId;
using metaparse::Rng;
using metaparse::Tape;
using metaparse::Tensor;

namespace {

using DrawFn = std::function<std::vector<Tensor>(Rng&)>;

Tensor basis_vector(std::size_t n, std::size_t i) {
  Tensor t = Tensor::zeros({n});
  t.data[i] = 1.0;
  return t;
}

}  // namespace

FdReport fd_params_gradient_check(const metaparse::ModelParams& params,
                                  const ParamLoss& eval, double h) {
  metaparse::Gradients analytic;
  eval(params, &analytic);
  FdReport report;
  metaparse::ModelParams work = params;
  for (auto& [name, t] : work.values) {
    const metaparse::Tensor& g = analytic.at(name);
    for (std::size_t j = 0; j < t.data.size(); ++j) {
      const double keep = t.data[j];
      t.data[j] = keep + h;
      const double up = eval(work, nullptr);
      t.data[j] = keep - h;
      const double dn = eval(work, nullptr);
      t.data[j] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double an = g.data[j];
      const double rel =
          std::fabs(an - fd) / std::max(std::fabs(an) + std::fabs(fd), 1e-3);
      report.max_rel = std::max(report.max_rel, rel);
      report.compared += 1;
    }
  }
  return report;
}

std::vector<SuiteEntry> run_primitive_gradient_suite(std::size_t instances) {
  Rng rng(20240811);
  std::vector<SuiteEntry> out;

  auto run = [&](const std::string& name, const DrawFn& draw,
                 const LossBuilder& build) {
    SuiteEntry entry;
    entry.name = name;
    for (std::size_t i = 0; i < instances; ++i) {
      const std::vector<Tensor> inputs = draw(rng);
      FdReport rep = fd_gradient_check(inputs, build);
      entry.max_rel = std::max(entry.max_rel, rep.max_rel);
      entry.instances += 1;
    }
    out.push_back(entry);
  };

  run(
      "matvec",
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor({4, 3}, r),
                                   random_tensor({3}, r),
                                   random_tensor({4}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        return t.dot(t.matvec(in[0], in[1]), in[2]);
      });

  run(
      "add",
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor({5}, r), random_tensor({5}, r),
                                   random_tensor({5}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        return t.dot(t.add(in[0], in[1]), in[2]);
      });

  run(
      "sub",
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor({5}, r), random_tensor({5}, r),
                                   random_tensor({5}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        return t.dot(t.sub(in[0], in[1]), in[2]);
      });

  run(
      "mul",
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor({5}, r), random_tensor({5}, r),
                                   random_tensor({5}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        return t.dot(t.mul(in[0], in[1]), in[2]);
      });

  run(
      "mul_const",
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor({5}, r),
                                   random_tensor({5}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        return t.dot(t.mul_const(in[0], 1.7), in[1]);
      });

  run(
      "scale_by_scalar",
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor({4}, r), random_tensor({1}, r),
                                   random_tensor({4}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        return t.dot(t.scale_by_scalar(in[0], in[1]), in[2]);
      });

  run(
      "tanh",
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor({5}, r),
                                   random_tensor({5}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        return t.dot(t.tanh(in[0]), in[1]);
      });

  run(
      "sigmoid",
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor({5}, r),
                                   random_tensor({5}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        return t.dot(t.sigmoid(in[0]), in[1]);
      });

  run(
      "log",
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor({5}, r, 0.2, 2.0),
                                   random_tensor({5}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        return t.dot(t.log(in[0]), in[1]);
      });

  run(
      "concat",
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor({3}, r), random_tensor({2}, r),
                                   random_tensor({4}, r),
                                   random_tensor({9}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        const NodeId parts[] = {in[0], in[1], in[2]};
        return t.dot(t.concat(parts), in[3]);
      });

  run(
      "mean_pool",
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor({4}, r), random_tensor({4}, r),
                                   random_tensor({4}, r),
                                   random_tensor({4}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        const NodeId parts[] = {in[0], in[1], in[2]};
        return t.dot(t.mean_pool(parts), in[3]);
      });

  run(
      "lookup_row",
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor({5, 3}, r),
                                   random_tensor({3}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        return t.dot(t.add(t.lookup_row(in[0], 1), t.lookup_row(in[0], 3)),
                     in[1]);
      });

  run(
      "softmax_masked",
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor({6}, r),
                                   random_tensor({6}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        return t.dot(t.softmax_masked(in[0], {1, 1, 0, 1, 1, 0}), in[1]);
      });

  run(
      "logsumexp_masked",
      [](Rng& r) { return std::vector<Tensor>{random_tensor({6}, r)}; },
      [](Tape& t, const std::vector<NodeId>& in) {
        return t.logsumexp_masked(in[0], {1, 0, 1, 1, 0, 1});
      });

  run(
      "l2_normalize",
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor({5}, r, 0.5, 1.5),
                                   random_tensor({5}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        return t.dot(t.l2_normalize(in[0]), in[1]);
      });

  run(
      "dot",
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor({5}, r),
                                   random_tensor({5}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        return t.dot(in[0], in[1]);
      });

  run(
      "pick",
      [](Rng& r) { return std::vector<Tensor>{random_tensor({5}, r)}; },
      [](Tape& t, const std::vector<NodeId>& in) { return t.pick(in[0], 2); });

  run(
      "slice",
      [](Rng& r) {
        return std::vector<Tensor>{random_tensor({6}, r),
                                   random_tensor({3}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        return t.dot(t.slice(in[0], 1, 3), in[1]);
      });

  // Householder reflection carrying e1 to the normalized direction; the
  // rotation used by the vMF reparameterized sampler.
  run(
      "householder",
      [](Rng& r) {
        Tensor mu = random_tensor({4}, r);
        mu.data[0] = r.uniform(-1.5, -0.5);
        return std::vector<Tensor>{std::move(mu), random_tensor({4}, r),
                                   random_tensor({4}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        NodeId mu = t.l2_normalize(in[0]);
        NodeId e1 = t.constant(basis_vector(4, 0));
        NodeId u = t.l2_normalize(t.sub(e1, mu));
        NodeId proj = t.dot(u, in[1]);
        NodeId reflected =
            t.sub(in[1], t.mul_const(t.scale_by_scalar(u, proj), 2.0));
        return t.dot(reflected, in[2]);
      });

  run(
      "mlp3",
      [](Rng& r) {
        return std::vector<Tensor>{
            random_tensor({4}, r),    random_tensor({5, 4}, r),
            random_tensor({5}, r),    random_tensor({4, 5}, r),
            random_tensor({4}, r),    random_tensor({1, 4}, r),
            random_tensor({1}, r)};
      },
      [](Tape& t, const std::vector<NodeId>& in) {
        NodeId h1 = t.sigmoid(t.add(t.matvec(in[1], in[0]), in[2]));
        NodeId h2 = t.tanh(t.add(t.matvec(in[3], h1), in[4]));
        NodeId y = t.add(t.matvec(in[5], h2), in[6]);
        return t.pick(y, 0);
      });

  return out;
}

namespace {

using metaparse::Action;
using metaparse::ContextConstants;
using metaparse::DerivationState;
using metaparse::Grammar;
using metaparse::Symbol;
using metaparse::SymbolKind;

// Independent replica of the derivation semantics: a plain pending-symbol
// stack with no AST or parent bookkeeping. back() is the next site.
using OracleStack = std::vector<Symbol>;

bool oracle_legal(const Grammar& g, const OracleStack& st,
                  const ContextConstants& ctx, const Action& a) {
  if (st.empty()) return false;
  const Symbol top = st.back();
  if (a.kind == Action::Kind::kApply)
    return top.kind == SymbolKind::kNonterminal && a.rule < g.rules.size() &&
           g.rules[a.rule].lhs == top.id;
  return top.kind == SymbolKind::kCategory && a.category == top.id &&
         a.category < ctx.size() && a.constant < ctx[a.category].size();
}

OracleStack oracle_apply(const Grammar& g, OracleStack st, const Action& a) {
  st.pop_back();
  if (a.kind == Action::Kind::kApply) {
    const auto& rhs = g.rules[a.rule].rhs;
    for (auto it = rhs.rbegin(); it != rhs.rend(); ++it)
      if (it->kind != SymbolKind::kTerminal) st.push_back(*it);
  }
  return st;
}

std::vector<Action> all_conceivable_actions(const Grammar& g,
                                            const ContextConstants& ctx) {
  std::vector<Action> out;
  for (std::size_t r = 0; r < g.rules.size(); ++r)
    out.push_back(metaparse::apply_action_of(r));
  for (std::size_t c = 0; c < g.categories.size(); ++c) {
    const std::size_t n = c < ctx.size() ? ctx[c].size() : 0;
    for (std::size_t k = 0; k < n; ++k)
      out.push_back(metaparse::instantiate_action_of(c, k));
  }
  return out;
}

void walk_masking(const Grammar& g, const ContextConstants& ctx,
                  const std::vector<Action>& universe,
                  const DerivationState& state, const OracleStack& oracle,
                  std::size_t actions_left,
                  testutil::MaskingOracleReport& rep) {
  ++rep.states;
  if (state.complete() != oracle.empty()) {
    ++rep.mismatches;
    return;
  }
  if (state.complete()) return;

  std::vector<Action> expect;
  for (const Action& a : universe)
    if (oracle_legal(g, oracle, ctx, a)) expect.push_back(a);
  std::sort(expect.begin(), expect.end());
  const std::vector<Action> mask = metaparse::legitimate_actions(g, state, ctx);
  if (mask != expect) {
    ++rep.mismatches;
    return;
  }
  for (const Action& a : universe) {
    const bool legal =
        std::binary_search(mask.begin(), mask.end(), a);
    DerivationState trial = state;
    bool threw = false;
    try {
      trial.apply(g, a, ctx);
    } catch (const std::invalid_argument&) {
      threw = true;
    }
    if (threw == legal) {
      ++rep.mismatches;
      continue;
    }
    if (legal && actions_left > 0)
      walk_masking(g, ctx, universe, trial, oracle_apply(g, oracle, a),
                   actions_left - 1, rep);
  }
}

}  // namespace

MaskingOracleReport check_masking_against_bruteforce(
    const Grammar& g, const ContextConstants& ctx, std::size_t max_actions) {
  MaskingOracleReport rep;
  const auto universe = all_conceivable_actions(g, ctx);
  OracleStack start{Symbol{SymbolKind::kNonterminal, g.start}};
  walk_masking(g, ctx, universe, DerivationState(g), start, max_actions, rep);
  return rep;
}

std::vector<Action> random_rollout(const Grammar& g,
                                   const ContextConstants& ctx, Rng& rng,
                                   std::size_t cap) {
  DerivationState s(g);
  std::vector<Action> out;
  while (!s.complete()) {
    if (out.size() >= cap) return {};
    const auto legal = metaparse::legitimate_actions(g, s, ctx);
    if (legal.empty()) return {};
    const Action a = legal[rng.index(legal.size())];
    s.apply(g, a, ctx);
    out.push_back(a);
  }
  return out;
}

}  // namespace testutil
