#include "metaparse/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "metaparse/rng.hpp"

namespace metaparse {

namespace {

[[noreturn]] void infeasible(const std::string& why) {
  throw std::invalid_argument("synthetic config infeasible: " + why);
}

std::size_t find_category(const Grammar& g, const std::string& name) {
  for (std::size_t c = 0; c < g.categories.size(); ++c)
    if (g.categories[c].name == name) return c;
  infeasible("grammar lacks category " + name);
}

std::size_t find_rule(const Grammar& g, const std::string& lhs,
                      const std::vector<std::string>& rhs) {
  for (std::size_t r = 0; r < g.rules.size(); ++r) {
    const Rule& rule = g.rules[r];
    if (g.nonterminals[rule.lhs] != lhs || rule.rhs.size() != rhs.size())
      continue;
    bool match = true;
    for (std::size_t i = 0; i < rhs.size(); ++i)
      if (g.symbol_name(rule.rhs[i]) != rhs[i]) match = false;
    if (match) return r;
  }
  infeasible("grammar lacks rule " + lhs);
}

// Rule and category handles resolved by shape, so the generator follows the
// fixture file rather than hard-coding ids.
struct JavaHandles {
  std::size_t cat_method, cat_var;
  std::size_t prog, stmt_call, stmt_loop, stmt_ret, stmt_assign;
  std::size_t call, arg_one, arg_var, loop, ret, assign;
};

JavaHandles resolve_handles(const Grammar& g) {
  JavaHandles h;
  h.cat_method = find_category(g, "Method");
  h.cat_var = find_category(g, "Var");
  h.prog = find_rule(g, "Prog", {"Stmt"});
  h.stmt_call = find_rule(g, "Stmt", {"Call", ";"});
  h.stmt_loop = find_rule(g, "Stmt", {"Loop"});
  h.stmt_ret = find_rule(g, "Stmt", {"Ret", ";"});
  h.stmt_assign = find_rule(g, "Stmt", {"Assign", ";"});
  h.call = find_rule(g, "Call", {"Var", ".", "Method", "(", "Arg", ")"});
  h.arg_one = find_rule(g, "Arg", {"1"});
  h.arg_var = find_rule(g, "Arg", {"Var"});
  h.loop = find_rule(g, "Loop", {"for", "(", "x", ":", "Var", ")", "{", "x",
                                 "+=", "1", ";", "}"});
  h.ret = find_rule(g, "Ret", {"return", "Var"});
  h.assign = find_rule(g, "Assign", {"Var", "=", "Arg"});
  return h;
}

// Wide enough pools that member combinations rarely repeat verbatim between
// examples; nearest-neighbor surface copying then has to lose to an actual
// parser on novel combinations.
const std::vector<ClassMember>& var_pool() {
  static const std::vector<ClassMember> pool{
      {"vec", "list"}, {"cnt", "int"},  {"buf", "str"},  {"arr", "list"},
      {"lst", "list"}, {"val", "int"},  {"key", "str"},  {"idx", "int"},
      {"seq", "list"}, {"row", "list"}, {"col", "int"},  {"reg", "int"},
      {"acc", "int"},  {"ptr", "str"}};
  return pool;
}

const std::vector<ClassMember>& extra_method_pool() {
  static const std::vector<ClassMember> pool{
      {"get", "int"},   {"reset", "void"}, {"clear", "void"},
      {"init", "void"}, {"push", "void"},  {"pop", "int"},
      {"sort", "void"}, {"find", "int"},   {"trim", "void"}};
  return pool;
}

// Draws `take` distinct pool indices and lists them in pool order, keeping
// member order canonical across contexts.
std::vector<std::size_t> draw_sorted(Rng& rng, std::size_t pool_size,
                                     std::size_t take) {
  std::vector<std::size_t> idx(pool_size);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  idx.resize(take);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<ContextEnv> build_patterns(const SyntheticTaskConfig& cfg,
                                       Rng& rng) {
  std::vector<ContextEnv> patterns;
  for (std::size_t p = 0; p < cfg.context_patterns; ++p) {
    ContextEnv env;
    env.kind = ContextEnv::Kind::kClass;
    // Alternate the disambiguating method so both context kinds always exist.
    const bool has_add = (p % 2 == 0);
    const std::size_t nvars = 2 + rng.index(3);
    for (std::size_t i : draw_sorted(rng, var_pool().size(), nvars))
      env.variables.push_back(var_pool()[i]);
    if (has_add) env.methods.push_back({"add", "void"});
    const std::size_t nextra = has_add ? rng.index(3) : 1 + rng.index(2);
    for (std::size_t i : draw_sorted(rng, extra_method_pool().size(), nextra))
      env.methods.push_back(extra_method_pool()[i]);
    patterns.push_back(std::move(env));
  }
  return patterns;
}

std::size_t constant_index(const std::vector<std::string>& constants,
                           const std::string& name) {
  const auto it = std::find(constants.begin(), constants.end(), name);
  if (it == constants.end()) infeasible("constant lookup failed for " + name);
  return static_cast<std::size_t>(it - constants.begin());
}

}  // namespace

Dataset generate_synthetic(const SyntheticTaskConfig& cfg, const Grammar& g,
                           const std::string& grammar_path) {
  if (cfg.grammar_choice != "toy_java")
    infeasible("unknown grammar choice '" + cfg.grammar_choice + "'");
  if (!(cfg.ambiguity >= 0.0 && cfg.ambiguity <= 1.0))
    infeasible("ambiguity must be in [0,1]");
  if (cfg.context_patterns < 2)
    infeasible("need at least 2 context patterns");
  const JavaHandles h = resolve_handles(g);

  Rng rng(cfg.seed);
  const std::vector<ContextEnv> patterns = build_patterns(cfg, rng);

  Dataset ds;
  ds.grammar_path = grammar_path;
  ds.grammar = g;
  for (std::size_t i = 0; i < cfg.examples; ++i) {
    const ContextEnv& env = patterns[rng.index(patterns.size())];
    const ContextConstants ctx = context_constants(env, g);
    const std::vector<std::string>& vars = ctx[h.cat_var];
    const std::vector<std::string>& methods = ctx[h.cat_method];

    Example ex;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "syn-%05zu", i);
    ex.id = idbuf;
    ex.context = env;

    const std::string& var = vars[rng.index(vars.size())];
    const std::size_t var_k = constant_index(vars, var);

    if (rng.uniform() < cfg.ambiguity) {
      // Context decides: call the add method when the class has one,
      // fall back to an elementwise loop otherwise.
      ex.utterance = {"increment", var};
      const bool can_call =
          std::find(methods.begin(), methods.end(), "add") != methods.end();
      if (can_call) {
        ex.actions = {apply_action_of(h.prog),
                      apply_action_of(h.stmt_call),
                      apply_action_of(h.call),
                      instantiate_action_of(h.cat_var, var_k),
                      instantiate_action_of(h.cat_method,
                                            constant_index(methods, "add")),
                      apply_action_of(h.arg_one)};
      } else {
        ex.actions = {apply_action_of(h.prog), apply_action_of(h.stmt_loop),
                      apply_action_of(h.loop),
                      instantiate_action_of(h.cat_var, var_k)};
      }
    } else {
      switch (rng.index(6)) {
        case 0:
          ex.utterance = {"return", var};
          ex.actions = {apply_action_of(h.prog), apply_action_of(h.stmt_ret),
                        apply_action_of(h.ret),
                        instantiate_action_of(h.cat_var, var_k)};
          break;
        case 1:
          ex.utterance = {"set", var, "to", "one"};
          ex.actions = {apply_action_of(h.prog),
                        apply_action_of(h.stmt_assign),
                        apply_action_of(h.assign),
                        instantiate_action_of(h.cat_var, var_k),
                        apply_action_of(h.arg_one)};
          break;
        case 2: {
          const std::string& other =
              vars[(var_k + 1 + rng.index(vars.size() - 1)) % vars.size()];
          ex.utterance = {"set", var, "to", other};
          ex.actions = {apply_action_of(h.prog),
                        apply_action_of(h.stmt_assign),
                        apply_action_of(h.assign),
                        instantiate_action_of(h.cat_var, var_k),
                        apply_action_of(h.arg_var),
                        instantiate_action_of(h.cat_var,
                                              constant_index(vars, other))};
          break;
        }
        case 3: {
          const std::string& m = methods[rng.index(methods.size())];
          ex.utterance = {"call", m, "on", var};
          ex.actions = {apply_action_of(h.prog),
                        apply_action_of(h.stmt_call),
                        apply_action_of(h.call),
                        instantiate_action_of(h.cat_var, var_k),
                        instantiate_action_of(h.cat_method,
                                              constant_index(methods, m)),
                        apply_action_of(h.arg_one)};
          break;
        }
        case 4: {
          const std::string& m = methods[rng.index(methods.size())];
          const std::string& other =
              vars[(var_k + 1 + rng.index(vars.size() - 1)) % vars.size()];
          ex.utterance = {"call", m, "on", var, "with", other};
          ex.actions = {apply_action_of(h.prog),
                        apply_action_of(h.stmt_call),
                        apply_action_of(h.call),
                        instantiate_action_of(h.cat_var, var_k),
                        instantiate_action_of(h.cat_method,
                                              constant_index(methods, m)),
                        apply_action_of(h.arg_var),
                        instantiate_action_of(h.cat_var,
                                              constant_index(vars, other))};
          break;
        }
        default:
          ex.utterance = {"loop", "over", var};
          ex.actions = {apply_action_of(h.prog), apply_action_of(h.stmt_loop),
                        apply_action_of(h.loop),
                        instantiate_action_of(h.cat_var, var_k)};
          break;
      }
    }

    const AstResult res = actions_to_ast(g, ex.actions, ctx);
    if (!res.ok) infeasible("generated an illegal sequence for " + ex.id);
    ex.surface = ast_to_tokens(g, res.ast, ctx);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace metaparse
