#include "metaparse/grammar.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace metaparse {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw std::runtime_error("grammar line " + std::to_string(line) + ": " + msg);
}

bool uppercase_initial(const std::string& name) {
  return !name.empty() && name[0] >= 'A' && name[0] <= 'Z';
}

}  // namespace

const std::string& Grammar::symbol_name(const Symbol& s) const {
  switch (s.kind) {
    case SymbolKind::kNonterminal:
      return nonterminals.at(s.id);
    case SymbolKind::kTerminal:
      return terminals.at(s.id);
    case SymbolKind::kCategory:
      return categories.at(s.id).name;
  }
  throw std::logic_error("symbol_name: bad kind");
}

bool Action::operator<(const Action& o) const {
  if (kind != o.kind) return kind == Kind::kApply;
  if (kind == Kind::kApply) return rule < o.rule;
  return std::tie(category, constant) < std::tie(o.category, o.constant);
}

Action apply_action_of(std::size_t rule) {
  Action a;
  a.kind = Action::Kind::kApply;
  a.rule = rule;
  return a;
}

Action instantiate_action_of(std::size_t category, std::size_t constant) {
  Action a;
  a.kind = Action::Kind::kInstantiate;
  a.category = category;
  a.constant = constant;
  return a;
}

Grammar load_grammar(const std::string& text) {
  struct RawRule {
    std::string lhs;
    std::vector<std::string> rhs;
    std::size_t line;
  };
  std::vector<RawRule> raw;
  std::map<std::string, std::size_t> category_id;
  std::vector<Category> categories;
  std::string start_name;
  std::size_t start_line = 0;

  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.rfind("@category", 0) == 0) {
      const auto parts = split_ws(line);
      if (parts.size() != 3 || parts[2].rfind("source=", 0) != 0)
        fail(line_no, "expected '@category NAME source=...'");
      const std::string& name = parts[1];
      if (!uppercase_initial(name))
        fail(line_no, "category name must start uppercase: " + name);
      if (category_id.count(name)) fail(line_no, "duplicate category " + name);
      const std::string src = parts[2].substr(7);
      ConstantSource source;
      if (src == "class_methods")
        source = ConstantSource::kClassMethods;
      else if (src == "class_variables")
        source = ConstantSource::kClassVariables;
      else if (src == "history_entities")
        source = ConstantSource::kHistoryEntities;
      else
        fail(line_no, "unknown constant source '" + src + "'");
      category_id.emplace(name, categories.size());
      categories.push_back({name, source});
      continue;
    }
    if (line.rfind("@start", 0) == 0) {
      const auto parts = split_ws(line);
      if (parts.size() != 2) fail(line_no, "expected '@start NAME'");
      start_name = parts[1];
      start_line = line_no;
      continue;
    }

    const auto arrow = line.find("->");
    if (arrow == std::string::npos) fail(line_no, "expected 'LHS -> ...'");
    const std::string lhs = trim(line.substr(0, arrow));
    if (split_ws(lhs).size() != 1 || !uppercase_initial(lhs))
      fail(line_no, "left-hand side must be one uppercase-initial symbol");
    // Split on '|' by hand: a trailing empty alternative must be an error,
    // and getline would silently drop it.
    std::vector<std::string> alternatives(1);
    for (char ch : line.substr(arrow + 2)) {
      if (ch == '|')
        alternatives.emplace_back();
      else
        alternatives.back() += ch;
    }
    for (const std::string& alt : alternatives) {
      const auto symbols = split_ws(alt);
      if (symbols.empty()) fail(line_no, "empty right-hand side");
      raw.push_back({lhs, symbols, line_no});
    }
  }

  if (raw.empty()) throw std::runtime_error("grammar has no rules");

  Grammar g;
  g.categories = categories;
  std::map<std::string, std::size_t> nt_id;
  for (const auto& r : raw) {
    if (category_id.count(r.lhs))
      fail(r.line, r.lhs + " is a category, cannot be a left-hand side");
    if (!nt_id.count(r.lhs)) {
      nt_id.emplace(r.lhs, g.nonterminals.size());
      g.nonterminals.push_back(r.lhs);
    }
  }

  std::map<std::string, std::size_t> term_id;
  std::set<std::string> seen_rules;
  for (const auto& r : raw) {
    Rule rule;
    rule.lhs = nt_id.at(r.lhs);
    std::string key = r.lhs + " ->";
    for (const auto& name : r.rhs) {
      key += " " + name;
      Symbol s;
      if (auto it = nt_id.find(name); it != nt_id.end()) {
        s = {SymbolKind::kNonterminal, it->second};
      } else if (auto ct = category_id.find(name); ct != category_id.end()) {
        s = {SymbolKind::kCategory, ct->second};
      } else if (uppercase_initial(name)) {
        fail(r.line, "undeclared symbol '" + name + "'");
      } else {
        auto [tit, fresh] = term_id.emplace(name, g.terminals.size());
        if (fresh) g.terminals.push_back(name);
        s = {SymbolKind::kTerminal, tit->second};
      }
      rule.rhs.push_back(s);
    }
    if (!seen_rules.insert(key).second) fail(r.line, "duplicate rule: " + key);
    g.rules.push_back(std::move(rule));
  }

  if (!start_name.empty()) {
    auto it = nt_id.find(start_name);
    if (it == nt_id.end())
      fail(start_line, "start symbol '" + start_name + "' has no rules");
    g.start = it->second;
  } else {
    g.start = g.rules.front().lhs;
  }

  g.by_lhs.assign(g.nonterminals.size(), {});
  for (std::size_t r = 0; r < g.rules.size(); ++r)
    g.by_lhs[g.rules[r].lhs].push_back(r);
  return g;
}

Grammar load_grammar_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open grammar file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_grammar(buf.str());
}

DerivationState::DerivationState(const Grammar& g) {
  AstNode root;
  root.symbol = {SymbolKind::kNonterminal, g.start};
  ast_.nodes.push_back(root);
  ast_.root = 0;
  FrontierEntry e;
  e.symbol = root.symbol;
  e.ast_slot = 0;
  stack_.push_back(e);
}

const FrontierEntry& DerivationState::top() const {
  if (stack_.empty())
    throw std::logic_error("derivation already complete");
  return stack_.back();
}

void DerivationState::apply(const Grammar& g, const Action& action,
                            const ContextConstants& ctx,
                            std::size_t state_handle) {
  const FrontierEntry site = top();

  if (action.kind == Action::Kind::kApply) {
    if (site.symbol.kind != SymbolKind::kNonterminal ||
        action.rule >= g.rules.size() ||
        g.rules[action.rule].lhs != site.symbol.id)
      throw std::invalid_argument("illegitimate action for frontier top");
    stack_.pop_back();
    const Rule& rule = g.rules[action.rule];
    ast_.nodes[site.ast_slot].rule = action.rule;
    std::vector<std::size_t> pending;
    for (const Symbol& s : rule.rhs) {
      AstNode child;
      child.symbol = s;
      const std::size_t slot = ast_.nodes.size();
      ast_.nodes.push_back(child);
      ast_.nodes[site.ast_slot].children.push_back(slot);
      if (s.kind != SymbolKind::kTerminal) pending.push_back(slot);
    }
    // Leftmost pending symbol must end up on top.
    for (auto it = pending.rbegin(); it != pending.rend(); ++it) {
      FrontierEntry e;
      e.symbol = ast_.nodes[*it].symbol;
      e.parent_action = action;
      e.has_parent = true;
      e.parent_state = state_handle;
      e.ast_slot = *it;
      stack_.push_back(e);
    }
    return;
  }

  if (site.symbol.kind != SymbolKind::kCategory ||
      action.category != site.symbol.id ||
      action.category >= ctx.size() ||
      action.constant >= ctx[action.category].size())
    throw std::invalid_argument("illegitimate action for frontier top");
  stack_.pop_back();
  ast_.nodes[site.ast_slot].constant = action.constant;
}

std::vector<Action> legitimate_actions(const Grammar& g,
                                       const DerivationState& s,
                                       const ContextConstants& ctx) {
  const FrontierEntry& site = s.top();
  std::vector<Action> out;
  if (site.symbol.kind == SymbolKind::kNonterminal) {
    for (std::size_t r : g.by_lhs[site.symbol.id])
      out.push_back(apply_action_of(r));
  } else if (site.symbol.kind == SymbolKind::kCategory) {
    const std::size_t count =
        site.symbol.id < ctx.size() ? ctx[site.symbol.id].size() : 0;
    for (std::size_t k = 0; k < count; ++k)
      out.push_back(instantiate_action_of(site.symbol.id, k));
  }
  std::sort(out.begin(), out.end());
  return out;
}

AstResult actions_to_ast(const Grammar& g, const std::vector<Action>& actions,
                         const ContextConstants& ctx) {
  AstResult res;
  DerivationState state(g);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (state.complete()) {
      res.error = AstResult::Error::kTrailing;
      res.index = i;
      return res;
    }
    try {
      state.apply(g, actions[i], ctx);
    } catch (const std::invalid_argument&) {
      res.error = AstResult::Error::kIllegalAction;
      res.index = i;
      return res;
    }
  }
  if (!state.complete()) {
    res.error = AstResult::Error::kIncomplete;
    res.index = actions.size();
    return res;
  }
  res.ok = true;
  res.ast = state.ast();
  return res;
}

namespace {

void yield_tokens(const Grammar& g, const Ast& ast, const ContextConstants& ctx,
                  std::size_t node, std::vector<std::string>& out) {
  const AstNode& n = ast.nodes[node];
  switch (n.symbol.kind) {
    case SymbolKind::kTerminal:
      out.push_back(g.terminals[n.symbol.id]);
      return;
    case SymbolKind::kCategory:
      if (n.constant == kNoIndex)
        throw std::invalid_argument("ast_to_tokens: uninstantiated category");
      out.push_back(ctx.at(n.symbol.id).at(n.constant));
      return;
    case SymbolKind::kNonterminal:
      if (n.rule == kNoIndex)
        throw std::invalid_argument("ast_to_tokens: unexpanded nonterminal");
      for (std::size_t c : n.children) yield_tokens(g, ast, ctx, c, out);
      return;
  }
}

void linearize(const Grammar& g, const Ast& ast, std::size_t node,
               std::vector<Action>& out) {
  const AstNode& n = ast.nodes[node];
  switch (n.symbol.kind) {
    case SymbolKind::kTerminal:
      return;
    case SymbolKind::kCategory:
      if (n.constant == kNoIndex)
        throw std::invalid_argument("ast_to_actions: uninstantiated category");
      out.push_back(instantiate_action_of(n.symbol.id, n.constant));
      return;
    case SymbolKind::kNonterminal:
      if (n.rule == kNoIndex)
        throw std::invalid_argument("ast_to_actions: unexpanded nonterminal");
      out.push_back(apply_action_of(n.rule));
      for (std::size_t c : n.children) linearize(g, ast, c, out);
      return;
  }
}

void dump_node(const Grammar& g, const Ast& ast, const ContextConstants* ctx,
               std::size_t node, std::size_t depth, std::ostringstream& os) {
  const AstNode& n = ast.nodes[node];
  os << std::string(2 * depth, ' ') << g.symbol_name(n.symbol);
  if (n.symbol.kind == SymbolKind::kNonterminal && n.rule != kNoIndex)
    os << "  [rule " << n.rule << "]";
  if (n.symbol.kind == SymbolKind::kCategory && n.constant != kNoIndex) {
    os << " = ";
    if (ctx != nullptr && n.symbol.id < ctx->size() &&
        n.constant < (*ctx)[n.symbol.id].size())
      os << (*ctx)[n.symbol.id][n.constant];
    else
      os << "constant#" << n.constant;
  }
  os << "\n";
  for (std::size_t c : n.children) dump_node(g, ast, ctx, c, depth + 1, os);
}

}  // namespace

std::vector<std::string> ast_to_tokens(const Grammar& g, const Ast& ast,
                                       const ContextConstants& ctx) {
  std::vector<std::string> out;
  yield_tokens(g, ast, ctx, ast.root, out);
  return out;
}

std::vector<Action> ast_to_actions(const Grammar& g, const Ast& ast) {
  std::vector<Action> out;
  linearize(g, ast, ast.root, out);
  return out;
}

std::vector<std::vector<Action>> enumerate_derivations(
    const Grammar& g, const ContextConstants& ctx, std::size_t max_actions,
    std::size_t budget) {
  std::vector<std::vector<Action>> results;
  std::size_t expansions = 0;

  struct Branch {
    DerivationState state;
    std::vector<Action> actions;
  };
  // Depth-first with canonical action order gives lexicographic output.
  std::vector<Branch> stack;
  stack.push_back({DerivationState(g), {}});
  while (!stack.empty()) {
    Branch b = std::move(stack.back());
    stack.pop_back();
    if (b.state.complete()) {
      results.push_back(std::move(b.actions));
      continue;
    }
    if (b.actions.size() >= max_actions) continue;
    const auto legal = legitimate_actions(g, b.state, ctx);
    // Reverse push so the canonically first action is explored first.
    for (auto it = legal.rbegin(); it != legal.rend(); ++it) {
      if (++expansions > budget)
        throw std::runtime_error("enumerate_derivations: budget exceeded");
      Branch next{b.state, b.actions};
      next.state.apply(g, *it, ctx);
      next.actions.push_back(*it);
      stack.push_back(std::move(next));
    }
  }
  std::sort(results.begin(), results.end());
  return results;
}

std::string ast_debug_dump(const Grammar& g, const Ast& ast,
                           const ContextConstants* ctx) {
  std::ostringstream os;
  dump_node(g, ast, ctx, ast.root, 0, os);
  return os.str();
}

}  // namespace metaparse
