#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace metaparse {

inline constexpr std::size_t kNoIndex = static_cast<std::size_t>(-1);

enum class SymbolKind { kNonterminal, kTerminal, kCategory };

struct Symbol {
  SymbolKind kind = SymbolKind::kTerminal;
  std::size_t id = 0;
  bool operator==(const Symbol&) const = default;
};

// Where a category's constants come from in an example's context.
enum class ConstantSource { kClassMethods, kClassVariables, kHistoryEntities };

struct Category {
  std::string name;
  ConstantSource source = ConstantSource::kClassMethods;
};

struct Rule {
  std::size_t lhs = 0;  // nonterminal id
  std::vector<Symbol> rhs;
};

struct Grammar {
  std::vector<std::string> nonterminals;
  std::vector<std::string> terminals;
  std::vector<Category> categories;
  std::vector<Rule> rules;
  std::size_t start = 0;                           // nonterminal id
  std::vector<std::vector<std::size_t>> by_lhs;    // nonterminal -> rule ids

  const std::string& symbol_name(const Symbol& s) const;
};

// Line-oriented grammar text:
//   # comment to end of line
//   @category ClassMethod source=class_methods
//   @start Prog            (optional; default: first rule's left-hand side)
//   Prog -> Stmt
//   Stmt -> CallExpr ; | return ;
// Uppercase-initial symbols must be declared (as some rule's left-hand side
// or as a category); everything else is a terminal. Errors carry the
// offending line number.
Grammar load_grammar(const std::string& text);
Grammar load_grammar_file(const std::string& path);

struct Action {
  enum class Kind { kApply, kInstantiate };
  Kind kind = Kind::kApply;
  std::size_t rule = 0;      // kApply: rule id
  std::size_t category = 0;  // kInstantiate: category id
  std::size_t constant = 0;  // kInstantiate: index into that category's constants

  bool operator==(const Action&) const = default;
  // Canonical order: Apply by rule id first, then Instantiate by
  // (category, constant). Ties in decoding break toward this order.
  bool operator<(const Action& o) const;
};

Action apply_action_of(std::size_t rule);
Action instantiate_action_of(std::size_t category, std::size_t constant);

// Per-category constant names available in one example's context,
// indexed by category id.
using ContextConstants = std::vector<std::vector<std::string>>;

struct AstNode {
  Symbol symbol;
  std::size_t rule = kNoIndex;      // nonterminal nodes: applied rule
  std::size_t constant = kNoIndex;  // category nodes: chosen constant
  std::vector<std::size_t> children;
};

struct Ast {
  std::vector<AstNode> nodes;
  std::size_t root = 0;
};

// One pending expansion site: the symbol to expand plus the parent-feeding
// bookkeeping the decoder reads back (the action that created the site and
// an opaque caller-supplied decoder-state handle).
struct FrontierEntry {
  Symbol symbol;
  Action parent_action;
  bool has_parent = false;
  std::size_t parent_state = kNoIndex;
  std::size_t ast_slot = 0;
};

// Leftmost depth-first derivation in progress. Copyable; clone to branch.
class DerivationState {
 public:
  explicit DerivationState(const Grammar& g);

  bool complete() const { return stack_.empty(); }
  const FrontierEntry& top() const;
  std::size_t depth() const { return stack_.size(); }
  const Ast& ast() const { return ast_; }

  // Pops the frontier top and pushes the action's consequences; children
  // record `action` as parent and `state_handle` as the decoder handle.
  // The action must be legitimate for the current top.
  void apply(const Grammar& g, const Action& action,
             const ContextConstants& ctx, std::size_t state_handle = kNoIndex);

 private:
  std::vector<FrontierEntry> stack_;
  Ast ast_;
};

// Exactly the actions applicable at the state's frontier top: every rule
// whose lhs is the top nonterminal, or one Instantiate per context constant
// of the top category. Canonically ordered.
std::vector<Action> legitimate_actions(const Grammar& g,
                                       const DerivationState& s,
                                       const ContextConstants& ctx);

struct AstResult {
  enum class Error { kNone, kIllegalAction, kIncomplete, kTrailing };
  bool ok = false;
  Error error = Error::kNone;
  std::size_t index = 0;  // first offending action index
  Ast ast;
};

// Replays the sequence as a complete leftmost derivation.
AstResult actions_to_ast(const Grammar& g, const std::vector<Action>& actions,
                         const ContextConstants& ctx);

// Left-to-right leaf yield; instantiated constants render by name.
std::vector<std::string> ast_to_tokens(const Grammar& g, const Ast& ast,
                                       const ContextConstants& ctx);

// Linearizes a complete AST back to its leftmost derivation.
std::vector<Action> ast_to_actions(const Grammar& g, const Ast& ast);

// All complete legal sequences of length <= max_actions, lexicographic in
// canonical action order. Throws when more than `budget` expansions are
// attempted.
std::vector<std::vector<Action>> enumerate_derivations(
    const Grammar& g, const ContextConstants& ctx, std::size_t max_actions,
    std::size_t budget = 1000000);

// Indented single-string rendering for debugging and error reports.
std::string ast_debug_dump(const Grammar& g, const Ast& ast,
                           const ContextConstants* ctx = nullptr);

}  // namespace metaparse
