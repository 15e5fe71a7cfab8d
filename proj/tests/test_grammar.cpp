#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaparse/grammar.hpp"
#include "metaparse/rng.hpp"
#include "testutil.hpp"

using namespace metaparse;

namespace {

std::string toy_java_path() {
  return std::string(METAPARSE_FIXTURE_DIR) + "/toy_java.grammar";
}
std::string toy_dialog_path() {
  return std::string(METAPARSE_FIXTURE_DIR) + "/toy_dialog.grammar";
}

bool error_mentions(const std::function<void()>& fn, const std::string& part) {
  try {
    fn();
  } catch (const std::exception& e) {
    return std::string(e.what()).find(part) != std::string::npos;
  }
  return false;
}

}  // namespace

TEST_CASE("minimal one-rule grammar") {
  Grammar g = load_grammar("S -> a");
  CHECK(g.rules.size() == 1);
  CHECK(g.nonterminals == std::vector<std::string>{"S"});
  CHECK(g.terminals == std::vector<std::string>{"a"});
  CHECK(g.categories.empty());
  CHECK(g.start == 0);
  CHECK(g.by_lhs.at(0) == std::vector<std::size_t>{0});
  CHECK(g.symbol_name(Symbol{SymbolKind::kNonterminal, 0}) == "S");
  CHECK(g.symbol_name(Symbol{SymbolKind::kTerminal, 0}) == "a");
}

TEST_CASE("comments, blank lines, and alternatives") {
  Grammar g = load_grammar(
      "# leading comment\n"
      "\n"
      "S -> a | b c   # trailing comment\n");
  CHECK(g.rules.size() == 2);
  CHECK(g.rules[0].rhs.size() == 1);
  CHECK(g.rules[1].rhs.size() == 2);
  CHECK(g.terminals == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("undeclared uppercase symbol names itself and its line") {
  auto bad = [] { load_grammar("S -> a\nS -> B c\n"); };
  CHECK_THROWS_AS(bad(), std::runtime_error);
  CHECK(error_mentions(bad, "undeclared symbol 'B'"));
  CHECK(error_mentions(bad, "line 2"));
}

TEST_CASE("duplicate rules are rejected with their line") {
  auto bad = [] { load_grammar("S -> a b\nS -> c\nS -> a b\n"); };
  CHECK(error_mentions(bad, "duplicate rule"));
  CHECK(error_mentions(bad, "line 3"));
}

TEST_CASE("grammar without rules is rejected") {
  CHECK_THROWS_AS(load_grammar("# nothing here\n"), std::runtime_error);
  CHECK(error_mentions([] { load_grammar(""); }, "no rules"));
}

TEST_CASE("category declarations") {
  Grammar g = load_grammar(
      "@category Method source=class_methods\n"
      "@category Var source=class_variables\n"
      "@category Ent source=history_entities\n"
      "S -> Method Var Ent\n");
  REQUIRE(g.categories.size() == 3);
  CHECK(g.categories[0].name == "Method");
  CHECK(g.categories[0].source == ConstantSource::kClassMethods);
  CHECK(g.categories[1].source == ConstantSource::kClassVariables);
  CHECK(g.categories[2].source == ConstantSource::kHistoryEntities);
  CHECK(g.rules[0].rhs[0] == Symbol{SymbolKind::kCategory, 0});
  CHECK(g.rules[0].rhs[2] == Symbol{SymbolKind::kCategory, 2});

  CHECK(error_mentions(
      [] { load_grammar("@category M source=plasma\nS -> M\n"); },
      "unknown constant source"));
  CHECK_THROWS_AS(load_grammar("@category M\nS -> a\n"), std::runtime_error);
  CHECK(error_mentions(
      [] {
        load_grammar(
            "@category M source=class_methods\n"
            "@category M source=class_methods\n"
            "S -> M\n");
      },
      "duplicate category"));
  CHECK(error_mentions(
      [] {
        load_grammar(
            "@category M source=class_methods\n"
            "M -> x\n");
      },
      "category"));
  CHECK(error_mentions(
      [] { load_grammar("@category m source=class_methods\nS -> a\n"); },
      "uppercase"));
}

TEST_CASE("start symbol defaults to the first rule and @start overrides") {
  Grammar g = load_grammar("A -> a\nB -> b\n");
  CHECK(g.start == 0);
  Grammar h = load_grammar("A -> a\nB -> b\n@start B\n");
  CHECK(h.start == 1);
  CHECK(error_mentions([] { load_grammar("A -> a\n@start C\n"); },
                       "start symbol 'C'"));
}

TEST_CASE("left-hand side shape is validated") {
  CHECK_THROWS_AS(load_grammar("s -> a\n"), std::runtime_error);
  CHECK_THROWS_AS(load_grammar("S T -> a\n"), std::runtime_error);
  CHECK_THROWS_AS(load_grammar("S -> \n"), std::runtime_error);
  CHECK_THROWS_AS(load_grammar("S -> a | \n"), std::runtime_error);
  CHECK_THROWS_AS(load_grammar("just words\n"), std::runtime_error);
}

TEST_CASE("shipped fixtures match their hand counts") {
  Grammar j = load_grammar_file(toy_java_path());
  CHECK(j.rules.size() == 11);
  CHECK(j.nonterminals.size() == 7);
  CHECK(j.terminals.size() == 13);
  REQUIRE(j.categories.size() == 2);
  CHECK(j.categories[0].name == "Method");
  CHECK(j.categories[1].name == "Var");
  CHECK(j.nonterminals[j.start] == "Prog");
  // Stmt owns rules 1..4 in file order.
  CHECK(j.by_lhs[1] == std::vector<std::size_t>{1, 2, 3, 4});

  Grammar d = load_grammar_file(toy_dialog_path());
  CHECK(d.rules.size() == 6);
  CHECK(d.nonterminals.size() == 3);
  CHECK(d.terminals.size() == 6);
  REQUIRE(d.categories.size() == 1);
  CHECK(d.categories[0].source == ConstantSource::kHistoryEntities);
  CHECK(d.nonterminals[d.start] == "Query");
}

TEST_CASE("canonical action ordering") {
  CHECK(apply_action_of(1) < apply_action_of(2));
  CHECK(apply_action_of(7) < instantiate_action_of(0, 0));
  CHECK(instantiate_action_of(0, 2) < instantiate_action_of(1, 0));
  CHECK(instantiate_action_of(1, 0) < instantiate_action_of(1, 1));
  CHECK(apply_action_of(3) == apply_action_of(3));
  CHECK(!(apply_action_of(3) < apply_action_of(3)));
}

TEST_CASE("legitimate actions at nonterminal and category tops") {
  Grammar g = load_grammar("S -> a\nS -> b\n");
  DerivationState s(g);
  ContextConstants none;
  CHECK(legitimate_actions(g, s, none) ==
        std::vector<Action>{apply_action_of(0), apply_action_of(1)});

  Grammar h = load_grammar(
      "@category M source=class_methods\n"
      "S -> call M\n");
  DerivationState t(h);
  ContextConstants ctx{{"f", "g", "h"}};
  t.apply(h, apply_action_of(0), ctx);
  CHECK(t.top().symbol == Symbol{SymbolKind::kCategory, 0});
  CHECK(legitimate_actions(h, t, ctx) ==
        std::vector<Action>{instantiate_action_of(0, 0),
                            instantiate_action_of(0, 1),
                            instantiate_action_of(0, 2)});

  // No constants available: the derivation is stuck, not broken.
  ContextConstants empty{{}};
  CHECK(legitimate_actions(h, t, empty).empty());

  s.apply(g, apply_action_of(0), none);
  CHECK(s.complete());
  CHECK_THROWS_AS(legitimate_actions(g, s, none), std::logic_error);
}

TEST_CASE("apply expands leftmost-first and records parentage") {
  Grammar g = load_grammar("S -> A B\nA -> x\nB -> y\n");
  DerivationState s(g);
  ContextConstants none;
  const Action root = apply_action_of(0);
  s.apply(g, root, none, 42);
  CHECK(s.depth() == 2);
  CHECK(s.top().symbol == Symbol{SymbolKind::kNonterminal, 1});  // A on top
  CHECK(s.top().has_parent);
  CHECK(s.top().parent_action == root);
  CHECK(s.top().parent_state == 42);

  s.apply(g, apply_action_of(1), none, 43);
  CHECK(s.depth() == 1);
  CHECK(s.top().symbol == Symbol{SymbolKind::kNonterminal, 2});  // then B
  CHECK(s.top().parent_action == root);
  CHECK(s.top().parent_state == 42);
  s.apply(g, apply_action_of(2), none, 44);
  CHECK(s.complete());

  const Ast& ast = s.ast();
  const AstNode& rn = ast.nodes[ast.root];
  CHECK(rn.rule == 0);
  REQUIRE(rn.children.size() == 2);
  CHECK(ast.nodes[rn.children[0]].symbol ==
        Symbol{SymbolKind::kNonterminal, 1});
  CHECK(ast_to_tokens(g, ast, none) == std::vector<std::string>{"x", "y"});
}

TEST_CASE("single-rule derivation gives a leaf yield") {
  Grammar g = load_grammar("S -> a");
  DerivationState s(g);
  ContextConstants none;
  s.apply(g, apply_action_of(0), none);
  CHECK(s.complete());
  CHECK(ast_to_tokens(g, s.ast(), none) == std::vector<std::string>{"a"});
}

TEST_CASE("apply rejects illegitimate actions") {
  Grammar g = load_grammar(
      "@category M source=class_methods\n"
      "S -> A M\nA -> x\n");
  ContextConstants ctx{{"f"}};

  DerivationState s(g);
  CHECK_THROWS_AS(s.apply(g, apply_action_of(1), ctx), std::invalid_argument);
  CHECK_THROWS_AS(s.apply(g, apply_action_of(99), ctx), std::invalid_argument);
  CHECK_THROWS_AS(s.apply(g, instantiate_action_of(0, 0), ctx),
                  std::invalid_argument);

  s.apply(g, apply_action_of(0), ctx);
  s.apply(g, apply_action_of(1), ctx);
  // Top is now M; rule applications and out-of-range constants both fail.
  CHECK_THROWS_AS(s.apply(g, apply_action_of(1), ctx), std::invalid_argument);
  CHECK_THROWS_AS(s.apply(g, instantiate_action_of(0, 1), ctx),
                  std::invalid_argument);
  s.apply(g, instantiate_action_of(0, 0), ctx);
  CHECK(s.complete());
  CHECK_THROWS_AS(s.apply(g, apply_action_of(0), ctx), std::logic_error);
  CHECK(ast_to_tokens(g, s.ast(), ctx) ==
        std::vector<std::string>{"x", "f"});
}

TEST_CASE("actions_to_ast classifies failures by first offending index") {
  Grammar g = load_grammar("S -> A B\nA -> x\nB -> y\n");
  ContextConstants none;

  AstResult empty = actions_to_ast(g, {}, none);
  CHECK(!empty.ok);
  CHECK(empty.error == AstResult::Error::kIncomplete);
  CHECK(empty.index == 0);

  AstResult bad = actions_to_ast(
      g, {apply_action_of(0), apply_action_of(1), apply_action_of(1)}, none);
  CHECK(bad.error == AstResult::Error::kIllegalAction);
  CHECK(bad.index == 2);

  AstResult part = actions_to_ast(g, {apply_action_of(0)}, none);
  CHECK(part.error == AstResult::Error::kIncomplete);
  CHECK(part.index == 1);

  AstResult extra = actions_to_ast(
      g,
      {apply_action_of(0), apply_action_of(1), apply_action_of(2),
       apply_action_of(0)},
      none);
  CHECK(extra.error == AstResult::Error::kTrailing);
  CHECK(extra.index == 3);

  AstResult ok = actions_to_ast(
      g, {apply_action_of(0), apply_action_of(1), apply_action_of(2)}, none);
  REQUIRE(ok.ok);
  CHECK(ok.error == AstResult::Error::kNone);
  CHECK(ast_to_tokens(g, ok.ast, none) ==
        std::vector<std::string>{"x", "y"});
}

TEST_CASE("toy java call derivation renders its surface") {
  Grammar g = load_grammar_file(toy_java_path());
  // Category ids follow declaration order: Method then Var.
  ContextConstants ctx{{"add", "get"}, {"vec", "cnt"}};
  // Prog -> Stmt; Stmt -> Call ;; Call -> Var . Method ( Arg ); vec; add;
  // Arg -> 1.
  std::vector<Action> gold{apply_action_of(0),         apply_action_of(1),
                           apply_action_of(5),         instantiate_action_of(1, 0),
                           instantiate_action_of(0, 0), apply_action_of(6)};
  AstResult res = actions_to_ast(g, gold, ctx);
  REQUIRE(res.ok);
  CHECK(ast_to_tokens(g, res.ast, ctx) ==
        std::vector<std::string>{"vec", ".", "add", "(", "1", ")", ";"});
  CHECK(ast_to_actions(g, res.ast) == gold);

  std::string dump = ast_debug_dump(g, res.ast, &ctx);
  CHECK(dump.find("Prog") != std::string::npos);
  CHECK(dump.find("[rule 5]") != std::string::npos);
  CHECK(dump.find("add") != std::string::npos);
  std::string bare = ast_debug_dump(g, res.ast);
  CHECK(bare.find("constant#0") != std::string::npos);
}

TEST_CASE("loop derivation mirrors the method-call alternative") {
  Grammar g = load_grammar_file(toy_java_path());
  ContextConstants ctx{{}, {"vec"}};
  std::vector<Action> gold{apply_action_of(0), apply_action_of(2),
                           apply_action_of(8), instantiate_action_of(1, 0)};
  AstResult res = actions_to_ast(g, gold, ctx);
  REQUIRE(res.ok);
  CHECK(ast_to_tokens(g, res.ast, ctx) ==
        std::vector<std::string>{"for", "(", "x", ":", "vec", ")", "{", "x",
                                 "+=", "1", ";", "}"});
}

TEST_CASE("incomplete asts cannot be rendered or linearized") {
  Grammar g = load_grammar("S -> A B\nA -> x\nB -> y\n");
  ContextConstants none;
  DerivationState s(g);
  s.apply(g, apply_action_of(0), none);
  CHECK_THROWS_AS(ast_to_tokens(g, s.ast(), none), std::invalid_argument);
  CHECK_THROWS_AS(ast_to_actions(g, s.ast()), std::invalid_argument);
}

TEST_CASE("random legal rollouts round-trip through replay") {
  Grammar j = load_grammar_file(toy_java_path());
  ContextConstants jctx{{"add", "get", "set"}, {"vec", "cnt"}};
  Rng rng(20240812);
  std::size_t done = 0;
  for (std::size_t i = 0; i < 200; ++i) {
    const auto roll = testutil::random_rollout(j, jctx, rng, 20);
    REQUIRE(!roll.empty());
    AstResult res = actions_to_ast(j, roll, jctx);
    REQUIRE(res.ok);
    CHECK(ast_to_actions(j, res.ast) == roll);
    CHECK(!ast_to_tokens(j, res.ast, jctx).empty());
    ++done;
  }
  CHECK(done == 200);

  // The dialog grammar recurses; keep rollouts that finish within 20 actions.
  Grammar d = load_grammar_file(toy_dialog_path());
  ContextConstants dctx{{"paris", "france"}};
  std::size_t kept = 0;
  for (std::size_t tries = 0; tries < 2000 && kept < 20; ++tries) {
    const auto roll = testutil::random_rollout(d, dctx, rng, 20);
    if (roll.empty()) continue;
    AstResult res = actions_to_ast(d, roll, dctx);
    REQUIRE(res.ok);
    CHECK(ast_to_actions(d, res.ast) == roll);
    ++kept;
  }
  CHECK(kept == 20);
}

TEST_CASE("enumerate_derivations lists exactly the complete sequences") {
  Grammar g = load_grammar("S -> a | b\n");
  ContextConstants none;
  auto two = enumerate_derivations(g, none, 4);
  REQUIRE(two.size() == 2);
  CHECK(two[0] == std::vector<Action>{apply_action_of(0)});
  CHECK(two[1] == std::vector<Action>{apply_action_of(1)});

  // Right recursion: one completion per prefix length.
  Grammar r = load_grammar("S -> a S\nS -> a\n");
  auto three = enumerate_derivations(r, none, 3);
  REQUIRE(three.size() == 3);
  CHECK(three[0] == std::vector<Action>{apply_action_of(0), apply_action_of(0),
                                        apply_action_of(1)});
  CHECK(three[1] ==
        std::vector<Action>{apply_action_of(0), apply_action_of(1)});
  CHECK(three[2] == std::vector<Action>{apply_action_of(1)});
  auto five = enumerate_derivations(r, none, 5);
  CHECK(five.size() == 5);
  for (const auto& seq : five) CHECK(actions_to_ast(r, seq, none).ok);

  CHECK_THROWS_AS(enumerate_derivations(r, none, 50, 10), std::runtime_error);
}

TEST_CASE("enumerated dialog derivations are sorted, unique, and legal") {
  Grammar d = load_grammar_file(toy_dialog_path());
  ContextConstants ctx{{"paris", "france"}};
  auto all = enumerate_derivations(d, ctx, 6);
  CHECK(all.size() > 4);
  CHECK(std::is_sorted(all.begin(), all.end()));
  CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
  for (const auto& seq : all) {
    AstResult res = actions_to_ast(d, seq, ctx);
    REQUIRE(res.ok);
    CHECK(ast_to_actions(d, res.ast) == seq);
  }
}

TEST_CASE("masking equals brute force on every reachable state") {
  Grammar j = load_grammar_file(toy_java_path());
  ContextConstants jctx{{"add"}, {"vec", "cnt"}};
  auto jrep = testutil::check_masking_against_bruteforce(j, jctx, 8);
  // 36 = hand count of legal prefixes: 1 root + 1 + 4 statement choices
  //  + 13 call subtree + 3 loop + 3 return + 11 assign.
  CHECK(jrep.states == 36);
  CHECK(jrep.mismatches == 0);

  Grammar d = load_grammar_file(toy_dialog_path());
  ContextConstants dctx{{"paris", "france"}};
  auto drep = testutil::check_masking_against_bruteforce(d, dctx, 8);
  CHECK(drep.states > 50);
  CHECK(drep.mismatches == 0);
}
