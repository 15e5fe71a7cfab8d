#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "metaparse/grammar.hpp"

namespace metaparse {

// Splits an identifier into lowercase subwords: before each lower-to-upper
// or digit-to-upper boundary, before the last capital of an acronym run
// ("getHTTPResponse" -> get http response), and at underscores. Digits stay
// with the preceding subword. Empty input is an error.
std::vector<std::string> split_camel_case(const std::string& identifier);

struct ClassMember {
  std::string name;
  std::string type;  // data type of a variable, return type of a method
  bool operator==(const ClassMember&) const = default;
};

// One example's context: either a class environment or the preceding turns
// of a dialog (oldest first). Class members carry (name, type) pairs.
struct ContextEnv {
  enum class Kind { kClass, kDialog };
  Kind kind = Kind::kClass;
  std::vector<ClassMember> variables;
  std::vector<ClassMember> methods;
  std::vector<std::vector<std::string>> history;
  bool operator==(const ContextEnv&) const = default;
};

// Materializes, per grammar category, the constant names this context offers:
// method names, variable names, or history tokens deduplicated in order of
// first appearance.
ContextConstants context_constants(const ContextEnv& env, const Grammar& g);

struct Example {
  std::string id;
  std::vector<std::string> utterance;
  ContextEnv context;
  std::vector<Action> actions;
  std::vector<std::string> surface;
  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::string grammar_path;  // as recorded in the file header
  Grammar grammar;
  std::vector<Example> examples;
};

// JSON-lines dataset file: a header record {schema_version, grammar}, then
// one record per example. Loading validates ids are unique, every gold
// action sequence replays to a complete AST, and the stored surface equals
// that AST's yield; violations name the offending example. A relative
// grammar path is resolved against the dataset file's directory.
Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);

// Token ids with four reserved entries, then frequency-descending order
// (ties lexicographic).
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kBos = 2;
  static constexpr std::size_t kEos = 3;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::size_t id) const;
  std::size_t id_or_unk(const std::string& token) const;
  bool contains(const std::string& token) const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> ids_;
};

// Counts every token stream a model consumes: utterances, surfaces, dialog
// history turns, and the camel-split subwords of member names and types.
Vocabulary build_vocab(const std::vector<Example>& examples,
                       std::size_t min_count);

}  // namespace metaparse
