#include "metaparse/data.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace metaparse {

using nlohmann::json;

std::vector<std::string> split_camel_case(const std::string& identifier) {
  if (identifier.empty())
    throw std::invalid_argument("split_camel_case: empty identifier");
  const auto is_upper = [](char c) { return c >= 'A' && c <= 'Z'; };
  const auto is_lower_ish = [&](char c) {
    return !is_upper(c) && c != '_';  // lowercase, digits, anything else
  };
  const auto is_lower_letter = [](char c) { return c >= 'a' && c <= 'z'; };

  std::vector<std::string> out;
  std::string cur;
  const auto flush = [&] {
    if (!cur.empty()) out.push_back(cur);
    cur.clear();
  };
  const std::size_t n = identifier.size();
  for (std::size_t i = 0; i < n; ++i) {
    const char c = identifier[i];
    if (c == '_') {
      flush();
      continue;
    }
    if (is_upper(c) && !cur.empty()) {
      const bool after_lower = is_lower_ish(identifier[i - 1]);
      // The last capital of an acronym run starts the next word only when a
      // lowercase letter follows; digits stay glued to the run.
      const bool acronym_end = is_upper(identifier[i - 1]) && i + 1 < n &&
                               is_lower_letter(identifier[i + 1]);
      if (after_lower || acronym_end) flush();
    }
    cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  flush();
  if (out.empty())
    throw std::invalid_argument("split_camel_case: no subwords in '" +
                                identifier + "'");
  return out;
}

ContextConstants context_constants(const ContextEnv& env, const Grammar& g) {
  ContextConstants out(g.categories.size());
  for (std::size_t i = 0; i < g.categories.size(); ++i) {
    switch (g.categories[i].source) {
      case ConstantSource::kClassMethods:
        for (const ClassMember& m : env.methods) out[i].push_back(m.name);
        break;
      case ConstantSource::kClassVariables:
        for (const ClassMember& v : env.variables) out[i].push_back(v.name);
        break;
      case ConstantSource::kHistoryEntities: {
        std::set<std::string> seen;
        for (const auto& turn : env.history)
          for (const std::string& tok : turn)
            if (seen.insert(tok).second) out[i].push_back(tok);
        break;
      }
    }
  }
  return out;
}

namespace {

json context_to_json(const ContextEnv& env) {
  json j;
  if (env.kind == ContextEnv::Kind::kClass) {
    j["kind"] = "class";
    j["variables"] = json::array();
    for (const auto& v : env.variables)
      j["variables"].push_back({{"name", v.name}, {"type", v.type}});
    j["methods"] = json::array();
    for (const auto& m : env.methods)
      j["methods"].push_back({{"name", m.name}, {"type", m.type}});
  } else {
    j["kind"] = "dialog";
    j["history"] = env.history;
  }
  return j;
}

ContextEnv context_from_json(const json& j) {
  ContextEnv env;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "class") {
    env.kind = ContextEnv::Kind::kClass;
    for (const auto& v : j.at("variables"))
      env.variables.push_back({v.at("name").get<std::string>(),
                               v.at("type").get<std::string>()});
    for (const auto& m : j.at("methods"))
      env.methods.push_back({m.at("name").get<std::string>(),
                             m.at("type").get<std::string>()});
  } else if (kind == "dialog") {
    env.kind = ContextEnv::Kind::kDialog;
    env.history = j.at("history").get<std::vector<std::vector<std::string>>>();
  } else {
    throw std::runtime_error("unknown context kind '" + kind + "'");
  }
  return env;
}

json action_to_json(const Action& a, const Grammar& g) {
  if (a.kind == Action::Kind::kApply) return json{{"r", a.rule}};
  return json{{"cat", g.categories.at(a.category).name}, {"k", a.constant}};
}

Action action_from_json(const json& j, const Grammar& g,
                        const std::string& example_id) {
  if (j.contains("r")) return apply_action_of(j.at("r").get<std::size_t>());
  const std::string cat = j.at("cat").get<std::string>();
  for (std::size_t c = 0; c < g.categories.size(); ++c)
    if (g.categories[c].name == cat)
      return instantiate_action_of(c, j.at("k").get<std::size_t>());
  throw std::runtime_error("example " + example_id + ": unknown category '" +
                           cat + "'");
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("dataset has no header: " + path);

  Dataset ds;
  try {
    const json header = json::parse(line);
    if (header.at("schema_version").get<int>() != 1)
      throw std::runtime_error("unsupported schema_version");
    ds.grammar_path = header.at("grammar").get<std::string>();
  } catch (const json::exception& e) {
    throw std::runtime_error("dataset header: " + std::string(e.what()));
  }
  std::filesystem::path gp(ds.grammar_path);
  if (gp.is_relative())
    gp = std::filesystem::path(path).parent_path() / gp;
  ds.grammar = load_grammar_file(gp.string());

  std::set<std::string> ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Example ex;
    try {
      const json j = json::parse(line);
      ex.id = j.at("id").get<std::string>();
      ex.utterance = j.at("nl").get<std::vector<std::string>>();
      ex.context = context_from_json(j.at("context"));
      for (const auto& ja : j.at("actions"))
        ex.actions.push_back(action_from_json(ja, ds.grammar, ex.id));
      ex.surface = j.at("surface").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw std::runtime_error("dataset line " + std::to_string(line_no) +
                               ": " + std::string(e.what()));
    }
    if (!ids.insert(ex.id).second)
      throw std::runtime_error("duplicate example id " + ex.id);

    const ContextConstants ctx = context_constants(ex.context, ds.grammar);
    const AstResult res = actions_to_ast(ds.grammar, ex.actions, ctx);
    if (!res.ok)
      throw std::runtime_error("example " + ex.id +
                               ": illegal gold sequence at action " +
                               std::to_string(res.index));
    if (ast_to_tokens(ds.grammar, res.ast, ctx) != ex.surface)
      throw std::runtime_error("example " + ex.id +
                               ": stored surface differs from the AST yield");
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  out << json{{"schema_version", 1}, {"grammar", ds.grammar_path}}.dump()
      << "\n";
  for (const Example& ex : ds.examples) {
    json j;
    j["id"] = ex.id;
    j["nl"] = ex.utterance;
    j["context"] = context_to_json(ex.context);
    j["actions"] = json::array();
    for (const Action& a : ex.actions)
      j["actions"].push_back(action_to_json(a, ds.grammar));
    j["surface"] = ex.surface;
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  tokens_ = {"<pad>", "<unk>", "<bos>", "<eos>"};
  tokens_.insert(tokens_.end(), tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], i).second)
      throw std::invalid_argument("duplicate vocabulary token " + tokens_[i]);
  }
}

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size())
    throw std::invalid_argument("vocabulary id out of range");
  return tokens_[id];
}

std::size_t Vocabulary::id_or_unk(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
  return ids_.count(token) != 0;
}

Vocabulary build_vocab(const std::vector<Example>& examples,
                       std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  const auto add = [&](const std::vector<std::string>& toks) {
    for (const std::string& t : toks) ++counts[t];
  };
  for (const Example& ex : examples) {
    add(ex.utterance);
    add(ex.surface);
    for (const auto& turn : ex.context.history) add(turn);
    for (const auto& v : ex.context.variables) {
      add(split_camel_case(v.name));
      add(split_camel_case(v.type));
    }
    for (const auto& m : ex.context.methods) {
      add(split_camel_case(m.name));
      add(split_camel_case(m.type));
    }
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, cnt] : counts)
    if (cnt >= min_count) kept.emplace_back(tok, cnt);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  std::vector<std::string> ordered;
  ordered.reserve(kept.size());
  for (const auto& [tok, cnt] : kept) ordered.push_back(tok);
  return Vocabulary(ordered);
}

}  // namespace metaparse
