#pragma once

#include <cstdint>
#include <string>

#include "metaparse/data.hpp"

namespace metaparse {

struct SyntheticTaskConfig {
  std::string grammar_choice = "toy_java";
  std::size_t context_patterns = 12;
  std::size_t examples = 500;
  double ambiguity = 0.5;  // fraction of context-dependent utterances
  std::uint64_t seed = 1;
};

// Builds context-dependent examples over the Java-like fixture grammar.
// An `ambiguity` fraction of utterances read "increment <var>", whose gold
// derivation is decided by the context alone: a method call when the class
// offers an add method, an in-place loop otherwise. Every other utterance
// names its construction outright and always yields the same surface.
// Deterministic under cfg.seed. grammar_path is recorded in the dataset
// header for later save_dataset.
Dataset generate_synthetic(const SyntheticTaskConfig& cfg, const Grammar& g,
                           const std::string& grammar_path);

}  // namespace metaparse
