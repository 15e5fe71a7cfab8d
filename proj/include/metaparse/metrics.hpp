#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace metaparse {

// Token-sequence equality. A failed rollout should be passed as an empty
// prediction (never equal to a non-empty gold).
bool exact_match(const std::vector<std::string>& pred,
                 const std::vector<std::string>& gold);

struct SentencePair {
  std::vector<std::string> pred;
  std::vector<std::string> gold;
};

// Corpus-level BLEU-4 in [0, 100]: geometric mean of modified 1..4-gram
// precisions times the brevity penalty, counts pooled over the whole corpus.
// Smoothing: for n >= 2, a zero clipped count falls back to
// (count+1)/(total+1); the unigram precision is never smoothed, so a corpus
// sharing no unigrams with its references scores exactly 0.
// Throws std::invalid_argument on an empty corpus.
double bleu4(const std::vector<SentencePair>& corpus);

// Levenshtein distance with unit insert/delete/substitute costs.
template <class T>
std::size_t edit_distance(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      std::size_t del = prev[j] + 1;
      std::size_t ins = cur[j - 1] + 1;
      cur[j] = std::min(sub, std::min(del, ins));
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::size_t edit_distance(const std::vector<std::string>& a,
                          const std::vector<std::string>& b);

}  // namespace metaparse
