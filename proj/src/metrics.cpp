#include "metaparse/metrics.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace metaparse {

bool exact_match(const std::vector<std::string>& pred,
                 const std::vector<std::string>& gold) {
  return pred == gold;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens,
                         std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::vector<std::string> gram(tokens.begin() + static_cast<long>(i),
                                  tokens.begin() + static_cast<long>(i + n));
    ++counts[std::move(gram)];
  }
  return counts;
}

}  // namespace

double bleu4(const std::vector<SentencePair>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("bleu4: empty corpus");

  constexpr std::size_t kMaxOrder = 4;
  std::size_t clipped[kMaxOrder] = {0, 0, 0, 0};
  std::size_t totals[kMaxOrder] = {0, 0, 0, 0};
  std::size_t pred_len = 0;
  std::size_t gold_len = 0;

  for (const SentencePair& pair : corpus) {
    pred_len += pair.pred.size();
    gold_len += pair.gold.size();
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
      NgramCounts pred_counts = count_ngrams(pair.pred, n);
      NgramCounts gold_counts = count_ngrams(pair.gold, n);
      for (const auto& [gram, count] : pred_counts) {
        totals[n - 1] += count;
        auto it = gold_counts.find(gram);
        if (it != gold_counts.end())
          clipped[n - 1] += std::min(count, it->second);
      }
    }
  }

  if (pred_len == 0) return 0.0;
  if (clipped[0] == 0) return 0.0;

  double log_precision_sum = 0.0;
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    double num = static_cast<double>(clipped[n - 1]);
    double den = static_cast<double>(totals[n - 1]);
    if (n > 1 && clipped[n - 1] == 0) {
      num += 1.0;
      den += 1.0;
    }
    log_precision_sum += std::log(num / den);
  }

  double bp = 1.0;
  if (pred_len < gold_len)
    bp = std::exp(1.0 - static_cast<double>(gold_len) /
                            static_cast<double>(pred_len));

  return 100.0 * bp * std::exp(log_precision_sum / kMaxOrder);
}

std::size_t edit_distance(const std::vector<std::string>& a,
                          const std::vector<std::string>& b) {
  return edit_distance(std::span<const std::string>(a),
                       std::span<const std::string>(b));
}

}  // namespace metaparse
