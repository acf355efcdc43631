#include "stt/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace stt {

std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) tokens.push_back(text.substr(i, j - i));
    i = j;
  }
  return tokens;
}

namespace {

constexpr int kMaxOrder = 4;

std::map<std::vector<std::string>, long> ngram_counts(const std::vector<std::string>& tokens,
                                                      int n) {
  std::map<std::vector<std::string>, long> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<long>(i),
                                      tokens.begin() + static_cast<long>(i + n))];
  return counts;
}

}  // namespace

double corpus_bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references) {
  if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu: empty hypothesis list");
  if (hypotheses.size() != references.size())
    throw std::invalid_argument("corpus_bleu: got " + std::to_string(hypotheses.size()) +
                                " hypotheses for " + std::to_string(references.size()) +
                                " references");

  long matches[kMaxOrder] = {0, 0, 0, 0};
  long totals[kMaxOrder] = {0, 0, 0, 0};
  long hyp_len = 0, ref_len = 0;

  for (size_t s = 0; s < hypotheses.size(); ++s) {
    const auto hyp = whitespace_tokens(hypotheses[s]);
    const auto ref = whitespace_tokens(references[s]);
    if (ref.empty()) throw std::invalid_argument("corpus_bleu: empty reference at index " +
                                                 std::to_string(s));
    hyp_len += static_cast<long>(hyp.size());
    ref_len += static_cast<long>(ref.size());
    for (int n = 1; n <= kMaxOrder; ++n) {
      const auto hyp_counts = ngram_counts(hyp, n);
      const auto ref_counts = ngram_counts(ref, n);
      for (const auto& [gram, count] : hyp_counts) {
        totals[n - 1] += count;
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(count, it->second);
      }
    }
  }

  if (hyp_len == 0) return 0.0;

  double log_precision_sum = 0.0;
  int orders_used = 0;
  for (int n = 0; n < kMaxOrder; ++n) {
    if (totals[n] == 0) continue;  // corpus too short for this order
    if (matches[n] == 0) return 0.0;
    log_precision_sum += std::log(static_cast<double>(matches[n]) / totals[n]);
    ++orders_used;
  }
  if (orders_used == 0) return 0.0;

  const double brevity =
      hyp_len >= ref_len ? 1.0
                         : std::exp(1.0 - static_cast<double>(ref_len) / hyp_len);
  return 100.0 * brevity * std::exp(log_precision_sum / orders_used);
}

}  // namespace stt
