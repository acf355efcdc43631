#pragma once

#include <string>
#include <vector>

namespace stt {

std::vector<std::string> whitespace_tokens(const std::string& text);

// Corpus BLEU on a 0..100 scale: modified 1..4-gram precisions pooled over
// the corpus, geometric mean, multiplicative brevity penalty
// exp(1 - ref_len/hyp_len) when the hypothesis side is shorter. An order with
// zero matches (but a nonzero denominator) floors the score at 0; an order
// the corpus is too short to instantiate at all is skipped.
double corpus_bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references);

}  // namespace stt
