#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "stt/tensor.hpp"

namespace stt {

// Character-level tokenizer. Ids 0..3 are the specials PAD/BOS/EOS/SEP, then
// the alphabet in the given order, then any extra symbols needed by task
// templates. Plain-text encode never produces specials.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;
  static constexpr int kNumSpecials = 4;

  explicit Tokenizer(std::string_view alphabet, std::string_view extra_symbols = "");

  int vocab_size() const { return kNumSpecials + static_cast<int>(symbols_.size()); }
  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;  // specials render empty
  int id_of(char c) const;
  bool knows(char c) const { return ids_[static_cast<unsigned char>(c)] >= 0; }

 private:
  std::vector<char> symbols_;
  std::array<int, 256> ids_;
};

enum class RuleKind { kRot, kReverse, kRotReverse };

// Bijective toy translation rules, so exact-match oracles exist.
struct TranslationRule {
  RuleKind kind = RuleKind::kRotReverse;
  int rot_k = 3;
};

TranslationRule parse_rule(std::string_view name, int rot_k);
std::string rule_name(const TranslationRule& rule);

struct CorpusSpec {
  std::string alphabet = "abcdefghijklmnop ";  // 16 letters + space
  int frames_per_token = 4;                    // frames emitted per source character
  int feature_dim = 16;
  float noise_sigma = 0.1f;
  TranslationRule rule;
  uint64_t seed = 1;

  void validate() const;
};

struct Utterance {
  std::string source_text;
  std::string target_text;
  Tensor frames;  // [frames_per_token * len(source_text)] x feature_dim
};

struct Corpus {
  CorpusSpec spec;
  std::vector<Utterance> train, dev, test;
};

Tokenizer build_tokenizer(const CorpusSpec& spec, std::string_view extra_symbols = "");

// One fixed prototype vector per alphabet symbol, drawn from the corpus seed.
Tensor char_prototypes(const CorpusSpec& spec);

// frames = per-character prototype + N(0, sigma^2) noise; deterministic in
// (text, spec, seed).
Tensor synth_frames(std::string_view text, const CorpusSpec& spec, uint64_t noise_seed);

std::string make_parallel_pair(std::string_view source_text, const TranslationRule& rule,
                               std::string_view alphabet);

Corpus sample_corpus(const CorpusSpec& spec, int size, uint64_t split_seed);

// Line-delimited export: source_text, target_text, frames as base64 of
// little-endian f32, shape. Byte-identical across repeated exports.
void export_corpus(const std::vector<Utterance>& utterances, std::ostream& os);
std::vector<Utterance> import_corpus(std::istream& is);

std::string base64_encode(const unsigned char* data, size_t len);
std::vector<unsigned char> base64_decode(std::string_view text);

}  // namespace stt
