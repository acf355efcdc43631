#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stt/corpus.hpp"

namespace stt {

// The three task formulations: direct translation, transcription, and
// transcription followed by translation.
enum class Formulation { kDirect, kAsr, kChained };

inline const char* formulation_name(Formulation t) {
  switch (t) {
    case Formulation::kDirect: return "f";
    case Formulation::kAsr: return "f_asr";
    case Formulation::kChained: return "f_chain";
  }
  return "?";
}

inline constexpr const char* kTranscriptionMarker = "Transcription: ";
inline constexpr const char* kTranslationMarker = "Translation: ";

// One formatted training example. The loss covers exactly the target block
// (markers and terminal EOS included); prefix, speech and suffix positions
// are never scored. The concrete position mask is materialized when the
// sequence is assembled, once the adapted speech length is known.
struct TaskSample {
  std::vector<int> prefix_ids;  // BOS + instruction + SEP
  std::vector<int> suffix_ids;  // SEP
  std::vector<int> target_ids;  // formatted target + EOS
  Tensor frames;
  Formulation tag = Formulation::kDirect;
  std::string source_text;
  std::string target_text;
};

std::string instruction_for(Formulation t, const std::string& src_lang,
                            const std::string& tgt_lang);

// The target-side template text for an utterance under a formulation.
std::string format_target(const Utterance& u, Formulation t);

TaskSample format_sample(const Utterance& u, Formulation t, const Tokenizer& tok,
                         const std::string& src_lang, const std::string& tgt_lang);

// Every character the instruction and marker templates can emit; callers add
// these to the tokenizer alphabet so templates stay encodable.
std::string template_symbols(const std::string& src_lang, const std::string& tgt_lang);

struct ChainedOutput {
  std::string transcript;
  std::string translation;
};

// Splits decoded model output on the literal markers. Returns nothing when a
// marker is missing; the caller keeps the raw text and scores an empty
// translation.
std::optional<ChainedOutput> parse_chained_output(const std::string& text);

// Strips the leading "Translation: " marker of direct-mode output.
std::optional<std::string> parse_direct_output(const std::string& text);

}  // namespace stt
