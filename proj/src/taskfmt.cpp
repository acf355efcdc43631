#include "stt/taskfmt.hpp"

#include <algorithm>
#include <stdexcept>

namespace stt {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(' ');
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(' ');
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string instruction_for(Formulation t, const std::string& src_lang,
                            const std::string& tgt_lang) {
  if (src_lang.empty() || tgt_lang.empty())
    throw std::invalid_argument("instruction_for: language names must be non-empty");
  switch (t) {
    case Formulation::kDirect:
      return "Translate the " + src_lang + " speech into " + tgt_lang + " text.";
    case Formulation::kAsr:
      return "Transcribe the " + src_lang + " speech.";
    case Formulation::kChained:
      return "Transcribe the " + src_lang + " speech, then translate it into " + tgt_lang +
             " text.";
  }
  throw std::invalid_argument("instruction_for: unknown formulation");
}

std::string format_target(const Utterance& u, Formulation t) {
  switch (t) {
    case Formulation::kDirect:
      return std::string(kTranslationMarker) + u.target_text;
    case Formulation::kAsr:
      return std::string(kTranscriptionMarker) + u.source_text;
    case Formulation::kChained:
      return std::string(kTranscriptionMarker) + u.source_text + " " + kTranslationMarker +
             u.target_text;
  }
  throw std::invalid_argument("format_target: unknown formulation");
}

TaskSample format_sample(const Utterance& u, Formulation t, const Tokenizer& tok,
                         const std::string& src_lang, const std::string& tgt_lang) {
  if (u.source_text.empty() || u.target_text.empty() || u.frames.empty())
    throw std::invalid_argument("format_sample: utterance fields must be non-empty");
  TaskSample s;
  s.tag = t;
  s.source_text = u.source_text;
  s.target_text = u.target_text;
  s.frames = u.frames;

  s.prefix_ids.push_back(Tokenizer::kBos);
  for (int id : tok.encode(instruction_for(t, src_lang, tgt_lang))) s.prefix_ids.push_back(id);
  s.prefix_ids.push_back(Tokenizer::kSep);

  s.suffix_ids.push_back(Tokenizer::kSep);

  s.target_ids = tok.encode(format_target(u, t));
  s.target_ids.push_back(Tokenizer::kEos);
  return s;
}

std::string template_symbols(const std::string& src_lang, const std::string& tgt_lang) {
  std::string pool;
  for (Formulation t : {Formulation::kDirect, Formulation::kAsr, Formulation::kChained})
    pool += instruction_for(t, src_lang, tgt_lang);
  pool += kTranscriptionMarker;
  pool += kTranslationMarker;
  std::string out;
  for (char c : pool)
    if (out.find(c) == std::string::npos) out.push_back(c);
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<ChainedOutput> parse_chained_output(const std::string& text) {
  const std::string first = kTranscriptionMarker;
  const std::string second = std::string(" ") + kTranslationMarker;
  const size_t a = text.find(first);
  if (a == std::string::npos) return std::nullopt;
  const size_t b = text.find(second, a + first.size());
  if (b == std::string::npos) return std::nullopt;
  ChainedOutput out;
  out.transcript = trim(text.substr(a + first.size(), b - (a + first.size())));
  out.translation = trim(text.substr(b + second.size()));
  return out;
}

std::optional<std::string> parse_direct_output(const std::string& text) {
  const std::string marker = kTranslationMarker;
  if (text.rfind(marker, 0) != 0) return std::nullopt;
  return trim(text.substr(marker.size()));
}

}  // namespace stt
