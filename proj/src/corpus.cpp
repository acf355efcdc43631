#include "stt/corpus.hpp"

#include <algorithm>
#include <bit>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "stt/rng.hpp"

namespace stt {

namespace {

// substream tags for deriving independent RNGs from one corpus seed
constexpr uint64_t kProtoStream = 0x70726f746f;
constexpr uint64_t kTextStream = 0x74657874;
constexpr uint64_t kNoiseStream = 0x6e6f697365;

std::string letters_of(std::string_view alphabet) {
  std::string out;
  for (char c : alphabet)
    if (c != ' ') out.push_back(c);
  return out;
}

std::string rot_cipher(std::string_view text, int k, std::string_view alphabet) {
  const std::string letters = letters_of(alphabet);
  const int n = static_cast<int>(letters.size());
  std::string out(text);
  for (char& c : out) {
    if (c == ' ') continue;
    const size_t idx = letters.find(c);
    if (idx == std::string::npos)
      throw std::invalid_argument(std::string("rule: symbol '") + c + "' outside alphabet");
    c = letters[static_cast<size_t>(((static_cast<int>(idx) + k) % n + n) % n)];
  }
  return out;
}

std::string reverse_words(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  size_t start = 0;
  while (start <= text.size()) {
    size_t end = text.find(' ', start);
    if (end == std::string_view::npos) end = text.size();
    for (size_t i = end; i > start; --i) out.push_back(text[i - 1]);
    if (end == text.size()) break;
    out.push_back(' ');
    start = end + 1;
  }
  return out;
}

}  // namespace

Tokenizer::Tokenizer(std::string_view alphabet, std::string_view extra_symbols) {
  if (alphabet.empty()) throw std::invalid_argument("tokenizer: empty alphabet");
  ids_.fill(-1);
  for (char c : alphabet) {
    if (ids_[static_cast<unsigned char>(c)] >= 0)
      throw std::invalid_argument(std::string("tokenizer: duplicate symbol '") + c + "'");
    ids_[static_cast<unsigned char>(c)] = kNumSpecials + static_cast<int>(symbols_.size());
    symbols_.push_back(c);
  }
  for (char c : extra_symbols) {
    if (ids_[static_cast<unsigned char>(c)] >= 0) continue;
    ids_[static_cast<unsigned char>(c)] = kNumSpecials + static_cast<int>(symbols_.size());
    symbols_.push_back(c);
  }
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(id_of(c));
  return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= vocab_size())
      throw std::invalid_argument("tokenizer: id " + std::to_string(id) + " outside vocabulary");
    if (id < kNumSpecials) continue;
    out.push_back(symbols_[static_cast<size_t>(id - kNumSpecials)]);
  }
  return out;
}

int Tokenizer::id_of(char c) const {
  const int id = ids_[static_cast<unsigned char>(c)];
  if (id < 0)
    throw std::invalid_argument(std::string("tokenizer: symbol '") + c + "' outside alphabet");
  return id;
}

TranslationRule parse_rule(std::string_view name, int rot_k) {
  TranslationRule rule;
  rule.rot_k = rot_k;
  if (name == "rot") {
    rule.kind = RuleKind::kRot;
  } else if (name == "reverse") {
    rule.kind = RuleKind::kReverse;
  } else if (name == "rot+reverse") {
    rule.kind = RuleKind::kRotReverse;
  } else {
    throw std::invalid_argument("unknown translation rule '" + std::string(name) + "'");
  }
  return rule;
}

std::string rule_name(const TranslationRule& rule) {
  switch (rule.kind) {
    case RuleKind::kRot: return "rot";
    case RuleKind::kReverse: return "reverse";
    case RuleKind::kRotReverse: return "rot+reverse";
  }
  return "?";
}

void CorpusSpec::validate() const {
  if (alphabet.empty()) throw std::invalid_argument("corpus: empty alphabet");
  if (frames_per_token < 1) throw std::invalid_argument("corpus: frames_per_token must be >= 1");
  if (feature_dim < 2) throw std::invalid_argument("corpus: feature_dim must be >= 2");
  if (noise_sigma < 0.f) throw std::invalid_argument("corpus: noise_sigma must be >= 0");
}

Tokenizer build_tokenizer(const CorpusSpec& spec, std::string_view extra_symbols) {
  spec.validate();
  return Tokenizer(spec.alphabet, extra_symbols);
}

Tensor char_prototypes(const CorpusSpec& spec) {
  spec.validate();
  RandomSource rng(mix64(spec.seed, kProtoStream));
  Tensor protos({static_cast<int>(spec.alphabet.size()), spec.feature_dim});
  for (size_t i = 0; i < protos.numel(); ++i) protos[i] = static_cast<float>(rng.gaussian());
  return protos;
}

Tensor synth_frames(std::string_view text, const CorpusSpec& spec, uint64_t noise_seed) {
  spec.validate();
  if (text.empty()) throw std::invalid_argument("synth_frames: empty text");
  const Tensor protos = char_prototypes(spec);
  const int r = spec.frames_per_token;
  const int d = spec.feature_dim;
  Tensor frames({static_cast<int>(text.size()) * r, d});
  RandomSource noise(mix64(noise_seed, kNoiseStream));
  int row = 0;
  for (char c : text) {
    const size_t sym = spec.alphabet.find(c);
    if (sym == std::string::npos)
      throw std::invalid_argument(std::string("synth_frames: symbol '") + c + "' outside alphabet");
    for (int i = 0; i < r; ++i, ++row) {
      for (int j = 0; j < d; ++j) {
        frames.at(row, j) = protos.at(static_cast<int>(sym), j) +
                            spec.noise_sigma * static_cast<float>(noise.gaussian());
      }
    }
  }
  return frames;
}

std::string make_parallel_pair(std::string_view source_text, const TranslationRule& rule,
                               std::string_view alphabet) {
  switch (rule.kind) {
    case RuleKind::kRot: return rot_cipher(source_text, rule.rot_k, alphabet);
    case RuleKind::kReverse: return reverse_words(source_text);
    case RuleKind::kRotReverse:
      return rot_cipher(reverse_words(source_text), rule.rot_k, alphabet);
  }
  throw std::invalid_argument("unknown translation rule");
}

namespace {

// Space-separated words over the letter symbols; total length (spaces
// included) between 3 and 12 characters.
std::string random_text(RandomSource& rng, const std::string& letters, bool has_space) {
  while (true) {
    const int words = has_space ? rng.range(1, 4) : 1;
    std::string text;
    for (int w = 0; w < words; ++w) {
      if (w) text.push_back(' ');
      const int len = rng.range(1, 4);
      for (int i = 0; i < len; ++i)
        text.push_back(letters[static_cast<size_t>(rng.below(letters.size()))]);
    }
    if (text.size() >= 3 && text.size() <= 12) return text;
  }
}

}  // namespace

Corpus sample_corpus(const CorpusSpec& spec, int size, uint64_t split_seed) {
  spec.validate();
  if (size < 10) throw std::invalid_argument("sample_corpus: size must be >= 10");
  const std::string letters = letters_of(spec.alphabet);
  if (letters.empty()) throw std::invalid_argument("sample_corpus: alphabet has no letters");
  const bool has_space = spec.alphabet.find(' ') != std::string::npos;

  RandomSource text_rng(mix64(spec.seed, kTextStream));
  std::vector<std::string> texts;
  std::unordered_set<std::string> seen;
  while (static_cast<int>(texts.size()) < size) {
    std::string t = random_text(text_rng, letters, has_space);
    if (seen.insert(t).second) texts.push_back(std::move(t));
  }

  std::vector<Utterance> all(texts.size());
  for (size_t i = 0; i < texts.size(); ++i) {
    all[i].source_text = texts[i];
    all[i].target_text = make_parallel_pair(texts[i], spec.rule, spec.alphabet);
    all[i].frames = synth_frames(texts[i], spec, mix64(spec.seed, 1000003 + i));
  }

  std::vector<size_t> order(all.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  RandomSource split_rng(mix64(split_seed, 0x73706c6974));
  split_rng.shuffle(order);

  Corpus corpus;
  corpus.spec = spec;
  const int n_train = size * 90 / 100;
  const int n_dev = size * 5 / 100;
  for (size_t i = 0; i < order.size(); ++i) {
    Utterance& u = all[order[i]];
    if (static_cast<int>(i) < n_train)
      corpus.train.push_back(std::move(u));
    else if (static_cast<int>(i) < n_train + n_dev)
      corpus.dev.push_back(std::move(u));
    else
      corpus.test.push_back(std::move(u));
  }
  return corpus;
}

// ------------------------------------------------------------------ export

namespace {

constexpr char kB64Chars[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

std::vector<unsigned char> frames_le_bytes(const Tensor& frames) {
  std::vector<unsigned char> bytes;
  bytes.reserve(frames.numel() * 4);
  for (size_t i = 0; i < frames.numel(); ++i) {
    const uint32_t bits = std::bit_cast<uint32_t>(frames[i]);
    bytes.push_back(static_cast<unsigned char>(bits & 0xff));
    bytes.push_back(static_cast<unsigned char>((bits >> 8) & 0xff));
    bytes.push_back(static_cast<unsigned char>((bits >> 16) & 0xff));
    bytes.push_back(static_cast<unsigned char>((bits >> 24) & 0xff));
  }
  return bytes;
}

Tensor frames_from_le_bytes(const std::vector<unsigned char>& bytes, int rows, int cols) {
  if (bytes.size() != static_cast<size_t>(rows) * cols * 4)
    throw std::runtime_error("corpus import: frame payload size mismatch");
  Tensor frames({rows, cols});
  for (size_t i = 0; i < frames.numel(); ++i) {
    const uint32_t bits = static_cast<uint32_t>(bytes[4 * i]) |
                          (static_cast<uint32_t>(bytes[4 * i + 1]) << 8) |
                          (static_cast<uint32_t>(bytes[4 * i + 2]) << 16) |
                          (static_cast<uint32_t>(bytes[4 * i + 3]) << 24);
    frames[i] = std::bit_cast<float>(bits);
  }
  return frames;
}

}  // namespace

std::string base64_encode(const unsigned char* data, size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (size_t i = 0; i < len; i += 3) {
    const unsigned b0 = data[i];
    const unsigned b1 = i + 1 < len ? data[i + 1] : 0;
    const unsigned b2 = i + 2 < len ? data[i + 2] : 0;
    out.push_back(kB64Chars[b0 >> 2]);
    out.push_back(kB64Chars[((b0 & 0x3) << 4) | (b1 >> 4)]);
    out.push_back(i + 1 < len ? kB64Chars[((b1 & 0xf) << 2) | (b2 >> 6)] : '=');
    out.push_back(i + 2 < len ? kB64Chars[b2 & 0x3f] : '=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw std::runtime_error("base64: length not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (size_t i = 0; i < text.size(); i += 4) {
    int vals[4] = {0, 0, 0, 0};
    int pads = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + j];
      if (c == '=') {
        ++pads;
        continue;
      }
      if (pads > 0) throw std::runtime_error("base64: data after padding");
      vals[j] = b64_value(c);
      if (vals[j] < 0) throw std::runtime_error("base64: invalid character");
    }
    out.push_back(static_cast<unsigned char>((vals[0] << 2) | (vals[1] >> 4)));
    if (pads < 2) out.push_back(static_cast<unsigned char>(((vals[1] & 0xf) << 4) | (vals[2] >> 2)));
    if (pads < 1) out.push_back(static_cast<unsigned char>(((vals[2] & 0x3) << 6) | vals[3]));
  }
  return out;
}

void export_corpus(const std::vector<Utterance>& utterances, std::ostream& os) {
  for (const Utterance& u : utterances) {
    const auto bytes = frames_le_bytes(u.frames);
    nlohmann::ordered_json record;
    record["source_text"] = u.source_text;
    record["target_text"] = u.target_text;
    record["frames_b64"] = base64_encode(bytes.data(), bytes.size());
    record["shape"] = {u.frames.rows(), u.frames.cols()};
    os << record.dump() << '\n';
  }
}

std::vector<Utterance> import_corpus(std::istream& is) {
  std::vector<Utterance> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto record = nlohmann::json::parse(line);
    Utterance u;
    u.source_text = record.at("source_text").get<std::string>();
    u.target_text = record.at("target_text").get<std::string>();
    const auto shape = record.at("shape");
    const auto bytes = base64_decode(record.at("frames_b64").get<std::string>());
    u.frames = frames_from_le_bytes(bytes, shape.at(0).get<int>(), shape.at(1).get<int>());
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace stt
