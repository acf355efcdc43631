#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stt/corpus.hpp"
#include "stt/model.hpp"
#include "stt/peft.hpp"

namespace stt {

enum class InferenceMode { kDirect, kChained };

inline const char* inference_mode_name(InferenceMode m) {
  return m == InferenceMode::kDirect ? "direct" : "chained";
}

inline InferenceMode parse_inference_mode(const std::string& name) {
  if (name == "direct") return InferenceMode::kDirect;
  if (name == "chained") return InferenceMode::kChained;
  throw std::invalid_argument("unknown inference mode '" + name + "'");
}

struct TrainConfig {
  double peak_lr = 1e-3;
  int warmup_steps = 200;
  int max_steps = 5000;
  int batch_frames = 4096;
  uint64_t seed = 1;
  InferenceMode inference_mode = InferenceMode::kDirect;
  int eval_every = 250;
  double early_stop_exact = 0.0;  // <= 0 disables early stopping
  int threads = 4;
};

// Everything one run needs; parsed from flat `key = value` lines.
struct RunConfig {
  CorpusSpec corpus;
  int corpus_size = 2000;
  uint64_t split_seed = 17;

  EncoderConfig encoder;  // input_dim/decoder_dim are derived, not keys
  DecoderConfig decoder;  // vocab is derived from the tokenizer

  TrainConfig train;
  PeftPolicy policy = PeftPolicy::kLna;
  LoraConfig lora;

  std::array<double, 3> task_weights{1.0, 1.0, 1.0};  // f, f_ASR, f_chain
  std::string src_lang = "source";
  std::string tgt_lang = "target";

  std::vector<std::string> ablate_policies{"lna", "lora-qv-8", "lora-qkvo-32",
                                           "lora-all-32", "freeze-encoder", "freeze-decoder"};
  std::vector<std::string> ablate_task_sets{"all", "-f_chain", "-f_asr", "-both"};
  std::vector<uint64_t> ablate_seeds{1};
  int ablate_max_steps = 300;

  void validate() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::filesystem::path& path);

// Canonical echo: every key, fixed order, re-parseable.
std::string serialize_config(const RunConfig& cfg);

// Task-set name -> formulation weights (f, f_ASR, f_chain).
std::array<double, 3> task_set_weights(const std::string& name);

}  // namespace stt
