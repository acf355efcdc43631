#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stt/bleu.hpp"
#include "stt/checkpoint.hpp"
#include "stt/config.hpp"
#include "stt/model.hpp"

namespace stt {

struct MetricsRecord {
  int step = 0;
  double train_loss = 0.0;
  double lr = 0.0;
  std::optional<double> loss_f;
  std::optional<double> loss_asr;
  std::optional<double> loss_chain;
  std::optional<double> dev_bleu;
  std::optional<double> dev_exact;
  double wall_time = 0.0;
};

std::string metrics_to_json(const MetricsRecord& r);

struct EvalRecord {
  std::string source;
  std::string reference;
  std::string raw_output;
  std::string hypothesis;
  bool exact = false;
  bool parse_ok = false;
};

struct EvalResult {
  double bleu = 0.0;
  double exact_match = 0.0;
  double parse_failure_rate = 0.0;
  std::vector<EvalRecord> records;
};

struct TrainResult {
  std::filesystem::path best_ckpt;
  std::filesystem::path final_ckpt;
  std::filesystem::path metrics_path;
  int steps = 0;
  double best_dev_bleu = -1.0;
  bool early_stopped = false;
  std::array<long, 3> formulation_counts{0, 0, 0};  // f, f_ASR, f_chain
};

Tokenizer tokenizer_for(const RunConfig& cfg);
Model build_model_for(const RunConfig& cfg, const Tokenizer& tok);

// Scores raw decoded texts against references for one inference mode.
EvalResult score_outputs(const std::vector<Utterance>& utterances,
                         const std::vector<std::string>& raw_outputs, InferenceMode mode);

// Scoring harness over an arbitrary decode function (used directly in tests;
// the model path goes through Trainer::evaluate).
EvalResult evaluate_with(
    const std::function<std::string(const Utterance&, Formulation)>& decode_raw,
    const std::vector<Utterance>& utterances, InferenceMode mode);

int decode_budget(int source_len);

// Owns one run's corpus, tokenizer and model.
class Trainer {
 public:
  explicit Trainer(RunConfig cfg);

  TrainResult train(const std::filesystem::path& out_dir);
  EvalResult evaluate(const std::string& split, InferenceMode mode);
  std::string decode_text(const std::string& source_text, InferenceMode mode);

  Model& model() { return model_; }
  const Tokenizer& tokenizer() const { return tok_; }
  const Corpus& corpus() const { return corpus_; }
  const RunConfig& config() const { return cfg_; }
  void restore(const LoadedCheckpoint& ckpt) { restore_registry(model_.params, ckpt); }

 private:
  const std::vector<Utterance>& split_utterances(const std::string& split) const;

  RunConfig cfg_;
  Tokenizer tok_;
  Corpus corpus_;
  Model model_;
};

// Rebuilds a full run (config, tokenizer, model weights) from a checkpoint.
Trainer trainer_from_checkpoint(const std::filesystem::path& ckpt_path);

struct AblationRow {
  std::string policy;
  std::string task_set;
  uint64_t seed = 0;
  double bleu = 0.0;
  double exact_match = 0.0;
  std::string status = "ok";
};

// Trains and evaluates every configured (policy x task set x seed) cell.
// Individual cell failures are recorded in the row; the matrix continues.
std::vector<AblationRow> ablation_matrix(const RunConfig& base,
                                         const std::filesystem::path& work_dir);

void write_ablation_report(const std::vector<AblationRow>& rows, std::ostream& os);

}  // namespace stt
