#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "stt/gradcheck_suite.hpp"
#include "stt/trainer.hpp"

namespace fs = std::filesystem;
using namespace stt;

namespace {

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  Trainer trainer(load_config_file(config_path));
  auto result = trainer.train(out_dir);
  std::cout << "steps: " << result.steps << (result.early_stopped ? " (early stop)" : "") << "\n"
            << "best dev bleu: " << result.best_dev_bleu << "\n"
            << "best checkpoint: " << result.best_ckpt.string() << "\n"
            << "final checkpoint: " << result.final_ckpt.string() << "\n"
            << "metrics: " << result.metrics_path.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& split, const std::string& mode,
             const std::string& records_path) {
  Trainer trainer = trainer_from_checkpoint(ckpt);
  auto result = trainer.evaluate(split, parse_inference_mode(mode));
  std::cout << "split: " << split << "  mode: " << mode << "\n"
            << "bleu: " << result.bleu << "\n"
            << "exact_match: " << result.exact_match << "\n"
            << "parse_failure_rate: " << result.parse_failure_rate << "\n";
  if (!records_path.empty()) {
    std::ofstream f(records_path, std::ios::trunc);
    for (const auto& r : result.records) {
      nlohmann::ordered_json j;
      j["source"] = r.source;
      j["reference"] = r.reference;
      j["raw_output"] = r.raw_output;
      j["hypothesis"] = r.hypothesis;
      j["exact"] = r.exact;
      j["parse_ok"] = r.parse_ok;
      f << j.dump() << '\n';
    }
    std::cout << "records: " << records_path << "\n";
  }
  return 0;
}

int cmd_decode(const std::string& ckpt, const std::string& text, const std::string& mode) {
  Trainer trainer = trainer_from_checkpoint(ckpt);
  const InferenceMode m = parse_inference_mode(mode);
  const std::string raw = trainer.decode_text(text, m);
  std::cout << "raw: " << raw << "\n";
  if (m == InferenceMode::kChained) {
    if (auto parsed = parse_chained_output(raw)) {
      std::cout << "transcript: " << parsed->transcript << "\n"
                << "translation: " << parsed->translation << "\n";
    } else {
      std::cout << "parse: failed\n";
    }
  } else {
    if (auto parsed = parse_direct_output(raw)) {
      std::cout << "translation: " << *parsed << "\n";
    } else {
      std::cout << "parse: failed\n";
    }
  }
  return 0;
}

int cmd_gradcheck(int seeds) {
  const auto results = run_gradcheck_suite(seeds);
  const auto sweep = run_eps_sweep();
  const bool ok = print_gradcheck_report(results, sweep, std::cout);
  return ok ? 0 : 1;
}

int cmd_ablate(const std::string& config_path, const std::string& out_path) {
  RunConfig cfg = load_config_file(config_path);
  const fs::path work = fs::path(out_path).parent_path() / "ablate_runs";
  auto rows = ablation_matrix(cfg, work.empty() ? fs::path("ablate_runs") : work);
  std::ofstream f(out_path, std::ios::trunc);
  if (!f) throw std::runtime_error("ablate: cannot write " + out_path);
  write_ablation_report(rows, f);
  write_ablation_report(rows, std::cout);
  return 0;
}

int cmd_export_corpus(const std::string& config_path, const std::string& out_path,
                      const std::string& split) {
  RunConfig cfg = load_config_file(config_path);
  Corpus corpus = sample_corpus(cfg.corpus, cfg.corpus_size, cfg.split_seed);
  const std::vector<Utterance>* utts = nullptr;
  if (split == "train") utts = &corpus.train;
  else if (split == "dev") utts = &corpus.dev;
  else if (split == "test") utts = &corpus.test;
  else throw std::runtime_error("export-corpus: unknown split '" + split + "'");
  std::ofstream f(out_path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("export-corpus: cannot write " + out_path);
  export_corpus(*utts, f);
  std::cout << "wrote " << utts->size() << " records to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speech-to-text translation sandbox: decoder-only model over synthetic speech"};
  app.require_subcommand(1);

  std::string config_path, out_path, ckpt, split = "test", mode = "direct", text, records;
  int seeds = 20;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--out", out_path, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus split");
  eval->add_option("--ckpt", ckpt, "checkpoint path")->required();
  eval->add_option("--split", split, "train|dev|test");
  eval->add_option("--mode", mode, "direct|chained");
  eval->add_option("--records", records, "write per-sample records (jsonl)");

  auto* decode = app.add_subcommand("decode", "translate one source text");
  decode->add_option("--ckpt", ckpt, "checkpoint path")->required();
  decode->add_option("--text", text, "source text over the corpus alphabet")->required();
  decode->add_option("--mode", mode, "direct|chained");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--seeds", seeds, "random seeds per primitive");

  auto* ablate = app.add_subcommand("ablate", "policy x task-set ablation matrix");
  ablate->add_option("--config", config_path, "config file")->required();
  ablate->add_option("--out", out_path, "report path (tsv)")->required();

  auto* exportc = app.add_subcommand("export-corpus", "write a corpus split as jsonl records");
  exportc->add_option("--config", config_path, "config file")->required();
  exportc->add_option("--out", out_path, "output path")->required();
  exportc->add_option("--split", split, "train|dev|test");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, out_path);
    if (eval->parsed()) return cmd_eval(ckpt, split, mode, records);
    if (decode->parsed()) return cmd_decode(ckpt, text, mode);
    if (gradcheck->parsed()) return cmd_gradcheck(seeds);
    if (ablate->parsed()) return cmd_ablate(config_path, out_path);
    if (exportc->parsed()) return cmd_export_corpus(config_path, out_path, split);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
