#include "stt/trainer.hpp"

#include <chrono>
#include <exception>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "stt/optim.hpp"
#include "stt/rng.hpp"

namespace stt {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

void set_opt(nlohmann::ordered_json& j, const char* key, const std::optional<double>& v) {
  if (v)
    j[key] = *v;
  else
    j[key] = nullptr;
}

Formulation draw_formulation(RandomSource& rng, const std::array<double, 3>& weights) {
  const double total = weights[0] + weights[1] + weights[2];
  const double u = rng.uniform01() * total;
  if (u < weights[0]) return Formulation::kDirect;
  if (u < weights[0] + weights[1]) return Formulation::kAsr;
  return Formulation::kChained;
}

// Forward/backward for a contiguous wave of samples on worker threads; the
// per-sample graphs are returned so gradients can be harvested in sample
// order on the caller's thread (fixed reduction order, any thread count).
struct SampleGraph {
  VarT<float> loss;
  std::optional<GraphCtx> ctx;
};

std::vector<float> batch_backward(Model& model, const std::vector<TaskSample>& batch,
                                  int threads) {
  std::vector<float> losses(batch.size(), 0.f);
  const float inv_batch = 1.0f / static_cast<float>(batch.size());
  for (size_t wave = 0; wave < batch.size(); wave += static_cast<size_t>(threads)) {
    const size_t end = std::min(batch.size(), wave + static_cast<size_t>(threads));
    std::vector<SampleGraph> graphs(end - wave);
    std::vector<std::exception_ptr> errors(end - wave);
    std::vector<std::thread> pool;
    for (size_t i = wave; i < end; ++i) {
      pool.emplace_back([&, i]() {
        try {
          GraphCtx ctx(model.params);
          auto loss = sample_loss(model, ctx, batch[i]);
          backward(loss);
          graphs[i - wave] = SampleGraph{loss, std::move(ctx)};
        } catch (...) {
          errors[i - wave] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (size_t i = wave; i < end; ++i) {
      if (errors[i - wave]) std::rethrow_exception(errors[i - wave]);
      losses[i] = graphs[i - wave].loss->value[0];
      graphs[i - wave].ctx->harvest_grads(inv_batch);
      graphs[i - wave] = SampleGraph{};  // free the graph before the next harvest
    }
  }
  return losses;
}

std::vector<std::string> decode_all(Model& model, const Tokenizer& tok, const RunConfig& cfg,
                                    const std::vector<Utterance>& utts, Formulation tag,
                                    int threads) {
  std::vector<std::string> raw(utts.size());
  for (size_t wave = 0; wave < utts.size(); wave += static_cast<size_t>(threads)) {
    const size_t end = std::min(utts.size(), wave + static_cast<size_t>(threads));
    std::vector<std::exception_ptr> errors(end - wave);
    std::vector<std::thread> pool;
    for (size_t i = wave; i < end; ++i) {
      pool.emplace_back([&, i]() {
        try {
          TaskSample s = format_sample(utts[i], tag, tok, cfg.src_lang, cfg.tgt_lang);
          auto result = greedy_decode(model, s,
                                      decode_budget(static_cast<int>(utts[i].source_text.size())));
          raw[i] = tok.decode(result.ids);
        } catch (...) {
          errors[i - wave] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return raw;
}

}  // namespace

std::string metrics_to_json(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["train_loss"] = r.train_loss;
  j["lr"] = r.lr;
  set_opt(j, "loss_f", r.loss_f);
  set_opt(j, "loss_asr", r.loss_asr);
  set_opt(j, "loss_chain", r.loss_chain);
  set_opt(j, "dev_bleu", r.dev_bleu);
  set_opt(j, "dev_exact", r.dev_exact);
  j["wall_time"] = r.wall_time;
  return j.dump();
}

int decode_budget(int source_len) { return 40 + 2 * source_len; }

Tokenizer tokenizer_for(const RunConfig& cfg) {
  return build_tokenizer(cfg.corpus, template_symbols(cfg.src_lang, cfg.tgt_lang));
}

Model build_model_for(const RunConfig& cfg, const Tokenizer& tok) {
  EncoderConfig enc = cfg.encoder;
  enc.input_dim = cfg.corpus.feature_dim;
  enc.decoder_dim = cfg.decoder.model_dim;
  DecoderConfig dec = cfg.decoder;
  dec.vocab = tok.vocab_size();
  Model m = make_model<float>(enc, dec, cfg.train.seed);
  apply_peft(m, cfg.policy, cfg.lora, cfg.train.seed);
  return m;
}

EvalResult score_outputs(const std::vector<Utterance>& utterances,
                         const std::vector<std::string>& raw_outputs, InferenceMode mode) {
  if (utterances.size() != raw_outputs.size())
    throw std::invalid_argument("score_outputs: size mismatch");
  EvalResult result;
  std::vector<std::string> hyps, refs;
  size_t failures = 0;
  for (size_t i = 0; i < utterances.size(); ++i) {
    EvalRecord rec;
    rec.source = utterances[i].source_text;
    rec.reference = utterances[i].target_text;
    rec.raw_output = raw_outputs[i];
    if (mode == InferenceMode::kDirect) {
      auto parsed = parse_direct_output(raw_outputs[i]);
      rec.parse_ok = parsed.has_value();
      rec.hypothesis = parsed.value_or("");
    } else {
      auto parsed = parse_chained_output(raw_outputs[i]);
      rec.parse_ok = parsed.has_value();
      rec.hypothesis = parsed ? parsed->translation : "";
    }
    if (!rec.parse_ok) ++failures;  // scored as an empty translation
    rec.exact = rec.hypothesis == rec.reference;
    hyps.push_back(rec.hypothesis);
    refs.push_back(rec.reference);
    result.records.push_back(std::move(rec));
  }
  result.bleu = corpus_bleu(hyps, refs);
  size_t exact = 0;
  for (const auto& r : result.records) exact += r.exact;
  result.exact_match = static_cast<double>(exact) / utterances.size();
  result.parse_failure_rate = static_cast<double>(failures) / utterances.size();
  return result;
}

EvalResult evaluate_with(
    const std::function<std::string(const Utterance&, Formulation)>& decode_raw,
    const std::vector<Utterance>& utterances, InferenceMode mode) {
  const Formulation tag =
      mode == InferenceMode::kDirect ? Formulation::kDirect : Formulation::kChained;
  std::vector<std::string> raw;
  raw.reserve(utterances.size());
  for (const auto& u : utterances) raw.push_back(decode_raw(u, tag));
  return score_outputs(utterances, raw, mode);
}

namespace {

RunConfig validated(RunConfig cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

Trainer::Trainer(RunConfig cfg)
    : cfg_(validated(std::move(cfg))),
      tok_(tokenizer_for(cfg_)),
      corpus_(sample_corpus(cfg_.corpus, cfg_.corpus_size, cfg_.split_seed)),
      model_(build_model_for(cfg_, tok_)) {}

const std::vector<Utterance>& Trainer::split_utterances(const std::string& split) const {
  if (split == "train") return corpus_.train;
  if (split == "dev") return corpus_.dev;
  if (split == "test") return corpus_.test;
  throw std::invalid_argument("unknown split '" + split + "'");
}

EvalResult Trainer::evaluate(const std::string& split, InferenceMode mode) {
  const Formulation tag =
      mode == InferenceMode::kDirect ? Formulation::kDirect : Formulation::kChained;
  const auto& utts = split_utterances(split);
  auto raw = decode_all(model_, tok_, cfg_, utts, tag, cfg_.train.threads);
  return score_outputs(utts, raw, mode);
}

std::string Trainer::decode_text(const std::string& source_text, InferenceMode mode) {
  Utterance u;
  u.source_text = source_text;
  // placeholder reference; decoding never reads it but it must be encodable
  u.target_text = cfg_.corpus.alphabet.substr(0, 1);
  u.frames = synth_frames(source_text, cfg_.corpus, mix64(cfg_.corpus.seed, 0x646563));
  const Formulation tag =
      mode == InferenceMode::kDirect ? Formulation::kDirect : Formulation::kChained;
  TaskSample s = format_sample(u, tag, tok_, cfg_.src_lang, cfg_.tgt_lang);
  auto result = greedy_decode(model_, s, decode_budget(static_cast<int>(source_text.size())));
  return tok_.decode(result.ids);
}

TrainResult Trainer::train(const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const std::string config_echo = serialize_config(cfg_);
  {
    std::ofstream cf(out_dir / "config.txt", std::ios::trunc);
    cf << config_echo;
  }

  TrainResult result;
  result.best_ckpt = out_dir / "best.ckpt";
  result.final_ckpt = out_dir / "final.ckpt";
  result.metrics_path = out_dir / "metrics.jsonl";

  std::ofstream metrics(result.metrics_path, std::ios::trunc);
  if (!metrics) throw std::runtime_error("train: cannot write " + result.metrics_path.string());

  AdamW opt(model_.params);
  RandomSource shuffle_rng(mix64(cfg_.train.seed, 0x73687566));
  RandomSource task_rng(mix64(cfg_.train.seed, 0x7461736b));

  std::vector<size_t> order(corpus_.train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();  // forces a shuffle before the first batch

  const auto t0 = Clock::now();
  bool stop = false;

  for (int step = 1; step <= cfg_.train.max_steps && !stop; ++step) {
    // batch utterances under the frame budget
    std::vector<TaskSample> batch;
    long frames_used = 0;
    while (true) {
      if (cursor >= order.size()) {
        shuffle_rng.shuffle(order);
        cursor = 0;
      }
      const Utterance& u = corpus_.train[order[cursor]];
      const long f = u.frames.rows();
      if (!batch.empty() && frames_used + f > cfg_.train.batch_frames) break;
      ++cursor;
      const Formulation tag = draw_formulation(task_rng, cfg_.task_weights);
      ++result.formulation_counts[static_cast<size_t>(tag)];
      batch.push_back(format_sample(u, tag, tok_, cfg_.src_lang, cfg_.tgt_lang));
      frames_used += f;
      if (frames_used >= cfg_.train.batch_frames) break;
    }

    const auto losses = batch_backward(model_, batch, cfg_.train.threads);

    MetricsRecord rec;
    rec.step = step;
    rec.lr = lr_at(step, cfg_.train.peak_lr, cfg_.train.warmup_steps, cfg_.train.max_steps);
    double sum = 0.0;
    std::array<double, 3> tag_sum{0, 0, 0};
    std::array<int, 3> tag_count{0, 0, 0};
    for (size_t i = 0; i < batch.size(); ++i) {
      sum += losses[i];
      tag_sum[static_cast<size_t>(batch[i].tag)] += losses[i];
      ++tag_count[static_cast<size_t>(batch[i].tag)];
    }
    rec.train_loss = sum / static_cast<double>(batch.size());
    if (tag_count[0]) rec.loss_f = tag_sum[0] / tag_count[0];
    if (tag_count[1]) rec.loss_asr = tag_sum[1] / tag_count[1];
    if (tag_count[2]) rec.loss_chain = tag_sum[2] / tag_count[2];

    if (!std::isfinite(rec.train_loss)) {
      metrics << metrics_to_json(rec) << '\n';
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                               "; last good checkpoint: " + result.best_ckpt.string());
    }

    opt.step(rec.lr);
    result.steps = step;

    const bool eval_now = step % cfg_.train.eval_every == 0 || step == cfg_.train.max_steps;
    if (eval_now) {
      auto dev = evaluate("dev", cfg_.train.inference_mode);
      rec.dev_bleu = dev.bleu;
      rec.dev_exact = dev.exact_match;
      if (dev.bleu > result.best_dev_bleu) {
        result.best_dev_bleu = dev.bleu;
        save_checkpoint(model_.params, config_echo, result.best_ckpt);
      }
      if (cfg_.train.early_stop_exact > 0 && dev.exact_match >= cfg_.train.early_stop_exact) {
        result.early_stopped = true;
        stop = true;
      }
    }
    rec.wall_time = std::chrono::duration<double>(Clock::now() - t0).count();
    metrics << metrics_to_json(rec) << '\n' << std::flush;
  }

  // guarantee a best checkpoint even when no eval step fired
  if (result.best_dev_bleu < 0) {
    auto dev = evaluate("dev", cfg_.train.inference_mode);
    result.best_dev_bleu = dev.bleu;
    save_checkpoint(model_.params, config_echo, result.best_ckpt);
  }
  save_checkpoint(model_.params, config_echo, result.final_ckpt);
  return result;
}

Trainer trainer_from_checkpoint(const fs::path& ckpt_path) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  RunConfig cfg = parse_config_text(ckpt.config_text);
  Trainer trainer(cfg);
  trainer.restore(ckpt);
  return trainer;
}

namespace {

// "lna" | "full" | "freeze-encoder" | "freeze-decoder" | "lora-<targets>-<rank>"
void apply_policy_string(RunConfig& cfg, const std::string& policy) {
  if (policy.rfind("lora-", 0) == 0) {
    const size_t dash = policy.rfind('-');
    if (dash == 4) throw std::invalid_argument("bad lora policy '" + policy + "'");
    const std::string targets = policy.substr(5, dash - 5);
    cfg.policy = PeftPolicy::kLora;
    cfg.lora.targets = parse_lora_targets(targets == "all" ? "all-linear" : targets);
    cfg.lora.rank = static_cast<int>(std::stol(policy.substr(dash + 1)));
    return;
  }
  cfg.policy = parse_peft_policy(policy);
}

}  // namespace

std::vector<AblationRow> ablation_matrix(const RunConfig& base, const fs::path& work_dir) {
  std::vector<AblationRow> rows;
  for (const std::string& policy : base.ablate_policies) {
    for (const std::string& task_set : base.ablate_task_sets) {
      for (uint64_t seed : base.ablate_seeds) {
        AblationRow row;
        row.policy = policy;
        row.task_set = task_set;
        row.seed = seed;
        try {
          RunConfig cfg = base;
          apply_policy_string(cfg, policy);
          cfg.task_weights = task_set_weights(task_set);
          cfg.train.seed = seed;
          if (base.ablate_max_steps > 0) {
            cfg.train.max_steps = base.ablate_max_steps;
            cfg.train.warmup_steps =
                std::min(cfg.train.warmup_steps, std::max(1, cfg.train.max_steps / 10));
          }
          cfg.validate();
          Trainer trainer(cfg);
          const fs::path cell_dir =
              work_dir / (policy + "_" + task_set + "_s" + std::to_string(seed));
          trainer.train(cell_dir);
          auto eval = trainer.evaluate("test", cfg.train.inference_mode);
          row.bleu = eval.bleu;
          row.exact_match = eval.exact_match;
        } catch (const std::exception& e) {
          row.status = std::string("error: ") + e.what();
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

void write_ablation_report(const std::vector<AblationRow>& rows, std::ostream& os) {
  os << "policy\ttask_set\tseed\tbleu\texact_match\tstatus\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.4f\t%.4f", r.bleu, r.exact_match);
    os << r.policy << '\t' << r.task_set << '\t' << r.seed << '\t' << buf << '\t' << r.status
       << '\n';
  }
}

}  // namespace stt
