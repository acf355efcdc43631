#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stt/config.hpp"

using namespace stt;

TEST_CASE("defaults parse and validate") {
  RunConfig cfg = parse_config_text("");
  CHECK(cfg.corpus.alphabet == "abcdefghijklmnop ");
  CHECK(cfg.corpus.frames_per_token == 4);
  CHECK(cfg.corpus.feature_dim == 16);
  CHECK(cfg.corpus.noise_sigma == doctest::Approx(0.1));
  CHECK(cfg.corpus_size == 2000);
  CHECK(cfg.encoder.layers == 2);
  CHECK(cfg.encoder.model_dim == 64);
  CHECK(cfg.encoder.adaptor_k == 2);
  CHECK(cfg.encoder.input_dim == 16);    // derived
  CHECK(cfg.encoder.decoder_dim == 128); // derived
  CHECK(cfg.decoder.layers == 4);
  CHECK(cfg.decoder.model_dim == 128);
  CHECK(cfg.decoder.ffn_dim == 512);
  CHECK(cfg.decoder.max_positions == 512);
  CHECK(cfg.policy == PeftPolicy::kLna);
  CHECK(cfg.train.peak_lr == doctest::Approx(1e-3));
  CHECK(cfg.train.warmup_steps == 200);
  CHECK(cfg.train.max_steps == 5000);
  CHECK(cfg.train.batch_frames == 4096);
  CHECK(cfg.task_weights == std::array<double, 3>{1.0, 1.0, 1.0});
}

TEST_CASE("key parsing, comments, quoting") {
  RunConfig cfg = parse_config_text(
      "# a comment line\n"
      "peft.policy = lora\n"
      "lora.rank = 32\n"
      "lora.targets = qkvo\n"
      "adaptor.k = 4   # trailing comment\n"
      "tasks.weights = 1, 0, 1\n"
      "corpus.alphabet = \"abcd \"\n"
      "corpus.rule = rot\n"
      "corpus.rot_k = 2\n"
      "train.inference_mode = chained\n"
      "train.seed = 99\n");
  CHECK(cfg.policy == PeftPolicy::kLora);
  CHECK(cfg.lora.rank == 32);
  CHECK(cfg.lora.targets == LoraTargets::kQKVO);
  CHECK(cfg.encoder.adaptor_k == 4);
  CHECK(cfg.task_weights == std::array<double, 3>{1.0, 0.0, 1.0});
  CHECK(cfg.corpus.alphabet == "abcd ");
  CHECK(cfg.corpus.rule.kind == RuleKind::kRot);
  CHECK(cfg.corpus.rule.rot_k == 2);
  CHECK(cfg.train.inference_mode == InferenceMode::kChained);
  CHECK(cfg.train.seed == 99);
}

TEST_CASE("unknown keys and malformed lines are errors") {
  CHECK_THROWS_WITH_AS(parse_config_text("nope.key = 1\n"), doctest::Contains("unknown key"),
                       std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("just words\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("lora.rank = abc\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("tasks.weights = 1,2\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("train.warmup_steps = 9999\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("peft.policy = wild\n"), std::invalid_argument);
}

TEST_CASE("serialize -> parse round trip") {
  RunConfig cfg = parse_config_text(
      "corpus.noise_sigma = 0.25\n"
      "train.peak_lr = 0.00371\n"
      "train.early_stop_exact = 0.97\n"
      "peft.policy = lora\n"
      "lora.rank = 4\n"
      "ablate.seeds = 3,5\n"
      "ablate.policies = lna,freeze-encoder\n");
  const std::string echo = serialize_config(cfg);
  RunConfig back = parse_config_text(echo);
  CHECK(serialize_config(back) == echo);
  CHECK(back.corpus.noise_sigma == cfg.corpus.noise_sigma);
  CHECK(back.train.peak_lr == cfg.train.peak_lr);
  CHECK(back.train.early_stop_exact == cfg.train.early_stop_exact);
  CHECK(back.ablate_seeds == std::vector<uint64_t>{3, 5});
  CHECK(back.ablate_policies == std::vector<std::string>{"lna", "freeze-encoder"});
  // the default alphabet's trailing space survives quoting
  CHECK(back.corpus.alphabet == "abcdefghijklmnop ");
}

TEST_CASE("task set weights") {
  CHECK(task_set_weights("all") == std::array<double, 3>{1, 1, 1});
  CHECK(task_set_weights("-f_chain") == std::array<double, 3>{1, 1, 0});
  CHECK(task_set_weights("-f_asr") == std::array<double, 3>{1, 0, 1});
  CHECK(task_set_weights("-both") == std::array<double, 3>{1, 0, 0});
  CHECK_THROWS_AS(task_set_weights("everything"), std::invalid_argument);
}
