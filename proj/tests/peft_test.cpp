#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stt/model.hpp"
#include "stt/optim.hpp"
#include "test_util.hpp"

using namespace stt;

namespace {

EncoderConfig toy_enc() {
  EncoderConfig e;
  e.layers = 1;
  e.model_dim = 8;
  e.heads = 2;
  e.ffn_dim = 16;
  e.input_dim = 4;
  e.adaptor_k = 2;
  e.decoder_dim = 16;
  return e;
}

DecoderConfig toy_dec() {
  DecoderConfig d;
  d.layers = 2;
  d.model_dim = 16;
  d.heads = 2;
  d.ffn_dim = 32;
  d.vocab = 12;
  d.max_positions = 48;
  return d;
}

TaskSample toy_task(RandomSource& rng) {
  TaskSample s;
  s.prefix_ids = {Tokenizer::kBos, 5, 6, Tokenizer::kSep};
  s.suffix_ids = {Tokenizer::kSep};
  s.target_ids = {7, 8, 9, Tokenizer::kEos};
  s.frames = test::random_tensor<float>({6, 4}, rng);
  return s;
}

Tensor model_logits(Model& m, const TaskSample& s) {
  GraphCtx ctx(m.params, false);
  auto speech = length_adapt(m, ctx, encode_frames(m, ctx, s.frames));
  auto input = assemble_sequence(m, ctx, s, speech, true);
  return output_logits(m, ctx, decoder_forward(m, ctx, input))->value;
}

void train_steps(Model& m, AdamW& opt, const TaskSample& s, int steps) {
  for (int i = 0; i < steps; ++i) {
    GraphCtx ctx(m.params);
    auto loss = sample_loss(m, ctx, s);
    backward(loss);
    ctx.harvest_grads();
    opt.step(1e-3);
  }
}

}  // namespace

TEST_CASE("apply_lna: trainable groups") {
  auto m = make_model<float>(toy_enc(), toy_dec(), 3);
  apply_peft(m, PeftPolicy::kLna, LoraConfig{}, 3);

  size_t attn_weight_elems = 0;
  for (const auto* p : m.params.ordered()) {
    switch (p->group) {
      case ParamGroup::kEncoder:
      case ParamGroup::kAdaptor:
      case ParamGroup::kDecoderLn:
      case ParamGroup::kDecoderAttn:
        CHECK(p->trainable);
        break;
      case ParamGroup::kDecoderEmbed:
      case ParamGroup::kDecoderFfn:
      case ParamGroup::kOutputProj:
        CHECK_FALSE(p->trainable);
        break;
    }
    if (p->group == ParamGroup::kDecoderAttn && p->value.rank() == 2 && p->trainable)
      attn_weight_elems += p->value.numel();
  }
  // q,k,v,o weight matrices: 4 * 16 * 16 * 2 layers
  CHECK(attn_weight_elems == 2048);
}

TEST_CASE("apply_lora: adapter counts per target set") {
  for (auto [targets, rank, expected] :
       std::vector<std::tuple<LoraTargets, int, size_t>>{{LoraTargets::kQV, 8, 4},
                                                         {LoraTargets::kQKVO, 8, 8},
                                                         {LoraTargets::kAllLinear, 8, 13}}) {
    auto m = make_model<float>(toy_enc(), toy_dec(), 5);
    LoraConfig cfg;
    cfg.rank = rank;
    cfg.targets = targets;
    apply_peft(m, PeftPolicy::kLora, cfg, 5);
    CHECK(m.peft.adapters.size() == expected);  // 2L / 4L / 6L+1 with L=2
    for (const auto& a : m.peft.adapters) {
      CHECK(m.params.at(a.a_name).trainable);
      CHECK(m.params.at(a.b_name).trainable);
      CHECK_FALSE(m.params.at(a.base).trainable);
    }
    // every base decoder weight frozen; encoder and adaptor still train
    CHECK(m.params.at("dec.embed.tok").trainable == false);
    CHECK(m.params.at("dec.l0.ln1.g").trainable == false);
    CHECK(m.params.at("enc.in_proj.w").trainable);
    CHECK(m.params.at("adaptor.w").trainable);
  }
}

TEST_CASE("apply_lora: rank exceeding the weight dims is rejected") {
  auto m = make_model<float>(toy_enc(), toy_dec(), 5);
  LoraConfig cfg;
  cfg.rank = 17;  // decoder weights are 16x16
  CHECK_THROWS_WITH_AS(apply_peft(m, PeftPolicy::kLora, cfg, 5), doctest::Contains("rank"),
                       std::invalid_argument);
}

TEST_CASE("lora forward: hand case and zero-init identity") {
  // y = x W + scale (x A) B with W=I, A=[0,1]^T, B=[1,0], scale 1
  auto x = make_leaf(Tensor({1, 2}, {3, 5}), true);
  auto w = make_leaf(Tensor({2, 2}, {1, 0, 0, 1}), false);  // frozen base
  auto a = make_leaf(Tensor({2, 1}, {0, 1}), true);
  auto b = make_leaf(Tensor({1, 2}, {1, 0}), true);
  auto y = add(matmul(x, w), scalar_mul(matmul(matmul(x, a), b), 1.0f));
  CHECK(y->value[0] == 8.f);  // x1 + x2
  CHECK(y->value[1] == 5.f);  // x2

  // gradients flow into A and B but not the frozen base weight
  backward(sum_all(y));
  CHECK(a->grad_ready());
  CHECK(b->grad_ready());
  CHECK_FALSE(w->grad_ready());

  // zero-init B: model logits identical to the base model, bitwise
  auto base = make_model<float>(toy_enc(), toy_dec(), 7);
  auto lora = make_model<float>(toy_enc(), toy_dec(), 7);
  LoraConfig cfg;
  cfg.rank = 4;
  cfg.targets = LoraTargets::kQKVO;
  apply_peft(lora, PeftPolicy::kLora, cfg, 7);
  RandomSource rng(9);
  TaskSample s = toy_task(rng);
  CHECK(test::bitwise_equal(model_logits(base, s), model_logits(lora, s)));
}

TEST_CASE("merge_lora: hand case, identity, double-merge, equivalence") {
  // hand merge: W' = I + A B = [[1,0],[1,1]] (rows are inputs)
  {
    RegistryT<float> reg;
    reg.add("w", Tensor({2, 2}, {1, 0, 0, 1}), ParamGroup::kDecoderAttn);
    reg.add("w.lora.A", Tensor({2, 1}, {0, 1}), ParamGroup::kDecoderAttn);
    reg.add("w.lora.B", Tensor({1, 2}, {1, 0}), ParamGroup::kDecoderAttn);
    LoraAdapter ad{"w", "w.lora.A", "w.lora.B", 1.0, false};
    merge_lora(reg, ad);
    CHECK(test::bitwise_equal(reg.at("w").value, Tensor({2, 2}, {1, 0, 1, 1})));
    CHECK(reg.size() == 1);
    CHECK_THROWS_WITH_AS(merge_lora(reg, ad), doctest::Contains("already merged"),
                         std::runtime_error);
  }

  // B = 0: merged weight equals the original exactly
  {
    RegistryT<float> reg;
    RandomSource rng(4);
    Tensor w0 = test::random_tensor<float>({4, 4}, rng);
    reg.add("w", w0.clone(), ParamGroup::kDecoderAttn);
    reg.add("w.lora.A", test::random_tensor<float>({4, 2}, rng), ParamGroup::kDecoderAttn);
    reg.add("w.lora.B", Tensor::zeros({2, 4}), ParamGroup::kDecoderAttn);
    LoraAdapter ad{"w", "w.lora.A", "w.lora.B", 1.0, false};
    merge_lora(reg, ad);
    CHECK(test::bitwise_equal(reg.at("w").value, w0));
  }

  // merged model reproduces adapter logits within 1e-6, and the parameter
  // count returns to the pre-LoRA count
  auto m = make_model<float>(toy_enc(), toy_dec(), 11);
  const size_t base_params = m.params.size();
  LoraConfig cfg;
  cfg.rank = 4;
  cfg.targets = LoraTargets::kAllLinear;
  apply_peft(m, PeftPolicy::kLora, cfg, 11);

  // pretend training happened: fill adapters with nonzero values
  RandomSource rng(21);
  for (const auto& a : m.peft.adapters) {
    auto& bt = m.params.at(a.b_name).value;
    for (size_t i = 0; i < bt.numel(); ++i) bt[i] = static_cast<float>(rng.gaussian(0.0, 0.05));
  }

  TaskSample s = toy_task(rng);
  Tensor before = model_logits(m, s);
  merge_all_lora(m);
  CHECK(m.params.size() == base_params);
  Tensor after = model_logits(m, s);
  float max_diff = 0.f;
  for (size_t i = 0; i < before.numel(); ++i)
    max_diff = std::max(max_diff, std::abs(before[i] - after[i]));
  CHECK(max_diff <= 1e-6f);
}

TEST_CASE("freeze policies: gradients and updates respect the mask") {
  RandomSource rng(31);
  TaskSample s = toy_task(rng);

  // freeze-encoder: encoder/adaptor gradients are exactly zero
  {
    auto m = make_model<float>(toy_enc(), toy_dec(), 13);
    apply_peft(m, PeftPolicy::kFreezeEncoder, LoraConfig{}, 13);
    GraphCtx ctx(m.params);
    backward(sample_loss(m, ctx, s));
    ctx.harvest_grads();
    for (const auto* p : m.params.ordered()) {
      if (p->group == ParamGroup::kEncoder || p->group == ParamGroup::kAdaptor) {
        for (size_t i = 0; i < p->grad.numel(); ++i) CHECK(p->grad[i] == 0.f);
      }
    }
  }

  // freeze-decoder: decoder parameters bit-identical after optimizer steps
  {
    auto m = make_model<float>(toy_enc(), toy_dec(), 13);
    apply_peft(m, PeftPolicy::kFreezeDecoder, LoraConfig{}, 13);
    std::vector<Tensor> dec_before;
    for (const auto* p : m.params.ordered())
      if (!p->trainable) dec_before.push_back(p->value.clone());
    AdamW opt(m.params);
    train_steps(m, opt, s, 3);
    size_t i = 0;
    bool encoder_changed = false;
    for (const auto* p : m.params.ordered()) {
      if (!p->trainable)
        CHECK(test::bitwise_equal(p->value, dec_before[i++]));
      else
        encoder_changed |= p->grad.numel() > 0;
    }
    CHECK(encoder_changed);
  }

  // full: every parameter that feeds the loss receives gradient
  {
    auto m = make_model<float>(toy_enc(), toy_dec(), 13);
    apply_peft(m, PeftPolicy::kFull, LoraConfig{}, 13);
    GraphCtx ctx(m.params);
    backward(sample_loss(m, ctx, s));
    ctx.harvest_grads();
    size_t with_grad = 0;
    for (const auto* p : m.params.ordered()) {
      bool any = false;
      for (size_t i = 0; i < p->grad.numel(); ++i) any |= p->grad[i] != 0.f;
      with_grad += any;
    }
    // everything except embedding rows of unused tokens and positions beyond
    // the sequence gets signal; at whole-parameter granularity: all of them
    CHECK(with_grad == m.params.size());
  }
}
