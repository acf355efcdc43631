#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stt/gradcheck.hpp"
#include "stt/model.hpp"
#include "test_util.hpp"

using namespace stt;

namespace {

EncoderConfig tiny_enc() {
  EncoderConfig e;
  e.layers = 1;
  e.model_dim = 8;
  e.heads = 2;
  e.ffn_dim = 16;
  e.input_dim = 4;
  e.adaptor_k = 2;
  e.decoder_dim = 8;
  return e;
}

DecoderConfig tiny_dec(int vocab = 12) {
  DecoderConfig d;
  d.layers = 1;
  d.model_dim = 8;
  d.heads = 2;
  d.ffn_dim = 16;
  d.vocab = vocab;
  d.max_positions = 48;
  return d;
}

template <typename S>
TaskSample tiny_sample(RandomSource& rng, int prefix = 3, int target = 3, int frames = 5) {
  TaskSample s;
  s.prefix_ids.push_back(Tokenizer::kBos);
  for (int i = 1; i < prefix; ++i) s.prefix_ids.push_back(4 + rng.range(0, 5));
  s.suffix_ids.push_back(Tokenizer::kSep);
  for (int i = 1; i < target; ++i) s.target_ids.push_back(4 + rng.range(0, 5));
  s.target_ids.push_back(Tokenizer::kEos);
  s.frames = test::random_tensor<float>({frames, 4}, rng);
  s.source_text = "ab";
  s.target_text = "de";
  return s;
}

}  // namespace

TEST_CASE("encoder: length preservation and positional sensitivity") {
  auto m = make_model<float>(tiny_enc(), tiny_dec(), 5);
  RandomSource rng(2);
  Tensor frames = test::random_tensor<float>({12, 4}, rng);

  GraphCtx ctx(m.params, false);
  auto h = encode_frames(m, ctx, frames);
  CHECK(h->value.rows() == 12);
  CHECK(h->value.cols() == 8);

  // swapping two frames changes the outputs at unrelated positions
  Tensor swapped = frames.clone();
  for (int j = 0; j < 4; ++j) std::swap(swapped.at(2, j), swapped.at(9, j));
  GraphCtx ctx2(m.params, false);
  auto h2 = encode_frames(m, ctx2, swapped);
  bool any_diff = false;
  for (int j = 0; j < 8; ++j) any_diff |= h->value.at(5, j) != h2->value.at(5, j);
  CHECK(any_diff);

  Tensor bad = test::random_tensor<float>({3, 7}, rng);
  CHECK_THROWS_AS(encode_frames(m, ctx, bad), std::invalid_argument);
}

TEST_CASE("length adaptor: k-fold reduction into decoder space") {
  auto m = make_model<float>(tiny_enc(), tiny_dec(), 5);
  RandomSource rng(3);

  for (auto [n, want] : std::vector<std::pair<int, int>>{{12, 6}, {7, 4}, {1, 1}}) {
    GraphCtx ctx(m.params, false);
    auto out = length_adapt(m, ctx, encode_frames(m, ctx, test::random_tensor<float>({n, 4}, rng)));
    CHECK(out->value.rows() == want);
    CHECK(out->value.cols() == m.dec.model_dim);
  }

  // k=1 keeps the length: pure projection
  EncoderConfig e1 = tiny_enc();
  e1.adaptor_k = 1;
  auto m1 = make_model<float>(e1, tiny_dec(), 5);
  GraphCtx ctx(m1.params, false);
  auto out = length_adapt(m1, ctx, encode_frames(m1, ctx, test::random_tensor<float>({9, 4}, rng)));
  CHECK(out->value.rows() == 9);
}

TEST_CASE("assemble_sequence: lengths, mask, span map") {
  auto m = make_model<float>(tiny_enc(), tiny_dec(20), 7);
  RandomSource rng(4);

  TaskSample s;
  s.prefix_ids.assign(10, 5);
  s.prefix_ids[0] = Tokenizer::kBos;
  s.suffix_ids = {Tokenizer::kSep};
  s.target_ids.assign(8, 6);
  s.target_ids.back() = Tokenizer::kEos;
  s.frames = test::random_tensor<float>({4, 4}, rng);

  auto speech = make_const(test::random_tensor<float>({6, 8}, rng));

  GraphCtx ctx(m.params, false);
  auto train_input = assemble_sequence(m, ctx, s, speech, true);
  CHECK(train_input.x->value.rows() == 25);  // 10 + 6 + 1 + 8
  CHECK(train_input.origin[0] == Origin::kPrefix);
  CHECK(train_input.origin[12] == Origin::kSpeech);
  CHECK(train_input.origin[16] == Origin::kSuffix);
  CHECK(train_input.origin[20] == Origin::kTarget);

  size_t mask_sum = 0;
  for (bool b : train_input.loss_mask) mask_sum += b;
  CHECK(mask_sum == s.target_ids.size());
  for (size_t i = 0; i < 17; ++i) CHECK_FALSE(train_input.loss_mask[i]);

  GraphCtx ctx2(m.params, false);
  auto infer_input = assemble_sequence(m, ctx2, s, speech, false);
  CHECK(infer_input.x->value.rows() == 17);

  // speech rows enter without any vocabulary lookup: the assembled rows carry
  // the continuous speech values (plus position), not embedding-table rows
  const auto& pos = m.params.at("dec.embed.pos").value;
  for (int j = 0; j < 8; ++j)
    CHECK(infer_input.x->value.at(10, j) ==
          speech->value.at(0, j) + pos.at(10, j));

  DecoderConfig small = tiny_dec(20);
  small.max_positions = 20;
  auto m2 = make_model<float>(tiny_enc(), small, 7);
  GraphCtx ctx3(m2.params, false);
  CHECK_THROWS_WITH_AS(assemble_sequence(m2, ctx3, s, speech, true),
                       doctest::Contains("max_positions"), std::invalid_argument);
}

TEST_CASE("decoder_forward: causality across modality boundaries") {
  auto m = make_model<float>(tiny_enc(), tiny_dec(20), 9);
  RandomSource rng(6);
  TaskSample s = tiny_sample<float>(rng, 4, 5, 6);

  GraphCtx ctx(m.params, false);
  auto speech = length_adapt(m, ctx, encode_frames(m, ctx, s.frames));
  auto input = assemble_sequence(m, ctx, s, speech, true);
  auto logits = output_logits(m, ctx, decoder_forward(m, ctx, input));
  const int t_total = input.x->value.rows();

  // perturb every suffix start in turn, including the speech block boundary
  for (int cut : {t_total - 1, 4, 6}) {
    Tensor perturbed = input.x->value.clone();
    for (int i = cut; i < t_total; ++i)
      for (int j = 0; j < 8; ++j) perturbed.at(i, j) += 0.37f * (j + 1);
    InterleavedT<float> alt{make_const(perturbed), input.origin, input.loss_mask, input.token_ids};
    GraphCtx ctx2(m.params, false);
    auto logits2 = output_logits(m, ctx2, decoder_forward(m, ctx2, alt));
    for (int i = 0; i < cut; ++i)
      for (int v = 0; v < m.dec.vocab; ++v)
        CHECK(logits->value.at(i, v) == logits2->value.at(i, v));
    // and the perturbed rows do change
    bool changed = false;
    for (int v = 0; v < m.dec.vocab; ++v)
      changed |= logits->value.at(t_total - 1, v) != logits2->value.at(t_total - 1, v);
    CHECK(changed);
  }
}

TEST_CASE("decoder_forward: T=1 degenerate input") {
  auto m = make_model<float>(tiny_enc(), tiny_dec(), 3);
  RandomSource rng(8);
  InterleavedT<float> one{make_const(test::random_tensor<float>({1, 8}, rng)),
                          {Origin::kPrefix},
                          {false},
                          {Tokenizer::kBos}};
  GraphCtx ctx(m.params, false);
  auto h = decoder_forward(m, ctx, one);
  CHECK(h->value.rows() == 1);
  CHECK(h->value.all_finite());
}

TEST_CASE("output logits and loss values") {
  auto m = make_model<float>(tiny_enc(), tiny_dec(20), 11);
  RandomSource rng(10);

  // hand matmul: h=2, |V|=3
  auto hidden = make_const(Tensor({1, 2}, {1, 2}));
  auto w = make_const(Tensor({2, 3}, {1, 0, 2, 0, 1, 1}));
  auto logits = matmul(hidden, w);
  CHECK(test::bitwise_equal(logits->value, Tensor({1, 3}, {1, 2, 4})));

  // W = 0 gives a uniform next-token distribution
  m.params.at("dec.out.w").value.fill(0.f);
  GraphCtx ctx(m.params, false);
  auto uniform = softmax_rows(output_logits(m, ctx, make_const(test::random_tensor<float>({3, 8}, rng))));
  for (int j = 0; j < 20; ++j) CHECK(uniform->value.at(1, j) == doctest::Approx(1.0 / 20));
}

TEST_CASE("s2tt_loss: uniform, perfect, hand case, mask exactness") {
  // uniform logits: loss = ln |V| regardless of which rows are scored
  auto uniform = make_const(Tensor({7, 20}));
  std::vector<int> targets(7, 9);
  std::vector<bool> mask = {false, false, true, true, true, true, true};
  CHECK(softmax_cross_entropy(uniform, targets, mask)->value[0] ==
        doctest::Approx(std::log(20.0)).epsilon(1e-6));

  // perfect one-hot logits drive the loss to zero
  Tensor hot({4, 6});
  std::vector<int> tg = {1, 5, 0, 2};
  for (int i = 0; i < 4; ++i) hot.at(i, tg[static_cast<size_t>(i)]) = 50.f;
  CHECK(softmax_cross_entropy(make_const(hot), tg, std::vector<bool>(4, true))->value[0] ==
        doctest::Approx(0.0).epsilon(1e-6));

  // hand case: M'=2, |V|=3
  auto l = make_const(Tensor({2, 3}, {1, 0, 0, 0, 2, 0}));
  const double expected =
      0.5 * ((std::log(std::exp(1.0) + 2.0) - 1.0) + (std::log(std::exp(2.0) + 2.0) - 0.0));
  CHECK(softmax_cross_entropy(l, {0, 2}, {true, true})->value[0] ==
        doctest::Approx(expected).epsilon(1e-6));

  // end-to-end: next-token shift scores target rows from their predecessors
  auto m = make_model<float>(tiny_enc(), tiny_dec(20), 13);
  RandomSource rng(12);
  TaskSample s = tiny_sample<float>(rng);
  GraphCtx ctx(m.params);
  auto loss = sample_loss(m, ctx, s);
  CHECK(loss->value.numel() == 1);
  CHECK(std::isfinite(loss->value[0]));

  // inference-mode assembly has no scorable positions
  GraphCtx ctx2(m.params, false);
  auto speech = make_const(test::random_tensor<float>({3, 8}, rng));
  auto infer = assemble_sequence(m, ctx2, s, speech, false);
  auto h = decoder_forward(m, ctx2, infer);
  CHECK_THROWS_AS(s2tt_loss(output_logits(m, ctx2, h), infer), std::invalid_argument);
}

TEST_CASE("greedy_loop: rigged decoders") {
  const int eos = Tokenizer::kEos;

  // rigged to emit 7, 8, then EOS
  auto fixed = [&](const std::vector<int>& ids) {
    std::vector<float> l(10, 0.f);
    if (ids.empty()) l[7] = 5.f;
    else if (ids.size() == 1) l[8] = 5.f;
    else l[static_cast<size_t>(eos)] = 5.f;
    return l;
  };
  auto r = greedy_loop(fixed, eos, 16);
  CHECK(r.ids == std::vector<int>{7, 8});
  CHECK(r.terminated);

  // exact tie between ids 5 and 9: the lower id wins
  auto tie = [&](const std::vector<int>& ids) {
    std::vector<float> l(10, 0.f);
    if (ids.empty()) {
      l[5] = 2.f;
      l[9] = 2.f;
    } else {
      l[static_cast<size_t>(eos)] = 5.f;
    }
    return l;
  };
  CHECK(greedy_loop(tie, eos, 16).ids == std::vector<int>{5});

  // never emits EOS: truncated at max_len and flagged unterminated
  auto never = [&](const std::vector<int>&) {
    std::vector<float> l(10, 0.f);
    l[4] = 5.f;
    return l;
  };
  auto t = greedy_loop(never, eos, 4);
  CHECK(t.ids.size() == 4);
  CHECK_FALSE(t.terminated);
}

TEST_CASE("greedy_decode runs on an untrained model") {
  auto m = make_model<float>(tiny_enc(), tiny_dec(), 17);
  RandomSource rng(14);
  TaskSample s = tiny_sample<float>(rng);
  auto r = greedy_decode(m, s, 8);
  CHECK(r.ids.size() <= 8);
  for (int id : r.ids) CHECK(id < m.dec.vocab);
}

TEST_CASE("gradcheck: 1-layer encoder and decoder blocks at f64") {
  for (int seed = 1; seed <= 3; ++seed) {
    auto m = make_model<double>(tiny_enc(), tiny_dec(10), static_cast<uint64_t>(seed));
    RandomSource rng(mix64(77, static_cast<uint64_t>(seed)));
    // re-draw parameters at a healthier scale than the training init, so no
    // gradient component sits below the finite-difference noise floor
    for (auto* p : m.params.ordered()) {
      const bool ln_gain = p->name.find(".ln") != std::string::npos && p->name.back() == 'g';
      for (size_t i = 0; i < p->value.numel(); ++i)
        p->value[i] = (ln_gain ? 1.0 : 0.0) + 0.25 * rng.gaussian();
    }
    TaskSample s = tiny_sample<double>(rng);

    auto report = grad_check<double>(
        m.params,
        [&]() {
          GraphCtxT<double> ctx(m.params);
          auto loss = sample_loss(m, ctx, s);
          return BoundLossT<double>{loss, std::move(ctx)};
        },
        1e-5, 1e-4);
    CHECK(report.all_pass());
    if (!report.all_pass())
      for (auto& e : report.entries)
        if (!e.pass) MESSAGE(e.name, " rel err ", e.max_rel_err);
  }
}
