#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stt/corpus.hpp"
#include "stt/graph.hpp"
#include "stt/ops.hpp"
#include "stt/peft.hpp"
#include "stt/registry.hpp"
#include "stt/rng.hpp"
#include "stt/taskfmt.hpp"

namespace stt {

struct EncoderConfig {
  int layers = 2;
  int model_dim = 64;
  int heads = 4;
  int ffn_dim = 256;
  int input_dim = 16;   // frame feature dimension
  int adaptor_k = 2;    // conv filter size == stride
  int decoder_dim = 128;

  void validate() const {
    if (model_dim % heads != 0)
      throw std::invalid_argument("encoder: model_dim must be divisible by heads");
    if (model_dim % 2 != 0)
      throw std::invalid_argument("encoder: model_dim must be even for sinusoidal positions");
    if (adaptor_k < 1) throw std::invalid_argument("encoder: adaptor_k must be >= 1");
    if (layers < 1 || ffn_dim < 1 || input_dim < 1)
      throw std::invalid_argument("encoder: bad dimensions");
  }
};

struct DecoderConfig {
  int layers = 4;
  int model_dim = 128;
  int heads = 4;
  int ffn_dim = 512;
  int vocab = 0;  // set from the tokenizer
  int max_positions = 512;

  void validate() const {
    if (model_dim % heads != 0)
      throw std::invalid_argument("decoder: model_dim must be divisible by heads");
    if (vocab < 5) throw std::invalid_argument("decoder: vocabulary too small");
    if (layers < 1 || ffn_dim < 1 || max_positions < 1)
      throw std::invalid_argument("decoder: bad dimensions");
  }
};

template <typename S>
struct ModelT {
  EncoderConfig enc;
  DecoderConfig dec;
  RegistryT<S> params;
  PeftStateT<S> peft;
};

using Model = ModelT<float>;

// ------------------------------------------------------------ construction

namespace model_detail {

template <typename S>
TensorT<S> gaussian_tensor(std::vector<int> shape, RandomSource& rng, double stddev) {
  TensorT<S> t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.gaussian(0.0, stddev));
  return t;
}

template <typename S>
void add_layer_norm(RegistryT<S>& reg, const std::string& prefix, int dim, ParamGroup group) {
  reg.add(prefix + ".g", TensorT<S>::full({dim}, S(1)), group);
  reg.add(prefix + ".b", TensorT<S>::zeros({dim}), group);
}

template <typename S>
void add_linear(RegistryT<S>& reg, RandomSource& rng, const std::string& prefix, int d_in,
                int d_out, ParamGroup group, double stddev = 0.02) {
  reg.add(prefix + ".w" , gaussian_tensor<S>({d_in, d_out}, rng, stddev), group);
  reg.add(prefix + ".b", TensorT<S>::zeros({d_out}), group);
}

}  // namespace model_detail

template <typename S>
ModelT<S> make_model(const EncoderConfig& enc, const DecoderConfig& dec, uint64_t seed) {
  enc.validate();
  dec.validate();
  if (enc.decoder_dim != dec.model_dim)
    throw std::invalid_argument("model: adaptor output dim must equal decoder dim");

  ModelT<S> m;
  m.enc = enc;
  m.dec = dec;
  RandomSource rng(mix64(seed, 0x6d6f64656c));
  auto& reg = m.params;
  using model_detail::add_layer_norm;
  using model_detail::add_linear;
  using model_detail::gaussian_tensor;

  // speech encoder; the input projection is scaled so frame content and the
  // unit-amplitude sinusoidal positions enter at comparable magnitude
  add_linear(reg, rng, "enc.in_proj", enc.input_dim, enc.model_dim, ParamGroup::kEncoder,
             1.0 / std::sqrt(static_cast<double>(enc.input_dim)));
  for (int i = 0; i < enc.layers; ++i) {
    const std::string p = "enc.l" + std::to_string(i) + ".";
    add_layer_norm(reg, p + "ln1", enc.model_dim, ParamGroup::kEncoder);
    for (const char* proj : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
      reg.add(p + proj, gaussian_tensor<S>({enc.model_dim, enc.model_dim}, rng, 0.02),
              ParamGroup::kEncoder);
    }
    for (const char* bias : {"attn.bq", "attn.bv", "attn.bo"})
      reg.add(p + bias, TensorT<S>::zeros({enc.model_dim}), ParamGroup::kEncoder);
    add_layer_norm(reg, p + "ln2", enc.model_dim, ParamGroup::kEncoder);
    reg.add(p + "ffn.w1", gaussian_tensor<S>({enc.model_dim, enc.ffn_dim}, rng, 0.02),
            ParamGroup::kEncoder);
    reg.add(p + "ffn.b1", TensorT<S>::zeros({enc.ffn_dim}), ParamGroup::kEncoder);
    reg.add(p + "ffn.w2", gaussian_tensor<S>({enc.ffn_dim, enc.model_dim}, rng, 0.02),
            ParamGroup::kEncoder);
    reg.add(p + "ffn.b2", TensorT<S>::zeros({enc.model_dim}), ParamGroup::kEncoder);
  }
  add_layer_norm(reg, "enc.ln_f", enc.model_dim, ParamGroup::kEncoder);

  // length adaptor: conv projecting into the decoder embedding space
  reg.add("adaptor.w",
          gaussian_tensor<S>({enc.adaptor_k, enc.model_dim, dec.model_dim}, rng, 0.02),
          ParamGroup::kAdaptor);
  reg.add("adaptor.b", TensorT<S>::zeros({dec.model_dim}), ParamGroup::kAdaptor);

  // decoder
  reg.add("dec.embed.tok", gaussian_tensor<S>({dec.vocab, dec.model_dim}, rng, 0.02),
          ParamGroup::kDecoderEmbed);
  reg.add("dec.embed.pos", gaussian_tensor<S>({dec.max_positions, dec.model_dim}, rng, 0.02),
          ParamGroup::kDecoderEmbed);
  for (int i = 0; i < dec.layers; ++i) {
    const std::string p = "dec.l" + std::to_string(i) + ".";
    add_layer_norm(reg, p + "ln1", dec.model_dim, ParamGroup::kDecoderLn);
    for (const char* proj : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
      reg.add(p + proj, gaussian_tensor<S>({dec.model_dim, dec.model_dim}, rng, 0.02),
              ParamGroup::kDecoderAttn);
    }
    for (const char* bias : {"attn.bq", "attn.bv", "attn.bo"})
      reg.add(p + bias, TensorT<S>::zeros({dec.model_dim}), ParamGroup::kDecoderAttn);
    add_layer_norm(reg, p + "ln2", dec.model_dim, ParamGroup::kDecoderLn);
    reg.add(p + "ffn.w1", gaussian_tensor<S>({dec.model_dim, dec.ffn_dim}, rng, 0.02),
            ParamGroup::kDecoderFfn);
    reg.add(p + "ffn.b1", TensorT<S>::zeros({dec.ffn_dim}), ParamGroup::kDecoderFfn);
    reg.add(p + "ffn.w2", gaussian_tensor<S>({dec.ffn_dim, dec.model_dim}, rng, 0.02),
            ParamGroup::kDecoderFfn);
    reg.add(p + "ffn.b2", TensorT<S>::zeros({dec.model_dim}), ParamGroup::kDecoderFfn);
  }
  add_layer_norm(reg, "dec.ln_f", dec.model_dim, ParamGroup::kDecoderLn);
  // smaller than the other inits: keeps the untrained loss within 1% of the
  // uniform baseline ln|V|
  reg.add("dec.out.w", gaussian_tensor<S>({dec.model_dim, dec.vocab}, rng, 0.01),
          ParamGroup::kOutputProj);
  return m;
}

// Applies a fine-tuning policy to a freshly built model.
template <typename S>
void apply_peft(ModelT<S>& m, PeftPolicy policy, const LoraConfig& lora, uint64_t seed) {
  m.peft.policy = policy;
  switch (policy) {
    case PeftPolicy::kLna:
      apply_lna(m.params);
      break;
    case PeftPolicy::kLora:
      apply_lora(m.params, m.peft, lora_target_names(m.dec.layers, lora.targets), lora, seed);
      break;
    case PeftPolicy::kFull:
    case PeftPolicy::kFreezeEncoder:
    case PeftPolicy::kFreezeDecoder:
      apply_freeze(m.params, policy);
      break;
  }
}

template <typename S>
void merge_all_lora(ModelT<S>& m) {
  for (auto& adapter : m.peft.adapters) merge_lora(m.params, adapter);
}

// ------------------------------------------------------------ shared pieces

inline Tensor64 sinusoidal_positions64(int n, int dim) {
  Tensor64 pe({n, dim});
  for (int p = 0; p < n; ++p) {
    for (int i = 0; i < dim / 2; ++i) {
      const double freq = std::exp(-std::log(10000.0) * (2.0 * i) / dim);
      pe.at(p, 2 * i) = std::sin(p * freq);
      pe.at(p, 2 * i + 1) = std::cos(p * freq);
    }
  }
  return pe;
}

template <typename S>
TensorT<S> sinusoidal_positions(int n, int dim) {
  const Tensor64 pe = sinusoidal_positions64(n, dim);
  TensorT<S> out({n, dim});
  for (size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<S>(pe[i]);
  return out;
}

namespace model_detail {

// y = x W (+ lora residual) (+ bias); the residual path reads the adapters
// registered for this weight, if any.
template <typename S>
VarT<S> linear(ModelT<S>& m, GraphCtxT<S>& ctx, const VarT<S>& x, const std::string& w_name,
               const std::string& b_name = "") {
  VarT<S> y = matmul(x, ctx.leaf(w_name));
  if (const LoraAdapter* ad = m.peft.find(w_name); ad && !ad->merged) {
    auto delta = matmul(matmul(x, ctx.leaf(ad->a_name)), ctx.leaf(ad->b_name));
    y = add(y, scalar_mul(delta, static_cast<S>(ad->scale)));
  }
  if (!b_name.empty()) y = add_bias_rows(y, ctx.leaf(b_name));
  return y;
}

// Bidirectional multi-head self-attention (encoder side: no lora, no mask).
template <typename S>
VarT<S> encoder_attention(ModelT<S>& m, GraphCtxT<S>& ctx, const VarT<S>& x,
                          const std::string& prefix) {
  const int h = m.enc.model_dim, heads = m.enc.heads, dh = h / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  auto q = linear(m, ctx, x, prefix + "attn.wq", prefix + "attn.bq");
  auto k = linear(m, ctx, x, prefix + "attn.wk");  // key bias is redundant under softmax
  auto v = linear(m, ctx, x, prefix + "attn.wv", prefix + "attn.bv");
  std::vector<VarT<S>> heads_out;
  for (int i = 0; i < heads; ++i) {
    auto qh = slice_cols(q, i * dh, dh);
    auto kh = slice_cols(k, i * dh, dh);
    auto vh = slice_cols(v, i * dh, dh);
    auto probs = softmax_rows(scalar_mul(matmul(qh, transpose(kh)), scale));
    heads_out.push_back(matmul(probs, vh));
  }
  return linear(m, ctx, concat_cols(heads_out), prefix + "attn.wo", prefix + "attn.bo");
}

// Causal multi-head self-attention (decoder side, lora-aware).
template <typename S>
VarT<S> decoder_attention(ModelT<S>& m, GraphCtxT<S>& ctx, const VarT<S>& x,
                          const std::string& prefix) {
  const int h = m.dec.model_dim, heads = m.dec.heads, dh = h / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  auto q = linear(m, ctx, x, prefix + "attn.wq", prefix + "attn.bq");
  auto k = linear(m, ctx, x, prefix + "attn.wk");  // key bias is redundant under softmax
  auto v = linear(m, ctx, x, prefix + "attn.wv", prefix + "attn.bv");
  std::vector<VarT<S>> heads_out;
  for (int i = 0; i < heads; ++i) {
    auto qh = slice_cols(q, i * dh, dh);
    auto kh = slice_cols(k, i * dh, dh);
    auto vh = slice_cols(v, i * dh, dh);
    auto probs = causal_softmax(causal_scores(qh, kh, scale));
    heads_out.push_back(causal_ctx(probs, vh));
  }
  return linear(m, ctx, concat_cols(heads_out), prefix + "attn.wo", prefix + "attn.bo");
}

template <typename S>
VarT<S> layer_norm_named(ModelT<S>& m, GraphCtxT<S>& ctx, const VarT<S>& x,
                         const std::string& prefix) {
  return layer_norm(x, ctx.leaf(prefix + ".g"), ctx.leaf(prefix + ".b"), static_cast<S>(1e-5));
}

template <typename S>
VarT<S> ffn_block(ModelT<S>& m, GraphCtxT<S>& ctx, const VarT<S>& x, const std::string& prefix) {
  auto hidden = gelu(linear(m, ctx, x, prefix + "ffn.w1", prefix + "ffn.b1"));
  return linear(m, ctx, hidden, prefix + "ffn.w2", prefix + "ffn.b2");
}

}  // namespace model_detail

// ------------------------------------------------------------ speech encoder

// Frames -> hidden states, one per input frame. Pre-norm blocks with
// bidirectional attention and fixed sinusoidal positions.
template <typename S>
VarT<S> encode_frames(ModelT<S>& m, GraphCtxT<S>& ctx, const TensorT<S>& frames) {
  if (frames.rank() != 2 || frames.cols() != m.enc.input_dim)
    throw std::invalid_argument("encode_frames: frames " + shape_str(frames.shape()) +
                                " do not match input_dim " + std::to_string(m.enc.input_dim));
  const int n = frames.rows();
  auto x = model_detail::linear(m, ctx, make_const(frames), std::string("enc.in_proj.w"),
                                std::string("enc.in_proj.b"));
  x = add(x, make_const(sinusoidal_positions<S>(n, m.enc.model_dim)));
  for (int i = 0; i < m.enc.layers; ++i) {
    const std::string p = "enc.l" + std::to_string(i) + ".";
    auto attn_in = model_detail::layer_norm_named(m, ctx, x, p + "ln1");
    x = add(x, model_detail::encoder_attention(m, ctx, attn_in, p));
    auto ffn_in = model_detail::layer_norm_named(m, ctx, x, p + "ln2");
    x = add(x, model_detail::ffn_block(m, ctx, ffn_in, p));
  }
  return model_detail::layer_norm_named(m, ctx, x, "enc.ln_f");
}

// Stride-k convolution into the decoder embedding space, followed by GELU.
// Output length is ceil(n/k).
template <typename S>
VarT<S> length_adapt(ModelT<S>& m, GraphCtxT<S>& ctx, const VarT<S>& hidden) {
  return gelu(conv1d(hidden, ctx.leaf("adaptor.w"), ctx.leaf("adaptor.b"), m.enc.adaptor_k));
}

// ------------------------------------------------------------------ decoder

enum class Origin : uint8_t { kPrefix, kSpeech, kSuffix, kTarget };

template <typename S>
struct InterleavedT {
  VarT<S> x;                    // [T x h] embedded input
  std::vector<Origin> origin;   // per-position provenance
  std::vector<bool> loss_mask;  // true exactly on scored target positions
  std::vector<int> token_ids;   // -1 on speech rows
};

using Interleaved = InterleavedT<float>;

// Flattens Emb(prefix), speech vectors, Emb(suffix) and, in training mode,
// Emb(target) into one sequence; learned absolute positions cover every row,
// speech included. extra_ids extends the target block during decoding.
template <typename S>
InterleavedT<S> assemble_sequence(ModelT<S>& m, GraphCtxT<S>& ctx, const TaskSample& sample,
                                  const VarT<S>& speech, bool train,
                                  const std::vector<int>& extra_ids = {}) {
  if (speech->value.rank() != 2 || speech->value.cols() != m.dec.model_dim)
    throw std::invalid_argument("assemble_sequence: speech rows of " +
                                shape_str(speech->value.shape()) + " do not match decoder dim " +
                                std::to_string(m.dec.model_dim));
  InterleavedT<S> out;
  auto table = ctx.leaf("dec.embed.tok");

  std::vector<VarT<S>> parts;
  parts.push_back(embed_rows(table, sample.prefix_ids));
  parts.push_back(speech);
  parts.push_back(embed_rows(table, sample.suffix_ids));
  std::vector<int> tail;
  if (train) tail = sample.target_ids;
  tail.insert(tail.end(), extra_ids.begin(), extra_ids.end());
  if (!tail.empty()) parts.push_back(embed_rows(table, tail));

  const int m_speech = speech->value.rows();
  const int t_total = static_cast<int>(sample.prefix_ids.size()) + m_speech +
                      static_cast<int>(sample.suffix_ids.size()) + static_cast<int>(tail.size());
  if (t_total > m.dec.max_positions)
    throw std::invalid_argument("assemble_sequence: length " + std::to_string(t_total) +
                                " exceeds max_positions " + std::to_string(m.dec.max_positions));

  auto x = concat_rows(parts);
  x = add(x, slice_rows(ctx.leaf("dec.embed.pos"), 0, t_total));
  out.x = x;

  out.origin.insert(out.origin.end(), sample.prefix_ids.size(), Origin::kPrefix);
  out.origin.insert(out.origin.end(), static_cast<size_t>(m_speech), Origin::kSpeech);
  out.origin.insert(out.origin.end(), sample.suffix_ids.size(), Origin::kSuffix);
  out.origin.insert(out.origin.end(), tail.size(), Origin::kTarget);

  out.token_ids.insert(out.token_ids.end(), sample.prefix_ids.begin(), sample.prefix_ids.end());
  out.token_ids.insert(out.token_ids.end(), static_cast<size_t>(m_speech), -1);
  out.token_ids.insert(out.token_ids.end(), sample.suffix_ids.begin(), sample.suffix_ids.end());
  out.token_ids.insert(out.token_ids.end(), tail.begin(), tail.end());

  out.loss_mask.assign(static_cast<size_t>(t_total), false);
  if (train) {
    const size_t first = sample.prefix_ids.size() + static_cast<size_t>(m_speech) +
                         sample.suffix_ids.size();
    for (size_t i = 0; i < sample.target_ids.size(); ++i) out.loss_mask[first + i] = true;
  }
  return out;
}

// L pre-norm causal blocks over the interleaved sequence.
template <typename S>
VarT<S> decoder_forward(ModelT<S>& m, GraphCtxT<S>& ctx, const InterleavedT<S>& input) {
  VarT<S> x = input.x;
  for (int i = 0; i < m.dec.layers; ++i) {
    const std::string p = "dec.l" + std::to_string(i) + ".";
    auto attn_in = model_detail::layer_norm_named(m, ctx, x, p + "ln1");
    x = add(x, model_detail::decoder_attention(m, ctx, attn_in, p));
    auto ffn_in = model_detail::layer_norm_named(m, ctx, x, p + "ln2");
    x = add(x, model_detail::ffn_block(m, ctx, ffn_in, p));
  }
  return model_detail::layer_norm_named(m, ctx, x, "dec.ln_f");
}

// Next-token logits; W is untied from the embedding table.
template <typename S>
VarT<S> output_logits(ModelT<S>& m, GraphCtxT<S>& ctx, const VarT<S>& hidden) {
  return model_detail::linear(m, ctx, hidden, std::string("dec.out.w"));
}

// Mean next-token cross entropy over the target block: the logits row at
// position t-1 scores the token at position t (standard shift).
template <typename S>
VarT<S> s2tt_loss(const VarT<S>& logits, const InterleavedT<S>& input) {
  const int t_total = logits->value.rows();
  if (static_cast<size_t>(t_total) != input.origin.size())
    throw std::invalid_argument("s2tt_loss: logits rows do not match assembled length");
  std::vector<int> targets(static_cast<size_t>(t_total), 0);
  std::vector<bool> mask(static_cast<size_t>(t_total), false);
  int count = 0;
  for (int t = 0; t + 1 < t_total; ++t) {
    if (input.loss_mask[static_cast<size_t>(t + 1)]) {
      mask[static_cast<size_t>(t)] = true;
      targets[static_cast<size_t>(t)] = input.token_ids[static_cast<size_t>(t + 1)];
      ++count;
    }
  }
  if (count == 0)
    throw std::invalid_argument("s2tt_loss: no target positions (inference-mode assembly?)");
  return softmax_cross_entropy(logits, targets, mask);
}

// Full training-mode forward pass for one sample.
template <typename S>
VarT<S> sample_loss(ModelT<S>& m, GraphCtxT<S>& ctx, const TaskSample& sample) {
  TensorT<S> frames(sample.frames.shape());
  for (size_t i = 0; i < frames.numel(); ++i) frames[i] = static_cast<S>(sample.frames[i]);
  auto speech = length_adapt(m, ctx, encode_frames(m, ctx, frames));
  auto input = assemble_sequence(m, ctx, sample, speech, /*train=*/true);
  auto hidden = decoder_forward(m, ctx, input);
  auto logits = output_logits(m, ctx, hidden);
  return s2tt_loss(logits, input);
}

// ------------------------------------------------------------------ decoding

struct DecodeResult {
  std::vector<int> ids;       // generated tokens, EOS excluded
  bool terminated = false;    // false when max_len was hit without EOS
};

// Greedy argmax loop over a caller-supplied next-logits function; ties break
// toward the lowest token id.
template <typename NextLogits>
DecodeResult greedy_loop(NextLogits&& next_logits, int eos_id, int max_len) {
  DecodeResult result;
  for (int step = 0; step < max_len; ++step) {
    const std::vector<float> logits = next_logits(result.ids);
    int best = 0;
    for (int j = 1; j < static_cast<int>(logits.size()); ++j)
      if (logits[static_cast<size_t>(j)] > logits[static_cast<size_t>(best)]) best = j;
    if (best == eos_id) {
      result.terminated = true;
      return result;
    }
    result.ids.push_back(best);
  }
  return result;
}

// Greedy decoding of one sample. The speech stack runs once; the decoder is
// re-run over the growing sequence each step (no caching).
template <typename S>
DecodeResult greedy_decode(ModelT<S>& m, const TaskSample& sample, int max_len) {
  GraphCtxT<S> enc_ctx(m.params, /*with_grads=*/false);
  TensorT<S> frames(sample.frames.shape());
  for (size_t i = 0; i < frames.numel(); ++i) frames[i] = static_cast<S>(sample.frames[i]);
  const TensorT<S> speech =
      length_adapt(m, enc_ctx, encode_frames(m, enc_ctx, frames))->value;

  auto next_logits = [&](const std::vector<int>& generated) {
    GraphCtxT<S> ctx(m.params, /*with_grads=*/false);
    auto input = assemble_sequence(m, ctx, sample, make_const(speech), /*train=*/false, generated);
    auto hidden = decoder_forward(m, ctx, input);
    auto last = slice_rows(hidden, hidden->value.rows() - 1, 1);
    auto logits = output_logits(m, ctx, last);
    std::vector<float> row(static_cast<size_t>(m.dec.vocab));
    for (int j = 0; j < m.dec.vocab; ++j)
      row[static_cast<size_t>(j)] = static_cast<float>(logits->value[static_cast<size_t>(j)]);
    return row;
  };
  return greedy_loop(next_logits, Tokenizer::kEos, max_len);
}

}  // namespace stt
