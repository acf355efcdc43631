#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "stt/gradcheck.hpp"
#include "stt/model.hpp"
#include "stt/ops.hpp"
#include "stt/rng.hpp"

namespace stt {

struct GradSuiteResult {
  std::string name;
  int seeds = 0;
  double worst_rel_err = 0.0;
  bool pass = false;
};

namespace gradsuite_detail {

using Reg = RegistryT<double>;
using Build = std::function<VarT<double>(GraphCtxT<double>&)>;

struct Case {
  std::string name;
  std::function<void(Reg&, RandomSource&)> init;
  Build build;
};

inline void put(Reg& reg, const std::string& name, std::vector<int> shape, RandomSource& rng,
                double scale = 1.0) {
  TensorT<double> t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.gaussian();
  reg.add(name, std::move(t), ParamGroup::kEncoder);
}

// One case per primitive, dims <= 8, reduced to a scalar through mul+mean so
// gradients are non-uniform.
inline std::vector<Case> primitive_cases() {
  std::vector<Case> cases;
  auto add_case = [&](std::string name, std::function<void(Reg&, RandomSource&)> init,
                      Build build) {
    cases.push_back(Case{std::move(name), std::move(init), std::move(build)});
  };

  add_case("add",
           [](Reg& r, RandomSource& g) { put(r, "a", {4, 5}, g); put(r, "b", {4, 5}, g); },
           [](GraphCtxT<double>& c) { return mean_all(mul(add(c.leaf("a"), c.leaf("b")), c.leaf("a"))); });
  add_case("mul",
           [](Reg& r, RandomSource& g) { put(r, "a", {3, 6}, g); put(r, "b", {3, 6}, g); },
           [](GraphCtxT<double>& c) { return mean_all(mul(c.leaf("a"), c.leaf("b"))); });
  add_case("scalar_mul", [](Reg& r, RandomSource& g) { put(r, "a", {4, 4}, g); },
           [](GraphCtxT<double>& c) { return mean_all(mul(scalar_mul(c.leaf("a"), 0.37), c.leaf("a"))); });
  add_case("add_bias_rows",
           [](Reg& r, RandomSource& g) { put(r, "x", {5, 4}, g); put(r, "b", {4}, g); },
           [](GraphCtxT<double>& c) {
             auto y = add_bias_rows(c.leaf("x"), c.leaf("b"));
             return mean_all(mul(y, y));
           });
  add_case("matmul",
           [](Reg& r, RandomSource& g) { put(r, "a", {3, 4}, g); put(r, "b", {4, 5}, g); },
           [](GraphCtxT<double>& c) {
             auto y = matmul(c.leaf("a"), c.leaf("b"));
             return mean_all(mul(y, y));
           });
  add_case("transpose", [](Reg& r, RandomSource& g) { put(r, "a", {3, 5}, g); },
           [](GraphCtxT<double>& c) {
             auto y = matmul(transpose(c.leaf("a")), c.leaf("a"));
             return mean_all(mul(y, y));
           });
  add_case("reshape", [](Reg& r, RandomSource& g) { put(r, "a", {2, 6}, g); },
           [](GraphCtxT<double>& c) {
             auto y = reshape(c.leaf("a"), {3, 4});
             return mean_all(mul(y, y));
           });
  add_case("slice_rows_cols", [](Reg& r, RandomSource& g) { put(r, "a", {6, 6}, g); },
           [](GraphCtxT<double>& c) {
             auto y = mul(slice_rows(c.leaf("a"), 1, 3), slice_rows(c.leaf("a"), 2, 3));
             auto z = mul(slice_cols(c.leaf("a"), 0, 2), slice_cols(c.leaf("a"), 4, 2));
             return add(mean_all(y), mean_all(z));
           });
  add_case("concat_rows_cols",
           [](Reg& r, RandomSource& g) { put(r, "a", {2, 4}, g); put(r, "b", {3, 4}, g); },
           [](GraphCtxT<double>& c) {
             auto rows = concat_rows<double>({c.leaf("a"), c.leaf("b")});
             auto cols = concat_cols<double>({slice_rows(rows, 0, 2), c.leaf("a")});
             return mean_all(mul(cols, cols));
           });
  add_case("embed_rows", [](Reg& r, RandomSource& g) { put(r, "table", {7, 4}, g); },
           [](GraphCtxT<double>& c) {
             auto y = embed_rows(c.leaf("table"), {6, 1, 1, 3, 0});
             return mean_all(mul(y, y));
           });
  add_case("gelu", [](Reg& r, RandomSource& g) { put(r, "a", {4, 6}, g); },
           [](GraphCtxT<double>& c) { return mean_all(gelu(c.leaf("a"))); });
  add_case("sum_mean",
           [](Reg& r, RandomSource& g) { put(r, "a", {4, 4}, g); put(r, "b", {4, 4}, g); },
           [](GraphCtxT<double>& c) {
             return add(sum_all(mul(c.leaf("a"), c.leaf("b"))), mean_all(gelu(c.leaf("a"))));
           });
  add_case("layer_norm",
           [](Reg& r, RandomSource& g) {
             put(r, "x", {4, 6}, g);
             put(r, "gain", {6}, g);
             put(r, "bias", {6}, g);
           },
           [](GraphCtxT<double>& c) {
             auto y = layer_norm(c.leaf("x"), c.leaf("gain"), c.leaf("bias"), 1e-5);
             return mean_all(mul(y, y));
           });
  add_case("softmax_rows",
           [](Reg& r, RandomSource& g) { put(r, "x", {5, 6}, g); put(r, "w", {5, 6}, g); },
           [](GraphCtxT<double>& c) {
             return mean_all(mul(softmax_rows(c.leaf("x")), c.leaf("w")));
           });
  add_case("causal_attention",
           [](Reg& r, RandomSource& g) {
             put(r, "q", {6, 4}, g);
             put(r, "k", {6, 4}, g);
             put(r, "v", {6, 4}, g);
           },
           [](GraphCtxT<double>& c) {
             auto probs = causal_softmax(causal_scores(c.leaf("q"), c.leaf("k"), 0.5));
             auto y = causal_ctx(probs, c.leaf("v"));
             return mean_all(mul(y, y));
           });
  add_case("conv1d",
           [](Reg& r, RandomSource& g) {
             put(r, "x", {7, 3}, g);
             put(r, "w", {2, 3, 4}, g);
             put(r, "b", {4}, g);
           },
           [](GraphCtxT<double>& c) {
             auto y = conv1d(c.leaf("x"), c.leaf("w"), c.leaf("b"), 2);
             return mean_all(mul(y, y));
           });
  add_case("softmax_cross_entropy", [](Reg& r, RandomSource& g) { put(r, "logits", {5, 7}, g); },
           [](GraphCtxT<double>& c) {
             return softmax_cross_entropy(c.leaf("logits"), {1, 6, 0, 3, 3},
                                          {true, true, false, true, true});
           });
  return cases;
}

inline ModelT<double> block_model(uint64_t seed, RandomSource& rng) {
  EncoderConfig e;
  e.layers = 1;
  e.model_dim = 8;
  e.heads = 2;
  e.ffn_dim = 16;
  e.input_dim = 4;
  e.adaptor_k = 2;
  e.decoder_dim = 8;
  DecoderConfig d;
  d.layers = 1;
  d.model_dim = 8;
  d.heads = 2;
  d.ffn_dim = 16;
  d.vocab = 10;
  d.max_positions = 24;
  auto m = make_model<double>(e, d, seed);
  // a well-conditioned parameter point: keeps every gradient component above
  // the f64 finite-difference noise floor
  for (auto* p : m.params.ordered()) {
    const bool ln_gain = p->name.find(".ln") != std::string::npos && p->name.back() == 'g';
    for (size_t i = 0; i < p->value.numel(); ++i)
      p->value[i] = (ln_gain ? 1.0 : 0.0) + 0.25 * rng.gaussian();
  }
  return m;
}

inline TaskSample block_sample(RandomSource& rng) {
  TaskSample s;
  s.prefix_ids = {Tokenizer::kBos, 4 + rng.range(0, 5), 4 + rng.range(0, 5)};
  s.suffix_ids = {Tokenizer::kSep};
  s.target_ids = {4 + rng.range(0, 5), 4 + rng.range(0, 5), Tokenizer::kEos};
  TensorT<float> frames({5, 4});
  for (size_t i = 0; i < frames.numel(); ++i) frames[i] = static_cast<float>(rng.gaussian());
  s.frames = frames;
  s.source_text = "x";
  s.target_text = "x";
  return s;
}

}  // namespace gradsuite_detail

// Finite-difference validation of every primitive plus the full 1-layer
// encoder->adaptor->decoder->loss path, at f64 with central differences.
inline std::vector<GradSuiteResult> run_gradcheck_suite(int seeds = 20, double eps = 1e-5,
                                                        double tolerance = 1e-4) {
  using namespace gradsuite_detail;
  std::vector<GradSuiteResult> results;

  for (const Case& c : primitive_cases()) {
    GradSuiteResult res;
    res.name = c.name;
    res.seeds = seeds;
    res.pass = true;
    for (int seed = 1; seed <= seeds; ++seed) {
      Reg reg;
      RandomSource rng(mix64(0x5eed5, static_cast<uint64_t>(seed)));
      c.init(reg, rng);
      auto report = grad_check<double>(
          reg,
          [&]() {
            GraphCtxT<double> ctx(reg);
            auto loss = c.build(ctx);
            return BoundLossT<double>{loss, std::move(ctx)};
          },
          eps, tolerance);
      res.worst_rel_err = std::max(res.worst_rel_err, report.worst());
      res.pass = res.pass && report.all_pass();
    }
    results.push_back(res);
  }

  {
    GradSuiteResult res;
    res.name = "encoder_decoder_1layer";
    res.seeds = seeds;
    res.pass = true;
    for (int seed = 1; seed <= seeds; ++seed) {
      RandomSource rng(mix64(0xb10c, static_cast<uint64_t>(seed)));
      auto m = block_model(static_cast<uint64_t>(seed), rng);
      TaskSample s = block_sample(rng);
      auto report = grad_check<double>(
          m.params,
          [&]() {
            GraphCtxT<double> ctx(m.params);
            auto loss = sample_loss(m, ctx, s);
            return BoundLossT<double>{loss, std::move(ctx)};
          },
          eps, tolerance);
      res.worst_rel_err = std::max(res.worst_rel_err, report.worst());
      res.pass = res.pass && report.all_pass();
    }
    results.push_back(res);
  }
  return results;
}

// The documented eps sweep over one representative composite.
inline std::vector<GradCheckEntry> run_eps_sweep() {
  using namespace gradsuite_detail;
  std::vector<GradCheckEntry> entries;
  for (double eps : {1e-4, 1e-5, 1e-6}) {
    Reg reg;
    RandomSource rng(77);
    put(reg, "a", {4, 4}, rng);
    put(reg, "b", {4, 4}, rng);
    auto report = grad_check<double>(
        reg,
        [&]() {
          GraphCtxT<double> ctx(reg);
          auto loss = mean_all(gelu(matmul(ctx.leaf("a"), ctx.leaf("b"))));
          return BoundLossT<double>{loss, std::move(ctx)};
        },
        eps, 1e-4);
    GradCheckEntry combined;
    combined.name = "gelu(matmul) sweep";
    combined.eps = eps;
    combined.max_rel_err = report.worst();
    combined.pass = report.all_pass();
    entries.push_back(combined);
  }
  return entries;
}

inline bool print_gradcheck_report(const std::vector<GradSuiteResult>& results,
                                   const std::vector<GradCheckEntry>& sweep, std::ostream& os) {
  bool all = true;
  for (const auto& r : results) {
    os << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": max rel err " << r.worst_rel_err
       << " over " << r.seeds << " seeds\n";
    all = all && r.pass;
  }
  for (const auto& e : sweep) {
    os << (e.pass ? "[PASS] " : "[FAIL] ") << e.name << " at eps " << e.eps << ": max rel err "
       << e.max_rel_err << "\n";
    all = all && e.pass;
  }
  return all;
}

}  // namespace stt
