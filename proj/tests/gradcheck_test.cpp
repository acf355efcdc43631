#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stt/gradcheck.hpp"
#include "stt/ops.hpp"
#include "stt/rng.hpp"
#include "test_util.hpp"

using namespace stt;

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;
constexpr int kSeeds = 20;

using Reg = RegistryT<double>;
using Build = std::function<VarT<double>(GraphCtxT<double>&)>;

// Runs a finite-difference check of `build` for kSeeds random initializations.
void check_op(const char* name, const std::function<void(Reg&, RandomSource&)>& init,
              const Build& build) {
  INFO(name);
  for (int seed = 1; seed <= kSeeds; ++seed) {
    Reg reg;
    RandomSource rng(mix64(0xabc123, static_cast<uint64_t>(seed)));
    init(reg, rng);
    auto report = grad_check<double>(
        reg,
        [&]() {
          GraphCtxT<double> ctx(reg);
          VarT<double> loss = build(ctx);
          return BoundLossT<double>{loss, std::move(ctx)};
        },
        kEps, kTol);
    CHECK(report.all_pass());
    if (!report.all_pass()) {
      for (auto& e : report.entries) MESSAGE(e.name, " rel err ", e.max_rel_err);
    }
  }
}

void add_param(Reg& reg, const std::string& name, std::vector<int> shape, RandomSource& rng) {
  reg.add(name, test::random_tensor<double>(std::move(shape), rng), ParamGroup::kEncoder);
}

}  // namespace

TEST_CASE("gradcheck: add / mul / scalar_mul / bias") {
  check_op(
      "add_mul",
      [](Reg& r, RandomSource& g) {
        add_param(r, "a", {4, 5}, g);
        add_param(r, "b", {4, 5}, g);
        add_param(r, "bias", {5}, g);
      },
      [](GraphCtxT<double>& ctx) {
        auto a = ctx.leaf("a");
        auto b = ctx.leaf("b");
        auto y = add_bias_rows(scalar_mul(add(a, b), 0.7), ctx.leaf("bias"));
        return mean_all(mul(y, a));
      });
}

TEST_CASE("gradcheck: matmul") {
  check_op(
      "matmul",
      [](Reg& r, RandomSource& g) {
        add_param(r, "a", {3, 4}, g);
        add_param(r, "b", {4, 5}, g);
      },
      [](GraphCtxT<double>& ctx) {
        return mean_all(gelu(matmul(ctx.leaf("a"), ctx.leaf("b"))));
      });
}

TEST_CASE("gradcheck: transpose / reshape / slices / concats") {
  check_op(
      "plumbing",
      [](Reg& r, RandomSource& g) {
        add_param(r, "a", {4, 6}, g);
        add_param(r, "b", {2, 6}, g);
      },
      [](GraphCtxT<double>& ctx) {
        auto a = ctx.leaf("a");
        auto b = ctx.leaf("b");
        auto cat = concat_rows<double>({slice_rows(a, 1, 2), b});
        auto cols = concat_cols<double>({slice_cols(cat, 0, 3), slice_cols(cat, 3, 3)});
        auto t = transpose(reshape(cols, {3, 8}));
        return mean_all(mul(t, t));
      });
}

TEST_CASE("gradcheck: embedding lookup") {
  check_op(
      "embed",
      [](Reg& r, RandomSource& g) { add_param(r, "table", {6, 4}, g); },
      [](GraphCtxT<double>& ctx) {
        auto rows = embed_rows(ctx.leaf("table"), {5, 2, 2, 0});
        return mean_all(gelu(rows));
      });
}

TEST_CASE("gradcheck: gelu") {
  check_op(
      "gelu", [](Reg& r, RandomSource& g) { add_param(r, "x", {3, 7}, g); },
      [](GraphCtxT<double>& ctx) { return mean_all(gelu(ctx.leaf("x"))); });
}

TEST_CASE("gradcheck: layer_norm") {
  check_op(
      "layer_norm",
      [](Reg& r, RandomSource& g) {
        add_param(r, "x", {4, 6}, g);
        add_param(r, "gain", {6}, g);
        add_param(r, "bias", {6}, g);
      },
      [](GraphCtxT<double>& ctx) {
        auto y = layer_norm(ctx.leaf("x"), ctx.leaf("gain"), ctx.leaf("bias"), 1e-5);
        return mean_all(mul(y, y));
      });
}

TEST_CASE("gradcheck: softmax_rows") {
  check_op(
      "softmax_rows",
      [](Reg& r, RandomSource& g) {
        add_param(r, "x", {5, 6}, g);
        add_param(r, "w", {5, 6}, g);
      },
      [](GraphCtxT<double>& ctx) {
        return mean_all(mul(softmax_rows(ctx.leaf("x")), ctx.leaf("w")));
      });
}

TEST_CASE("gradcheck: causal attention kernels") {
  check_op(
      "causal",
      [](Reg& r, RandomSource& g) {
        add_param(r, "q", {6, 4}, g);
        add_param(r, "k", {6, 4}, g);
        add_param(r, "v", {6, 4}, g);
      },
      [](GraphCtxT<double>& ctx) {
        auto probs = causal_softmax(causal_scores(ctx.leaf("q"), ctx.leaf("k"), 0.5));
        auto out = causal_ctx(probs, ctx.leaf("v"));
        return mean_all(mul(out, out));
      });
}

TEST_CASE("gradcheck: conv1d") {
  for (int k : {1, 2, 3}) {
    check_op(
        "conv1d",
        [&](Reg& r, RandomSource& g) {
          add_param(r, "x", {7, 3}, g);
          add_param(r, "w", {k, 3, 4}, g);
          add_param(r, "b", {4}, g);
        },
        [&](GraphCtxT<double>& ctx) {
          auto y = conv1d(ctx.leaf("x"), ctx.leaf("w"), ctx.leaf("b"), k);
          return mean_all(mul(y, y));
        });
  }
}

TEST_CASE("gradcheck: softmax_cross_entropy") {
  check_op(
      "xent",
      [](Reg& r, RandomSource& g) { add_param(r, "logits", {5, 7}, g); },
      [](GraphCtxT<double>& ctx) {
        return softmax_cross_entropy(ctx.leaf("logits"), {1, 6, 0, 3, 3},
                                     {true, true, false, true, true});
      });
}

TEST_CASE("gradcheck: mean and sum reductions") {
  check_op(
      "reductions",
      [](Reg& r, RandomSource& g) {
        add_param(r, "x", {4, 4}, g);
        add_param(r, "y", {4, 4}, g);
      },
      [](GraphCtxT<double>& ctx) {
        auto s = sum_all(mul(ctx.leaf("x"), ctx.leaf("y")));
        auto m = mean_all(gelu(ctx.leaf("x")));
        return add(s, m);
      });
}

TEST_CASE("gradcheck detects a corrupted backward rule") {
  Reg reg;
  RandomSource rng(99);
  add_param(reg, "a", {3, 3}, rng);
  add_param(reg, "b", {3, 3}, rng);

  // elementwise product whose backward deliberately drops the b factor
  auto broken_mul = [](const VarT<double>& a, const VarT<double>& b) {
    TensorT<double> out(a->value.shape());
    for (size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
    return detail::make_op<double>(std::move(out), {a, b}, [](NodeT<double>& o) {
      auto& pa = *o.parents[0];
      ensure_grad(pa);
      for (size_t i = 0; i < o.grad.numel(); ++i) pa.grad[i] += o.grad[i];  // wrong
    });
  };

  auto report = grad_check<double>(
      reg,
      [&]() {
        GraphCtxT<double> ctx(reg);
        auto loss = mean_all(broken_mul(ctx.leaf("a"), ctx.leaf("b")));
        return BoundLossT<double>{loss, std::move(ctx)};
      },
      kEps, kTol);
  CHECK_FALSE(report.all_pass());
}

TEST_CASE("gradcheck reports carry the eps used, across a sweep") {
  for (double eps : {1e-4, 1e-5, 1e-6}) {
    Reg reg;
    RandomSource rng(5);
    add_param(reg, "a", {2, 2}, rng);
    auto report = grad_check<double>(
        reg,
        [&]() {
          GraphCtxT<double> ctx(reg);
          auto loss = mean_all(gelu(ctx.leaf("a")));
          return BoundLossT<double>{loss, std::move(ctx)};
        },
        eps, kTol);
    REQUIRE(report.entries.size() == 1);
    CHECK(report.entries[0].eps == eps);
    CHECK(report.all_pass());
  }
}

TEST_CASE("frozen parameters receive no gradient") {
  Reg reg;
  RandomSource rng(42);
  add_param(reg, "w", {3, 3}, rng);
  add_param(reg, "frozen", {3, 3}, rng);
  reg.at("frozen").trainable = false;

  GraphCtxT<double> ctx(reg);
  auto loss = mean_all(mul(ctx.leaf("w"), ctx.leaf("frozen")));
  backward(loss);
  ctx.harvest_grads();

  bool any_w = false;
  for (size_t i = 0; i < 9; ++i) {
    any_w |= reg.at("w").grad[i] != 0.0;
    CHECK(reg.at("frozen").grad[i] == 0.0);
  }
  CHECK(any_w);
}
