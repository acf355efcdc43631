#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "stt/autodiff.hpp"
#include "stt/tensor.hpp"

namespace stt {
namespace detail {

// C[m x n] += A[m x k] * B[k x n]. The single gemm kernel; transposed
// operands are materialized by callers so the inner loop never reduces.
template <typename S>
void gemm_nn(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<size_t>(i) * k;
    S* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S aip = arow[p];
      if (aip == S(0)) continue;
      const S* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename S>
TensorT<S> transposed(const TensorT<S>& x) {
  const int r = x.rows(), c = x.cols();
  TensorT<S> t({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) t.at(j, i) = x.at(i, j);
  return t;
}

template <typename S>
bool any_need_grad(const std::vector<VarT<S>>& vs) {
  for (const auto& v : vs)
    if (v->need_grad) return true;
  return false;
}

template <typename S>
VarT<S> make_op(TensorT<S> value, std::vector<VarT<S>> parents,
                std::function<void(NodeT<S>&)> backward_fn) {
  auto n = std::make_shared<NodeT<S>>();
  n->value = std::move(value);
  n->need_grad = any_need_grad(parents);
  n->parents = std::move(parents);
  if (n->need_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---------------------------------------------------------------- arithmetic

template <typename S>
VarT<S> add(const VarT<S>& a, const VarT<S>& b) {
  detail::require(a->value.same_shape(b->value),
                  "add: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                      shape_str(b->value.shape()));
  TensorT<S> out(a->value.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
  return detail::make_op<S>(std::move(out), {a, b}, [n](NodeT<S>& o) {
    for (int pi = 0; pi < 2; ++pi) {
      auto& p = *o.parents[pi];
      if (!p.need_grad) continue;
      ensure_grad(p);
      for (size_t i = 0; i < n; ++i) p.grad[i] += o.grad[i];
    }
  });
}

// y[i,j] = x[i,j] + bias[j]; the one broadcast the engine allows besides scalars.
template <typename S>
VarT<S> add_bias_rows(const VarT<S>& x, const VarT<S>& bias) {
  detail::require(x->value.rank() == 2 && bias->value.rank() == 1 &&
                      bias->value.dim(0) == x->value.cols(),
                  "add_bias_rows: shape mismatch " + shape_str(x->value.shape()) + " vs " +
                      shape_str(bias->value.shape()));
  const int r = x->value.rows(), c = x->value.cols();
  TensorT<S> out({r, c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(i, j) = x->value.at(i, j) + bias->value[static_cast<size_t>(j)];
  return detail::make_op<S>(std::move(out), {x, bias}, [r, c](NodeT<S>& o) {
    auto& px = *o.parents[0];
    auto& pb = *o.parents[1];
    if (px.need_grad) {
      ensure_grad(px);
      const size_t n = px.grad.numel();
      for (size_t i = 0; i < n; ++i) px.grad[i] += o.grad[i];
    }
    if (pb.need_grad) {
      ensure_grad(pb);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) pb.grad[static_cast<size_t>(j)] += o.grad.at(i, j);
    }
  });
}

template <typename S>
VarT<S> scalar_mul(const VarT<S>& x, S s) {
  TensorT<S> out(x->value.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out[i] = x->value[i] * s;
  return detail::make_op<S>(std::move(out), {x}, [s, n](NodeT<S>& o) {
    auto& p = *o.parents[0];
    if (!p.need_grad) return;
    ensure_grad(p);
    for (size_t i = 0; i < n; ++i) p.grad[i] += s * o.grad[i];
  });
}

template <typename S>
VarT<S> mul(const VarT<S>& a, const VarT<S>& b) {
  detail::require(a->value.same_shape(b->value),
                  "mul: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                      shape_str(b->value.shape()));
  TensorT<S> out(a->value.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
  return detail::make_op<S>(std::move(out), {a, b}, [n](NodeT<S>& o) {
    auto& pa = *o.parents[0];
    auto& pb = *o.parents[1];
    if (pa.need_grad) {
      ensure_grad(pa);
      for (size_t i = 0; i < n; ++i) pa.grad[i] += o.grad[i] * pb.value[i];
    }
    if (pb.need_grad) {
      ensure_grad(pb);
      for (size_t i = 0; i < n; ++i) pb.grad[i] += o.grad[i] * pa.value[i];
    }
  });
}

// ------------------------------------------------------------------- matmul

template <typename S>
VarT<S> matmul(const VarT<S>& a, const VarT<S>& b) {
  detail::require(a->value.rank() == 2 && b->value.rank() == 2 &&
                      a->value.cols() == b->value.rows(),
                  "matmul: dimension mismatch " + shape_str(a->value.shape()) + " vs " +
                      shape_str(b->value.shape()));
  const int m = a->value.rows(), k = a->value.cols(), n = b->value.cols();
  TensorT<S> out({m, n});
  detail::gemm_nn(a->value.data(), b->value.data(), out.data(), m, k, n);
  // dA = G * B^T, dB = A^T * G
  return detail::make_op<S>(std::move(out), {a, b}, [m, k, n](NodeT<S>& o) {
    auto& pa = *o.parents[0];
    auto& pb = *o.parents[1];
    if (pa.need_grad) {
      ensure_grad(pa);
      TensorT<S> bt = detail::transposed(pb.value);
      detail::gemm_nn(o.grad.data(), bt.data(), pa.grad.data(), m, n, k);
    }
    if (pb.need_grad) {
      ensure_grad(pb);
      TensorT<S> at = detail::transposed(pa.value);
      detail::gemm_nn(at.data(), o.grad.data(), pb.grad.data(), k, m, n);
    }
  });
}

// ------------------------------------------------------------ shape plumbing

template <typename S>
VarT<S> transpose(const VarT<S>& x) {
  detail::require(x->value.rank() == 2, "transpose: rank-2 tensor required, got " +
                                            shape_str(x->value.shape()));
  const int r = x->value.rows(), c = x->value.cols();
  return detail::make_op<S>(detail::transposed(x->value), {x}, [r, c](NodeT<S>& o) {
    auto& p = *o.parents[0];
    if (!p.need_grad) return;
    ensure_grad(p);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) p.grad.at(i, j) += o.grad.at(j, i);
  });
}

template <typename S>
VarT<S> reshape(const VarT<S>& x, std::vector<int> shape) {
  TensorT<S> out(shape);
  detail::require(out.numel() == x->value.numel(),
                  "reshape: element count mismatch " + shape_str(x->value.shape()) + " vs " +
                      shape_str(shape));
  const size_t n = out.numel();
  std::memcpy(out.data(), x->value.data(), n * sizeof(S));
  return detail::make_op<S>(std::move(out), {x}, [n](NodeT<S>& o) {
    auto& p = *o.parents[0];
    if (!p.need_grad) return;
    ensure_grad(p);
    for (size_t i = 0; i < n; ++i) p.grad[i] += o.grad[i];
  });
}

template <typename S>
VarT<S> slice_rows(const VarT<S>& x, int row0, int len) {
  detail::require(x->value.rank() == 2 && row0 >= 0 && len >= 1 && row0 + len <= x->value.rows(),
                  "slice_rows: range [" + std::to_string(row0) + ", " +
                      std::to_string(row0 + len) + ") out of " + shape_str(x->value.shape()));
  const int c = x->value.cols();
  TensorT<S> out({len, c});
  std::memcpy(out.data(), x->value.data() + static_cast<size_t>(row0) * c,
              static_cast<size_t>(len) * c * sizeof(S));
  return detail::make_op<S>(std::move(out), {x}, [row0, len, c](NodeT<S>& o) {
    auto& p = *o.parents[0];
    if (!p.need_grad) return;
    ensure_grad(p);
    for (int i = 0; i < len; ++i)
      for (int j = 0; j < c; ++j) p.grad.at(row0 + i, j) += o.grad.at(i, j);
  });
}

template <typename S>
VarT<S> slice_cols(const VarT<S>& x, int col0, int len) {
  detail::require(x->value.rank() == 2 && col0 >= 0 && len >= 1 && col0 + len <= x->value.cols(),
                  "slice_cols: range [" + std::to_string(col0) + ", " +
                      std::to_string(col0 + len) + ") out of " + shape_str(x->value.shape()));
  const int r = x->value.rows();
  TensorT<S> out({r, len});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = x->value.at(i, col0 + j);
  return detail::make_op<S>(std::move(out), {x}, [col0, len, r](NodeT<S>& o) {
    auto& p = *o.parents[0];
    if (!p.need_grad) return;
    ensure_grad(p);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < len; ++j) p.grad.at(i, col0 + j) += o.grad.at(i, j);
  });
}

template <typename S>
VarT<S> concat_rows(const std::vector<VarT<S>>& parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  const int c = parts[0]->value.cols();
  int total = 0;
  for (const auto& p : parts) {
    detail::require(p->value.rank() == 2 && p->value.cols() == c,
                    "concat_rows: column mismatch " + shape_str(p->value.shape()));
    total += p->value.rows();
  }
  TensorT<S> out({total, c});
  int row = 0;
  std::vector<int> offsets;
  for (const auto& p : parts) {
    offsets.push_back(row);
    std::memcpy(out.data() + static_cast<size_t>(row) * c, p->value.data(),
                p->value.numel() * sizeof(S));
    row += p->value.rows();
  }
  return detail::make_op<S>(std::move(out), parts, [offsets, c](NodeT<S>& o) {
    for (size_t pi = 0; pi < o.parents.size(); ++pi) {
      auto& p = *o.parents[pi];
      if (!p.need_grad) continue;
      ensure_grad(p);
      const int r0 = offsets[pi], r = p.value.rows();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) p.grad.at(i, j) += o.grad.at(r0 + i, j);
    }
  });
}

template <typename S>
VarT<S> concat_cols(const std::vector<VarT<S>>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const int r = parts[0]->value.rows();
  int total = 0;
  for (const auto& p : parts) {
    detail::require(p->value.rank() == 2 && p->value.rows() == r,
                    "concat_cols: row mismatch " + shape_str(p->value.shape()));
    total += p->value.cols();
  }
  TensorT<S> out({r, total});
  std::vector<int> offsets;
  int col = 0;
  for (const auto& p : parts) {
    offsets.push_back(col);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < p->value.cols(); ++j) out.at(i, col + j) = p->value.at(i, j);
    col += p->value.cols();
  }
  return detail::make_op<S>(std::move(out), parts, [offsets, r](NodeT<S>& o) {
    for (size_t pi = 0; pi < o.parents.size(); ++pi) {
      auto& p = *o.parents[pi];
      if (!p.need_grad) continue;
      ensure_grad(p);
      const int c0 = offsets[pi], c = p.value.cols();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) p.grad.at(i, j) += o.grad.at(i, c0 + j);
    }
  });
}

// Row lookup into an embedding table; backward scatters into the table rows.
template <typename S>
VarT<S> embed_rows(const VarT<S>& table, std::vector<int> ids) {
  detail::require(table->value.rank() == 2, "embed_rows: table must be rank-2, got " +
                                                shape_str(table->value.shape()));
  detail::require(!ids.empty(), "embed_rows: empty id list");
  const int v = table->value.rows(), h = table->value.cols();
  for (int id : ids)
    detail::require(id >= 0 && id < v,
                    "embed_rows: id " + std::to_string(id) + " outside table of " + std::to_string(v));
  TensorT<S> out({static_cast<int>(ids.size()), h});
  for (size_t i = 0; i < ids.size(); ++i)
    std::memcpy(out.data() + i * h, table->value.data() + static_cast<size_t>(ids[i]) * h,
                static_cast<size_t>(h) * sizeof(S));
  return detail::make_op<S>(std::move(out), {table}, [ids = std::move(ids), h](NodeT<S>& o) {
    auto& p = *o.parents[0];
    if (!p.need_grad) return;
    ensure_grad(p);
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < h; ++j)
        p.grad[static_cast<size_t>(ids[i]) * h + j] += o.grad[i * h + j];
  });
}

// ---------------------------------------------------------------- pointwise

template <typename S>
VarT<S> gelu(const VarT<S>& x) {
  // exact gaussian form, evaluated in the tensor's own precision
  const S inv_sqrt2 = static_cast<S>(0.70710678118654752440);
  const S inv_sqrt2pi = static_cast<S>(0.39894228040143267794);
  TensorT<S> out(x->value.shape());
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) {
    const S v = x->value[i];
    out[i] = S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2));
  }
  return detail::make_op<S>(std::move(out), {x}, [n, inv_sqrt2, inv_sqrt2pi](NodeT<S>& o) {
    auto& p = *o.parents[0];
    if (!p.need_grad) return;
    ensure_grad(p);
    for (size_t i = 0; i < n; ++i) {
      const S v = p.value[i];
      const S cdf = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
      const S pdf = inv_sqrt2pi * std::exp(S(-0.5) * v * v);
      p.grad[i] += o.grad[i] * (cdf + v * pdf);
    }
  });
}

template <typename S>
VarT<S> sum_all(const VarT<S>& x) {
  const size_t n = x->value.numel();
  S acc = S(0);
  for (size_t i = 0; i < n; ++i) acc += x->value[i];
  return detail::make_op<S>(TensorT<S>::scalar(acc), {x}, [n](NodeT<S>& o) {
    auto& p = *o.parents[0];
    if (!p.need_grad) return;
    ensure_grad(p);
    const S g = o.grad[0];
    for (size_t i = 0; i < n; ++i) p.grad[i] += g;
  });
}

template <typename S>
VarT<S> mean_all(const VarT<S>& x) {
  const size_t n = x->value.numel();
  S acc = S(0);
  for (size_t i = 0; i < n; ++i) acc += x->value[i];
  acc /= static_cast<S>(n);
  return detail::make_op<S>(TensorT<S>::scalar(acc), {x}, [n](NodeT<S>& o) {
    auto& p = *o.parents[0];
    if (!p.need_grad) return;
    ensure_grad(p);
    const S g = o.grad[0] / static_cast<S>(n);
    for (size_t i = 0; i < n; ++i) p.grad[i] += g;
  });
}

// -------------------------------------------------------------- layer norm

// Per-row normalization over the last dimension (population variance),
// y = gain * (x - mean) / sqrt(var + eps) + bias.
template <typename S>
VarT<S> layer_norm(const VarT<S>& x, const VarT<S>& gain, const VarT<S>& bias, S eps) {
  const int h = x->value.dim(x->value.rank() - 1);
  detail::require(h >= 2, "layer_norm: last dimension must be >= 2");
  detail::require(gain->value.rank() == 1 && gain->value.dim(0) == h &&
                      bias->value.rank() == 1 && bias->value.dim(0) == h,
                  "layer_norm: gain/bias shape mismatch with " + shape_str(x->value.shape()));
  const int rows = static_cast<int>(x->value.numel()) / h;
  TensorT<S> out(x->value.shape());
  TensorT<S> xhat(x->value.shape());  // kept for backward
  TensorT<S> inv_std({rows});
  for (int i = 0; i < rows; ++i) {
    const S* row = x->value.data() + static_cast<size_t>(i) * h;
    S mean = S(0);
    for (int j = 0; j < h; ++j) mean += row[j];
    mean /= static_cast<S>(h);
    S var = S(0);
    for (int j = 0; j < h; ++j) {
      const S d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<S>(h);
    const S inv = S(1) / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = inv;
    for (int j = 0; j < h; ++j) {
      const S xh = (row[j] - mean) * inv;
      xhat[static_cast<size_t>(i) * h + j] = xh;
      out[static_cast<size_t>(i) * h + j] =
          gain->value[static_cast<size_t>(j)] * xh + bias->value[static_cast<size_t>(j)];
    }
  }
  return detail::make_op<S>(
      std::move(out), {x, gain, bias},
      [rows, h, xhat = std::move(xhat), inv_std = std::move(inv_std)](NodeT<S>& o) {
        auto& px = *o.parents[0];
        auto& pg = *o.parents[1];
        auto& pb = *o.parents[2];
        if (px.need_grad) ensure_grad(px);
        if (pg.need_grad) ensure_grad(pg);
        if (pb.need_grad) ensure_grad(pb);
        for (int i = 0; i < rows; ++i) {
          const size_t base = static_cast<size_t>(i) * h;
          if (px.need_grad) {
            // dx = inv * (gh - mean(gh) - xhat * mean(gh*xhat)), gh = g*gain
            S mean_gh = S(0), mean_ghx = S(0);
            for (int j = 0; j < h; ++j) {
              const S gh = o.grad[base + j] * pg.value[static_cast<size_t>(j)];
              mean_gh += gh;
              mean_ghx += gh * xhat[base + j];
            }
            mean_gh /= static_cast<S>(h);
            mean_ghx /= static_cast<S>(h);
            const S inv = inv_std[static_cast<size_t>(i)];
            for (int j = 0; j < h; ++j) {
              const S gh = o.grad[base + j] * pg.value[static_cast<size_t>(j)];
              px.grad[base + j] += inv * (gh - mean_gh - xhat[base + j] * mean_ghx);
            }
          }
          for (int j = 0; j < h; ++j) {
            if (pg.need_grad) pg.grad[static_cast<size_t>(j)] += o.grad[base + j] * xhat[base + j];
            if (pb.need_grad) pb.grad[static_cast<size_t>(j)] += o.grad[base + j];
          }
        }
      });
}

// ----------------------------------------------------------------- softmax

template <typename S>
VarT<S> softmax_rows(const VarT<S>& x) {
  detail::require(x->value.rank() == 2, "softmax_rows: rank-2 tensor required");
  const int r = x->value.rows(), c = x->value.cols();
  TensorT<S> out({r, c});
  for (int i = 0; i < r; ++i) {
    const S* row = x->value.data() + static_cast<size_t>(i) * c;
    S* orow = out.data() + static_cast<size_t>(i) * c;
    S mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    S z = S(0);
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (int j = 0; j < c; ++j) orow[j] /= z;
  }
  return detail::make_op<S>(std::move(out), {x}, [r, c](NodeT<S>& o) {
    auto& p = *o.parents[0];
    if (!p.need_grad) return;
    ensure_grad(p);
    for (int i = 0; i < r; ++i) {
      const size_t base = static_cast<size_t>(i) * c;
      S dot = S(0);
      for (int j = 0; j < c; ++j) dot += o.grad[base + j] * o.value[base + j];
      for (int j = 0; j < c; ++j)
        p.grad[base + j] += o.value[base + j] * (o.grad[base + j] - dot);
    }
  });
}

// ------------------------------------------------- causal attention kernels

// scores[i][j] = scale * <q_i, k_j> for j <= i; entries above the diagonal are
// never computed, so later rows cannot influence earlier ones even at the bit
// level. Keys are transposed once so the inner loop runs over contiguous j.
template <typename S>
VarT<S> causal_scores(const VarT<S>& q, const VarT<S>& k, S scale) {
  detail::require(q->value.rank() == 2 && k->value.rank() == 2 &&
                      q->value.same_shape(k->value),
                  "causal_scores: shape mismatch " + shape_str(q->value.shape()) + " vs " +
                      shape_str(k->value.shape()));
  const int t = q->value.rows(), d = q->value.cols();
  const TensorT<S> kt = detail::transposed(k->value);  // [d x t]
  TensorT<S> out({t, t});
  for (int i = 0; i < t; ++i) {
    const S* qi = q->value.data() + static_cast<size_t>(i) * d;
    S* orow = out.data() + static_cast<size_t>(i) * t;
    for (int p = 0; p < d; ++p) {
      const S qip = qi[p];
      const S* krow = kt.data() + static_cast<size_t>(p) * t;
      for (int j = 0; j <= i; ++j) orow[j] += qip * krow[j];
    }
    for (int j = 0; j <= i; ++j) orow[j] *= scale;
  }
  return detail::make_op<S>(std::move(out), {q, k}, [t, d, scale](NodeT<S>& o) {
    auto& pq = *o.parents[0];
    auto& pk = *o.parents[1];
    if (pq.need_grad) ensure_grad(pq);
    if (pk.need_grad) ensure_grad(pk);
    for (int i = 0; i < t; ++i) {
      for (int j = 0; j <= i; ++j) {
        const S g = scale * o.grad.at(i, j);
        if (g == S(0)) continue;
        if (pq.need_grad)
          for (int p = 0; p < d; ++p) pq.grad.at(i, p) += g * pk.value.at(j, p);
        if (pk.need_grad)
          for (int p = 0; p < d; ++p) pk.grad.at(j, p) += g * pq.value.at(i, p);
      }
    }
  });
}

// Row-wise softmax over the prefix j <= i; masked entries are exactly zero.
template <typename S>
VarT<S> causal_softmax(const VarT<S>& scores) {
  detail::require(scores->value.rank() == 2 && scores->value.rows() == scores->value.cols(),
                  "causal_softmax: square matrix required, got " +
                      shape_str(scores->value.shape()));
  const int t = scores->value.rows();
  TensorT<S> out({t, t});
  for (int i = 0; i < t; ++i) {
    const S* row = scores->value.data() + static_cast<size_t>(i) * t;
    S* orow = out.data() + static_cast<size_t>(i) * t;
    S mx = row[0];
    for (int j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
    S z = S(0);
    for (int j = 0; j <= i; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (int j = 0; j <= i; ++j) orow[j] /= z;
  }
  return detail::make_op<S>(std::move(out), {scores}, [t](NodeT<S>& o) {
    auto& p = *o.parents[0];
    if (!p.need_grad) return;
    ensure_grad(p);
    for (int i = 0; i < t; ++i) {
      const size_t base = static_cast<size_t>(i) * t;
      S dot = S(0);
      for (int j = 0; j <= i; ++j) dot += o.grad[base + j] * o.value[base + j];
      for (int j = 0; j <= i; ++j)
        p.grad[base + j] += o.value[base + j] * (o.grad[base + j] - dot);
    }
  });
}

// ctx[i] = sum_{j <= i} probs[i][j] * v[j]; masked columns never enter the sum.
template <typename S>
VarT<S> causal_ctx(const VarT<S>& probs, const VarT<S>& v) {
  detail::require(probs->value.rank() == 2 && v->value.rank() == 2 &&
                      probs->value.rows() == probs->value.cols() &&
                      probs->value.cols() == v->value.rows(),
                  "causal_ctx: shape mismatch " + shape_str(probs->value.shape()) + " vs " +
                      shape_str(v->value.shape()));
  const int t = v->value.rows(), d = v->value.cols();
  TensorT<S> out({t, d});
  for (int i = 0; i < t; ++i) {
    S* orow = out.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j <= i; ++j) {
      const S w = probs->value.at(i, j);
      if (w == S(0)) continue;
      const S* vrow = v->value.data() + static_cast<size_t>(j) * d;
      for (int p = 0; p < d; ++p) orow[p] += w * vrow[p];
    }
  }
  return detail::make_op<S>(std::move(out), {probs, v}, [t, d](NodeT<S>& o) {
    auto& pp = *o.parents[0];
    auto& pv = *o.parents[1];
    if (pp.need_grad) {
      ensure_grad(pp);
      const TensorT<S> vt = detail::transposed(pv.value);  // contiguous j
      for (int i = 0; i < t; ++i) {
        const S* grow = o.grad.data() + static_cast<size_t>(i) * d;
        S* prow = pp.grad.data() + static_cast<size_t>(i) * t;
        for (int p = 0; p < d; ++p) {
          const S g = grow[p];
          if (g == S(0)) continue;
          const S* vrow = vt.data() + static_cast<size_t>(p) * t;
          for (int j = 0; j <= i; ++j) prow[j] += g * vrow[j];
        }
      }
    }
    if (pv.need_grad) {
      ensure_grad(pv);
      for (int i = 0; i < t; ++i) {
        const S* grow = o.grad.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j <= i; ++j) {
          const S w = pp.value.at(i, j);
          if (w == S(0)) continue;
          S* vgrad = pv.grad.data() + static_cast<size_t>(j) * d;
          for (int p = 0; p < d; ++p) vgrad[p] += w * grow[p];
        }
      }
    }
  });
}

// ------------------------------------------------------------------- conv1d

// Non-overlapping 1-D convolution: stride equals the filter size, input is
// right-zero-padded to a multiple of k, output length is ceil(n/k).
template <typename S>
VarT<S> conv1d(const VarT<S>& x, const VarT<S>& weights, const VarT<S>& bias, int k) {
  if (k <= 0) throw std::invalid_argument("conv1d: filter size must be positive, got " + std::to_string(k));
  detail::require(x->value.rank() == 2, "conv1d: input must be rank-2, got " +
                                            shape_str(x->value.shape()));
  const int n = x->value.rows(), c_in = x->value.cols();
  detail::require(weights->value.rank() == 3 && weights->value.dim(0) == k &&
                      weights->value.dim(1) == c_in,
                  "conv1d: weight shape " + shape_str(weights->value.shape()) +
                      " incompatible with input " + shape_str(x->value.shape()));
  const int c_out = weights->value.dim(2);
  detail::require(bias->value.rank() == 1 && bias->value.dim(0) == c_out,
                  "conv1d: bias shape " + shape_str(bias->value.shape()));
  const int m = (n + k - 1) / k;
  TensorT<S> out({m, c_out});
  const S* w = weights->value.data();
  for (int t = 0; t < m; ++t) {
    S* orow = out.data() + static_cast<size_t>(t) * c_out;
    for (int j = 0; j < c_out; ++j) orow[j] = bias->value[static_cast<size_t>(j)];
    for (int u = 0; u < k; ++u) {
      const int row = t * k + u;
      if (row >= n) break;  // zero padding contributes nothing
      const S* xrow = x->value.data() + static_cast<size_t>(row) * c_in;
      for (int ci = 0; ci < c_in; ++ci) {
        const S xv = xrow[ci];
        if (xv == S(0)) continue;
        const S* wrow = w + (static_cast<size_t>(u) * c_in + ci) * c_out;
        for (int j = 0; j < c_out; ++j) orow[j] += xv * wrow[j];
      }
    }
  }
  return detail::make_op<S>(std::move(out), {x, weights, bias},
                            [n, c_in, c_out, k, m](NodeT<S>& o) {
    auto& px = *o.parents[0];
    auto& pw = *o.parents[1];
    auto& pb = *o.parents[2];
    if (px.need_grad) ensure_grad(px);
    if (pw.need_grad) ensure_grad(pw);
    if (pb.need_grad) ensure_grad(pb);
    for (int t = 0; t < m; ++t) {
      const S* grow = o.grad.data() + static_cast<size_t>(t) * c_out;
      if (pb.need_grad)
        for (int j = 0; j < c_out; ++j) pb.grad[static_cast<size_t>(j)] += grow[j];
      for (int u = 0; u < k; ++u) {
        const int row = t * k + u;
        if (row >= n) break;
        for (int ci = 0; ci < c_in; ++ci) {
          const size_t widx = (static_cast<size_t>(u) * c_in + ci) * c_out;
          if (px.need_grad) {
            S acc = S(0);
            for (int j = 0; j < c_out; ++j) acc += grow[j] * pw.value[widx + j];
            px.grad.at(row, ci) += acc;
          }
          if (pw.need_grad) {
            const S xv = px.value.at(row, ci);
            for (int j = 0; j < c_out; ++j) pw.grad[widx + j] += xv * grow[j];
          }
        }
      }
    }
  });
}

// ------------------------------------------------------------ cross entropy

// Mean negative log-likelihood over masked-in rows. Rows with mask false are
// never read, so their logits cannot affect the loss or its gradient.
template <typename S>
VarT<S> softmax_cross_entropy(const VarT<S>& logits, const std::vector<int>& targets,
                              const std::vector<bool>& mask) {
  detail::require(logits->value.rank() == 2, "softmax_cross_entropy: logits must be rank-2");
  const int t = logits->value.rows(), v = logits->value.cols();
  detail::require(static_cast<int>(targets.size()) == t && static_cast<int>(mask.size()) == t,
                  "softmax_cross_entropy: got " + std::to_string(targets.size()) + " targets, " +
                      std::to_string(mask.size()) + " mask bits for " + std::to_string(t) + " rows");
  int m = 0;
  for (int i = 0; i < t; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    ++m;
    detail::require(targets[static_cast<size_t>(i)] >= 0 && targets[static_cast<size_t>(i)] < v,
                    "softmax_cross_entropy: target " + std::to_string(targets[static_cast<size_t>(i)]) +
                        " outside vocabulary of " + std::to_string(v));
  }
  if (m == 0) throw std::invalid_argument("softmax_cross_entropy: every position is masked out");
  S loss = S(0);
  for (int i = 0; i < t; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    const S* row = logits->value.data() + static_cast<size_t>(i) * v;
    S mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    S z = S(0);
    for (int j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    loss += (mx + std::log(z)) - row[targets[static_cast<size_t>(i)]];
  }
  loss /= static_cast<S>(m);
  return detail::make_op<S>(TensorT<S>::scalar(loss), {logits},
                            [targets, mask, t, v, m](NodeT<S>& o) {
    auto& p = *o.parents[0];
    if (!p.need_grad) return;
    ensure_grad(p);
    const S g = o.grad[0] / static_cast<S>(m);
    for (int i = 0; i < t; ++i) {
      if (!mask[static_cast<size_t>(i)]) continue;
      const S* row = p.value.data() + static_cast<size_t>(i) * v;
      S* grow = p.grad.data() + static_cast<size_t>(i) * v;
      S mx = row[0];
      for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
      S z = S(0);
      for (int j = 0; j < v; ++j) z += std::exp(row[j] - mx);
      for (int j = 0; j < v; ++j) {
        const S prob = std::exp(row[j] - mx) / z;
        grow[j] += g * (prob - (j == targets[static_cast<size_t>(i)] ? S(1) : S(0)));
      }
    }
  });
}

}  // namespace stt
