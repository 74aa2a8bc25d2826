#pragma once

// Differentiable ops. Each validates shapes, runs a raw kernel, counts its
// forward MACs, and records a backward closure on the tape.

#include <cmath>
#include <memory>
#include <string>

#include "lookupvit/grid.hpp"
#include "lookupvit/instrument.hpp"
#include "lookupvit/kernels.hpp"
#include "lookupvit/tape.hpp"

namespace lookupvit::ops {

namespace detail {

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
Var<T> finish(Tape<T>& tape, Tensor<T> out, const char* op, typename Tape<T>::BackwardFn bw,
              const auto&... inputs) {
  ensure_finite(out, op);
  return tape.record(std::move(out), std::move(bw), inputs...);
}

}  // namespace detail

/// [r x k] * [k x c]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_rank2(av, "matmul");
  detail::require_rank2(bv, "matmul");
  if (av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  }
  const std::size_t r = av.dim(0), k = av.dim(1), c = bv.dim(1);
  Tensor<T> out({r, c});
  kernels::matmul_nn(av.ptr(), bv.ptr(), out.ptr(), r, k, c);
  instrument::count_macs(static_cast<std::uint64_t>(r) * k * c);
  return detail::finish(
      tape, std::move(out), "matmul",
      [a, b, r, k, c](Tape<T>& t, const Tensor<T>& g) {
        if (t.requires_grad(a))
          kernels::matmul_nt(g.ptr(), b.value().ptr(), t.grad_buffer(a).ptr(), r, c, k, true);
        if (t.requires_grad(b))
          kernels::matmul_tn(a.value().ptr(), g.ptr(), t.grad_buffer(b).ptr(), k, r, c, true);
      },
      a, b);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_same_shape(av, bv, "add");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  instrument::count_elementwise(out.numel());
  return detail::finish(
      *a.tape, std::move(out), "add",
      [a, b](Tape<T>& t, const Tensor<T>& g) {
        for (Var<T> v : {a, b}) {
          if (!t.requires_grad(v)) continue;
          auto& gv = t.grad_buffer(v);
          for (std::size_t i = 0; i < g.numel(); ++i) gv[i] += g[i];
        }
      },
      a, b);
}

/// Adds a length-c vector to every row of x[... x c].
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (bv.numel() != xv.cols()) {
    throw DimensionError("add_bias: bias " + shape_str(bv.shape()) + " does not match " +
                         shape_str(xv.shape()));
  }
  Tensor<T> out = xv;
  const std::size_t rows = xv.rows(), c = xv.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += bv[j];
  instrument::count_elementwise(out.numel());
  return detail::finish(
      *x.tape, std::move(out), "add_bias",
      [x, bias, rows, c](Tape<T>& t, const Tensor<T>& g) {
        if (t.requires_grad(x)) {
          auto& gx = t.grad_buffer(x);
          for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
        }
        if (t.requires_grad(bias)) {
          auto& gb = t.grad_buffer(bias);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
        }
      },
      x, bias);
}

template <typename T>
Var<T> scale(Var<T> x, T s) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= s;
  instrument::count_elementwise(out.numel());
  return detail::finish(
      *x.tape, std::move(out), "scale",
      [x, s](Tape<T>& t, const Tensor<T>& g) {
        auto& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += s * g[i];
      },
      x);
}

/// Elementwise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_same_shape(av, bv, "mul");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  instrument::count_elementwise(out.numel());
  return detail::finish(
      *a.tape, std::move(out), "mul",
      [a, b](Tape<T>& t, const Tensor<T>& g) {
        const auto& av = a.value();
        const auto& bv = b.value();
        if (t.requires_grad(a)) {
          auto& ga = t.grad_buffer(a);
          for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(b)) {
          auto& gb = t.grad_buffer(b);
          for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
        }
      },
      a, b);
}

/// Sum of all elements, as a 1-element tensor.
template <typename T>
Var<T> sum(Var<T> x) {
  T s{0};
  for (T v : x.value().data()) s += v;
  instrument::count_elementwise(x.value().numel());
  return detail::finish(
      *x.tape, Tensor<T>({1}, std::vector<T>{s}), "sum",
      [x](Tape<T>& t, const Tensor<T>& g) {
        auto& gx = t.grad_buffer(x);
        for (auto& v : gx.data()) v += g[0];
      },
      x);
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return detail::finish(
      *x.tape, std::move(out), "reshape",
      [x](Tape<T>& t, const Tensor<T>& g) {
        auto& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
      },
      x);
}

/// Joins two vectors end to end.
template <typename T>
Var<T> concat(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<T> data(av.data().begin(), av.data().end());
  data.insert(data.end(), bv.data().begin(), bv.data().end());
  const std::size_t na = av.numel();
  const std::size_t total = data.size();
  return detail::finish(
      *a.tape, Tensor<T>({total}, std::move(data)), "concat",
      [a, b, na](Tape<T>& t, const Tensor<T>& g) {
        if (t.requires_grad(a)) {
          auto& ga = t.grad_buffer(a);
          for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b)) {
          auto& gb = t.grad_buffer(b);
          for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += g[na + i];
        }
      },
      a, b);
}

/// Softmax over the last axis of a tensor of any rank.
template <typename T>
Var<T> softmax_rows(Var<T> x) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  kernels::softmax_rows(xv.ptr(), out.ptr(), xv.rows(), xv.cols());
  instrument::count_elementwise(out.numel());
  instrument::count_softmax();
  auto y = std::make_shared<Tensor<T>>(out);
  return detail::finish(
      *x.tape, std::move(out), "softmax_rows",
      [x, y](Tape<T>& t, const Tensor<T>& g) {
        kernels::softmax_rows_backward(y->ptr(), g.ptr(), t.grad_buffer(x).ptr(), y->rows(),
                                       y->cols());
      },
      x);
}

/// Normalizes the last axis; gamma and beta have that axis' length.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const auto& xv = x.value();
  const std::size_t d = xv.cols();
  if (d < 2) throw ConfigError("layer_norm needs a feature dimension of at least 2");
  if (gamma.value().numel() != d || beta.value().numel() != d) {
    throw DimensionError("layer_norm: affine parameters do not match " + shape_str(xv.shape()));
  }
  const std::size_t rows = xv.rows();
  Tensor<T> out(xv.shape());
  auto xhat = std::make_shared<Tensor<T>>(xv.shape());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  kernels::layer_norm(xv.ptr(), gamma.value().ptr(), beta.value().ptr(), eps, out.ptr(),
                      xhat->ptr(), rstd->data(), rows, d);
  instrument::count_elementwise(2 * out.numel());
  return detail::finish(
      *x.tape, std::move(out), "layer_norm",
      [x, gamma, beta, xhat, rstd, rows, d](Tape<T>& t, const Tensor<T>& g) {
        T* dx = t.requires_grad(x) ? t.grad_buffer(x).ptr() : nullptr;
        T* dg = t.requires_grad(gamma) ? t.grad_buffer(gamma).ptr() : nullptr;
        T* db = t.requires_grad(beta) ? t.grad_buffer(beta).ptr() : nullptr;
        kernels::layer_norm_backward(g.ptr(), xhat->ptr(), rstd->data(), gamma.value().ptr(), dx,
                                     dg, db, rows, d);
      },
      x, gamma, beta);
}

template <typename T>
Var<T> gelu(Var<T> x) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = kernels::gelu(xv[i]);
  instrument::count_elementwise(out.numel());
  return detail::finish(
      *x.tape, std::move(out), "gelu",
      [x](Tape<T>& t, const Tensor<T>& g) {
        const auto& xv = x.value();
        auto& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * kernels::gelu_grad(xv[i]);
      },
      x);
}

/// Per-head scaled dot products. Q[M x D], K[N x D] -> logits[heads x M x N], where head h
/// uses feature columns [h*D/heads, (h+1)*D/heads).
template <typename T>
Var<T> attention_logits(Var<T> q, Var<T> k, std::size_t heads, T scale_factor) {
  const auto& qv = q.value();
  const auto& kv = k.value();
  detail::require_rank2(qv, "attention_logits");
  detail::require_rank2(kv, "attention_logits");
  const std::size_t m = qv.dim(0), n = kv.dim(0), d = qv.dim(1);
  if (kv.dim(1) != d) throw DimensionError("attention_logits: query/key widths differ");
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention_logits: width " + std::to_string(d) +
                      " is not divisible by head count " + std::to_string(heads));
  }
  const std::size_t dh = d / heads;
  Tensor<T> out({heads, m, n});
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < m; ++i) {
      const T* qi = qv.ptr() + i * d + h * dh;
      T* orow = out.ptr() + (h * m + i) * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T* kj = kv.ptr() + j * d + h * dh;
        T acc{0};
        for (std::size_t e = 0; e < dh; ++e) acc += qi[e] * kj[e];
        orow[j] = acc * scale_factor;
      }
    }
  }
  instrument::count_macs(static_cast<std::uint64_t>(m) * n * d);
  return detail::finish(
      *q.tape, std::move(out), "attention_logits",
      [q, k, heads, m, n, d, dh, scale_factor](Tape<T>& t, const Tensor<T>& g) {
        const T* qv = q.value().ptr();
        const T* kv = k.value().ptr();
        T* dq = t.requires_grad(q) ? t.grad_buffer(q).ptr() : nullptr;
        T* dk = t.requires_grad(k) ? t.grad_buffer(k).ptr() : nullptr;
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t i = 0; i < m; ++i) {
            const T* grow = g.ptr() + (h * m + i) * n;
            for (std::size_t j = 0; j < n; ++j) {
              const T gs = grow[j] * scale_factor;
              if (gs == T{0}) continue;
              if (dq) {
                T* dqi = dq + i * d + h * dh;
                const T* kj = kv + j * d + h * dh;
                for (std::size_t e = 0; e < dh; ++e) dqi[e] += gs * kj[e];
              }
              if (dk) {
                T* dkj = dk + j * d + h * dh;
                const T* qi = qv + i * d + h * dh;
                for (std::size_t e = 0; e < dh; ++e) dkj[e] += gs * qi[e];
              }
            }
          }
        }
      },
      q, k);
}

/// out[M x D]: head h of row i is sum_j A[h,i,j] * V[j, head h columns]. A is [heads x M x N],
/// V is [N x D].
template <typename T>
Var<T> attend(Var<T> a, Var<T> v) {
  const auto& av = a.value();
  const auto& vv = v.value();
  if (av.rank() != 3) throw DimensionError("attend: weights must be [heads x M x N]");
  detail::require_rank2(vv, "attend");
  const std::size_t heads = av.dim(0), m = av.dim(1), n = av.dim(2), d = vv.dim(1);
  if (vv.dim(0) != n) throw DimensionError("attend: value rows do not match attention width");
  if (d % heads != 0) throw ConfigError("attend: width not divisible by head count");
  const std::size_t dh = d / heads;
  Tensor<T> out({m, d});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < m; ++i) {
      T* orow = out.ptr() + i * d + h * dh;
      const T* arow = av.ptr() + (h * m + i) * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T w = arow[j];
        const T* vj = vv.ptr() + j * d + h * dh;
        for (std::size_t e = 0; e < dh; ++e) orow[e] += w * vj[e];
      }
    }
  instrument::count_macs(static_cast<std::uint64_t>(m) * n * d);
  return detail::finish(
      *a.tape, std::move(out), "attend",
      [a, v, heads, m, n, d, dh](Tape<T>& t, const Tensor<T>& g) {
        const T* ap = a.value().ptr();
        const T* vp = v.value().ptr();
        T* da = t.requires_grad(a) ? t.grad_buffer(a).ptr() : nullptr;
        T* dv = t.requires_grad(v) ? t.grad_buffer(v).ptr() : nullptr;
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t i = 0; i < m; ++i) {
            const T* gi = g.ptr() + i * d + h * dh;
            for (std::size_t j = 0; j < n; ++j) {
              const std::size_t aij = (h * m + i) * n + j;
              if (da) {
                const T* vj = vp + j * d + h * dh;
                T acc{0};
                for (std::size_t e = 0; e < dh; ++e) acc += gi[e] * vj[e];
                da[aij] += acc;
              }
              if (dv) {
                const T w = ap[aij];
                T* dvj = dv + j * d + h * dh;
                for (std::size_t e = 0; e < dh; ++e) dvj[e] += w * gi[e];
              }
            }
          }
      },
      a, v);
}

/// out[N x D]: head h of row j is sum_i A[h,i,j] * V[i, head h columns]. Uses the transpose
/// of A as-is, without renormalizing its rows. A is [heads x M x N], V is [M x D].
template <typename T>
Var<T> attend_transposed(Var<T> a, Var<T> v) {
  const auto& av = a.value();
  const auto& vv = v.value();
  if (av.rank() != 3) throw DimensionError("attend_transposed: weights must be [heads x M x N]");
  detail::require_rank2(vv, "attend_transposed");
  const std::size_t heads = av.dim(0), m = av.dim(1), n = av.dim(2), d = vv.dim(1);
  if (vv.dim(0) != m) {
    throw DimensionError("attend_transposed: value rows do not match attention height");
  }
  if (d % heads != 0) throw ConfigError("attend_transposed: width not divisible by head count");
  const std::size_t dh = d / heads;
  Tensor<T> out({n, d});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < m; ++i) {
      const T* arow = av.ptr() + (h * m + i) * n;
      const T* vi = vv.ptr() + i * d + h * dh;
      for (std::size_t j = 0; j < n; ++j) {
        const T w = arow[j];
        T* orow = out.ptr() + j * d + h * dh;
        for (std::size_t e = 0; e < dh; ++e) orow[e] += w * vi[e];
      }
    }
  instrument::count_macs(static_cast<std::uint64_t>(m) * n * d);
  return detail::finish(
      *a.tape, std::move(out), "attend_transposed",
      [a, v, heads, m, n, d, dh](Tape<T>& t, const Tensor<T>& g) {
        const T* ap = a.value().ptr();
        const T* vp = v.value().ptr();
        T* da = t.requires_grad(a) ? t.grad_buffer(a).ptr() : nullptr;
        T* dv = t.requires_grad(v) ? t.grad_buffer(v).ptr() : nullptr;
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t i = 0; i < m; ++i) {
            const T* vi = vp + i * d + h * dh;
            T* dvi = dv ? dv + i * d + h * dh : nullptr;
            for (std::size_t j = 0; j < n; ++j) {
              const std::size_t aij = (h * m + i) * n + j;
              const T* gj = g.ptr() + j * d + h * dh;
              if (da) {
                T acc{0};
                for (std::size_t e = 0; e < dh; ++e) acc += gj[e] * vi[e];
                da[aij] += acc;
              }
              if (dvi) {
                const T w = ap[aij];
                for (std::size_t e = 0; e < dh; ++e) dvi[e] += w * gj[e];
              }
            }
          }
      },
      a, v);
}

/// Resamples token rows laid out on grid `from` (row-major, frame-major) onto grid `to`
/// with half-pixel linear interpolation along every axis. x is [from.count() x D].
template <typename T>
Var<T> resize_tokens(Var<T> x, Grid from, Grid to) {
  const auto& xv = x.value();
  if (to.count() == 0) throw DimensionError("resize target has a zero extent");
  if (xv.rank() != 2 || xv.dim(0) != from.count()) {
    throw DimensionError("resize_tokens: input " + shape_str(xv.shape()) +
                         " does not hold grid " + from.str());
  }
  const std::size_t d = xv.dim(1);
  auto plan = std::make_shared<kernels::ResizePlan>(kernels::make_resize_plan(
      from.frames, from.height, from.width, to.frames, to.height, to.width));
  Tensor<T> out({to.count(), d});
  kernels::apply_resize(*plan, xv.ptr(), out.ptr(), d);
  instrument::count_elementwise(out.numel());
  return detail::finish(
      *x.tape, std::move(out), "resize_tokens",
      [x, plan, d](Tape<T>& t, const Tensor<T>& g) {
        kernels::apply_resize_backward(*plan, g.ptr(), t.grad_buffer(x).ptr(), d);
      },
      x);
}

/// Column means of x[r x c] -> [c] (global average pooling over tokens).
template <typename T>
Var<T> mean_rows(Var<T> x) {
  const auto& xv = x.value();
  detail::require_rank2(xv, "mean_rows");
  const std::size_t r = xv.dim(0), c = xv.dim(1);
  Tensor<T> out({c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += xv[i * c + j];
  const T inv = T{1} / static_cast<T>(r);
  for (auto& v : out.data()) v *= inv;
  instrument::count_elementwise(xv.numel());
  return detail::finish(
      *x.tape, std::move(out), "mean_rows",
      [x, r, c, inv](Tape<T>& t, const Tensor<T>& g) {
        auto& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j] * inv;
      },
      x);
}

/// Softmax cross-entropy of a logit vector against a class index.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::size_t label) {
  const auto& lv = logits.value();
  const std::size_t c = lv.numel();
  if (label >= c) {
    throw ContractError("label " + std::to_string(label) + " out of range for " +
                        std::to_string(c) + " classes");
  }
  auto probs = std::make_shared<Tensor<T>>(Shape{c});
  kernels::softmax_rows(lv.ptr(), probs->ptr(), 1, c);
  const T mx = *std::max_element(lv.data().begin(), lv.data().end());
  T lse{0};
  for (T v : lv.data()) lse += std::exp(v - mx);
  const T loss = mx + std::log(lse) - lv[label];
  instrument::count_elementwise(c);
  return detail::finish(
      *logits.tape, Tensor<T>({1}, std::vector<T>{loss}), "cross_entropy",
      [logits, probs, label](Tape<T>& t, const Tensor<T>& g) {
        auto& gl = t.grad_buffer(logits);
        for (std::size_t j = 0; j < gl.numel(); ++j) {
          gl[j] += g[0] * ((*probs)[j] - (j == label ? T{1} : T{0}));
        }
      },
      logits);
}

}  // namespace lookupvit::ops
