#pragma once

// Raw numeric kernels over contiguous row-major buffers. No shape checks,
// no instrumentation, no tape; the differentiable ops in ops.hpp wrap these.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace lookupvit::kernels {

/// C[r x c] (+)= A[r x k] * B[k x c]
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, std::size_t r, std::size_t k, std::size_t n,
               bool accumulate = false) {
  if (!accumulate) std::fill(c, c + r * n, T{0});
  for (std::size_t i = 0; i < r; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C[r x c] (+)= A[k x r]^T * B[k x c]
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, std::size_t r, std::size_t k, std::size_t n,
               bool accumulate = false) {
  if (!accumulate) std::fill(c, c + r * n, T{0});
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * r;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < r; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void transpose(const T* a, T* out, std::size_t r, std::size_t c) {
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
}

/// C[r x c] (+)= A[r x k] * B[c x k]^T. Transposes B once so the inner loop stays contiguous.
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t r, std::size_t k, std::size_t n,
               bool accumulate = false) {
  std::vector<T> bt(k * n);
  transpose(b, bt.data(), n, k);
  matmul_nn(a, bt.data(), c, r, k, n, accumulate);
}

/// Row-wise softmax with max subtraction.
template <typename T>
void softmax_rows(const T* x, T* y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    T* yr = y + r * cols;
    const T mx = *std::max_element(xr, xr + cols);
    T sum{0};
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const T inv = T{1} / sum;
    for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

/// dx = y * (dy - <dy, y>) per row, accumulated into dx.
template <typename T>
void softmax_rows_backward(const T* y, const T* dy, T* dx, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* yr = y + r * cols;
    const T* gr = dy + r * cols;
    T dot{0};
    for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
    T* out = dx + r * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += yr[j] * (gr[j] - dot);
  }
}

/// Normalizes each row to zero mean / unit (biased) variance, then applies gamma, beta.
/// Writes the normalized rows to xhat and 1/sqrt(var+eps) to rstd for the backward pass.
template <typename T>
void layer_norm(const T* x, const T* gamma, const T* beta, T eps, T* y, T* xhat, T* rstd,
                std::size_t rows, std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) {
      const T c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T rs = T{1} / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T n = (xr[j] - mean) * rs;
      xhat[r * d + j] = n;
      y[r * d + j] = n * gamma[j] + beta[j];
    }
  }
}

template <typename T>
void layer_norm_backward(const T* dy, const T* xhat, const T* rstd, const T* gamma, T* dx,
                         T* dgamma, T* dbeta, std::size_t rows, std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* g = dy + r * d;
    const T* xh = xhat + r * d;
    T mean_g{0}, mean_gx{0};
    for (std::size_t j = 0; j < d; ++j) {
      const T gx = g[j] * gamma[j];
      mean_g += gx;
      mean_gx += gx * xh[j];
      if (dgamma) dgamma[j] += g[j] * xh[j];
      if (dbeta) dbeta[j] += g[j];
    }
    mean_g /= static_cast<T>(d);
    mean_gx /= static_cast<T>(d);
    if (dx) {
      for (std::size_t j = 0; j < d; ++j) {
        dx[r * d + j] += rstd[r] * (g[j] * gamma[j] - mean_g - xh[j] * mean_gx);
      }
    }
  }
}

template <typename T>
T gelu(T x) {
  return T{0.5} * x * (T{1} + std::erf(x / std::sqrt(T{2})));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T{0.5} * (T{1} + std::erf(x / std::sqrt(T{2})));
  const T pdf = std::exp(T{-0.5} * x * x) / std::sqrt(T{2} * static_cast<T>(M_PI));
  return cdf + x * pdf;
}

/// One output sample's interpolation footprint along one axis.
struct Taps {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double w_lo = 1.0;
  double w_hi = 0.0;
};

/// Half-pixel-center linear taps: output i samples input coordinate
/// (i + 0.5) * in / out - 0.5, clamped to [0, in - 1].
inline std::vector<Taps> linear_taps(std::size_t in, std::size_t out) {
  std::vector<Taps> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    const double frac = src - static_cast<double>(lo);
    taps[i] = hi == lo ? Taps{lo, lo, 1.0, 0.0} : Taps{lo, hi, 1.0 - frac, frac};
  }
  return taps;
}

/// Sparse resampling plan from a (t, h, w) grid to another; rows carry D channels.
struct ResizePlan {
  struct Entry {
    std::size_t src_row;
    double weight;
  };
  std::vector<std::vector<Entry>> rows;  // one entry list per output row
};

inline ResizePlan make_resize_plan(std::size_t t, std::size_t h, std::size_t w, std::size_t t2,
                                   std::size_t h2, std::size_t w2) {
  const auto tt = linear_taps(t, t2);
  const auto th = linear_taps(h, h2);
  const auto tw = linear_taps(w, w2);
  ResizePlan plan;
  plan.rows.reserve(t2 * h2 * w2);
  auto axis = [](const Taps& tp) {
    std::vector<std::pair<std::size_t, double>> v{{tp.lo, tp.w_lo}};
    if (tp.w_hi != 0.0) v.emplace_back(tp.hi, tp.w_hi);
    return v;
  };
  for (std::size_t a = 0; a < t2; ++a) {
    const auto ta = axis(tt[a]);
    for (std::size_t b = 0; b < h2; ++b) {
      const auto tb = axis(th[b]);
      for (std::size_t c = 0; c < w2; ++c) {
        const auto tc = axis(tw[c]);
        std::vector<ResizePlan::Entry> entries;
        for (const auto& [ia, wa] : ta)
          for (const auto& [ib, wb] : tb)
            for (const auto& [ic, wc] : tc)
              entries.push_back({(ia * h + ib) * w + ic, wa * wb * wc});
        plan.rows.push_back(std::move(entries));
      }
    }
  }
  return plan;
}

template <typename T>
void apply_resize(const ResizePlan& plan, const T* x, T* y, std::size_t d) {
  for (std::size_t r = 0; r < plan.rows.size(); ++r) {
    T* out = y + r * d;
    std::fill(out, out + d, T{0});
    for (const auto& e : plan.rows[r]) {
      const T wgt = static_cast<T>(e.weight);
      const T* in = x + e.src_row * d;
      for (std::size_t j = 0; j < d; ++j) out[j] += wgt * in[j];
    }
  }
}

/// Adjoint of apply_resize, accumulated into dx.
template <typename T>
void apply_resize_backward(const ResizePlan& plan, const T* dy, T* dx, std::size_t d) {
  for (std::size_t r = 0; r < plan.rows.size(); ++r) {
    const T* g = dy + r * d;
    for (const auto& e : plan.rows[r]) {
      const T wgt = static_cast<T>(e.weight);
      T* out = dx + e.src_row * d;
      for (std::size_t j = 0; j < d; ++j) out[j] += wgt * g[j];
    }
  }
}

}  // namespace lookupvit::kernels
