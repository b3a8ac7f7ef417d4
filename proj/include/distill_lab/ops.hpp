#pragma once

// Differentiable primitives over BasicTensor. Two-dimensional tensors are
// [rows x cols]; a rank-1 right operand of add/sub broadcasts over the leading
// batch dimension.

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "distill_lab/tensor.hpp"

namespace distill_lab {

enum class Mode { train, eval };

template <std::floating_point T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  static BatchNormState fresh(std::size_t width) {
    return {std::vector<T>(width, T{0}), std::vector<T>(width, T{1})};
  }
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

namespace detail {

inline void require_rank2(const char* op, const Shape& s) {
  if (s.size() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + to_string(s));
}

// c[n x m] += a[n x k] * b[k x m]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    T* crow = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T{0}) continue;
      const T* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[n x m] += a[n x k] * b[m x k]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const T* brow = b + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * m + j] += acc;
    }
  }
}

// c[k x m] += a[n x k]^T * b[n x m]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* brow = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T{0}) continue;
      T* crow = c + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

inline std::pair<std::size_t, std::size_t> rows_cols(const Shape& s) {
  if (s.empty()) return {1, 1};
  if (s.size() == 1) return {1, s[0]};
  return {s[0], numel(s) / s[0]};
}

}  // namespace detail

template <std::floating_point T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_rank2("matmul", a.shape());
  detail::require_rank2("matmul", b.shape());
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul inner dimensions disagree: " + to_string(a.shape()) + " by " +
                         to_string(b.shape()));
  }
  std::vector<T> out(n * m, T{0});
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), n, k, m);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  return BasicTensor<T>::make_result(
      "matmul", {n, m}, std::move(out), {a, b}, [pa, pb, n, k, m](std::span<const T> g, auto sinks) {
        if (sinks[0]) detail::gemm_nt(g.data(), pb, sinks[0]->data(), n, m, k);  // g * b^T
        if (sinks[1]) detail::gemm_tn(pa, g.data(), sinks[1]->data(), n, k, m);  // a^T * g
      });
}

template <std::floating_point T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  detail::require_rank2("transpose", a.shape());
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return BasicTensor<T>::make_result("transpose", {c, r}, std::move(out), {a},
                                     [r, c](std::span<const T> g, auto sinks) {
                                       auto& s = *sinks[0];
                                       for (std::size_t i = 0; i < r; ++i)
                                         for (std::size_t j = 0; j < c; ++j) s[i * c + j] += g[j * r + i];
                                     });
}

/// Affine map x * W^T + b with W stored [out x in], as linear layers do.
template <std::floating_point T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  detail::require_rank2("linear", x.shape());
  detail::require_rank2("linear", weight.shape());
  const std::size_t n = x.dim(0), in = x.dim(1), out_w = weight.dim(0);
  if (weight.dim(1) != in) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " does not match weight " +
                         to_string(weight.shape()));
  }
  if (bias.shape() != Shape{out_w}) {
    throw DimensionError("linear: bias " + to_string(bias.shape()) + " does not match weight " +
                         to_string(weight.shape()));
  }
  std::vector<T> out(n * out_w);
  auto pb = bias.data();
  for (std::size_t i = 0; i < n; ++i) std::copy(pb.begin(), pb.end(), out.begin() + i * out_w);
  detail::gemm_nt(x.data().data(), weight.data().data(), out.data(), n, in, out_w);
  const T* px = x.data().data();
  const T* pw = weight.data().data();
  return BasicTensor<T>::make_result(
      "linear", {n, out_w}, std::move(out), {x, weight, bias},
      [px, pw, n, in, out_w](std::span<const T> g, auto sinks) {
        if (sinks[0]) detail::gemm_nn(g.data(), pw, sinks[0]->data(), n, out_w, in);  // g * W
        if (sinks[1]) detail::gemm_tn(g.data(), px, sinks[1]->data(), n, out_w, in);  // g^T * x
        if (sinks[2]) {
          auto& s = *sinks[2];
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < out_w; ++j) s[j] += g[i * out_w + j];
        }
      });
}

namespace detail {

// Elementwise binary op with optional broadcast of a rank-1 rhs over rows.
template <std::floating_point T>
BasicTensor<T> add_like(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b, T sign) {
  const bool same = a.shape() == b.shape();
  const bool bcast = !same && a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1);
  if (!same && !bcast) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  auto pa = a.data();
  auto pb = b.data();
  const std::size_t width = b.numel();
  std::vector<T> out(pa.size());
  for (std::size_t i = 0; i < pa.size(); ++i) out[i] = pa[i] + sign * pb[i % width];
  return BasicTensor<T>::make_result(op, a.shape(), std::move(out), {a, b},
                                     [sign, width](std::span<const T> g, auto sinks) {
                                       if (sinks[0]) {
                                         auto& s = *sinks[0];
                                         for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
                                       }
                                       if (sinks[1]) {
                                         auto& s = *sinks[1];
                                         for (std::size_t i = 0; i < g.size(); ++i) s[i % width] += sign * g[i];
                                       }
                                     });
}

}  // namespace detail

template <std::floating_point T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::add_like("add", a, b, T{1});
}

template <std::floating_point T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::add_like("sub", a, b, T{-1});
}

/// Elementwise product of equally shaped tensors.
template <std::floating_point T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  auto pa = a.data();
  auto pb = b.data();
  std::vector<T> out(pa.size());
  for (std::size_t i = 0; i < pa.size(); ++i) out[i] = pa[i] * pb[i];
  const T* ra = pa.data();
  const T* rb = pb.data();
  return BasicTensor<T>::make_result("mul", a.shape(), std::move(out), {a, b},
                                     [ra, rb](std::span<const T> g, auto sinks) {
                                       if (sinks[0])
                                         for (std::size_t i = 0; i < g.size(); ++i) (*sinks[0])[i] += g[i] * rb[i];
                                       if (sinks[1])
                                         for (std::size_t i = 0; i < g.size(); ++i) (*sinks[1])[i] += g[i] * ra[i];
                                     });
}

template <std::floating_point T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  auto pa = a.data();
  std::vector<T> out(pa.size());
  for (std::size_t i = 0; i < pa.size(); ++i) out[i] = factor * pa[i];
  return BasicTensor<T>::make_result("scale", a.shape(), std::move(out), {a},
                                     [factor](std::span<const T> g, auto sinks) {
                                       auto& s = *sinks[0];
                                       for (std::size_t i = 0; i < g.size(); ++i) s[i] += factor * g[i];
                                     });
}

template <std::floating_point T>
BasicTensor<T> square(const BasicTensor<T>& a) {
  return mul(a, a);
}

template <std::floating_point T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T acc{0};
  for (T v : a.data()) acc += v;
  return BasicTensor<T>::make_result("sum", {}, {acc}, {a}, [](std::span<const T> g, auto sinks) {
    for (auto& v : *sinks[0]) v += g[0];
  });
}

template <std::floating_point T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  const std::size_t count = a.numel();
  if (count == 0) throw DimensionError("mean of an empty tensor");
  T acc{0};
  for (T v : a.data()) acc += v;
  const T inv = T{1} / static_cast<T>(count);
  return BasicTensor<T>::make_result("mean", {}, {acc * inv}, {a}, [inv](std::span<const T> g, auto sinks) {
    for (auto& v : *sinks[0]) v += g[0] * inv;
  });
}

/// max(0, x); the subgradient at 0 is 0.
template <std::floating_point T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  auto pa = a.data();
  std::vector<T> out(pa.size());
  for (std::size_t i = 0; i < pa.size(); ++i) out[i] = pa[i] > T{0} ? pa[i] : T{0};
  if (detail::kink_probe) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      word = (word << 1) | (pa[i] > T{0} ? 1u : 0u);
      if (i % 64 == 63) detail::fold_hash(*detail::kink_probe, word);
    }
    detail::fold_hash(*detail::kink_probe, word);
  }
  const T* ra = pa.data();
  return BasicTensor<T>::make_result("relu", a.shape(), std::move(out), {a}, [ra](std::span<const T> g, auto sinks) {
    auto& s = *sinks[0];
    for (std::size_t i = 0; i < g.size(); ++i)
      if (ra[i] > T{0}) s[i] += g[i];
  });
}

/// Row-wise softmax with max subtraction. Rank-1 input is one row.
template <std::floating_point T>
BasicTensor<T> softmax(const BasicTensor<T>& o) {
  auto [rows, cols] = detail::rows_cols(o.shape());
  if (cols == 0) throw DimensionError("softmax over zero classes");
  auto po = o.data();
  std::vector<T> out(po.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = po.data() + r * cols;
    T* y = out.data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    T z{0};
    for (std::size_t j = 0; j < cols; ++j) z += (y[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < cols; ++j) y[j] /= z;
  }
  // dx = y * (g - <g, y>) per row.
  auto y = std::make_shared<std::vector<T>>(out);
  return BasicTensor<T>::make_result(
      "softmax", o.shape(), std::move(out), {o}, [y, rows = rows, cols = cols](std::span<const T> g, auto sinks) {
        auto& s = *sinks[0];
        for (std::size_t r = 0; r < rows; ++r) {
          const T* yr = y->data() + r * cols;
          const T* gr = g.data() + r * cols;
          T dot{0};
          for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
          for (std::size_t j = 0; j < cols; ++j) s[r * cols + j] += yr[j] * (gr[j] - dot);
        }
      });
}

/// Row-wise o - logsumexp(o).
template <std::floating_point T>
BasicTensor<T> log_softmax(const BasicTensor<T>& o) {
  auto [rows, cols] = detail::rows_cols(o.shape());
  if (cols == 0) throw DimensionError("log_softmax over zero classes");
  auto po = o.data();
  auto probs = std::make_shared<std::vector<T>>(po.size());
  std::vector<T> out(po.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = po.data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    T z{0};
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(in[j] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t j = 0; j < cols; ++j) {
      out[r * cols + j] = in[j] - lse;
      (*probs)[r * cols + j] = std::exp(in[j] - lse);
    }
  }
  return BasicTensor<T>::make_result("log_softmax", o.shape(), std::move(out), {o},
                                     [probs, rows = rows, cols = cols](std::span<const T> g, auto sinks) {
                                       auto& s = *sinks[0];
                                       for (std::size_t r = 0; r < rows; ++r) {
                                         const T* gr = g.data() + r * cols;
                                         T total{0};
                                         for (std::size_t j = 0; j < cols; ++j) total += gr[j];
                                         for (std::size_t j = 0; j < cols; ++j)
                                           s[r * cols + j] += gr[j] - (*probs)[r * cols + j] * total;
                                       }
                                     });
}

/// Batch normalisation over the batch dimension of an [n x h] input with
/// learnable per-column scale and shift. Train mode uses batch statistics and
/// updates the running estimates (unbiased variance); eval mode uses the
/// running estimates.
template <std::floating_point T>
BasicTensor<T> batchnorm1d(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                           BatchNormState<T>& state, Mode mode, T momentum = T(kBatchNormMomentum),
                           T eps = T(kBatchNormEps)) {
  detail::require_rank2("batchnorm1d", x.shape());
  const std::size_t n = x.dim(0), h = x.dim(1);
  if (gamma.shape() != Shape{h} || beta.shape() != Shape{h} || state.running_mean.size() != h ||
      state.running_var.size() != h) {
    throw DimensionError("batchnorm1d: parameters do not match input " + to_string(x.shape()));
  }
  if (mode == Mode::train && n < 2) {
    throw BatchSizeError("batchnorm1d in train mode needs at least 2 rows, got " + std::to_string(n));
  }
  auto px = x.data();
  auto pg = gamma.data();
  auto pb = beta.data();
  std::vector<T> mu(h, T{0}), inv_std(h);
  if (mode == Mode::train) {
    std::vector<T> var(h, T{0});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < h; ++j) mu[j] += px[i * h + j];
    for (std::size_t j = 0; j < h; ++j) mu[j] /= static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < h; ++j) {
        const T d = px[i * h + j] - mu[j];
        var[j] += d * d;
      }
    for (std::size_t j = 0; j < h; ++j) {
      const T biased = var[j] / static_cast<T>(n);
      inv_std[j] = T{1} / std::sqrt(biased + eps);
      state.running_mean[j] = (T{1} - momentum) * state.running_mean[j] + momentum * mu[j];
      state.running_var[j] =
          (T{1} - momentum) * state.running_var[j] + momentum * (var[j] / static_cast<T>(n - 1));
    }
  } else {
    for (std::size_t j = 0; j < h; ++j) {
      mu[j] = state.running_mean[j];
      inv_std[j] = T{1} / std::sqrt(state.running_var[j] + eps);
    }
  }
  auto xhat = std::make_shared<std::vector<T>>(n * h);
  std::vector<T> out(n * h);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < h; ++j) {
      const T v = (px[i * h + j] - mu[j]) * inv_std[j];
      (*xhat)[i * h + j] = v;
      out[i * h + j] = v * pg[j] + pb[j];
    }
  const T* rg = pg.data();
  const bool batch_stats = mode == Mode::train;
  return BasicTensor<T>::make_result(
      "batchnorm1d", {n, h}, std::move(out), {x, gamma, beta},
      [xhat, inv_std = std::move(inv_std), rg, n, h, batch_stats](std::span<const T> g, auto sinks) {
        const auto& xh = *xhat;
        std::vector<T> sum_g(h, T{0}), sum_gx(h, T{0});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < h; ++j) {
            sum_g[j] += g[i * h + j];
            sum_gx[j] += g[i * h + j] * xh[i * h + j];
          }
        if (sinks[1])
          for (std::size_t j = 0; j < h; ++j) (*sinks[1])[j] += sum_gx[j];
        if (sinks[2])
          for (std::size_t j = 0; j < h; ++j) (*sinks[2])[j] += sum_g[j];
        if (sinks[0]) {
          auto& s = *sinks[0];
          const T inv_n = T{1} / static_cast<T>(n);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < h; ++j) {
              const T gy = g[i * h + j];
              if (batch_stats) {
                s[i * h + j] += rg[j] * inv_std[j] * (gy - inv_n * sum_g[j] - inv_n * xh[i * h + j] * sum_gx[j]);
              } else {
                s[i * h + j] += rg[j] * inv_std[j] * gy;
              }
            }
        }
      });
}

/// Row i of a matrix as a [1 x cols] tensor (no graph).
template <std::floating_point T>
BasicTensor<T> row(const BasicTensor<T>& m, std::size_t i) {
  detail::require_rank2("row", m.shape());
  const std::size_t c = m.dim(1);
  auto d = m.data();
  return BasicTensor<T>::from({1, c}, std::vector<T>(d.begin() + i * c, d.begin() + (i + 1) * c));
}

/// Rows selected by index, as a new leaf (no graph).
template <std::floating_point T>
BasicTensor<T> gather_rows(const BasicTensor<T>& m, std::span<const std::size_t> indices) {
  detail::require_rank2("gather_rows", m.shape());
  const std::size_t c = m.dim(1);
  auto d = m.data();
  std::vector<T> out(indices.size() * c);
  for (std::size_t k = 0; k < indices.size(); ++k)
    std::copy_n(d.begin() + indices[k] * c, c, out.begin() + k * c);
  return BasicTensor<T>::from({indices.size(), c}, std::move(out));
}

}  // namespace distill_lab
