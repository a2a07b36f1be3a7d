#pragma once

// Non-convolution layers with explicit forward/backward: batch norm, PReLU,
// max pooling, bilinear upsampling, channel concatenation and the 2-class
// softmax cross-entropy. Reductions run in fixed index order with double
// accumulators.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bitseg/error.hpp"
#include "bitseg/tensor.hpp"

namespace bitseg {

// ---------------------------------------------------------------- batch norm

enum class BnMode { kTrain, kInference };

template <typename T>
struct BatchNormOut {
  BasicTensor<T> y;
  std::vector<double> mean;  // statistics actually used for normalization
  std::vector<double> var;
};

namespace detail {

template <typename T>
void check_channel_param(const BasicTensor<T>& p, std::size_t c, const char* what) {
  if (p.size() != c)
    throw DimensionError(std::string(what) + ": expected " + std::to_string(c) +
                         " per-channel values, got " + std::to_string(p.size()));
}

}  // namespace detail

// Batch statistics over (N, H, W); variance is the biased estimate.
template <typename T>
void batch_moments(const BasicTensor<T>& x, std::vector<double>& mean, std::vector<double>& var) {
  const std::size_t c_count = x.c(), hw = x.h() * x.w();
  const double m = static_cast<double>(x.n() * hw);
  mean.assign(c_count, 0.0);
  var.assign(c_count, 0.0);
  for (std::size_t c = 0; c < c_count; ++c) {
    double s = 0.0;
    for (std::size_t n = 0; n < x.n(); ++n) {
      const T* p = x.data().data() + (n * c_count + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) s += static_cast<double>(p[i]);
    }
    const double mu = s / m;
    double v = 0.0;
    for (std::size_t n = 0; n < x.n(); ++n) {
      const T* p = x.data().data() + (n * c_count + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = static_cast<double>(p[i]) - mu;
        v += d * d;
      }
    }
    mean[c] = mu;
    var[c] = v / m;
  }
}

template <typename T>
BatchNormOut<T> batchnorm2d(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                            const BasicTensor<T>& beta, double eps, BnMode mode,
                            std::span<const float> running_mean = {},
                            std::span<const float> running_var = {}) {
  const std::size_t c_count = x.c(), hw = x.h() * x.w();
  if (x.n() == 0 || hw == 0) throw DimensionError("batchnorm2d: empty batch");
  detail::check_channel_param(gamma, c_count, "batchnorm2d gamma");
  detail::check_channel_param(beta, c_count, "batchnorm2d beta");
  BatchNormOut<T> out;
  if (mode == BnMode::kTrain) {
    batch_moments(x, out.mean, out.var);
  } else {
    if (running_mean.size() != c_count || running_var.size() != c_count)
      throw DimensionError("batchnorm2d: running statistics missing for inference mode");
    out.mean.assign(running_mean.begin(), running_mean.end());
    out.var.assign(running_var.begin(), running_var.end());
  }
  out.y = BasicTensor<T>(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < c_count; ++c) {
      const double inv = 1.0 / std::sqrt(out.var[c] + eps);
      const double g = static_cast<double>(gamma[c]), b = static_cast<double>(beta[c]);
      const std::size_t base = (n * c_count + c) * hw;
      for (std::size_t i = 0; i < hw; ++i)
        out.y[base + i] =
            static_cast<T>(g * (static_cast<double>(x[base + i]) - out.mean[c]) * inv + b);
    }
  return out;
}

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> dx, dgamma, dbeta;
};

// `mean`/`var` are the statistics returned by the forward pass.
template <typename T>
BatchNormGrads<T> batchnorm2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                       const std::vector<double>& mean,
                                       const std::vector<double>& var, double eps, BnMode mode,
                                       const BasicTensor<T>& gy) {
  const std::size_t c_count = x.c(), hw = x.h() * x.w();
  if (gy.shape() != x.shape()) throw DimensionError("batchnorm2d backward: upstream shape");
  const double m = static_cast<double>(x.n() * hw);
  BatchNormGrads<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>(gamma.shape()),
                      BasicTensor<T>(gamma.shape())};
  for (std::size_t c = 0; c < c_count; ++c) {
    const double inv = 1.0 / std::sqrt(var[c] + eps);
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t n = 0; n < x.n(); ++n) {
      const std::size_t base = (n * c_count + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double gv = static_cast<double>(gy[base + i]);
        sum_g += gv;
        sum_gx += gv * (static_cast<double>(x[base + i]) - mean[c]) * inv;
      }
    }
    g.dgamma[c] = static_cast<T>(sum_gx);
    g.dbeta[c] = static_cast<T>(sum_g);
    const double gam = static_cast<double>(gamma[c]);
    for (std::size_t n = 0; n < x.n(); ++n) {
      const std::size_t base = (n * c_count + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double gv = static_cast<double>(gy[base + i]);
        if (mode == BnMode::kTrain) {
          const double xhat = (static_cast<double>(x[base + i]) - mean[c]) * inv;
          g.dx[base + i] = static_cast<T>(gam * inv * (gv - sum_g / m - xhat * sum_gx / m));
        } else {
          g.dx[base + i] = static_cast<T>(gam * inv * gv);
        }
      }
    }
  }
  return g;
}

// --------------------------------------------------------------------- PReLU

template <typename T>
BasicTensor<T> prelu(const BasicTensor<T>& x, const BasicTensor<T>& a) {
  detail::check_channel_param(a, x.c(), "prelu slope");
  BasicTensor<T> y(x.shape());
  const std::size_t hw = x.h() * x.w();
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const std::size_t base = (n * x.c() + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T v = x[base + i];
        y[base + i] = v >= T(0) ? v : a[c] * v;
      }
    }
  return y;
}

template <typename T>
struct PreluGrads {
  BasicTensor<T> dx, da;
};

template <typename T>
PreluGrads<T> prelu_backward(const BasicTensor<T>& x, const BasicTensor<T>& a,
                             const BasicTensor<T>& gy) {
  PreluGrads<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>(a.shape())};
  const std::size_t hw = x.h() * x.w();
  std::vector<double> da(x.c(), 0.0);
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const std::size_t base = (n * x.c() + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T v = x[base + i];
        if (v >= T(0)) {
          g.dx[base + i] = gy[base + i];
        } else {
          g.dx[base + i] = a[c] * gy[base + i];
          da[c] += static_cast<double>(gy[base + i]) * static_cast<double>(v);
        }
      }
    }
  for (std::size_t c = 0; c < x.c(); ++c) g.da[c] = static_cast<T>(da[c]);
  return g;
}

// ---------------------------------------------------------------- max pooling

template <typename T>
struct PoolOut {
  BasicTensor<T> y;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

// Ties route to the first maximal element in row-major window order.
template <typename T>
PoolOut<T> maxpool2d(const BasicTensor<T>& x, std::size_t k = 2, std::size_t s = 2) {
  if (k == 0 || s == 0 || x.h() < k || x.w() < k)
    throw DimensionError("maxpool2d: window larger than input");
  const std::size_t ho = (x.h() - k) / s + 1, wo = (x.w() - k) / s + 1;
  PoolOut<T> out{BasicTensor<T>({x.n(), x.c(), ho, wo}), {}};
  out.argmax.resize(out.y.size());
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          std::size_t best = x.index(n, c, oy * s, ox * s);
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::size_t idx = x.index(n, c, oy * s + ky, ox * s + kx);
              if (x[idx] > x[best]) best = idx;
            }
          const std::size_t o = out.y.index(n, c, oy, ox);
          out.y[o] = x[best];
          out.argmax[o] = best;
        }
  return out;
}

template <typename T>
BasicTensor<T> maxpool2d_backward(const Shape4& x_shape, const std::vector<std::size_t>& argmax,
                                  const BasicTensor<T>& gy) {
  BasicTensor<T> dx(x_shape);
  for (std::size_t i = 0; i < gy.size(); ++i) dx[argmax[i]] += gy[i];
  return dx;
}

// ------------------------------------------------------- bilinear upsampling

namespace detail {

struct LerpTap {
  std::size_t i0, i1;
  double t;  // weight of i1
};

// align_corners = false: src = (dst + 0.5) / factor - 0.5, clamped at 0.
inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t factor) {
  std::vector<LerpTap> taps(in * factor);
  for (std::size_t d = 0; d < taps.size(); ++d) {
    double src = (static_cast<double>(d) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0) src = 0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = i0 + 1 < in ? i0 + 1 : in - 1;
    taps[d] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace detail

template <typename T>
BasicTensor<T> bilinear_upsample(const BasicTensor<T>& x, std::size_t factor) {
  if (factor == 0) throw ArgumentError("bilinear_upsample: factor must be >= 1");
  if (factor == 1) return x;
  const auto ty = detail::lerp_taps(x.h(), factor), tx = detail::lerp_taps(x.w(), factor);
  BasicTensor<T> y({x.n(), x.c(), x.h() * factor, x.w() * factor});
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (std::size_t oy = 0; oy < y.h(); ++oy) {
        const auto& a = ty[oy];
        for (std::size_t ox = 0; ox < y.w(); ++ox) {
          const auto& b = tx[ox];
          const double v00 = x.at(n, c, a.i0, b.i0), v01 = x.at(n, c, a.i0, b.i1);
          const double v10 = x.at(n, c, a.i1, b.i0), v11 = x.at(n, c, a.i1, b.i1);
          const double top = v00 + (v01 - v00) * b.t, bot = v10 + (v11 - v10) * b.t;
          y.at(n, c, oy, ox) = static_cast<T>(top + (bot - top) * a.t);
        }
      }
  return y;
}

template <typename T>
BasicTensor<T> bilinear_upsample_backward(const Shape4& x_shape, std::size_t factor,
                                          const BasicTensor<T>& gy) {
  if (factor == 1) return gy;
  const auto ty = detail::lerp_taps(x_shape[2], factor), tx = detail::lerp_taps(x_shape[3], factor);
  BasicTensor<double> acc(x_shape);
  for (std::size_t n = 0; n < gy.n(); ++n)
    for (std::size_t c = 0; c < gy.c(); ++c)
      for (std::size_t oy = 0; oy < gy.h(); ++oy) {
        const auto& a = ty[oy];
        for (std::size_t ox = 0; ox < gy.w(); ++ox) {
          const auto& b = tx[ox];
          const double g = gy.at(n, c, oy, ox);
          acc.at(n, c, a.i0, b.i0) += g * (1 - a.t) * (1 - b.t);
          acc.at(n, c, a.i0, b.i1) += g * (1 - a.t) * b.t;
          acc.at(n, c, a.i1, b.i0) += g * a.t * (1 - b.t);
          acc.at(n, c, a.i1, b.i1) += g * a.t * b.t;
        }
      }
  return acc.template cast<T>();
}

// ------------------------------------------------------------- concatenation

// An empty second operand (zero channels or default-constructed) returns `a`.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (b.empty()) return a;
  if (a.empty()) return b;
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw DimensionError("concat_channels: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  BasicTensor<T> y({a.n(), a.c() + b.c(), a.h(), a.w()});
  const std::size_t sa = a.c() * a.h() * a.w();
  for (std::size_t n = 0; n < a.n(); ++n) {
    std::copy(a.sample(n).begin(), a.sample(n).end(), y.sample(n).begin());
    std::copy(b.sample(n).begin(), b.sample(n).end(), y.sample(n).begin() + sa);
  }
  return y;
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> concat_channels_backward(std::size_t a_channels,
                                                                   const BasicTensor<T>& gy) {
  const std::size_t b_channels = gy.c() - a_channels;
  BasicTensor<T> ga({gy.n(), a_channels, gy.h(), gy.w()});
  BasicTensor<T> gb({gy.n(), b_channels, gy.h(), gy.w()});
  const std::size_t sa = a_channels * gy.h() * gy.w();
  for (std::size_t n = 0; n < gy.n(); ++n) {
    const auto src = gy.sample(n);
    std::copy(src.begin(), src.begin() + sa, ga.sample(n).begin());
    std::copy(src.begin() + sa, src.end(), gb.sample(n).begin());
  }
  return {std::move(ga), std::move(gb)};
}

// ------------------------------------------------------ softmax cross-entropy

template <typename T>
struct LossOut {
  double loss = 0.0;
  BasicTensor<T> grad;  // d loss / d logits
};

// Mean per-pixel cross-entropy of 2-class logits (N,2,H,W) against a {0,1}
// mask (N*H*W, row-major).
template <typename T>
LossOut<T> softmax_ce_loss(const BasicTensor<T>& logits, std::span<const std::uint8_t> target) {
  if (logits.c() != 2) throw DimensionError("softmax_ce_loss: expected 2 class channels");
  const std::size_t hw = logits.h() * logits.w();
  if (target.size() != logits.n() * hw)
    throw DimensionError("softmax_ce_loss: target has " + std::to_string(target.size()) +
                         " pixels, logits have " + std::to_string(logits.n() * hw));
  const double m = static_cast<double>(logits.n() * hw);
  LossOut<T> out{0.0, BasicTensor<T>(logits.shape())};
  double total = 0.0;
  for (std::size_t n = 0; n < logits.n(); ++n)
    for (std::size_t i = 0; i < hw; ++i) {
      const std::uint8_t t = target[n * hw + i];
      if (t > 1) throw ArgumentError("softmax_ce_loss: target values must be 0 or 1");
      const std::size_t i_bg = (n * 2) * hw + i, i_road = (n * 2 + 1) * hw + i;
      const double z_true = t ? logits[i_road] : logits[i_bg];
      const double z_other = t ? logits[i_bg] : logits[i_road];
      const double d = z_other - z_true;
      // softplus(d) = -log softmax_true
      total += std::max(d, 0.0) + std::log1p(std::exp(-std::abs(d)));
      const double p_other = d >= 0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
      const T g_other = static_cast<T>(p_other / m), g_true = static_cast<T>(-p_other / m);
      out.grad[t ? i_road : i_bg] = g_true;
      out.grad[t ? i_bg : i_road] = g_other;
    }
  out.loss = total / m;
  return out;
}

}  // namespace bitseg
