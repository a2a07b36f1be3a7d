#pragma once

// Weight binarization: sign quantizer, per-output-channel scaling factors
// (W_c ~ alpha_c * sign(W_c), alpha_c = mean |W_c|), the clipped
// straight-through estimator, and the shifted multi-base decomposition
// W_c ~ sum_i alpha_ic * sign(W_c - u_ic) used by the ablation runner.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "bitseg/bitcore.hpp"
#include "bitseg/error.hpp"
#include "bitseg/tensor.hpp"

namespace bitseg {

// sign(0) = +1.
template <typename T>
T sign(T x) {
  if (!std::isfinite(x)) throw NumericError("sign: non-finite input");
  return x >= T(0) ? T(1) : T(-1);
}

// Clipped STE for sign(): pass the gradient through iff |latent| <= window.
template <typename T>
constexpr T ste_grad(T upstream, T latent, T window = T(1)) noexcept {
  return std::abs(latent) <= window ? upstream : T(0);
}

inline std::size_t fan_in_of(const Shape4& w) { return w[1] * w[2] * w[3]; }

template <typename T>
float channel_scale(const BasicTensor<T>& w, std::size_t c) {
  const std::size_t n = fan_in_of(w.shape());
  if (n == 0) throw DimensionError("channel_scale: empty filter");
  if (c >= w.n()) throw DimensionError("channel_scale: channel out of range");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(static_cast<double>(w[c * n + i]));
  return static_cast<float>(s / static_cast<double>(n));
}

struct ScaledBinaryFilter {
  std::vector<float> alpha;  // one per output channel
  BitTensor bits;            // (C_out, fan_in), row per output channel
  std::size_t fan_in = 0;
};

template <typename T>
ScaledBinaryFilter binarize_filterbank(const BasicTensor<T>& w) {
  const std::size_t co = w.n();
  const std::size_t n = fan_in_of(w.shape());
  if (n == 0) throw DimensionError("binarize_filterbank: empty filter");
  ScaledBinaryFilter f;
  f.fan_in = n;
  f.alpha.resize(co);
  f.bits = BitTensor({co, w.c(), w.h(), w.w()}, co, n);
  for (std::size_t c = 0; c < co; ++c) {
    auto words = f.bits.row_words(c);
    for (std::size_t i = 0; i < n; ++i)
      if (sign(w[c * n + i]) > T(0)) words[i / kWordBits] |= std::uint64_t{1} << (i % kWordBits);
    f.alpha[c] = channel_scale(w, c);
  }
  return f;
}

struct BinaryBase {
  std::vector<float> alpha;  // per output channel
  std::vector<float> shift;  // per output channel (u_i)
  BitTensor bits;            // (C_out, fan_in)
};

struct MultiBaseFilter {
  std::size_t channels = 0;
  std::size_t fan_in = 0;
  std::vector<BinaryBase> bases;

  std::size_t count() const noexcept { return bases.size(); }
};

inline MultiBaseFilter to_multi_base(ScaledBinaryFilter f) {
  MultiBaseFilter m;
  m.channels = f.alpha.size();
  m.fan_in = f.fan_in;
  BinaryBase b;
  b.shift.assign(m.channels, 0.0f);
  b.alpha = std::move(f.alpha);
  b.bits = std::move(f.bits);
  m.bases.push_back(std::move(b));
  return m;
}

namespace detail {

// Solves the SPD-ish system g x = rhs (m x m, row-major) by Gaussian
// elimination with partial pivoting. Returns false when a pivot vanishes.
inline bool solve_dense(std::vector<double> g, std::vector<double> rhs, std::size_t m,
                        std::vector<double>& x) {
  double scale = 0.0;
  for (std::size_t i = 0; i < m; ++i) scale = std::max(scale, std::abs(g[i * m + i]));
  const double tiny = 1e-12 * (scale > 0 ? scale : 1.0);
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < m; ++r)
      if (std::abs(g[r * m + col]) > std::abs(g[piv * m + col])) piv = r;
    if (std::abs(g[piv * m + col]) <= tiny) return false;
    if (piv != col) {
      for (std::size_t k = 0; k < m; ++k) std::swap(g[col * m + k], g[piv * m + k]);
      std::swap(rhs[col], rhs[piv]);
    }
    for (std::size_t r = col + 1; r < m; ++r) {
      const double f = g[r * m + col] / g[col * m + col];
      for (std::size_t k = col; k < m; ++k) g[r * m + k] -= f * g[col * m + k];
      rhs[r] -= f * rhs[col];
    }
  }
  x.assign(m, 0.0);
  for (std::size_t i = m; i-- > 0;) {
    double s = rhs[i];
    for (std::size_t k = i + 1; k < m; ++k) s -= g[i * m + k] * x[k];
    x[i] = s / g[i * m + i];
  }
  return true;
}

}  // namespace detail

// Shift offsets s_i evenly spaced in [-1, 1]; {0} for a single base.
inline std::vector<double> base_offsets(std::size_t m) {
  std::vector<double> s(m, 0.0);
  if (m > 1)
    for (std::size_t i = 0; i < m; ++i)
      s[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(m - 1);
  return s;
}

namespace detail {

struct ChannelFit {
  std::vector<double> offsets;
  std::vector<double> alpha;
  double residual = 0.0;
};

// Least-squares fit of w onto sign(w - (mean + s_i * sd)) for the given offsets.
inline ChannelFit fit_channel(const std::vector<double>& w, double mean, double sd,
                              std::vector<double> offsets) {
  const std::size_t n = w.size(), m = offsets.size();
  std::vector<signed char> signs(m * n);
  for (std::size_t b = 0; b < m; ++b) {
    const double u = mean + offsets[b] * sd;
    for (std::size_t i = 0; i < n; ++i) signs[b * n + i] = w[i] - u >= 0.0 ? 1 : -1;
  }
  std::vector<double> gram(m * m), rhs(m), sol;
  for (std::size_t a = 0; a < m; ++a) {
    double r = 0.0;
    for (std::size_t i = 0; i < n; ++i) r += signs[a * n + i] * w[i];
    rhs[a] = r;
    for (std::size_t b = 0; b < m; ++b) {
      long long g = 0;
      for (std::size_t i = 0; i < n; ++i) g += signs[a * n + i] * signs[b * n + i];
      gram[a * m + b] = static_cast<double>(g);
    }
  }
  if (!solve_dense(gram, rhs, m, sol)) {
    // Coincident bases: ridge-regularize the diagonal.
    auto reg = gram;
    for (std::size_t a = 0; a < m; ++a) reg[a * m + a] += 1e-6 * static_cast<double>(n);
    if (!solve_dense(reg, rhs, m, sol)) sol.assign(m, 0.0);
  }
  ChannelFit fit{std::move(offsets), sol, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    double approx = 0.0;
    for (std::size_t b = 0; b < m; ++b) approx += sol[b] * signs[b * n + i];
    fit.residual += (w[i] - approx) * (w[i] - approx);
  }
  return fit;
}

// Best fit with m bases: the evenly spaced schedule, or the best (m-1)-base
// offset set extended by one unused schedule offset, whichever leaves the
// smaller residual. The nested candidate makes the residual non-increasing in m.
inline ChannelFit best_channel_fit(const std::vector<double>& w, double mean, double sd,
                                   std::size_t m) {
  ChannelFit best = fit_channel(w, mean, sd, base_offsets(m));
  if (m == 1) return best;
  const ChannelFit prev = best_channel_fit(w, mean, sd, m - 1);
  for (double s : base_offsets(m)) {
    if (std::find(prev.offsets.begin(), prev.offsets.end(), s) != prev.offsets.end()) continue;
    auto offsets = prev.offsets;
    offsets.push_back(s);
    std::sort(offsets.begin(), offsets.end());
    ChannelFit cand = fit_channel(w, mean, sd, std::move(offsets));
    if (cand.residual < best.residual) best = std::move(cand);
  }
  return best;
}

}  // namespace detail

template <typename T>
MultiBaseFilter multi_base_decompose(const BasicTensor<T>& w, std::size_t m) {
  if (m < 1) throw ArgumentError("multi_base_decompose: need at least one base");
  const std::size_t co = w.n();
  const std::size_t n = fan_in_of(w.shape());
  if (n == 0) throw DimensionError("multi_base_decompose: empty filter");
  for (std::size_t i = 0; i < w.size(); ++i)
    if (!std::isfinite(w[i])) throw NumericError("multi_base_decompose: non-finite weight");

  MultiBaseFilter out;
  out.channels = co;
  out.fan_in = n;
  out.bases.resize(m);
  for (auto& b : out.bases) {
    b.alpha.assign(co, 0.0f);
    b.shift.assign(co, 0.0f);
    b.bits = BitTensor({co, w.c(), w.h(), w.w()}, co, n);
  }

  std::vector<double> wc(n);
  for (std::size_t c = 0; c < co; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      wc[i] = static_cast<double>(w[c * n + i]);
      mean += wc[i];
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (wc[i] - mean) * (wc[i] - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));

    const auto fit = detail::best_channel_fit(wc, mean, sd, m);
    for (std::size_t b = 0; b < m; ++b) {
      const double u = mean + fit.offsets[b] * sd;
      auto& base = out.bases[b];
      base.shift[c] = static_cast<float>(u);
      base.alpha[c] = static_cast<float>(fit.alpha[b]);
      auto words = base.bits.row_words(c);
      for (std::size_t i = 0; i < n; ++i)
        if (wc[i] - u >= 0.0) words[i / kWordBits] |= std::uint64_t{1} << (i % kWordBits);
    }
  }
  return out;
}

// sum_i alpha_ic * B_ic as a dense tensor of the given filter shape.
template <typename T>
BasicTensor<T> reconstruct(const MultiBaseFilter& f, const Shape4& shape) {
  if (shape[0] != f.channels || fan_in_of(shape) != f.fan_in)
    throw DimensionError("reconstruct: shape " + shape_str(shape) + " does not match filter");
  BasicTensor<T> out(shape);
  for (const auto& b : f.bases)
    for (std::size_t c = 0; c < f.channels; ++c) {
      const auto row = b.bits.row(c);
      const T a = static_cast<T>(b.alpha[c]);
      for (std::size_t i = 0; i < f.fan_in; ++i) out[c * f.fan_in + i] += row.bit(i) ? a : -a;
    }
  return out;
}

template <typename T>
double approximation_residual(const BasicTensor<T>& w, const MultiBaseFilter& f) {
  const auto r = reconstruct<double>(f, w.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = static_cast<double>(w[i]) - r[i];
    s += d * d;
  }
  return s;
}

}  // namespace bitseg
