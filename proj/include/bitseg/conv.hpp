#pragma once

// 2-D convolution (cross-correlation, zero padding, stride, dilation):
// a float reference path via im2col + GEMM, and the binary path that packs
// sign(x) windows into bit rows and evaluates them with XNOR/popcount against
// the packed filter bank. Padding is made exact in the binary domain with a
// per-position ValidMask, so the integer core equals the float convolution of
// sign-valued inputs exactly.

#include <cstddef>
#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

#include "bitseg/binarize.hpp"
#include "bitseg/bitcore.hpp"
#include "bitseg/error.hpp"
#include "bitseg/parallel.hpp"
#include "bitseg/tensor.hpp"

namespace bitseg {

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kh = 3;
  std::size_t kw = 3;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;
  bool binary = false;

  std::size_t fan_in() const noexcept { return in_channels * kh * kw; }
  Shape4 weight_shape() const noexcept { return {out_channels, in_channels, kh, kw}; }

  void validate() const {
    if (stride < 1 || dilation < 1 || kh < 1 || kw < 1 || in_channels < 1 || out_channels < 1)
      throw DimensionError("ConvSpec: stride, dilation, kernel and channels must be >= 1");
  }

  std::size_t out_dim(std::size_t in, std::size_t k) const {
    const std::size_t span = dilation * (k - 1) + 1;
    if (in + 2 * padding < span)
      throw DimensionError("ConvSpec: input extent " + std::to_string(in) +
                           " too small for dilated kernel extent " + std::to_string(span));
    return (in + 2 * padding - span) / stride + 1;
  }
  std::size_t out_h(std::size_t h) const { return out_dim(h, kh); }
  std::size_t out_w(std::size_t w) const { return out_dim(w, kw); }
};

namespace detail {

inline void check_conv_shapes(const Shape4& x, const Shape4& w, const ConvSpec& spec) {
  spec.validate();
  if (x[1] != spec.in_channels)
    throw DimensionError("conv: input has " + std::to_string(x[1]) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
  if (w != spec.weight_shape())
    throw DimensionError("conv: weight shape " + shape_str(w) + " vs spec " +
                         shape_str(spec.weight_shape()));
}

// col is (fan_in x P), row k = (c, ky, kx).
template <typename T>
void im2col(std::span<const T> x, std::size_t h, std::size_t w, const ConvSpec& s, std::size_t ho,
            std::size_t wo, std::vector<T>& col) {
  const std::size_t p_count = ho * wo;
  col.assign(s.fan_in() * p_count, T(0));
  std::size_t k = 0;
  for (std::size_t c = 0; c < s.in_channels; ++c)
    for (std::size_t ky = 0; ky < s.kh; ++ky)
      for (std::size_t kx = 0; kx < s.kw; ++kx, ++k) {
        T* dst = col.data() + k * p_count;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky * s.dilation) -
                                    static_cast<std::ptrdiff_t>(s.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* src = x.data() + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * s.stride + kx * s.dilation) -
                static_cast<std::ptrdiff_t>(s.padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w))
              dst[oy * wo + ox] = src[static_cast<std::size_t>(ix)];
          }
        }
      }
}

template <typename T>
void col2im(const std::vector<T>& col, std::size_t h, std::size_t w, const ConvSpec& s,
            std::size_t ho, std::size_t wo, std::span<T> dx) {
  const std::size_t p_count = ho * wo;
  std::size_t k = 0;
  for (std::size_t c = 0; c < s.in_channels; ++c)
    for (std::size_t ky = 0; ky < s.kh; ++ky)
      for (std::size_t kx = 0; kx < s.kw; ++kx, ++k) {
        const T* src = col.data() + k * p_count;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky * s.dilation) -
                                    static_cast<std::ptrdiff_t>(s.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = dx.data() + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * s.stride + kx * s.dilation) -
                static_cast<std::ptrdiff_t>(s.padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w))
              dst[static_cast<std::size_t>(ix)] += src[oy * wo + ox];
          }
        }
      }
}

// C (m x n) += A (m x k) * B (k x n), row-major. Rows of C are processed four
// at a time so each B row is loaded once per block.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* __restrict c0 = c + i * n;
    T* __restrict c1 = c0 + n;
    T* __restrict c2 = c1 + n;
    T* __restrict c3 = c2 + n;
    const T* a0 = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T w0 = a0[kk], w1 = a0[k + kk], w2 = a0[2 * k + kk], w3 = a0[3 * k + kk];
      const T* __restrict br = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T v = br[j];
        c0[j] += w0 * v;
        c1[j] += w1 * v;
        c2[j] += w2 * v;
        c3[j] += w3 * v;
      }
    }
  }
  for (; i < m; ++i) {
    T* __restrict ci = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T wv = a[i * k + kk];
      const T* __restrict br = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += wv * br[j];
    }
  }
}

}  // namespace detail

template <typename T>
BasicTensor<T> conv2d_float(const BasicTensor<T>& x, const BasicTensor<T>& w,
                            const ConvSpec& spec) {
  detail::check_conv_shapes(x.shape(), w.shape(), spec);
  const std::size_t ho = spec.out_h(x.h()), wo = spec.out_w(x.w());
  const std::size_t p_count = ho * wo, n = spec.fan_in(), co = spec.out_channels;
  BasicTensor<T> y({x.n(), co, ho, wo});
  parallel_for(x.n(), [&](std::size_t s) {
    std::vector<T> col;
    detail::im2col(x.sample(s), x.h(), x.w(), spec, ho, wo, col);
    detail::gemm_acc(w.data().data(), col.data(), y.sample(s).data(), co, n, p_count);
  });
  return y;
}

template <typename T>
struct ConvGrads {
  BasicTensor<T> dx;
  BasicTensor<T> dw;
};

template <typename T>
ConvGrads<T> conv2d_float_backward(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                   const ConvSpec& spec, const BasicTensor<T>& gy) {
  detail::check_conv_shapes(x.shape(), w.shape(), spec);
  const std::size_t ho = spec.out_h(x.h()), wo = spec.out_w(x.w());
  const std::size_t p_count = ho * wo, n = spec.fan_in(), co = spec.out_channels;
  if (gy.shape() != Shape4{x.n(), co, ho, wo})
    throw DimensionError("conv backward: upstream shape " + shape_str(gy.shape()));

  ConvGrads<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>(w.shape())};
  std::vector<T> wt(n * co);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t k = 0; k < n; ++k) wt[k * co + o] = w[o * n + k];
  std::vector<std::vector<T>> partial(x.n());
  parallel_for(x.n(), [&](std::size_t s) {
    std::vector<T> col, colt(p_count * n), dcol(n * p_count, T(0));
    detail::im2col(x.sample(s), x.h(), x.w(), spec, ho, wo, col);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t p = 0; p < p_count; ++p) colt[p * n + k] = col[k * p_count + p];
    const T* gys = gy.sample(s).data();
    auto& gw = partial[s];
    gw.assign(co * n, T(0));
    detail::gemm_acc(gys, colt.data(), gw.data(), co, p_count, n);  // dW = gy * col^T
    detail::gemm_acc(wt.data(), gys, dcol.data(), n, co, p_count);  // dcol = W^T * gy
    detail::col2im(dcol, x.h(), x.w(), spec, ho, wo, g.dx.sample(s));
  });
  for (std::size_t s = 0; s < x.n(); ++s)
    for (std::size_t i = 0; i < co * n; ++i) g.dw[i] += partial[s][i];
  return g;
}

// Per-geometry ValidMasks for the binary path. Depend only on
// (H, W, kernel, stride, dilation, padding); shared through a process-wide cache.
struct BinaryConvPlan {
  std::size_t h = 0, w = 0, ho = 0, wo = 0, fan_in = 0;
  std::vector<ValidMask> masks;       // distinct partial masks
  std::vector<std::int32_t> mask_of;  // per output position; -1 = fully inside
};

inline std::shared_ptr<const BinaryConvPlan> make_binary_plan(std::size_t h, std::size_t w,
                                                              const ConvSpec& s) {
  auto plan = std::make_shared<BinaryConvPlan>();
  plan->h = h;
  plan->w = w;
  plan->ho = s.out_h(h);
  plan->wo = s.out_w(w);
  plan->fan_in = s.fan_in();
  plan->mask_of.assign(plan->ho * plan->wo, -1);
  const auto valid = std::make_unique<bool[]>(plan->fan_in);
  for (std::size_t oy = 0; oy < plan->ho; ++oy)
    for (std::size_t ox = 0; ox < plan->wo; ++ox) {
      bool full = true;
      std::size_t k = 0;
      for (std::size_t c = 0; c < s.in_channels; ++c)
        for (std::size_t ky = 0; ky < s.kh; ++ky)
          for (std::size_t kx = 0; kx < s.kw; ++kx, ++k) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * s.stride + ky * s.dilation) -
                static_cast<std::ptrdiff_t>(s.padding);
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * s.stride + kx * s.dilation) -
                static_cast<std::ptrdiff_t>(s.padding);
            const bool in = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                            ix < static_cast<std::ptrdiff_t>(w);
            valid[k] = in;
            full = full && in;
          }
      if (full) continue;
      ValidMask m = ValidMask::from_bools(std::span<const bool>(valid.get(), plan->fan_in));
      std::int32_t idx = -1;
      for (std::size_t i = 0; i < plan->masks.size(); ++i)
        if (std::equal(plan->masks[i].words().begin(), plan->masks[i].words().end(),
                       m.words().begin())) {
          idx = static_cast<std::int32_t>(i);
          break;
        }
      if (idx < 0) {
        idx = static_cast<std::int32_t>(plan->masks.size());
        plan->masks.push_back(std::move(m));
      }
      plan->mask_of[oy * plan->wo + ox] = idx;
    }
  return plan;
}

inline std::shared_ptr<const BinaryConvPlan> binary_plan(std::size_t h, std::size_t w,
                                                         const ConvSpec& s) {
  using Key = std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, std::size_t,
                         std::size_t, std::size_t, std::size_t>;
  static std::mutex mu;
  static std::map<Key, std::shared_ptr<const BinaryConvPlan>> cache;
  const Key key{h, w, s.in_channels, s.kh, s.kw, s.stride, s.dilation, s.padding};
  std::lock_guard lock(mu);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto plan = make_binary_plan(h, w, s);
  cache.emplace(key, plan);
  return plan;
}

namespace detail {

// Packs the im2col bit rows of sign(x) for one sample: (P rows x fan_in bits).
// Out-of-bounds taps are left 0 and excluded by the position's ValidMask.
template <typename T>
BitTensor pack_windows(std::span<const T> x, const BinaryConvPlan& plan, const ConvSpec& s) {
  const std::size_t h = plan.h, w = plan.w, n = plan.fan_in;
  std::vector<std::uint8_t> pos(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) pos[i] = sign(x[i]) > T(0) ? 1 : 0;
  // Tap k = (c, ky, kx) sits at offset off[k] from the window origin.
  std::vector<std::ptrdiff_t> off(n), dy(n), dx(n);
  std::size_t k = 0;
  for (std::size_t c = 0; c < s.in_channels; ++c)
    for (std::size_t ky = 0; ky < s.kh; ++ky)
      for (std::size_t kx = 0; kx < s.kw; ++kx, ++k) {
        dy[k] = static_cast<std::ptrdiff_t>(ky * s.dilation);
        dx[k] = static_cast<std::ptrdiff_t>(kx * s.dilation);
        off[k] = static_cast<std::ptrdiff_t>(c * h * w) + dy[k] * static_cast<std::ptrdiff_t>(w) + dx[k];
      }
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  BitTensor rows = BitTensor::rows_of(plan.ho * plan.wo, n);
  for (std::size_t oy = 0; oy < plan.ho; ++oy)
    for (std::size_t ox = 0; ox < plan.wo; ++ox) {
      const std::size_t p = oy * plan.wo + ox;
      const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * s.stride) -
                                static_cast<std::ptrdiff_t>(s.padding);
      const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * s.stride) -
                                static_cast<std::ptrdiff_t>(s.padding);
      const std::ptrdiff_t origin = y0 * W + x0;
      const bool inside = plan.mask_of[p] < 0;
      auto words = rows.row_words(p);
      for (std::size_t wi = 0; wi < words.size(); ++wi) {
        const std::size_t k0 = wi * kWordBits, k1 = std::min(n, k0 + kWordBits);
        std::uint64_t acc = 0;
        if (inside) {
          for (std::size_t t = k0; t < k1; ++t)
            acc |= std::uint64_t{pos[static_cast<std::size_t>(origin + off[t])]} << (t - k0);
        } else {
          for (std::size_t t = k0; t < k1; ++t) {
            const std::ptrdiff_t iy = y0 + dy[t], ix = x0 + dx[t];
            if (iy >= 0 && iy < H && ix >= 0 && ix < W)
              acc |= std::uint64_t{pos[static_cast<std::size_t>(origin + off[t])]} << (t - k0);
          }
        }
        words[wi] = acc;
      }
    }
  return rows;
}

inline void check_bits(const BitTensor& bits, const ConvSpec& spec) {
  if (bits.rows() != spec.out_channels || bits.row_len() != spec.fan_in())
    throw DimensionError("binary conv: packed filter is " + std::to_string(bits.rows()) + "x" +
                         std::to_string(bits.row_len()) + ", spec needs " +
                         std::to_string(spec.out_channels) + "x" + std::to_string(spec.fan_in()));
}

}  // namespace detail

using IntTensor = BasicTensor<std::int32_t>;

// Integer core: out[n,c,p] = sum over valid taps of sign(x) * B_c.
template <typename T>
IntTensor conv2d_binary_core(const BasicTensor<T>& x, const BitTensor& bits,
                             const ConvSpec& spec) {
  spec.validate();
  if (x.c() != spec.in_channels) throw DimensionError("binary conv: input channel mismatch");
  detail::check_bits(bits, spec);
  const auto plan = binary_plan(x.h(), x.w(), spec);
  const std::size_t p_count = plan->ho * plan->wo, co = spec.out_channels;
  IntTensor out({x.n(), co, plan->ho, plan->wo});
  parallel_for(x.n(), [&](std::size_t s) {
    const BitTensor win = detail::pack_windows(x.sample(s), *plan, spec);
    std::int32_t* dst = out.sample(s).data();
    for (std::size_t p = 0; p < p_count; ++p) {
      const BitRow a = win.row(p);
      const std::int32_t mi = plan->mask_of[p];
      for (std::size_t o = 0; o < co; ++o) {
        const std::int64_t v = mi < 0 ? xnor_dot(a, bits.row(o))
                                      : masked_xnor_dot(a, bits.row(o), plan->masks[mi]);
        dst[o * p_count + p] = static_cast<std::int32_t>(v);
      }
    }
  });
  return out;
}

// Activation scaling map K (N,1,H',W'): channel-mean of |x| averaged over each
// receptive field (zero padding counts as 0).
template <typename T>
BasicTensor<T> activation_scale(const BasicTensor<T>& x, const ConvSpec& spec) {
  BasicTensor<T> a({x.n(), 1, x.h(), x.w()});
  const std::size_t hw = x.h() * x.w();
  for (std::size_t s = 0; s < x.n(); ++s)
    for (std::size_t i = 0; i < hw; ++i) {
      T acc = T(0);
      for (std::size_t c = 0; c < x.c(); ++c) acc += std::abs(x[(s * x.c() + c) * hw + i]);
      a[s * hw + i] = acc / static_cast<T>(x.c());
    }
  ConvSpec box = spec;
  box.in_channels = 1;
  box.out_channels = 1;
  box.binary = false;
  BasicTensor<T> k({1, 1, spec.kh, spec.kw}, T(1) / static_cast<T>(spec.kh * spec.kw));
  return conv2d_float(a, k, box);
}

// Binary convolution forward: sum_i alpha_ic * core_i (times K when enabled).
template <typename T>
BasicTensor<T> conv2d_binary(const BasicTensor<T>& x, const MultiBaseFilter& f,
                             const ConvSpec& spec, bool activation_scaling = false) {
  if (f.bases.empty()) throw DimensionError("binary conv: filter has no bases");
  BasicTensor<T> y;
  for (const auto& b : f.bases) {
    const IntTensor core = conv2d_binary_core(x, b.bits, spec);
    if (y.empty()) y = BasicTensor<T>(core.shape());
    const std::size_t p_count = core.h() * core.w();
    for (std::size_t s = 0; s < core.n(); ++s)
      for (std::size_t o = 0; o < core.c(); ++o) {
        const T a = static_cast<T>(b.alpha[o]);
        const std::size_t base = (s * core.c() + o) * p_count;
        for (std::size_t p = 0; p < p_count; ++p)
          y[base + p] += a * static_cast<T>(core[base + p]);
      }
  }
  if (activation_scaling) {
    const auto k = activation_scale(x, spec);
    const std::size_t p_count = y.h() * y.w();
    for (std::size_t s = 0; s < y.n(); ++s)
      for (std::size_t o = 0; o < y.c(); ++o)
        for (std::size_t p = 0; p < p_count; ++p) y[(s * y.c() + o) * p_count + p] *= k[s * p_count + p];
  }
  return y;
}

// Convenience form binarizing latent weights with a single scaled base.
template <typename T>
BasicTensor<T> conv2d_binary(const BasicTensor<T>& x, const BasicTensor<T>& latent_w,
                             const ConvSpec& spec, bool activation_scaling = false) {
  detail::check_conv_shapes(x.shape(), latent_w.shape(), spec);
  return conv2d_binary(x, to_multi_base(binarize_filterbank(latent_w)), spec, activation_scaling);
}

template <typename T>
BasicTensor<T> sign_tensor(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sign(x[i]);
  return out;
}

// Backward of the binary convolution with alpha (and K) detached:
//   q = sum_i alpha_i B_i is the effective weight and xs = sign(x);
//   dL/dq and dL/dxs come from the float convolution backward;
//   dL/dW = dL/dq * sum_i alpha_ic * 1{|W - u_ic| <= 1};
//   dL/dx = dL/dxs * 1{|x| <= 1}.
template <typename T>
ConvGrads<T> conv2d_binary_backward(const BasicTensor<T>& x, const BasicTensor<T>& latent_w,
                                    const MultiBaseFilter& f, const ConvSpec& spec,
                                    const BasicTensor<T>& gy, bool activation_scaling = false) {
  detail::check_conv_shapes(x.shape(), latent_w.shape(), spec);
  const auto xs = sign_tensor(x);
  const auto q = reconstruct<T>(f, latent_w.shape());
  BasicTensor<T> g = gy;
  if (activation_scaling) {
    const auto k = activation_scale(x, spec);
    const std::size_t p_count = g.h() * g.w();
    for (std::size_t s = 0; s < g.n(); ++s)
      for (std::size_t o = 0; o < g.c(); ++o)
        for (std::size_t p = 0; p < p_count; ++p) g[(s * g.c() + o) * p_count + p] *= k[s * p_count + p];
  }
  auto grads = conv2d_float_backward(xs, q, spec, g);
  for (std::size_t i = 0; i < x.size(); ++i) grads.dx[i] = ste_grad(grads.dx[i], x[i]);
  const std::size_t n = f.fan_in;
  for (std::size_t c = 0; c < f.channels; ++c)
    for (std::size_t i = 0; i < n; ++i) {
      const T wv = latent_w[c * n + i];
      T factor = T(0);
      for (const auto& b : f.bases)
        factor += ste_grad(static_cast<T>(b.alpha[c]), wv - static_cast<T>(b.shift[c]));
      grads.dw[c * n + i] *= factor;
    }
  return grads;
}

}  // namespace bitseg
