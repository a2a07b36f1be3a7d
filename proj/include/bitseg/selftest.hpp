#pragma once

// Built-in consistency checks run by `bitseg selftest`: the XNOR/popcount
// convolution against float convolution of the signs, popcount dot products
// against +-1 sums, and gradient checks over every differentiable op.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bitseg/binarize.hpp"
#include "bitseg/bitcore.hpp"
#include "bitseg/conv.hpp"
#include "bitseg/graph.hpp"
#include "bitseg/rng.hpp"

namespace bitseg {

struct SelftestResult {
  std::string name;
  bool passed = true;
  std::string detail;
};

namespace detail {

template <typename T>
BasicTensor<T> uniform_tensor(SplitMix64& rng, const Shape4& s, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(s);
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace detail

inline SelftestResult selftest_kernel(std::size_t configs = 300, std::uint64_t seed = 11) {
  SelftestResult r{"binary conv == float conv of signs", true, ""};
  SplitMix64 rng(seed);
  const std::size_t ks[] = {1, 3, 5};
  std::size_t ran = 0;
  while (ran < configs) {
    ConvSpec s;
    s.in_channels = 1 + rng.below(5);
    s.out_channels = 1 + rng.below(4);
    s.kh = s.kw = ks[rng.below(3)];
    s.stride = 1 + rng.below(2);
    s.dilation = std::size_t{1} << rng.below(3);
    s.padding = rng.below(3);
    s.binary = true;
    const std::size_t h = 1 + rng.below(16), w = 1 + rng.below(16);
    const std::size_t span = s.dilation * (s.kh - 1) + 1;
    if (h + 2 * s.padding < span || w + 2 * s.padding < span) continue;
    ++ran;
    const auto x = detail::uniform_tensor<float>(rng, {1 + rng.below(2), s.in_channels, h, w});
    const auto wt = detail::uniform_tensor<float>(rng, s.weight_shape());
    const auto f = binarize_filterbank(wt);
    const auto core = conv2d_binary_core(x, f.bits, s);
    ConvSpec fs = s;
    fs.binary = false;
    const auto ref = conv2d_float(sign_tensor(x), sign_tensor(wt), fs);
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (static_cast<float>(core[i]) != ref[i]) {
        r.passed = false;
        r.detail = "mismatch at config " + std::to_string(ran) + ", element " + std::to_string(i);
        return r;
      }
  }
  r.detail = std::to_string(configs) + " configurations";
  return r;
}

inline SelftestResult selftest_popcount(std::uint64_t seed = 12) {
  SelftestResult r{"xnor_dot == +-1 dot product", true, ""};
  SplitMix64 rng(seed);
  for (std::size_t n = 1; n <= 300; ++n)
    for (int rep = 0; rep < 8; ++rep) {
      std::vector<float> a(n), b(n);
      auto valid = std::make_unique<bool[]>(n);
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = rng.next() & 1 ? 1.0f : -1.0f;
        b[i] = rng.next() & 1 ? 1.0f : -1.0f;
        valid[i] = (rng.next() & 1) != 0;
      }
      std::int64_t full = 0, masked = 0;
      for (std::size_t i = 0; i < n; ++i) {
        full += static_cast<std::int64_t>(a[i] * b[i]);
        if (valid[i]) masked += static_cast<std::int64_t>(a[i] * b[i]);
      }
      const auto pa = pack_signs(a), pb = pack_signs(b);
      const auto m = ValidMask::from_bools(std::span<const bool>(valid.get(), n));
      if (xnor_dot(pa.row(0), pb.row(0)) != full ||
          masked_xnor_dot(pa.row(0), pb.row(0), m) != masked) {
        r.passed = false;
        r.detail = "length " + std::to_string(n);
        return r;
      }
    }
  r.detail = "lengths 1..300";
  return r;
}

inline SelftestResult selftest_gradients(std::uint64_t seed = 13) {
  using D = BasicTensor<double>;
  using G = Graph<double>;
  SelftestResult r{"gradient checks", true, ""};
  SplitMix64 rng(seed);
  const D w1 = detail::uniform_tensor<double>(rng, {4, 3, 3, 3});
  const D wb = detail::uniform_tensor<double>(rng, {4, 4, 3, 3}, -1.2, 1.2);
  const D w2 = detail::uniform_tensor<double>(rng, {2, 8, 1, 1});
  const D gamma = detail::uniform_tensor<double>(rng, {1, 4, 1, 1}, 0.5, 1.5);
  const D beta = detail::uniform_tensor<double>(rng, {1, 4, 1, 1});
  const D slope({1, 4, 1, 1}, 0.2);
  const D skip = detail::uniform_tensor<double>(rng, {2, 4, 8, 8});
  std::vector<std::uint8_t> target(2 * 4 * 4);
  for (auto& t : target) t = rng.next() & 1U;

  auto float_chain = [&](G& g, G::Var x) {
    auto h = g.conv(x, g.input(w1, true), ConvSpec{3, 4, 3, 3, 2, 1, 1, false});
    h = g.batchnorm(h, g.input(gamma, true), g.input(beta, true), BnMode::kTrain, nullptr);
    h = g.prelu(h, g.input(slope, true));
    h = g.upsample(h, 2);
    h = g.concat(h, g.input(skip, true));
    h = g.conv(h, g.input(w2, true), ConvSpec{8, 2, 1, 1, 1, 1, 0, false});
    return g.ce_loss(g.maxpool(h), target);
  };
  auto binary = [&](G& g, G::Var x) {
    return g.binary_conv(x, g.input(wb, true), ConvSpec{4, 4, 3, 3, 1, 2, 2, true}, 2);
  };
  const auto a = grad_check<double>(float_chain, detail::uniform_tensor<double>(rng, {2, 3, 8, 8}), 1e-3);
  const auto b = grad_check<double>(binary, detail::uniform_tensor<double>(rng, {2, 4, 7, 7}, -1.5, 1.5),
                                    1e-3, 1e-6);
  if (!a.passed()) {
    r.passed = false;
    r.detail = "failing op: " + a.first_failure();
  } else if (!b.passed()) {
    r.passed = false;
    r.detail = "failing op: " + b.first_failure();
  } else {
    r.detail = std::to_string(a.ops.size() + b.ops.size()) + " ops";
  }
  return r;
}

inline std::vector<SelftestResult> run_selftest() {
  return {selftest_kernel(), selftest_popcount(), selftest_gradients()};
}

}  // namespace bitseg
