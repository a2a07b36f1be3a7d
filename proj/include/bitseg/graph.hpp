#pragma once

// Tape-based reverse-mode autodiff over the layer functions. Ops execute
// eagerly and append a node to the tape; backward() walks the tape in exact
// reverse order of recording. Every node keeps a pure forward closure so the
// gradient checker can re-evaluate it under perturbation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "bitseg/binarize.hpp"
#include "bitseg/conv.hpp"
#include "bitseg/error.hpp"
#include "bitseg/layers.hpp"
#include "bitseg/rng.hpp"
#include "bitseg/tensor.hpp"

namespace bitseg {

// Running statistics owned by a model's batch-norm layer.
struct BnRunning {
  std::vector<float> mean;
  std::vector<float> var;
  double momentum = 0.1;
  double eps = 1e-5;
};

template <typename T>
class Graph {
 public:
  using Tensor = BasicTensor<T>;
  using Inputs = std::vector<const Tensor*>;
  using ForwardFn = std::function<Tensor(const Inputs&)>;
  // Returns one gradient per input; an empty tensor means "no gradient".
  using BackwardFn = std::function<std::vector<Tensor>(const Inputs&, const Tensor& gy)>;

  struct Var {
    std::size_t id = 0;
  };

  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    std::size_t output = 0;
    ForwardFn forward;
    BackwardFn backward;
    // Set for nodes on a sign()/STE path: the analytic formula the backward
    // must reproduce, used instead of finite differences.
    BackwardFn ste_reference;
  };

  Var input(Tensor v, bool requires_grad = false) {
    slots_.push_back({std::move(v), {}, nullptr, requires_grad});
    return {slots_.size() - 1};
  }

  // Leaf bound to external parameter storage; backward() accumulates into *grad.
  Var param(const Tensor& value, Tensor* grad) {
    slots_.push_back({value, {}, grad, true});
    return {slots_.size() - 1};
  }

  const Tensor& value(Var v) const { return slots_.at(v.id).value; }
  const Tensor& grad(Var v) const { return slots_.at(v.id).grad; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const Tensor& slot_value(std::size_t id) const { return slots_.at(id).value; }

  // Records an op with caller-supplied closures.
  Var custom(std::string op, std::vector<Var> in, ForwardFn fwd, BackwardFn bwd,
             BackwardFn ste_reference = {}) {
    Inputs ptrs;
    std::vector<std::size_t> ids;
    bool needs = false;
    for (auto v : in) {
      ptrs.push_back(&slots_.at(v.id).value);
      ids.push_back(v.id);
      needs = needs || slots_[v.id].requires_grad;
    }
    Tensor out = fwd(ptrs);
    slots_.push_back({std::move(out), {}, nullptr, needs});
    nodes_.push_back({std::move(op), std::move(ids), slots_.size() - 1, std::move(fwd),
                      std::move(bwd), std::move(ste_reference)});
    return {slots_.size() - 1};
  }

  Var conv(Var x, Var w, const ConvSpec& spec) {
    return custom(
        "conv2d_float", {x, w},
        [spec](const Inputs& in) { return conv2d_float(*in[0], *in[1], spec); },
        [spec](const Inputs& in, const Tensor& gy) {
          auto g = conv2d_float_backward(*in[0], *in[1], spec, gy);
          return std::vector<Tensor>{std::move(g.dx), std::move(g.dw)};
        });
  }

  // Binary convolution with `bases` scaled binary bases recomputed from the
  // latent weights. When `frozen` is given its packed weights are used as-is
  // (inference models loaded from disk).
  Var binary_conv(Var x, Var w, const ConvSpec& spec, std::size_t bases = 1,
                  bool activation_scaling = false,
                  std::shared_ptr<const MultiBaseFilter> frozen = nullptr) {
    auto filter_of = [bases, frozen](const Tensor& latent) {
      if (frozen) return *frozen;
      return bases == 1 ? to_multi_base(binarize_filterbank(latent))
                        : multi_base_decompose(latent, bases);
    };
    return custom(
        "conv2d_binary", {x, w},
        [spec, activation_scaling, filter_of](const Inputs& in) {
          return conv2d_binary(*in[0], filter_of(*in[1]), spec, activation_scaling);
        },
        [spec, activation_scaling, filter_of](const Inputs& in, const Tensor& gy) {
          auto g = conv2d_binary_backward(*in[0], *in[1], filter_of(*in[1]), spec, gy,
                                          activation_scaling);
          return std::vector<Tensor>{std::move(g.dx), std::move(g.dw)};
        },
        [spec, activation_scaling, filter_of](const Inputs& in, const Tensor& gy) {
          return binary_conv_reference_grads(*in[0], *in[1], filter_of(*in[1]), spec, gy,
                                             activation_scaling);
        });
  }

  // Train mode normalizes by batch statistics and, when `running` is given,
  // folds them into the running averages. Inference mode reads `running`.
  Var batchnorm(Var x, Var gamma, Var beta, BnMode mode, BnRunning* running) {
    Var out = batchnorm_impl(x, gamma, beta, mode, running);
    if (mode == BnMode::kTrain && running) {
      std::vector<double> mean, var;
      batch_moments(value(x), mean, var);
      const double m = running->momentum;
      for (std::size_t c = 0; c < mean.size(); ++c) {
        running->mean[c] = static_cast<float>((1 - m) * running->mean[c] + m * mean[c]);
        running->var[c] = static_cast<float>((1 - m) * running->var[c] + m * var[c]);
      }
    }
    return out;
  }

  // Inference mode; reads the running statistics only.
  Var batchnorm(Var x, Var gamma, Var beta, const BnRunning& running) {
    return batchnorm_impl(x, gamma, beta, BnMode::kInference, &running);
  }

 private:
  Var batchnorm_impl(Var x, Var gamma, Var beta, BnMode mode, const BnRunning* running) {
    const double eps = running ? running->eps : 1e-5;
    std::vector<float> rm, rv;
    if (mode == BnMode::kInference) {
      if (!running) throw ArgumentError("batchnorm: inference mode needs running statistics");
      rm = running->mean;
      rv = running->var;
    }
    auto fwd = [eps, mode, rm, rv](const Inputs& in) {
      return batchnorm2d(*in[0], *in[1], *in[2], eps, mode, rm, rv).y;
    };
    auto bwd = [eps, mode, rm, rv](const Inputs& in, const Tensor& gy) {
      std::vector<double> mean, var;
      if (mode == BnMode::kTrain) {
        batch_moments(*in[0], mean, var);
      } else {
        mean.assign(rm.begin(), rm.end());
        var.assign(rv.begin(), rv.end());
      }
      auto g = batchnorm2d_backward(*in[0], *in[1], mean, var, eps, mode, gy);
      return std::vector<Tensor>{std::move(g.dx), std::move(g.dgamma), std::move(g.dbeta)};
    };
    return custom("batchnorm2d", {x, gamma, beta}, fwd, bwd);
  }

 public:

  Var prelu(Var x, Var a) {
    return custom(
        "prelu", {x, a}, [](const Inputs& in) { return bitseg::prelu(*in[0], *in[1]); },
        [](const Inputs& in, const Tensor& gy) {
          auto g = prelu_backward(*in[0], *in[1], gy);
          return std::vector<Tensor>{std::move(g.dx), std::move(g.da)};
        });
  }

  Var maxpool(Var x, std::size_t k = 2, std::size_t s = 2) {
    return custom(
        "maxpool2d", {x}, [k, s](const Inputs& in) { return maxpool2d(*in[0], k, s).y; },
        [k, s](const Inputs& in, const Tensor& gy) {
          const auto p = maxpool2d(*in[0], k, s);
          return std::vector<Tensor>{maxpool2d_backward(in[0]->shape(), p.argmax, gy)};
        });
  }

  Var upsample(Var x, std::size_t factor) {
    return custom(
        "bilinear_upsample", {x},
        [factor](const Inputs& in) { return bilinear_upsample(*in[0], factor); },
        [factor](const Inputs& in, const Tensor& gy) {
          return std::vector<Tensor>{bilinear_upsample_backward(in[0]->shape(), factor, gy)};
        });
  }

  Var concat(Var a, Var b) {
    return custom(
        "concat_channels", {a, b},
        [](const Inputs& in) { return concat_channels(*in[0], *in[1]); },
        [](const Inputs& in, const Tensor& gy) {
          auto [ga, gb] = concat_channels_backward(in[0]->c(), gy);
          return std::vector<Tensor>{std::move(ga), std::move(gb)};
        });
  }

  // Scalar (1,1,1,1) mean cross-entropy.
  Var ce_loss(Var logits, std::vector<std::uint8_t> target) {
    auto shared = std::make_shared<const std::vector<std::uint8_t>>(std::move(target));
    return custom(
        "softmax_ce_loss", {logits},
        [shared](const Inputs& in) {
          return Tensor({1, 1, 1, 1}, static_cast<T>(softmax_ce_loss(*in[0], *shared).loss));
        },
        [shared](const Inputs& in, const Tensor& gy) {
          auto g = softmax_ce_loss(*in[0], *shared).grad;
          for (auto& v : g.vec()) v *= gy[0];
          return std::vector<Tensor>{std::move(g)};
        });
  }

  // Reverse sweep seeded with d out / d out = `seed` (ones when omitted).
  // Returns node indices in visit order.
  std::vector<std::size_t> backward(Var out, Tensor seed = {}) {
    if (seed.empty()) seed = Tensor(value(out).shape(), T(1));
    if (seed.shape() != value(out).shape()) throw DimensionError("backward: seed shape");
    slots_[out.id].grad = std::move(seed);
    std::vector<std::size_t> visited;
    for (std::size_t k = nodes_.size(); k-- > 0;) {
      const Node& node = nodes_[k];
      const Tensor& gy = slots_[node.output].grad;
      if (gy.empty()) continue;
      visited.push_back(k);
      Inputs ptrs;
      for (auto id : node.inputs) ptrs.push_back(&slots_[id].value);
      auto grads = node.backward(ptrs, gy);
      for (std::size_t i = 0; i < node.inputs.size() && i < grads.size(); ++i) {
        auto& slot = slots_[node.inputs[i]];
        if (!slot.requires_grad || grads[i].empty()) continue;
        if (slot.grad.empty())
          slot.grad = std::move(grads[i]);
        else
          add_into(slot.grad, grads[i]);
      }
    }
    for (auto& slot : slots_)
      if (slot.external_grad && !slot.grad.empty()) {
        if (slot.external_grad->empty()) *slot.external_grad = Tensor(slot.value.shape());
        add_into(*slot.external_grad, slot.grad);
      }
    return visited;
  }

  // Independent brute-force form of the binary-convolution backward:
  // dq[o,c,ky,kx] = sum gy * sign(x_tap), dxs[tap] = sum gy * q,
  // dW = alpha-weighted STE of dq, dx = STE of dxs.
  static std::vector<Tensor> binary_conv_reference_grads(const Tensor& x, const Tensor& w,
                                                         const MultiBaseFilter& f,
                                                         const ConvSpec& s, const Tensor& gy,
                                                         bool activation_scaling) {
    const std::size_t ho = s.out_h(x.h()), wo = s.out_w(x.w()), n = s.fan_in();
    Tensor scale;
    if (activation_scaling) scale = activation_scale(x, s);
    std::vector<double> q(s.out_channels * n, 0.0);
    for (const auto& b : f.bases)
      for (std::size_t o = 0; o < s.out_channels; ++o)
        for (std::size_t i = 0; i < n; ++i)
          q[o * n + i] += b.bits.bit(o, i) ? b.alpha[o] : -static_cast<double>(b.alpha[o]);
    std::vector<double> dq(q.size(), 0.0), dxs(x.size(), 0.0);
    for (std::size_t b = 0; b < x.n(); ++b)
      for (std::size_t o = 0; o < s.out_channels; ++o)
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox) {
            double g = gy.at(b, o, oy, ox);
            if (activation_scaling) g *= scale.at(b, 0, oy, ox);
            for (std::size_t c = 0; c < s.in_channels; ++c)
              for (std::size_t ky = 0; ky < s.kh; ++ky)
                for (std::size_t kx = 0; kx < s.kw; ++kx) {
                  const long iy = static_cast<long>(oy * s.stride + ky * s.dilation) -
                                  static_cast<long>(s.padding);
                  const long ix = static_cast<long>(ox * s.stride + kx * s.dilation) -
                                  static_cast<long>(s.padding);
                  if (iy < 0 || ix < 0 || iy >= static_cast<long>(x.h()) ||
                      ix >= static_cast<long>(x.w()))
                    continue;
                  const std::size_t xi = x.index(b, c, static_cast<std::size_t>(iy),
                                                 static_cast<std::size_t>(ix));
                  const std::size_t wi = (o * s.in_channels + c) * s.kh * s.kw + ky * s.kw + kx;
                  const double xs = x[xi] >= T(0) ? 1.0 : -1.0;
                  dq[wi] += g * xs;
                  dxs[xi] += g * q[wi];
                }
          }
    Tensor dx(x.shape()), dw(w.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
      dx[i] = std::abs(static_cast<double>(x[i])) <= 1.0 ? static_cast<T>(dxs[i]) : T(0);
    for (std::size_t o = 0; o < s.out_channels; ++o)
      for (std::size_t i = 0; i < n; ++i) {
        double factor = 0.0;
        for (const auto& b : f.bases)
          if (std::abs(static_cast<double>(w[o * n + i]) - b.shift[o]) <= 1.0) factor += b.alpha[o];
        dw[o * n + i] = static_cast<T>(dq[o * n + i] * factor);
      }
    return {std::move(dx), std::move(dw)};
  }

 private:
  struct Slot {
    Tensor value;
    Tensor grad;
    Tensor* external_grad;
    bool requires_grad;
  };

  std::vector<Slot> slots_;
  std::vector<Node> nodes_;
};

// ------------------------------------------------------------ gradient check

struct OpCheck {
  std::string op;
  std::size_t node = 0;  // tape index, or SIZE_MAX for the end-to-end check
  double max_error = 0.0;
  bool ste = false;
  bool passed = true;
};

struct GradCheckReport {
  double tolerance = 0.0;
  std::vector<OpCheck> ops;

  bool passed() const {
    for (const auto& o : ops)
      if (!o.passed) return false;
    return true;
  }
  // Name of the first failing op, empty when everything passed.
  std::string first_failure() const {
    for (const auto& o : ops)
      if (!o.passed) return o.op;
    return {};
  }
};

namespace detail {

inline double rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace detail

// Checks every recorded node of the graph produced by `build`. Differentiable
// nodes are compared against central differences of their own forward
// closure (projected on a random upstream); STE nodes are compared
// elementwise against their analytic reference with `ste_tolerance`. When no
// STE node is present an end-to-end check w.r.t. the input is added.
template <typename T>
GradCheckReport grad_check(
    const std::function<typename Graph<T>::Var(Graph<T>&, typename Graph<T>::Var)>& build,
    const BasicTensor<T>& input, double tolerance, double ste_tolerance = 1e-6,
    std::uint64_t seed = 7, std::size_t samples_per_input = 48, double step = 1e-5) {
  using Tensor = BasicTensor<T>;
  using G = Graph<T>;
  SplitMix64 rng(seed);
  auto random_like = [&rng](const Shape4& s) {
    Tensor t(s);
    for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
    return t;
  };
  auto dot = [](const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
  };

  G g;
  auto in = g.input(input, true);
  auto out = build(g, in);

  GradCheckReport report;
  report.tolerance = tolerance;
  bool any_ste = false;
  for (std::size_t k = 0; k < g.nodes().size(); ++k) {
    const auto& node = g.nodes()[k];
    typename G::Inputs ptrs;
    for (auto id : node.inputs) ptrs.push_back(&g.slot_value(id));
    const Tensor& y = g.slot_value(node.output);
    const Tensor r = random_like(y.shape());
    const auto analytic = node.backward(ptrs, r);

    OpCheck check;
    check.op = node.op;
    check.node = k;
    if (node.ste_reference) {
      any_ste = true;
      check.ste = true;
      const auto expected = node.ste_reference(ptrs, r);
      for (std::size_t i = 0; i < expected.size(); ++i)
        for (std::size_t j = 0; j < expected[i].size(); ++j) {
          const double e = expected[i][j], a = analytic[i][j];
          check.max_error =
              std::max(check.max_error, std::abs(a - e) / std::max(1.0, std::abs(e)));
        }
      check.passed = check.max_error <= ste_tolerance;
      report.ops.push_back(check);
      continue;
    }
    for (std::size_t i = 0; i < ptrs.size() && i < analytic.size(); ++i) {
      if (analytic[i].empty()) continue;
      Tensor probe = *ptrs[i];
      auto inputs = ptrs;
      inputs[i] = &probe;
      const std::size_t count = std::min(samples_per_input, probe.size());
      for (std::size_t t = 0; t < count; ++t) {
        const std::size_t j =
            count == probe.size() ? t : static_cast<std::size_t>(rng.below(probe.size()));
        const T orig = probe[j];
        probe[j] = orig + static_cast<T>(step);
        const double fp = dot(node.forward(inputs), r);
        probe[j] = orig - static_cast<T>(step);
        const double fm = dot(node.forward(inputs), r);
        probe[j] = orig;
        const double numeric = (fp - fm) / (2 * step);
        check.max_error = std::max(check.max_error, detail::rel_error(analytic[i][j], numeric));
      }
    }
    check.passed = check.max_error <= tolerance;
    report.ops.push_back(check);
  }

  if (!any_ste) {
    const Tensor r = random_like(g.value(out).shape());
    g.backward(out, r);
    const Tensor analytic = g.grad(in);
    OpCheck e2e;
    e2e.op = "end_to_end";
    e2e.node = static_cast<std::size_t>(-1);
    Tensor probe = input;
    const std::size_t count = std::min(samples_per_input, probe.size());
    for (std::size_t t = 0; t < count && !analytic.empty(); ++t) {
      const std::size_t j =
          count == probe.size() ? t : static_cast<std::size_t>(rng.below(probe.size()));
      const T orig = probe[j];
      probe[j] = orig + static_cast<T>(step);
      G gp;
      const double fp = dot(gp.value(build(gp, gp.input(probe))), r);
      probe[j] = orig - static_cast<T>(step);
      G gm;
      const double fm = dot(gm.value(build(gm, gm.input(probe))), r);
      probe[j] = orig;
      e2e.max_error = std::max(e2e.max_error, detail::rel_error(analytic[j], (fp - fm) / (2 * step)));
    }
    e2e.passed = e2e.max_error <= tolerance;
    report.ops.push_back(e2e);
  }
  return report;
}

}  // namespace bitseg
