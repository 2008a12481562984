#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedforge/tensor.hpp"

namespace fedforge {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<float> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, "add",
                        [a, b](std::span<const float> g) mutable {
                          accumulate_grad(a, g);
                          accumulate_grad(b, g);
                        });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<float> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, "sub",
                        [a, b](std::span<const float> g) mutable {
                          accumulate_grad(a, g);
                          if (b.requires_grad()) {
                            auto gb = b.grad_buffer();
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                          }
                        });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<float> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, "mul",
                        [a, b](std::span<const float> g) mutable {
                          if (a.requires_grad()) {
                            auto ga = a.grad_buffer();
                            const auto bv = b.data();
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
                          }
                          if (b.requires_grad()) {
                            auto gb = b.grad_buffer();
                            const auto av = a.data();
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
                          }
                        });
}

/// Tensor times a constant scalar.
inline Tensor scale(const Tensor& a, float s) {
  std::vector<float> out(a.numel());
  const auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return make_op_result(a.shape(), std::move(out), {a}, "scale",
                        [a, s](std::span<const float> g) mutable {
                          auto ga = a.grad_buffer();
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * s;
                        });
}

inline Tensor zeros_like(const Tensor& a) { return Tensor::zeros(a.shape()); }

/// Identity forward, no gradient contribution backward.
inline Tensor stop_gradient(const Tensor& x) { return x.detach(); }

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  return make_op_result(Shape{}, {static_cast<float>(acc)}, {a}, "sum",
                        [a](std::span<const float> g) mutable {
                          auto ga = a.grad_buffer();
                          for (auto& v : ga) v += g[0];
                        });
}

inline Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  const auto n = static_cast<double>(a.numel());
  return make_op_result(Shape{}, {static_cast<float>(acc / n)}, {a}, "mean",
                        [a, n](std::span<const float> g) mutable {
                          const auto d = static_cast<float>(g[0] / n);
                          auto ga = a.grad_buffer();
                          for (auto& v : ga) v += d;
                        });
}

inline Tensor relu(const Tensor& x) {
  std::vector<float> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
  return make_op_result(x.shape(), std::move(out), {x}, "relu",
                        [x](std::span<const float> g) mutable {
                          auto gx = x.grad_buffer();
                          const auto xv = x.data();
                          for (std::size_t i = 0; i < gx.size(); ++i) {
                            if (xv[i] > 0.0f) gx[i] += g[i];
                          }
                        });
}

/// Same values, new shape. Element count must match.
inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(shape));
  }
  return make_op_result(std::move(shape), x.values(), {x}, "reshape",
                        [x](std::span<const float> g) mutable { accumulate_grad(x, g); });
}

/// Collapses every dimension after the first: [N, ...] -> [N, rest].
inline Tensor flatten(const Tensor& x) {
  if (x.ndim() < 1) throw std::invalid_argument("flatten: scalar input");
  const std::size_t n = x.dim(0);
  return reshape(x, Shape{n, n == 0 ? 0 : x.numel() / n});
}

/// y = x W^T + b with x [N, in], W [out, in], b [out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1 || x.dim(1) != w.dim(1) ||
      b.dim(0) != w.dim(0)) {
    throw std::invalid_argument("linear: incompatible shapes x" + shape_str(x.shape()) + " W" +
                                shape_str(w.shape()) + " b" + shape_str(b.shape()));
  }
  const std::size_t n = x.dim(0), in = x.dim(1), outd = w.dim(0);
  std::vector<float> out(n * outd);
  const auto xv = x.data();
  const auto wv = w.data();
  const auto bv = b.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < outd; ++o) {
      float acc = bv[o];
      for (std::size_t i = 0; i < in; ++i) acc += xv[r * in + i] * wv[o * in + i];
      out[r * outd + o] = acc;
    }
  }
  return make_op_result(
      Shape{n, outd}, std::move(out), {x, w, b}, "linear",
      [x, w, b, n, in, outd](std::span<const float> g) mutable {
        if (x.requires_grad()) {
          auto gx = x.grad_buffer();
          const auto wv = w.data();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t o = 0; o < outd; ++o) {
              const float go = g[r * outd + o];
              for (std::size_t i = 0; i < in; ++i) gx[r * in + i] += go * wv[o * in + i];
            }
        }
        if (w.requires_grad()) {
          auto gw = w.grad_buffer();
          const auto xv = x.data();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t o = 0; o < outd; ++o) {
              const float go = g[r * outd + o];
              for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += go * xv[r * in + i];
            }
        }
        if (b.requires_grad()) {
          auto gb = b.grad_buffer();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t o = 0; o < outd; ++o) gb[o] += g[r * outd + o];
        }
      });
}

/// Mean over spatial positions: [N, C, H, W] -> [N, C].
inline Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() != 4) {
    throw std::invalid_argument("global_avg_pool: expected NCHW, got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<float> out(n * c);
  const auto xv = x.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < hw; ++p) acc += xv[i * hw + p];
    out[i] = static_cast<float>(acc / static_cast<double>(hw));
  }
  return make_op_result(Shape{n, c}, std::move(out), {x}, "global_avg_pool",
                        [x, n, c, hw](std::span<const float> g) mutable {
                          auto gx = x.grad_buffer();
                          const float inv = 1.0f / static_cast<float>(hw);
                          for (std::size_t i = 0; i < n * c; ++i) {
                            const float d = g[i] * inv;
                            for (std::size_t p = 0; p < hw; ++p) gx[i * hw + p] += d;
                          }
                        });
}

/// Divides each sample (leading axis) by its root-mean-square, sqrt(mean(x^2) + eps).
inline Tensor rms_normalize(const Tensor& x, float eps = 1e-6f) {
  if (x.ndim() < 2) {
    throw std::invalid_argument("rms_normalize: expected a batch, got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), d = x.numel() / n;
  const auto xv = x.data();
  std::vector<float> out(x.numel());
  std::vector<double> rms(n);
  for (std::size_t s = 0; s < n; ++s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += static_cast<double>(xv[s * d + i]) * xv[s * d + i];
    rms[s] = std::sqrt(acc / static_cast<double>(d) + eps);
    for (std::size_t i = 0; i < d; ++i)
      out[s * d + i] = static_cast<float>(xv[s * d + i] / rms[s]);
  }
  return make_op_result(x.shape(), std::move(out), {x}, "rms_normalize",
                        [x, n, d, rms](std::span<const float> g) mutable {
                          auto gx = x.grad_buffer();
                          const auto xs = x.data();
                          for (std::size_t s = 0; s < n; ++s) {
                            double dot = 0.0;
                            for (std::size_t i = 0; i < d; ++i)
                              dot += static_cast<double>(g[s * d + i]) * xs[s * d + i];
                            const double r = rms[s];
                            const double k = dot / (static_cast<double>(d) * r * r * r);
                            for (std::size_t i = 0; i < d; ++i)
                              gx[s * d + i] += static_cast<float>(g[s * d + i] / r - xs[s * d + i] * k);
                          }
                        });
}

/// Mean squared difference over all elements.
inline Tensor mse(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mse");
  const auto av = a.data();
  const auto bv = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    acc += d * d;
  }
  const auto n = static_cast<double>(av.size());
  return make_op_result(Shape{}, {static_cast<float>(acc / n)}, {a, b}, "mse",
                        [a, b, n](std::span<const float> g) mutable {
                          const auto k = static_cast<float>(2.0 * g[0] / n);
                          const auto av = a.data();
                          const auto bv = b.data();
                          if (a.requires_grad()) {
                            auto ga = a.grad_buffer();
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += k * (av[i] - bv[i]);
                          }
                          if (b.requires_grad()) {
                            auto gb = b.grad_buffer();
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= k * (av[i] - bv[i]);
                          }
                        });
}

/// Row-wise softmax of [N, C] logits, without autodiff.
inline std::vector<float> softmax_rows(const Tensor& logits) {
  if (logits.ndim() != 2) {
    throw std::invalid_argument("softmax_rows: expected [N, C], got " + shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  const auto lv = logits.data();
  std::vector<float> out(n * c);
  for (std::size_t r = 0; r < n; ++r) {
    const float* row = lv.data() + r * c;
    const float mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j)
      out[r * c + j] = static_cast<float>(std::exp(static_cast<double>(row[j] - mx)) / z);
  }
  return out;
}

/// Mean over the batch of -log softmax(logits)[label]. Max-subtracted.
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
  if (logits.ndim() != 2 || logits.dim(0) != labels.size()) {
    throw std::invalid_argument("softmax_cross_entropy: logits " + shape_str(logits.shape()) +
                                " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(labels[r]) +
                                  " outside [0, " + std::to_string(c) + ")");
    }
  }
  const auto lv = logits.data();
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const float* row = lv.data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    total += std::log(z) + mx - row[labels[r]];
  }
  std::vector<std::int32_t> ys(labels.begin(), labels.end());
  return make_op_result(
      Shape{}, {static_cast<float>(total / static_cast<double>(n))}, {logits},
      "softmax_cross_entropy", [logits, ys = std::move(ys), n, c](std::span<const float> g) mutable {
        const auto probs = softmax_rows(logits);
        auto gl = logits.grad_buffer();
        const float k = g[0] / static_cast<float>(n);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            const float target = static_cast<std::size_t>(ys[r]) == j ? 1.0f : 0.0f;
            gl[r * c + j] += k * (probs[r * c + j] - target);
          }
      });
}

}  // namespace fedforge
