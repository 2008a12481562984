#pragma once

// Reconstruction network: convolutional encoder, learned discrete codebook
// with nearest-code quantization, and a transposed-convolution decoder.
//
// Shapes for the default 1x32x32 input:
//   encoder  [N,1,32,32] -conv4/s2-> [N,16,16,16] -relu- -conv4/s2-> [N,d,8,8]
//   decoder  [N,d,8,8] -convT4/s2-> [N,16,16,16] -relu- -convT4/s2-> [N,1,32,32]

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedforge/conv.hpp"
#include "fedforge/ops.hpp"
#include "fedforge/random.hpp"
#include "fedforge/tensor.hpp"

namespace fedforge {

struct RecNetConfig {
  std::size_t image_channels = 1;
  std::size_t image_size = 32;
  std::size_t hidden_channels = 16;
  std::size_t codebook_size = 32;  // m
  std::size_t code_dim = 16;       // d

  std::size_t latent_size() const { return image_size / 4; }
};

inline constexpr std::size_t kKernel = 4;
inline constexpr std::size_t kStride = 2;
inline constexpr std::size_t kPadding = 1;

/// The m x d embedding table.
struct Codebook {
  Tensor embeddings;

  std::size_t size() const { return embeddings.defined() ? embeddings.dim(0) : 0; }
  std::size_t dim() const { return embeddings.defined() ? embeddings.dim(1) : 0; }
};

namespace detail {

inline Tensor uniform_param(Shape shape, float bound, Rng& rng) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform_float(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

inline Tensor zero_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

/// Kaiming-uniform bound for a layer with the given fan-in and gain^2.
inline float kaiming_bound(std::size_t fan_in, double gain_sq) {
  return static_cast<float>(std::sqrt(3.0 * gain_sq / static_cast<double>(fan_in)));
}

}  // namespace detail

struct RecNetParams {
  RecNetConfig config;
  Tensor enc1_w, enc1_b, enc2_w, enc2_b;
  Codebook codebook;
  Tensor dec1_w, dec1_b, dec2_w, dec2_b;

  static RecNetParams init(const RecNetConfig& cfg, Rng& rng) {
    if (cfg.codebook_size < 2 || cfg.code_dim < 1) {
      throw std::invalid_argument("RecNet: codebook needs m >= 2 and d >= 1");
    }
    if (cfg.image_size % 4 != 0 || cfg.image_size < 4) {
      throw std::invalid_argument("RecNet: image size must be a positive multiple of 4");
    }
    const auto c = cfg.image_channels, h = cfg.hidden_channels, d = cfg.code_dim;
    const auto kk = kKernel * kKernel;
    RecNetParams p;
    p.config = cfg;
    p.enc1_w = detail::uniform_param({h, c, kKernel, kKernel}, detail::kaiming_bound(c * kk, 2.0), rng);
    p.enc1_b = detail::zero_param({h});
    p.enc2_w = detail::uniform_param({d, h, kKernel, kKernel}, detail::kaiming_bound(h * kk, 1.0), rng);
    p.enc2_b = detail::zero_param({d});
    const float code_bound = 1.0f / static_cast<float>(cfg.codebook_size);
    p.codebook.embeddings = detail::uniform_param({cfg.codebook_size, d}, code_bound, rng);
    // A stride-2 transposed conv sees kernel^2 / stride^2 taps per output.
    const auto taps = kk / (kStride * kStride);
    p.dec1_w = detail::uniform_param({d, h, kKernel, kKernel}, detail::kaiming_bound(d * taps, 2.0), rng);
    p.dec1_b = detail::zero_param({h});
    p.dec2_w = detail::uniform_param({h, c, kKernel, kKernel}, detail::kaiming_bound(h * taps, 1.0), rng);
    p.dec2_b = detail::zero_param({c});
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named() const {
    return {{"recnet.enc1.weight", enc1_w}, {"recnet.enc1.bias", enc1_b},
            {"recnet.enc2.weight", enc2_w}, {"recnet.enc2.bias", enc2_b},
            {"recnet.codebook", codebook.embeddings},
            {"recnet.dec1.weight", dec1_w}, {"recnet.dec1.bias", dec1_b},
            {"recnet.dec2.weight", dec2_w}, {"recnet.dec2.bias", dec2_b}};
  }
};

/// E(x): [N, C, S, S] -> [N, d, S/4, S/4].
inline Tensor encode(const Tensor& x, const RecNetParams& p) {
  const auto& cfg = p.config;
  if (x.ndim() != 4 || x.dim(1) != cfg.image_channels || x.dim(2) != cfg.image_size ||
      x.dim(3) != cfg.image_size) {
    throw std::invalid_argument("encode: expected [N, " + std::to_string(cfg.image_channels) +
                                ", " + std::to_string(cfg.image_size) + ", " +
                                std::to_string(cfg.image_size) + "], got " + shape_str(x.shape()));
  }
  auto h = relu(conv2d(x, p.enc1_w, kStride, kPadding, p.enc1_b));
  return conv2d(h, p.enc2_w, kStride, kPadding, p.enc2_b);
}

struct QuantizationResult {
  Tensor quantized;  // forward value: selected codes; backward: straight-through to latent
  Tensor selected;   // the same codes, differentiable w.r.t. the codebook only
  Tensor latent;
  std::vector<std::int32_t> indices;  // [N, h, w] row-major
};

/// Row lookup producing an NCHW grid: out[n, :, y, x] = codebook[indices[n, y, x], :].
inline Tensor embed_lookup(const Tensor& codebook, const std::vector<std::int32_t>& indices,
                           const Shape& grid_shape) {
  const std::size_t n = grid_shape[0], d = grid_shape[1], hw = grid_shape[2] * grid_shape[3];
  const auto cv = codebook.data();
  std::vector<float> out(n * d * hw);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < hw; ++p) {
      const auto code = static_cast<std::size_t>(indices[b * hw + p]);
      for (std::size_t j = 0; j < d; ++j) out[(b * d + j) * hw + p] = cv[code * d + j];
    }
  return make_op_result(grid_shape, std::move(out), {codebook}, "embed_lookup",
                        [codebook, indices, n, d, hw](std::span<const float> g) mutable {
                          auto gc = codebook.grad_buffer();
                          for (std::size_t b = 0; b < n; ++b)
                            for (std::size_t p = 0; p < hw; ++p) {
                              const auto code = static_cast<std::size_t>(indices[b * hw + p]);
                              for (std::size_t j = 0; j < d; ++j)
                                gc[code * d + j] += g[(b * d + j) * hw + p];
                            }
                        });
}

/// Forward value of `value`, gradient routed unchanged to `route`.
inline Tensor straight_through(const Tensor& route, const Tensor& value) {
  detail::require_same_shape(route, value, "straight_through");
  return make_op_result(route.shape(), value.values(), {route}, "straight_through",
                        [route](std::span<const float> g) mutable { accumulate_grad(route, g); });
}

/// Index of the nearest code by squared L2; ties go to the lowest index.
inline std::int32_t nearest_code(std::span<const float> codebook, std::size_t m, std::size_t d,
                                 const float* z, std::size_t z_stride) {
  std::int32_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < m; ++k) {
    double dist = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = static_cast<double>(z[j * z_stride]) - codebook[k * d + j];
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = static_cast<std::int32_t>(k);
    }
  }
  return best;
}

inline QuantizationResult quantize(const Tensor& latent, const Codebook& codebook) {
  if (codebook.size() == 0) throw std::invalid_argument("quantize: empty codebook");
  if (latent.ndim() != 4 || latent.dim(1) != codebook.dim()) {
    throw std::invalid_argument("quantize: latent " + shape_str(latent.shape()) +
                                " does not have channel dim " + std::to_string(codebook.dim()));
  }
  const std::size_t n = latent.dim(0), d = latent.dim(1), hw = latent.dim(2) * latent.dim(3);
  const auto zv = latent.data();
  const auto cv = codebook.embeddings.data();
  QuantizationResult r;
  r.latent = latent;
  r.indices.resize(n * hw);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < hw; ++p)
      r.indices[b * hw + p] = nearest_code(cv, codebook.size(), d, zv.data() + b * d * hw + p, hw);
  r.selected = embed_lookup(codebook.embeddings, r.indices, latent.shape());
  r.quantized = straight_through(latent, r.selected);
  return r;
}

/// alpha * |sg[z] - e|^2 + beta * |z - sg[e]|^2, each term a mean over elements.
/// The first term moves only the codebook, the second only the encoder.
inline Tensor vq_loss(const Tensor& latent, const QuantizationResult& q, float alpha, float beta) {
  auto align = mse(stop_gradient(latent), q.selected);
  auto commit = mse(latent, stop_gradient(q.selected));
  return add(scale(align, alpha), scale(commit, beta));
}

/// G: [N, d, S/4, S/4] -> [N, C, S, S]. Output is linear (no squashing).
inline Tensor decode(const Tensor& quantized, const RecNetParams& p) {
  const auto& cfg = p.config;
  const auto ls = cfg.latent_size();
  if (quantized.ndim() != 4 || quantized.dim(1) != cfg.code_dim || quantized.dim(2) != ls ||
      quantized.dim(3) != ls) {
    throw std::invalid_argument("decode: expected [N, " + std::to_string(cfg.code_dim) + ", " +
                                std::to_string(ls) + ", " + std::to_string(ls) + "], got " +
                                shape_str(quantized.shape()));
  }
  auto h = relu(conv_transpose2d(quantized, p.dec1_w, kStride, kPadding, p.dec1_b));
  return conv_transpose2d(h, p.dec2_w, kStride, kPadding, p.dec2_b);
}

/// Pixel reconstruction term: mean squared error between x and G(x).
inline Tensor rec_loss(const Tensor& x, const Tensor& gx) { return mse(x, gx); }

}  // namespace fedforge
