#pragma once

// 2-D convolution (cross-correlation) and its transpose over NCHW tensors,
// lowered to im2col + dense products.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedforge/tensor.hpp"

namespace fedforge {

struct ConvGeometry {
  std::size_t channels, height, width;  // input image
  std::size_t kernel, stride, padding;
  std::size_t out_height, out_width;

  std::size_t patch() const { return channels * kernel * kernel; }
  std::size_t positions() const { return out_height * out_width; }
};

/// Output extent of a strided, padded window sweep; 0 when the window does not fit.
inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                   std::size_t padding) {
  if (stride == 0 || in + 2 * padding < kernel) return 0;
  return (in + 2 * padding - kernel) / stride + 1;
}

namespace detail {

// cols[(c*K + ky)*K + kx][oy*OW + ox] = x[c][oy*s - p + ky][ox*s - p + kx]
inline void im2col(const float* x, const ConvGeometry& g, float* cols) {
  const auto k = g.kernel;
  const auto ow = g.out_width;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        float* row = cols + ((c * k + ky) * k + kx) * g.positions();
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          float* dst = row + oy * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + ow, 0.0f);
            continue;
          }
          const float* src = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                          ? 0.0f
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
}

// Adjoint of im2col: scatter-adds columns back into the image.
inline void col2im(const float* cols, const ConvGeometry& g, float* x) {
  const auto k = g.kernel;
  const auto ow = g.out_width;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const float* row = cols + ((c * k + ky) * k + kx) * g.positions();
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          float* dst = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          const float* src = row + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width))
              dst[static_cast<std::size_t>(ix)] += src[ox];
          }
        }
      }
}

// c[M x N] += a[M x K] * b[K x N]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                    float* c) {
  for (std::size_t i = 0; i < m; ++i) {
    float* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float aip = a[i * k + p];
      const float* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[M x N] += a^T * b with a stored [K x M], b [K x N]
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                    float* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const float* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const float api = a[p * m + i];
      float* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

// c[M x N] += a * b^T with a [M x K], b stored [N x K]
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                    float* c, std::vector<float>& scratch) {
  // Transpose b so the inner loop runs over contiguous memory.
  scratch.resize(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) scratch[p * n + j] = b[j * k + p];
  gemm_nn(m, n, k, a, scratch.data(), c);
}

inline ConvGeometry conv_geometry(const Shape& input, std::size_t kernel, std::size_t stride,
                                  std::size_t padding, const char* op) {
  if (input.size() != 4) {
    throw std::invalid_argument(std::string(op) + ": expected NCHW input, got " +
                                shape_str(input));
  }
  ConvGeometry g{input[1], input[2], input[3], kernel, stride, padding, 0, 0};
  g.out_height = conv_out_extent(g.height, kernel, stride, padding);
  g.out_width = conv_out_extent(g.width, kernel, stride, padding);
  if (stride == 0 || kernel == 0 || g.out_height == 0 || g.out_width == 0) {
    throw std::invalid_argument(std::string(op) + ": invalid geometry for input " +
                                shape_str(input) + " kernel " + std::to_string(kernel) +
                                " stride " + std::to_string(stride) + " padding " +
                                std::to_string(padding));
  }
  return g;
}

inline void check_bias(const Tensor& bias, std::size_t channels, const char* op) {
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != channels)) {
    throw std::invalid_argument(std::string(op) + ": bias shape " + shape_str(bias.shape()) +
                                " does not match " + std::to_string(channels) + " channels");
  }
}

}  // namespace detail

/// Cross-correlation. input [N, C, H, W], kernel [O, C, K, K], optional bias [O].
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
                     std::size_t padding, const Tensor& bias = Tensor()) {
  if (kernel.ndim() != 4 || kernel.dim(2) != kernel.dim(3)) {
    throw std::invalid_argument("conv2d: kernel must be [O, C, K, K], got " +
                                shape_str(kernel.shape()));
  }
  const auto geo = detail::conv_geometry(input.shape(), kernel.dim(2), stride, padding, "conv2d");
  if (kernel.dim(1) != geo.channels) {
    throw std::invalid_argument("conv2d: input " + shape_str(input.shape()) + " has " +
                                std::to_string(geo.channels) + " channels but kernel " +
                                shape_str(kernel.shape()) + " expects " +
                                std::to_string(kernel.dim(1)));
  }
  const std::size_t batch = input.dim(0), outc = kernel.dim(0);
  detail::check_bias(bias, outc, "conv2d");
  const std::size_t in_stride = geo.channels * geo.height * geo.width;
  const std::size_t out_stride = outc * geo.positions();

  std::vector<float> out(batch * out_stride, 0.0f);
  std::vector<float> cols(geo.patch() * geo.positions());
  const auto xv = input.data();
  const auto wv = kernel.data();
  for (std::size_t n = 0; n < batch; ++n) {
    float* o = out.data() + n * out_stride;
    if (bias.defined()) {
      const auto bv = bias.data();
      for (std::size_t c = 0; c < outc; ++c)
        std::fill(o + c * geo.positions(), o + (c + 1) * geo.positions(), bv[c]);
    }
    detail::im2col(xv.data() + n * in_stride, geo, cols.data());
    detail::gemm_nn(outc, geo.positions(), geo.patch(), wv.data(), cols.data(), o);
  }

  std::vector<Tensor> inputs{input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result(
      Shape{batch, outc, geo.out_height, geo.out_width}, std::move(out), std::move(inputs),
      "conv2d",
      [input, kernel, bias, geo, batch, outc, in_stride,
       out_stride](std::span<const float> g) mutable {
        std::vector<float> cols(geo.patch() * geo.positions());
        std::vector<float> scratch;
        const auto xv = input.data();
        const auto wv = kernel.data();
        for (std::size_t n = 0; n < batch; ++n) {
          const float* go = g.data() + n * out_stride;
          if (kernel.requires_grad()) {
            detail::im2col(xv.data() + n * in_stride, geo, cols.data());
            detail::gemm_nt(outc, geo.patch(), geo.positions(), go, cols.data(),
                            kernel.grad_buffer().data(), scratch);
          }
          if (input.requires_grad()) {
            std::fill(cols.begin(), cols.end(), 0.0f);
            detail::gemm_tn(geo.patch(), geo.positions(), outc, wv.data(), go, cols.data());
            detail::col2im(cols.data(), geo, input.grad_buffer().data() + n * in_stride);
          }
          if (bias.defined() && bias.requires_grad()) {
            auto gb = bias.grad_buffer();
            for (std::size_t c = 0; c < outc; ++c) {
              float acc = 0.0f;
              for (std::size_t p = 0; p < geo.positions(); ++p) acc += go[c * geo.positions() + p];
              gb[c] += acc;
            }
          }
        }
      });
}

/// Output extent of a transposed convolution.
inline std::size_t conv_transpose_out_extent(std::size_t in, std::size_t kernel,
                                             std::size_t stride, std::size_t padding) {
  const std::size_t full = (in - 1) * stride + kernel;
  return full > 2 * padding ? full - 2 * padding : 0;
}

/// Transposed convolution (adjoint of conv2d w.r.t. its input).
/// input [N, C, H, W], kernel [C, O, K, K], optional bias [O].
inline Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
                               std::size_t padding, const Tensor& bias = Tensor()) {
  if (input.ndim() != 4) {
    throw std::invalid_argument("conv_transpose2d: expected NCHW input, got " +
                                shape_str(input.shape()));
  }
  if (kernel.ndim() != 4 || kernel.dim(2) != kernel.dim(3) || kernel.dim(0) != input.dim(1)) {
    throw std::invalid_argument("conv_transpose2d: kernel " + shape_str(kernel.shape()) +
                                " incompatible with input " + shape_str(input.shape()));
  }
  const std::size_t batch = input.dim(0), inc = input.dim(1), outc = kernel.dim(1);
  const std::size_t k = kernel.dim(2);
  if (stride == 0 || input.dim(2) == 0 || input.dim(3) == 0) {
    throw std::invalid_argument("conv_transpose2d: invalid geometry");
  }
  const std::size_t oh = conv_transpose_out_extent(input.dim(2), k, stride, padding);
  const std::size_t ow = conv_transpose_out_extent(input.dim(3), k, stride, padding);
  if (oh == 0 || ow == 0) throw std::invalid_argument("conv_transpose2d: invalid geometry");
  // Geometry of the forward conv that maps the output back onto the input grid.
  ConvGeometry geo{outc, oh, ow, k, stride, padding, input.dim(2), input.dim(3)};
  if (conv_out_extent(oh, k, stride, padding) != geo.out_height ||
      conv_out_extent(ow, k, stride, padding) != geo.out_width) {
    throw std::invalid_argument("conv_transpose2d: geometry does not invert");
  }
  detail::check_bias(bias, outc, "conv_transpose2d");
  const std::size_t in_stride = inc * geo.positions();
  const std::size_t out_stride = outc * oh * ow;

  std::vector<float> out(batch * out_stride, 0.0f);
  std::vector<float> cols(geo.patch() * geo.positions());
  const auto xv = input.data();
  const auto wv = kernel.data();
  for (std::size_t n = 0; n < batch; ++n) {
    std::fill(cols.begin(), cols.end(), 0.0f);
    detail::gemm_tn(geo.patch(), geo.positions(), inc, wv.data(), xv.data() + n * in_stride,
                    cols.data());
    float* o = out.data() + n * out_stride;
    detail::col2im(cols.data(), geo, o);
    if (bias.defined()) {
      const auto bv = bias.data();
      for (std::size_t c = 0; c < outc; ++c)
        for (std::size_t p = 0; p < oh * ow; ++p) o[c * oh * ow + p] += bv[c];
    }
  }

  std::vector<Tensor> inputs{input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result(
      Shape{batch, outc, oh, ow}, std::move(out), std::move(inputs), "conv_transpose2d",
      [input, kernel, bias, geo, batch, inc, outc, in_stride,
       out_stride](std::span<const float> g) mutable {
        std::vector<float> cols(geo.patch() * geo.positions());
        std::vector<float> scratch;
        const auto xv = input.data();
        const auto wv = kernel.data();
        const std::size_t plane = geo.height * geo.width;
        for (std::size_t n = 0; n < batch; ++n) {
          const float* go = g.data() + n * out_stride;
          detail::im2col(go, geo, cols.data());
          if (input.requires_grad()) {
            detail::gemm_nn(inc, geo.positions(), geo.patch(), wv.data(), cols.data(),
                            input.grad_buffer().data() + n * in_stride);
          }
          if (kernel.requires_grad()) {
            detail::gemm_nt(inc, geo.patch(), geo.positions(), xv.data() + n * in_stride,
                            cols.data(), kernel.grad_buffer().data(), scratch);
          }
          if (bias.defined() && bias.requires_grad()) {
            auto gb = bias.grad_buffer();
            for (std::size_t c = 0; c < outc; ++c) {
              float acc = 0.0f;
              for (std::size_t p = 0; p < plane; ++p) acc += go[c * plane + p];
              gb[c] += acc;
            }
          }
        }
      });
}

}  // namespace fedforge
