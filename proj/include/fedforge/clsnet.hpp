#pragma once

// Residual classifier: three stride-2 3x3 conv blocks, global average pool,
// and a linear head producing real/fake logits.

#include <array>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedforge/conv.hpp"
#include "fedforge/ops.hpp"
#include "fedforge/random.hpp"
#include "fedforge/recnet.hpp"
#include "fedforge/tensor.hpp"

namespace fedforge {

inline constexpr std::size_t kNumClasses = 2;  // 0 real, 1 fake

struct ClsNetConfig {
  std::size_t image_channels = 1;
  std::array<std::size_t, 3> channels{16, 32, 64};
  // The residual's magnitude shrinks as the reconstructor trains; each sample
  // is rescaled to unit RMS, then multiplied by this gain.
  float input_gain = 8.0f;
};

struct ClsNetParams {
  ClsNetConfig config;
  std::array<Tensor, 3> conv_w, conv_b;
  Tensor fc_w, fc_b;

  static ClsNetParams init(const ClsNetConfig& cfg, Rng& rng) {
    ClsNetParams p;
    p.config = cfg;
    std::size_t in = cfg.image_channels;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto out = cfg.channels[i];
      p.conv_w[i] = detail::uniform_param({out, in, 3, 3}, detail::kaiming_bound(in * 9, 2.0), rng);
      p.conv_b[i] = detail::zero_param({out});
      in = out;
    }
    p.fc_w = detail::uniform_param({kNumClasses, in}, detail::kaiming_bound(in, 1.0), rng);
    p.fc_b = detail::zero_param({kNumClasses});
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto prefix = "clsnet.conv" + std::to_string(i + 1);
      out.emplace_back(prefix + ".weight", conv_w[i]);
      out.emplace_back(prefix + ".bias", conv_b[i]);
    }
    out.emplace_back("clsnet.fc.weight", fc_w);
    out.emplace_back("clsnet.fc.bias", fc_b);
    return out;
  }
};

/// Res(x) = x - G(x), signed, differentiable in both arguments.
inline Tensor residual(const Tensor& x, const Tensor& gx) { return sub(x, gx); }

/// [N, C, H, W] residual -> [N, 2] logits.
inline Tensor classify(const Tensor& res, const ClsNetParams& p) {
  if (res.ndim() != 4 || res.dim(1) != p.config.image_channels) {
    throw std::invalid_argument("classify: expected [N, " +
                                std::to_string(p.config.image_channels) + ", H, W], got " +
                                shape_str(res.shape()));
  }
  Tensor h = scale(rms_normalize(res), p.config.input_gain);
  for (std::size_t i = 0; i < 3; ++i) h = relu(conv2d(h, p.conv_w[i], 2, 1, p.conv_b[i]));
  return linear(global_avg_pool(h), p.fc_w, p.fc_b);
}

}  // namespace fedforge
