#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedforge/tensor.hpp"

namespace fedforge {

/// Momentum SGD state: one velocity buffer per parameter, in parameter order.
struct SgdState {
  float learning_rate = 0.01f;
  float momentum = 0.5f;
  std::vector<std::vector<float>> velocity;
};

/// v <- momentum * v + g;  w <- w - lr * v.
/// Velocity buffers are created on the first step to match each parameter.
inline void sgd_step(std::span<Tensor> params, SgdState& state) {
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const auto& p : params) state.velocity.emplace_back(p.numel(), 0.0f);
  }
  if (state.velocity.size() != params.size()) {
    throw std::invalid_argument("sgd_step: optimizer tracks " +
                                std::to_string(state.velocity.size()) + " parameters, got " +
                                std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw std::invalid_argument("sgd_step: parameter " + std::to_string(i) + " has no gradient");
    }
    if (state.velocity[i].size() != params[i].numel()) {
      throw std::invalid_argument("sgd_step: velocity shape mismatch at parameter " +
                                  std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].data();
    const auto g = params[i].grad();
    auto& v = state.velocity[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = state.momentum * v[j] + g[j];
      w[j] -= state.learning_rate * v[j];
    }
  }
}

}  // namespace fedforge
