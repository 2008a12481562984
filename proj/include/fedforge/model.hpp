#pragma once

// The full forgery-detection model (reconstruction net + residual classifier),
// its joint objective, and a single optimization step.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedforge/clsnet.hpp"
#include "fedforge/ops.hpp"
#include "fedforge/optim.hpp"
#include "fedforge/param_set.hpp"
#include "fedforge/random.hpp"
#include "fedforge/recnet.hpp"

namespace fedforge {

/// Weights of the joint objective  mu1*L_G + mu2*L_rec + mu3*L_cls, plus the
/// alignment (alpha) and commitment (beta) weights inside L_G.
struct LossWeights {
  float mu1 = 1.0f;
  float mu2 = 1.0f;
  float mu3 = 1.0f;
  float alpha = 1.0f;
  float beta = 4.0f;

  void validate() const {
    if (mu1 < 0 || mu2 < 0 || mu3 < 0 || alpha < 0 || beta < 0) {
      throw std::invalid_argument("loss weights must be nonnegative");
    }
    if (mu1 == 0 && mu2 == 0 && mu3 == 0) {
      throw std::invalid_argument("loss weights mu1, mu2, mu3 are all zero");
    }
  }
};

struct ModelConfig {
  RecNetConfig recnet;
  ClsNetConfig clsnet;
};

class FfdModel {
 public:
  RecNetParams rec;
  ClsNetParams cls;

  static FfdModel init(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    FfdModel m;
    m.rec = RecNetParams::init(cfg.recnet, rng);
    m.cls = ClsNetParams::init(cfg.clsnet, rng);
    return m;
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    auto out = rec.named();
    for (auto& p : cls.named()) out.push_back(std::move(p));
    return out;
  }

  /// Parameter handles in canonical order (aliases, not copies).
  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  void zero_grad() const {
    for (auto& t : parameters()) t.clear_grad();
  }

  ParamSet export_params() const {
    ParamSet ps;
    for (const auto& [name, t] : named_parameters()) ps.add(name, t.shape(), t.values());
    return ps;
  }

  /// Overwrites parameter values in place. Structure must match exactly.
  void import_params(const ParamSet& ps) const {
    auto named = named_parameters();
    if (!structure_matches(named, ps)) {
      throw std::invalid_argument("parameter set does not match model: " + diff(named, ps));
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
      auto dst = named[i].second.data();
      const auto& src = ps.entries()[i].values;
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

 private:
  static bool structure_matches(const std::vector<std::pair<std::string, Tensor>>& named,
                                const ParamSet& ps) {
    if (named.size() != ps.size()) return false;
    for (std::size_t i = 0; i < named.size(); ++i) {
      if (named[i].first != ps.entries()[i].name || named[i].second.shape() != ps.entries()[i].shape)
        return false;
    }
    return true;
  }

  static std::string diff(const std::vector<std::pair<std::string, Tensor>>& named,
                          const ParamSet& ps) {
    ParamSet expected;
    for (const auto& [name, t] : named) expected.add(name, t.shape(), t.values());
    return expected.structure_diff(ps);
  }
};

/// A labelled image batch: images [N, C, H, W], labels in {0 real, 1 fake}.
struct Batch {
  Tensor images;
  std::vector<std::int32_t> labels;

  std::size_t size() const { return labels.size(); }
};

struct ForwardPass {
  Tensor latent;
  QuantizationResult quant;
  Tensor reconstruction;  // G(x)
  Tensor residual;        // x - G(x)
  Tensor logits;
};

inline ForwardPass forward(const Tensor& x, const FfdModel& model) {
  ForwardPass f;
  f.latent = encode(x, model.rec);
  f.quant = quantize(f.latent, model.rec.codebook);
  f.reconstruction = decode(f.quant.quantized, model.rec);
  f.residual = residual(x, f.reconstruction);
  f.logits = classify(f.residual, model.cls);
  return f;
}

struct JointLoss {
  Tensor total;
  Tensor l_g, l_rec, l_cls;
  ForwardPass pass;
};

inline void check_labels(std::span<const std::int32_t> labels) {
  for (auto y : labels) {
    if (y != 0 && y != 1) {
      throw std::invalid_argument("label " + std::to_string(y) + " is not 0 (real) or 1 (fake)");
    }
  }
}

/// Builds the weighted joint objective on a batch. One backward() through
/// `total` reaches every parameter of both networks.
inline JointLoss joint_loss(const Batch& batch, const FfdModel& model, const LossWeights& w) {
  check_labels(batch.labels);
  JointLoss jl;
  jl.pass = forward(batch.images, model);
  jl.l_g = vq_loss(jl.pass.latent, jl.pass.quant, w.alpha, w.beta);
  jl.l_rec = rec_loss(batch.images, jl.pass.reconstruction);
  jl.l_cls = softmax_cross_entropy(jl.pass.logits, batch.labels);
  jl.total = add(add(scale(jl.l_g, w.mu1), scale(jl.l_rec, w.mu2)), scale(jl.l_cls, w.mu3));
  return jl;
}

/// Probability of the fake class for each row of [N, 2] logits.
inline std::vector<float> fake_scores(const Tensor& logits) {
  const auto probs = softmax_rows(logits);
  std::vector<float> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = probs[i * kNumClasses + 1];
  return out;
}

/// Fraction of rows whose argmax matches the label; equal logits predict fake.
inline double batch_accuracy(const Tensor& logits, std::span<const std::int32_t> labels) {
  const auto lv = logits.data();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::int32_t pred = lv[i * kNumClasses + 1] >= lv[i * kNumClasses] ? 1 : 0;
    correct += pred == labels[i];
  }
  return labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
}

struct StepReport {
  double total = 0, l_g = 0, l_rec = 0, l_cls = 0;
  double accuracy = 0;
};

/// One joint SGD step over all parameters of both networks.
inline StepReport train_step(const Batch& batch, const FfdModel& model, const LossWeights& w,
                             SgdState& sgd) {
  if (batch.size() == 0) throw std::invalid_argument("train_step: empty batch");
  auto jl = joint_loss(batch, model, w);
  model.zero_grad();
  backward(jl.total);
  auto params = model.parameters();
  sgd_step(params, sgd);
  return {jl.total.item(), jl.l_g.item(), jl.l_rec.item(), jl.l_cls.item(),
          batch_accuracy(jl.pass.logits, batch.labels)};
}

}  // namespace fedforge
