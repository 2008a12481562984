#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fedforge::metrics {

/// Fake-class scores with their ground-truth labels (0 real, 1 fake).
struct ScoredBatch {
  std::vector<double> scores;
  std::vector<std::int32_t> labels;

  void validate() const {
    if (scores.size() != labels.size()) {
      throw std::invalid_argument("ScoredBatch: " + std::to_string(scores.size()) + " scores vs " +
                                  std::to_string(labels.size()) + " labels");
    }
    for (double s : scores) {
      if (!std::isfinite(s)) throw std::invalid_argument("ScoredBatch: non-finite score");
    }
    for (auto y : labels) {
      if (y != 0 && y != 1) throw std::invalid_argument("ScoredBatch: labels must be 0 or 1");
    }
  }

  std::size_t positives() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  }
  std::size_t negatives() const { return labels.size() - positives(); }
};

/// Fraction with (score >= threshold) == label. A score equal to the
/// threshold is a fake prediction.
inline double accuracy(const ScoredBatch& batch, double threshold = 0.5) {
  batch.validate();
  if (batch.scores.empty()) throw std::invalid_argument("accuracy: empty batch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.scores.size(); ++i) {
    const std::int32_t pred = batch.scores[i] >= threshold ? 1 : 0;
    correct += pred == batch.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(batch.scores.size());
}

namespace detail {

inline void require_both_classes(const ScoredBatch& batch, const char* op) {
  if (batch.positives() == 0 || batch.negatives() == 0) {
    throw std::invalid_argument(std::string(op) + ": needs at least one positive and one negative");
  }
}

}  // namespace detail

/// Mann-Whitney AUC over all (positive, negative) pairs; ties count one half.
inline double auc(const ScoredBatch& batch) {
  batch.validate();
  detail::require_both_classes(batch, "auc");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < batch.scores.size(); ++i) {
    (batch.labels[i] == 1 ? pos : neg).push_back(batch.scores[i]);
  }
  // Twice the statistic, kept integral so the result is exact up to one division.
  std::uint64_t twice_u = 0;
  for (double p : pos)
    for (double n : neg) twice_u += p > n ? 2u : (p == n ? 1u : 0u);
  return static_cast<double>(twice_u) /
         (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

struct RocPoint {
  double fpr;
  double tpr;
};

/// ROC staircase from (0,0) to (1,1), one vertex per distinct score
/// threshold in descending order. Tied scores form a single diagonal step.
inline std::vector<RocPoint> roc_points(const ScoredBatch& batch) {
  batch.validate();
  detail::require_both_classes(batch, "roc_points");
  std::vector<std::size_t> order(batch.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return batch.scores[a] > batch.scores[b];
  });
  const auto p = static_cast<double>(batch.positives());
  const auto n = static_cast<double>(batch.negatives());
  std::vector<RocPoint> pts{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = batch.scores[order[i]];
    while (i < order.size() && batch.scores[order[i]] == s) {
      (batch.labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    pts.push_back({static_cast<double>(fp) / n, static_cast<double>(tp) / p});
  }
  return pts;
}

/// Trapezoidal area under a polyline of ROC points.
inline double trapezoid_area(std::span<const RocPoint> pts) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    area += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) * 0.5;
  }
  return area;
}

inline void write_roc_csv(std::ostream& os, std::span<const RocPoint> pts) {
  os << "# fedforge roc v1\nfpr,tpr\n";
  const auto old = os.precision(17);
  for (const auto& pt : pts) os << pt.fpr << ',' << pt.tpr << '\n';
  os.precision(old);
}

}  // namespace fedforge::metrics
