#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedforge/tensor.hpp"

namespace fedforge {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Ordered, named snapshot of a model's trainable tensors. Values are owned,
/// so a ParamSet can be handed between clients and the server by value.
class ParamSet {
 public:
  ParamSet() = default;

  void add(std::string name, Shape shape, std::vector<float> values) {
    if (shape_numel(shape) != values.size()) {
      throw std::invalid_argument("ParamSet: tensor '" + name + "' shape " + shape_str(shape) +
                                  " does not match " + std::to_string(values.size()) + " values");
    }
    if (find(name) != nullptr) {
      throw std::invalid_argument("ParamSet: duplicate tensor name '" + name + "'");
    }
    entries_.push_back({std::move(name), std::move(shape), std::move(values)});
  }

  const std::vector<NamedTensor>& entries() const noexcept { return entries_; }
  std::vector<NamedTensor>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  const NamedTensor* find(const std::string& name) const {
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [&](const NamedTensor& t) { return t.name == name; });
    return it == entries_.end() ? nullptr : &*it;
  }

  const NamedTensor& at(const std::string& name) const {
    const auto* t = find(name);
    if (!t) throw std::out_of_range("ParamSet: no tensor named '" + name + "'");
    return *t;
  }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& t : entries_) n += t.values.size();
    return n;
  }

  /// Same names, order and shapes.
  bool same_structure(const ParamSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != other.entries_[i].name ||
          entries_[i].shape != other.entries_[i].shape)
        return false;
    }
    return true;
  }

  /// Human-readable account of how `other` departs from this structure:
  /// missing names, extra names, shape and order mismatches. Empty when equal.
  std::string structure_diff(const ParamSet& other) const {
    std::string missing, extra, shapes;
    for (const auto& t : entries_) {
      const auto* o = other.find(t.name);
      if (!o) {
        missing += (missing.empty() ? "" : ", ") + t.name;
      } else if (o->shape != t.shape) {
        shapes += (shapes.empty() ? "" : ", ") + t.name + " expected " + shape_str(t.shape) +
                  " got " + shape_str(o->shape);
      }
    }
    for (const auto& o : other.entries_) {
      if (!find(o.name)) extra += (extra.empty() ? "" : ", ") + o.name;
    }
    std::string out;
    if (!missing.empty()) out += "missing tensors: " + missing + "; ";
    if (!extra.empty()) out += "extra tensors: " + extra + "; ";
    if (!shapes.empty()) out += "shape mismatch: " + shapes + "; ";
    if (out.empty() && !same_structure(other)) out = "tensor order differs; ";
    if (!out.empty()) out.resize(out.size() - 2);
    return out;
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<NamedTensor> entries_;
};

}  // namespace fedforge
