#pragma once

// Reverse-mode automatic differentiation over dense float32 tensors.
//
// A Tensor is a shared handle; copying it aliases the same storage. Every
// differentiable op whose inputs require gradients records a Node on the
// result. backward() orders the recorded nodes into a Tape and walks it once
// in reverse. Gradients accumulate across backward() calls until the caller
// zeroes them.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace fedforge {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

class Tensor;
struct Node;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a gradient is first accumulated
  bool requires_grad = false;
  std::shared_ptr<Node> creator;
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl>()) {
    if (shape_numel(shape) != values.size()) {
      throw std::invalid_argument("tensor shape " + shape_str(shape) + " holds " +
                                  std::to_string(shape_numel(shape)) + " elements but " +
                                  std::to_string(values.size()) + " values were given");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<float>(n, 0.0f), requires_grad);
  }

  static Tensor full(Shape shape, float value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<float>(n, value), requires_grad);
  }

  static Tensor scalar(float value, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<float>{value}, requires_grad);
  }

  static Tensor vector(std::vector<float> values, bool requires_grad = false) {
    const auto n = values.size();
    return Tensor(Shape{n}, std::move(values), requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(impl_); }

  const Shape& shape() const { return impl().shape; }
  std::size_t ndim() const { return impl().shape.size(); }
  std::size_t dim(std::size_t i) const { return impl().shape.at(i); }
  std::size_t numel() const { return impl().data.size(); }

  std::span<float> data() { return impl().data; }
  std::span<const float> data() const { return impl().data; }
  const std::vector<float>& values() const { return impl().data; }

  float item() const {
    if (numel() != 1) {
      throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
    }
    return impl().data[0];
  }

  bool requires_grad() const { return impl().requires_grad; }
  void set_requires_grad(bool value) { impl().requires_grad = value; }

  bool has_grad() const { return !impl().grad.empty(); }
  std::span<const float> grad() const { return impl().grad; }

  /// Gradient buffer, allocated (zero-filled) on first access. Gradient storage
  /// belongs to the shared tensor, so this is available through const handles.
  std::span<float> grad_buffer() const {
    auto& g = impl().grad;
    if (g.empty()) g.assign(impl().data.size(), 0.0f);
    return g;
  }

  void zero_grad() const {
    auto& g = impl().grad;
    std::fill(g.begin(), g.end(), 0.0f);
  }

  void clear_grad() const { impl().grad.clear(); }

  const std::shared_ptr<Node>& creator() const { return impl().creator; }

  /// Fresh leaf with a copy of the values and no history.
  Tensor detach() const { return Tensor(shape(), impl().data, false); }

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  detail::TensorImpl* raw() const noexcept { return impl_.get(); }

 private:
  friend Tensor make_op_result(Shape, std::vector<float>, std::vector<Tensor>, std::string_view,
                               std::function<void(std::span<const float>)>);

  detail::TensorImpl& impl() const {
    if (!impl_) throw std::logic_error("use of an undefined tensor");
    return *impl_;
  }

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// One recorded differentiable operation. The backward closure receives the
/// gradient of the op's output and accumulates into its inputs' buffers.
struct Node {
  std::string_view op;
  std::vector<Tensor> inputs;
  std::function<void(std::span<const float>)> backward;
  std::size_t visits = 0;
};

/// Builds an op result. A Node is attached only when grad mode is on and some
/// input requires a gradient.
inline Tensor make_op_result(Shape shape, std::vector<float> values, std::vector<Tensor> inputs,
                             std::string_view op,
                             std::function<void(std::span<const float>)> backward) {
  Tensor out(std::move(shape), std::move(values), false);
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto node = std::make_shared<Node>();
  node->op = op;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.impl_->requires_grad = true;
  out.impl_->creator = std::move(node);
  return out;
}

/// Accumulates `g` into the gradient of `t` if `t` participates in autodiff.
inline void accumulate_grad(const Tensor& t, std::span<const float> g) {
  if (!t.requires_grad()) return;
  auto buf = t.grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

/// Topologically ordered record of the ops reachable from a root tensor:
/// every op appears after the ops producing its inputs.
class Tape {
 public:
  struct Entry {
    Node* node;
    Tensor output;
  };

  static Tape record(const Tensor& root) {
    Tape tape;
    std::unordered_set<const detail::TensorImpl*> seen;
    // Iterative post-order DFS over tensors that carry a creator node.
    struct Frame {
      Tensor t;
      std::size_t next_input;
    };
    std::vector<Frame> stack;
    if (root.creator()) {
      stack.push_back({root, 0});
      seen.insert(root.raw());
    }
    while (!stack.empty()) {
      auto& frame = stack.back();
      Node* node = frame.t.creator().get();
      if (frame.next_input < node->inputs.size()) {
        const Tensor& in = node->inputs[frame.next_input++];
        if (in.creator() && seen.insert(in.raw()).second) stack.push_back({in, 0});
        continue;
      }
      tape.entries_.push_back({node, frame.t});
      stack.pop_back();
    }
    return tape;
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// Reverse sweep. Ops whose output received no gradient are still counted
  /// as visited but skip their closure.
  void run_backward() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      ++it->node->visits;
      if (it->output.has_grad()) it->node->backward(it->output.grad());
    }
  }

 private:
  std::vector<Entry> entries_;
};

/// Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad ancestor.
/// Returns the tape that was executed.
inline Tape backward(Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss, got shape " +
                                shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward() on a loss that does not require grad");
  }
  Tape tape = Tape::record(loss);
  // Non-leaf gradients are per-sweep scratch; only leaves accumulate.
  for (auto& entry : tape.entries()) entry.output.clear_grad();
  loss.grad_buffer()[0] = 1.0f;
  tape.run_backward();
  return tape;
}

}  // namespace fedforge
