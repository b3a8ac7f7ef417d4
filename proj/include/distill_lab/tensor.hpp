#pragma once

// Dense row-major tensor with a dynamically recorded reverse-mode graph.
//
// A BasicTensor is a cheap handle; copies alias the same storage, like the
// tensor handles of the mainstream frameworks. Use clone() for a deep copy.
// Every op whose inputs require grad records a Node that owns its inputs, so a
// graph stays alive exactly as long as some tensor produced by it.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "distill_lab/errors.hpp"

namespace distill_lab {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

template <std::floating_point T>
struct Node;

template <std::floating_point T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first backward reaches this leaf
  bool requires_grad = false;
  std::shared_ptr<Node<T>> producer;  // null for leaves
};

/// Receives d(loss)/d(output) and accumulates into the input gradient
/// buffers. A null buffer means that input does not need a gradient.
template <std::floating_point T>
using BackwardFn = std::function<void(std::span<const T>, std::span<std::vector<T>* const>)>;

template <std::floating_point T>
struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  BackwardFn<T> backward;
};

inline thread_local int no_grad_depth = 0;

#ifdef NDEBUG
inline thread_local bool finite_checks = false;
#else
inline thread_local bool finite_checks = true;
#endif

/// Active while the gradient checker probes a function; relu folds its
/// activation pattern into it so the checker can detect kink crossings.
inline thread_local std::uint64_t* kink_probe = nullptr;

inline void fold_hash(std::uint64_t& h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
}

}  // namespace detail

/// Disables graph recording for its lifetime (evaluation, teacher passes).
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// Turns the NaN/Inf diagnostic on op outputs on or off for this thread.
/// On by default in debug builds.
inline void set_finite_checks(bool enabled) { detail::finite_checks = enabled; }
inline bool finite_checks_enabled() { return detail::finite_checks; }

template <std::floating_point T>
class BasicTensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  BasicTensor() = default;

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    auto impl = std::make_shared<Impl>();
    impl->data.assign(distill_lab::numel(shape), T{0});
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return BasicTensor(std::move(impl));
  }

  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }

  static BasicTensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (distill_lab::numel(shape) != values.size()) {
      throw DimensionError("tensor of shape " + to_string(shape) + " needs " +
                           std::to_string(distill_lab::numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return BasicTensor(std::move(impl));
  }

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return from({}, {value}, requires_grad);
  }

  /// Wraps freshly computed op output; used by primitives and fused losses.
  static BasicTensor make_result(const char* op, Shape shape, std::vector<T> values,
                                 std::vector<BasicTensor> inputs, detail::BackwardFn<T> backward) {
    if (detail::finite_checks) {
      for (T v : values) {
        if (!std::isfinite(v)) throw DivergenceError(std::string("non-finite output from ") + op);
      }
    }
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    bool track = false;
    if (grad_enabled()) {
      for (const auto& in : inputs) track = track || in.requires_grad();
    }
    if (track) {
      auto node = std::make_shared<detail::Node<T>>();
      node->op = op;
      node->inputs.reserve(inputs.size());
      for (auto& in : inputs) node->inputs.push_back(std::move(in.impl_));
      node->backward = std::move(backward);
      impl->producer = std::move(node);
      impl->requires_grad = true;
    }
    return BasicTensor(std::move(impl));
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  /// Direct write access, meant for leaves (initialisation, optimizer steps).
  std::span<T> mutable_data() { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }

  T item() const {
    if (numel() != 1) throw RankError("item() on tensor of shape " + to_string(shape()));
    return impl_->data[0];
  }
  T operator[](std::size_t i) const { return impl_->data[i]; }
  T at(std::size_t row, std::size_t col) const { return impl_->data[row * impl_->shape.at(1) + col]; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool on) {
    if (impl_->producer) throw ConfigError("requires_grad can only be changed on leaf tensors");
    impl_->requires_grad = on;
  }
  bool is_leaf() const { return impl_->producer == nullptr; }

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient accumulated so far; empty when no backward has reached this leaf.
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad; }
  void zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), T{0}); }

  /// Gradient as a tensor of the same shape (zeros when none accumulated).
  BasicTensor grad_tensor() const {
    if (impl_->grad.empty()) return zeros(shape());
    return from(shape(), impl_->grad);
  }

  /// New leaf holding a copy of the values; no graph, no grad requirement.
  BasicTensor detach() const { return from(shape(), impl_->data); }

  /// Deep copy of a leaf including its requires_grad flag.
  BasicTensor clone() const { return from(shape(), impl_->data, impl_->requires_grad); }

  bool same_storage(const BasicTensor& other) const { return impl_ == other.impl_; }

  const char* producer_op() const { return impl_->producer ? impl_->producer->op : ""; }

  /// Reverse-mode sweep from this scalar. Gradients are added to the grad
  /// buffers of leaves that require grad; intermediate gradients live only for
  /// the duration of the call, so repeating backward on the same graph adds
  /// the same contribution again.
  void backward() const;

 private:
  explicit BasicTensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<Impl> impl_;
};

template <std::floating_point T>
void BasicTensor<T>::backward() const {
  if (!impl_->shape.empty()) {
    throw RankError("backward() needs a scalar loss, got shape " + to_string(impl_->shape));
  }
  if (!impl_->requires_grad) return;

  // Iterative post-order DFS; reversing it gives a topological order.
  std::vector<Impl*> order;
  std::unordered_map<Impl*, std::size_t> index;
  {
    std::vector<std::pair<Impl*, std::size_t>> stack{{impl_.get(), 0}};
    std::unordered_map<Impl*, bool> seen{{impl_.get(), true}};
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (node->producer && next < node->producer->inputs.size()) {
        Impl* child = node->producer->inputs[next++].get();
        if (child->requires_grad && !seen[child]) {
          seen[child] = true;
          stack.emplace_back(child, 0);
        }
        continue;
      }
      index[node] = order.size();
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::vector<std::vector<T>> grads(order.size());
  grads[index[impl_.get()]].assign(1, T{1});
  std::vector<std::vector<T>*> sinks;
  for (std::size_t k = order.size(); k-- > 0;) {
    Impl* node = order[k];
    if (!node->producer || grads[k].empty()) continue;
    const auto& inputs = node->producer->inputs;
    sinks.assign(inputs.size(), nullptr);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!inputs[i]->requires_grad) continue;
      auto& buf = grads[index.at(inputs[i].get())];
      if (buf.empty()) buf.assign(inputs[i]->data.size(), T{0});
      sinks[i] = &buf;
    }
    node->producer->backward(grads[k], sinks);
    grads[k] = {};
  }

  for (std::size_t k = 0; k < order.size(); ++k) {
    Impl* node = order[k];
    if (node->producer || grads[k].empty()) continue;
    if (node->grad.empty()) node->grad.assign(node->data.size(), T{0});
    for (std::size_t i = 0; i < grads[k].size(); ++i) node->grad[i] += grads[k][i];
    if (detail::finite_checks) {
      for (T g : node->grad) {
        if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in backward");
      }
    }
  }
}

using Tensor = BasicTensor<double>;
using Tensor32 = BasicTensor<float>;

}  // namespace distill_lab
