#pragma once

// Dense row-major tensor of doubles with reverse-mode automatic differentiation.
//
// Every op that receives at least one input requiring gradients (while grad
// mode is enabled) attaches a Node to its result. Nodes carry a sequence number
// drawn from a monotone counter, so inputs always precede outputs and a
// reverse sweep in descending sequence order is a valid topological order.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace evsnn {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

class Tensor;

namespace detail {

struct TensorImpl;

struct Node {
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves

  std::vector<double>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// RAII guard disabling graph recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl>()) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl().shape; }
  std::size_t dim(std::size_t i) const { return impl().shape.at(i); }
  std::size_t rank() const { return impl().shape.size(); }
  std::size_t numel() const { return impl().data.size(); }

  std::span<const double> data() const { return impl().data; }
  /// Mutable access to leaf storage (parameters, inputs). Mutating a tensor
  /// that already participates in a recorded graph invalidates its adjoints.
  std::span<double> mutable_data() { return impl().data; }
  double operator[](std::size_t i) const { return impl().data[i]; }

  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return impl().data[0];
  }

  bool requires_grad() const { return impl().requires_grad; }
  void set_requires_grad(bool v) {
    if (impl().node) throw ContractError("requires_grad can only be set on leaf tensors");
    impl().requires_grad = v;
  }
  bool is_leaf() const { return !impl().node; }

  bool has_grad() const { return impl().grad.size() == impl().data.size() && !impl().data.empty(); }
  std::span<const double> grad() const { return impl().grad; }
  std::span<double> mutable_grad() { return impl().grad_buffer(); }
  void zero_grad() { impl().grad.clear(); }

  /// Same storage snapshot, cut from the graph.
  Tensor detach() const {
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl>();
    t.impl_->shape = impl().shape;
    t.impl_->data = impl().data;
    return t;
  }

  Tensor reshape(Shape shape) const;

  /// Reverse sweep from this scalar; gradients accumulate into leaves.
  void backward() const;

  detail::TensorImpl& impl() const {
    if (!impl_) throw ContractError("use of undefined tensor");
    return *impl_;
  }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

/// Builds an op result; attaches `bw` only when an input needs gradients.
template <class Backward>
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   Backward&& bw) {
  Tensor out(std::move(shape), std::move(data));
  if (any_requires_grad(inputs)) {
    auto node = std::make_shared<Node>();
    node->seq = next_seq();
    for (const Tensor* t : inputs)
      if (t->defined() && t->requires_grad()) node->inputs.push_back(t->impl_ptr());
    node->backward = std::forward<Backward>(bw);
    out.impl().requires_grad = true;
    out.impl().node = std::move(node);
  }
  return out;
}

inline Tensor make_result_multi(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                                std::function<void(const TensorImpl&)> bw) {
  Tensor out(std::move(shape), std::move(data));
  bool need = false;
  if (grad_enabled())
    for (const auto& t : inputs) need = need || t.requires_grad();
  if (need) {
    auto node = std::make_shared<Node>();
    node->seq = next_seq();
    for (const auto& t : inputs)
      if (t.requires_grad()) node->inputs.push_back(t.impl_ptr());
    node->backward = std::move(bw);
    out.impl().requires_grad = true;
    out.impl().node = std::move(node);
  }
  return out;
}

/// Gradient buffer of an op input, or nullptr when it does not need one.
inline double* grad_of(const Tensor& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return t.impl().grad_buffer().data();
}

}  // namespace detail

inline Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw ShapeError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  Tensor self = *this;
  return detail::make_result(std::move(shape), impl().data, {&self}, [self](const detail::TensorImpl& out) {
    double* g = detail::grad_of(self);
    for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
  });
}

inline void Tensor::backward() const {
  if (numel() != 1) throw ContractError("backward() requires a scalar loss, got " + shape_str(shape()));
  if (!requires_grad()) return;

  // Collect every impl reachable through recorded nodes.
  std::vector<detail::TensorImpl*> order;
  std::vector<detail::TensorImpl*> stack{impl_.get()};
  std::unordered_set<const detail::TensorImpl*> seen{impl_.get()};
  while (!stack.empty()) {
    auto* cur = stack.back();
    stack.pop_back();
    if (!cur->node) continue;
    order.push_back(cur);
    for (const auto& in : cur->node->inputs)
      if (seen.insert(in.get()).second) stack.push_back(in.get());
  }
  std::sort(order.begin(), order.end(),
            [](const detail::TensorImpl* a, const detail::TensorImpl* b) { return a->node->seq > b->node->seq; });

  // Intermediate adjoints restart from zero on every sweep.
  for (auto* p : order) p->grad.assign(p->data.size(), 0.0);
  impl_->grad_buffer()[0] += 1.0;
  for (auto* p : order) p->node->backward(*p);
}

}  // namespace evsnn
