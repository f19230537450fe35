#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "cmtm/errors.hpp"

namespace cmtm {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (const auto d : shape) n *= d;
  return n;
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

namespace detail {

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until backward touches this tensor
  bool requires_grad = false;
  int node = -1;  // producing tape node, -1 for leaves
};

}  // namespace detail

// Dense row-major tensor. Cheap to copy: copies share storage, so a
// parameter handed to an op and kept by the caller is the same object the
// backward pass writes gradients into. clone() makes an independent copy.
template <typename T>
class TensorT {
 public:
  using Storage = detail::TensorStorage<T>;

  TensorT() : s_(std::make_shared<Storage>()) {}

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    TensorT t;
    for (const auto d : shape) {
      if (d < 0) throw DimError("tensor dimension must be nonnegative, got shape " + shape_str(shape));
    }
    t.s_->shape = std::move(shape);
    t.s_->values.assign(static_cast<std::size_t>(shape_numel(t.s_->shape)), T(0));
    t.s_->requires_grad = requires_grad;
    return t;
  }

  static TensorT full(Shape shape, T value, bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.s_->values) v = value;
    return t;
  }

  static TensorT scalar(T value) { return full({}, value); }

  static TensorT from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
      throw DimError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
    }
    TensorT t;
    t.s_->shape = std::move(shape);
    t.s_->values = std::move(values);
    t.s_->requires_grad = requires_grad;
    return t;
  }

  static TensorT identity(std::int64_t n) {
    TensorT t = zeros({n, n});
    for (std::int64_t i = 0; i < n; ++i) t.s_->values[static_cast<std::size_t>(i * n + i)] = T(1);
    return t;
  }

  const Shape& shape() const { return s_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(s_->shape.size()); }
  std::int64_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::int64_t numel() const { return static_cast<std::int64_t>(s_->values.size()); }

  const std::vector<T>& values() const { return s_->values; }
  std::vector<T>& values() { return s_->values; }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool rg) { s_->requires_grad = rg; }

  // Gradient-buffer access mutates the shared storage, not the handle, so
  // it is usable through const handles captured in backward closures.
  bool has_grad() const { return !s_->grad.empty(); }
  const std::vector<T>& grad() const { return s_->grad; }
  std::vector<T>& grad_buffer() const {
    if (s_->grad.empty()) s_->grad.assign(s_->values.size(), T(0));
    return s_->grad;
  }
  void clear_grad() const { s_->grad.clear(); }

  int node() const { return s_->node; }
  void set_node(int id) { s_->node = id; }
  bool is_leaf() const { return s_->node < 0; }

  // 1-D / 2-D / 3-D element access (row-major).
  T at(std::int64_t i) const { return s_->values[static_cast<std::size_t>(i)]; }
  T at(std::int64_t r, std::int64_t c) const {
    return s_->values[static_cast<std::size_t>(r * s_->shape[1] + c)];
  }
  T at(std::int64_t y, std::int64_t x, std::int64_t c) const {
    return s_->values[static_cast<std::size_t>((y * s_->shape[1] + x) * s_->shape[2] + c)];
  }
  T& at(std::int64_t i) { return s_->values[static_cast<std::size_t>(i)]; }
  T& at(std::int64_t r, std::int64_t c) {
    return s_->values[static_cast<std::size_t>(r * s_->shape[1] + c)];
  }
  T& at(std::int64_t y, std::int64_t x, std::int64_t c) {
    return s_->values[static_cast<std::size_t>((y * s_->shape[1] + x) * s_->shape[2] + c)];
  }

  T scalar_value() const {
    if (numel() != 1) throw UsageError("scalar_value on tensor of shape " + shape_str(s_->shape));
    return s_->values[0];
  }

  // Deep copy. The clone is a leaf with no tape linkage and no gradient.
  TensorT clone() const {
    TensorT t;
    t.s_->shape = s_->shape;
    t.s_->values = s_->values;
    t.s_->requires_grad = s_->requires_grad;
    return t;
  }

  bool same_storage(const TensorT& other) const { return s_ == other.s_; }

  bool all_finite() const {
    for (const auto v : s_->values) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

 private:
  std::shared_ptr<Storage> s_;
};

using Tensor = TensorT<float>;

template <typename From, typename To>
TensorT<To> tensor_cast(const TensorT<From>& src) {
  std::vector<To> vals(src.values().begin(), src.values().end());
  return TensorT<To>::from(src.shape(), std::move(vals), src.requires_grad());
}

// Reverse-mode tape. Ops append nodes in execution order, which is a
// topological order by construction; backward() sweeps the list once in
// reverse. A tape is single-use: a second backward() throws.
template <typename T>
class TapeT {
 public:
  using BackwardFn = std::function<void()>;

  int record(TensorT<T> out, std::vector<TensorT<T>> inputs, BackwardFn fn) {
    if (used_) throw UsageError("recording on a consumed tape");
    const int id = static_cast<int>(nodes_.size());
#ifndef NDEBUG
    for (const auto& in : inputs) {
      // Topological order by construction: parents precede their children.
      if (in.node() >= id) throw UsageError("tape node ordering violated");
    }
#endif
    out.set_node(id);
    nodes_.push_back(Node{std::move(out), std::move(inputs), std::move(fn)});
    return id;
  }

  std::size_t size() const { return nodes_.size(); }

  // Populates .grad on every requires_grad tensor reachable from `loss`.
  // Gradients are zero-initialized per call; shared parents accumulate.
  void backward(TensorT<T>& loss) {
    if (used_) throw UsageError("tape already consumed by a previous backward()");
    used_ = true;
    if (loss.numel() != 1) {
      throw UsageError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (loss.node() < 0 || static_cast<std::size_t>(loss.node()) >= nodes_.size() ||
        !loss.same_storage(nodes_[static_cast<std::size_t>(loss.node())].out)) {
      throw UsageError("loss tensor is not recorded on this tape");
    }

    // Zero/allocate gradient buffers exactly once per backward call:
    // all intermediates, plus leaf inputs that ask for gradients.
    for (auto& node : nodes_) {
      node.out.clear_grad();
      node.out.grad_buffer();
      for (auto& in : node.inputs) {
        if (in.is_leaf() && in.requires_grad()) {
          in.clear_grad();
          in.grad_buffer();
        }
      }
    }

    loss.grad_buffer()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->fn) it->fn();
    }
  }

 private:
  struct Node {
    TensorT<T> out;
    std::vector<TensorT<T>> inputs;
    BackwardFn fn;
  };

  std::vector<Node> nodes_;
  bool used_ = false;
};

using Tape = TapeT<float>;

}  // namespace cmtm
