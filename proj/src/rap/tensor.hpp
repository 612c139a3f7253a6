#pragma once

// Dense row-major tensors with a define-by-run reverse-mode tape.
//
// Ops (see ops.hpp) record an adjoint on the calling thread's active tape
// whenever a tape is installed and at least one input requires a gradient.
// Without an active tape every op is a plain forward evaluation.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rap/errors.hpp"

namespace rap {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
class Tape;

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until touched by backward or allocated
  bool requires_grad = false;
  // Identity of the tape entry that produced this tensor; zero for leaves.
  std::uint64_t tape_id = 0;
  std::uint64_t generation = 0;
  std::int64_t node = -1;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<TensorImpl<T>>()) {
    for (auto e : shape) {
      if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    }
    impl_->data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorImpl<T>>()) {
    if (numel_of(shape) != static_cast<std::int64_t>(values.size())) {
      throw ShapeError("tensor: " + std::to_string(values.size()) +
                       " values do not fill shape " + shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::vector<T>& values() { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }
  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    if (on) impl_->ensure_grad();
    return *this;
  }

  // Gradient buffer; leaves that were never reached read as zeros.
  std::span<const T> grad() const {
    impl_->ensure_grad();
    return impl_->grad;
  }
  std::span<T> mutable_grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  std::int64_t node() const { return impl_->node; }

  // Copy of the values, cut from any graph.
  Tensor detach() const { return Tensor(shape(), values()); }

  TensorImpl<T>* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl<T>>& shared_impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

namespace detail {
inline std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}
}  // namespace detail

// Ordered record of the ops executed since the last clear(). Entries are
// appended in execution order, which is a topological order of the graph, so
// replaying adjoints back to front visits each node once after all of its
// consumers.
template <typename T>
class Tape {
 public:
  using Adjoint = std::function<void()>;

  Tape() : id_(detail::next_tape_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const char* op, const Tensor<T>& out, std::vector<std::shared_ptr<TensorImpl<T>>> inputs,
              Adjoint adjoint) {
    auto* impl = out.impl();
    impl->requires_grad = true;
    impl->tape_id = id_;
    impl->generation = generation_;
    impl->node = static_cast<std::int64_t>(entries_.size());
    entries_.push_back(Entry{op, out.shared_impl(), std::move(inputs), std::move(adjoint)});
  }

  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw GraphError("backward: loss must be a scalar, got shape " +
                       (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    auto* root = loss.impl();
    if (root->tape_id == 0) {
      if (!root->requires_grad) throw GraphError("backward: loss is not connected to any tape");
      root->ensure_grad();
      root->grad[0] += T(1);
      return;
    }
    if (root->tape_id != id_ || root->generation != generation_ || root->node < 0 ||
        static_cast<std::size_t>(root->node) >= entries_.size()) {
      throw GraphError("backward: loss belongs to a cleared or foreign tape");
    }
    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto i = static_cast<std::int64_t>(root->node); i >= 0; --i) {
      auto& e = entries_[static_cast<std::size_t>(i)];
      if (e.out->grad.empty()) continue;  // not reachable from the loss
      for (auto& in : e.inputs) {
        if (in->requires_grad) in->ensure_grad();
      }
      e.adjoint();
    }
  }

  void clear() {
    entries_.clear();
    ++generation_;
  }

  std::size_t size() const { return entries_.size(); }
  std::uint64_t id() const { return id_; }

 private:
  struct Entry {
    const char* op;
    std::shared_ptr<TensorImpl<T>> out;
    std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
    Adjoint adjoint;
  };

  std::uint64_t id_;
  std::uint64_t generation_ = 1;
  std::vector<Entry> entries_;
};

template <typename T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

// Installs a tape for the current thread for the lifetime of the scope.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>* tape) : prev_(active_tape<T>()) { active_tape<T>() = tape; }
  ~TapeScope() { active_tape<T>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

template <typename T>
class NoGradScope : public TapeScope<T> {
 public:
  NoGradScope() : TapeScope<T>(nullptr) {}
};

// Records `adjoint` for `out` if any input is tracked on the active tape.
template <typename T>
bool record_if_needed(const char* op, const Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs,
                      typename Tape<T>::Adjoint adjoint) {
  Tape<T>* tape = active_tape<T>();
  if (!tape) return false;
  bool any = false;
  std::vector<std::shared_ptr<TensorImpl<T>>> ins;
  ins.reserve(inputs.size());
  for (const auto* t : inputs) {
    if (t->requires_grad()) any = true;
    ins.push_back(t->shared_impl());
  }
  if (!any) return false;
  tape->record(op, out, std::move(ins), std::move(adjoint));
  return true;
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace rap
