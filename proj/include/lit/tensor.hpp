#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lit/error.hpp"

namespace lit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // tape that produced this node; 0 for leaves

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

// Dense row-major tensor. Copies are shallow handles onto the same storage;
// use clone() for an independent copy. Channels-last layout throughout:
// images are N×H×W×C, token sequences N×T×C.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t rank() const { return impl().shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl().data.size(); }

  std::span<const T> data() const { return impl().data; }
  // Direct write access for parameter updates and test setup. Writing to a
  // tensor that a live tape still references invalidates its gradients.
  std::span<T> mutable_data() { return impl().data; }
  T item() const;
  T operator[](std::size_t flat) const { return impl().data[flat]; }

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return !impl().grad.empty(); }
  std::span<const T> grad() const;
  void zero_grad() { impl().grad.clear(); }

  // Copy of the values with no gradient history.
  Tensor clone() const;

  // Value-converted copy (e.g. double → float), no gradient history.
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(impl().data[i]);
    return Tensor<U>(shape(), std::move(out));
  }

  const std::shared_ptr<TensorImpl<T>>& handle() const { return impl_; }
  TensorImpl<T>& impl() const;

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Ordered record of executed differentiable ops. Constructing a Tape makes it
// the active recorder for this thread (for scalar type T) until destruction;
// tapes nest as a stack. A tape serves one forward computation and is
// consumed by backward().
template <typename T>
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  std::uint64_t id() const { return id_; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return entries_.size(); }

  void record(std::function<void()> backward_fn);

  // Seeds d loss / d loss = 1 and replays the tape in reverse, accumulating
  // into .grad of every requires_grad node reachable from the loss.
  void backward(const Tensor<T>& loss);

 private:
  std::uint64_t id_;
  std::vector<std::function<void()>> entries_;
  bool consumed_ = false;
  Tape* previous_;

  inline static thread_local Tape* active_ = nullptr;
};

// backward() on the loss's tape, which must be the active one.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace lit
