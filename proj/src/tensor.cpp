#include "lit/tensor.hpp"

#include <functional>
#include <numeric>

namespace lit {

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<TensorImpl<T>>()) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorImpl<T>>()) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T>
TensorImpl<T>& Tensor<T>::impl() const {
  if (!impl_) throw StateError("use of an undefined tensor");
  return *impl_;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return shape()[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl().data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  impl().requires_grad = flag;
  return *this;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (impl().grad.empty()) throw StateError("tensor has no gradient; run backward first");
  return impl().grad;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor<T>(shape(), impl().data);
}

template <typename T>
Tape<T>::Tape() : id_(next_tape_id.fetch_add(1)), previous_(active_) {
  active_ = this;
}

template <typename T>
Tape<T>::~Tape() {
  // Tapes are scoped; restore whatever was active before us.
  if (active_ == this) active_ = previous_;
}

template <typename T>
void Tape<T>::record(std::function<void()> backward_fn) {
  if (consumed_) throw StateError("recording onto a consumed tape");
  entries_.push_back(std::move(backward_fn));
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw StateError("backward on a dead (already consumed) tape");
  if (loss.numel() != 1) {
    throw DimensionError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  auto& node = loss.impl();
  if (node.tape_id != id_) {
    throw StateError("loss was not produced under this tape");
  }
  node.ensure_grad()[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
  consumed_ = true;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  auto* tape = Tape<T>::active();
  if (tape == nullptr) throw StateError("backward with no live tape");
  tape->backward(loss);
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace lit
