#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "meaf/errors.hpp"

namespace meaf {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty when no gradient has been accumulated
  bool requires_grad = false;
  // Set when the tensor is the output of an op recorded on a tape.
  const void* producer = nullptr;
  std::size_t producer_node = 0;
};

}  // namespace detail

/// Dense row-major N-d array with an optional gradient slot.
///
/// Tensor is a shared handle: copies alias the same storage, which is how
/// parameters are shared between a model, its optimizer and the tape.
/// Use clone() for a deep copy.
///
/// Instantiated for float (training), double, and long double (reference
/// evaluation in gradient checks).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return storage_->shape; }
  int rank() const { return static_cast<int>(storage_->shape.size()); }
  int dim(int i) const { return storage_->shape.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const { return storage_->data.size(); }

  std::span<const T> data() const { return storage_->data; }
  std::span<T> mutable_data() { return storage_->data; }
  T item() const;
  T at(std::size_t i) const { return storage_->data[i]; }

  bool requires_grad() const { return storage_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    storage_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !storage_->grad.empty(); }
  /// Gradient buffer; zeros if nothing has been accumulated yet.
  std::vector<T> grad() const;
  /// Mutable gradient buffer, allocated (zero-filled) on first use.
  std::span<T> grad_buffer();
  /// Drops the gradient; the next backward starts from zero.
  void zero_grad() { storage_->grad.clear(); }

  Tensor clone() const;
  Tensor reshaped(Shape shape) const;  // deep copy with a new shape
  template <typename U>
  Tensor<U> cast() const;

  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }
  bool all_finite() const;

 private:
  friend class Tape<T>;
  std::shared_ptr<detail::TensorStorage<T>> storage_;
};

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  std::vector<U> out(numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(storage_->data[i]);
  return Tensor<U>(shape(), std::move(out));
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace meaf
