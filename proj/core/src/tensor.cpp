#include "meaf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "meaf/tape.hpp"

namespace meaf {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : storage_(std::make_shared<detail::TensorStorage<T>>()) {
  const std::size_t n = shape_numel(shape);
  storage_->shape = std::move(shape);
  storage_->data.assign(n, fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : storage_(std::make_shared<detail::TensorStorage<T>>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  }
  storage_->shape = std::move(shape);
  storage_->data = std::move(data);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return storage_->data[0];
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
  if (storage_->grad.empty()) return std::vector<T>(numel(), T(0));
  return storage_->grad;
}

template <typename T>
std::span<T> Tensor<T>::grad_buffer() {
  if (storage_->grad.empty()) storage_->grad.assign(numel(), T(0));
  return storage_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(shape(), storage_->data);
  out.storage_->requires_grad = storage_->requires_grad;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), storage_->data);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(storage_->data.begin(), storage_->data.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;
template class Tensor<long double>;

// ---------------------------------------------------------------------------
// Tape

template <typename T>
bool Tape<T>::any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  for (const Tensor<T>* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void Tape<T>::record(std::string op, std::vector<Tensor<T>> inputs, Tensor<T>& output, BackwardFn backward) {
  output.storage_->requires_grad = true;
  output.storage_->producer = this;
  output.storage_->producer_node = nodes_.size();
  nodes_.push_back(Node{std::move(op), std::move(inputs), output, std::move(backward)});
}

template <typename T>
bool Tape<T>::contains(const Tensor<T>& t) const {
  return t.defined() && t.storage_->producer == this && t.storage_->producer_node < nodes_.size() &&
         nodes_[t.storage_->producer_node].output.same_storage(t);
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward requires a scalar loss");
  }
  if (!contains(loss)) throw ArgumentError("backward: loss tensor was not produced on this tape");

  const std::size_t last = loss.storage_->producer_node;
  for (std::size_t i = 0; i <= last; ++i) nodes_[i].output.zero_grad();
  Tensor<T> seed = loss;
  seed.grad_buffer()[0] = T(1);
  for (std::size_t i = last + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.output.has_grad()) continue;  // not on a path to the loss
    node.backward();
  }
}

template <typename T>
std::optional<std::string> Tape<T>::first_non_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].output.all_finite()) {
      return "output of op '" + nodes_[i].op + "' (node " + std::to_string(i) + ", shape " +
             shape_str(nodes_[i].output.shape()) + ")";
    }
  }
  return std::nullopt;
}

template class Tape<float>;
template class Tape<double>;
template class Tape<long double>;

}  // namespace meaf
