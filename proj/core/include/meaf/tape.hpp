#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "meaf/tensor.hpp"

namespace meaf {

/// Ordered record of differentiable operations executed in a forward pass.
///
/// Ops take an optional `Tape*`; when it is null (inference) nothing is
/// recorded. A tape is confined to one thread.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// True when at least one input requires a gradient.
  static bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs);

  /// Registers `output` as produced by `op`. `backward` reads output's grad
  /// and accumulates into the inputs.
  void record(std::string op, std::vector<Tensor<T>> inputs, Tensor<T>& output, BackwardFn backward);

  /// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
  /// calls; intermediate gradients are reset at the start of each sweep.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return nodes_.size(); }
  bool contains(const Tensor<T>& t) const;

  /// Describes the first recorded output holding NaN/Inf, if any.
  std::optional<std::string> first_non_finite() const;

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace meaf
