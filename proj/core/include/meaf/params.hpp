#pragma once

#include <string>
#include <vector>

#include "meaf/random.hpp"
#include "meaf/tensor.hpp"

namespace meaf {

/// A learnable tensor with its checkpoint name. `decay` marks tensors that
/// receive weight decay (conv/FC weights, not biases or modal scalars).
template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
  bool decay = false;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

/// Convolution or fully-connected layer weights.
template <typename T>
struct Layer {
  Tensor<T> weight;
  Tensor<T> bias;

  /// Kaiming-uniform conv weight [cout,cin,k,k], zero bias.
  static Layer conv(int cin, int cout, int kernel, Rng& rng) {
    return Layer{kaiming_uniform<T>(Shape{cout, cin, kernel, kernel}, cin * kernel * kernel, rng)
                     .set_requires_grad(true),
                 Tensor<T>(Shape{cout}).set_requires_grad(true)};
  }
  /// Kaiming-uniform FC weight [dout,din], zero bias.
  static Layer dense(int din, int dout, Rng& rng) {
    return Layer{kaiming_uniform<T>(Shape{dout, din}, din, rng).set_requires_grad(true),
                 Tensor<T>(Shape{dout}).set_requires_grad(true)};
  }

  void append_to(ParameterList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, false});
  }
};

}  // namespace meaf
