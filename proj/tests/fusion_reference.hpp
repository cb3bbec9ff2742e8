#pragma once

#include <algorithm>

#include "meaf/fusion.hpp"

namespace meaf::testing {

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// Fresh parameters start with a constant 0.5 attention gate; tests that probe
// the gate itself need non-trivial kernels.
template <typename T>
void randomize_attention(FusionParams<T>& p, Rng& rng) {
  for (ModalityBranch<T>* b : {&p.rgb, &p.ir}) {
    for (T& w : b->attention.weight.mutable_data()) w = static_cast<T>(rng.uniform(-1.5, 1.5));
    for (T& w : b->attention.bias.mutable_data()) w = static_cast<T>(rng.uniform(-0.5, 0.5));
  }
}

// Stage-by-stage reference built only from tensor-core ops.
template <typename T>
Tensor<T> branch_reference(const Tensor<T>& raw, const Tensor<T>& p, const ModalityBranch<T>& b) {
  const auto scaled = elementwise(raw, p, ElementwiseMode::Mul);
  auto h = activation(conv2d(scaled, b.mask3.weight, b.mask3.bias, 1, 1), ActivationKind::ReLU);
  h = conv2d(h, b.mask1.weight, b.mask1.bias, 1, 0);
  const auto mask = elementwise(scaled, h, ElementwiseMode::Mul);
  const auto refined = conv2d(elementwise(mask, raw, ElementwiseMode::Add), b.refine.weight, b.refine.bias, 1, 1);
  const auto attn = activation(conv2d(channel_stats(refined), b.attention.weight, b.attention.bias, 1, 0),
                               ActivationKind::Sigmoid);
  return elementwise(refined, attn, ElementwiseMode::Mul);
}

template <typename T>
Tensor<T> fusion_reference(const Tensor<T>& rgb, const Tensor<T>& ir, const FusionParams<T>& p) {
  const auto cat = concat_channels(branch_reference(rgb, p.modal.p_rgb, p.rgb), branch_reference(ir, p.modal.p_ir, p.ir));
  auto z = activation(fully_connected(global_avg_pool(cat), p.squeeze.weight, p.squeeze.bias), ActivationKind::ReLU);
  const auto gate = activation(fully_connected(z, p.expand.weight, p.expand.bias), ActivationKind::Sigmoid);
  return elementwise(cat, gate, ElementwiseMode::Mul);
}

}  // namespace meaf::testing
