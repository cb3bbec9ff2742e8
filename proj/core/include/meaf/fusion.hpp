#pragma once

#include <optional>
#include <utility>

#include "meaf/ops.hpp"
#include "meaf/params.hpp"

// Mask-enhanced attention fusion of an RGB image [N,3,H,W] and an infrared
// image [N,1,H,W] into a pixel-aligned fused feature map [N,2*mid,H,W].
//
// Per modality:
//   scaled   = p * input
//   mask     = scaled ⊗ Conv1x1(ReLU(Conv3x3(scaled)))
//   refined  = Conv3x3(mask + input)          (residual uses the raw input)
//   attn     = Sigmoid(Conv1x1(Cat(mean_c(refined), max_c(refined))))
//   attended = refined ⊗ attn
// Then:
//   cat   = Cat(attended_rgb, attended_ir)
//   M     = Sigmoid(FC2(ReLU(FC1(GAP(cat)))))
//   fused = M ⊗ cat                           (per-channel gate)

namespace meaf {

struct FusionConfig {
  int mid_channels = 16;  // refine conv output width per modality
  int reduction = 4;      // excitation bottleneck ratio

  int fused_channels() const { return 2 * mid_channels; }
  void validate() const;
};

/// Learnable per-modality input scalars, each stored as a [1] tensor.
template <typename T>
struct ModalityScale {
  Tensor<T> p_rgb;
  Tensor<T> p_ir;

  static ModalityScale init(double value = 0.5);
};

template <typename T>
struct ModalityBranch {
  Layer<T> mask3;      // 3x3, C -> C
  Layer<T> mask1;      // 1x1, C -> C
  Layer<T> refine;     // 3x3, C -> mid
  Layer<T> attention;  // 1x1, 2 -> 1

  static ModalityBranch init(int channels, int mid, Rng& rng);
  void append_to(ParameterList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct FusionParams {
  FusionConfig config;
  ModalityScale<T> modal;
  ModalityBranch<T> rgb;
  ModalityBranch<T> ir;
  Layer<T> squeeze;  // FC fused -> fused / r
  Layer<T> expand;   // FC fused / r -> fused

  static FusionParams init(const FusionConfig& config, Rng& rng);
  ParameterList<T> parameters(const std::string& prefix = "fusion") const;
};

/// Intermediate tensors of one branch, kept for inspection.
template <typename T>
struct BranchTrace {
  Tensor<T> scaled;
  Tensor<T> mask;
  Tensor<T> refined;
  Tensor<T> attention;
  Tensor<T> attended;
};

template <typename T>
struct FusionTrace {
  BranchTrace<T> rgb;
  BranchTrace<T> ir;
  Tensor<T> excitation;  // [N, fused]
  Tensor<T> fused;
};

template <typename T>
std::pair<Tensor<T>, Tensor<T>> scale_modalities(const Tensor<T>& rgb, const Tensor<T>& ir,
                                                 const ModalityScale<T>& modal, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> generate_mask(const Tensor<T>& scaled, const Layer<T>& mask3, const Layer<T>& mask1,
                        Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> refine_features(const Tensor<T>& mask, const Tensor<T>& input, const Layer<T>& refine,
                          Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& refined, const Layer<T>& attention, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> apply_attention(const Tensor<T>& refined, const Tensor<T>& attention, Tape<T>* tape = nullptr);

/// Returns the gated concatenation; `excitation` receives M when non-null.
template <typename T>
Tensor<T> channel_excitation_fuse(const Tensor<T>& rgb_out, const Tensor<T>& ir_out, const Layer<T>& squeeze,
                                  const Layer<T>& expand, Tape<T>* tape = nullptr, Tensor<T>* excitation = nullptr);

template <typename T>
Tensor<T> meaf_forward(const Tensor<T>& rgb, const Tensor<T>& ir, const FusionParams<T>& params,
                       Tape<T>* tape = nullptr, FusionTrace<T>* trace = nullptr);

}  // namespace meaf
