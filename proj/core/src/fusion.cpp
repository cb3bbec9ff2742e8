#include "meaf/fusion.hpp"

namespace meaf {

void FusionConfig::validate() const {
  if (mid_channels <= 0) throw ArgumentError("fusion: mid_channels must be positive");
  if (reduction <= 0 || fused_channels() % reduction != 0) {
    throw ArgumentError("fusion: reduction must divide the fused channel count");
  }
}

template <typename T>
ModalityScale<T> ModalityScale<T>::init(double value) {
  return ModalityScale{Tensor<T>::scalar(static_cast<T>(value)).set_requires_grad(true),
                       Tensor<T>::scalar(static_cast<T>(value)).set_requires_grad(true)};
}

template <typename T>
ModalityBranch<T> ModalityBranch<T>::init(int channels, int mid, Rng& rng) {
  ModalityBranch b;
  b.mask3 = Layer<T>::conv(channels, channels, 3, rng);
  b.mask1 = Layer<T>::conv(channels, channels, 1, rng);
  b.refine = Layer<T>::conv(channels, mid, 3, rng);
  // Drawn then zeroed: the gate starts as a uniform 0.5, so the branch initially passes its refined features
  // through unchanged instead of a random reweighting. Keeps the RNG stream of the other layers.
  b.attention = Layer<T>::conv(2, 1, 1, rng);
  for (T& w : b.attention.weight.mutable_data()) w = T(0);
  return b;
}

template <typename T>
void ModalityBranch<T>::append_to(ParameterList<T>& out, const std::string& prefix) const {
  mask3.append_to(out, prefix + ".mask3");
  mask1.append_to(out, prefix + ".mask1");
  refine.append_to(out, prefix + ".refine");
  attention.append_to(out, prefix + ".attention");
}

template <typename T>
FusionParams<T> FusionParams<T>::init(const FusionConfig& config, Rng& rng) {
  config.validate();
  FusionParams p;
  p.config = config;
  p.modal = ModalityScale<T>::init(0.5);
  p.rgb = ModalityBranch<T>::init(3, config.mid_channels, rng);
  p.ir = ModalityBranch<T>::init(1, config.mid_channels, rng);
  const int fused = config.fused_channels();
  p.squeeze = Layer<T>::dense(fused, fused / config.reduction, rng);
  p.expand = Layer<T>::dense(fused / config.reduction, fused, rng);
  return p;
}

template <typename T>
ParameterList<T> FusionParams<T>::parameters(const std::string& prefix) const {
  ParameterList<T> out;
  out.push_back({prefix + ".p_rgb", modal.p_rgb, false});
  out.push_back({prefix + ".p_ir", modal.p_ir, false});
  rgb.append_to(out, prefix + ".rgb");
  ir.append_to(out, prefix + ".ir");
  squeeze.append_to(out, prefix + ".squeeze");
  expand.append_to(out, prefix + ".expand");
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> scale_modalities(const Tensor<T>& rgb, const Tensor<T>& ir,
                                                 const ModalityScale<T>& modal, Tape<T>* tape) {
  if (rgb.rank() != 4 || ir.rank() != 4 || rgb.dim(0) != ir.dim(0) || rgb.dim(2) != ir.dim(2) ||
      rgb.dim(3) != ir.dim(3)) {
    throw DimensionError("scale_modalities: RGB " + shape_str(rgb.shape()) + " and IR " + shape_str(ir.shape()) +
                         " are not aligned");
  }
  return {elementwise(rgb, modal.p_rgb, ElementwiseMode::Mul, tape),
          elementwise(ir, modal.p_ir, ElementwiseMode::Mul, tape)};
}

template <typename T>
Tensor<T> generate_mask(const Tensor<T>& scaled, const Layer<T>& mask3, const Layer<T>& mask1, Tape<T>* tape) {
  Tensor<T> h = conv2d(scaled, mask3.weight, mask3.bias, 1, 1, tape);
  h = activation(h, ActivationKind::ReLU, tape);
  h = conv2d(h, mask1.weight, mask1.bias, 1, 0, tape);
  return elementwise(scaled, h, ElementwiseMode::Mul, tape);
}

template <typename T>
Tensor<T> refine_features(const Tensor<T>& mask, const Tensor<T>& input, const Layer<T>& refine, Tape<T>* tape) {
  if (mask.shape() != input.shape()) {
    throw DimensionError("refine_features: mask " + shape_str(mask.shape()) + " vs input " +
                         shape_str(input.shape()));
  }
  return conv2d(elementwise(mask, input, ElementwiseMode::Add, tape), refine.weight, refine.bias, 1, 1, tape);
}

template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& refined, const Layer<T>& attention, Tape<T>* tape) {
  Tensor<T> logits = conv2d(channel_stats(refined, tape), attention.weight, attention.bias, 1, 0, tape);
  return activation(logits, ActivationKind::Sigmoid, tape);
}

template <typename T>
Tensor<T> apply_attention(const Tensor<T>& refined, const Tensor<T>& attention, Tape<T>* tape) {
  if (attention.rank() != 4 || attention.dim(1) != 1) {
    throw DimensionError("apply_attention: attention map must be [N,1,H,W], got " + shape_str(attention.shape()));
  }
  return elementwise(refined, attention, ElementwiseMode::Mul, tape);
}

template <typename T>
Tensor<T> channel_excitation_fuse(const Tensor<T>& rgb_out, const Tensor<T>& ir_out, const Layer<T>& squeeze,
                                  const Layer<T>& expand, Tape<T>* tape, Tensor<T>* excitation) {
  Tensor<T> cat = concat_channels(rgb_out, ir_out, tape);
  Tensor<T> z = fully_connected(global_avg_pool(cat, tape), squeeze.weight, squeeze.bias, tape);
  z = activation(z, ActivationKind::ReLU, tape);
  Tensor<T> gate = activation(fully_connected(z, expand.weight, expand.bias, tape), ActivationKind::Sigmoid, tape);
  if (excitation != nullptr) *excitation = gate;
  return elementwise(cat, gate, ElementwiseMode::Mul, tape);
}

template <typename T>
Tensor<T> meaf_forward(const Tensor<T>& rgb, const Tensor<T>& ir, const FusionParams<T>& params, Tape<T>* tape,
                       FusionTrace<T>* trace) {
  auto [rgb1, ir1] = scale_modalities(rgb, ir, params.modal, tape);

  auto branch = [tape](const Tensor<T>& raw, const Tensor<T>& scaled, const ModalityBranch<T>& p,
                       BranchTrace<T>* bt) {
    Tensor<T> mask = generate_mask(scaled, p.mask3, p.mask1, tape);
    Tensor<T> refined = refine_features(mask, raw, p.refine, tape);
    Tensor<T> attn = spatial_attention(refined, p.attention, tape);
    Tensor<T> out = apply_attention(refined, attn, tape);
    if (bt != nullptr) *bt = BranchTrace<T>{scaled, mask, refined, attn, out};
    return out;
  };

  Tensor<T> rgb_out = branch(rgb, rgb1, params.rgb, trace ? &trace->rgb : nullptr);
  Tensor<T> ir_out = branch(ir, ir1, params.ir, trace ? &trace->ir : nullptr);
  Tensor<T> gate;
  Tensor<T> fused = channel_excitation_fuse(rgb_out, ir_out, params.squeeze, params.expand, tape, &gate);
  if (trace != nullptr) {
    trace->excitation = gate;
    trace->fused = fused;
  }
  return fused;
}

#define MEAF_INSTANTIATE_FUSION(T)                                                                            \
  template struct ModalityScale<T>;                                                                           \
  template struct ModalityBranch<T>;                                                                          \
  template struct FusionParams<T>;                                                                            \
  template std::pair<Tensor<T>, Tensor<T>> scale_modalities(const Tensor<T>&, const Tensor<T>&,               \
                                                            const ModalityScale<T>&, Tape<T>*);               \
  template Tensor<T> generate_mask(const Tensor<T>&, const Layer<T>&, const Layer<T>&, Tape<T>*);             \
  template Tensor<T> refine_features(const Tensor<T>&, const Tensor<T>&, const Layer<T>&, Tape<T>*);          \
  template Tensor<T> spatial_attention(const Tensor<T>&, const Layer<T>&, Tape<T>*);                          \
  template Tensor<T> apply_attention(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                           \
  template Tensor<T> channel_excitation_fuse(const Tensor<T>&, const Tensor<T>&, const Layer<T>&,             \
                                             const Layer<T>&, Tape<T>*, Tensor<T>*);                          \
  template Tensor<T> meaf_forward(const Tensor<T>&, const Tensor<T>&, const FusionParams<T>&, Tape<T>*,       \
                                  FusionTrace<T>*);

MEAF_INSTANTIATE_FUSION(float)
MEAF_INSTANTIATE_FUSION(double)
MEAF_INSTANTIATE_FUSION(long double)

#undef MEAF_INSTANTIATE_FUSION

}  // namespace meaf
