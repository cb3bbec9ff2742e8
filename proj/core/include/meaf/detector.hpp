#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "meaf/box.hpp"
#include "meaf/fusion.hpp"

namespace meaf {

enum class Modality { Rgb, Ir, Fused };

std::string_view to_string(Modality m);
Modality parse_modality(std::string_view name);

/// Plain strided-conv pyramid standing in for the detection backbone.
/// Stage indices are 1-based; `taps` selects the stages feeding the head.
struct BackboneConfig {
  std::vector<int> widths{32, 64, 96, 128, 160};
  std::vector<int> strides{2, 2, 2, 2, 2};
  ActivationKind activation = ActivationKind::SiLU;
  std::array<int, 3> taps{3, 4, 5};
  int head_channels = 64;  // hidden 3x3 conv per scale; 0: prediction conv sits directly on the tap
  int num_classes = 1;
  int boxes_per_cell = 1;
  std::vector<double> anchors{12, 32, 80};  // square sizes in pixels, scale-major

  void validate() const;
  /// Cumulative stride after 1-based stage `stage`.
  int stage_stride(int stage) const;
  int scale_stride(int scale) const { return stage_stride(taps[static_cast<std::size_t>(scale)]); }
  double anchor(int scale, int box) const {
    return anchors[static_cast<std::size_t>(scale * boxes_per_cell + box)];
  }
  int prediction_channels() const { return boxes_per_cell * (5 + num_classes); }

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

/// Training-only reconstruction decoder tapped from an intermediate stage.
/// Stage count equals widths.size(); each stage upsamples by 2.
struct SrBranchConfig {
  bool enabled = true;
  int tap_stage = 2;
  std::vector<int> widths{16};
  int out_channels = 4;
  int target_stride = 2;

  void validate(const BackboneConfig& backbone) const;

  friend bool operator==(const SrBranchConfig&, const SrBranchConfig&) = default;
};

struct ModelConfig {
  Modality modality = Modality::Fused;
  FusionConfig fusion;
  BackboneConfig backbone;
  SrBranchConfig sr;

  void validate() const;
};

inline bool operator==(const FusionConfig& a, const FusionConfig& b) {
  return a.mid_channels == b.mid_channels && a.reduction == b.reduction;
}
inline bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.modality == b.modality && a.fusion == b.fusion && a.backbone == b.backbone && a.sr == b.sr;
}

template <typename T>
struct SrDecoderParams {
  std::vector<Layer<T>> blocks;  // one 3x3 conv per upsampling stage
  Layer<T> out;                  // 3x3 conv to out_channels
};

template <typename T>
struct DetectorModel {
  ModelConfig config;
  std::optional<FusionParams<T>> fusion;  // Fused modality
  std::optional<Layer<T>> stem;           // Rgb / Ir modality
  std::vector<Layer<T>> stages;
  std::vector<Layer<T>> head_hidden;  // empty when head_channels == 0
  std::vector<Layer<T>> head;
  std::optional<SrDecoderParams<T>> sr;

  /// Seeded initialization. The SR decoder draws from its own stream, so the
  /// detection parameters do not depend on whether SR is enabled.
  static DetectorModel init(const ModelConfig& config, std::uint64_t seed);

  ParameterList<T> parameters() const;
  ParameterList<T> detection_parameters() const;
  std::size_t parameter_count() const;
};

/// One prediction tensor per head scale: [N, B*(5+K), H/stride, W/stride];
/// per-box channel layout (tx, ty, tw, th, obj, class logits...).
template <typename T>
struct RawPrediction {
  std::array<Tensor<T>, 3> scales;
};

template <typename T>
struct BackboneOutput {
  std::array<Tensor<T>, 3> features;
  std::vector<Tensor<T>> stages;  // every stage output, 0-based
};

template <typename T>
struct ModelOutput {
  RawPrediction<T> raw;
  Tensor<T> sr;  // undefined when the SR branch is absent
};

/// Fusion (or unimodal stem) producing the backbone input.
template <typename T>
Tensor<T> input_features(const DetectorModel<T>& model, const Tensor<T>& rgb, const Tensor<T>& ir,
                         Tape<T>* tape = nullptr, FusionTrace<T>* trace = nullptr);

template <typename T>
BackboneOutput<T> backbone_forward(const Tensor<T>& fused, const BackboneConfig& config,
                                   const std::vector<Layer<T>>& stages, Tape<T>* tape = nullptr);

template <typename T>
RawPrediction<T> head_forward(const std::array<Tensor<T>, 3>& features, const DetectorModel<T>& model,
                              Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> sr_decoder_forward(const Tensor<T>& tap, const SrBranchConfig& config, const SrDecoderParams<T>& params,
                             ActivationKind act, Tape<T>* tape = nullptr);

/// Detection path plus the SR output when the branch is present.
template <typename T>
ModelOutput<T> model_forward(const DetectorModel<T>& model, const Tensor<T>& rgb, const Tensor<T>& ir,
                             Tape<T>* tape = nullptr);

/// Decodes raw logits into per-image detections with score >= conf_threshold,
/// clipped to the image bounds.
template <typename T>
std::vector<std::vector<Detection>> decode_predictions(const RawPrediction<T>& raw, const BackboneConfig& config,
                                                       double conf_threshold);

/// Greedy per-class suppression; ties ordered by (score desc, area desc, input order).
std::vector<Detection> nms(const std::vector<Detection>& detections, double iou_threshold);

/// Returns a copy with no SR decoder parameters. Idempotent.
template <typename T>
DetectorModel<T> strip_sr(const DetectorModel<T>& model);

/// Full inference: forward, decode, NMS.
template <typename T>
std::vector<std::vector<Detection>> detect(const DetectorModel<T>& model, const Tensor<T>& rgb, const Tensor<T>& ir,
                                           double conf_threshold, double nms_iou);

}  // namespace meaf
