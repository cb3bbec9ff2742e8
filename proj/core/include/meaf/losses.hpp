#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "meaf/box.hpp"
#include "meaf/detector.hpp"

namespace meaf {

/// Coefficients of the detection objective
///   L = λo Σ_a αo[a]·Lo[a] + λl Σ_a αl[a]·Ll[a] + λc Σ_a αc[a]·Lc[a]
/// and of the total objective c1·L + c2·L_sr.
struct LossWeights {
  std::array<double, 3> alpha_o{1.0, 1.0, 1.0};
  std::array<double, 3> alpha_l{0.05, 0.05, 0.05};
  std::array<double, 3> alpha_c{0.5, 0.5, 0.5};
  double lambda_o = 1.0;
  double lambda_l = 1.0;
  double lambda_c = 1.0;
  double c1 = 1.0;
  double c2 = 1.0;

  void validate() const;
  LossWeights scaled(double k) const;  // every α and λ multiplied by k

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct PositiveCell {
  int image = 0;
  int anchor = 0;  // box index within the cell
  int y = 0;
  int x = 0;
  Box target;  // pixels
  int class_id = 0;
};

struct ScaleTargets {
  int images = 0, anchors = 0, height = 0, width = 0;
  std::vector<float> objectness;        // [N,B,H,W]
  std::vector<std::uint8_t> positive;   // [N,B,H,W]
  std::vector<PositiveCell> positives;  // in assignment order
};

struct TargetAssignment {
  std::array<ScaleTargets, 3> scales;
  int rejected = 0;    // degenerate boxes skipped
  int collisions = 0;  // boxes whose cell was already taken
};

struct LossReport {
  double total = 0;
  double detection = 0;
  double sr = 0;
  std::array<double, 3> obj{};
  std::array<double, 3> loc{};
  std::array<double, 3> cls{};
};

template <typename T>
struct DetectionLoss {
  Tensor<T> value;  // scalar, recorded on the tape when one is given
  LossReport report;
};

/// Size-only IoU of a w×h box against a square anchor, both centred.
double size_iou(double w, double h, double anchor);

/// Each box goes to the (scale, anchor) whose prior best matches its size
/// (ties toward the finer scale) and to the cell containing its centre.
TargetAssignment assign_targets(const std::vector<std::vector<GroundTruthBox>>& ground_truth,
                                const BackboneConfig& config, int image_h, int image_w);

template <typename T>
DetectionLoss<T> detection_loss(const RawPrediction<T>& raw, const TargetAssignment& targets,
                                const BackboneConfig& config, const LossWeights& weights, Tape<T>* tape = nullptr);

/// Mean absolute difference between `s` and `x` block-averaged by `stride_ratio`.
template <typename T>
Tensor<T> sr_loss(const Tensor<T>& s, const Tensor<T>& x, int stride_ratio, Tape<T>* tape = nullptr);

/// c1·detection + c2·sr; `sr` may be undefined (treated as 0).
template <typename T>
Tensor<T> total_loss(const Tensor<T>& detection, const Tensor<T>& sr, const LossWeights& weights,
                     Tape<T>* tape = nullptr);

/// BCE with logits, stable form.
double bce_with_logits(double logit, double target);

}  // namespace meaf
