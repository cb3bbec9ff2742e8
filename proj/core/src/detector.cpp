#include "meaf/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace meaf {

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::Rgb:
      return "rgb";
    case Modality::Ir:
      return "ir";
    case Modality::Fused:
      return "fused";
  }
  return "fused";
}

Modality parse_modality(std::string_view name) {
  if (name == "rgb") return Modality::Rgb;
  if (name == "ir") return Modality::Ir;
  if (name == "fused") return Modality::Fused;
  throw ArgumentError("unknown modality '" + std::string(name) + "' (expected rgb, ir or fused)");
}

void BackboneConfig::validate() const {
  if (widths.empty() || widths.size() != strides.size()) {
    throw ArgumentError("backbone: widths and strides must be non-empty and of equal length");
  }
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] <= 0 || strides[i] <= 0) throw ArgumentError("backbone: widths and strides must be positive");
  }
  static constexpr std::array<int, 3> kExpected{8, 16, 32};
  for (std::size_t s = 0; s < taps.size(); ++s) {
    if (taps[s] < 1 || taps[s] > static_cast<int>(widths.size())) {
      throw ArgumentError("backbone: tap stage " + std::to_string(taps[s]) + " out of range");
    }
    if (stage_stride(taps[s]) != kExpected[s]) {
      throw ArgumentError("backbone: head taps must sit at strides 8/16/32, tap " + std::to_string(s) +
                          " has stride " + std::to_string(stage_stride(taps[s])));
    }
  }
  if (head_channels < 0) throw ArgumentError("backbone: head_channels must be non-negative");
  if (num_classes < 1) throw ArgumentError("backbone: num_classes must be at least 1");
  if (boxes_per_cell < 1) throw ArgumentError("backbone: boxes_per_cell must be at least 1");
  if (anchors.size() != static_cast<std::size_t>(3 * boxes_per_cell)) {
    throw ArgumentError("backbone: expected " + std::to_string(3 * boxes_per_cell) + " anchors, got " +
                        std::to_string(anchors.size()));
  }
  for (double a : anchors) {
    if (!(a > 0)) throw ArgumentError("backbone: anchors must be positive");
  }
}

int BackboneConfig::stage_stride(int stage) const {
  int s = 1;
  for (int i = 0; i < stage; ++i) s *= strides[static_cast<std::size_t>(i)];
  return s;
}

void SrBranchConfig::validate(const BackboneConfig& backbone) const {
  if (!enabled) return;
  if (tap_stage < 1 || tap_stage > static_cast<int>(backbone.widths.size())) {
    throw ArgumentError("sr: tap stage " + std::to_string(tap_stage) + " out of range");
  }
  for (int w : widths) {
    if (w <= 0) throw ArgumentError("sr: decoder widths must be positive");
  }
  if (out_channels < 1) throw ArgumentError("sr: out_channels must be positive");
  const int tap_stride = backbone.stage_stride(tap_stage);
  const int upsample = 1 << widths.size();
  if (tap_stride % upsample != 0 || tap_stride / upsample != target_stride) {
    throw ArgumentError("sr: tap stride " + std::to_string(tap_stride) + " / 2^" + std::to_string(widths.size()) +
                        " does not equal target stride " + std::to_string(target_stride));
  }
}

void ModelConfig::validate() const {
  fusion.validate();
  backbone.validate();
  sr.validate(backbone);
}

// ---------------------------------------------------------------------------

template <typename T>
DetectorModel<T> DetectorModel<T>::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  DetectorModel m;
  m.config = config;
  Rng rng(seed);
  const int cf = config.fusion.fused_channels();
  switch (config.modality) {
    case Modality::Fused:
      m.fusion = FusionParams<T>::init(config.fusion, rng);
      break;
    case Modality::Rgb:
      m.stem = Layer<T>::conv(3, cf, 3, rng);
      break;
    case Modality::Ir:
      m.stem = Layer<T>::conv(1, cf, 3, rng);
      break;
  }
  const auto& bb = config.backbone;
  int cin = cf;
  for (int w : bb.widths) {
    m.stages.push_back(Layer<T>::conv(cin, w, 3, rng));
    cin = w;
  }
  for (int s = 0; s < 3; ++s) {
    int width = bb.widths[static_cast<std::size_t>(bb.taps[static_cast<std::size_t>(s)] - 1)];
    if (bb.head_channels > 0) {
      m.head_hidden.push_back(Layer<T>::conv(width, bb.head_channels, 3, rng));
      width = bb.head_channels;
    }
    m.head.push_back(Layer<T>::conv(width, bb.prediction_channels(), 1, rng));
  }
  if (config.sr.enabled) {
    Rng sr_rng(seed ^ 0x5352'4252'414e'4348ULL);
    SrDecoderParams<T> sr;
    int c = bb.widths[static_cast<std::size_t>(config.sr.tap_stage - 1)];
    for (int w : config.sr.widths) {
      sr.blocks.push_back(Layer<T>::conv(c, w, 3, sr_rng));
      c = w;
    }
    sr.out = Layer<T>::conv(c, config.sr.out_channels, 3, sr_rng);
    m.sr = std::move(sr);
  }
  return m;
}

template <typename T>
ParameterList<T> DetectorModel<T>::detection_parameters() const {
  ParameterList<T> out;
  if (fusion) {
    out = fusion->parameters("fusion");
  }
  if (stem) stem->append_to(out, "stem");
  for (std::size_t i = 0; i < stages.size(); ++i) stages[i].append_to(out, "backbone.stage" + std::to_string(i + 1));
  for (std::size_t i = 0; i < head_hidden.size(); ++i) head_hidden[i].append_to(out, "head.hidden" + std::to_string(i));
  for (std::size_t i = 0; i < head.size(); ++i) head[i].append_to(out, "head.scale" + std::to_string(i));
  return out;
}

template <typename T>
ParameterList<T> DetectorModel<T>::parameters() const {
  ParameterList<T> out = detection_parameters();
  if (sr) {
    for (std::size_t i = 0; i < sr->blocks.size(); ++i) sr->blocks[i].append_to(out, "sr.block" + std::to_string(i));
    sr->out.append_to(out, "sr.out");
  }
  return out;
}

template <typename T>
std::size_t DetectorModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> input_features(const DetectorModel<T>& model, const Tensor<T>& rgb, const Tensor<T>& ir, Tape<T>* tape,
                         FusionTrace<T>* trace) {
  switch (model.config.modality) {
    case Modality::Fused:
      return meaf_forward(rgb, ir, *model.fusion, tape, trace);
    case Modality::Rgb:
      return activation(conv2d(rgb, model.stem->weight, model.stem->bias, 1, 1, tape),
                        model.config.backbone.activation, tape);
    case Modality::Ir:
      return activation(conv2d(ir, model.stem->weight, model.stem->bias, 1, 1, tape),
                        model.config.backbone.activation, tape);
  }
  throw ArgumentError("unknown modality");
}

template <typename T>
BackboneOutput<T> backbone_forward(const Tensor<T>& fused, const BackboneConfig& config,
                                   const std::vector<Layer<T>>& stages, Tape<T>* tape) {
  if (fused.rank() != 4) throw DimensionError("backbone: input must be [N,C,H,W]");
  const int total = config.stage_stride(static_cast<int>(config.strides.size()));
  if (fused.dim(2) % total != 0 || fused.dim(3) % total != 0) {
    throw DimensionError("backbone: input " + std::to_string(fused.dim(2)) + "x" + std::to_string(fused.dim(3)) +
                         " not divisible by total stride " + std::to_string(total));
  }
  BackboneOutput<T> out;
  Tensor<T> x = fused;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    x = conv2d(x, stages[i].weight, stages[i].bias, config.strides[i], 1, tape);
    x = activation(x, config.activation, tape);
    out.stages.push_back(x);
  }
  for (std::size_t s = 0; s < 3; ++s) out.features[s] = out.stages[static_cast<std::size_t>(config.taps[s] - 1)];
  return out;
}

template <typename T>
RawPrediction<T> head_forward(const std::array<Tensor<T>, 3>& features, const DetectorModel<T>& model,
                              Tape<T>* tape) {
  RawPrediction<T> raw;
  for (std::size_t s = 0; s < 3; ++s) {
    if (!features[s].defined()) throw DimensionError("head: missing feature map for scale " + std::to_string(s));
    Tensor<T> x = features[s];
    if (!model.head_hidden.empty()) {
      x = activation(conv2d(x, model.head_hidden[s].weight, model.head_hidden[s].bias, 1, 1, tape),
                     model.config.backbone.activation, tape);
    }
    raw.scales[s] = conv2d(x, model.head[s].weight, model.head[s].bias, 1, 0, tape);
  }
  return raw;
}

template <typename T>
Tensor<T> sr_decoder_forward(const Tensor<T>& tap, const SrBranchConfig& config, const SrDecoderParams<T>& params,
                             ActivationKind act, Tape<T>* tape) {
  if (params.blocks.size() != config.widths.size()) {
    throw ArgumentError("sr: decoder has " + std::to_string(params.blocks.size()) + " blocks, config expects " +
                        std::to_string(config.widths.size()));
  }
  Tensor<T> x = tap;
  for (const auto& block : params.blocks) {
    x = resize_spatial(x, 2, ResizeMode::UpNearest, tape);
    x = activation(conv2d(x, block.weight, block.bias, 1, 1, tape), act, tape);
  }
  return conv2d(x, params.out.weight, params.out.bias, 1, 1, tape);
}

template <typename T>
ModelOutput<T> model_forward(const DetectorModel<T>& model, const Tensor<T>& rgb, const Tensor<T>& ir,
                             Tape<T>* tape) {
  Tensor<T> x = input_features(model, rgb, ir, tape);
  BackboneOutput<T> bb = backbone_forward(x, model.config.backbone, model.stages, tape);
  ModelOutput<T> out;
  out.raw = head_forward(bb.features, model, tape);
  if (model.sr) {
    const auto& cfg = model.config.sr;
    out.sr = sr_decoder_forward(bb.stages[static_cast<std::size_t>(cfg.tap_stage - 1)], cfg, *model.sr,
                                model.config.backbone.activation, tape);
  }
  return out;
}

template <typename T>
std::vector<std::vector<Detection>> decode_predictions(const RawPrediction<T>& raw, const BackboneConfig& config,
                                                       double conf_threshold) {
  if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0)) {
    throw ArgumentError("decode: confidence threshold must lie in [0,1]");
  }
  const int n = raw.scales[0].dim(0);
  const int k = config.num_classes;
  const int per_box = 5 + k;
  std::vector<std::vector<Detection>> out(static_cast<std::size_t>(n));
  for (int s = 0; s < 3; ++s) {
    const Tensor<T>& t = raw.scales[static_cast<std::size_t>(s)];
    if (t.dim(1) != config.prediction_channels()) {
      throw DimensionError("decode: scale " + std::to_string(s) + " has " + std::to_string(t.dim(1)) +
                           " channels, expected " + std::to_string(config.prediction_channels()));
    }
    const int h = t.dim(2), w = t.dim(3);
    const double stride = config.scale_stride(s);
    const double img_w = w * stride, img_h = h * stride;
    auto d = t.data();
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int b = 0; b < n; ++b) {
      for (int a = 0; a < config.boxes_per_cell; ++a) {
        const T* base = d.data() + (static_cast<std::size_t>(b) * t.dim(1) + static_cast<std::size_t>(a) * per_box) * hw;
        const double anchor = config.anchor(s, a);
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            const double obj = stable_sigmoid(static_cast<double>(base[4 * hw + p]));
            int best = 0;
            double best_p = -1.0;
            for (int c = 0; c < k; ++c) {
              const double pc = stable_sigmoid(static_cast<double>(base[(5 + c) * hw + p]));
              if (pc > best_p) {
                best_p = pc;
                best = c;
              }
            }
            const double score = obj * best_p;
            if (score < conf_threshold) continue;
            const double cx = (x + stable_sigmoid(static_cast<double>(base[p]))) * stride;
            const double cy = (y + stable_sigmoid(static_cast<double>(base[hw + p]))) * stride;
            const double bw = anchor * std::exp(std::clamp(static_cast<double>(base[2 * hw + p]), -4.0, 4.0));
            const double bh = anchor * std::exp(std::clamp(static_cast<double>(base[3 * hw + p]), -4.0, 4.0));
            Box box = Box::from_center(cx, cy, bw, bh);
            box.x1 = std::clamp(box.x1, 0.0, img_w);
            box.x2 = std::clamp(box.x2, 0.0, img_w);
            box.y1 = std::clamp(box.y1, 0.0, img_h);
            box.y2 = std::clamp(box.y2, 0.0, img_h);
            out[static_cast<std::size_t>(b)].push_back(Detection{box, best, score});
          }
        }
      }
    }
  }
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& detections, double iou_threshold) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Detection& da = detections[a];
    const Detection& db = detections[b];
    if (da.score != db.score) return da.score > db.score;
    return da.box.area() > db.box.area();
  });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Detection& d = detections[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

template <typename T>
DetectorModel<T> strip_sr(const DetectorModel<T>& model) {
  DetectorModel<T> out = model;
  out.sr.reset();
  out.config.sr.enabled = false;
  return out;
}

template <typename T>
std::vector<std::vector<Detection>> detect(const DetectorModel<T>& model, const Tensor<T>& rgb, const Tensor<T>& ir,
                                           double conf_threshold, double nms_iou) {
  Tensor<T> x = input_features(model, rgb, ir);
  BackboneOutput<T> bb = backbone_forward(x, model.config.backbone, model.stages);
  RawPrediction<T> raw = head_forward(bb.features, model);
  auto per_image = decode_predictions(raw, model.config.backbone, conf_threshold);
  for (auto& dets : per_image) dets = nms(dets, nms_iou);
  return per_image;
}

#define MEAF_INSTANTIATE_DETECTOR(T)                                                                           \
  template struct DetectorModel<T>;                                                                            \
  template Tensor<T> input_features(const DetectorModel<T>&, const Tensor<T>&, const Tensor<T>&, Tape<T>*,     \
                                    FusionTrace<T>*);                                                          \
  template BackboneOutput<T> backbone_forward(const Tensor<T>&, const BackboneConfig&,                         \
                                              const std::vector<Layer<T>>&, Tape<T>*);                         \
  template RawPrediction<T> head_forward(const std::array<Tensor<T>, 3>&, const DetectorModel<T>&, Tape<T>*);  \
  template Tensor<T> sr_decoder_forward(const Tensor<T>&, const SrBranchConfig&, const SrDecoderParams<T>&,    \
                                        ActivationKind, Tape<T>*);                                             \
  template ModelOutput<T> model_forward(const DetectorModel<T>&, const Tensor<T>&, const Tensor<T>&, Tape<T>*); \
  template std::vector<std::vector<Detection>> decode_predictions(const RawPrediction<T>&,                     \
                                                                  const BackboneConfig&, double);              \
  template DetectorModel<T> strip_sr(const DetectorModel<T>&);                                                 \
  template std::vector<std::vector<Detection>> detect(const DetectorModel<T>&, const Tensor<T>&,               \
                                                      const Tensor<T>&, double, double);

MEAF_INSTANTIATE_DETECTOR(float)
MEAF_INSTANTIATE_DETECTOR(double)
MEAF_INSTANTIATE_DETECTOR(long double)

#undef MEAF_INSTANTIATE_DETECTOR

}  // namespace meaf
