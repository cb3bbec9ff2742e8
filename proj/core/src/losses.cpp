#include "meaf/losses.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>

namespace meaf {

void LossWeights::validate() const {
  auto check = [](double v, const char* name) {
    if (!std::isfinite(v) || v < 0) throw ArgumentError(std::string("loss weight ") + name + " must be finite and >= 0");
  };
  for (int a = 0; a < 3; ++a) {
    check(alpha_o[a], "alpha_o");
    check(alpha_l[a], "alpha_l");
    check(alpha_c[a], "alpha_c");
  }
  check(lambda_o, "lambda_o");
  check(lambda_l, "lambda_l");
  check(lambda_c, "lambda_c");
  check(c1, "c1");
  check(c2, "c2");
}

LossWeights LossWeights::scaled(double k) const {
  LossWeights w = *this;
  for (int a = 0; a < 3; ++a) {
    w.alpha_o[a] *= k;
    w.alpha_l[a] *= k;
    w.alpha_c[a] *= k;
  }
  w.lambda_o *= k;
  w.lambda_l *= k;
  w.lambda_c *= k;
  return w;
}

namespace {

template <typename A>
A bce(A logit, A target) {
  return std::max(logit, A(0)) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

}  // namespace

double bce_with_logits(double logit, double target) { return bce(logit, target); }

double size_iou(double w, double h, double anchor) {
  const double inter = std::min(w, anchor) * std::min(h, anchor);
  return inter / (w * h + anchor * anchor - inter);
}

TargetAssignment assign_targets(const std::vector<std::vector<GroundTruthBox>>& ground_truth,
                                const BackboneConfig& config, int image_h, int image_w) {
  const int n = static_cast<int>(ground_truth.size());
  const int nb = config.boxes_per_cell;
  TargetAssignment out;
  for (int s = 0; s < 3; ++s) {
    const int stride = config.scale_stride(s);
    if (image_h % stride != 0 || image_w % stride != 0) {
      throw DimensionError("assign_targets: image size not divisible by stride " + std::to_string(stride));
    }
    ScaleTargets& st = out.scales[static_cast<std::size_t>(s)];
    st.images = n;
    st.anchors = nb;
    st.height = image_h / stride;
    st.width = image_w / stride;
    const std::size_t cells = static_cast<std::size_t>(n) * nb * st.height * st.width;
    st.objectness.assign(cells, 0.0f);
    st.positive.assign(cells, 0);
  }
  for (int img = 0; img < n; ++img) {
    for (const GroundTruthBox& gt : ground_truth[static_cast<std::size_t>(img)]) {
      if (gt.class_id < 0 || gt.class_id >= config.num_classes) {
        throw DataError("assign_targets: class id " + std::to_string(gt.class_id) + " outside [0," +
                        std::to_string(config.num_classes) + ")");
      }
      const Box box = gt.to_pixels(image_w, image_h);
      if (!(box.width() > 0) || !(box.height() > 0)) {
        ++out.rejected;
        continue;
      }
      int best_scale = 0, best_anchor = 0;
      double best = -1.0;
      for (int s = 0; s < 3; ++s) {
        for (int a = 0; a < nb; ++a) {
          const double v = size_iou(box.width(), box.height(), config.anchor(s, a));
          if (v > best) {
            best = v;
            best_scale = s;
            best_anchor = a;
          }
        }
      }
      ScaleTargets& st = out.scales[static_cast<std::size_t>(best_scale)];
      const double stride = config.scale_stride(best_scale);
      const int x = std::clamp(static_cast<int>(std::floor(box.cx() / stride)), 0, st.width - 1);
      const int y = std::clamp(static_cast<int>(std::floor(box.cy() / stride)), 0, st.height - 1);
      const std::size_t idx = ((static_cast<std::size_t>(img) * nb + best_anchor) * st.height + y) * st.width + x;
      if (st.positive[idx]) {
        ++out.collisions;
        continue;
      }
      st.positive[idx] = 1;
      st.objectness[idx] = 1.0f;
      st.positives.push_back(PositiveCell{img, best_anchor, y, x, box, gt.class_id});
    }
  }
  return out;
}

namespace {

template <typename A>
struct IouGrad {
  A iou = 0;
  A dcx = 0, dcy = 0, dw = 0, dh = 0;  // d IoU / d (cx, cy, w, h)
};

template <typename A>
IouGrad<A> iou_with_grad(A cx, A cy, A w, A h, const Box& t) {
  IouGrad<A> g;
  const A tx1 = t.x1, tx2 = t.x2, ty1 = t.y1, ty2 = t.y2;
  const A px1 = cx - w / 2, px2 = cx + w / 2, py1 = cy - h / 2, py2 = cy + h / 2;
  const A iw = std::min(px2, tx2) - std::max(px1, tx1);
  const A ih = std::min(py2, ty2) - std::max(py1, ty1);
  if (iw <= 0 || ih <= 0) return g;
  const A inter = iw * ih;
  const A uni = w * h + (tx2 - tx1) * (ty2 - ty1) - inter;
  g.iou = inter / uni;
  const A d_inter = (uni + inter) / (uni * uni);
  const A d_area = -inter / (uni * uni);
  // Partial derivatives of the overlap extents with respect to box edges.
  const A diw_dx2 = px2 < tx2 ? A(1) : A(0);
  const A diw_dx1 = px1 > tx1 ? A(-1) : A(0);
  const A dih_dy2 = py2 < ty2 ? A(1) : A(0);
  const A dih_dy1 = py1 > ty1 ? A(-1) : A(0);
  g.dcx = d_inter * ih * (diw_dx1 + diw_dx2);
  g.dcy = d_inter * iw * (dih_dy1 + dih_dy2);
  g.dw = d_inter * ih * 0.5 * (diw_dx2 - diw_dx1) + d_area * h;
  g.dh = d_inter * iw * 0.5 * (dih_dy2 - dih_dy1) + d_area * w;
  return g;
}

constexpr double kExpClamp = 4.0;

}  // namespace

template <typename T>
DetectionLoss<T> detection_loss(const RawPrediction<T>& raw, const TargetAssignment& targets,
                                const BackboneConfig& config, const LossWeights& weights, Tape<T>* tape) {
  weights.validate();
  // accumulates in double, or in T when T is wider
  using A = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;
  const int k = config.num_classes;
  const int per_box = 5 + k;
  DetectionLoss<T> result;
  LossReport& rep = result.report;

  // Per-scale gradient buffers, filled during the forward pass.
  std::array<std::vector<T>, 3> grads;
  std::array<A, 3> obj_terms{}, loc_terms{}, cls_terms{};
  for (int s = 0; s < 3; ++s) {
    const Tensor<T>& t = raw.scales[static_cast<std::size_t>(s)];
    const ScaleTargets& st = targets.scales[static_cast<std::size_t>(s)];
    if (t.rank() != 4 || t.dim(0) != st.images || t.dim(1) != config.prediction_channels() ||
        t.dim(2) != st.height || t.dim(3) != st.width) {
      throw DimensionError("detection_loss: scale " + std::to_string(s) + " prediction " + shape_str(t.shape()) +
                           " inconsistent with targets");
    }
    const A wo = weights.lambda_o * weights.alpha_o[static_cast<std::size_t>(s)];
    const A wl = weights.lambda_l * weights.alpha_l[static_cast<std::size_t>(s)];
    const A wc = weights.lambda_c * weights.alpha_c[static_cast<std::size_t>(s)];
    const std::size_t hw = static_cast<std::size_t>(st.height) * st.width;
    auto d = t.data();
    std::vector<T>& g = grads[static_cast<std::size_t>(s)];
    g.assign(t.numel(), T(0));
    auto offset = [&](int img, int a, int field) {
      return (static_cast<std::size_t>(img) * t.dim(1) + static_cast<std::size_t>(a) * per_box + field) * hw;
    };

    // Objectness over every cell.
    const std::size_t cells = st.objectness.size();
    A obj = 0.0;
    for (int img = 0; img < st.images; ++img) {
      for (int a = 0; a < st.anchors; ++a) {
        const std::size_t base = offset(img, a, 4);
        const std::size_t tbase = (static_cast<std::size_t>(img) * st.anchors + a) * hw;
        for (std::size_t p = 0; p < hw; ++p) {
          const A x = d[base + p];
          const A y = st.objectness[tbase + p];
          obj += bce<A>(x, y);
          g[base + p] += static_cast<T>(wo * (stable_sigmoid(x) - y) / static_cast<A>(cells));
        }
      }
    }
    obj /= static_cast<A>(cells);

    // Localization and classification over positive cells.
    A loc = 0.0, cls = 0.0;
    const std::size_t npos = st.positives.size();
    const A stride = config.scale_stride(s);
    for (const PositiveCell& pc : st.positives) {
      const std::size_t p = static_cast<std::size_t>(pc.y) * st.width + pc.x;
      const std::size_t b0 = offset(pc.image, pc.anchor, 0);
      const A tx = d[b0 + p], ty = d[b0 + hw + p], tw = d[b0 + 2 * hw + p], th = d[b0 + 3 * hw + p];
      const A sx = stable_sigmoid(tx), sy = stable_sigmoid(ty);
      const A anchor = config.anchor(s, pc.anchor);
      const A cw = std::clamp(tw, -A(kExpClamp), A(kExpClamp)), ch = std::clamp(th, -A(kExpClamp), A(kExpClamp));
      const A bw = anchor * std::exp(cw), bh = anchor * std::exp(ch);
      const IouGrad<A> ig = iou_with_grad<A>((pc.x + sx) * stride, (pc.y + sy) * stride, bw, bh, pc.target);
      loc += 1.0 - ig.iou;
      const A coef = -wl / static_cast<A>(npos);
      g[b0 + p] += static_cast<T>(coef * ig.dcx * stride * sx * (1 - sx));
      g[b0 + hw + p] += static_cast<T>(coef * ig.dcy * stride * sy * (1 - sy));
      if (std::abs(tw) < A(kExpClamp)) g[b0 + 2 * hw + p] += static_cast<T>(coef * ig.dw * bw);
      if (std::abs(th) < A(kExpClamp)) g[b0 + 3 * hw + p] += static_cast<T>(coef * ig.dh * bh);

      const A denom = static_cast<A>(npos) * k;
      for (int c = 0; c < k; ++c) {
        const std::size_t ci = b0 + static_cast<std::size_t>(5 + c) * hw + p;
        const A x = d[ci];
        const A y = c == pc.class_id ? 1.0 : 0.0;
        cls += bce<A>(x, y);
        g[ci] += static_cast<T>(wc * (stable_sigmoid(x) - y) / denom);
      }
    }
    if (npos > 0) {
      loc /= static_cast<A>(npos);
      cls /= static_cast<A>(npos) * k;
    }
    obj_terms[static_cast<std::size_t>(s)] = obj;
    loc_terms[static_cast<std::size_t>(s)] = loc;
    cls_terms[static_cast<std::size_t>(s)] = cls;
  }
  // all objectness terms first, then localization, then classification
  A sum_o = 0, sum_l = 0, sum_c = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    sum_o += weights.alpha_o[s] * obj_terms[s];
    sum_l += weights.alpha_l[s] * loc_terms[s];
    sum_c += weights.alpha_c[s] * cls_terms[s];
    rep.obj[s] = static_cast<double>(obj_terms[s]);
    rep.loc[s] = static_cast<double>(loc_terms[s]);
    rep.cls[s] = static_cast<double>(cls_terms[s]);
  }
  const A detection = weights.lambda_o * sum_o + weights.lambda_l * sum_l + weights.lambda_c * sum_c;
  rep.detection = static_cast<double>(detection);
  rep.total = weights.c1 * rep.detection;

  result.value = Tensor<T>::scalar(static_cast<T>(detection));
  const bool record = tape != nullptr && Tape<T>::any_requires_grad({&raw.scales[0], &raw.scales[1], &raw.scales[2]});
  if (record) {
    tape->record("detection_loss", {raw.scales[0], raw.scales[1], raw.scales[2]}, result.value,
                 [scales = raw.scales, grads = std::move(grads), out = result.value]() mutable {
                   const T up = out.grad_buffer()[0];
                   for (std::size_t s = 0; s < 3; ++s) {
                     if (!scales[s].requires_grad()) continue;
                     auto dst = scales[s].grad_buffer();
                     for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += up * grads[s][i];
                   }
                 });
  }
  return result;
}

template <typename T>
Tensor<T> sr_loss(const Tensor<T>& s, const Tensor<T>& x, int stride_ratio, Tape<T>* tape) {
  if (stride_ratio <= 0) throw ArgumentError("sr_loss: stride ratio must be positive");
  if (s.rank() != 4 || x.rank() != 4 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1)) {
    throw DimensionError("sr_loss: " + shape_str(s.shape()) + " vs " + shape_str(x.shape()));
  }
  if (x.dim(2) != s.dim(2) * stride_ratio || x.dim(3) != s.dim(3) * stride_ratio) {
    throw DimensionError("sr_loss: reference " + shape_str(x.shape()) + " is not " + std::to_string(stride_ratio) +
                         "x the reconstruction " + shape_str(s.shape()));
  }
  Tensor<T> reference = resize_spatial(x, stride_ratio, ResizeMode::DownAvg, tape);
  return mean_abs_diff(s, reference, tape);
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& detection, const Tensor<T>& sr, const LossWeights& weights, Tape<T>* tape) {
  const Tensor<T> zero = Tensor<T>::scalar(T(0));
  const std::array<Tensor<T>, 2> terms{detection, sr.defined() ? sr : zero};
  const std::array<double, 2> w{weights.c1, weights.c2};
  return weighted_sum<T>(terms, w, tape);
}

#define MEAF_INSTANTIATE_LOSSES(T)                                                                            \
  template DetectionLoss<T> detection_loss(const RawPrediction<T>&, const TargetAssignment&,                 \
                                           const BackboneConfig&, const LossWeights&, Tape<T>*);              \
  template Tensor<T> sr_loss(const Tensor<T>&, const Tensor<T>&, int, Tape<T>*);                              \
  template Tensor<T> total_loss(const Tensor<T>&, const Tensor<T>&, const LossWeights&, Tape<T>*);

MEAF_INSTANTIATE_LOSSES(float)
MEAF_INSTANTIATE_LOSSES(double)
MEAF_INSTANTIATE_LOSSES(long double)

#undef MEAF_INSTANTIATE_LOSSES

}  // namespace meaf
