#include "meaf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace meaf {

std::string_view to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::ReLU:
      return "relu";
    case ActivationKind::Sigmoid:
      return "sigmoid";
    case ActivationKind::SiLU:
      return "silu";
    case ActivationKind::Identity:
      return "identity";
  }
  return "identity";
}

ActivationKind parse_activation(std::string_view name) {
  if (name == "relu") return ActivationKind::ReLU;
  if (name == "sigmoid") return ActivationKind::Sigmoid;
  if (name == "silu") return ActivationKind::SiLU;
  if (name == "identity") return ActivationKind::Identity;
  throw ArgumentError("unknown activation '" + std::string(name) + "'");
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    const T z = std::exp(-x);
    return T(1) / (T(1) + z);
  }
  const T z = std::exp(x);
  return z / (T(1) + z);
}

template float stable_sigmoid<float>(float);
template double stable_sigmoid<double>(double);
template long double stable_sigmoid<long double>(long double);

namespace {

void require_rank(const Shape& s, int rank, const char* what) {
  if (static_cast<int>(s.size()) != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

struct ConvGeometry {
  int n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  int k() const { return cin * kh * kw; }
  int p() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const int p = g.p();
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        T* row = col + static_cast<std::size_t>((c * g.kh + ky) * g.kw + kx) * p;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = img + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* img) {
  const int p = g.p();
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const T* row = col + static_cast<std::size_t>((c * g.kh + ky) * g.kw + kx) * p;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = img + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          const T* src = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// C[m,n] += Σ_k A[m,k] B[k,n]
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    const T* arow = a + static_cast<std::size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = b + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += Σ_k A[m,k] B[n,k]
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<std::size_t>(j) * k;
      T acc = T(0);
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      c[static_cast<std::size_t>(i) * n + j] += acc;
    }
  }
}

// C[m,n] += Σ_k A[k,m] B[k,n]
template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c) {
  for (int kk = 0; kk < k; ++kk) {
    const T* arow = a + static_cast<std::size_t>(kk) * m;
    const T* brow = b + static_cast<std::size_t>(kk) * n;
    for (int i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
bool should_record(Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
  return tape != nullptr && Tape<T>::any_requires_grad(inputs);
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int padding,
                 Tape<T>* tape) {
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  if (stride <= 0) throw ArgumentError("conv2d: stride must be positive");
  if (padding < 0) throw ArgumentError("conv2d: padding must be non-negative");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2),
                 weight.dim(3), stride, padding, 0, 0};
  if (weight.dim(1) != g.cin) {
    throw DimensionError("conv2d: input has " + std::to_string(g.cin) + " channels, weight expects " +
                         std::to_string(weight.dim(1)));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ArgumentError("conv2d: kernel sizes must be odd");
  if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw) {
    throw DimensionError("conv2d: padded input smaller than kernel");
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(g.cout) + " output channels");
  }
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;

  Tensor<T> out(Shape{g.n, g.cout, g.ho, g.wo});
  const std::size_t in_stride = static_cast<std::size_t>(g.cin) * g.h * g.w;
  const std::size_t out_stride = static_cast<std::size_t>(g.cout) * g.p();
  std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.k()) * g.p());
  const T* x = input.data().data();
  const T* wt = weight.data().data();
  T* y = out.mutable_data().data();
  for (int n = 0; n < g.n; ++n) {
    T* yn = y + n * out_stride;
    if (bias.defined()) {
      for (int o = 0; o < g.cout; ++o) std::fill(yn + o * g.p(), yn + (o + 1) * g.p(), bias.at(o));
    }
    const T* cols = x + n * in_stride;
    if (!g.pointwise()) {
      im2col(cols, g, col.data());
      cols = col.data();
    }
    gemm_nn(g.cout, g.p(), g.k(), wt, cols, yn);
  }

  if (should_record(tape, {&input, &weight, &bias})) {
    tape->record("conv2d", {input, weight, bias}, out,
                 [x = input, w = weight, b = bias, o = out, g, in_stride, out_stride]() mutable {
                   const T* dy = o.grad_buffer().data();
                   const T* xd = x.data().data();
                   std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.k()) * g.p());
                   std::vector<T> dcol(static_cast<std::size_t>(g.k()) * g.p());
                   T* dw = w.requires_grad() ? w.grad_buffer().data() : nullptr;
                   T* dx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
                   T* db = (b.defined() && b.requires_grad()) ? b.grad_buffer().data() : nullptr;
                   for (int n = 0; n < g.n; ++n) {
                     const T* dyn = dy + n * out_stride;
                     if (db != nullptr) {
                       for (int oc = 0; oc < g.cout; ++oc) {
                         T acc = T(0);
                         for (int p = 0; p < g.p(); ++p) acc += dyn[oc * g.p() + p];
                         db[oc] += acc;
                       }
                     }
                     if (dw != nullptr) {
                       const T* cols = xd + n * in_stride;
                       if (!g.pointwise()) {
                         im2col(cols, g, col.data());
                         cols = col.data();
                       }
                       gemm_nt(g.cout, g.k(), g.p(), dyn, cols, dw);
                     }
                     if (dx != nullptr) {
                       if (g.pointwise()) {
                         gemm_tn(g.k(), g.p(), g.cout, w.data().data(), dyn, dx + n * in_stride);
                       } else {
                         std::fill(dcol.begin(), dcol.end(), T(0));
                         gemm_tn(g.k(), g.p(), g.cout, w.data().data(), dyn, dcol.data());
                         col2im_add(dcol.data(), g, dx + n * in_stride);
                       }
                     }
                   }
                 });
  }
  return out;
}

// ---------------------------------------------------------------------------
// activation

template <typename T>
Tensor<T> activation(const Tensor<T>& input, ActivationKind kind, Tape<T>* tape) {
  Tensor<T> out(input.shape());
  auto x = input.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    switch (kind) {
      case ActivationKind::ReLU:
        y[i] = v > T(0) ? v : T(0);
        break;
      case ActivationKind::Sigmoid:
        // keep the map inside the open interval once the tails round off
        y[i] = std::clamp(stable_sigmoid(v), std::numeric_limits<T>::denorm_min(),
                          T(1) - std::numeric_limits<T>::epsilon() / 2);
        break;
      case ActivationKind::SiLU:
        y[i] = v * stable_sigmoid(v);
        break;
      case ActivationKind::Identity:
        y[i] = v;
        break;
    }
  }
  if (should_record(tape, {&input})) {
    tape->record(std::string(to_string(kind)), {input}, out, [in = input, o = out, kind]() mutable {
      auto dy = o.grad_buffer();
      auto dx = in.grad_buffer();
      auto x = in.data();
      auto y = o.data();
      for (std::size_t i = 0; i < dx.size(); ++i) {
        switch (kind) {
          case ActivationKind::ReLU:
            if (x[i] > T(0)) dx[i] += dy[i];
            break;
          case ActivationKind::Sigmoid:
            dx[i] += dy[i] * y[i] * (T(1) - y[i]);
            break;
          case ActivationKind::SiLU: {
            const T s = stable_sigmoid(x[i]);
            dx[i] += dy[i] * (s + x[i] * s * (T(1) - s));
            break;
          }
          case ActivationKind::Identity:
            dx[i] += dy[i];
            break;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// channel_stats

template <typename T>
Tensor<T> channel_stats(const Tensor<T>& input, Tape<T>* tape) {
  require_rank(input.shape(), 4, "channel_stats");
  const int n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (c < 1) throw DimensionError("channel_stats: need at least one channel");
  Tensor<T> out(Shape{n, 2, input.dim(2), input.dim(3)});
  std::vector<int> argmax(static_cast<std::size_t>(n) * hw);
  auto x = input.data();
  auto y = out.mutable_data();
  for (int b = 0; b < n; ++b) {
    const T* xb = x.data() + static_cast<std::size_t>(b) * c * hw;
    T* avg = y.data() + static_cast<std::size_t>(b) * 2 * hw;
    T* mx = avg + hw;
    for (int p = 0; p < hw; ++p) {
      T s = xb[p];
      T m = xb[p];
      int am = 0;
      for (int ch = 1; ch < c; ++ch) {
        const T v = xb[static_cast<std::size_t>(ch) * hw + p];
        s += v;
        if (v > m) {
          m = v;
          am = ch;
        }
      }
      avg[p] = s / static_cast<T>(c);
      mx[p] = m;
      argmax[static_cast<std::size_t>(b) * hw + p] = am;
    }
  }
  if (should_record(tape, {&input})) {
    tape->record("channel_stats", {input}, out, [in = input, o = out, argmax, n, c, hw]() mutable {
      auto dy = o.grad_buffer();
      auto dx = in.grad_buffer();
      const T inv_c = T(1) / static_cast<T>(c);
      for (int b = 0; b < n; ++b) {
        T* dxb = dx.data() + static_cast<std::size_t>(b) * c * hw;
        const T* davg = dy.data() + static_cast<std::size_t>(b) * 2 * hw;
        const T* dmax = davg + hw;
        for (int ch = 0; ch < c; ++ch) {
          for (int p = 0; p < hw; ++p) dxb[static_cast<std::size_t>(ch) * hw + p] += davg[p] * inv_c;
        }
        for (int p = 0; p < hw; ++p) {
          dxb[static_cast<std::size_t>(argmax[static_cast<std::size_t>(b) * hw + p]) * hw + p] += dmax[p];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// global_avg_pool

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input, Tape<T>* tape) {
  require_rank(input.shape(), 4, "global_avg_pool");
  const int n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (hw < 1) throw DimensionError("global_avg_pool: empty spatial extent");
  Tensor<T> out(Shape{n, c});
  auto x = input.data();
  auto y = out.mutable_data();
  for (int i = 0; i < n * c; ++i) {
    T s = T(0);
    const T* xi = x.data() + static_cast<std::size_t>(i) * hw;
    for (int p = 0; p < hw; ++p) s += xi[p];
    y[i] = s / static_cast<T>(hw);
  }
  if (should_record(tape, {&input})) {
    tape->record("global_avg_pool", {input}, out, [in = input, o = out, n, c, hw]() mutable {
      auto dy = o.grad_buffer();
      auto dx = in.grad_buffer();
      for (int i = 0; i < n * c; ++i) {
        const T g = dy[i] / static_cast<T>(hw);
        T* dxi = dx.data() + static_cast<std::size_t>(i) * hw;
        for (int p = 0; p < hw; ++p) dxi[p] += g;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// fully_connected

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Tape<T>* tape) {
  require_rank(input.shape(), 2, "fully_connected input");
  require_rank(weight.shape(), 2, "fully_connected weight");
  const int n = input.dim(0), din = input.dim(1), dout = weight.dim(0);
  if (weight.dim(1) != din) {
    throw DimensionError("fully_connected: input width " + std::to_string(din) + " vs weight " +
                         shape_str(weight.shape()));
  }
  if (!bias.defined() || bias.rank() != 1 || bias.dim(0) != dout) {
    throw DimensionError("fully_connected: bias must have shape [" + std::to_string(dout) + "]");
  }
  Tensor<T> out(Shape{n, dout});
  auto x = input.data();
  auto w = weight.data();
  auto y = out.mutable_data();
  for (int b = 0; b < n; ++b) {
    for (int o = 0; o < dout; ++o) {
      T acc = bias.at(o);
      for (int i = 0; i < din; ++i) acc += w[static_cast<std::size_t>(o) * din + i] * x[static_cast<std::size_t>(b) * din + i];
      y[static_cast<std::size_t>(b) * dout + o] = acc;
    }
  }
  if (should_record(tape, {&input, &weight, &bias})) {
    tape->record("fully_connected", {input, weight, bias}, out,
                 [in = input, wt = weight, bs = bias, o = out, n, din, dout]() mutable {
                   auto dy = o.grad_buffer();
                   auto x = in.data();
                   auto w = wt.data();
                   for (int b = 0; b < n; ++b) {
                     for (int oc = 0; oc < dout; ++oc) {
                       const T g = dy[static_cast<std::size_t>(b) * dout + oc];
                       if (bs.requires_grad()) bs.grad_buffer()[oc] += g;
                       if (wt.requires_grad()) {
                         auto dw = wt.grad_buffer();
                         for (int i = 0; i < din; ++i) {
                           dw[static_cast<std::size_t>(oc) * din + i] += g * x[static_cast<std::size_t>(b) * din + i];
                         }
                       }
                       if (in.requires_grad()) {
                         auto dx = in.grad_buffer();
                         for (int i = 0; i < din; ++i) {
                           dx[static_cast<std::size_t>(b) * din + i] += g * w[static_cast<std::size_t>(oc) * din + i];
                         }
                       }
                     }
                   }
                 });
  }
  return out;
}

// ---------------------------------------------------------------------------
// concat / slice

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  require_rank(a.shape(), 4, "concat_channels a");
  require_rank(b.shape(), 4, "concat_channels b");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw DimensionError("concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<T> out(Shape{n, ca + cb, a.dim(2), a.dim(3)});
  auto y = out.mutable_data();
  const std::size_t sa = static_cast<std::size_t>(ca) * hw, sb = static_cast<std::size_t>(cb) * hw;
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * sa, sa, y.data() + i * (sa + sb));
    std::copy_n(b.data().data() + i * sb, sb, y.data() + i * (sa + sb) + sa);
  }
  if (should_record(tape, {&a, &b})) {
    tape->record("concat_channels", {a, b}, out, [ta = a, tb = b, o = out, n, sa, sb]() mutable {
      auto dy = o.grad_buffer();
      for (int i = 0; i < n; ++i) {
        const T* src = dy.data() + i * (sa + sb);
        if (ta.requires_grad()) {
          T* d = ta.grad_buffer().data() + i * sa;
          for (std::size_t k = 0; k < sa; ++k) d[k] += src[k];
        }
        if (tb.requires_grad()) {
          T* d = tb.grad_buffer().data() + i * sb;
          for (std::size_t k = 0; k < sb; ++k) d[k] += src[sa + k];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, int begin, int end, Tape<T>* tape) {
  require_rank(input.shape(), 4, "slice_channels");
  const int c = input.dim(1);
  if (begin < 0 || end < begin || end > c) {
    throw DimensionError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + std::to_string(c) + " channels");
  }
  const int n = input.dim(0), hw = input.dim(2) * input.dim(3);
  Tensor<T> out(Shape{n, end - begin, input.dim(2), input.dim(3)});
  const std::size_t len = static_cast<std::size_t>(end - begin) * hw;
  const std::size_t stride = static_cast<std::size_t>(c) * hw;
  const std::size_t offset = static_cast<std::size_t>(begin) * hw;
  for (int i = 0; i < n; ++i) {
    std::copy_n(input.data().data() + i * stride + offset, len, out.mutable_data().data() + i * len);
  }
  if (should_record(tape, {&input})) {
    tape->record("slice_channels", {input}, out, [in = input, o = out, n, len, stride, offset]() mutable {
      auto dy = o.grad_buffer();
      auto dx = in.grad_buffer();
      for (int i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < len; ++k) dx[i * stride + offset + k] += dy[i * len + k];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

enum class Broadcast { Same, Scalar, Spatial, Channel };

Broadcast classify(const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::Same;
  if (shape_numel(b) == 1) return Broadcast::Scalar;
  if (a.size() == 4 && b.size() == 4 && b[0] == a[0] && b[1] == 1 && b[2] == a[2] && b[3] == a[3]) {
    return Broadcast::Spatial;
  }
  if (a.size() == 4 && b.size() == 2 && b[0] == a[0] && b[1] == a[1]) return Broadcast::Channel;
  throw DimensionError("elementwise: cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
}

// Index into b for flat index i of a.
struct BroadcastIndex {
  Broadcast kind;
  std::size_t c = 1, hw = 1;
  std::size_t operator()(std::size_t i) const {
    switch (kind) {
      case Broadcast::Same:
        return i;
      case Broadcast::Scalar:
        return 0;
      case Broadcast::Spatial:
        return (i / (c * hw)) * hw + i % hw;
      case Broadcast::Channel:
        return i / hw;
    }
    return i;
  }
};

}  // namespace

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, ElementwiseMode mode, Tape<T>* tape) {
  BroadcastIndex bi{classify(a.shape(), b.shape())};
  if (a.rank() == 4) {
    bi.c = static_cast<std::size_t>(a.dim(1));
    bi.hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  }
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto z = b.data();
  auto y = out.mutable_data();
  if (mode == ElementwiseMode::Add) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + z[bi(i)];
  } else {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[bi(i)];
  }
  if (should_record(tape, {&a, &b})) {
    tape->record(mode == ElementwiseMode::Add ? "add" : "mul", {a, b}, out,
                 [ta = a, tb = b, o = out, mode, bi]() mutable {
                   auto dy = o.grad_buffer();
                   auto x = ta.data();
                   auto z = tb.data();
                   if (ta.requires_grad()) {
                     auto da = ta.grad_buffer();
                     for (std::size_t i = 0; i < dy.size(); ++i) {
                       da[i] += mode == ElementwiseMode::Add ? dy[i] : dy[i] * z[bi(i)];
                     }
                   }
                   if (tb.requires_grad()) {
                     auto db = tb.grad_buffer();
                     for (std::size_t i = 0; i < dy.size(); ++i) {
                       db[bi(i)] += mode == ElementwiseMode::Add ? dy[i] : dy[i] * x[i];
                     }
                   }
                 });
  }
  return out;
}

// ---------------------------------------------------------------------------
// resize_spatial

template <typename T>
Tensor<T> resize_spatial(const Tensor<T>& input, int factor, ResizeMode mode, Tape<T>* tape) {
  require_rank(input.shape(), 4, "resize_spatial");
  if (factor <= 0) throw ArgumentError("resize_spatial: factor must be positive");
  const int nc = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  const bool up = mode == ResizeMode::UpNearest;
  if (!up && (h % factor != 0 || w % factor != 0)) {
    throw DimensionError("resize_spatial: " + shape_str(input.shape()) + " not divisible by " + std::to_string(factor));
  }
  const int ho = up ? h * factor : h / factor;
  const int wo = up ? w * factor : w / factor;
  Tensor<T> out(Shape{input.dim(0), input.dim(1), ho, wo});
  auto x = input.data();
  auto y = out.mutable_data();
  const T inv_area = T(1) / static_cast<T>(factor * factor);
  for (int i = 0; i < nc; ++i) {
    const T* xi = x.data() + static_cast<std::size_t>(i) * h * w;
    T* yi = y.data() + static_cast<std::size_t>(i) * ho * wo;
    if (up) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) yi[oy * wo + ox] = xi[(oy / factor) * w + ox / factor];
      }
    } else {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          T s = T(0);
          for (int dy = 0; dy < factor; ++dy) {
            for (int dx = 0; dx < factor; ++dx) s += xi[(oy * factor + dy) * w + ox * factor + dx];
          }
          yi[oy * wo + ox] = s * inv_area;
        }
      }
    }
  }
  if (should_record(tape, {&input})) {
    tape->record(up ? "up_nearest" : "down_avg", {input}, out,
                 [in = input, o = out, nc, h, w, ho, wo, factor, up, inv_area]() mutable {
                   auto dy = o.grad_buffer();
                   auto dx = in.grad_buffer();
                   for (int i = 0; i < nc; ++i) {
                     T* dxi = dx.data() + static_cast<std::size_t>(i) * h * w;
                     const T* dyi = dy.data() + static_cast<std::size_t>(i) * ho * wo;
                     if (up) {
                       for (int oy = 0; oy < ho; ++oy) {
                         for (int ox = 0; ox < wo; ++ox) dxi[(oy / factor) * w + ox / factor] += dyi[oy * wo + ox];
                       }
                     } else {
                       for (int y = 0; y < h; ++y) {
                         for (int x = 0; x < w; ++x) dxi[y * w + x] += dyi[(y / factor) * wo + x / factor] * inv_area;
                       }
                     }
                   }
                 });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& input, Tape<T>* tape) {
  T s = T(0);
  for (T v : input.data()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  if (should_record(tape, {&input})) {
    tape->record("sum", {input}, out, [in = input, o = out]() mutable {
      const T g = o.grad_buffer()[0];
      for (T& d : in.grad_buffer()) d += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& input, Tape<T>* tape) {
  if (input.numel() == 0) throw DimensionError("mean of empty tensor");
  T s = T(0);
  for (T v : input.data()) s += v;
  const T inv = T(1) / static_cast<T>(input.numel());
  Tensor<T> out = Tensor<T>::scalar(s * inv);
  if (should_record(tape, {&input})) {
    tape->record("mean", {input}, out, [in = input, o = out, inv]() mutable {
      const T g = o.grad_buffer()[0] * inv;
      for (T& d : in.grad_buffer()) d += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_abs_diff(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mean_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (a.numel() == 0) throw DimensionError("mean_abs_diff of empty tensors");
  auto x = a.data();
  auto z = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(static_cast<double>(x[i]) - static_cast<double>(z[i]));
  const T inv = T(1) / static_cast<T>(a.numel());
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(a.numel())));
  if (should_record(tape, {&a, &b})) {
    tape->record("mean_abs_diff", {a, b}, out, [ta = a, tb = b, o = out, inv]() mutable {
      const T g = o.grad_buffer()[0] * inv;
      auto x = ta.data();
      auto z = tb.data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        const T sgn = x[i] > z[i] ? T(1) : (x[i] < z[i] ? T(-1) : T(0));
        if (ta.requires_grad()) ta.grad_buffer()[i] += g * sgn;
        if (tb.requires_grad()) tb.grad_buffer()[i] -= g * sgn;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> weighted_sum(std::span<const Tensor<T>> terms, std::span<const double> weights, Tape<T>* tape) {
  if (terms.size() != weights.size()) throw ArgumentError("weighted_sum: terms/weights length mismatch");
  T s = T(0);
  bool record = tape != nullptr;
  bool any = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].numel() != 1) throw DimensionError("weighted_sum: terms must be single-element tensors");
    s += static_cast<T>(weights[i]) * terms[i].item();
    any = any || terms[i].requires_grad();
  }
  Tensor<T> out = Tensor<T>::scalar(s);
  if (record && any) {
    std::vector<Tensor<T>> inputs(terms.begin(), terms.end());
    std::vector<double> w(weights.begin(), weights.end());
    tape->record("weighted_sum", inputs, out, [inputs, w, o = out]() mutable {
      const T g = o.grad_buffer()[0];
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (inputs[i].requires_grad()) inputs[i].grad_buffer()[0] += g * static_cast<T>(w[i]);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

#define MEAF_INSTANTIATE_OPS(T)                                                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int, Tape<T>*);       \
  template Tensor<T> activation(const Tensor<T>&, ActivationKind, Tape<T>*);                                 \
  template Tensor<T> channel_stats(const Tensor<T>&, Tape<T>*);                                              \
  template Tensor<T> global_avg_pool(const Tensor<T>&, Tape<T>*);                                            \
  template Tensor<T> fully_connected(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tape<T>*);        \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                          \
  template Tensor<T> slice_channels(const Tensor<T>&, int, int, Tape<T>*);                                   \
  template Tensor<T> elementwise(const Tensor<T>&, const Tensor<T>&, ElementwiseMode, Tape<T>*);             \
  template Tensor<T> resize_spatial(const Tensor<T>&, int, ResizeMode, Tape<T>*);                            \
  template Tensor<T> sum(const Tensor<T>&, Tape<T>*);                                                        \
  template Tensor<T> mean(const Tensor<T>&, Tape<T>*);                                                       \
  template Tensor<T> mean_abs_diff(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                            \
  template Tensor<T> weighted_sum(std::span<const Tensor<T>>, std::span<const double>, Tape<T>*);

MEAF_INSTANTIATE_OPS(float)
MEAF_INSTANTIATE_OPS(double)
MEAF_INSTANTIATE_OPS(long double)

#undef MEAF_INSTANTIATE_OPS

}  // namespace meaf
