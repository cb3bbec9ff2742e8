#pragma once

#include <array>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "meaf/fusion.hpp"
#include "meaf/losses.hpp"

namespace meaf::testing {

// One differentiable op applied to random inputs of fixed shapes.
struct OpCase {
  std::string name;
  std::vector<Shape> shapes;
  // Both precisions share one definition.
  std::function<Tensor<float>(const std::vector<Tensor<float>>&, Tape<float>*)> f32;
  std::function<Tensor<double>(const std::vector<Tensor<double>>&, Tape<double>*)> f64;
  std::function<Tensor<Wide>(const std::vector<Tensor<Wide>>&, Tape<Wide>*)> wide;
};

#define MEAF_OP_CASE(NAME, SHAPES, ...)                                                                    \
  OpCase {                                                                                                 \
    NAME, SHAPES, [](const std::vector<Tensor<float>>& in, Tape<float>* tape) -> Tensor<float> __VA_ARGS__, \
        [](const std::vector<Tensor<double>>& in, Tape<double>* tape) -> Tensor<double> __VA_ARGS__,        \
        [](const std::vector<Tensor<Wide>>& in, Tape<Wide>* tape) -> Tensor<Wide> __VA_ARGS__               \
  }

inline std::vector<OpCase> op_cases() {
  using S = std::vector<Shape>;
  std::vector<OpCase> c;
  c.push_back(MEAF_OP_CASE("conv2d 3x3 s1 p1", (S{{2, 2, 5, 5}, {3, 2, 3, 3}, {3}}),
                           { return conv2d(in[0], in[1], in[2], 1, 1, tape); }));
  c.push_back(MEAF_OP_CASE("conv2d 3x3 s2 p1", (S{{1, 3, 8, 6}, {4, 3, 3, 3}, {4}}),
                           { return conv2d(in[0], in[1], in[2], 2, 1, tape); }));
  c.push_back(MEAF_OP_CASE("conv2d 1x1 no bias", (S{{2, 4, 3, 5}, {2, 4, 1, 1}}),
                           { return conv2d(in[0], in[1], decltype(in[0]){}, 1, 0, tape); }));
  c.push_back(MEAF_OP_CASE("relu", (S{{2, 3, 4, 4}}), { return activation(in[0], ActivationKind::ReLU, tape); }));
  c.push_back(
      MEAF_OP_CASE("sigmoid", (S{{2, 3, 4, 4}}), { return activation(in[0], ActivationKind::Sigmoid, tape); }));
  c.push_back(MEAF_OP_CASE("silu", (S{{2, 3, 4, 4}}), { return activation(in[0], ActivationKind::SiLU, tape); }));
  c.push_back(
      MEAF_OP_CASE("identity", (S{{2, 3, 4, 4}}), { return activation(in[0], ActivationKind::Identity, tape); }));
  c.push_back(MEAF_OP_CASE("channel_stats", (S{{2, 5, 3, 4}}), { return channel_stats(in[0], tape); }));
  c.push_back(MEAF_OP_CASE("global_avg_pool", (S{{2, 3, 4, 5}}), { return global_avg_pool(in[0], tape); }));
  c.push_back(MEAF_OP_CASE("fully_connected", (S{{2, 4}, {3, 4}, {3}}),
                           { return fully_connected(in[0], in[1], in[2], tape); }));
  c.push_back(MEAF_OP_CASE("concat_channels", (S{{2, 3, 4, 4}, {2, 1, 4, 4}}),
                           { return concat_channels(in[0], in[1], tape); }));
  c.push_back(MEAF_OP_CASE("slice_channels", (S{{2, 5, 3, 3}}), { return slice_channels(in[0], 1, 4, tape); }));
  c.push_back(MEAF_OP_CASE("add same shape", (S{{2, 3, 4, 4}, {2, 3, 4, 4}}),
                           { return elementwise(in[0], in[1], ElementwiseMode::Add, tape); }));
  c.push_back(MEAF_OP_CASE("mul same shape", (S{{2, 3, 4, 4}, {2, 3, 4, 4}}),
                           { return elementwise(in[0], in[1], ElementwiseMode::Mul, tape); }));
  c.push_back(MEAF_OP_CASE("mul scalar", (S{{2, 3, 4, 4}, {1}}),
                           { return elementwise(in[0], in[1], ElementwiseMode::Mul, tape); }));
  c.push_back(MEAF_OP_CASE("mul spatial map", (S{{2, 4, 3, 5}, {2, 1, 3, 5}}),
                           { return elementwise(in[0], in[1], ElementwiseMode::Mul, tape); }));
  c.push_back(MEAF_OP_CASE("mul channel vector", (S{{2, 4, 3, 5}, {2, 4}}),
                           { return elementwise(in[0], in[1], ElementwiseMode::Mul, tape); }));
  c.push_back(MEAF_OP_CASE("add channel vector", (S{{2, 4, 3, 5}, {2, 4}}),
                           { return elementwise(in[0], in[1], ElementwiseMode::Add, tape); }));
  c.push_back(MEAF_OP_CASE("up_nearest x2", (S{{2, 3, 3, 4}}),
                           { return resize_spatial(in[0], 2, ResizeMode::UpNearest, tape); }));
  c.push_back(MEAF_OP_CASE("down_avg x2", (S{{2, 3, 6, 4}}),
                           { return resize_spatial(in[0], 2, ResizeMode::DownAvg, tape); }));
  c.push_back(MEAF_OP_CASE("sum", (S{{2, 3, 4}}), { return sum(in[0], tape); }));
  c.push_back(MEAF_OP_CASE("mean", (S{{2, 3, 4}}), { return mean(in[0], tape); }));
  c.push_back(MEAF_OP_CASE("mean_abs_diff", (S{{2, 4, 3, 3}, {2, 4, 3, 3}}),
                           { return mean_abs_diff(in[0], in[1], tape); }));
  c.push_back(MEAF_OP_CASE("weighted_sum", (S{{1}, {1}, {1}}), {
    const std::array<double, 3> w{0.5, 2.0, -1.5};
    return weighted_sum(std::span(in.data(), 3), std::span<const double>(w), tape);
  }));
  c.push_back(MEAF_OP_CASE("sr_loss", (S{{1, 4, 3, 3}, {1, 4, 6, 6}}), { return sr_loss(in[0], in[1], 2, tape); }));
  // A diamond: x feeds two consumers whose results meet again.
  c.push_back(MEAF_OP_CASE("diamond", (S{{2, 3, 4, 4}}), {
    const auto a = activation(in[0], ActivationKind::Sigmoid, tape);
    const auto b = elementwise(in[0], in[0], ElementwiseMode::Mul, tape);
    return elementwise(a, b, ElementwiseMode::Add, tape);
  }));
  return c;
}

#undef MEAF_OP_CASE

// Runs one case in precision T against the same op evaluated in Wide at the
// identical point. Inputs are drawn in float so every precision sees the
// same values.
template <typename T>
GradStats run_op_case(const OpCase& c, std::uint64_t seed, const GradCheckOptions& opt = default_options<T>()) {
  Rng rng(seed);
  std::vector<Tensor<float>> base;
  for (const auto& s : c.shapes) base.push_back(random_normal<float>(s, rng));
  const Shape out_shape = c.f32(base, nullptr).shape();
  const Tensor<float> r = random_normal<float>(out_shape, rng);

  std::vector<Tensor<Wide>> wide;
  NamedTensors<Wide> wide_named;
  std::vector<Tensor<T>> inputs;
  NamedTensors<T> named_in;
  for (std::size_t i = 0; i < base.size(); ++i) {
    wide.push_back(base[i].cast<Wide>());
    wide_named.emplace_back(c.name + "/in" + std::to_string(i), wide.back());
    inputs.push_back(base[i].cast<T>());
    named_in.emplace_back(c.name + "/in" + std::to_string(i), inputs.back());
  }
  const Tensor<Wide> rw = r.cast<Wide>();
  const Tensor<T> rt = r.cast<T>();
  std::function<Probe<Wide>(Tape<Wide>*)> ref = [&](Tape<Wide>* tape) {
    return project(c.wide(wide, tape), rw, tape);
  };
  std::function<Probe<T>(Tape<T>*)> f = [&](Tape<T>* tape) {
    if constexpr (std::is_same_v<T, float>) {
      return project(c.f32(inputs, tape), rt, tape);
    } else {
      return project(c.f64(inputs, tape), rt, tape);
    }
  };
  return check_gradients<T, Wide>(f, named_in, ref, wide_named, rng, opt);
}

}  // namespace meaf::testing
