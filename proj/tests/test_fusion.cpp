#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fusion_reference.hpp"
#include "gradcheck.hpp"
#include "meaf/fusion.hpp"

using namespace meaf;
using namespace meaf::testing;

namespace {

// Per-channel identity kernel of size k (centre tap 1).
template <typename T>
Layer<T> identity_conv(int channels, int k) {
  Tensor<T> w({channels, channels, k, k});
  for (int c = 0; c < channels; ++c) w.mutable_data()[static_cast<std::size_t>(((c * channels + c) * k + k / 2) * k + k / 2)] = 1;
  return Layer<T>{w, Tensor<T>({channels})};
}

template <typename T>
Layer<T> zero_conv(int cin, int cout, int k, T bias = 0) {
  return Layer<T>{Tensor<T>({cout, cin, k, k}), Tensor<T>({cout}, bias)};
}

template <typename T>
FusionParams<T> make_params(std::uint64_t seed, int mid = 4) {
  Rng rng(seed);
  auto p = FusionParams<T>::init(FusionConfig{mid, 2}, rng);
  randomize_attention(p, rng);
  return p;
}

void expect_open_unit(std::span<const float> v, const char* what) {
  for (float x : v) {
    EXPECT_GT(x, 0.0f) << what;
    EXPECT_LT(x, 1.0f) << what;
  }
}

}  // namespace

TEST(ScaleModalities, HalfWeightsHalveTheInput) {
  const auto m = ModalityScale<double>::init(0.5);
  auto [r, i] = scale_modalities(Tensor<double>({1, 3, 2, 2}, 1.0), Tensor<double>({1, 1, 2, 2}, 1.0), m);
  for (double v : r.data()) EXPECT_EQ(v, 0.5);
  for (double v : i.data()) EXPECT_EQ(v, 0.5);
}

TEST(ScaleModalities, OneIsIdentityZeroAnnihilates) {
  Rng rng(2);
  const auto rgb = random_normal<float>({2, 3, 4, 4}, rng), ir = random_normal<float>({2, 1, 4, 4}, rng);
  auto [r1, i1] = scale_modalities(rgb, ir, ModalityScale<float>::init(1.0));
  EXPECT_TRUE(bit_equal(r1, rgb));
  EXPECT_TRUE(bit_equal(i1, ir));
  auto [r0, i0] = scale_modalities(rgb, ir, ModalityScale<float>::init(0.0));
  for (float v : r0.data()) EXPECT_EQ(v, 0.0f);
  for (float v : i0.data()) EXPECT_EQ(v, 0.0f);
}

TEST(ScaleModalities, RejectsMisalignedModalities) {
  const auto m = ModalityScale<float>::init();
  EXPECT_THROW(scale_modalities(Tensor<float>({1, 3, 4, 4}), Tensor<float>({1, 1, 4, 5}), m), DimensionError);
  EXPECT_THROW(scale_modalities(Tensor<float>({2, 3, 4, 4}), Tensor<float>({1, 1, 4, 4}), m), DimensionError);
}

TEST(GenerateMask, ZeroWeightsGiveZeroMask) {
  Rng rng(3);
  const auto x = random_normal<double>({1, 3, 5, 5}, rng);
  const auto m = generate_mask(x, zero_conv<double>(3, 3, 3), zero_conv<double>(3, 3, 1));
  for (double v : m.data()) EXPECT_EQ(v, 0.0);
}

TEST(GenerateMask, IdentityConvsSquareNonNegativeInput) {
  Rng rng(4);
  const auto x = random_uniform<double>({2, 3, 4, 6}, rng, 0.0, 2.0);
  const auto m = generate_mask(x, identity_conv<double>(3, 3), identity_conv<double>(3, 1));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(m.at(i), x.at(i) * x.at(i));
}

TEST(RefineFeatures, ZeroMaskAndIdentityConvPassesInput) {
  Rng rng(5);
  const auto x = random_normal<double>({1, 2, 5, 4}, rng);
  const auto y = refine_features(Tensor<double>(x.shape()), x, identity_conv<double>(2, 3));
  EXPECT_TRUE(bit_equal(y, x));
}

TEST(RefineFeatures, ZeroInputsGiveBiasField) {
  Rng rng(6);
  Layer<double> l = Layer<double>::conv(3, 4, 3, rng);
  l.bias = Tensor<double>({4}, {0.5, -1.0, 2.0, 0.25});
  const Tensor<double> z({1, 3, 3, 3});
  const auto y = refine_features(z, z, l);
  for (int c = 0; c < 4; ++c)
    for (int k = 0; k < 9; ++k) EXPECT_EQ(y.at(static_cast<std::size_t>(c * 9 + k)), l.bias.at(static_cast<std::size_t>(c)));
  EXPECT_THROW(refine_features(Tensor<double>({1, 3, 3, 3}), Tensor<double>({1, 3, 3, 4}), l), DimensionError);
}

TEST(SpatialAttention, ZeroConvGivesUniformHalf) {
  Rng rng(7);
  const auto a = spatial_attention(random_normal<double>({2, 5, 3, 4}, rng), zero_conv<double>(2, 1, 1));
  EXPECT_EQ(a.shape(), (Shape{2, 1, 3, 4}));
  for (double v : a.data()) EXPECT_EQ(v, 0.5);
}

TEST(SpatialAttention, LargeBiasSaturatesToOne) {
  Rng rng(8);
  const auto a = spatial_attention(random_normal<double>({1, 4, 3, 3}, rng), zero_conv<double>(2, 1, 1, 50.0));
  for (double v : a.data()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(ApplyAttention, OnesAndZeros) {
  Rng rng(9);
  const auto x = random_normal<float>({2, 4, 3, 3}, rng);
  EXPECT_TRUE(bit_equal(apply_attention(x, Tensor<float>({2, 1, 3, 3}, 1.0f)), x));
  const auto zeroed = apply_attention(x, Tensor<float>({2, 1, 3, 3}));
  for (float v : zeroed.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(apply_attention(x, Tensor<float>({2, 2, 3, 3})), DimensionError);
}

TEST(ApplyAttention, MatchesLoopOracle) {
  Rng rng(10);
  const auto x = random_normal<double>({2, 4, 3, 5}, rng);
  const auto a = random_uniform<double>({2, 1, 3, 5}, rng, 0.0, 1.0);
  const auto y = apply_attention(x, a);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 4; ++c)
      for (int p = 0; p < 15; ++p)
        EXPECT_EQ(y.at(static_cast<std::size_t>((n * 4 + c) * 15 + p)),
                  x.at(static_cast<std::size_t>((n * 4 + c) * 15 + p)) * a.at(static_cast<std::size_t>(n * 15 + p)));
}

TEST(ChannelExcitation, SaturatedGatePassesConcat) {
  Rng rng(11);
  const auto a = random_normal<double>({1, 4, 3, 3}, rng), b = random_normal<double>({1, 4, 3, 3}, rng);
  const Layer<double> squeeze = Layer<double>::dense(8, 2, rng);
  const Layer<double> expand{Tensor<double>({8, 2}), Tensor<double>({8}, 50.0)};
  Tensor<double> gate;
  const auto y = channel_excitation_fuse(a, b, squeeze, expand, static_cast<Tape<double>*>(nullptr), &gate);
  const auto cat = concat_channels(a, b);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.at(i), cat.at(i), 1e-6);
  EXPECT_EQ(gate.shape(), (Shape{1, 8}));
}

TEST(ChannelExcitation, ZeroInputGivesZeroOutput) {
  Rng rng(12);
  const Tensor<double> z({2, 4, 3, 3});
  const auto y = channel_excitation_fuse(z, z, Layer<double>::dense(8, 2, rng), Layer<double>::dense(2, 8, rng));
  EXPECT_EQ(y.shape(), (Shape{2, 8, 3, 3}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(MeafForward, PreservesSpatialDims) {
  const auto p = make_params<float>(13);
  Rng rng(14);
  for (auto [h, w] : {std::pair{3, 3}, {5, 7}, {17, 4}, {32, 32}}) {
    const auto y = meaf_forward(random_normal<float>({2, 3, h, w}, rng), random_normal<float>({2, 1, h, w}, rng), p);
    EXPECT_EQ(y.shape(), (Shape{2, 8, h, w}));
  }
}

TEST(MeafForward, IsDeterministic) {
  const auto p = make_params<float>(15);
  Rng rng(16);
  const auto rgb = random_normal<float>({1, 3, 8, 8}, rng), ir = random_normal<float>({1, 1, 8, 8}, rng);
  EXPECT_TRUE(bit_equal(meaf_forward(rgb, ir, p), meaf_forward(rgb, ir, p)));
}

TEST(MeafForward, EqualsStagewiseRecomposition) {
  Rng rng(17);
  for (std::uint64_t seed : {18u, 19u, 20u}) {
    const auto p = make_params<float>(seed, 16);
    const auto rgb = random_normal<float>({2, 3, 12, 10}, rng), ir = random_normal<float>({2, 1, 12, 10}, rng);
    FusionTrace<float> trace;
    const auto y = meaf_forward(rgb, ir, p, static_cast<Tape<float>*>(nullptr), &trace);
    EXPECT_TRUE(bit_equal(y, fusion_reference(rgb, ir, p)));
    EXPECT_TRUE(bit_equal(trace.rgb.attended, branch_reference(rgb, p.modal.p_rgb, p.rgb)));
    EXPECT_TRUE(bit_equal(trace.ir.attended, branch_reference(ir, p.modal.p_ir, p.ir)));
    EXPECT_TRUE(bit_equal(trace.fused, y));
  }
}

TEST(MeafForward, StageFunctionsChainToFullForward) {
  const auto p = make_params<double>(21);
  Rng rng(22);
  const auto rgb = random_normal<double>({1, 3, 6, 6}, rng), ir = random_normal<double>({1, 1, 6, 6}, rng);
  auto [r1, i1] = scale_modalities(rgb, ir, p.modal);
  auto chain = [](const Tensor<double>& raw, const Tensor<double>& scaled, const ModalityBranch<double>& b) {
    const auto refined = refine_features(generate_mask(scaled, b.mask3, b.mask1), raw, b.refine);
    return apply_attention(refined, spatial_attention(refined, b.attention));
  };
  const auto y = channel_excitation_fuse(chain(rgb, r1, p.rgb), chain(ir, i1, p.ir), p.squeeze, p.expand);
  EXPECT_TRUE(bit_equal(y, meaf_forward(rgb, ir, p)));
}

TEST(MeafForward, AttentionAndExcitationStayInOpenUnitInterval) {
  Rng rng(23);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = make_params<float>(100 + seed, 16);
    FusionTrace<float> t;
    meaf_forward(random_normal<float>({2, 3, 16, 16}, rng, 3.0), random_normal<float>({2, 1, 16, 16}, rng, 3.0), p,
                 static_cast<Tape<float>*>(nullptr), &t);
    expect_open_unit(t.rgb.attention.data(), "rgb attention");
    expect_open_unit(t.ir.attention.data(), "ir attention");
    expect_open_unit(t.excitation.data(), "excitation");
  }
}

TEST(FusionParams, DefaultsAndNames) {
  Rng rng(24);
  const auto p = FusionParams<float>::init(FusionConfig{}, rng);
  EXPECT_EQ(p.modal.p_rgb.item(), 0.5f);
  EXPECT_EQ(p.modal.p_ir.item(), 0.5f);
  for (const auto* b : {&p.rgb, &p.ir}) {
    EXPECT_TRUE(std::all_of(b->attention.weight.data().begin(), b->attention.weight.data().end(),
                            [](float w) { return w == 0.0f; }));
  }
  EXPECT_EQ(p.squeeze.weight.shape(), (Shape{8, 32}));
  EXPECT_EQ(p.expand.weight.shape(), (Shape{32, 8}));
  const auto params = p.parameters();
  EXPECT_EQ(params.front().name, "fusion.p_rgb");
  EXPECT_FALSE(params.front().decay);
  EXPECT_THROW((FusionConfig{16, 5}.validate()), ArgumentError);
  EXPECT_THROW((FusionConfig{0, 4}.validate()), ArgumentError);
}

// Full fusion forward followed by an L1 loss against a fixed target.
template <typename T>
GradStats fusion_gradients(const GradCheckOptions& opt) {
  auto pf = make_params<T>(25, 4);
  auto pd = make_params<Wide>(25, 4);
  Rng rng(26);
  const auto rgb = random_normal<float>({1, 3, 8, 8}, rng).cast<Wide>();
  const auto ir = random_normal<float>({1, 1, 8, 8}, rng).cast<Wide>();
  const auto target = random_normal<float>({1, 8, 8, 8}, rng, 0.1).cast<Wide>();
  const auto rgb_t = rgb.template cast<T>(), ir_t = ir.template cast<T>(), target_t = target.template cast<T>();
  std::function<Probe<T>(Tape<T>*)> f = [&](Tape<T>* tape) {
    const auto l = mean_abs_diff(meaf_forward(rgb_t, ir_t, pf, tape), target_t, tape);
    return Probe<T>{l, static_cast<Wide>(l.item())};
  };
  std::function<Probe<Wide>(Tape<Wide>*)> ref = [&](Tape<Wide>* tape) {
    const auto l = mean_abs_diff(meaf_forward(rgb, ir, pd, tape), target, tape);
    return Probe<Wide>{l, l.item()};
  };
  copy_values(named(pf.parameters()), named(pd.parameters()));
  Rng pick(27);
  return check_gradients<T, Wide>(f, named(pf.parameters()), ref, named(pd.parameters()), pick, opt);
}

TEST(FusionParams, FreshAttentionGateIsUniformHalf) {
  Rng rng(28), data(29);
  const auto p = FusionParams<float>::init(FusionConfig{}, rng);
  FusionTrace<float> t;
  meaf_forward(random_normal<float>({1, 3, 8, 8}, data), random_normal<float>({1, 1, 8, 8}, data), p,
               static_cast<Tape<float>*>(nullptr), &t);
  for (const auto* attn : {&t.rgb.attention, &t.ir.attention}) {
    for (float a : attn->data()) EXPECT_EQ(a, 0.5f);
  }
  EXPECT_TRUE(bit_equal(t.rgb.attended, elementwise(t.rgb.refined, Tensor<float>::scalar(0.5f), ElementwiseMode::Mul)));
}

TEST(FusionGradient, Float32AgainstFiniteDifferences) {
  GradCheckOptions opt = default_options<float>();
  opt.samples = 16;
  const auto s = fusion_gradients<float>(opt);
  EXPECT_GT(s.checked, 100u);
  EXPECT_GE(s.pass_rate(), 0.999) << s.summary();
}

TEST(FusionGradient, Float64AgainstFiniteDifferences) {
  GradCheckOptions opt = default_options<double>();
  opt.samples = 16;
  const auto s = fusion_gradients<double>(opt);
  EXPECT_GT(s.checked, 100u);
  EXPECT_GE(s.pass_rate(), 0.999) << s.summary();
}

TEST(FusionGradient, ModalityScalarsReceiveGradient) {
  auto p = make_params<double>(28);
  Rng rng(29);
  Tape<double> tape;
  const auto y = meaf_forward(random_normal<double>({1, 3, 6, 6}, rng), random_normal<double>({1, 1, 6, 6}, rng), p, &tape);
  tape.backward(mean(y, &tape));
  EXPECT_NE(p.modal.p_rgb.grad()[0], 0.0);
  EXPECT_NE(p.modal.p_ir.grad()[0], 0.0);
}
