#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gradcheck.hpp"
#include "op_cases.hpp"

using namespace meaf;
using namespace meaf::testing;

namespace {

template <typename T>
std::vector<T> naive_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  std::vector<T> out(static_cast<std::size_t>(n * o * ho * wo));
  for (int in = 0; in < n; ++in)
    for (int oc = 0; oc < o; ++oc)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          double s = b.defined() ? b.at(static_cast<std::size_t>(oc)) : 0.0;
          for (int ic = 0; ic < c; ++ic)
            for (int ki = 0; ki < kh; ++ki)
              for (int kj = 0; kj < kw; ++kj) {
                const int y = i * stride - pad + ki, xx = j * stride - pad + kj;
                if (y < 0 || y >= h || xx < 0 || xx >= wd) continue;
                s += x.at(static_cast<std::size_t>(((in * c + ic) * h + y) * wd + xx)) *
                     w.at(static_cast<std::size_t>(((oc * c + ic) * kh + ki) * kw + kj));
              }
          out[static_cast<std::size_t>(((in * o + oc) * ho + i) * wo + j)] = static_cast<T>(s);
        }
  return out;
}

void expect_near_all(std::span<const double> a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "at " << i;
}

}  // namespace

TEST(Conv2d, OnesKernelCountsCoveredCells) {
  Tensor<double> x({1, 1, 3, 3}, 1.0), w({1, 1, 3, 3}, 1.0);
  const auto y = conv2d(x, w, Tensor<double>{}, 1, 1);
  EXPECT_EQ(y.at(4), 9.0);
  EXPECT_EQ(y.at(0), 4.0);
  EXPECT_EQ(y.at(2), 4.0);
  EXPECT_EQ(y.at(6), 4.0);
  EXPECT_EQ(y.at(8), 4.0);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  const auto x = random_normal<float>({2, 1, 4, 5}, rng);
  const auto y = conv2d(x, Tensor<float>({1, 1, 1, 1}, 1.0f), Tensor<float>{}, 1, 0);
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
}

TEST(Conv2d, MatchesNaiveLoop) {
  Rng rng(2);
  const auto x = random_normal<double>({1, 2, 5, 5}, rng);
  const auto w = random_normal<double>({3, 2, 3, 3}, rng);
  const auto b = random_normal<double>({3}, rng);
  expect_near_all(conv2d(x, w, b, 1, 1).data(), naive_conv(x, w, b, 1, 1), 1e-12);
  expect_near_all(conv2d(x, w, b, 2, 1).data(), naive_conv(x, w, b, 2, 1), 1e-12);
  expect_near_all(conv2d(x, w, Tensor<double>{}, 1, 0).data(), naive_conv(x, w, Tensor<double>{}, 1, 0), 1e-12);

  const auto xf = x.cast<float>(), wf = w.cast<float>(), bf = b.cast<float>();
  const auto yf = conv2d(xf, wf, bf, 1, 1);
  const auto ref = naive_conv(xf, wf, bf, 1, 1);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(yf.at(i), ref[i], 1e-5);
}

TEST(Conv2d, NonSquareStrided) {
  Rng rng(3);
  const auto x = random_normal<double>({2, 3, 10, 7}, rng);
  const auto w = random_normal<double>({4, 3, 3, 3}, rng);
  const auto b = random_normal<double>({4}, rng);
  const auto y = conv2d(x, w, b, 2, 1);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 5, 4}));
  expect_near_all(y.data(), naive_conv(x, w, b, 2, 1), 1e-12);
}

TEST(Conv2d, Linearity) {
  Rng rng(4);
  const auto x = random_normal<double>({1, 2, 6, 6}, rng);
  const auto z = random_normal<double>({1, 2, 6, 6}, rng);
  const auto w = random_normal<double>({3, 2, 3, 3}, rng);
  const Tensor<double> none;
  const auto cx = conv2d(x, w, none, 1, 1), cz = conv2d(z, w, none, 1, 1);
  const auto sum_in = elementwise(x, z, ElementwiseMode::Add);
  const auto c_sum = conv2d(sum_in, w, none, 1, 1);
  const auto scaled = conv2d(elementwise(x, Tensor<double>::scalar(2.5), ElementwiseMode::Mul), w, none, 1, 1);
  for (std::size_t i = 0; i < cx.numel(); ++i) {
    EXPECT_NEAR(c_sum.at(i), cx.at(i) + cz.at(i), 1e-12);
    EXPECT_NEAR(scaled.at(i), 2.5 * cx.at(i), 1e-12);
  }
}

TEST(Conv2d, RejectsBadArguments) {
  const Tensor<float> x({1, 2, 4, 4}), w({3, 2, 3, 3}), none;
  EXPECT_THROW(conv2d(x, w, none, 0, 1), ArgumentError);
  EXPECT_THROW(conv2d(x, w, none, 1, -1), ArgumentError);
  EXPECT_THROW(conv2d(x, Tensor<float>({3, 1, 3, 3}), none, 1, 1), DimensionError);
  EXPECT_THROW(conv2d(x, Tensor<float>({3, 2, 2, 2}), none, 1, 1), ArgumentError);
  EXPECT_THROW(conv2d(Tensor<float>({1, 2, 1, 1}), w, none, 1, 0), DimensionError);
  EXPECT_THROW(conv2d(Tensor<float>({2, 4, 4}), w, none, 1, 1), DimensionError);
}

TEST(Activation, Definitions) {
  const Tensor<float> x({3}, std::vector<float>{-1, 0, 2});
  const auto r = activation(x, ActivationKind::ReLU);
  EXPECT_EQ(std::vector<float>(r.data().begin(), r.data().end()), (std::vector<float>{0, 0, 2}));
  EXPECT_EQ(activation(Tensor<float>::scalar(0), ActivationKind::Sigmoid).item(), 0.5f);
  const auto silu = activation(Tensor<double>::scalar(1.5), ActivationKind::SiLU).item();
  EXPECT_NEAR(silu, 1.5 / (1 + std::exp(-1.5)), 1e-15);
}

TEST(Activation, SigmoidSaturatesWithoutOverflow) {
  for (double v : {88.0, 500.0, -88.0, -500.0}) {
    const float s = activation(Tensor<float>::scalar(static_cast<float>(v)), ActivationKind::Sigmoid).item();
    EXPECT_TRUE(std::isfinite(s));
    EXPECT_GT(s, 0.0f);
    EXPECT_LT(s, 1.0f);
  }
  // saturated tails stay strictly inside (0,1)
  EXPECT_EQ(activation(Tensor<float>::scalar(88), ActivationKind::Sigmoid).item(), std::nextafter(1.0f, 0.0f));
  EXPECT_GT(activation(Tensor<float>::scalar(-500), ActivationKind::Sigmoid).item(), 0.0f);
  EXPECT_NEAR(activation(Tensor<double>::scalar(-30), ActivationKind::Sigmoid).item(), 9.357622968840175e-14, 1e-25);
  Rng rng(5);
  const auto y = activation(random_normal<double>({1000}, rng, 5.0), ActivationKind::Sigmoid);
  for (double v : y.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(ChannelStats, SingleChannelAndPairs) {
  Rng rng(6);
  const auto x = random_normal<float>({2, 1, 3, 3}, rng);
  const auto s = channel_stats(x);
  for (int n = 0; n < 2; ++n)
    for (int p = 0; p < 9; ++p) {
      EXPECT_EQ(s.at(static_cast<std::size_t>(n * 18 + p)), x.at(static_cast<std::size_t>(n * 9 + p)));
      EXPECT_EQ(s.at(static_cast<std::size_t>(n * 18 + 9 + p)), x.at(static_cast<std::size_t>(n * 9 + p)));
    }
  // channel values {1,5} at pixel 0 and {3,7} at pixel 1
  const Tensor<double> two({1, 2, 1, 2}, std::vector<double>{1, 3, 5, 7});
  const auto t = channel_stats(two);
  EXPECT_EQ(std::vector<double>(t.data().begin(), t.data().end()), (std::vector<double>{3, 5, 5, 7}));
}

TEST(ChannelStats, MatchesLoopOracle) {
  Rng rng(7);
  const auto x = random_normal<double>({2, 8, 4, 4}, rng);
  const auto s = channel_stats(x);
  for (int n = 0; n < 2; ++n)
    for (int p = 0; p < 16; ++p) {
      double acc = 0, mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < 8; ++c) {
        const double v = x.at(static_cast<std::size_t>((n * 8 + c) * 16 + p));
        acc += v;
        mx = std::max(mx, v);
      }
      EXPECT_DOUBLE_EQ(s.at(static_cast<std::size_t>(n * 32 + p)), acc / 8);
      EXPECT_EQ(s.at(static_cast<std::size_t>(n * 32 + 16 + p)), mx);
      EXPECT_GE(s.at(static_cast<std::size_t>(n * 32 + 16 + p)), s.at(static_cast<std::size_t>(n * 32 + p)));
    }
}

TEST(GlobalAvgPool, Values) {
  EXPECT_EQ(global_avg_pool(Tensor<float>({2, 3, 4, 4}, 1.25f)).data()[5], 1.25f);
  EXPECT_EQ(global_avg_pool(Tensor<double>({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4})).item(), 2.5);
  Rng rng(8);
  const auto x = random_normal<double>({2, 3, 5, 4}, rng);
  const auto g = global_avg_pool(x);
  for (int i = 0; i < 6; ++i) {
    double acc = 0;
    for (int p = 0; p < 20; ++p) acc += x.at(static_cast<std::size_t>(i * 20 + p));
    EXPECT_NEAR(g.at(static_cast<std::size_t>(i)), acc / 20, 1e-15);
  }
}

TEST(FullyConnected, IdentityZeroAndOracle) {
  Rng rng(9);
  const auto x = random_normal<double>({2, 4}, rng);
  Tensor<double> eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.mutable_data()[i * 5] = 1;
  const auto id = fully_connected(x, eye, Tensor<double>({4}));
  EXPECT_TRUE(std::equal(id.data().begin(), id.data().end(), x.data().begin()));

  const Tensor<double> b({3}, std::vector<double>{1, -2, 3});
  const auto z = fully_connected(x, Tensor<double>({3, 4}), b);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(z.at(i), b.at(i % 3));

  const auto w = random_normal<double>({3, 4}, rng);
  const auto y = fully_connected(x, w, b);
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 3; ++o) {
      double acc = b.at(static_cast<std::size_t>(o));
      for (int k = 0; k < 4; ++k) acc += x.at(static_cast<std::size_t>(n * 4 + k)) * w.at(static_cast<std::size_t>(o * 4 + k));
      EXPECT_NEAR(y.at(static_cast<std::size_t>(n * 3 + o)), acc, 1e-14);
    }
  EXPECT_THROW(fully_connected(x, Tensor<double>({3, 5}), b), DimensionError);
}

TEST(ConcatSlice, RoundTrip) {
  Rng rng(10);
  const auto a = random_normal<float>({2, 3, 4, 4}, rng);
  const auto b = random_normal<float>({2, 1, 4, 4}, rng);
  const auto c = concat_channels(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 4, 4, 4}));
  const auto a2 = slice_channels(c, 0, 3), b2 = slice_channels(c, 3, 4);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), a2.data().begin()));
  EXPECT_TRUE(std::equal(b.data().begin(), b.data().end(), b2.data().begin()));
  const auto c2 = concat_channels(a2, b2);
  EXPECT_TRUE(std::equal(c.data().begin(), c.data().end(), c2.data().begin()));

  const auto same = concat_channels(a, Tensor<float>({2, 0, 4, 4}));
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), same.data().begin()));
  EXPECT_THROW(concat_channels(a, Tensor<float>({2, 1, 4, 5})), DimensionError);
}

TEST(Elementwise, IdentitiesAndBroadcast) {
  Rng rng(11);
  const auto x = random_normal<double>({2, 4, 3, 5}, rng);
  const auto m = elementwise(x, Tensor<double>(x.shape(), 1.0), ElementwiseMode::Mul);
  const auto a = elementwise(x, Tensor<double>(x.shape()), ElementwiseMode::Add);
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), m.data().begin()));
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), a.data().begin()));

  const auto att = random_uniform<double>({2, 1, 3, 5}, rng, 0, 1);
  const auto y = elementwise(x, att, ElementwiseMode::Mul);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 4; ++c)
      for (int p = 0; p < 15; ++p)
        EXPECT_EQ(y.at(static_cast<std::size_t>((n * 4 + c) * 15 + p)),
                  x.at(static_cast<std::size_t>((n * 4 + c) * 15 + p)) * att.at(static_cast<std::size_t>(n * 15 + p)));

  const auto v = random_uniform<double>({2, 4}, rng, 0, 1);
  const auto z = elementwise(x, v, ElementwiseMode::Mul);
  for (int nc = 0; nc < 8; ++nc)
    for (int p = 0; p < 15; ++p)
      EXPECT_EQ(z.at(static_cast<std::size_t>(nc * 15 + p)),
                x.at(static_cast<std::size_t>(nc * 15 + p)) * v.at(static_cast<std::size_t>(nc)));
  EXPECT_THROW(elementwise(x, Tensor<double>({2, 3}), ElementwiseMode::Mul), DimensionError);
}

TEST(Resize, InversePairAndBlockMean) {
  Rng rng(12);
  const auto x = random_normal<double>({1, 2, 3, 4}, rng);
  for (auto mode : {ResizeMode::UpNearest, ResizeMode::DownAvg}) {
    const auto y = resize_spatial(x, 1, mode);
    EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  }
  const auto back = resize_spatial(resize_spatial(x, 3, ResizeMode::UpNearest), 3, ResizeMode::DownAvg);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(back.at(i), x.at(i));
  const auto d = resize_spatial(Tensor<float>({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4}), 2, ResizeMode::DownAvg);
  EXPECT_EQ(d.item(), 2.5f);
  EXPECT_THROW(resize_spatial(x, 2, ResizeMode::DownAvg), DimensionError);
  EXPECT_THROW(resize_spatial(x, 0, ResizeMode::UpNearest), ArgumentError);
}

TEST(Backward, LinearAndQuadratic) {
  Rng rng(13);
  auto x = random_normal<double>({3, 4}, rng);
  x.set_requires_grad(true);
  {
    Tape<double> tape;
    tape.backward(sum(x, &tape));
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  }
  x.zero_grad();
  {
    Tape<double> tape;
    const auto sq = elementwise(x, x, ElementwiseMode::Mul, &tape);
    const auto loss = elementwise(sum(sq, &tape), Tensor<double>::scalar(0.5), ElementwiseMode::Mul, &tape);
    tape.backward(loss);
    const auto g = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_DOUBLE_EQ(g[i], x.at(i));
  }
}

TEST(Backward, AccumulatesUntilCleared) {
  auto x = Tensor<double>({2}, std::vector<double>{1, 2});
  x.set_requires_grad(true);
  for (int i = 0; i < 2; ++i) {
    Tape<double> tape;
    tape.backward(sum(x, &tape));
  }
  EXPECT_EQ(x.grad(), (std::vector<double>{2, 2}));
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, RejectsNonScalarAndForeignLoss) {
  auto x = Tensor<double>({2}, 1.0);
  x.set_requires_grad(true);
  Tape<double> tape, other;
  const auto y = activation(x, ActivationKind::Sigmoid, &tape);
  EXPECT_THROW(tape.backward(y), DimensionError);
  const auto s = sum(x, &other);
  EXPECT_THROW(tape.backward(s), ArgumentError);
}

TEST(Backward, InferenceRecordsNothing) {
  Tape<float> tape;
  const Tensor<float> x({2, 2}, 1.0f);  // no requires_grad
  (void)activation(x, ActivationKind::ReLU, &tape);
  EXPECT_EQ(tape.size(), 0u);
}

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, Float32) {
  const auto c = op_cases()[GetParam()];
  const auto stats = run_op_case<float>(c, 100 + GetParam());
  EXPECT_EQ(stats.passed, stats.checked) << c.name << ": " << stats.summary();
  EXPECT_GT(stats.checked, 0u);
}

TEST_P(OpGradient, Float64) {
  const auto c = op_cases()[GetParam()];
  const auto stats = run_op_case<double>(c, 200 + GetParam());
  EXPECT_EQ(stats.passed, stats.checked) << c.name << ": " << stats.summary();
  EXPECT_GT(stats.checked, 0u);
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, op_cases().size()),
                         [](const auto& info) {
                           std::string n = op_cases()[info.param].name;
                           for (char& ch : n) {
                             if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
                           }
                           return n;
                         });

TEST(Tensor, HandleSemantics) {
  Tensor<float> a({2, 2}, 1.0f);
  Tensor<float> b = a;
  b.mutable_data()[0] = 5;
  EXPECT_EQ(a.at(0), 5.0f);
  auto c = a.clone();
  c.mutable_data()[0] = 7;
  EXPECT_EQ(a.at(0), 5.0f);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  EXPECT_THROW((void)a.reshaped({3}), DimensionError);
  a.mutable_data()[1] = std::nanf("");
  EXPECT_FALSE(a.all_finite());
}
