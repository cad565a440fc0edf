#include <gtest/gtest.h>

#include <cmath>

#include "transmatcher/backbone/backbone.hpp"
#include "transmatcher/backbone/conv.hpp"
#include "transmatcher/numcore/grad_check.hpp"
#include "transmatcher/numcore/ops.hpp"

using namespace transmatcher;
using namespace transmatcher::backbone;
using nc::Rng;
using T64 = nc::Tensor<double>;

namespace {

T64 random_tensor(nc::Shape shape, Rng& rng) {
  T64 t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(-1, 1);
  return t;
}

// Direct-loop oracle with explicit zero padding.
double conv_oracle(const T64& x, const T64& k, const T64& b, std::size_t stride, std::size_t bi,
                   std::size_t o, std::size_t oy, std::size_t ox) {
  const std::size_t C = x.dim(1), H = x.dim(2), W = x.dim(3), K = k.dim(2);
  const long pad = static_cast<long>(K / 2);
  double s = b.defined() ? b[o] : 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < K; ++ky) {
      for (std::size_t kx = 0; kx < K; ++kx) {
        const long iy = static_cast<long>(oy * stride + ky) - pad;
        const long ix = static_cast<long>(ox * stride + kx) - pad;
        if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
        s += k[((o * C + c) * K + ky) * K + kx] * x[((bi * C + c) * H + iy) * W + ix];
      }
    }
  }
  return s;
}

Image blob_image(std::size_t H, std::size_t W, std::size_t y0, std::size_t x0) {
  Image im(H, W);
  for (std::size_t y = 0; y < 6; ++y) {
    for (std::size_t x = 0; x < 4; ++x) {
      im.at(0, y0 + y, x0 + x) = 0.9f;
      im.at(1, y0 + y, x0 + x) = 0.2f + 0.1f * static_cast<float>(y);
      im.at(2, y0 + y, x0 + x) = 0.5f;
    }
  }
  return im;
}

}  // namespace

TEST(Conv2d, OneByOneUnitKernelIsIdentity) {
  Rng rng(1);
  auto x = random_tensor({2, 3, 4, 5}, rng);
  T64 k({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) k.mutable_data()[c * 3 + c] = 1.0;
  auto y = conv2d(x, k, T64(), 1);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2d, AveragingKernelKeepsConstantInterior) {
  auto x = T64::full({1, 1, 6, 6}, 0.7);
  auto k = T64::full({1, 1, 3, 3}, 1.0 / 9.0);
  auto y = conv2d(x, k, T64(), 1);
  for (std::size_t yy = 1; yy < 5; ++yy) {
    for (std::size_t xx = 1; xx < 5; ++xx) EXPECT_NEAR(y[yy * 6 + xx], 0.7, 1e-15);
  }
}

TEST(Conv2d, MatchesDirectLoopOracle) {
  Rng rng(2);
  for (std::size_t stride : {1u, 2u}) {
    auto x = random_tensor({2, 3, 7, 6}, rng);
    auto k = random_tensor({4, 3, 3, 3}, rng);
    auto b = random_tensor({4}, rng);
    auto y = conv2d(x, k, b, stride);
    const std::size_t Ho = y.dim(2), Wo = y.dim(3);
    EXPECT_EQ(Ho, (7 - 1) / stride + 1);
    for (std::size_t bi = 0; bi < 2; ++bi)
      for (std::size_t o = 0; o < 4; ++o)
        for (std::size_t oy = 0; oy < Ho; ++oy)
          for (std::size_t ox = 0; ox < Wo; ++ox)
            EXPECT_NEAR(y[((bi * 4 + o) * Ho + oy) * Wo + ox], conv_oracle(x, k, b, stride, bi, o, oy, ox), 1e-10);
  }
}

TEST(Conv2d, RejectsEvenKernelAndChannelMismatch) {
  EXPECT_THROW(conv2d(T64({1, 3, 4, 4}), T64({2, 3, 2, 2}), T64(), 1), nc::DimensionError);
  EXPECT_THROW(conv2d(T64({1, 3, 4, 4}), T64({2, 2, 3, 3}), T64(), 1), nc::DimensionError);
}

TEST(Conv2d, BackwardPassesGradCheck) {
  Rng rng(3);
  nc::ParameterSet<double> ps;
  auto x = ps.add("x", random_tensor({2, 2, 5, 4}, rng), nc::kNewGroup);
  auto k = ps.add("k", random_tensor({3, 2, 3, 3}, rng), nc::kNewGroup);
  auto b = ps.add("b", random_tensor({3}, rng), nc::kNewGroup);
  auto w = random_tensor({2, 3, 3, 2}, rng);
  auto rep = nc::grad_check([&] { return nc::sum(nc::mul(conv2d(x, k, b, 2), w)); }, ps);
  EXPECT_TRUE(rep.passed) << rep.max_rel_err;
}

TEST(Backbone, DefaultGeometry) {
  nc::ParameterSet<double> ps;
  Rng rng(4);
  Backbone<double> bb(BackboneConfig{{8, 8, 8}, 32, 3}, ps, rng);
  Image im(48, 16);
  auto fm = bb.extract(im);
  EXPECT_EQ(fm.rows, 6u * 2u);
  EXPECT_EQ(fm.cols, 32u);
}

TEST(Backbone, PaperScaleGeometry) {
  nc::ParameterSet<double> ps;
  Rng rng(4);
  Backbone<double> bb(BackboneConfig{{2, 2, 2, 2}, 4, 3}, ps, rng);
  const auto [h, w] = bb.map_size(384, 128);
  EXPECT_EQ(h, 24u);
  EXPECT_EQ(w, 8u);
}

TEST(Backbone, IndivisibleSizeIsConfigError) {
  nc::ParameterSet<double> ps;
  Rng rng(4);
  Backbone<double> bb(BackboneConfig{}, ps, rng);
  Image im(50, 16);
  EXPECT_THROW(bb.extract(im), ConfigError);
}

TEST(Backbone, ZeroImageYieldsNeckBias) {
  nc::ParameterSet<double> ps;
  Rng rng(5);
  Backbone<double> bb(BackboneConfig{{4, 4}, 6, 3}, ps, rng);
  Image im(8, 8);
  auto a = bb.extract(im);
  auto b = bb.extract(im);
  const auto* bias = ps.find("backbone.neck.bias");
  ASSERT_NE(bias, nullptr);
  for (std::size_t i = 0; i < a.tensor.numel(); ++i) {
    EXPECT_TRUE(std::isfinite(a.tensor[i]));
    EXPECT_EQ(a.tensor[i], b.tensor[i]);
    EXPECT_EQ(a.tensor[i], bias->tensor[i % 6]);
  }
}

TEST(Backbone, TranslationCovariantForStrideShifts) {
  nc::ParameterSet<double> ps;
  Rng rng(6);
  Backbone<double> bb(BackboneConfig{{4, 4, 4}, 5, 3}, ps, rng);
  const std::size_t H = 128, W = 32;
  auto a = bb.extract(blob_image(H, W, 56, 12));
  auto b = bb.extract(blob_image(H, W, 64, 12));  // one cell down at stride 8
  const std::size_t w = W / 8, h = H / 8;
  for (std::size_t y = 3; y + 5 < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 5; ++c) {
        EXPECT_NEAR(a.tensor[(y * w + x) * 5 + c], b.tensor[((y + 1) * w + x) * 5 + c], 1e-9);
      }
    }
  }
}

TEST(Backbone, GradientReachesConvKernels) {
  nc::ParameterSet<double> ps;
  Rng rng(7);
  Backbone<double> bb(BackboneConfig{{3, 3}, 4, 3}, ps, rng);
  std::vector<Image> ims;
  for (int i = 0; i < 2; ++i) {
    Image im(8, 8);
    for (auto& v : im.data) v = static_cast<float>(rng.uniform());
    ims.push_back(im);
  }
  auto input = Backbone<double>::to_tensor(ims);
  auto w = random_tensor({2, 4, 4}, rng);
  auto rep = nc::grad_check([&] { return nc::sum(nc::mul(bb.forward(input), w)); }, ps);
  EXPECT_TRUE(rep.passed) << rep.max_rel_err << " " << rep.worst.param;
  EXPECT_GT(rep.checked, 0u);
}

TEST(Image, FlipAndValidate) {
  Image im(2, 3);
  im.at(0, 0, 0) = 1.0f;
  EXPECT_EQ(im.flipped().at(0, 0, 2), 1.0f);
  im.at(1, 1, 1) = 1.5f;
  EXPECT_THROW(im.validate(), std::invalid_argument);
}
