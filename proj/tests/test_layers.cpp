#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "jv/error.hpp"
#include "jv/layers.hpp"

using namespace jv;
using namespace jv::net;

namespace {

LayerSpec spec_of(LayerKind kind, std::size_t in_c = 0, std::size_t out_c = 0) {
  LayerSpec s;
  s.kind = kind;
  s.name = to_string(kind);
  s.in_channels = in_c;
  s.out_channels = out_c;
  return s;
}

void randomize_params(Layer& l, Rng& r, double scale = 0.5) {
  for (auto& p : l.params())
    for (auto& v : p.value.values()) v = scale * r.normal();
}

Tensor random_batch(Rng& r, std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
  Tensor t({n, h, w, c});
  for (auto& v : t.values()) v = r.normal();
  return t;
}

Tensor run(Layer& l, const Tensor& x, Mode mode = Mode::eval) {
  Rng r(0);
  Tensor out;
  l.forward(x, out, mode, r);
  return out;
}

}  // namespace

TEST(Prelu, ScalarExamples) {
  EXPECT_EQ(prelu(1.0, 0.25), 1.0);
  EXPECT_EQ(prelu(-1.0, 0.25), -0.25);
  EXPECT_EQ(prelu(-5.0, 0.0), 0.0);
}

TEST(PreluLayer, SlopesStartAtQuarterPerChannel) {
  auto l = make_layer(spec_of(LayerKind::prelu), {3, 3, 5});
  ASSERT_EQ(l->params().size(), 1u);
  EXPECT_EQ(l->params()[0].value, Tensor({5}, 0.25));
  EXPECT_EQ(l->params()[0].role, ParamRole::prelu_slope);
}

TEST(Lrn, ZeroAlphaIsIdentity) {
  Rng r(1);
  Tensor x({3, 3, 6});
  for (auto& v : x.values()) v = r.normal();
  LrnParams p;
  p.alpha = 0.0;
  EXPECT_EQ(lrn(x, p), x);
}

TEST(Lrn, SingleChannelScalarOracle) {
  Rng r(2);
  Tensor x({4, 4, 1});
  for (auto& v : x.values()) v = 3.0 * r.normal();
  LrnParams p{1, 0.3, 0.75, 2.0};
  const auto out = lrn(x, p);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(out[i], x[i] / std::pow(2.0 + 0.3 * x[i] * x[i], 0.75), 1e-15);
}

TEST(Lrn, ConstantInputBrightnessScaling) {
  // Constant lambda over c channels: channel j sees n_j window members, so
  // out_j = lambda * (k + alpha/size * n_j * lambda^2)^-beta.
  const std::size_t c = 7;
  const LrnParams p{5, 0.01, 0.75, 1.0};
  for (double lambda : {0.5, 3.0, 10.0}) {
    const auto out = lrn(Tensor({2, 2, c}, lambda), p);
    const auto base = lrn(Tensor({2, 2, c}, 1.0), p);
    for (std::size_t j = 0; j < c; ++j) {
      const double nj = static_cast<double>(std::min<long>(c - 1, static_cast<long>(j) + 2) -
                                            std::max<long>(0, static_cast<long>(j) - 2) + 1);
      const double expect = lambda * std::pow(1.0 + 0.01 / 5 * nj * lambda * lambda, -0.75);
      EXPECT_NEAR(out(0, 0, j), expect, 1e-14);
      const double ratio = out(1, 1, j) / base(1, 1, j);
      EXPECT_NEAR(ratio, lambda * std::pow((1.0 + 0.002 * nj * lambda * lambda) / (1.0 + 0.002 * nj), -0.75),
                  1e-13);
    }
  }
}

TEST(Lrn, EvenSizeRejected) {
  LrnParams p;
  p.size = 4;
  EXPECT_THROW(lrn(Tensor({1, 1, 4}), p), FormatError);
}

TEST(Conv3x3, MatchesHandUnrolledCorrelation) {
  Rng r(3);
  auto l = make_layer(spec_of(LayerKind::conv3x3, 2, 3), {4, 4, 2});
  randomize_params(*l, r);
  const auto x = random_batch(r, 2, 4, 4, 2);
  const auto out = run(*l, x);
  const auto& w = l->params()[0].value;  // [ky][kx][ic][oc]
  const auto& b = l->params()[1].value;
  for (std::size_t s = 0; s < 2; ++s)
    for (long y = 0; y < 4; ++y)
      for (long xx = 0; xx < 4; ++xx)
        for (std::size_t o = 0; o < 3; ++o) {
          double acc = b[o];
          for (long ky = 0; ky < 3; ++ky)
            for (long kx = 0; kx < 3; ++kx) {
              const long iy = y + ky - 1, ix = xx + kx - 1;
              if (iy < 0 || iy > 3 || ix < 0 || ix > 3) continue;
              for (std::size_t c = 0; c < 2; ++c) acc += x(s, iy, ix, c) * w[((ky * 3 + kx) * 2 + c) * 3 + o];
            }
          EXPECT_EQ(out(s, y, xx, o), acc);
        }
}

TEST(Conv3x3, ZeroWeightsGiveZero) {
  Rng r(4);
  auto l = make_layer(spec_of(LayerKind::conv3x3, 1, 4), {5, 5, 1});
  EXPECT_EQ(run(*l, random_batch(r, 1, 5, 5, 1)), Tensor({1, 5, 5, 4}));
}

TEST(MaxPool, CeilModeShapesAndClippedWindows) {
  auto l = make_layer(spec_of(LayerKind::maxpool2x2s2), {25, 25, 1});
  EXPECT_EQ(l->output_shape({25, 25, 128}), (Shape3{13, 13, 128}));
  EXPECT_EQ(l->output_shape({13, 13, 256}), (Shape3{7, 7, 256}));
  EXPECT_EQ(l->output_shape({100, 100, 64}), (Shape3{50, 50, 64}));
  Tensor x({1, 3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto out = run(*l, x);
  EXPECT_EQ(out, Tensor({1, 2, 2, 1}, {5, 6, 8, 9}));
}

TEST(AvgPoolGlobal, MeanPerChannel) {
  auto l = make_layer(spec_of(LayerKind::avgpool_global), {2, 2, 2});
  Tensor x({1, 2, 2, 2}, {1, 10, 2, 20, 3, 30, 4, 40});
  EXPECT_EQ(run(*l, x), Tensor({1, 1, 1, 2}, {2.5, 25}));
}

TEST(Dropout, EvalIsIdentityAndTrainScalesKeptUnits) {
  auto spec = spec_of(LayerKind::dropout);
  spec.dropout_rate = 0.4;
  auto l = make_layer(spec, {1, 1, 1000});
  Rng r(5);
  const auto x = random_batch(r, 4, 1, 1, 1000);
  EXPECT_EQ(run(*l, x, Mode::eval), x);
  Tensor out;
  Rng dr(6);
  l->forward(x, out, Mode::train, dr);
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (out[i] == 0.0)
      ++dropped;
    else
      EXPECT_NEAR(out[i], x[i] / 0.6, 1e-12);
  }
  EXPECT_NEAR(static_cast<double>(dropped) / static_cast<double>(x.size()), 0.4, 0.03);
}

TEST(Softmax, RowsSumToOneAndLossNonNegative) {
  Rng r(7);
  auto z = random_batch(r, 6, 1, 1, 11);
  for (auto& v : z.values()) v *= 20.0;
  const auto p = softmax(z);
  for (std::size_t s = 0; s < 6; ++s) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 11; ++j) sum += p[s * 11 + j];
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  EXPECT_GE(cross_entropy(p, {0, 1, 2, 3, 4, 5}), 0.0);
}

TEST(Softmax, SaturatedOneHotHasVanishingGradient) {
  Tensor z({2, 1, 1, 3}, {800.0, 0.0, 0.0, 0.0, 0.0, 800.0});
  const auto p = softmax(z);
  EXPECT_NEAR(cross_entropy(p, {0, 2}), 0.0, 1e-300);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double onehot = (i == 0 || i == 5) ? 1.0 : 0.0;
    EXPECT_NEAR((p[i] - onehot) / 2.0, 0.0, 1e-300);
  }
}

TEST(GradCheck, Conv3x3) {
  Rng r(10);
  auto l = make_layer(spec_of(LayerKind::conv3x3, 4, 3), {8, 8, 4});
  randomize_params(*l, r);
  const auto res = gradcheck::check_layer(*l, random_batch(r, 2, 8, 8, 4), r);
  EXPECT_LT(res.max_rel_err, 1e-4) << res.worst;
}

TEST(GradCheck, PreluIncludingSlope) {
  Rng r(11);
  auto l = make_layer(spec_of(LayerKind::prelu), {8, 8, 4});
  randomize_params(*l, r);
  const auto res = gradcheck::check_layer(*l, random_batch(r, 2, 8, 8, 4), r);
  EXPECT_LT(res.max_rel_err, 1e-4) << res.worst;
}

TEST(GradCheck, LrnDefaultAndStrongParameters) {
  Rng r(12);
  for (const LrnParams p : {LrnParams{}, LrnParams{3, 0.9, 0.75, 1.5}}) {
    auto spec = spec_of(LayerKind::lrn);
    spec.lrn = p;
    auto l = make_layer(spec, {8, 8, 4});
    const auto res = gradcheck::check_layer(*l, random_batch(r, 2, 8, 8, 4), r);
    EXPECT_LT(res.max_rel_err, 1e-4) << res.worst;
  }
}

TEST(GradCheck, FullyConnected) {
  Rng r(13);
  auto l = make_layer(spec_of(LayerKind::fully_connected, 0, 5), {4, 4, 4});
  randomize_params(*l, r);
  const auto res = gradcheck::check_layer(*l, random_batch(r, 3, 4, 4, 4), r);
  EXPECT_LT(res.max_rel_err, 1e-4) << res.worst;
}

TEST(GradCheck, PoolingLayers) {
  Rng r(14);
  for (auto kind : {LayerKind::maxpool2x2s2, LayerKind::avgpool_global}) {
    auto l = make_layer(spec_of(kind), {7, 7, 3});
    const auto res = gradcheck::check_layer(*l, random_batch(r, 2, 7, 7, 3), r);
    EXPECT_LT(res.max_rel_err, 1e-4) << to_string(kind) << " " << res.worst;
  }
}

TEST(GradCheck, DropoutEvalIsIdentityJacobian) {
  Rng r(15);
  auto spec = spec_of(LayerKind::dropout);
  spec.dropout_rate = 0.4;
  auto l = make_layer(spec, {8, 8, 4});
  const auto res = gradcheck::check_layer(*l, random_batch(r, 2, 8, 8, 4), r, Mode::eval);
  EXPECT_LT(res.max_rel_err, 1e-4) << res.worst;
}

TEST(GradCheck, SoftmaxCrossEntropy) {
  Rng r(16);
  const auto z = random_batch(r, 4, 1, 1, 6);
  const auto res = gradcheck::check_softmax_xent(z, {0, 5, 2, 2});
  EXPECT_LT(res.max_rel_err, 1e-4) << res.worst;
}

TEST(MakeLayer, RejectsChannelMismatch) {
  EXPECT_THROW(make_layer(spec_of(LayerKind::conv3x3, 3, 4), {8, 8, 2}), DimensionError);
  auto l = make_layer(spec_of(LayerKind::conv3x3, 2, 4), {8, 8, 2});
  Rng r(0);
  Tensor out;
  EXPECT_THROW(l->forward(Tensor({1, 8, 8, 3}), out, Mode::eval, r), DimensionError);
  EXPECT_EQ(layer_kind_from_string("lrn"), LayerKind::lrn);
  EXPECT_THROW(layer_kind_from_string("conv5x5"), FormatError);
}
