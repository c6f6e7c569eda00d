#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "latdyn/vae_codec.hpp"
#include "oracles.hpp"

using namespace latdyn;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

CodecConfig small_config(PixelLikelihood kind) {
  CodecConfig c;
  c.image_size = 6;
  c.hidden = {10, 7};
  c.likelihood = kind;
  return c;
}

MatrixXd random_images(int pixels, int batch, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MatrixXd m(pixels, batch);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

TEST(Codec, MeasurementDimensions) {
  for (int l : {2, 4}) {
    CodecConfig cfg;
    cfg.measurement_dim = l;
    VaeCodec codec(cfg);
    ad::ParamStore store;
    std::mt19937_64 rng(1);
    codec.register_params(store, rng);
    const MeasurementGaussian g = codec.encode(store, render({0.3, 0.0}));
    EXPECT_EQ(g.mean.size(), l);
    EXPECT_EQ(g.std.size(), l);
    EXPECT_GT(g.std.minCoeff(), 0.0);
    EXPECT_EQ(store.get("phi.enc0.w").value.rows(), 256);
    EXPECT_EQ(store.get("phi.enc0.w").value.cols(), 1024);
  }
}

TEST(Codec, EncodeIsDeterministic) {
  VaeCodec codec(CodecConfig{});
  ad::ParamStore store;
  std::mt19937_64 rng(2);
  codec.register_params(store, rng);
  const Image x = render({1.0, 0.0});
  const MeasurementGaussian a = codec.encode(store, x);
  const MeasurementGaussian b = codec.encode(store, x);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std, b.std);
  EXPECT_EQ(codec.encode_means(store, x.pixels).col(0), a.mean);
}

TEST(Codec, RejectsBadInput) {
  VaeCodec codec(CodecConfig{});
  ad::ParamStore store;
  std::mt19937_64 rng(3);
  codec.register_params(store, rng);
  Image x = render({1.0, 0.0});
  x.pixels(5) = std::nan("");
  EXPECT_THROW(codec.encode(store, x), std::invalid_argument);
  EXPECT_THROW(codec.encode(store, Image(8, 8)), std::invalid_argument);
  EXPECT_THROW(codec.decode(store, VectorXd::Constant(2, INFINITY)), std::invalid_argument);
  EXPECT_THROW(codec.decode(store, VectorXd::Zero(3)), std::invalid_argument);
}

TEST(Codec, ZeroWeightBernoulliDecoder) {
  VaeCodec codec(small_config(PixelLikelihood::bernoulli));
  ad::ParamStore store;
  std::mt19937_64 rng(4);
  codec.register_params(store, rng);
  for (auto& p : store.params()) {
    if (p.name.rfind("theta.", 0) == 0) p.value.setZero();
  }
  const PixelDistribution d = codec.decode(store, VectorXd::Constant(2, 3.0));
  EXPECT_EQ(d.params, VectorXd::Constant(36, 0.5));
  Image x(6, 6);
  x.pixels = random_images(36, 1, rng).col(0);
  EXPECT_NEAR(d.log_likelihood(x), 36 * std::log(0.5), 1e-12);

  ad::Graph g;
  ad::ParamBinder bind(g, store);
  const ad::Var logits = codec.decode_logits(bind, g.constant(MatrixXd::Ones(2, 1)));
  EXPECT_NEAR(codec.log_likelihood(logits, g.constant(x.pixels)).item(), 36 * std::log(0.5),
              1e-12);
}

TEST(Codec, GraphLikelihoodMatchesDistribution) {
  for (auto kind : {PixelLikelihood::gaussian, PixelLikelihood::bernoulli}) {
    VaeCodec codec(small_config(kind));
    ad::ParamStore store;
    std::mt19937_64 rng(5);
    codec.register_params(store, rng);
    const VectorXd a = oracle::random_vector(2, rng);
    Image x(6, 6);
    x.pixels = random_images(36, 1, rng).col(0);
    ad::Graph g;
    const ad::ParamStore& cs = store;
    ad::ParamBinder bind(g, cs);
    const ad::Var logits = codec.decode_logits(bind, g.constant(a));
    EXPECT_NEAR(codec.log_likelihood(logits, g.constant(x.pixels)).item(),
                codec.decode(store, a).log_likelihood(x), 1e-9)
        << to_string(kind);
  }
}

TEST(Codec, EncoderGradcheck) {
  VaeCodec codec(small_config(PixelLikelihood::gaussian));
  ad::ParamStore store;
  std::mt19937_64 rng(6);
  codec.register_params(store, rng);
  const MatrixXd images = random_images(36, 3, rng);
  const MatrixXd w1 = oracle::random_matrix(2, 3, rng);
  const MatrixXd w2 = oracle::random_matrix(2, 3, rng);
  const auto loss = [&](ad::ParamBinder& b) {
    const auto enc = codec.encode(b, b.graph().constant(images));
    return ad::sum(ad::cwise_mul(b.graph().constant(w1), enc.mean)) +
           ad::sum(ad::cwise_mul(b.graph().constant(w2), ad::exp(enc.log_std)));
  };
  const auto r = fixture::check_gradients(store, loss, rng, 5, "phi.");
  EXPECT_GE(r.checked, 20);
  EXPECT_LT(r.worst, 1e-4) << r.worst_name;
}

TEST(Codec, DecoderGradcheck) {
  for (auto kind : {PixelLikelihood::gaussian, PixelLikelihood::bernoulli}) {
    VaeCodec codec(small_config(kind));
    ad::ParamStore store;
    std::mt19937_64 rng(7);
    codec.register_params(store, rng);
    const MatrixXd a = oracle::random_matrix(2, 3, rng);
    const MatrixXd images = random_images(36, 3, rng);
    const auto loss = [&](ad::ParamBinder& b) {
      return codec.log_likelihood(codec.decode_logits(b, b.graph().constant(a)),
                                  b.graph().constant(images));
    };
    const auto r = fixture::check_gradients(store, loss, rng, 5, "theta.");
    EXPECT_GE(r.checked, 20);
    EXPECT_LT(r.worst, 1e-4) << to_string(kind) << " " << r.worst_name;
  }
}

TEST(ReconLoss, Examples) {
  const Image a = render({0.4, 0.0});
  EXPECT_EQ(recon_loss(a, a), 0.0);
  EXPECT_EQ(recon_loss(Image(32, 32, 1.0), Image(32, 32, 0.0)), 1024.0);
  EXPECT_THROW(recon_loss(Image(32, 32), Image(16, 16)), std::invalid_argument);
}

TEST(ReconLoss, MatchesNaiveLoop) {
  std::mt19937_64 rng(8);
  Image x(7, 9), y(7, 9);
  x.pixels = random_images(63, 1, rng).col(0);
  y.pixels = random_images(63, 1, rng).col(0);
  double ref = 0.0;
  for (int r = 0; r < 7; ++r) {
    for (int c = 0; c < 9; ++c) {
      const double d = x.at(r, c) - y.at(r, c);
      ref += d * d;
    }
  }
  EXPECT_NEAR(recon_loss(x, y), ref, 1e-12);
}

TEST(NoveltyAlpha, Examples) {
  const NoveltyBaseline base{3.7, 100};
  EXPECT_NEAR(novelty_alpha(3.7, base), std::numbers::ln2, 1e-15);
  EXPECT_NEAR(novelty_alpha(3.7 / (std::numbers::e - 1.0), base), 1.0, 1e-14);
  EXPECT_LT(novelty_alpha(1e12, base), 1e-11);
  EXPECT_GT(novelty_alpha(1e12, base), 0.0);
  EXPECT_EQ(novelty_alpha(0.0, base), kDefaultAlphaMax);
  EXPECT_EQ(novelty_alpha(0.0, base, 7.0), 7.0);
  EXPECT_EQ(novelty_alpha(1e-30, base), kDefaultAlphaMax);
  EXPECT_THROW(novelty_alpha(-1.0, base), std::invalid_argument);
  EXPECT_THROW(novelty_alpha(1.0, {-1.0, 1}), std::invalid_argument);
}

TEST(NoveltyAlpha, MonotoneDecreasing) {
  const NoveltyBaseline base{10.0, 1};
  double prev = novelty_alpha(1e-3, base);
  for (double l = 2e-3; l < 1e4; l *= 1.7) {
    const double a = novelty_alpha(l, base);
    EXPECT_LT(a, prev) << l;
    prev = a;
  }
}

TEST(Reparam, DegenerateStdReturnsMean) {
  std::mt19937_64 rng(9);
  const MeasurementGaussian g{VectorXd::Constant(3, 1.5), VectorXd::Zero(3)};
  EXPECT_EQ(reparam_sample(g, rng), g.mean);
}

TEST(Reparam, MonteCarloMeanAndSeed) {
  std::mt19937_64 rng(10);
  const MeasurementGaussian g{(VectorXd(2) << 0.3, -2.0).finished(),
                              (VectorXd(2) << 0.5, 2.0).finished()};
  const int N = 100000;
  VectorXd acc = VectorXd::Zero(2);
  for (int i = 0; i < N; ++i) acc += reparam_sample(g, rng);
  acc /= N;
  for (int i = 0; i < 2; ++i) EXPECT_LT(std::abs(acc(i) - g.mean(i)), 3 * g.std(i) / std::sqrt(N));
  std::mt19937_64 r1(11), r2(11);
  EXPECT_EQ(reparam_sample(g, r1), reparam_sample(g, r2));
}
