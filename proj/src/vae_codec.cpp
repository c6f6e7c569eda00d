#include "latdyn/vae_codec.hpp"

#include <cmath>
#include <stdexcept>

namespace latdyn {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

std::string layer(const char* group, const char* kind, std::size_t i) {
  return std::string(group) + "." + kind + std::to_string(i);
}

Eigen::MatrixXd gaussian_init(Eigen::Index rows, Eigen::Index cols, double std,
                              std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = std * n01(rng);
  }
  return m;
}

void add_dense(ad::ParamStore& store, const std::string& prefix, int in, int out, double std,
               std::mt19937_64& rng) {
  store.add(prefix + ".w", gaussian_init(out, in, std, rng));
  store.add(prefix + ".b", Eigen::MatrixXd::Zero(out, 1));
}

ad::Var dense(ad::ParamBinder& bind, const std::string& prefix, const ad::Var& x) {
  return ad::add_colwise(bind(prefix + ".w") * x, bind(prefix + ".b"));
}

Eigen::MatrixXd dense(const ad::ParamStore& store, const std::string& prefix,
                      const Eigen::MatrixXd& x) {
  Eigen::MatrixXd y = store.get(prefix + ".w").value * x;
  y.colwise() += store.get(prefix + ".b").value.col(0);
  return y;
}

}  // namespace

PixelLikelihood parse_likelihood(const std::string& s) {
  if (s == "gaussian") return PixelLikelihood::gaussian;
  if (s == "bernoulli") return PixelLikelihood::bernoulli;
  throw std::invalid_argument("unknown pixel likelihood: " + s);
}

std::string to_string(PixelLikelihood kind) {
  return kind == PixelLikelihood::gaussian ? "gaussian" : "bernoulli";
}

Image PixelDistribution::reconstruction() const {
  Image img(height, width);
  img.pixels = params;
  return img;
}

double PixelDistribution::log_likelihood(const Image& x) const {
  if (static_cast<Eigen::Index>(x.size()) != params.size()) {
    throw std::invalid_argument("log_likelihood: image size mismatch");
  }
  if (kind == PixelLikelihood::gaussian) {
    const double n = static_cast<double>(params.size());
    return -0.5 * (x.pixels - params).squaredNorm() / (sigma * sigma) -
           n * (std::log(sigma) + 0.5 * kLog2Pi);
  }
  const auto p = params.array();
  return (x.pixels.array() * p.log() + (1.0 - x.pixels.array()) * (1.0 - p).log()).sum();
}

double recon_loss(const Eigen::VectorXd& x, const Eigen::VectorXd& x_hat) {
  if (x.size() != x_hat.size()) {
    throw std::invalid_argument("recon_loss: shape mismatch (" + std::to_string(x.size()) +
                                " vs " + std::to_string(x_hat.size()) + " pixels)");
  }
  return (x - x_hat).squaredNorm();
}

double recon_loss(const Image& x, const Image& x_hat) {
  if (x.height != x_hat.height || x.width != x_hat.width) {
    throw std::invalid_argument("recon_loss: image shapes differ");
  }
  return recon_loss(x.pixels, x_hat.pixels);
}

double novelty_alpha(double loss, const NoveltyBaseline& baseline, double alpha_max) {
  if (loss < 0.0 || baseline.mean_train_loss < 0.0) {
    throw std::invalid_argument("novelty_alpha: losses must be non-negative");
  }
  if (loss == 0.0) return alpha_max;
  return std::min(alpha_max, std::log1p(baseline.mean_train_loss / loss));
}

Eigen::VectorXd reparam_sample(const MeasurementGaussian& g, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::VectorXd out(g.mean.size());
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = g.mean[i] + g.std[i] * n01(rng);
  return out;
}

void VaeCodec::register_params(ad::ParamStore& store, std::mt19937_64& rng) const {
  if (cfg_.hidden.empty()) throw std::invalid_argument("codec: at least one hidden layer");
  int in = cfg_.pixels();
  for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) {
    add_dense(store, layer("phi", "enc", i), in, cfg_.hidden[i], std::sqrt(2.0 / in), rng);
    in = cfg_.hidden[i];
  }
  add_dense(store, "phi.mean", in, cfg_.measurement_dim, std::sqrt(1.0 / in), rng);
  add_dense(store, "phi.logstd", in, cfg_.measurement_dim, 0.01, rng);

  in = cfg_.measurement_dim;
  for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) {
    const int out = cfg_.hidden[cfg_.hidden.size() - 1 - i];
    add_dense(store, layer("theta", "dec", i), in, out, std::sqrt(2.0 / in), rng);
    in = out;
  }
  add_dense(store, "theta.out", in, cfg_.pixels(), std::sqrt(1.0 / in), rng);
}

VaeCodec::GraphEncoding VaeCodec::encode(ad::ParamBinder& bind, const ad::Var& images) const {
  if (images.rows() != cfg_.pixels()) throw std::invalid_argument("encode: wrong pixel count");
  ad::Var h = images;
  for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) {
    h = ad::relu(dense(bind, layer("phi", "enc", i), h));
  }
  return {dense(bind, "phi.mean", h), dense(bind, "phi.logstd", h)};
}

ad::Var VaeCodec::decode_logits(ad::ParamBinder& bind, const ad::Var& a) const {
  if (a.rows() != cfg_.measurement_dim) throw std::invalid_argument("decode: wrong input size");
  ad::Var h = a;
  for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) {
    h = ad::relu(dense(bind, layer("theta", "dec", i), h));
  }
  return dense(bind, "theta.out", h);
}

ad::Var VaeCodec::log_likelihood(const ad::Var& logits, const ad::Var& images) const {
  const double n = static_cast<double>(images.value().size());
  if (cfg_.likelihood == PixelLikelihood::gaussian) {
    const double s = cfg_.pixel_sigma;
    const ad::Var err = images - ad::sigmoid(logits);
    return ad::add_scalar(-(0.5 / (s * s)) * ad::sum(ad::square(err)),
                          -n * (std::log(s) + 0.5 * kLog2Pi));
  }
  // x * logit - softplus(logit) == x ln p + (1 - x) ln(1 - p)
  return ad::sum(ad::cwise_mul(images, logits)) - ad::sum(ad::softplus(logits));
}

Eigen::MatrixXd VaeCodec::encode_means(const ad::ParamStore& store,
                                       const Eigen::MatrixXd& images) const {
  if (images.rows() != cfg_.pixels()) throw std::invalid_argument("encode: wrong pixel count");
  if (!images.allFinite()) throw std::invalid_argument("encode: non-finite pixels");
  Eigen::MatrixXd h = images;
  for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) {
    h = dense(store, layer("phi", "enc", i), h).cwiseMax(0.0);
  }
  return dense(store, "phi.mean", h);
}

MeasurementGaussian VaeCodec::encode(const ad::ParamStore& store, const Image& x) const {
  if (static_cast<int>(x.size()) != cfg_.pixels()) {
    throw std::invalid_argument("encode: wrong pixel count");
  }
  if (!x.pixels.allFinite()) throw std::invalid_argument("encode: non-finite pixels");
  Eigen::MatrixXd h = x.pixels;
  for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) {
    h = dense(store, layer("phi", "enc", i), h).cwiseMax(0.0);
  }
  MeasurementGaussian g;
  g.mean = dense(store, "phi.mean", h).col(0);
  g.std = dense(store, "phi.logstd", h).col(0).array().exp().matrix();
  return g;
}

Eigen::MatrixXd VaeCodec::decode_means(const ad::ParamStore& store,
                                       const Eigen::MatrixXd& a) const {
  if (a.rows() != cfg_.measurement_dim) throw std::invalid_argument("decode: wrong input size");
  if (!a.allFinite()) throw std::invalid_argument("decode: non-finite measurement");
  Eigen::MatrixXd h = a;
  for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) {
    h = dense(store, layer("theta", "dec", i), h).cwiseMax(0.0);
  }
  const Eigen::MatrixXd logits = dense(store, "theta.out", h);
  return (1.0 / (1.0 + (-logits.array()).exp())).matrix();
}

PixelDistribution VaeCodec::decode(const ad::ParamStore& store, const Eigen::VectorXd& a) const {
  PixelDistribution d;
  d.kind = cfg_.likelihood;
  d.sigma = cfg_.pixel_sigma;
  d.height = cfg_.image_size;
  d.width = cfg_.image_size;
  d.params = decode_means(store, a).col(0);
  return d;
}

}  // namespace latdyn
