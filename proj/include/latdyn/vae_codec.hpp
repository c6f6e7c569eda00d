#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "latdyn/autodiff.hpp"
#include "latdyn/pendulum_env.hpp"

namespace latdyn {

enum class PixelLikelihood { gaussian, bernoulli };

PixelLikelihood parse_likelihood(const std::string& s);
std::string to_string(PixelLikelihood kind);

struct CodecConfig {
  int image_size = 32;
  int measurement_dim = 2;  // l
  std::vector<int> hidden = {256, 128};
  PixelLikelihood likelihood = PixelLikelihood::gaussian;
  double pixel_sigma = 0.1;

  int pixels() const { return image_size * image_size; }
};

/// Diagonal Gaussian q(a | x).
struct MeasurementGaussian {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
};

/// Decoder output p(x | a). `params` is the mean image for the Gaussian
/// likelihood and the per-pixel probability for the Bernoulli likelihood;
/// both are the reconstruction x_hat used by the novelty weight.
struct PixelDistribution {
  PixelLikelihood kind = PixelLikelihood::gaussian;
  Eigen::VectorXd params;
  double sigma = 0.1;
  int height = 0;
  int width = 0;

  Image reconstruction() const;
  double log_likelihood(const Image& x) const;
};

/// Average training-set reconstruction loss.
struct NoveltyBaseline {
  double mean_train_loss = 0.0;
  std::size_t n_images = 0;
};

/// Squared Frobenius norm of the pixel difference.
double recon_loss(const Image& x, const Image& x_hat);
double recon_loss(const Eigen::VectorXd& x, const Eigen::VectorXd& x_hat);

constexpr double kDefaultAlphaMax = 50.0;

/// alpha = ln(1 + mean_train_loss / loss); `alpha_max` at loss == 0.
double novelty_alpha(double loss, const NoveltyBaseline& baseline,
                     double alpha_max = kDefaultAlphaMax);

/// mean + std * eps, eps ~ N(0, I).
Eigen::VectorXd reparam_sample(const MeasurementGaussian& g, std::mt19937_64& rng);

/// Recognition network q_phi(a|x) (parameters "phi.*") and generative decoder
/// p_theta(x|a) (parameters "theta.*"). Dense ReLU stacks; the decoder
/// mirrors the encoder.
class VaeCodec {
 public:
  explicit VaeCodec(CodecConfig cfg) : cfg_(std::move(cfg)) {}

  void register_params(ad::ParamStore& store, std::mt19937_64& rng) const;
  const CodecConfig& config() const { return cfg_; }

  struct GraphEncoding {
    ad::Var mean;     // l x batch
    ad::Var log_std;  // l x batch
  };
  /// `images` is pixels x batch.
  GraphEncoding encode(ad::ParamBinder& bind, const ad::Var& images) const;
  /// Pre-sigmoid decoder output, pixels x batch.
  ad::Var decode_logits(ad::ParamBinder& bind, const ad::Var& a) const;
  /// Sum over pixels and batch of ln p(x | logits).
  ad::Var log_likelihood(const ad::Var& logits, const ad::Var& images) const;

  MeasurementGaussian encode(const ad::ParamStore& store, const Image& x) const;
  /// Batched encoder means, one image per column.
  Eigen::MatrixXd encode_means(const ad::ParamStore& store, const Eigen::MatrixXd& images) const;
  PixelDistribution decode(const ad::ParamStore& store, const Eigen::VectorXd& a) const;
  /// Batched reconstructions x_hat, one measurement per column.
  Eigen::MatrixXd decode_means(const ad::ParamStore& store, const Eigen::MatrixXd& a) const;

 private:
  CodecConfig cfg_;
};

}  // namespace latdyn
