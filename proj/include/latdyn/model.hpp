#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "latdyn/dynamics_net.hpp"
#include "latdyn/lgssm.hpp"
#include "latdyn/param_store.hpp"
#include "latdyn/vae_codec.hpp"

namespace latdyn {

struct ModelConfig {
  int image_size = 32;
  int state_dim = 3;        // n
  int control_dim = 1;      // m
  int measurement_dim = 2;  // l
  int hidden_dim = 64;      // v
  int num_bases = 8;        // M
  std::vector<int> codec_hidden = {256, 128};
  PixelLikelihood likelihood = PixelLikelihood::gaussian;
  double pixel_sigma = 0.1;
  double init_process_var = 0.05;
  double init_measurement_var = 0.05;
  double init_prior_var = 1.0;

  CodecConfig codec() const;
  DynamicsConfig dynamics() const;
  void validate() const;

  /// z in R^3, a in R^2, u in R.
  static ModelConfig pendulum();
  /// z in R^10, a in R^4, u in R^2.
  static ModelConfig reacher();
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, ModelConfig& c);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mse = 0.0;  // per-pixel reconstruction MSE on held-out frames
};

/// Parameters {phi, theta, psi} and the log-diagonal noise parameters
/// ("noise.log_q", "noise.log_r", "noise.log_prior") in one store.
struct Model {
  ModelConfig config;
  ad::ParamStore store;
  NoveltyBaseline baseline;
  std::vector<EpochRecord> curve;
  bool diverged = false;

  Model() = default;
  Model(const ModelConfig& cfg, std::uint64_t seed);

  VaeCodec codec() const { return VaeCodec(config.codec()); }
  DynamicsNet dynamics() const { return DynamicsNet(config.dynamics()); }
  NoiseModel noise() const;
  Gaussian prior() const;
};

void save_checkpoint(const Model& model, const std::filesystem::path& dir);
/// Throws std::runtime_error with the offending field or parameter name when
/// the manifest is malformed, versions differ, or dimensions disagree with
/// `expected` (when given).
Model load_checkpoint(const std::filesystem::path& dir, const ModelConfig* expected = nullptr);

}  // namespace latdyn
