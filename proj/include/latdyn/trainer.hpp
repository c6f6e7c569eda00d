#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "latdyn/autodiff.hpp"
#include "latdyn/lgssm.hpp"
#include "latdyn/model.hpp"
#include "latdyn/pendulum_env.hpp"

namespace latdyn {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::size_t sequence_length = 16;  // I
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  /// Linear warm-up of the weight on the latent (non-reconstruction) terms
  /// from `kl_start` to 1 over this many epochs; 0 disables annealing.
  std::size_t kl_anneal_epochs = 0;
  double kl_start = 0.1;
  double grad_clip = 10.0;
  /// Trajectories held out from the end of the dataset for validation MSE.
  std::size_t validation_trajectories = 32;
  /// Cross-check the ELBO against the closed-form filter marginal on every
  /// batch (costs one extra filter pass per trajectory).
  bool verify_elbo_identity = false;
  ModelConfig model;

  void validate(std::size_t dataset_size, std::size_t dataset_length) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// A window [start, start + length) of one trajectory.
struct SequenceView {
  const Trajectory* trajectory = nullptr;
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Per-trajectory values of one ELBO evaluation, detached from the graph.
struct ElboTrace {
  std::vector<Eigen::VectorXd> a_sample;  // a~
  std::vector<Eigen::VectorXd> z_sample;  // z~
  std::vector<Eigen::VectorXd> controls;
  std::vector<StepModel> steps;           // models used by the filter
  double log_joint = 0.0;                 // ln p(a~, z~ | u)
  double log_posterior = 0.0;             // ln p(z~ | a~, u)
};

struct ElboResult {
  ad::Var loss;        // negative bound averaged over the batch
  double bound = 0.0;  // batch-mean bound (latent terms unweighted)
  std::vector<ElboTrace> traces;
};

/// Single-sample bound per sequence:
///   ln p(x|a~) + ln p(a~, z~|u) - ln q(a~|x) - ln p(z~|a~, u)
/// with a~ ~ q(a|x), z~ ~ p(z|a~, u) drawn by backward sampling through the
/// filtered beliefs. `latent_weight` scales the terms other than
/// ln p(x|a~) in the loss (annealing); the reported bound is unweighted.
ElboResult elbo(ad::ParamBinder& bind, const Model& model, std::span<const SequenceView> batch,
                std::mt19937_64& rng, double latent_weight = 1.0);

/// |(ln p(a~,z~|u) - ln p(z~|a~,u)) - ln p(a~|u)| where the last term comes
/// from the closed-form Kalman filter's prediction-error decomposition.
double elbo_identity_gap(const ElboTrace& trace, const Model& model);

struct TrainStats {
  std::size_t batches = 0;
  double max_identity_gap = 0.0;
  double seconds = 0.0;
};

/// Per-pixel reconstruction MSE of encoder-mean reconstructions.
double reconstruction_mse(const Model& model, std::span<const Trajectory> data);

/// Mean squared-Frobenius reconstruction loss over every frame.
NoveltyBaseline compute_baseline(const Model& model, std::span<const Trajectory> data);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Shuffled minibatch training, then the novelty baseline over the training
/// split. On a non-finite loss, restores the last good epoch and stops with
/// `diverged` set.
Model train(std::span<const Trajectory> dataset, const TrainConfig& cfg,
            TrainStats* stats = nullptr, const EpochCallback& on_epoch = {});

}  // namespace latdyn
