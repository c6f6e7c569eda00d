#pragma once

#include <random>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "latdyn/autodiff.hpp"
#include "latdyn/lgssm.hpp"

namespace latdyn {

struct DynamicsConfig {
  int state_dim = 3;        // n
  int control_dim = 1;      // m
  int measurement_dim = 2;  // l
  int hidden_dim = 64;      // v
  int num_bases = 8;        // M
  double base_init_noise = 0.01;
};

struct RegressResult {
  StepModel step;           // A, B for z_k -> z_{k+1}; C for the measurement of z_{k+1}
  Eigen::VectorXd hidden;   // h_{k+1}
  Eigen::VectorXd weights;  // mixture weights from h_{k+1}
};

struct ParamRollout {
  std::vector<StepModel> steps;          // T entries
  std::vector<Eigen::VectorXd> means;    // T + 1 entries, means[0] = z_1
  std::vector<Eigen::VectorXd> hidden;   // T + 1 entries, hidden[0] = h_1
};

/// Recurrent regressor of locally-linear step models. A GRU consumes
/// [z_k; u_k]; a softmax over a dense read-out of the new hidden state mixes
/// M globally learned base triples (A_i, B_i, C_i). Parameters live under
/// "psi.*"; base matrices are stored vectorised (column-major), one base per
/// column.
class DynamicsNet {
 public:
  explicit DynamicsNet(DynamicsConfig cfg) : cfg_(cfg) {}

  void register_params(ad::ParamStore& store, std::mt19937_64& rng) const;
  const DynamicsConfig& config() const { return cfg_; }

  Eigen::VectorXd initial_hidden() const { return Eigen::VectorXd::Zero(cfg_.hidden_dim); }
  Eigen::VectorXd gru(const ad::ParamStore& store, const Eigen::VectorXd& z,
                      const Eigen::VectorXd& u, const Eigen::VectorXd& h) const;
  Eigen::VectorXd mixture_weights(const ad::ParamStore& store, const Eigen::VectorXd& h) const;
  /// Convex combination of the base triples.
  StepModel mix(const ad::ParamStore& store, const Eigen::VectorXd& weights) const;

  RegressResult regress(const ad::ParamStore& store, const Eigen::VectorXd& z,
                        const Eigen::VectorXd& u, const Eigen::VectorXd& h) const;

  /// Mean propagation z_{k+1} = A_k z_k + B_k u_k with A_k, B_k regressed
  /// from (z_k, u_k, h_k). Throws on non-finite propagation, naming the step.
  ParamRollout rollout_params(const ad::ParamStore& store, const Eigen::VectorXd& z1,
                              std::span<const Eigen::VectorXd> u_seq,
                              const Eigen::VectorXd& h1) const;

  struct GraphMix {
    ad::Var A, B, C;
  };
  ad::Var gru(ad::ParamBinder& bind, const ad::Var& z, const ad::Var& u, const ad::Var& h) const;
  ad::Var mixture_weights(ad::ParamBinder& bind, const ad::Var& h) const;
  GraphMix mix(ad::ParamBinder& bind, const ad::Var& weights) const;

 private:
  void check_dims(const Eigen::VectorXd& z, const Eigen::VectorXd& u,
                  const Eigen::VectorXd& h) const;
  DynamicsConfig cfg_;
};

/// Online linearisation for the Kalman filter: the measurement matrix comes
/// from the current mixture weights; each transition advances the GRU with
/// the filtered mean.
class Linearizer final : public StepSource {
 public:
  Linearizer(const DynamicsNet& net, const ad::ParamStore& store);
  Linearizer(const DynamicsNet& net, const ad::ParamStore& store, Eigen::VectorXd hidden);

  Eigen::MatrixXd measurement_matrix() override;
  std::pair<Eigen::MatrixXd, Eigen::MatrixXd> transition(const Eigen::VectorXd& filtered_mean,
                                                         const Eigen::VectorXd& u) override;

  const Eigen::VectorXd& hidden() const { return hidden_; }

 private:
  const DynamicsNet& net_;
  const ad::ParamStore& store_;
  Eigen::VectorXd hidden_;
  StepModel current_;
};

}  // namespace latdyn
