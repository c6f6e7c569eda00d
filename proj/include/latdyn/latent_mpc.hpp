#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "latdyn/lgssm.hpp"
#include "latdyn/model.hpp"
#include "latdyn/pendulum_env.hpp"

namespace latdyn {

struct MpcConfig {
  std::size_t horizon = 9;  // T
  Eigen::MatrixXd q_mpc;    // n x n PSD; empty means identity
  Eigen::MatrixXd r_mpc;    // m x m PD; empty means identity
  int max_iters = 20;
  double tol = 1e-4;        // on max |u_new - u_old|
  /// Optional symmetric clamp applied to the returned controls.
  std::optional<double> control_limit;

  Eigen::MatrixXd state_weight(Eigen::Index n) const;
  Eigen::MatrixXd control_weight(Eigen::Index m) const;
};

/// Inferred latent states for a window of images.
struct LatentWindow {
  std::vector<Image> images;
  std::vector<Eigen::VectorXd> controls;  // controls[k] drives frame k -> k + 1
  std::vector<Eigen::VectorXd> measurements;  // encoder means a_k
  std::vector<double> losses;             // reconstruction losses L_k
  std::vector<double> alphas;
  std::vector<Gaussian> filtered;
  std::vector<Gaussian> latents;          // smoothed
  std::vector<StepModel> steps;
  Eigen::VectorXd hidden;                 // recurrent state at the last frame
};

/// Encodes every image, weights each measurement by the novelty alpha when
/// `heteroscedastic` is set (alpha = 1 otherwise), then filters and smooths
/// with the learned locally-linear dynamics.
LatentWindow infer_window(std::span<const Image> images, std::span<const Eigen::VectorXd> controls,
                          const Model& model, bool heteroscedastic,
                          double alpha_max = kDefaultAlphaMax);

/// Goal latent from one image repeated `repeats` times under zero controls:
/// the final smoothed belief.
Gaussian infer_goal_belief(const Image& goal, std::size_t repeats, const Model& model,
                           bool heteroscedastic = false);
Eigen::VectorXd infer_goal(const Image& goal, std::size_t repeats, const Model& model,
                           bool heteroscedastic = false);

struct HorizonSolution {
  std::vector<Eigen::VectorXd> controls;  // u_1..u_T
  std::vector<Eigen::VectorXd> states;    // z_2..z_{T+1}
  double cost = 0.0;
};

/// sum_k (z_{k+1} - z_g)^T Q (z_{k+1} - z_g) + u_k^T R u_k under frozen steps.
double horizon_cost(const Eigen::VectorXd& z1, const Eigen::VectorXd& goal,
                    std::span<const StepModel> steps, std::span<const Eigen::VectorXd> controls,
                    const MpcConfig& cfg);

/// Gradient of horizon_cost with respect to the stacked controls.
Eigen::VectorXd horizon_gradient(const Eigen::VectorXd& z1, const Eigen::VectorXd& goal,
                                 std::span<const StepModel> steps,
                                 std::span<const Eigen::VectorXd> controls, const MpcConfig& cfg);

/// Exact minimiser by batch least squares over the stacked dynamics.
HorizonSolution solve_horizon(const Eigen::VectorXd& z1, const Eigen::VectorXd& goal,
                              std::span<const StepModel> steps, const MpcConfig& cfg);
/// Same problem by a backward Riccati recursion on the goal-augmented state.
HorizonSolution solve_horizon_riccati(const Eigen::VectorXd& z1, const Eigen::VectorXd& goal,
                                      std::span<const StepModel> steps, const MpcConfig& cfg);

struct IterateResult {
  HorizonSolution solution;
  std::size_t solves = 0;
  /// Solves that moved the controls by at least `tol`.
  std::size_t iterations = 0;
  bool converged = false;
  bool monotone = true;  // cost never increased between successive iterates
  std::vector<double> cost_history;
};

/// Relinearise the dynamics along the current controls, solve the frozen
/// problem, repeat until the controls stop moving. Without convergence the
/// lowest-cost iterate is returned with `converged == false`.
IterateResult iterate(const Eigen::VectorXd& z1, const Eigen::VectorXd& goal,
                      const Eigen::VectorXd& hidden, std::span<const Eigen::VectorXd> u_init,
                      const Model& model, const MpcConfig& cfg);

struct EpisodeConfig {
  std::size_t steps = 24;  // K
  std::size_t init_window = 4;
  std::size_t goal_window = 4;
  int action_repeat = 3;
  bool heteroscedastic = true;
  double alpha_max = kDefaultAlphaMax;
  PendulumParams plant;
  MpcConfig mpc;
};

struct EpisodeRecord {
  std::size_t k = 0;
  Eigen::VectorXd control;  // applied (plant-clipped) control
  PlantState state;         // plant state after the step
  double alpha = 1.0;       // weight of the frame observed after the step
  double stage_cost = 0.0;  // squared wrapped angle error to the goal
  double planned_cost = 0.0;
  std::size_t solves = 0;
  bool converged = false;
  bool corrupted = false;
};

struct EpisodeLog {
  std::vector<EpisodeRecord> records;
  std::vector<Image> observed;  // frames fed to the model, after corruption
  double cumulative_error = 0.0;
  bool truncated = false;
};

/// Receding-horizon loop against the simulated pendulum. The first
/// `init_window` frames are recorded under zero torque; step k's observation
/// is corrupted by the events of `corruption` active at k (1-based).
EpisodeLog receding_horizon_run(const PlantState& initial, const PlantState& goal,
                                const CorruptionSpec& corruption, const Model& model,
                                const EpisodeConfig& cfg, std::uint64_t noise_seed);

/// sum_k wrap(theta_goal - theta_k)^2
double tracking_error(std::span<const PlantState> states, const PlantState& goal);

}  // namespace latdyn
