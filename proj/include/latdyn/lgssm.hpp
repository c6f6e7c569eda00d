#pragma once

// Linear Gaussian state-space model:
//   z_{k+1} ~ N(A_k z_k + B_k u_k, Q),   a_k ~ N(C_k z_k, R / alpha_k)
// with z_1 ~ N(m_1, Sigma_1) and R diagonal.

#include <cstddef>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace latdyn {

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  Eigen::Index dim() const { return mean.size(); }
};

struct NoiseModel {
  Eigen::MatrixXd Q;       // n x n, SPD
  Eigen::VectorXd R_diag;  // l, positive

  Eigen::MatrixXd R() const { return R_diag.asDiagonal(); }
};

/// Local linearisation for one time step. `alpha` scales the measurement
/// precision: the effective measurement covariance is R / alpha.
struct StepModel {
  Eigen::MatrixXd A;  // n x n
  Eigen::MatrixXd B;  // n x m
  Eigen::MatrixXd C;  // l x n
  double alpha = 1.0;
};

/// ln N(x; mean, cov) via Cholesky. Throws if cov is not positive definite.
double gaussian_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                            const Eigen::MatrixXd& cov);

Gaussian predict(const Gaussian& belief, const StepModel& step, const Eigen::VectorXd& u,
                 const NoiseModel& noise);

struct UpdateResult {
  Gaussian posterior;
  Eigen::VectorXd residual;        // a - C * prior.mean
  Eigen::MatrixXd innovation_cov;  // C P C^T + R / alpha
  double log_likelihood = 0.0;     // ln N(a; C m, S)
};

/// Joseph-form Kalman measurement update with precision alpha * R^{-1}.
UpdateResult update(const Gaussian& prior, const Eigen::VectorXd& a, const StepModel& step,
                    const NoiseModel& noise);

/// Supplies step models to the filter as it runs. The filter asks for the
/// measurement matrix of the current step, updates, then asks for the
/// transition out of the filtered state.
class StepSource {
 public:
  virtual ~StepSource() = default;
  virtual Eigen::MatrixXd measurement_matrix() = 0;
  /// (A_k, B_k) for z_k -> z_{k+1}; may depend on the filtered mean.
  virtual std::pair<Eigen::MatrixXd, Eigen::MatrixXd> transition(
      const Eigen::VectorXd& filtered_mean, const Eigen::VectorXd& u) = 0;
};

/// Precomputed step models.
class FixedSteps final : public StepSource {
 public:
  explicit FixedSteps(std::span<const StepModel> steps) : steps_(steps) {}
  Eigen::MatrixXd measurement_matrix() override;
  std::pair<Eigen::MatrixXd, Eigen::MatrixXd> transition(const Eigen::VectorXd&,
                                                         const Eigen::VectorXd&) override;

 private:
  std::span<const StepModel> steps_;
  std::size_t k_ = 0;
};

struct FilterResult {
  std::vector<Gaussian> predicted;  // p(z_k | a_{1:k-1}); predicted[0] is the prior
  std::vector<Gaussian> filtered;   // p(z_k | a_{1:k})
  std::vector<StepModel> steps;     // models actually used; last A/B unused
  std::vector<Eigen::VectorXd> residuals;
  double log_marginal = 0.0;        // ln p(a_{1:K} | u) by prediction-error decomposition
};

/// Update with a_k, then predict with u_k, for k = 1..K (no predict after
/// the last update). `steps` and `u_seq` must have K entries.
FilterResult kalman_filter(std::span<const Eigen::VectorXd> a_seq,
                           std::span<const Eigen::VectorXd> u_seq,
                           std::span<const StepModel> steps, const Gaussian& prior,
                           const NoiseModel& noise);

/// Online variant: step models come from `source`; alpha_k from `alphas`
/// (empty means alpha = 1). `u_seq` needs at least K - 1 entries.
FilterResult kalman_filter(std::span<const Eigen::VectorXd> a_seq,
                           std::span<const Eigen::VectorXd> u_seq,
                           std::span<const double> alphas, StepSource& source,
                           const Gaussian& prior, const NoiseModel& noise);

struct SmootherResult {
  std::vector<Gaussian> smoothed;
  /// cross_cov[k] = Cov(z_{k+1}, z_k | a_{1:K}), K - 1 entries.
  std::vector<Eigen::MatrixXd> cross_cov;
  /// RTS gains J_k = P_{k|k} A_k^T P_{k+1|k}^{-1}, K - 1 entries.
  std::vector<Eigen::MatrixXd> gains;
};

SmootherResult rts_smooth(const FilterResult& filter, const NoiseModel& noise);

/// ln p(z_1) + sum ln N(z_{k+1}; A_k z_k + B_k u_k, Q) + sum ln N(a_k; C_k z_k, R).
/// Uses the constant R; step alphas are ignored.
double joint_log_likelihood(std::span<const Eigen::VectorXd> a_seq,
                            std::span<const Eigen::VectorXd> z_seq,
                            std::span<const Eigen::VectorXd> u_seq,
                            std::span<const StepModel> steps, const Gaussian& prior,
                            const NoiseModel& noise);

struct Rollout {
  std::vector<Eigen::VectorXd> z;
  std::vector<Eigen::VectorXd> a;
};

/// Ancestral sample of the generative chain. Zero covariances are allowed.
Rollout sample_rollout(const Gaussian& prior, std::span<const Eigen::VectorXd> u_seq,
                       std::span<const StepModel> steps, const NoiseModel& noise,
                       std::mt19937_64& rng);

/// Draw from N(mean, cov) for PSD cov (eigen-decomposition, so singular
/// covariances are fine).
Eigen::VectorXd sample_gaussian(const Gaussian& g, std::mt19937_64& rng);

}  // namespace latdyn
