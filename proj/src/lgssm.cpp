#include "latdyn/lgssm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace latdyn {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void symmetrize(Eigen::MatrixXd& m) { m = 0.5 * (m + m.transpose()).eval(); }

void check_step(const StepModel& s, Eigen::Index n, const char* op) {
  if (s.A.rows() != n || s.A.cols() != n || s.B.rows() != n) {
    throw std::invalid_argument(std::string(op) + ": transition dimensions do not match state");
  }
}

}  // namespace

double gaussian_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                            const Eigen::MatrixXd& cov) {
  if (x.size() != mean.size() || cov.rows() != x.size() || cov.cols() != x.size()) {
    throw std::invalid_argument("gaussian_log_density: dimension mismatch");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("gaussian_log_density: covariance is not positive definite");
  }
  const Eigen::VectorXd w = llt.matrixL().solve(x - mean);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (w.squaredNorm() + logdet + static_cast<double>(x.size()) * kLog2Pi);
}

Gaussian predict(const Gaussian& belief, const StepModel& step, const Eigen::VectorXd& u,
                 const NoiseModel& noise) {
  const Eigen::Index n = belief.dim();
  check_step(step, n, "predict");
  if (step.B.cols() != u.size() || noise.Q.rows() != n || belief.cov.rows() != n) {
    throw std::invalid_argument("predict: control or noise dimension mismatch");
  }
  Gaussian out;
  out.mean = step.A * belief.mean + step.B * u;
  out.cov = step.A * belief.cov * step.A.transpose() + noise.Q;
  symmetrize(out.cov);
  return out;
}

UpdateResult update(const Gaussian& prior, const Eigen::VectorXd& a, const StepModel& step,
                    const NoiseModel& noise) {
  const Eigen::Index n = prior.dim();
  const Eigen::Index l = a.size();
  if (step.C.rows() != l || step.C.cols() != n || noise.R_diag.size() != l) {
    throw std::invalid_argument("update: measurement dimension mismatch");
  }
  if (!(step.alpha > 0.0)) throw std::invalid_argument("update: alpha must be positive");

  const Eigen::MatrixXd r_eff = (noise.R_diag / step.alpha).asDiagonal();
  const Eigen::MatrixXd pct = prior.cov * step.C.transpose();
  Eigen::MatrixXd s = step.C * pct + r_eff;
  symmetrize(s);
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("update: innovation covariance is not invertible");
  }
  const Eigen::MatrixXd gain = llt.solve(pct.transpose()).transpose();

  UpdateResult out;
  out.residual = a - step.C * prior.mean;
  out.innovation_cov = s;
  out.posterior.mean = prior.mean + gain * out.residual;
  const Eigen::MatrixXd i_kc = Eigen::MatrixXd::Identity(n, n) - gain * step.C;
  out.posterior.cov = i_kc * prior.cov * i_kc.transpose() + gain * r_eff * gain.transpose();
  symmetrize(out.posterior.cov);

  const Eigen::VectorXd w = llt.matrixL().solve(out.residual);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  out.log_likelihood = -0.5 * (w.squaredNorm() + logdet + static_cast<double>(l) * kLog2Pi);
  return out;
}

Eigen::MatrixXd FixedSteps::measurement_matrix() {
  if (k_ >= steps_.size()) throw std::invalid_argument("kalman_filter: too few step models");
  return steps_[k_].C;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> FixedSteps::transition(const Eigen::VectorXd&,
                                                                   const Eigen::VectorXd&) {
  const auto& s = steps_[k_++];
  return {s.A, s.B};
}

namespace {

FilterResult run_filter(std::span<const Eigen::VectorXd> a_seq,
                        std::span<const Eigen::VectorXd> u_seq,
                        std::span<const double> alphas, StepSource& source,
                        const Gaussian& prior, const NoiseModel& noise) {
  const std::size_t k_len = a_seq.size();
  if (k_len == 0) throw std::invalid_argument("kalman_filter: empty measurement sequence");
  if (u_seq.size() + 1 < k_len) throw std::invalid_argument("kalman_filter: too few controls");
  if (!alphas.empty() && alphas.size() != k_len) {
    throw std::invalid_argument("kalman_filter: alpha count differs from measurement count");
  }

  FilterResult out;
  out.predicted.reserve(k_len);
  out.filtered.reserve(k_len);
  out.steps.reserve(k_len);
  Gaussian belief = prior;
  for (std::size_t k = 0; k < k_len; ++k) {
    StepModel step;
    step.C = source.measurement_matrix();
    step.alpha = alphas.empty() ? 1.0 : alphas[k];
    out.predicted.push_back(belief);
    UpdateResult upd = update(belief, a_seq[k], step, noise);
    out.log_marginal += upd.log_likelihood;
    out.residuals.push_back(std::move(upd.residual));
    out.filtered.push_back(upd.posterior);
    if (k + 1 < k_len) {
      auto [a_mat, b_mat] = source.transition(upd.posterior.mean, u_seq[k]);
      step.A = std::move(a_mat);
      step.B = std::move(b_mat);
      belief = predict(upd.posterior, step, u_seq[k], noise);
    }
    out.steps.push_back(std::move(step));
  }
  return out;
}

}  // namespace

FilterResult kalman_filter(std::span<const Eigen::VectorXd> a_seq,
                           std::span<const Eigen::VectorXd> u_seq,
                           std::span<const StepModel> steps, const Gaussian& prior,
                           const NoiseModel& noise) {
  if (steps.size() != a_seq.size() || u_seq.size() != a_seq.size()) {
    throw std::invalid_argument("kalman_filter: sequences must have equal length");
  }
  std::vector<double> alphas(steps.size());
  for (std::size_t k = 0; k < steps.size(); ++k) alphas[k] = steps[k].alpha;
  FixedSteps source(steps);
  FilterResult out = run_filter(a_seq, u_seq, alphas, source, prior, noise);
  out.steps.back().A = steps.back().A;
  out.steps.back().B = steps.back().B;
  return out;
}

FilterResult kalman_filter(std::span<const Eigen::VectorXd> a_seq,
                           std::span<const Eigen::VectorXd> u_seq,
                           std::span<const double> alphas, StepSource& source,
                           const Gaussian& prior, const NoiseModel& noise) {
  return run_filter(a_seq, u_seq, alphas, source, prior, noise);
}

SmootherResult rts_smooth(const FilterResult& filter, const NoiseModel& noise) {
  const std::size_t k_len = filter.filtered.size();
  if (k_len == 0) throw std::invalid_argument("rts_smooth: empty filter result");
  if (filter.predicted.size() != k_len || filter.steps.size() != k_len) {
    throw std::invalid_argument("rts_smooth: inconsistent filter result");
  }
  SmootherResult out;
  out.smoothed.resize(k_len);
  out.cross_cov.resize(k_len - 1);
  out.gains.resize(k_len - 1);
  out.smoothed[k_len - 1] = filter.filtered[k_len - 1];
  for (std::size_t k = k_len - 1; k-- > 0;) {
    const Gaussian& filt = filter.filtered[k];
    const Gaussian& pred_next = filter.predicted[k + 1];
    const Gaussian& smooth_next = out.smoothed[k + 1];
    const Eigen::MatrixXd& a_mat = filter.steps[k].A;
    if (a_mat.rows() != filt.dim() || noise.Q.rows() != filt.dim()) {
      throw std::invalid_argument("rts_smooth: transition dimension mismatch");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(pred_next.cov);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error("rts_smooth: singular predicted covariance at step " +
                               std::to_string(k + 1));
    }
    // J = P_f A^T P_pred^{-1}
    const Eigen::MatrixXd gain = llt.solve(a_mat * filt.cov).transpose();
    Gaussian s;
    s.mean = filt.mean + gain * (smooth_next.mean - pred_next.mean);
    s.cov = filt.cov + gain * (smooth_next.cov - pred_next.cov) * gain.transpose();
    symmetrize(s.cov);
    out.cross_cov[k] = smooth_next.cov * gain.transpose();
    out.gains[k] = gain;
    out.smoothed[k] = std::move(s);
  }
  return out;
}

double joint_log_likelihood(std::span<const Eigen::VectorXd> a_seq,
                            std::span<const Eigen::VectorXd> z_seq,
                            std::span<const Eigen::VectorXd> u_seq,
                            std::span<const StepModel> steps, const Gaussian& prior,
                            const NoiseModel& noise) {
  const std::size_t k_len = z_seq.size();
  if (k_len == 0 || a_seq.size() != k_len || steps.size() != k_len ||
      u_seq.size() + 1 < k_len) {
    throw std::invalid_argument("joint_log_likelihood: sequence lengths differ");
  }
  const Eigen::MatrixXd r = noise.R();
  double total = gaussian_log_density(z_seq[0], prior.mean, prior.cov);
  for (std::size_t k = 0; k < k_len; ++k) {
    total += gaussian_log_density(a_seq[k], steps[k].C * z_seq[k], r);
    if (k + 1 < k_len) {
      const Eigen::VectorXd mean = steps[k].A * z_seq[k] + steps[k].B * u_seq[k];
      total += gaussian_log_density(z_seq[k + 1], mean, noise.Q);
    }
  }
  return total;
}

Eigen::VectorXd sample_gaussian(const Gaussian& g, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::VectorXd eps(g.dim());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = n01(rng);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.cov);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return g.mean + es.eigenvectors() * root.asDiagonal() * eps;
}

Rollout sample_rollout(const Gaussian& prior, std::span<const Eigen::VectorXd> u_seq,
                       std::span<const StepModel> steps, const NoiseModel& noise,
                       std::mt19937_64& rng) {
  const std::size_t k_len = steps.size();
  if (u_seq.size() + 1 < k_len) throw std::invalid_argument("sample_rollout: too few controls");
  Rollout out;
  const Eigen::MatrixXd r = noise.R();
  Eigen::VectorXd z = sample_gaussian(prior, rng);
  for (std::size_t k = 0; k < k_len; ++k) {
    out.z.push_back(z);
    out.a.push_back(sample_gaussian({steps[k].C * z, r}, rng));
    if (k + 1 < k_len) {
      z = sample_gaussian({steps[k].A * z + steps[k].B * u_seq[k], noise.Q}, rng);
    }
  }
  return out;
}

}  // namespace latdyn
