#include "latdyn/latent_mpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>

#include "latdyn/dynamics_net.hpp"

namespace latdyn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd MpcConfig::state_weight(Eigen::Index n) const {
  if (q_mpc.size() == 0) return MatrixXd::Identity(n, n);
  if (q_mpc.rows() != n || q_mpc.cols() != n) {
    throw std::invalid_argument("mpc: state weight must be " + std::to_string(n) + "x" +
                                std::to_string(n));
  }
  return q_mpc;
}

MatrixXd MpcConfig::control_weight(Eigen::Index m) const {
  if (r_mpc.size() == 0) return MatrixXd::Identity(m, m);
  if (r_mpc.rows() != m || r_mpc.cols() != m) {
    throw std::invalid_argument("mpc: control weight must be " + std::to_string(m) + "x" +
                                std::to_string(m));
  }
  return r_mpc;
}

LatentWindow infer_window(std::span<const Image> images, std::span<const VectorXd> controls,
                          const Model& model, bool heteroscedastic, double alpha_max) {
  if (images.empty()) throw std::invalid_argument("infer_window: no images");
  if (controls.size() + 1 < images.size()) {
    throw std::invalid_argument("infer_window: need " + std::to_string(images.size() - 1) +
                                " controls, got " + std::to_string(controls.size()));
  }
  const VaeCodec codec = model.codec();
  const DynamicsNet net = model.dynamics();
  const auto K = images.size();
  const int P = codec.config().pixels();

  MatrixXd X(P, static_cast<Eigen::Index>(K));
  for (std::size_t k = 0; k < K; ++k) {
    if (static_cast<int>(images[k].size()) != P) throw std::invalid_argument("infer_window: image size mismatch");
    X.col(static_cast<Eigen::Index>(k)) = images[k].pixels;
  }
  const MatrixXd means = codec.encode_means(model.store, X);
  const MatrixXd recon = codec.decode_means(model.store, means);

  LatentWindow w;
  w.images.assign(images.begin(), images.end());
  w.controls.assign(controls.begin(), controls.begin() + static_cast<std::ptrdiff_t>(K - 1));
  for (std::size_t k = 0; k < K; ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    w.measurements.push_back(means.col(c));
    const double loss = recon_loss(VectorXd(X.col(c)), VectorXd(recon.col(c)));
    w.losses.push_back(loss);
    w.alphas.push_back(heteroscedastic ? novelty_alpha(loss, model.baseline, alpha_max) : 1.0);
  }

  Linearizer lin(net, model.store);
  const NoiseModel noise = model.noise();
  FilterResult f = kalman_filter(w.measurements, w.controls, w.alphas, lin, model.prior(), noise);
  SmootherResult s = rts_smooth(f, noise);
  w.filtered = std::move(f.filtered);
  w.steps = std::move(f.steps);
  w.latents = std::move(s.smoothed);
  w.hidden = lin.hidden();
  return w;
}

Gaussian infer_goal_belief(const Image& goal, std::size_t repeats, const Model& model,
                           bool heteroscedastic) {
  if (repeats == 0) throw std::invalid_argument("infer_goal: repeats must be >= 1");
  std::vector<Image> imgs(repeats, goal);
  std::vector<VectorXd> zeros(repeats - 1, VectorXd::Zero(model.config.control_dim));
  return infer_window(imgs, zeros, model, heteroscedastic).latents.back();
}

VectorXd infer_goal(const Image& goal, std::size_t repeats, const Model& model,
                    bool heteroscedastic) {
  return infer_goal_belief(goal, repeats, model, heteroscedastic).mean;
}

namespace {

struct Stacked {
  MatrixXd F;  // Tn x n
  MatrixXd G;  // Tn x Tm
  MatrixXd Qbar, Rbar;
  VectorXd Zg;
};

void check_problem(const VectorXd& z1, const VectorXd& goal, std::span<const StepModel> steps) {
  if (steps.empty()) throw std::invalid_argument("mpc: empty horizon");
  const auto n = z1.size();
  if (goal.size() != n) throw std::invalid_argument("mpc: goal dimension mismatch");
  for (const auto& s : steps) {
    if (s.A.rows() != n || s.A.cols() != n || s.B.rows() != n || s.B.cols() != steps[0].B.cols()) {
      throw std::invalid_argument("mpc: step model dimension mismatch");
    }
    if (!s.A.allFinite() || !s.B.allFinite()) {
      throw std::runtime_error("mpc: non-finite step matrices");
    }
  }
  if (!z1.allFinite() || !goal.allFinite()) throw std::runtime_error("mpc: non-finite state");
}

Stacked stack(const VectorXd& z1, const VectorXd& goal, std::span<const StepModel> steps,
              const MpcConfig& cfg) {
  check_problem(z1, goal, steps);
  const auto n = z1.size();
  const auto m = steps[0].B.cols();
  const auto T = static_cast<Eigen::Index>(steps.size());
  const MatrixXd Q = cfg.state_weight(n);
  const MatrixXd R = cfg.control_weight(m);

  Stacked s;
  s.F = MatrixXd::Zero(T * n, n);
  s.G = MatrixXd::Zero(T * n, T * m);
  s.Qbar = MatrixXd::Zero(T * n, T * n);
  s.Rbar = MatrixXd::Zero(T * m, T * m);
  s.Zg.resize(T * n);
  MatrixXd phi = MatrixXd::Identity(n, n);
  for (Eigen::Index k = 0; k < T; ++k) {
    const auto& A = steps[static_cast<std::size_t>(k)].A;
    const auto& B = steps[static_cast<std::size_t>(k)].B;
    phi = A * phi;
    s.F.middleRows(k * n, n) = phi;
    if (k > 0) {
      s.G.block(k * n, 0, n, k * m) = A * s.G.block((k - 1) * n, 0, n, k * m);
    }
    s.G.block(k * n, k * m, n, m) = B;
    s.Qbar.block(k * n, k * n, n, n) = Q;
    s.Rbar.block(k * m, k * m, m, m) = R;
    s.Zg.segment(k * n, n) = goal;
  }
  return s;
}

VectorXd flatten(std::span<const VectorXd> controls, Eigen::Index m, std::size_t T) {
  if (controls.size() != T) {
    throw std::invalid_argument("mpc: expected " + std::to_string(T) + " controls, got " +
                                std::to_string(controls.size()));
  }
  VectorXd U(static_cast<Eigen::Index>(T) * m);
  for (std::size_t k = 0; k < T; ++k) {
    if (controls[k].size() != m) throw std::invalid_argument("mpc: control dimension mismatch");
    U.segment(static_cast<Eigen::Index>(k) * m, m) = controls[k];
  }
  return U;
}

HorizonSolution unpack(const Stacked& s, const VectorXd& z1, const VectorXd& U, Eigen::Index m) {
  const auto n = z1.size();
  const VectorXd Z = s.F * z1 + s.G * U;
  HorizonSolution sol;
  const auto T = U.size() / m;
  for (Eigen::Index k = 0; k < T; ++k) {
    sol.controls.push_back(U.segment(k * m, m));
    sol.states.push_back(Z.segment(k * n, n));
  }
  const VectorXd e = Z - s.Zg;
  sol.cost = e.dot(s.Qbar * e) + U.dot(s.Rbar * U);
  return sol;
}

void clamp_controls(HorizonSolution& sol, const MpcConfig& cfg) {
  if (!cfg.control_limit) return;
  const double lim = std::abs(*cfg.control_limit);
  for (auto& u : sol.controls) u = u.cwiseMax(-lim).cwiseMin(lim);
}

double max_abs_diff(std::span<const VectorXd> a, std::span<const VectorXd> b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, (a[k] - b[k]).cwiseAbs().maxCoeff());
  return d;
}

}  // namespace

double horizon_cost(const VectorXd& z1, const VectorXd& goal, std::span<const StepModel> steps,
                    std::span<const VectorXd> controls, const MpcConfig& cfg) {
  check_problem(z1, goal, steps);
  const auto n = z1.size();
  const auto m = steps[0].B.cols();
  if (controls.size() != steps.size()) throw std::invalid_argument("mpc: controls/steps mismatch");
  const MatrixXd Q = cfg.state_weight(n);
  const MatrixXd R = cfg.control_weight(m);
  VectorXd z = z1;
  double cost = 0.0;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    z = steps[k].A * z + steps[k].B * controls[k];
    const VectorXd e = z - goal;
    cost += e.dot(Q * e) + controls[k].dot(R * controls[k]);
  }
  return cost;
}

VectorXd horizon_gradient(const VectorXd& z1, const VectorXd& goal,
                          std::span<const StepModel> steps, std::span<const VectorXd> controls,
                          const MpcConfig& cfg) {
  const Stacked s = stack(z1, goal, steps, cfg);
  const VectorXd U = flatten(controls, steps[0].B.cols(), steps.size());
  const VectorXd e = s.F * z1 + s.G * U - s.Zg;
  return 2.0 * (s.G.transpose() * (s.Qbar * e) + s.Rbar * U);
}

HorizonSolution solve_horizon(const VectorXd& z1, const VectorXd& goal,
                              std::span<const StepModel> steps, const MpcConfig& cfg) {
  const Stacked s = stack(z1, goal, steps, cfg);
  const auto m = steps[0].B.cols();
  const MatrixXd H = s.G.transpose() * s.Qbar * s.G + s.Rbar;
  const VectorXd g = s.G.transpose() * (s.Qbar * (s.F * z1 - s.Zg));
  Eigen::LDLT<MatrixXd> ldlt(H);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw std::runtime_error("mpc: horizon Hessian is not positive definite");
  }
  const VectorXd U = ldlt.solve(-g);
  if (!U.allFinite()) throw std::runtime_error("mpc: non-finite horizon solution");
  HorizonSolution sol = unpack(s, z1, U, m);
  clamp_controls(sol, cfg);
  return sol;
}

HorizonSolution solve_horizon_riccati(const VectorXd& z1, const VectorXd& goal,
                                      std::span<const StepModel> steps, const MpcConfig& cfg) {
  check_problem(z1, goal, steps);
  const auto n = z1.size();
  const auto m = steps[0].B.cols();
  const auto T = steps.size();
  const MatrixXd Q = cfg.state_weight(n);
  const MatrixXd R = cfg.control_weight(m);

  // x = [z; 1] carries the goal offset into a homogeneous quadratic.
  MatrixXd Qa = MatrixXd::Zero(n + 1, n + 1);
  Qa.topLeftCorner(n, n) = Q;
  Qa.topRightCorner(n, 1) = -Q * goal;
  Qa.bottomLeftCorner(1, n) = -(Q * goal).transpose();
  Qa(n, n) = goal.dot(Q * goal);

  auto augment = [&](const StepModel& s) {
    MatrixXd A = MatrixXd::Zero(n + 1, n + 1);
    A.topLeftCorner(n, n) = s.A;
    A(n, n) = 1.0;
    MatrixXd B = MatrixXd::Zero(n + 1, m);
    B.topRows(n) = s.B;
    return std::pair{A, B};
  };

  std::vector<MatrixXd> gains(T);
  MatrixXd P = Qa;
  for (std::size_t i = T; i-- > 0;) {
    const auto [A, B] = augment(steps[i]);
    const MatrixXd S = R + B.transpose() * P * B;
    const MatrixXd K = S.ldlt().solve(B.transpose() * P * A);
    MatrixXd next = A.transpose() * P * A - A.transpose() * P * B * K;
    next = 0.5 * (next + next.transpose()).eval();
    gains[i] = K;
    P = i > 0 ? MatrixXd(Qa + next) : next;
  }

  HorizonSolution sol;
  VectorXd x(n + 1);
  x << z1, 1.0;
  for (std::size_t i = 0; i < T; ++i) {
    const auto [A, B] = augment(steps[i]);
    const VectorXd u = -gains[i] * x;
    x = A * x + B * u;
    sol.controls.push_back(u);
    sol.states.push_back(x.head(n));
  }
  sol.cost = horizon_cost(z1, goal, steps, sol.controls, cfg);
  clamp_controls(sol, cfg);
  return sol;
}

IterateResult iterate(const VectorXd& z1, const VectorXd& goal, const VectorXd& hidden,
                      std::span<const VectorXd> u_init, const Model& model, const MpcConfig& cfg) {
  if (u_init.size() != cfg.horizon) {
    throw std::invalid_argument("mpc: warm start has " + std::to_string(u_init.size()) +
                                " controls, horizon is " + std::to_string(cfg.horizon));
  }
  if (cfg.max_iters < 1) throw std::invalid_argument("mpc: max_iters must be >= 1");
  const DynamicsNet net = model.dynamics();

  // Cost of a control sequence under its own linearisation.
  auto evaluate = [&](std::span<const VectorXd> u) {
    const ParamRollout r = net.rollout_params(model.store, z1, u, hidden);
    return std::pair{r, horizon_cost(z1, goal, r.steps, u, cfg)};
  };

  IterateResult out;
  std::vector<VectorXd> u(u_init.begin(), u_init.end());
  ParamRollout lin = net.rollout_params(model.store, z1, u, hidden);
  double best = std::numeric_limits<double>::infinity();
  for (int it = 0; it < cfg.max_iters; ++it) {
    HorizonSolution sol = solve_horizon(z1, goal, lin.steps, cfg);
    ++out.solves;
    const double delta = max_abs_diff(sol.controls, u);
    auto [next_lin, cost] = evaluate(sol.controls);
    if (!out.cost_history.empty() && cost > out.cost_history.back() + 1e-12) out.monotone = false;
    out.cost_history.push_back(cost);
    sol.cost = cost;
    sol.states.assign(next_lin.means.begin() + 1, next_lin.means.end());
    if (cost < best) {
      best = cost;
      out.solution = sol;
    }
    u = sol.controls;
    lin = std::move(next_lin);
    if (delta < cfg.tol) {
      out.converged = true;
      out.solution = std::move(sol);
      break;
    }
    ++out.iterations;
  }
  return out;
}

double tracking_error(std::span<const PlantState> states, const PlantState& goal) {
  double e = 0.0;
  for (const auto& s : states) {
    const double d = wrap_angle(goal.theta - s.theta);
    e += d * d;
  }
  return e;
}

EpisodeLog receding_horizon_run(const PlantState& initial, const PlantState& goal,
                                const CorruptionSpec& corruption, const Model& model,
                                const EpisodeConfig& cfg, std::uint64_t noise_seed) {
  if (cfg.init_window < 1) throw std::invalid_argument("episode: init_window must be >= 1");
  const int hw = model.config.image_size;
  corruption.validate(cfg.steps + 1, hw, hw);
  EpisodeLog log;
  if (cfg.steps == 0) return log;
  const auto m = model.config.control_dim;
  if (m != 1) throw std::invalid_argument("episode: the pendulum plant takes a scalar torque");

  std::mt19937_64 rng(noise_seed);
  const VectorXd z_goal =
      infer_goal(render(goal, hw, hw), cfg.goal_window, model, cfg.heteroscedastic);

  std::vector<Image> window;
  std::vector<VectorXd> window_u;
  PlantState s = initial;
  for (std::size_t j = 0; j < cfg.init_window; ++j) {
    if (j > 0) {
      s = step_repeated(s, 0.0, cfg.action_repeat, cfg.plant);
      window_u.push_back(VectorXd::Zero(m));
    }
    window.push_back(render(s, hw, hw));
    log.observed.push_back(window.back());
  }

  std::vector<VectorXd> warm(cfg.mpc.horizon, VectorXd::Zero(m));
  std::vector<PlantState> visited;
  try {
    for (std::size_t k = 1; k <= cfg.steps; ++k) {
      const LatentWindow lw = infer_window(window, window_u, model, cfg.heteroscedastic,
                                           cfg.alpha_max);
      const IterateResult plan =
          iterate(lw.latents.back().mean, z_goal, lw.hidden, warm, model, cfg.mpc);

      const double torque =
          std::clamp(plan.solution.controls.front()(0), -cfg.plant.max_torque, cfg.plant.max_torque);
      s = step_repeated(s, torque, cfg.action_repeat, cfg.plant);
      visited.push_back(s);

      const auto active = corruption.active_at(k);
      Image obs = render(s, hw, hw);
      if (!active.empty()) obs = corrupt(obs, active, rng);
      log.observed.push_back(obs);

      window.erase(window.begin());
      window.push_back(obs);
      if (!window_u.empty()) window_u.erase(window_u.begin());
      if (window.size() > 1) window_u.push_back(VectorXd::Constant(1, torque));

      // Shift the plan one step for the next warm start.
      warm.assign(plan.solution.controls.begin() + 1, plan.solution.controls.end());
      warm.push_back(plan.solution.controls.back());

      EpisodeRecord rec;
      rec.k = k;
      rec.control = VectorXd::Constant(1, torque);
      rec.state = s;
      const double loss = recon_loss(
          obs.pixels, model.codec().decode_means(
                          model.store, model.codec().encode_means(model.store, obs.pixels))
                          .col(0));
      rec.alpha = cfg.heteroscedastic ? novelty_alpha(loss, model.baseline, cfg.alpha_max) : 1.0;
      const double d = wrap_angle(goal.theta - s.theta);
      rec.stage_cost = d * d;
      rec.planned_cost = plan.solution.cost;
      rec.solves = plan.solves;
      rec.converged = plan.converged;
      rec.corrupted = !active.empty();
      log.records.push_back(rec);
    }
  } catch (const std::runtime_error&) {
    log.truncated = true;
  }
  log.cumulative_error = tracking_error(visited, goal);
  return log;
}

}  // namespace latdyn
