#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "latdyn/latent_mpc.hpp"
#include "oracles.hpp"

using namespace latdyn;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::vector<StepModel> random_steps(std::mt19937_64& rng, Eigen::Index n, Eigen::Index m,
                                    std::size_t T) {
  std::vector<StepModel> s;
  for (std::size_t k = 0; k < T; ++k) {
    s.push_back({MatrixXd::Identity(n, n) + oracle::random_matrix(n, n, rng, 0.3),
                 oracle::random_matrix(n, m, rng), MatrixXd::Zero(1, n)});
  }
  return s;
}

MpcConfig config(std::size_t T) {
  MpcConfig c;
  c.horizon = T;
  return c;
}

ModelConfig tiny_model(int bases) {
  ModelConfig c;
  c.image_size = 8;
  c.codec_hidden = {16, 8};
  c.hidden_dim = 6;
  c.num_bases = bases;
  return c;
}

Model tiny(int bases, std::uint64_t seed) {
  Model m(tiny_model(bases), seed);
  m.baseline = {2.0, 100};
  return m;
}

std::vector<Image> frames(const std::vector<double>& thetas) {
  std::vector<Image> out;
  for (double t : thetas) out.push_back(render({t, 0.0}, 8, 8));
  return out;
}

}  // namespace

TEST(SolveHorizon, ScalarExample) {
  const std::vector<StepModel> steps = {{MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1)}};
  const HorizonSolution s = solve_horizon(VectorXd::Zero(1), VectorXd::Ones(1), steps, config(1));
  ASSERT_EQ(s.controls.size(), 1u);
  EXPECT_DOUBLE_EQ(s.controls[0](0), 0.5);
  EXPECT_DOUBLE_EQ(s.states[0](0), 0.5);
  EXPECT_DOUBLE_EQ(s.cost, 0.5);
}

TEST(SolveHorizon, AtGoalWithIdentityDynamicsIsZero) {
  std::mt19937_64 rng(1);
  std::vector<StepModel> steps;
  for (int k = 0; k < 6; ++k) steps.push_back({MatrixXd::Identity(3, 3), oracle::random_matrix(3, 2, rng), MatrixXd::Zero(2, 3)});
  const VectorXd z = oracle::random_vector(3, rng);
  const HorizonSolution s = solve_horizon(z, z, steps, config(6));
  for (const auto& u : s.controls) EXPECT_LT(u.norm(), 1e-14);
  EXPECT_LT(s.cost, 1e-24);
}

TEST(SolveHorizon, KktResidualAndRiccatiAgreement) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 2 + trial % 3, m = 1 + trial % 2;
    const std::size_t T = 3 + static_cast<std::size_t>(trial % 7);
    const auto steps = random_steps(rng, n, m, T);
    MpcConfig cfg = config(T);
    cfg.q_mpc = oracle::random_spd(n, rng, 0.1);
    cfg.r_mpc = oracle::random_spd(m, rng, 0.1);
    const VectorXd z1 = oracle::random_vector(n, rng), goal = oracle::random_vector(n, rng);
    const HorizonSolution a = solve_horizon(z1, goal, steps, cfg);
    const HorizonSolution b = solve_horizon_riccati(z1, goal, steps, cfg);
    const VectorXd grad = horizon_gradient(z1, goal, steps, a.controls, cfg);
    EXPECT_LT(grad.cwiseAbs().maxCoeff(), 1e-8) << trial;
    for (std::size_t k = 0; k < T; ++k) {
      EXPECT_LT((a.controls[k] - b.controls[k]).cwiseAbs().maxCoeff(), 1e-8) << trial;
      EXPECT_LT((a.states[k] - b.states[k]).cwiseAbs().maxCoeff(), 1e-8) << trial;
    }
    EXPECT_NEAR(a.cost, horizon_cost(z1, goal, steps, a.controls, cfg), 1e-9 * (1 + a.cost));
  }
}

TEST(SolveHorizon, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const auto steps = random_steps(rng, 3, 2, 4);
  const VectorXd z1 = oracle::random_vector(3, rng), goal = oracle::random_vector(3, rng);
  std::vector<VectorXd> u;
  for (int k = 0; k < 4; ++k) u.push_back(oracle::random_vector(2, rng));
  const MpcConfig cfg = config(4);
  const VectorXd g = horizon_gradient(z1, goal, steps, u, cfg);
  for (int k = 0; k < 4; ++k) {
    for (int i = 0; i < 2; ++i) {
      const double fd = oracle::central_diff(
          [&] { return horizon_cost(z1, goal, steps, u, cfg); }, u[static_cast<std::size_t>(k)](i));
      EXPECT_LT(oracle::rel_err(g(2 * k + i), fd), 1e-6);
    }
  }
}

TEST(SolveHorizon, BeatsRandomSearch) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const auto steps = random_steps(rng, 3, 1, 5);
    const MpcConfig cfg = config(5);
    const VectorXd z1 = oracle::random_vector(3, rng), goal = oracle::random_vector(3, rng);
    const HorizonSolution s = solve_horizon(z1, goal, steps, cfg);
    double scale = 0.0;
    for (const auto& u : s.controls) scale = std::max(scale, std::abs(u(0)));
    std::normal_distribution<double> perturb(0.0, 1.0);
    for (int i = 0; i < 10000; ++i) {
      std::vector<VectorXd> u = s.controls;
      // Half the draws are global, half are local perturbations of u*.
      const double sd = i % 2 == 0 ? 2.0 * (scale + 1.0) : 1e-3;
      for (auto& v : u) v(0) = (i % 2 == 0 ? 0.0 : v(0)) + sd * perturb(rng);
      ASSERT_LE(s.cost, horizon_cost(z1, goal, steps, u, cfg)) << trial << " draw " << i;
    }
  }
}

TEST(SolveHorizon, Errors) {
  std::mt19937_64 rng(5);
  auto steps = random_steps(rng, 2, 1, 3);
  EXPECT_THROW(solve_horizon(VectorXd::Zero(2), VectorXd::Zero(2), {}, config(0)),
               std::invalid_argument);
  EXPECT_THROW(solve_horizon(VectorXd::Zero(3), VectorXd::Zero(2), steps, config(3)),
               std::invalid_argument);
  steps[1].A(0, 0) = std::nan("");
  EXPECT_THROW(solve_horizon(VectorXd::Zero(2), VectorXd::Zero(2), steps, config(3)),
               std::runtime_error);
}

TEST(SolveHorizon, OptionalClamp) {
  const std::vector<StepModel> steps = {{MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1)}};
  MpcConfig cfg = config(1);
  cfg.control_limit = 0.2;
  const HorizonSolution s = solve_horizon(VectorXd::Zero(1), VectorXd::Ones(1), steps, cfg);
  EXPECT_DOUBLE_EQ(s.controls[0](0), 0.2);
}

TEST(Iterate, GloballyLinearModelConvergesInOneIteration) {
  const Model m = tiny(1, 6);
  std::mt19937_64 rng(7);
  const VectorXd z1 = oracle::random_vector(3, rng), goal = oracle::random_vector(3, rng);
  const std::vector<VectorXd> u0(9, VectorXd::Zero(1));
  const IterateResult r = iterate(z1, goal, VectorXd::Zero(6), u0, m, config(9));
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations, 1u);
  EXPECT_EQ(r.solves, 2u);
  EXPECT_TRUE(r.monotone);
  const auto lin = m.dynamics().rollout_params(m.store, z1, u0, VectorXd::Zero(6));
  const HorizonSolution direct = solve_horizon(z1, goal, lin.steps, config(9));
  for (std::size_t k = 0; k < 9; ++k) EXPECT_LT((r.solution.controls[k] - direct.controls[k]).norm(), 1e-12);
}

TEST(Iterate, InfiniteToleranceStopsAfterOneSolve) {
  Model m = tiny(4, 8);
  MpcConfig cfg = config(5);
  cfg.tol = std::numeric_limits<double>::infinity();
  const std::vector<VectorXd> u0(5, VectorXd::Zero(1));
  const IterateResult r = iterate(VectorXd::Ones(3), VectorXd::Zero(3), VectorXd::Zero(6), u0, m, cfg);
  EXPECT_EQ(r.solves, 1u);
  EXPECT_EQ(r.iterations, 0u);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.cost_history.size(), 1u);
}

TEST(Iterate, ReturnsBestIterateWhenNotConverged) {
  Model m = tiny(4, 9);
  std::mt19937_64 rng(10);
  m.store.get("psi.mix.w").value = oracle::random_matrix(4, 6, rng, 3.0);
  m.store.get("psi.gru.w_update").value = oracle::random_matrix(6, 4, rng, 2.0);
  m.store.get("psi.gru.w_cand").value = oracle::random_matrix(6, 4, rng, 2.0);
  MpcConfig cfg = config(5);
  cfg.max_iters = 2;
  cfg.tol = 0.0;
  const std::vector<VectorXd> u0(5, VectorXd::Zero(1));
  const IterateResult r = iterate(VectorXd::Ones(3), -VectorXd::Ones(3), VectorXd::Zero(6), u0, m, cfg);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.solves, 2u);
  EXPECT_EQ(r.solution.cost, std::min(r.cost_history[0], r.cost_history[1]));
  EXPECT_THROW(iterate(VectorXd::Ones(3), VectorXd::Ones(3), VectorXd::Zero(6),
                       std::vector<VectorXd>(4, VectorXd::Zero(1)), m, cfg),
               std::invalid_argument);
}

TEST(InferWindow, SingleImageIsOneUpdate) {
  const Model m = tiny(3, 11);
  const auto imgs = frames({0.7});
  const LatentWindow w = infer_window(imgs, {}, m, false);
  const VectorXd a = m.codec().encode(m.store, imgs[0]).mean;
  const DynamicsNet net = m.dynamics();
  StepModel s = net.mix(m.store, net.mixture_weights(m.store, net.initial_hidden()));
  const UpdateResult u = update(m.prior(), a, s, m.noise());
  ASSERT_EQ(w.latents.size(), 1u);
  EXPECT_LT((w.latents[0].mean - u.posterior.mean).norm(), 1e-14);
  EXPECT_LT((w.latents[0].cov - u.posterior.cov).norm(), 1e-14);
  EXPECT_EQ(w.alphas[0], 1.0);
}

TEST(InferWindow, UniformLn2WeightEqualsRescaledNoise) {
  Model m = tiny(3, 12);
  const auto imgs = frames({0.5, 0.5, 0.5, 0.5});
  const std::vector<VectorXd> u(3, VectorXd::Zero(1));
  const LatentWindow plain = infer_window(imgs, u, m, false);
  m.baseline.mean_train_loss = plain.losses[0];  // every L_k equals the baseline
  const LatentWindow weighted = infer_window(imgs, u, m, true);
  for (double a : weighted.alphas) EXPECT_NEAR(a, std::numbers::ln2, 1e-15);
  m.store.get("noise.log_r").value.array() -= std::log(std::numbers::ln2);
  const LatentWindow rescaled = infer_window(imgs, u, m, false);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_LT((weighted.latents[k].mean - rescaled.latents[k].mean).norm(), 1e-10);
    EXPECT_LT((weighted.latents[k].cov - rescaled.latents[k].cov).norm(), 1e-10);
  }
}

TEST(InferWindow, FlagOffMatchesUnitAlphaFilter) {
  const Model m = tiny(3, 13);
  const auto imgs = frames({0.1, 0.3, 0.6});
  const std::vector<VectorXd> u = {VectorXd::Constant(1, 0.5), VectorXd::Constant(1, -0.5)};
  const LatentWindow w = infer_window(imgs, u, m, false);
  const DynamicsNet net = m.dynamics();
  Linearizer lin(net, m.store);
  const FilterResult f = kalman_filter(w.measurements, u, {}, lin, m.prior(), m.noise());
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(w.filtered[k].mean, f.filtered[k].mean);
  EXPECT_EQ(w.hidden, lin.hidden());
  EXPECT_THROW(infer_window(imgs, std::vector<VectorXd>(1, VectorXd::Zero(1)), m, false),
               std::invalid_argument);
  EXPECT_THROW(infer_window({}, {}, m, false), std::invalid_argument);
}

TEST(InferGoal, SingleRepeatAndDeterminism) {
  const Model m = tiny(3, 14);
  const Image g = render({2.9, 0.0}, 8, 8);
  const LatentWindow w = infer_window(std::span<const Image>(&g, 1), {}, m, false);
  EXPECT_EQ(infer_goal(g, 1, m), w.latents[0].mean);
  EXPECT_EQ(infer_goal(g, 4, m), infer_goal(g, 4, m));
  EXPECT_THROW(infer_goal(g, 0, m), std::invalid_argument);
}

TEST(Episode, ZeroStepsGivesEmptyLog) {
  const Model m = tiny(3, 15);
  EpisodeConfig cfg;
  cfg.steps = 0;
  const EpisodeLog log = receding_horizon_run({0.5, 0.0}, {2.9, 0.0}, {}, m, cfg, 1);
  EXPECT_TRUE(log.records.empty());
  EXPECT_EQ(log.cumulative_error, 0.0);
  EXPECT_FALSE(log.truncated);
}

TEST(Episode, RunsAndIsDeterministic) {
  const Model m = tiny(3, 16);
  EpisodeConfig cfg;
  cfg.steps = 5;
  cfg.mpc.horizon = 4;
  CorruptionSpec spec;
  spec.events.push_back({2, 2, Occlusion{0, 0, 8, 8, 1.0}});
  const EpisodeLog a = receding_horizon_run({2.0, 0.0}, {2.9, 0.0}, spec, m, cfg, 7);
  const EpisodeLog b = receding_horizon_run({2.0, 0.0}, {2.9, 0.0}, spec, m, cfg, 7);
  ASSERT_EQ(a.records.size(), 5u);
  std::vector<PlantState> states;
  for (std::size_t k = 0; k < 5; ++k) {
    const auto& r = a.records[k];
    EXPECT_EQ(r.k, k + 1);
    EXPECT_LE(std::abs(r.control(0)), 2.0);
    EXPECT_EQ(r.corrupted, k + 1 == 2 || k + 1 == 3);
    EXPECT_GT(r.alpha, 0.0);
    EXPECT_EQ(r.control, b.records[k].control);
    EXPECT_EQ(r.state.theta, b.records[k].state.theta);
    states.push_back(r.state);
  }
  EXPECT_NEAR(a.cumulative_error, tracking_error(states, {2.9, 0.0}), 1e-12);
  EXPECT_THROW(receding_horizon_run({0.0, 0.0}, {2.9, 0.0}, spec, m,
                                    [] { EpisodeConfig c; c.steps = 1; return c; }(), 7),
               std::invalid_argument);
}

TEST(Tracking, StationaryAtGoalIsZero) {
  const PlantState goal{2.9, 0.0};
  const std::vector<PlantState> states(10, goal);
  EXPECT_EQ(tracking_error(states, goal), 0.0);
  const std::vector<PlantState> across = {{-3.1, 0.0}};
  const double d = 2 * std::numbers::pi - 3.1 - 3.1;
  EXPECT_NEAR(tracking_error(across, {3.1, 0.0}), d * d, 1e-12);
}
