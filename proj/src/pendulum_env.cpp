#include "latdyn/pendulum_env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace latdyn {

double wrap_angle(double angle) {
  constexpr double pi = std::numbers::pi;
  if (angle > -pi && angle <= pi) return angle;
  double wrapped = std::fmod(angle + pi, 2.0 * pi);
  if (wrapped <= 0.0) wrapped += 2.0 * pi;
  return wrapped - pi;
}

PlantState step(const PlantState& s, double torque, const PendulumParams& p) {
  if (!std::isfinite(s.theta) || !std::isfinite(s.theta_dot) || !std::isfinite(torque)) {
    throw std::invalid_argument("pendulum step: non-finite state or torque");
  }
  if (p.substeps < 1) throw std::invalid_argument("pendulum step: substeps must be >= 1");
  const double u = std::clamp(torque, -p.max_torque, p.max_torque);
  const double h = p.dt / p.substeps;
  double theta = s.theta;
  double theta_dot = s.theta_dot;
  for (int i = 0; i < p.substeps; ++i) {
    const double accel = 3.0 * p.gravity / (2.0 * p.length) * std::sin(theta) +
                         3.0 * u / (p.mass * p.length * p.length);
    theta_dot = std::clamp(theta_dot + accel * h, -p.max_speed, p.max_speed);
    theta += theta_dot * h;
  }
  return {wrap_angle(theta), theta_dot};
}

PlantState step_repeated(const PlantState& s, double torque, int repeat,
                         const PendulumParams& p) {
  if (repeat < 1) throw std::invalid_argument("pendulum step: repeat must be >= 1");
  PlantState out = s;
  for (int i = 0; i < repeat; ++i) out = step(out, torque, p);
  return out;
}

double mechanical_energy(const PlantState& s, const PendulumParams& p) {
  // Uniform rod pivoting at one end: inertia m l^2 / 3, centre of mass at l / 2.
  return p.mass * p.length * p.length * s.theta_dot * s.theta_dot / 6.0 +
         0.5 * p.mass * p.gravity * p.length * std::cos(s.theta);
}

Image::Image(int h, int w, double fill) : height(h), width(w) {
  if (h <= 0 || w <= 0) throw std::invalid_argument("image dimensions must be positive");
  pixels = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(h) * w, fill);
}

double rod_half_width(int width) { return width / 32.0; }

Image render(const PlantState& s, int height, int width) {
  Image img(height, width, 0.0);
  const double rod_length = std::floor(0.4 * width);
  const double half_width = rod_half_width(width);
  const double dir_x = std::sin(s.theta);
  const double dir_y = -std::cos(s.theta);
  const double cx = 0.5 * width;
  const double cy = 0.5 * height;
  for (int r = 0; r < height; ++r) {
    const double py = r + 0.5 - cy;
    for (int c = 0; c < width; ++c) {
      const double px = c + 0.5 - cx;
      const double t = std::clamp(px * dir_x + py * dir_y, 0.0, rod_length);
      const double ex = px - t * dir_x;
      const double ey = py - t * dir_y;
      const double dist = std::sqrt(ex * ex + ey * ey);
      // One-pixel linear ramp centred on the rod edge.
      img.at(r, c) = std::clamp(half_width + 0.5 - dist, 0.0, 1.0);
    }
  }
  return img;
}

void CorruptionSpec::validate(std::size_t sequence_length, int height, int width) const {
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    const std::string where = "corruption event " + std::to_string(i) + ": ";
    if (e.step >= sequence_length) throw std::invalid_argument(where + "step outside sequence");
    if (e.duration == 0) throw std::invalid_argument(where + "duration must be >= 1");
    if (const auto* noise = std::get_if<GaussianNoise>(&e.kind)) {
      if (!(noise->sigma >= 0.0)) throw std::invalid_argument(where + "sigma must be >= 0");
    } else {
      const auto& occ = std::get<Occlusion>(e.kind);
      if (occ.row < 0 || occ.col < 0 || occ.height < 0 || occ.width < 0 ||
          occ.row + occ.height > height || occ.col + occ.width > width) {
        throw std::invalid_argument(where + "occlusion rectangle outside image");
      }
      if (occ.intensity < 0.0 || occ.intensity > 1.0) {
        throw std::invalid_argument(where + "occlusion intensity outside [0, 1]");
      }
    }
  }
}

std::vector<CorruptionEvent> CorruptionSpec::active_at(std::size_t k) const {
  std::vector<CorruptionEvent> out;
  for (const auto& e : events) {
    if (e.active_at(k)) out.push_back(e);
  }
  return out;
}

Image corrupt(const Image& img, std::span<const CorruptionEvent> events,
              std::mt19937_64& rng) {
  Image out = img;
  for (const auto& e : events) {
    if (const auto* noise = std::get_if<GaussianNoise>(&e.kind)) {
      std::normal_distribution<double> n01(0.0, 1.0);
      for (Eigen::Index i = 0; i < out.pixels.size(); ++i) {
        out.pixels[i] = std::clamp(out.pixels[i] + noise->sigma * n01(rng), 0.0, 1.0);
      }
    } else {
      const auto& occ = std::get<Occlusion>(e.kind);
      const int r_end = std::min(out.height, occ.row + occ.height);
      const int c_end = std::min(out.width, occ.col + occ.width);
      for (int r = std::max(0, occ.row); r < r_end; ++r) {
        for (int c = std::max(0, occ.col); c < c_end; ++c) out.at(r, c) = occ.intensity;
      }
    }
  }
  return out;
}

Occlusion random_occlusion(int height, int width, double area_fraction, double intensity,
                           std::mt19937_64& rng) {
  if (!(area_fraction > 0.0 && area_fraction <= 1.0)) {
    throw std::invalid_argument("occlusion area fraction must be in (0, 1]");
  }
  const double side = std::sqrt(area_fraction);
  Occlusion occ;
  occ.height = std::clamp(static_cast<int>(std::lround(side * height)), 1, height);
  occ.width = std::clamp(static_cast<int>(std::lround(side * width)), 1, width);
  occ.row = std::uniform_int_distribution<int>(0, height - occ.height)(rng);
  occ.col = std::uniform_int_distribution<int>(0, width - occ.width)(rng);
  occ.intensity = intensity;
  return occ;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<Trajectory> collect_trajectories(const CollectConfig& cfg, std::uint64_t seed) {
  if (cfg.n_traj < 1) throw std::invalid_argument("collect_trajectories: n_traj must be >= 1");
  if (cfg.length < 2) throw std::invalid_argument("collect_trajectories: length must be >= 2");
  if (cfg.action_repeat < 1) {
    throw std::invalid_argument("collect_trajectories: action_repeat must be >= 1");
  }
  if (cfg.image_size < 4 || cfg.image_size > 64) {
    throw std::invalid_argument("collect_trajectories: image_size must be in [4, 64]");
  }
  if (!(cfg.policy_std >= 0.0)) {
    throw std::invalid_argument("collect_trajectories: policy_std must be >= 0");
  }

  std::vector<Trajectory> out(cfg.n_traj);
  for (std::size_t i = 0; i < cfg.n_traj; ++i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
    std::uniform_real_distribution<double> speed(-1.0, 1.0);
    std::normal_distribution<double> policy(0.0, cfg.policy_std);

    PlantState s{wrap_angle(angle(rng)), speed(rng)};
    Trajectory& traj = out[i];
    traj.images.reserve(cfg.length);
    traj.controls.reserve(cfg.length);
    traj.plant_states.reserve(cfg.length);
    for (std::size_t k = 0; k < cfg.length; ++k) {
      const double u = std::clamp(cfg.policy_std > 0.0 ? policy(rng) : 0.0,
                                  -cfg.plant.max_torque, cfg.plant.max_torque);
      traj.images.push_back(render(s, cfg.image_size, cfg.image_size));
      traj.controls.push_back(Eigen::VectorXd::Constant(1, u));
      traj.plant_states.push_back(s);
      s = step_repeated(s, u, cfg.action_repeat, cfg.plant);
    }
  }
  return out;
}

}  // namespace latdyn
