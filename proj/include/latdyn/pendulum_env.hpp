#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace latdyn {

/// Ground-truth pendulum state. theta = 0 points straight up in the image.
struct PlantState {
  double theta = 0.0;
  double theta_dot = 0.0;
};

struct PendulumParams {
  double gravity = 10.0;
  double mass = 1.0;
  double length = 1.0;
  double dt = 0.05;
  double max_torque = 2.0;
  double max_speed = 8.0;
  /// Semi-implicit Euler sub-steps per dt.
  int substeps = 10;
};

/// Wraps an angle into (-pi, pi].
double wrap_angle(double angle);

/// One semi-implicit Euler step. The torque is clipped to the actuator limit.
PlantState step(const PlantState& s, double torque, const PendulumParams& p = {});

/// Advances `repeat` sub-steps holding the torque constant.
PlantState step_repeated(const PlantState& s, double torque, int repeat,
                         const PendulumParams& p = {});

double mechanical_energy(const PlantState& s, const PendulumParams& p = {});

/// Grayscale image, row-major pixels in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  Eigen::VectorXd pixels;

  Image() = default;
  Image(int h, int w, double fill = 0.0);

  double& at(int row, int col) { return pixels[row * width + col]; }
  double at(int row, int col) const { return pixels[row * width + col]; }
  std::size_t size() const { return static_cast<std::size_t>(pixels.size()); }
};

/// Anti-aliased rod of length floor(0.4 * width) from the image centre.
/// Velocity is ignored; the output is a pure function of theta and size.
Image render(const PlantState& s, int height = 32, int width = 32);

/// Half width of the rendered rod in pixels for a given image width.
double rod_half_width(int width);

struct GaussianNoise {
  double sigma = 0.0;
};

struct Occlusion {
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;
  double intensity = 1.0;
};

struct CorruptionEvent {
  std::size_t step = 0;
  std::size_t duration = 1;
  std::variant<GaussianNoise, Occlusion> kind;

  bool active_at(std::size_t k) const { return k >= step && k < step + duration; }
};

struct CorruptionSpec {
  std::vector<CorruptionEvent> events;

  /// Throws std::invalid_argument when an event falls outside the sequence
  /// or image, or has a negative noise level.
  void validate(std::size_t sequence_length, int height, int width) const;
  std::vector<CorruptionEvent> active_at(std::size_t k) const;
  bool empty() const { return events.empty(); }
};

/// Applies the events in list order. Noise is clipped back into [0, 1].
Image corrupt(const Image& img, std::span<const CorruptionEvent> events,
              std::mt19937_64& rng);

/// Axis-aligned occluder covering `area_fraction` of the image at a uniform
/// random position.
Occlusion random_occlusion(int height, int width, double area_fraction,
                           double intensity, std::mt19937_64& rng);

struct Trajectory {
  std::vector<Image> images;
  std::vector<Eigen::VectorXd> controls;
  std::vector<PlantState> plant_states;
  CorruptionSpec corruption;

  std::size_t length() const { return images.size(); }
};

struct CollectConfig {
  std::size_t n_traj = 2048;
  std::size_t length = 32;
  int action_repeat = 3;
  double policy_std = 1.0;
  int image_size = 32;
  PendulumParams plant;
};

/// Random-exploration dataset. Each trajectory uses a seed derived from
/// (seed, index), so output does not depend on generation order.
std::vector<Trajectory> collect_trajectories(const CollectConfig& cfg,
                                             std::uint64_t seed);

/// splitmix64 mixing of a base seed with a stream index.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace latdyn
