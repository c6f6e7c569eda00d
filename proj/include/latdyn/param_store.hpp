#pragma once

#include <cstddef>
#include <deque>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace latdyn::ad {

using Matrix = Eigen::MatrixXd;

/// A trainable tensor with its gradient accumulator and Adam moments.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix first_moment;
  Matrix second_moment;
};

/// Named parameters with stable (insertion) iteration order. References
/// returned by add/get remain valid for the lifetime of the store.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Matrix init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::deque<Parameter>& params() { return params_; }
  const std::deque<Parameter>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const;

  void zero_grad();
  double grad_norm() const;
  /// Rescales all gradients so their global L2 norm is at most max_norm.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm);

  std::size_t step_count() const { return steps_; }
  void set_step_count(std::size_t s) { steps_ = s; }

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t steps_ = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update applied in place.
void adam_step(ParamStore& store, const AdamConfig& cfg);

/// Checkpoint tensors: one `<name>.f64` little-endian file per parameter plus
/// a JSON fragment describing shapes (returned / consumed by the caller's
/// manifest).
void save_tensors(const ParamStore& store, const std::filesystem::path& dir,
                  std::vector<std::pair<std::string, std::vector<Eigen::Index>>>& shapes_out);
/// Loads into an already-shaped store; every parameter must be present and
/// shape-match, otherwise std::runtime_error naming the parameter.
void load_tensors(ParamStore& store, const std::filesystem::path& dir,
                  const std::vector<std::pair<std::string, std::vector<Eigen::Index>>>& shapes);

}  // namespace latdyn::ad
