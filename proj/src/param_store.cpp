#include "latdyn/param_store.hpp"

#include <cmath>
#include <stdexcept>

#include "latdyn/dataset_io.hpp"

namespace latdyn::ad {

Parameter& ParamStore::add(const std::string& name, Matrix init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Parameter p;
  p.name = name;
  p.grad = Matrix::Zero(init.rows(), init.cols());
  p.first_moment = Matrix::Zero(init.rows(), init.cols());
  p.second_moment = Matrix::Zero(init.rows(), init.cols());
  p.value = std::move(init);
  index_.emplace(name, params_.size());
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second];
}

const Parameter& ParamStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second];
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) sq += p.grad.squaredNorm();
  return std::sqrt(sq);
}

double ParamStore::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& p : params_) p.grad *= scale;
  }
  return norm;
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
  const std::size_t t = store.step_count() + 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& p : store.params()) {
    p.first_moment = cfg.beta1 * p.first_moment + (1.0 - cfg.beta1) * p.grad;
    p.second_moment =
        cfg.beta2 * p.second_moment + (1.0 - cfg.beta2) * p.grad.cwiseAbs2();
    const Matrix m_hat = p.first_moment / c1;
    const Matrix v_hat = p.second_moment / c2;
    p.value.array() -= cfg.lr * m_hat.array() / (v_hat.array().sqrt() + cfg.eps);
  }
  store.set_step_count(t);
}

void save_tensors(const ParamStore& store, const std::filesystem::path& dir,
                  std::vector<std::pair<std::string, std::vector<Eigen::Index>>>& shapes_out) {
  std::filesystem::create_directories(dir);
  shapes_out.clear();
  for (const auto& p : store.params()) {
    write_f64(dir / (p.name + ".f64"), p.value.data(), static_cast<std::size_t>(p.value.size()));
    shapes_out.emplace_back(p.name, std::vector<Eigen::Index>{p.value.rows(), p.value.cols()});
  }
}

void load_tensors(ParamStore& store, const std::filesystem::path& dir,
                  const std::vector<std::pair<std::string, std::vector<Eigen::Index>>>& shapes) {
  if (shapes.size() != store.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(shapes.size()) +
                             " tensors, model expects " + std::to_string(store.size()));
  }
  for (const auto& [name, shape] : shapes) {
    if (!store.contains(name)) throw std::runtime_error("checkpoint tensor not in model: " + name);
    auto& p = store.get(name);
    if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols()) {
      throw std::runtime_error("shape mismatch for parameter " + name);
    }
    const auto data = read_f64(dir / (name + ".f64"), static_cast<std::size_t>(p.value.size()));
    p.value = Eigen::Map<const Matrix>(data.data(), shape[0], shape[1]);
  }
}

}  // namespace latdyn::ad
