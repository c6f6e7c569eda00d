#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "latdyn/autodiff.hpp"
#include "latdyn/lgssm.hpp"
#include "oracles.hpp"

namespace fixture {

inline std::vector<latdyn::StepModel> steps_of(const oracle::System& s) {
  std::vector<latdyn::StepModel> out;
  for (std::size_t k = 0; k < s.A.size(); ++k) out.push_back({s.A[k], s.B[k], s.C[k], s.alpha[k]});
  return out;
}

inline latdyn::NoiseModel noise_of(const oracle::System& s) { return {s.Q, s.R_diag}; }
inline latdyn::Gaussian prior_of(const oracle::System& s) { return {s.m1, s.P1}; }

using LossFn = std::function<latdyn::ad::Var(latdyn::ad::ParamBinder&)>;

struct GradCheck {
  int checked = 0;
  double worst = 0.0;
  std::string worst_name;
};

// Compares backward() against central differences of the forward value on
// `per_param` random entries of every parameter whose name starts with
// `prefix` (all entries when the parameter is smaller).
inline GradCheck check_gradients(latdyn::ad::ParamStore& store, const LossFn& loss,
                                 std::mt19937_64& rng, int per_param = 4,
                                 const std::string& prefix = "", double eps = 1e-5,
                                 double floor = 1e-4) {
  store.zero_grad();
  {
    latdyn::ad::Graph g;
    latdyn::ad::ParamBinder bind(g, store);
    const latdyn::ad::Var l = loss(bind);
    g.backward(l);
  }
  auto value = [&] {
    latdyn::ad::Graph g;
    const latdyn::ad::ParamStore& cs = store;
    latdyn::ad::ParamBinder bind(g, cs);
    return loss(bind).item();
  };
  GradCheck out;
  for (auto& p : store.params()) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    const auto n = p.value.size();
    std::vector<Eigen::Index> idx;
    if (n <= per_param) {
      for (Eigen::Index i = 0; i < n; ++i) idx.push_back(i);
    } else {
      std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
      for (int i = 0; i < per_param; ++i) idx.push_back(pick(rng));
    }
    for (const auto i : idx) {
      const double fd = oracle::central_diff(value, p.value.data()[i], eps);
      const double err = oracle::rel_err(p.grad.data()[i], fd, floor);
      ++out.checked;
      if (err > out.worst) {
        out.worst = err;
        out.worst_name = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

}  // namespace fixture
