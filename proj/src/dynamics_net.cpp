#include "latdyn/dynamics_net.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace latdyn {

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, double std,
                              std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = std * n01(rng);
  }
  return m;
}

Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound,
                               std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
  }
  return m;
}

Eigen::VectorXd sigmoid(const Eigen::VectorXd& x) {
  return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

const char* const kGates[] = {"update", "reset", "cand"};

}  // namespace

void DynamicsNet::register_params(ad::ParamStore& store, std::mt19937_64& rng) const {
  const int n = cfg_.state_dim, m = cfg_.control_dim, l = cfg_.measurement_dim;
  const int v = cfg_.hidden_dim, bases = cfg_.num_bases;
  if (n < 1 || m < 1 || l < 1 || v < 1 || bases < 1) {
    throw std::invalid_argument("dynamics: all dimensions must be >= 1");
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(v));
  for (const char* gate : kGates) {
    const std::string g = gate;
    store.add("psi.gru.w_" + g, uniform_matrix(v, n + m, bound, rng));
    store.add("psi.gru.u_" + g, uniform_matrix(v, v, bound, rng));
    store.add("psi.gru.b_" + g, Eigen::MatrixXd::Zero(v, 1));
  }
  store.add("psi.mix.w", random_matrix(bases, v, 0.1 * bound, rng));
  store.add("psi.mix.b", Eigen::MatrixXd::Zero(bases, 1));

  Eigen::MatrixXd bank_a(n * n, bases);
  for (int i = 0; i < bases; ++i) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) +
                        random_matrix(n, n, cfg_.base_init_noise, rng);
    bank_a.col(i) = Eigen::Map<const Eigen::VectorXd>(a.data(), n * n);
  }
  store.add("psi.bank.A", std::move(bank_a));
  store.add("psi.bank.B", random_matrix(n * m, bases, 0.1, rng));
  store.add("psi.bank.C", random_matrix(l * n, bases, 1.0 / std::sqrt(n), rng));
}

void DynamicsNet::check_dims(const Eigen::VectorXd& z, const Eigen::VectorXd& u,
                             const Eigen::VectorXd& h) const {
  if (z.size() != cfg_.state_dim || u.size() != cfg_.control_dim || h.size() != cfg_.hidden_dim) {
    throw std::invalid_argument("dynamics: dimension mismatch (z " + std::to_string(z.size()) +
                                ", u " + std::to_string(u.size()) + ", h " +
                                std::to_string(h.size()) + ")");
  }
}

Eigen::VectorXd DynamicsNet::gru(const ad::ParamStore& store, const Eigen::VectorXd& z,
                                 const Eigen::VectorXd& u, const Eigen::VectorXd& h) const {
  check_dims(z, u, h);
  Eigen::VectorXd x(z.size() + u.size());
  x << z, u;
  auto gate = [&](const char* name, const Eigen::VectorXd& hh) {
    const std::string g = name;
    return Eigen::VectorXd(store.get("psi.gru.w_" + g).value * x +
                           store.get("psi.gru.u_" + g).value * hh +
                           store.get("psi.gru.b_" + g).value.col(0));
  };
  const Eigen::VectorXd reset = sigmoid(gate("reset", h));
  const Eigen::VectorXd update = sigmoid(gate("update", h));
  const Eigen::VectorXd cand = gate("cand", reset.cwiseProduct(h)).array().tanh().matrix();
  return h - update.cwiseProduct(h) + update.cwiseProduct(cand);
}

Eigen::VectorXd DynamicsNet::mixture_weights(const ad::ParamStore& store,
                                             const Eigen::VectorXd& h) const {
  Eigen::VectorXd logits = store.get("psi.mix.w").value * h + store.get("psi.mix.b").value.col(0);
  logits.array() -= logits.maxCoeff();
  Eigen::VectorXd w = logits.array().exp().matrix();
  return w / w.sum();
}

StepModel DynamicsNet::mix(const ad::ParamStore& store, const Eigen::VectorXd& weights) const {
  const int n = cfg_.state_dim, m = cfg_.control_dim, l = cfg_.measurement_dim;
  const Eigen::VectorXd a = store.get("psi.bank.A").value * weights;
  const Eigen::VectorXd b = store.get("psi.bank.B").value * weights;
  const Eigen::VectorXd c = store.get("psi.bank.C").value * weights;
  StepModel s;
  s.A = Eigen::Map<const Eigen::MatrixXd>(a.data(), n, n);
  s.B = Eigen::Map<const Eigen::MatrixXd>(b.data(), n, m);
  s.C = Eigen::Map<const Eigen::MatrixXd>(c.data(), l, n);
  return s;
}

RegressResult DynamicsNet::regress(const ad::ParamStore& store, const Eigen::VectorXd& z,
                                   const Eigen::VectorXd& u, const Eigen::VectorXd& h) const {
  RegressResult out;
  out.hidden = gru(store, z, u, h);
  out.weights = mixture_weights(store, out.hidden);
  out.step = mix(store, out.weights);
  return out;
}

ParamRollout DynamicsNet::rollout_params(const ad::ParamStore& store, const Eigen::VectorXd& z1,
                                         std::span<const Eigen::VectorXd> u_seq,
                                         const Eigen::VectorXd& h1) const {
  ParamRollout out;
  out.means.push_back(z1);
  out.hidden.push_back(h1);
  for (std::size_t k = 0; k < u_seq.size(); ++k) {
    RegressResult r = regress(store, out.means.back(), u_seq[k], out.hidden.back());
    Eigen::VectorXd next = r.step.A * out.means.back() + r.step.B * u_seq[k];
    if (!next.allFinite()) {
      throw std::runtime_error("rollout_params: non-finite latent state at step " +
                               std::to_string(k + 1));
    }
    out.means.push_back(std::move(next));
    out.hidden.push_back(std::move(r.hidden));
    out.steps.push_back(std::move(r.step));
  }
  return out;
}

ad::Var DynamicsNet::gru(ad::ParamBinder& bind, const ad::Var& z, const ad::Var& u,
                         const ad::Var& h) const {
  ad::GruWeights w{bind("psi.gru.w_update"), bind("psi.gru.u_update"), bind("psi.gru.b_update"),
                   bind("psi.gru.w_reset"),  bind("psi.gru.u_reset"),  bind("psi.gru.b_reset"),
                   bind("psi.gru.w_cand"),   bind("psi.gru.u_cand"),   bind("psi.gru.b_cand")};
  return ad::gru_cell(w, ad::vcat(z, u), h);
}

ad::Var DynamicsNet::mixture_weights(ad::ParamBinder& bind, const ad::Var& h) const {
  return ad::softmax(ad::add_colwise(bind("psi.mix.w") * h, bind("psi.mix.b")));
}

DynamicsNet::GraphMix DynamicsNet::mix(ad::ParamBinder& bind, const ad::Var& weights) const {
  const int n = cfg_.state_dim, m = cfg_.control_dim, l = cfg_.measurement_dim;
  return {ad::reshape(bind("psi.bank.A") * weights, n, n),
          ad::reshape(bind("psi.bank.B") * weights, n, m),
          ad::reshape(bind("psi.bank.C") * weights, l, n)};
}

Linearizer::Linearizer(const DynamicsNet& net, const ad::ParamStore& store)
    : Linearizer(net, store, net.initial_hidden()) {}

Linearizer::Linearizer(const DynamicsNet& net, const ad::ParamStore& store,
                       Eigen::VectorXd hidden)
    : net_(net), store_(store), hidden_(std::move(hidden)) {
  current_ = net_.mix(store_, net_.mixture_weights(store_, hidden_));
}

Eigen::MatrixXd Linearizer::measurement_matrix() { return current_.C; }

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> Linearizer::transition(
    const Eigen::VectorXd& filtered_mean, const Eigen::VectorXd& u) {
  RegressResult r = net_.regress(store_, filtered_mean, u, hidden_);
  hidden_ = std::move(r.hidden);
  current_ = std::move(r.step);
  return {current_.A, current_.B};
}

}  // namespace latdyn
