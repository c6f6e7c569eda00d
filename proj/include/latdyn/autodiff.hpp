#pragma once

// Define-by-run reverse-mode automatic differentiation over dense float64
// matrices. A Graph records every operation; Graph::backward walks the tape
// in reverse and accumulates gradients into the ParamStore parameters that
// were bound with Graph::param.

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "latdyn/param_store.hpp"

namespace latdyn::ad {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::vector<Eigen::Index> shape() const { return {rows(), cols()}; }
  double item() const;

  Graph* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  /// Called with the node's own value and its incoming gradient.
  using Backprop = std::function<void(Graph&, const Matrix& value, const Matrix& grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  Var constant(double value);
  /// Leaf bound to a stored parameter. Repeated calls return the same node.
  Var param(Parameter& p);

  /// Records a node whose gradient is propagated by `fn`. `fn` is dropped if
  /// none of `parents` requires a gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, Backprop fn);

  /// Accumulates d(loss)/d(param) into every reachable parameter's grad.
  /// Throws if the loss is not 1x1 or any recorded value is non-finite.
  void backward(const Var& loss);

  void accumulate(const Var& v, const Matrix& g);
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backprop backprop;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

/// Resolves parameter names to graph nodes: trainable leaves when built
/// from a mutable store, detached constants otherwise.
class ParamBinder {
 public:
  ParamBinder(Graph& g, ParamStore& store) : graph_(g), mutable_(&store), store_(store) {}
  ParamBinder(Graph& g, const ParamStore& store) : graph_(g), store_(store) {}

  Var operator()(const std::string& name);
  Graph& graph() const { return graph_; }
  const ParamStore& store() const { return store_; }

 private:
  Graph& graph_;
  ParamStore* mutable_ = nullptr;
  const ParamStore& store_;
  std::unordered_map<std::string, Var> cache_;
};

// Elementwise / structural operations. Shape mismatches throw
// std::invalid_argument.
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(const Var& a, const Var& b);  // matrix product
Var operator*(double s, const Var& a);
Var add_scalar(const Var& a, double s);
Var cwise_mul(const Var& a, const Var& b);
Var add_colwise(const Var& x, const Var& bias);  // bias (r x 1) added to every column
Var transpose(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var softplus(const Var& a);
Var square(const Var& a);
Var sum(const Var& a);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var vcat(const Var& a, const Var& b);
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);  // column-major
Var diag(const Var& v);  // column vector -> diagonal matrix
Var symmetrize(const Var& a);
Var inverse(const Var& a);
Var logdet(const Var& a);  // log|det a|
Var cholesky(const Var& a);  // lower factor of a symmetric positive-definite matrix
Var softmax(const Var& a);  // per column

/// ln N(x; mean, cov) for a full covariance.
Var gaussian_logpdf(const Var& x, const Var& mean, const Var& cov);
/// Sum over all entries of ln N(x; mean, exp(log_std)^2).
Var diag_gaussian_logpdf(const Var& x, const Var& mean, const Var& log_std);

/// Gated recurrent unit weights. Inputs may hold one sample per column.
struct GruWeights {
  Var w_update, u_update, b_update;
  Var w_reset, u_reset, b_reset;
  Var w_cand, u_cand, b_cand;
};

/// r = sig(W_r x + U_r h + b_r), z = sig(W_z x + U_z h + b_z),
/// c = tanh(W_c x + U_c (r * h) + b_c), h' = (1 - z) * h + z * c.
Var gru_cell(const GruWeights& w, const Var& x, const Var& h);

}  // namespace latdyn::ad
