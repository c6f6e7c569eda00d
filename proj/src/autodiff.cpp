#include "latdyn/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/LU>

namespace latdyn::ad {

namespace {

Graph& graph_of(const Var& a) {
  if (!a.valid()) throw std::invalid_argument("autodiff: use of an empty Var");
  return *a.graph();
}

Graph& graph_of(const Var& a, const Var& b) {
  Graph& g = graph_of(a);
  if (b.graph() != &g) throw std::invalid_argument("autodiff: operands from different graphs");
  return g;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("autodiff ") + op + ": shape mismatch " +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

void require_square(const Var& a, const char* op) {
  if (a.rows() != a.cols()) {
    throw std::invalid_argument(std::string("autodiff ") + op + ": matrix is not square");
  }
}

constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace

const Matrix& Var::value() const { return graph_of(*this).value(id_); }
const Matrix& Var::grad() const { return graph_of(*this).grad(id_); }

double Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::invalid_argument("autodiff: item() on a non-scalar");
  return v(0, 0);
}

Var Graph::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Graph::param(Parameter& p) {
  if (const auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var(this, it->second);
  }
  nodes_.push_back(Node{p.value, {}, {}, &p, true});
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Matrix value, std::initializer_list<Var> parents, Backprop fn) {
  bool needs = false;
  for (const auto& p : parents) {
    if (p.graph() != this) throw std::invalid_argument("autodiff: operand from another graph");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : Backprop{}, nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

void Graph::accumulate(const Var& v, const Matrix& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Graph::backward(const Var& loss) {
  if (loss.graph() != this) throw std::invalid_argument("backward: loss from another graph");
  if (loss.value().size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got " +
                                std::to_string(loss.rows()) + "x" + std::to_string(loss.cols()));
  }
  for (std::size_t i = 0; i <= loss.id(); ++i) {
    if (!nodes_[i].value.allFinite()) {
      throw std::runtime_error("backward: non-finite value recorded at node " +
                               std::to_string(i));
    }
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backprop) {
      // Copy: backprop may accumulate into this deque.
      const Matrix g = n.grad;
      n.backprop(*this, n.value, g);
    }
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

Var ParamBinder::operator()(const std::string& name) {
  if (const auto it = cache_.find(name); it != cache_.end()) return it->second;
  Var v = mutable_ != nullptr ? graph_.param(mutable_->get(name))
                              : graph_.constant(store_.get(name).value);
  cache_.emplace(name, v);
  return v;
}

Var operator+(const Var& a, const Var& b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a, b, "add");
  return g.record(a.value() + b.value(), {a, b}, [a, b](Graph& gr, const Matrix&, const Matrix& d) {
    gr.accumulate(a, d);
    gr.accumulate(b, d);
  });
}

Var operator-(const Var& a, const Var& b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a, b, "sub");
  return g.record(a.value() - b.value(), {a, b}, [a, b](Graph& gr, const Matrix&, const Matrix& d) {
    gr.accumulate(a, d);
    gr.accumulate(b, -d);
  });
}

Var operator-(const Var& a) {
  return graph_of(a).record(-a.value(), {a},
                            [a](Graph& gr, const Matrix&, const Matrix& d) { gr.accumulate(a, -d); });
}

Var operator*(const Var& a, const Var& b) {
  Graph& g = graph_of(a, b);
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("autodiff matmul: inner dimensions " + std::to_string(a.cols()) +
                                " and " + std::to_string(b.rows()) + " differ");
  }
  return g.record(a.value() * b.value(), {a, b}, [a, b](Graph& gr, const Matrix&, const Matrix& d) {
    if (gr.requires_grad(a)) gr.accumulate(a, d * b.value().transpose());
    if (gr.requires_grad(b)) gr.accumulate(b, a.value().transpose() * d);
  });
}

Var operator*(double s, const Var& a) {
  return graph_of(a).record(s * a.value(), {a},
                            [a, s](Graph& gr, const Matrix&, const Matrix& d) { gr.accumulate(a, s * d); });
}

Var add_scalar(const Var& a, double s) {
  return graph_of(a).record((a.value().array() + s).matrix(), {a},
                            [a](Graph& gr, const Matrix&, const Matrix& d) { gr.accumulate(a, d); });
}

Var cwise_mul(const Var& a, const Var& b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a, b, "cwise_mul");
  return g.record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Graph& gr, const Matrix&, const Matrix& d) {
    if (gr.requires_grad(a)) gr.accumulate(a, d.cwiseProduct(b.value()));
    if (gr.requires_grad(b)) gr.accumulate(b, d.cwiseProduct(a.value()));
  });
}

Var add_colwise(const Var& x, const Var& bias) {
  Graph& g = graph_of(x, bias);
  if (bias.cols() != 1 || bias.rows() != x.rows()) {
    throw std::invalid_argument("autodiff add_colwise: bias must be a column of matching rows");
  }
  Matrix out = x.value();
  out.colwise() += bias.value().col(0);
  return g.record(std::move(out), {x, bias}, [x, bias](Graph& gr, const Matrix&, const Matrix& d) {
    gr.accumulate(x, d);
    if (gr.requires_grad(bias)) gr.accumulate(bias, d.rowwise().sum());
  });
}

Var transpose(const Var& a) {
  return graph_of(a).record(a.value().transpose(), {a}, [a](Graph& gr, const Matrix&, const Matrix& d) {
    gr.accumulate(a, d.transpose());
  });
}

Var relu(const Var& a) {
  return graph_of(a).record(a.value().cwiseMax(0.0), {a}, [a](Graph& gr, const Matrix&, const Matrix& d) {
    gr.accumulate(a, (a.value().array() > 0.0).cast<double>().matrix().cwiseProduct(d));
  });
}

Var sigmoid(const Var& a) {
  Matrix y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return graph_of(a).record(std::move(y), {a}, [a](Graph& gr, const Matrix& y, const Matrix& d) {
    gr.accumulate(a, (d.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var tanh(const Var& a) {
  return graph_of(a).record(a.value().array().tanh().matrix(), {a},
                            [a](Graph& gr, const Matrix& y, const Matrix& d) {
                              gr.accumulate(a, (d.array() * (1.0 - y.array().square())).matrix());
                            });
}

Var exp(const Var& a) {
  return graph_of(a).record(a.value().array().exp().matrix(), {a},
                            [a](Graph& gr, const Matrix& y, const Matrix& d) {
                              gr.accumulate(a, d.cwiseProduct(y));
                            });
}

Var log(const Var& a) {
  return graph_of(a).record(a.value().array().log().matrix(), {a},
                            [a](Graph& gr, const Matrix&, const Matrix& d) {
                              gr.accumulate(a, (d.array() / a.value().array()).matrix());
                            });
}

Var softplus(const Var& a) {
  const auto& x = a.value().array();
  Matrix y = (x.max(0.0) + (1.0 + (-x.abs()).exp()).log()).matrix();
  return graph_of(a).record(std::move(y), {a}, [a](Graph& gr, const Matrix&, const Matrix& d) {
    const auto s = 1.0 / (1.0 + (-a.value().array()).exp());
    gr.accumulate(a, (d.array() * s).matrix());
  });
}

Var square(const Var& a) {
  return graph_of(a).record(a.value().cwiseAbs2(), {a}, [a](Graph& gr, const Matrix&, const Matrix& d) {
    gr.accumulate(a, 2.0 * d.cwiseProduct(a.value()));
  });
}

Var sum(const Var& a) {
  return graph_of(a).record(Matrix::Constant(1, 1, a.value().sum()), {a},
                            [a](Graph& gr, const Matrix&, const Matrix& d) {
                              gr.accumulate(a, Matrix::Constant(a.rows(), a.cols(), d(0, 0)));
                            });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw std::invalid_argument("autodiff slice_rows: range out of bounds");
  }
  return graph_of(a).record(a.value().middleRows(start, count), {a},
                            [a, start, count](Graph& gr, const Matrix&, const Matrix& d) {
                              Matrix full = Matrix::Zero(a.rows(), a.cols());
                              full.middleRows(start, count) = d;
                              gr.accumulate(a, full);
                            });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::invalid_argument("autodiff slice_cols: range out of bounds");
  }
  return graph_of(a).record(a.value().middleCols(start, count), {a},
                            [a, start, count](Graph& gr, const Matrix&, const Matrix& d) {
                              Matrix full = Matrix::Zero(a.rows(), a.cols());
                              full.middleCols(start, count) = d;
                              gr.accumulate(a, full);
                            });
}

Var vcat(const Var& a, const Var& b) {
  Graph& g = graph_of(a, b);
  if (a.cols() != b.cols()) throw std::invalid_argument("autodiff vcat: column count differs");
  Matrix out(a.rows() + b.rows(), a.cols());
  out << a.value(), b.value();
  const Eigen::Index ra = a.rows();
  return g.record(std::move(out), {a, b}, [a, b, ra](Graph& gr, const Matrix&, const Matrix& d) {
    gr.accumulate(a, d.topRows(ra));
    gr.accumulate(b, d.bottomRows(d.rows() - ra));
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) {
    throw std::invalid_argument("autodiff reshape: element count changes");
  }
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return graph_of(a).record(std::move(out), {a}, [a](Graph& gr, const Matrix&, const Matrix& d) {
    gr.accumulate(a, Eigen::Map<const Matrix>(d.data(), a.rows(), a.cols()));
  });
}

Var diag(const Var& v) {
  if (v.cols() != 1) throw std::invalid_argument("autodiff diag: expects a column vector");
  Matrix out = v.value().col(0).asDiagonal();
  return graph_of(v).record(std::move(out), {v}, [v](Graph& gr, const Matrix&, const Matrix& d) {
    gr.accumulate(v, d.diagonal());
  });
}

Var symmetrize(const Var& a) {
  require_square(a, "symmetrize");
  return graph_of(a).record(0.5 * (a.value() + a.value().transpose()), {a},
                            [a](Graph& gr, const Matrix&, const Matrix& d) {
                              gr.accumulate(a, 0.5 * (d + d.transpose()));
                            });
}

Var inverse(const Var& a) {
  require_square(a, "inverse");
  Eigen::FullPivLU<Matrix> lu(a.value());
  if (!lu.isInvertible()) throw std::runtime_error("autodiff inverse: singular matrix");
  return graph_of(a).record(lu.inverse(), {a}, [a](Graph& gr, const Matrix& y, const Matrix& d) {
    gr.accumulate(a, -(y.transpose() * d * y.transpose()));
  });
}

Var logdet(const Var& a) {
  require_square(a, "logdet");
  Eigen::PartialPivLU<Matrix> lu(a.value());
  const double value = lu.matrixLU().diagonal().array().abs().log().sum();
  if (!std::isfinite(value)) throw std::runtime_error("autodiff logdet: singular matrix");
  return graph_of(a).record(Matrix::Constant(1, 1, value), {a}, [a](Graph& gr, const Matrix&, const Matrix& d) {
    gr.accumulate(a, d(0, 0) * a.value().inverse().transpose());
  });
}

Var cholesky(const Var& a) {
  require_square(a, "cholesky");
  Eigen::LLT<Matrix> llt(a.value());
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("autodiff cholesky: matrix is not positive definite");
  }
  Matrix l = llt.matrixL();
  return graph_of(a).record(std::move(l), {a}, [a](Graph& gr, const Matrix& lv, const Matrix& d) {
    Matrix phi = (lv.transpose() * d.triangularView<Eigen::Lower>().toDenseMatrix())
                     .triangularView<Eigen::Lower>();
    phi.diagonal() *= 0.5;
    const auto lt = lv.triangularView<Eigen::Lower>();
    // s = L^{-T} phi L^{-1}
    Matrix s = lt.transpose().solve(phi);
    s = lt.transpose().solve(s.transpose()).transpose();
    gr.accumulate(a, 0.5 * (s + s.transpose()));
  });
}

Var softmax(const Var& a) {
  Matrix y = a.value();
  for (Eigen::Index c = 0; c < y.cols(); ++c) {
    const double mx = y.col(c).maxCoeff();
    y.col(c) = (y.col(c).array() - mx).exp().matrix();
    y.col(c) /= y.col(c).sum();
  }
  return graph_of(a).record(std::move(y), {a}, [a](Graph& gr, const Matrix& yv, const Matrix& d) {
    const Eigen::RowVectorXd dots = yv.cwiseProduct(d).colwise().sum();
    Matrix g = d;
    g.rowwise() -= dots;
    gr.accumulate(a, yv.cwiseProduct(g));
  });
}

Var gaussian_logpdf(const Var& x, const Var& mean, const Var& cov) {
  require_same_shape(x, mean, "gaussian_logpdf");
  if (x.cols() != 1 || cov.rows() != x.rows() || cov.cols() != x.rows()) {
    throw std::invalid_argument("gaussian_logpdf: dimension mismatch");
  }
  const Var r = x - mean;
  const Var quad = transpose(r) * inverse(cov) * r;
  const double k = static_cast<double>(x.rows());
  return add_scalar(-0.5 * (quad + logdet(cov)), -0.5 * k * kLog2Pi);
}

Var diag_gaussian_logpdf(const Var& x, const Var& mean, const Var& log_std) {
  require_same_shape(x, mean, "diag_gaussian_logpdf");
  require_same_shape(x, log_std, "diag_gaussian_logpdf");
  const Var z = cwise_mul(x - mean, exp(-log_std));
  const double count = static_cast<double>(x.value().size());
  return add_scalar(-(0.5 * sum(square(z)) + sum(log_std)), -0.5 * count * kLog2Pi);
}

Var gru_cell(const GruWeights& w, const Var& x, const Var& h) {
  if (x.cols() != h.cols()) throw std::invalid_argument("gru_cell: batch size mismatch");
  if (w.w_update.cols() != x.rows() || w.u_update.cols() != h.rows() ||
      w.u_update.rows() != h.rows()) {
    throw std::invalid_argument("gru_cell: weight shapes do not match input/hidden sizes");
  }
  const Var reset = sigmoid(add_colwise(w.w_reset * x + w.u_reset * h, w.b_reset));
  const Var update = sigmoid(add_colwise(w.w_update * x + w.u_update * h, w.b_update));
  const Var cand = tanh(add_colwise(w.w_cand * x + w.u_cand * cwise_mul(reset, h), w.b_cand));
  return h - cwise_mul(update, h) + cwise_mul(update, cand);
}

}  // namespace latdyn::ad
