#pragma once

// Non-meta-learning baselines: Burer-Monteiro factorisation over all
// training tasks, and ridge regression on fixed features.

#include "anil/minimize.hpp"
#include "anil/task_model.hpp"

#include <ostream>

namespace anil {

struct BmState {
  Matrix b;       // d x k'
  Matrix w_cols;  // k' x N
  double reg_weight = 0.125;
};

struct BmEvaluation {
  double loss = 0.0;
  double data_loss = 0.0;
  double reg_loss = 0.0;
  Matrix grad_b;
  Matrix grad_w;
};

/// (1/2N) sum_i (1/m) ||y_i - X_i B W_i||^2 + reg_weight ||B^T B - W W^T||_F^2
/// over all m = m_in + m_out rows of each task, with analytic gradients.
inline BmEvaluation bm_objective_grad(const BmState& s, const TaskBatch& batch) {
  const Index n = batch.n_tasks, d = batch.d();
  if (s.b.rows() != d || s.w_cols.cols() != n || s.w_cols.rows() != s.b.cols())
    throw DimensionError("BM state does not match the batch");
  const double m = static_cast<double>(batch.m_in + batch.m_out);
  const double scale = 1.0 / (static_cast<double>(n) * m);

  const Matrix v = s.b * s.w_cols;  // d x N
  Matrix g(d, n);
  double data = 0.0;
  for (Index i = 0; i < n; ++i) {
    Vector r_in = batch.task_x_in(i) * v.col(i) - batch.task_y_in(i);
    Vector r_out = batch.task_x_out(i) * v.col(i) - batch.task_y_out(i);
    data += r_in.squaredNorm() + r_out.squaredNorm();
    g.col(i).noalias() = batch.task_x_in(i).transpose() * r_in;
    g.col(i).noalias() += batch.task_x_out(i).transpose() * r_out;
  }
  g *= scale;
  const Matrix e = s.b.transpose() * s.b - s.w_cols * s.w_cols.transpose();

  BmEvaluation out;
  out.data_loss = 0.5 * scale * data;
  out.reg_loss = s.reg_weight * e.squaredNorm();
  out.loss = out.data_loss + out.reg_loss;
  out.grad_b = g * s.w_cols.transpose() + (4.0 * s.reg_weight) * (s.b * e);
  out.grad_w = s.b.transpose() * g - (4.0 * s.reg_weight) * (e * s.w_cols);
  return out;
}

/// B_0^T B_0 = b_scale I; each column of W_0 uniform on the sphere of squared
/// radius w_r2.
struct BmInit {
  double b_scale = 0.01;
  double w_r2 = 0.0;

  static BmInit standard(double alpha, Index k_prime) { return {0.01, 0.01 * static_cast<double>(k_prime) * alpha}; }
};

inline BmState bm_init(Index d, Index k_prime, Index n_tasks, const BmInit& init, const RngSpec& rng,
                       double reg_weight = 0.125) {
  if (k_prime > d) throw DimensionError("k' must be <= d");
  BmState s;
  s.reg_weight = reg_weight;
  Engine eng = rng.stream("bm_b");
  s.b = orthonormal_columns(gaussian_matrix(d, k_prime, eng)) * std::sqrt(init.b_scale);
  s.w_cols.resize(k_prime, n_tasks);
  for (Index i = 0; i < n_tasks; ++i) {
    Engine weng = rng.stream("bm_w", static_cast<std::uint64_t>(i));
    s.w_cols.col(i) = uniform_sphere(k_prime, init.w_r2, weng);
  }
  return s;
}

struct BmFitResult {
  BmState state;
  MinimizeResult info;
};

inline Vector bm_pack(const BmState& s) {
  Vector x(s.b.size() + s.w_cols.size());
  x.head(s.b.size()) = s.b.reshaped();
  x.tail(s.w_cols.size()) = s.w_cols.reshaped();
  return x;
}

inline void bm_unpack(const Vector& x, BmState& s) {
  s.b = x.head(s.b.size()).reshaped(s.b.rows(), s.b.cols());
  s.w_cols = x.tail(s.w_cols.size()).reshaped(s.w_cols.rows(), s.w_cols.cols());
}

/// Minimises the BM objective jointly over B and W from `start`.
/// `log` (optional) receives the CSV rows iter,loss,grad_norm,step_len.
/// Called with the iterate after each accepted iteration (and at 0).
using BmStateObserver = std::function<void(Index iter, const BmState&)>;

inline BmFitResult bm_fit(const TaskBatch& batch, BmState start, const MinimizerConfig& cfg,
                          std::ostream* log = nullptr, const BmStateObserver& observe = {}) {
  BmState work = start;
  Objective f = [&](const Vector& x, Vector& grad) {
    bm_unpack(x, work);
    BmEvaluation ev = bm_objective_grad(work, batch);
    grad.resize(x.size());
    grad.head(ev.grad_b.size()) = ev.grad_b.reshaped();
    grad.tail(ev.grad_w.size()) = ev.grad_w.reshaped();
    return ev.loss;
  };
  if (log) *log << "iter,loss,grad_norm,step_len\n";
  BmState snap = start;
  IterationCallback cb = [&](const IterationInfo& it) {
    if (!std::isfinite(it.loss)) throw DivergenceError("BM objective became non-finite");
    if (log) *log << it.iter << ',' << it.loss << ',' << it.grad_norm << ',' << it.step_len << '\n';
    if (observe && it.x) {
      bm_unpack(*it.x, snap);
      observe(it.iter, snap);
    }
  };
  BmFitResult res;
  res.info = minimize(f, bm_pack(start), cfg, cb);
  if (!std::isfinite(res.info.f)) throw DivergenceError("BM objective became non-finite");
  res.state = start;
  bm_unpack(res.info.x, res.state);
  return res;
}

inline BmFitResult bm_fit(const TaskBatch& batch, Index k_prime, const BmInit& init, const MinimizerConfig& cfg,
                          const RngSpec& rng, double reg_weight = 0.125, std::ostream* log = nullptr) {
  return bm_fit(batch, bm_init(batch.d(), k_prime, batch.n_tasks, init, rng, reg_weight), cfg, log);
}

/// Ridge estimator for the objective (1/(2 m)) ||y - F w||^2 + lambda ||w||^2,
/// m = F.rows(), i.e. (F^T F + 2 lambda m I) w = F^T y. lambda = 0 requires F
/// to have full column rank.
template <class FType>
Vector ridge_regression(const FType& f, const Vector& y, double lambda) {
  if (f.rows() != y.size()) throw DimensionError("features and targets differ in length");
  if (lambda < 0.0) throw PreconditionError("lambda must be >= 0");
  if (lambda == 0.0) {
    Eigen::ColPivHouseholderQR<Matrix> qr{Matrix(f)};
    if (qr.rank() < f.cols()) throw RankError("ridge with lambda = 0 needs full column rank");
    return qr.solve(y);
  }
  const double m = static_cast<double>(f.rows());
  Matrix a = f.transpose() * f;
  a.diagonal().array() += 2.0 * lambda * m;
  return a.llt().solve(f.transpose() * y);
}

/// Ridge solutions for many lambdas on the same (F, y) from a single
/// eigendecomposition of F^T F.
class RidgePath {
 public:
  template <class FType>
  RidgePath(const FType& f, const Vector& y) : m_(static_cast<double>(f.rows())) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(f.transpose() * f));
    v_ = es.eigenvectors();
    e_ = es.eigenvalues();
    b_ = v_.transpose() * (f.transpose() * y);
  }

  Vector solve(double lambda) const {
    if (!(lambda > 0.0)) throw PreconditionError("RidgePath needs lambda > 0");
    return v_ * (b_.array() / (e_.array() + 2.0 * lambda * m_)).matrix();
  }

 private:
  double m_;
  Matrix v_;
  Vector e_;
  Vector b_;
};

}  // namespace anil
