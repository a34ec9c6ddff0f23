#pragma once

// Training dynamics: finite FO-ANIL, finite FO-MAML, and the two closed-form
// idealisations (infinite tasks, infinite samples per task).

#include "anil/task_model.hpp"

#include <functional>
#include <optional>

namespace anil {

struct MetaParams {
  Matrix b;  // d x k'
  Vector w;  // k'
  double alpha = 0.0;
  double beta = 0.0;

  Index d() const { return b.rows(); }
  Index k_prime() const { return b.cols(); }

  void validate() const {
    if (b.cols() != w.size()) throw DimensionError("B and w widths differ");
    if (!(alpha > 0.0) || !(beta >= 0.0)) throw PreconditionError("need alpha > 0 and beta >= 0");
  }

  bool finite() const { return b.allFinite() && w.allFinite(); }
};

/// B_0^T B_0 = b_scale I and ||w_0||^2 = w_r2.
struct InitSpec {
  double b_scale = 1.0;
  double w_r2 = 0.0;

  static InitSpec standard(double alpha, Index k_prime) {
    return {1.0 / (4.0 * alpha), 0.01 * static_cast<double>(k_prime) * alpha};
  }
};

inline MetaParams init_params(const GroundTruth& gt, Index k_prime, const InitSpec& init, double alpha, double beta,
                              const RngSpec& rng) {
  if (k_prime > gt.d()) throw DimensionError("k' must be <= d");
  if (k_prime < gt.k()) throw DimensionError("k' must be >= k");
  if (!(init.b_scale > 0.0) || init.w_r2 < 0.0) throw PreconditionError("need b_scale > 0 and w_r2 >= 0");
  MetaParams p;
  p.alpha = alpha;
  p.beta = beta;
  // B*^T B_0 is rank deficient with probability zero; redraw if it happens.
  for (std::uint64_t attempt = 0;; ++attempt) {
    Engine eng = rng.stream("init_b", attempt);
    p.b = orthonormal_columns(gaussian_matrix(gt.d(), k_prime, eng)) * std::sqrt(init.b_scale);
    Vector sv = squared_singular_values(gt.b_star.transpose() * p.b);
    if (sv(0) > 1e-12 * sv(sv.size() - 1)) break;
    if (attempt > 16) throw RankError("could not draw B_0 with full-rank B*^T B_0");
  }
  Engine weng = rng.stream("init_w");
  p.w = uniform_sphere(k_prime, init.w_r2, weng);
  p.validate();
  return p;
}

/// One inner gradient step on the head:
///   w - (alpha / m_in) B^T X^T (X B w - y).
template <class XType, class YType>
Vector anil_inner_head(const MetaParams& p, const XType& x_in, const YType& y_in) {
  const double m = static_cast<double>(x_in.rows());
  Vector r = x_in * (p.b * p.w) - y_in;
  return p.w - (p.alpha / m) * (p.b.transpose() * (x_in.transpose() * r));
}

/// Averaged first-order outer gradients over a batch, with the adapted
/// parameters held fixed, plus the adapted heads and the mean outer loss.
struct OuterGradients {
  Matrix grad_b;
  Vector grad_w;
  Matrix heads;  // k' x N adapted heads
  double outer_loss = 0.0;
};

/// Shared FO-ANIL / FO-MAML kernel. `inner_b_step` is the inner step applied
/// to B: 0 gives FO-ANIL, alpha gives FO-MAML.
///
/// The MAML inner step on B is rank one, B_i = B - a_i w^T with
/// a_i = (inner_b_step / m_in) X_in^T r_in, so predictions and gradients are
/// formed without materialising B_i:
///   B_i w_i = B w_i - a_i (w . w_i),   B_i^T g = B^T g - w (a_i . g).
/// Scratch buffers reused across steps (each is d x N).
struct KernelWorkspace {
  Matrix g_in, pred, g_out;
};

inline void first_order_gradients(const MetaParams& p, const TaskBatch& batch, double inner_b_step,
                                  OuterGradients& out, KernelWorkspace& ws) {
  const Index n = batch.n_tasks, d = p.d();
  if (n < 1) throw DimensionError("empty task batch");
  if (batch.d() != d) throw DimensionError("batch and parameter dimensions differ");
  const double inv_m_in = 1.0 / static_cast<double>(batch.m_in);
  const double inv_m_out = 1.0 / static_cast<double>(batch.m_out);

  // Residual and gradient share one pass over each task block.
  const Vector v = p.b * p.w;
  ws.g_in.resize(d, n);
  Vector r_in(batch.m_in);
  for (Index i = 0; i < n; ++i) {
    const auto x = batch.task_x_in(i);
    r_in.noalias() = x * v;
    r_in -= batch.task_y_in(i);
    ws.g_in.col(i).noalias() = x.transpose() * r_in;
  }

  out.heads.resize(p.k_prime(), n);
  out.heads.noalias() = p.b.transpose() * ws.g_in;
  out.heads *= -p.alpha * inv_m_in;
  out.heads.colwise() += p.w;

  ws.pred.resize(d, n);
  ws.pred.noalias() = p.b * out.heads;
  // The MAML correction vanishes identically for ANIL; skip it there.
  const bool maml = inner_b_step != 0.0;
  const double a_scale = inner_b_step * inv_m_in;  // a_i = a_scale * g_in_i
  if (maml) {
    const Vector w_dot_heads = out.heads.transpose() * p.w;
    for (Index i = 0; i < n; ++i) ws.pred.col(i) -= (a_scale * w_dot_heads(i)) * ws.g_in.col(i);
  }

  ws.g_out.resize(d, n);
  double loss = 0.0;
  Vector r(batch.m_out);
  for (Index i = 0; i < n; ++i) {
    const auto x = batch.task_x_out(i);
    r.noalias() = x * ws.pred.col(i);
    r -= batch.task_y_out(i);
    loss += 0.5 * inv_m_out * r.squaredNorm();
    ws.g_out.col(i).noalias() = x.transpose() * r;
  }
  ws.g_out *= inv_m_out;
  const double inv_n = 1.0 / static_cast<double>(n);
  out.outer_loss = loss * inv_n;
  out.grad_b.resize(d, p.k_prime());
  out.grad_b.noalias() = ws.g_out * out.heads.transpose();
  out.grad_b *= inv_n;
  out.grad_w = p.b.transpose() * ws.g_out.rowwise().sum();
  if (maml) out.grad_w -= p.w * (a_scale * ws.g_in.cwiseProduct(ws.g_out).sum());
  out.grad_w *= inv_n;
}

inline OuterGradients first_order_gradients(const MetaParams& p, const TaskBatch& batch, double inner_b_step) {
  OuterGradients out;
  KernelWorkspace ws;
  first_order_gradients(p, batch, inner_b_step, out, ws);
  return out;
}

inline MetaParams apply_gradients(const MetaParams& p, const OuterGradients& g) {
  MetaParams next = p;
  next.b -= p.beta * g.grad_b;
  next.w -= p.beta * g.grad_w;
  return next;
}

inline MetaParams foanil_step(const MetaParams& p, const TaskBatch& batch) {
  return apply_gradients(p, first_order_gradients(p, batch, 0.0));
}

/// FO-MAML: the inner loop adapts both B and w with step alpha.
inline MetaParams fomaml_step(const MetaParams& p, const TaskBatch& batch, std::optional<double> inner_b_step = {}) {
  return apply_gradients(p, first_order_gradients(p, batch, inner_b_step.value_or(p.alpha)));
}

/// E[w_{t,i} w_{t,i}^T] over tasks and samples for centred tasks:
///   Delta w w^T Delta + alpha^2 B^T M B
///   + (alpha^2 / m) B^T (B w w^T B^T + M + (||B w||^2 + sigma_bar^2) I) B,
/// with Delta = I - alpha B^T B and M = B* Sigma* B*^T.
inline Matrix expected_head_covariance(const MetaParams& p, const GroundTruth& gt, Index m_in) {
  const Index kp = p.k_prime();
  const double a = p.alpha, m = static_cast<double>(m_in);
  const Matrix btb = p.b.transpose() * p.b;
  const Matrix delta = Matrix::Identity(kp, kp) - a * btb;
  const Vector dw = delta * p.w;
  const Matrix bts = p.b.transpose() * gt.b_star;  // k' x k
  const Matrix sig = bts * gt.sigma_star * bts.transpose();
  const Vector btbw = btb * p.w;
  const double bw2 = p.w.dot(btbw);
  Matrix e = dw * dw.transpose() + a * a * sig;
  e += (a * a / m) * (btbw * btbw.transpose() + sig + (bw2 + gt.sigma_bar2()) * btb);
  return symmetrize(e);
}

struct InfiniteTasksResult {
  MetaParams params;
  Matrix head_covariance;
};

/// Expected FO-ANIL update over infinitely many centred tasks:
///   w+ = w - beta (I - alpha B^T B) B^T B w
///   B+ = B - beta B E[w_i w_i^T] + alpha beta B* Sigma* B*^T B.
inline InfiniteTasksResult infinite_tasks_step(const MetaParams& p, const GroundTruth& gt, Index m_in) {
  if (!gt.centered())
    throw UnsupportedConfiguration("the infinite-tasks update is only defined for zero task mean");
  if (m_in < 1) throw PreconditionError("m_in must be >= 1");
  const Index kp = p.k_prime();
  const Matrix btb = p.b.transpose() * p.b;
  const Matrix delta = Matrix::Identity(kp, kp) - p.alpha * btb;
  InfiniteTasksResult r;
  r.head_covariance = expected_head_covariance(p, gt, m_in);
  r.params = p;
  r.params.w = p.w - p.beta * (delta * (btb * p.w));
  const Matrix sb = gt.b_star * (gt.sigma_star * (gt.b_star.transpose() * p.b));
  r.params.b = p.b - p.beta * (p.b * r.head_covariance) + (p.alpha * p.beta) * sb;
  return r;
}

/// Expected FO-ANIL update with infinitely many samples per task, for task
/// parameters with mean `mu` and second moment `second` (= Sigma* + mu mu^T):
///   w+ = w - beta Delta B^T (B w - B* mu)
///   B+ = B - beta B Delta w (Delta w + alpha B^T B* mu)^T
///        + beta (I - alpha B B^T) B* (mu (Delta w)^T + alpha second B*^T B).
inline MetaParams infinite_samples_step(const MetaParams& p, const GroundTruth& gt, const Vector& mu,
                                        const Matrix& second) {
  const Index kp = p.k_prime();
  const double a = p.alpha, beta = p.beta;
  const Matrix btb = p.b.transpose() * p.b;
  const Matrix delta = Matrix::Identity(kp, kp) - a * btb;
  const Vector dw = delta * p.w;
  const Vector bsmu = gt.b_star * mu;
  const Matrix bstb = gt.b_star.transpose() * p.b;  // k x k'

  MetaParams next = p;
  next.w = p.w - beta * (delta * (p.b.transpose() * (p.b * p.w - bsmu)));
  const Vector right = dw + a * (p.b.transpose() * bsmu);
  const Matrix inner = gt.b_star * (mu * dw.transpose() + a * (second * bstb));  // d x k'
  next.b = p.b - beta * (p.b * dw) * right.transpose() + beta * (inner - a * (p.b * (p.b.transpose() * inner)));
  return next;
}

inline MetaParams infinite_samples_step(const MetaParams& p, const GroundTruth& gt) {
  return infinite_samples_step(p, gt, gt.mu_star, gt.second_moment());
}

enum class Regime { finite_anil, finite_maml, inf_tasks, inf_samples };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::finite_anil: return "finite_anil";
    case Regime::finite_maml: return "finite_maml";
    case Regime::inf_tasks: return "inf_tasks";
    case Regime::inf_samples: return "inf_samples";
  }
  return "?";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "finite_anil") return Regime::finite_anil;
  if (s == "finite_maml") return Regime::finite_maml;
  if (s == "inf_tasks") return Regime::inf_tasks;
  if (s == "inf_samples") return Regime::inf_samples;
  throw PreconditionError("unknown training regime '" + s + "'");
}

struct TrainOptions {
  Regime regime = Regime::finite_anil;
  Index steps = 5000;
  Index cadence = 50;
  Index m_in = 20;
  // Finite regimes: draw a fresh batch every step instead of reusing one.
  bool resample_tasks = false;
  Index n_tasks = 5000;
  Index m_out = 10;
  // FO-MAML inner step on B; defaults to alpha.
  std::optional<double> maml_inner_b_step;
  // Infinite samples: task moments; defaults to the population moments.
  std::optional<TaskMoments> moments;
};

/// Called once per step (t = 0..T) with `tick` set on cadence steps and on
/// the final step.
using StepObserver = std::function<void(Index t, const MetaParams& p, bool tick)>;

inline MetaParams train(MetaParams p, const GroundTruth& gt, const TaskBatch* batch, const TrainOptions& opt,
                        const RngSpec& rng, const StepObserver& observe = {}) {
  p.validate();
  if (opt.steps < 0) throw PreconditionError("step count must be >= 0");
  if (opt.cadence < 1) throw PreconditionError("cadence must be >= 1");
  const bool finite = opt.regime == Regime::finite_anil || opt.regime == Regime::finite_maml;
  if (finite && !opt.resample_tasks && batch == nullptr) throw PreconditionError("finite regimes need a task batch");
  if (opt.regime == Regime::inf_tasks && !gt.centered())
    throw UnsupportedConfiguration("the infinite-tasks update is only defined for zero task mean");
  const TaskMoments moments = opt.moments.value_or(TaskMoments::of(gt));
  const double b_step = opt.regime == Regime::finite_maml ? opt.maml_inner_b_step.value_or(p.alpha) : 0.0;

  OuterGradients grads;
  KernelWorkspace ws;
  auto finite_step = [&](const TaskBatch& b) {
    first_order_gradients(p, b, b_step, grads, ws);
    p.b -= p.beta * grads.grad_b;
    p.w -= p.beta * grads.grad_w;
  };

  auto notify = [&](Index t) {
    if (observe) observe(t, p, t % opt.cadence == 0 || t == opt.steps);
  };
  notify(0);
  for (Index t = 1; t <= opt.steps; ++t) {
    switch (opt.regime) {
      case Regime::finite_anil:
      case Regime::finite_maml:
        if (opt.resample_tasks) {
          TaskBatch fresh = sample_tasks(gt, opt.n_tasks, opt.m_in, opt.m_out, rng.child("step", static_cast<std::uint64_t>(t)));
          finite_step(fresh);
        } else {
          finite_step(*batch);
        }
        break;
      case Regime::inf_tasks:
        p = infinite_tasks_step(p, gt, opt.m_in).params;
        break;
      case Regime::inf_samples:
        p = infinite_samples_step(p, gt, moments.mean, moments.second_moment);
        break;
    }
    if (!p.finite()) throw DivergenceError("parameters became non-finite at step " + std::to_string(t));
    notify(t);
  }
  return p;
}

}  // namespace anil
