#pragma once

// Ground-truth structure of the multi-task linear representation model and
// samplers for training / test tasks.
//
//   y = X B* w*_i + z,   rows of X ~ N(0, I_d),  z ~ N(0, sigma^2 I),
//   w*_i ~ N(mu*, Sigma*),  B* in R^{d x k} with orthonormal columns.

#include "anil/core.hpp"

#include <optional>
#include <sstream>
#include <string>

namespace anil {

/// Task covariance family. The scale is fixed by a norm target:
/// isotropic(c) is c I_k; diag_linear is proportional to diag(1..k) with
/// ||Sigma||_F = sqrt(k); diag_exp is proportional to diag(e^1..e^k) with
/// ||Sigma||_F = 2 sqrt(k). `target` overrides the default norm value and
/// `norm` selects whether the target applies to the Frobenius norm or the
/// trace.
struct CovSpec {
  enum class Kind { isotropic, diag_linear, diag_exp };
  enum class Norm { frobenius, trace };

  Kind kind = Kind::diag_linear;
  double iso_scale = 1.0;
  Norm norm = Norm::frobenius;
  std::optional<double> target;

  static CovSpec isotropic(double c = 1.0) { return CovSpec{Kind::isotropic, c, Norm::frobenius, {}}; }
  static CovSpec diag_linear() { return CovSpec{Kind::diag_linear, 1.0, Norm::frobenius, {}}; }
  static CovSpec diag_exp() { return CovSpec{Kind::diag_exp, 1.0, Norm::frobenius, {}}; }

  CovSpec with_trace(double t) const {
    CovSpec c = *this;
    c.norm = Norm::trace;
    c.target = t;
    return c;
  }
  CovSpec with_frobenius(double f) const {
    CovSpec c = *this;
    c.norm = Norm::frobenius;
    c.target = f;
    return c;
  }

  Matrix build(Index k) const {
    Vector diag(k);
    double default_target = std::sqrt(static_cast<double>(k));
    switch (kind) {
      case Kind::isotropic:
        if (!target) return Matrix::Identity(k, k) * iso_scale;
        diag.setOnes();
        break;
      case Kind::diag_linear:
        for (Index i = 0; i < k; ++i) diag(i) = static_cast<double>(i + 1);
        break;
      case Kind::diag_exp:
        for (Index i = 0; i < k; ++i) diag(i) = std::exp(static_cast<double>(i + 1));
        default_target *= 2.0;
        break;
    }
    double goal = target.value_or(default_target);
    double current = norm == Norm::frobenius ? diag.norm() : diag.sum();
    return Matrix((diag * (goal / current)).asDiagonal());
  }

  /// "isotropic(1)", "diag_linear", "diag_exp", optionally followed by
  /// ";trace=<x>" or ";frobenius=<x>".
  std::string to_string() const {
    std::ostringstream os;
    os.precision(17);
    switch (kind) {
      case Kind::isotropic: os << "isotropic(" << iso_scale << ")"; break;
      case Kind::diag_linear: os << "diag_linear"; break;
      case Kind::diag_exp: os << "diag_exp"; break;
    }
    if (target) os << ";" << (norm == Norm::trace ? "trace=" : "frobenius=") << *target;
    return os.str();
  }

  static CovSpec parse(const std::string& text) {
    std::string head = text;
    std::string tail;
    if (auto p = text.find(';'); p != std::string::npos) {
      head = text.substr(0, p);
      tail = text.substr(p + 1);
    }
    CovSpec c;
    if (head == "diag_linear") {
      c = diag_linear();
    } else if (head == "diag_exp") {
      c = diag_exp();
    } else if (head.rfind("isotropic", 0) == 0) {
      double scale = 1.0;
      if (auto l = head.find('('); l != std::string::npos) scale = std::stod(head.substr(l + 1));
      if (!(scale > 0.0)) throw PreconditionError("isotropic covariance scale must be > 0");
      c = isotropic(scale);
    } else {
      throw PreconditionError("unknown covariance spec '" + text + "'");
    }
    if (!tail.empty()) {
      auto eq = tail.find('=');
      if (eq == std::string::npos) throw PreconditionError("bad covariance normalisation '" + tail + "'");
      std::string key = tail.substr(0, eq);
      double value = std::stod(tail.substr(eq + 1));
      if (!(value > 0.0)) throw PreconditionError("covariance normalisation target must be > 0");
      if (key == "trace") {
        c = c.with_trace(value);
      } else if (key == "frobenius") {
        c = c.with_frobenius(value);
      } else {
        throw PreconditionError("unknown covariance normalisation '" + key + "'");
      }
    }
    return c;
  }
};

/// Task mean: zero, or uniform on the sphere of radius sqrt(k) (or `radius`).
struct MeanSpec {
  enum class Kind { zero, sphere };
  Kind kind = Kind::zero;
  std::optional<double> radius;

  static MeanSpec zero() { return {}; }
  static MeanSpec sphere() { return MeanSpec{Kind::sphere, {}}; }

  std::string to_string() const {
    if (kind == Kind::zero) return "zero";
    if (!radius) return "sphere";
    std::ostringstream os;
    os.precision(17);
    os << "sphere(" << *radius << ")";
    return os.str();
  }

  static MeanSpec parse(const std::string& text) {
    if (text == "zero") return zero();
    if (text.rfind("sphere", 0) == 0) {
      MeanSpec m = sphere();
      if (auto l = text.find('('); l != std::string::npos) m.radius = std::stod(text.substr(l + 1));
      return m;
    }
    throw PreconditionError("unknown mean spec '" + text + "'");
  }
};

struct GroundTruth {
  Matrix b_star;      // d x k, orthonormal columns
  Matrix b_perp;      // d x (d-k), orthonormal basis of col(B*)^perp
  Matrix sigma_star;  // k x k task covariance
  Vector mu_star;     // k
  double noise_var = 0.0;

  Index d() const { return b_star.rows(); }
  Index k() const { return b_star.cols(); }

  /// trace(Sigma*) + sigma^2.
  double sigma_bar2() const { return sigma_star.trace() + noise_var; }

  /// E[w* w*^T] = Sigma* + mu* mu*^T.
  Matrix second_moment() const { return sigma_star + mu_star * mu_star.transpose(); }

  bool centered() const { return mu_star.squaredNorm() == 0.0; }
};

/// Builds a ground truth from explicit parts. B*'s complement is derived by a
/// sign-fixed QR.
inline GroundTruth make_ground_truth(const Matrix& b_star, const Matrix& sigma_star, const Vector& mu_star,
                                     double noise_var) {
  const Index d = b_star.rows(), k = b_star.cols();
  if (k >= d) throw DimensionError("hidden dimension k must be < d");
  if (sigma_star.rows() != k || sigma_star.cols() != k || mu_star.size() != k)
    throw DimensionError("task moments do not match k");
  if (noise_var < 0.0) throw PreconditionError("noise variance must be >= 0");
  GroundTruth gt;
  gt.b_star = b_star;
  gt.b_perp = sign_fixed_full_q(b_star).rightCols(d - k);
  gt.sigma_star = sigma_star;
  gt.mu_star = mu_star;
  gt.noise_var = noise_var;
  return gt;
}

/// Samples the hidden problem. B* is the sign-fixed Q factor of a d x k
/// standard Gaussian matrix.
inline GroundTruth make_ground_truth(Index d, Index k, const CovSpec& cov, const MeanSpec& mean, double noise_var,
                                     const RngSpec& rng) {
  if (k < 1 || d < 1) throw DimensionError("dimensions must be positive");
  if (k >= d) throw DimensionError("hidden dimension k must be < d");
  if (noise_var < 0.0) throw PreconditionError("noise variance must be >= 0");
  Engine eng = rng.stream("b_star");
  Matrix g = gaussian_matrix(d, k, eng);
  Matrix q = sign_fixed_full_q(g);

  GroundTruth gt;
  gt.b_star = q.leftCols(k);
  gt.b_perp = q.rightCols(d - k);
  gt.sigma_star = cov.build(k);
  gt.noise_var = noise_var;
  if (mean.kind == MeanSpec::Kind::zero) {
    gt.mu_star = Vector::Zero(k);
  } else {
    Engine meng = rng.stream("mu_star");
    double r = mean.radius.value_or(std::sqrt(static_cast<double>(k)));
    gt.mu_star = uniform_sphere(k, r * r, meng);
  }
  return gt;
}

/// N tasks with their rows split into inner (first m_in rows) and outer
/// (last m_out rows) subsets. Task i owns rows [i*m_in, (i+1)*m_in) of x_in
/// and rows [i*m_out, (i+1)*m_out) of x_out.
struct TaskBatch {
  Index n_tasks = 0;
  Index m_in = 0;
  Index m_out = 0;
  RowMatrix x_in;
  Vector y_in;
  RowMatrix x_out;
  Vector y_out;
  Matrix w_star;  // k x n_tasks

  Index d() const { return x_in.cols(); }

  auto task_x_in(Index i) const { return x_in.middleRows(i * m_in, m_in); }
  auto task_y_in(Index i) const { return y_in.segment(i * m_in, m_in); }
  auto task_x_out(Index i) const { return x_out.middleRows(i * m_out, m_out); }
  auto task_y_out(Index i) const { return y_out.segment(i * m_out, m_out); }
};

namespace detail {

inline Matrix task_factor(const GroundTruth& gt) { return psd_sqrt(gt.sigma_star); }

// Rows of `x` and entries of `y` for one task, all m rows at once.
inline void sample_task_rows(const GroundTruth& gt, const Vector& theta, Index m, Engine& feat, Engine& noise,
                             RowMatrix& x, Vector& y) {
  std::normal_distribution<double> normal(0.0, 1.0);
  x.resize(m, gt.d());
  for (Index r = 0; r < m; ++r)
    for (Index c = 0; c < gt.d(); ++c) x(r, c) = normal(feat);
  double sigma = std::sqrt(gt.noise_var);
  y = x * theta;
  std::normal_distribution<double> nz(0.0, 1.0);
  for (Index r = 0; r < m; ++r) y(r) += sigma * nz(noise);
}

}  // namespace detail

/// One task's parameter w*_i drawn from its own stream.
inline Vector sample_task_parameter(const GroundTruth& gt, const Matrix& factor, const RngSpec& rng, Index i) {
  Engine eng = rng.stream("w_star", static_cast<std::uint64_t>(i));
  return gt.mu_star + factor * gaussian_vector(gt.k(), eng);
}

inline TaskBatch sample_tasks(const GroundTruth& gt, Index n_tasks, Index m_in, Index m_out, const RngSpec& rng) {
  if (n_tasks < 1 || m_in < 1 || m_out < 1) throw DimensionError("n_tasks, m_in and m_out must be >= 1");
  const Index d = gt.d(), m = m_in + m_out;
  TaskBatch b;
  b.n_tasks = n_tasks;
  b.m_in = m_in;
  b.m_out = m_out;
  b.x_in.resize(n_tasks * m_in, d);
  b.y_in.resize(n_tasks * m_in);
  b.x_out.resize(n_tasks * m_out, d);
  b.y_out.resize(n_tasks * m_out);
  b.w_star.resize(gt.k(), n_tasks);

  const Matrix factor = detail::task_factor(gt);
  RowMatrix x;
  Vector y;
  for (Index i = 0; i < n_tasks; ++i) {
    Vector w = sample_task_parameter(gt, factor, rng, i);
    Engine feat = rng.stream("features", static_cast<std::uint64_t>(i));
    Engine noise = rng.stream("noise", static_cast<std::uint64_t>(i));
    detail::sample_task_rows(gt, gt.b_star * w, m, feat, noise, x, y);
    b.w_star.col(i) = w;
    b.x_in.middleRows(i * m_in, m_in) = x.topRows(m_in);
    b.y_in.segment(i * m_in, m_in) = y.head(m_in);
    b.x_out.middleRows(i * m_out, m_out) = x.bottomRows(m_out);
    b.y_out.segment(i * m_out, m_out) = y.tail(m_out);
  }
  return b;
}

struct TestTask {
  RowMatrix x;
  Vector y;
  Vector w_star;
};

/// A single unsplit task; `index` selects an independent stream.
inline TestTask sample_test_task(const GroundTruth& gt, Index m_test, const RngSpec& rng, Index index = 0) {
  if (m_test < 1) throw DimensionError("m_test must be >= 1");
  TestTask t;
  t.w_star = sample_task_parameter(gt, detail::task_factor(gt), rng, index);
  Engine feat = rng.stream("features", static_cast<std::uint64_t>(index));
  Engine noise = rng.stream("noise", static_cast<std::uint64_t>(index));
  detail::sample_task_rows(gt, gt.b_star * t.w_star, m_test, feat, noise, t.x, t.y);
  return t;
}

/// Empirical mean and second moment (1/N) sum w w^T of a set of task parameters.
struct TaskMoments {
  Vector mean;
  Matrix second_moment;

  static TaskMoments of(const GroundTruth& gt) { return {gt.mu_star, gt.second_moment()}; }

  static TaskMoments empirical(const Matrix& w_star) {
    const double n = static_cast<double>(w_star.cols());
    return {w_star.rowwise().sum() / n, w_star * w_star.transpose() / n};
  }
};

}  // namespace anil
