#pragma once

// Closed-form quantities from the FO-ANIL analysis and the Monte-Carlo
// estimators used to cross-check them.

#include "anil/dynamics.hpp"

#include <limits>
#include <vector>

namespace anil {

struct FixedPoint {
  Matrix lambda_star;
  double alpha = 0.0;
  Index m_in = 0;
  double sigma_bar2 = 0.0;
};

/// Lambda*(tau, gamma) = (1/alpha) (m/(m+1))
///   (I - ((sigma_bar^2 + tau)/(m+1) + gamma) (Sigma* + (sigma_bar^2 + tau)/(m+1) I)^{-1}).
inline FixedPoint lambda_star_shifted(const GroundTruth& gt, double alpha, Index m_in, double tau, double gamma) {
  if (!(alpha > 0.0)) throw PreconditionError("alpha must be > 0");
  if (m_in < 1) throw PreconditionError("m_in must be >= 1");
  if (tau < 0.0) throw PreconditionError("tau must be >= 0");
  if (gamma < 0.0 || (gamma > 0.0 && gamma >= lambda_min(gt.sigma_star)))
    throw PreconditionError("gamma must lie in [0, lambda_min(Sigma*))");
  const Index k = gt.k();
  const double m = static_cast<double>(m_in);
  const double s = (gt.sigma_bar2() + tau) / (m + 1.0);
  const Matrix shifted = gt.sigma_star + s * Matrix::Identity(k, k);
  const Matrix inv = shifted.ldlt().solve(Matrix::Identity(k, k));
  FixedPoint fp;
  fp.lambda_star = symmetrize((m / ((m + 1.0) * alpha)) * (Matrix::Identity(k, k) - (s + gamma) * inv));
  fp.alpha = alpha;
  fp.m_in = m_in;
  fp.sigma_bar2 = gt.sigma_bar2();
  return fp;
}

/// Lambda* = (1/alpha) (m/(m+1)) (I - ((m+1)/sigma_bar^2 Sigma* + I)^{-1}).
inline FixedPoint lambda_star(const GroundTruth& gt, double alpha, Index m_in) {
  if (!(alpha > 0.0)) throw PreconditionError("alpha must be > 0");
  if (m_in < 1) throw PreconditionError("m_in must be >= 1");
  const Index k = gt.k();
  const double m = static_cast<double>(m_in);
  const Matrix inner = ((m + 1.0) / gt.sigma_bar2()) * gt.sigma_star + Matrix::Identity(k, k);
  const Matrix inv = inner.ldlt().solve(Matrix::Identity(k, k));
  FixedPoint fp;
  fp.lambda_star = symmetrize((m / ((m + 1.0) * alpha)) * (Matrix::Identity(k, k) - inv));
  fp.alpha = alpha;
  fp.m_in = m_in;
  fp.sigma_bar2 = gt.sigma_bar2();
  return fp;
}

/// R(Lambda, tau) = (I - alpha (m+1)/m Lambda) Sigma* - (alpha/m)(sigma_bar^2 + tau) Lambda.
/// Lambda*(tau, gamma) solves R = gamma I.
inline Matrix fixed_point_map_residual(const Matrix& lam, const GroundTruth& gt, double alpha, Index m_in,
                                       double tau = 0.0) {
  const double m = static_cast<double>(m_in);
  const Index k = gt.k();
  return (Matrix::Identity(k, k) - alpha * (m + 1.0) / m * lam) * gt.sigma_star -
         (alpha / m) * (gt.sigma_bar2() + tau) * lam;
}

/// Parameters at the limit point: B = [B* Lambda*^{1/2}, 0], w = 0.
inline MetaParams limit_params(const GroundTruth& gt, double alpha, double beta, Index m_in, Index k_prime) {
  if (k_prime < gt.k()) throw DimensionError("k' must be >= k");
  MetaParams p;
  p.alpha = alpha;
  p.beta = beta;
  p.b = Matrix::Zero(gt.d(), k_prime);
  p.b.leftCols(gt.k()) = gt.b_star * psd_sqrt(lambda_star(gt, alpha, m_in).lambda_star);
  p.w = Vector::Zero(k_prime);
  return p;
}

/// One inequality lhs <= rhs (or a boolean check with lhs/rhs unused).
struct Condition {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  bool pass = false;
  double margin() const { return rhs - lhs; }
};

struct ConditionReport {
  std::vector<Condition> conditions;

  bool all_pass() const {
    return std::all_of(conditions.begin(), conditions.end(), [](const Condition& c) { return c.pass; });
  }
  const Condition& get(const std::string& name) const {
    for (const auto& c : conditions)
      if (c.name == name) return c;
    throw Error("no condition named '" + name + "'");
  }
};

inline Condition make_condition(std::string name, double lhs, double rhs, bool strict = false) {
  return Condition{std::move(name), lhs, rhs, strict ? lhs < rhs : lhs <= rhs};
}

/// Step-size, constant and (when `init` is given) initialisation conditions
/// under which FO-ANIL provably converges. The guarantee covers isotropic
/// Sigma* only; that is reported as its own condition.
inline ConditionReport check_theorem3(const GroundTruth& gt, double alpha, double beta, Index m_in, double c1,
                                      double c2, const MetaParams* init = nullptr) {
  const double m = static_cast<double>(m_in);
  const double sb2 = gt.sigma_bar2();
  const double smax = lambda_max(gt.sigma_star);
  const double smin = lambda_min(gt.sigma_star);
  const double inv_ab = 1.0 / (alpha * beta);
  ConditionReport r;
  auto& c = r.conditions;

  const double iso_dev = (gt.sigma_star - smax * Matrix::Identity(gt.k(), gt.k())).cwiseAbs().maxCoeff();
  c.push_back(make_condition("sigma_isotropic", iso_dev, 1e-12 * smax));
  c.push_back(make_condition("c1_in_unit_interval", c1, 1.0, true));
  c.push_back(Condition{"constants_positive", 0.0, 0.0, c1 > 0.0 && c2 > 0.0});
  c.push_back(make_condition("constants_vs_lambda_min",
                             c2 * (m + 1.0) / m + c1 * (c2 + sb2) / (2.0 * m * (m + 1.0)), smin, true));
  c.push_back(make_condition("step_beta_le_alpha", beta, alpha));
  c.push_back(make_condition("step_alpha_vs_sigma", 4.0 * smax, 1.0 / (alpha * alpha)));
  c.push_back(make_condition("step_product_bound",
                             c2 * (m + 2.0) / m + c1 * c2 / (2.0 * m * (m + 1.0)) + 2.0 * sb2 / m +
                                 (m + 1.0) / m * smax + (4.0 / 3.0) * m / ((m + 1.0) * (m + 1.0)),
                             inv_ab));
  c.push_back(make_condition("step_product_noise_bound", 6.0 * (smax + (c2 + sb2) / (m + 1.0)), inv_ab));
  if (init != nullptr) {
    Vector sv = squared_singular_values(gt.b_star.transpose() * init->b);
    bool full_rank = sv.size() == gt.k() && sv(0) > 1e-12 * std::max(sv(sv.size() - 1), 1e-300);
    c.push_back(Condition{"init_full_rank", sv(0), 0.0, full_rank});
    c.push_back(make_condition("init_b_norm", squared_singular_values(init->b).maxCoeff(),
                               c1 / (alpha * (m + 1.0))));
    c.push_back(make_condition("init_w_norm", init->w.squaredNorm(), alpha * c2));
  }
  return r;
}

/// Initialisation satisfying the norm conditions for constants c1, c2 with a
/// small safety factor below each bound.
inline InitSpec theorem_init(double alpha, Index m_in, double c1, double c2) {
  const double m = static_cast<double>(m_in);
  return {0.999 * c1 / (alpha * (m + 1.0)), 0.999 * alpha * c2};
}

/// Upper bound on ||D_t||_2^2: 1 / (kappa t + 1/||D_0||_2^2), kappa = alpha^2 beta sigma_bar^2 / m.
inline double rate_bound(double t, double alpha, double beta, Index m_in, double sigma_bar2, double d0_norm2) {
  if (t < 0.0) throw PreconditionError("t must be >= 0");
  if (d0_norm2 <= 0.0) return 0.0;
  const double kappa = alpha * alpha * beta * sigma_bar2 / static_cast<double>(m_in);
  return 1.0 / (kappa * t + 1.0 / d0_norm2);
}

inline void require_unit(const Vector& v) {
  if (std::abs(v.norm() - 1.0) > 1e-10) throw PreconditionError("v must be a unit vector");
}

/// E[Sigma v v^T Sigma] for Sigma the sample covariance of n standard
/// Gaussian vectors and ||v|| = 1: (1/n) I + ((n+1)/n) v v^T.
inline Matrix wwtop_expectation(Index n, const Vector& v) {
  if (n < 1) throw PreconditionError("n must be >= 1");
  require_unit(v);
  const double nn = static_cast<double>(n);
  return Matrix::Identity(v.size(), v.size()) / nn + ((nn + 1.0) / nn) * v * v.transpose();
}

struct MatrixEstimate {
  Matrix mean;
  Matrix std_error;
  Index trials = 0;

  /// Largest |reference - mean| / std_error over entries with non-zero error.
  double max_z(const Matrix& reference) const {
    double z = 0.0;
    for (Index j = 0; j < mean.cols(); ++j)
      for (Index i = 0; i < mean.rows(); ++i) {
        double diff = std::abs(reference(i, j) - mean(i, j));
        if (std_error(i, j) > 0.0) {
          z = std::max(z, diff / std_error(i, j));
        } else if (diff > 0.0) {
          z = std::numeric_limits<double>::infinity();
        }
      }
    return z;
  }
};

/// Monte-Carlo estimate of E[Sigma v v^T Sigma] in dimension d.
inline MatrixEstimate mc_wwtop(Index n, const Vector& v, Index trials, const RngSpec& rng) {
  if (trials < 1) throw PreconditionError("trials must be >= 1");
  if (n < 1) throw PreconditionError("n must be >= 1");
  require_unit(v);
  const Index d = v.size();
  constexpr Index chunk = 10000;
  Matrix sum = Matrix::Zero(d, d), sum2 = Matrix::Zero(d, d);
  Matrix x(n, d);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index start = 0, c = 0; start < trials; start += chunk, ++c) {
    Engine eng = rng.stream("wwtop", static_cast<std::uint64_t>(c));
    const Index end = std::min(trials, start + chunk);
    for (Index t = start; t < end; ++t) {
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < d; ++j) x(i, j) = normal(eng);
      Vector sv = x.transpose() * (x * v) / static_cast<double>(n);
      Matrix o = sv * sv.transpose();
      sum += o;
      sum2 += o.cwiseProduct(o);
    }
  }
  const double t = static_cast<double>(trials);
  MatrixEstimate e;
  e.trials = trials;
  e.mean = sum / t;
  Matrix var = (sum2 / t - e.mean.cwiseProduct(e.mean)) * (t / std::max(t - 1.0, 1.0));
  e.std_error = (var.cwiseMax(0.0) / t).cwiseSqrt();
  return e;
}

/// Population ANIL loss at a point with B_perp*^T B = 0 and B w = 0, as a
/// function of Lambda = B*^T B B^T B* (isotropic Sigma* only):
///   alpha^2/(2m) ((m+1)||Sigma*|| + sigma_bar^2) tr(Lambda^2) - alpha ||Sigma*|| tr(Lambda) + tr(Sigma*)/2.
inline double closed_form_anil_loss(const Matrix& lam, const GroundTruth& gt, double alpha, Index m_in) {
  const double c = lambda_max(gt.sigma_star);
  const Index k = gt.k();
  if ((gt.sigma_star - c * Matrix::Identity(k, k)).cwiseAbs().maxCoeff() > 1e-12 * std::max(c, 1e-300))
    throw UnsupportedConfiguration("closed-form ANIL loss needs an isotropic task covariance");
  if (lam.rows() != k || lam.cols() != k) throw DimensionError("Lambda must be k x k");
  const double m = static_cast<double>(m_in);
  return alpha * alpha / (2.0 * m) * ((m + 1.0) * c + gt.sigma_bar2()) * (lam * lam).trace() - alpha * c * lam.trace() +
         0.5 * gt.sigma_star.trace();
}

struct ScalarEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  double ci() const { return 3.0 * std_error; }
};

/// Monte-Carlo ANIL losses 1/2 E||B w~ - B* w*||^2 for several points on
/// common random draws, plus the paired difference of consecutive points
/// (point i minus point i+1).
struct LossComparison {
  std::vector<ScalarEstimate> losses;
  std::vector<ScalarEstimate> consecutive_diffs;
};

inline LossComparison mc_anil_losses(const std::vector<MetaParams>& points, const GroundTruth& gt, Index m_in,
                                     Index trials, const RngSpec& rng) {
  if (trials < 2) throw PreconditionError("trials must be >= 2");
  if (points.empty()) throw PreconditionError("no points to evaluate");
  const std::size_t np = points.size();
  const Matrix factor = psd_sqrt(gt.sigma_star);
  const double sigma = std::sqrt(gt.noise_var);
  std::vector<double> s(np, 0.0), s2(np, 0.0), ds(np, 0.0), ds2(np, 0.0);
  std::vector<double> val(np);
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrix x(m_in, gt.d());
  Vector y(m_in);
  constexpr Index chunk = 10000;
  for (Index start = 0, c = 0; start < trials; start += chunk, ++c) {
    Engine eng = rng.stream("anil_loss", static_cast<std::uint64_t>(c));
    const Index end = std::min(trials, start + chunk);
    for (Index t = start; t < end; ++t) {
      Vector ws = gt.mu_star + factor * gaussian_vector(gt.k(), eng);
      for (Index i = 0; i < m_in; ++i)
        for (Index j = 0; j < gt.d(); ++j) x(i, j) = normal(eng);
      const Vector target = gt.b_star * ws;
      y = x * target;
      for (Index i = 0; i < m_in; ++i) y(i) += sigma * normal(eng);
      for (std::size_t p = 0; p < np; ++p) {
        Vector head = anil_inner_head(points[p], x, y);
        val[p] = 0.5 * (points[p].b * head - target).squaredNorm();
        s[p] += val[p];
        s2[p] += val[p] * val[p];
      }
      for (std::size_t p = 0; p + 1 < np; ++p) {
        double dv = val[p] - val[p + 1];
        ds[p] += dv;
        ds2[p] += dv * dv;
      }
    }
  }
  const double n = static_cast<double>(trials);
  auto estimate = [n](double sum, double sum2) {
    double mean = sum / n;
    double var = std::max(sum2 / n - mean * mean, 0.0) * n / (n - 1.0);
    return ScalarEstimate{mean, std::sqrt(var / n)};
  };
  LossComparison out;
  for (std::size_t p = 0; p < np; ++p) out.losses.push_back(estimate(s[p], s2[p]));
  for (std::size_t p = 0; p + 1 < np; ++p) out.consecutive_diffs.push_back(estimate(ds[p], ds2[p]));
  return out;
}

inline ScalarEstimate mc_anil_loss(const MetaParams& p, const GroundTruth& gt, Index m_in, Index trials,
                                   const RngSpec& rng) {
  return mc_anil_losses({p}, gt, m_in, trials, rng).losses.front();
}

/// The chain of points used for the global-minimality check: an arbitrary
/// point, its projection onto col(B*), that projection with the head
/// component B^+ B w removed, and the limit point.
inline std::vector<MetaParams> minimality_chain(const MetaParams& arbitrary, const GroundTruth& gt, Index m_in) {
  MetaParams complement = arbitrary;
  complement.b = arbitrary.b - gt.b_perp * (gt.b_perp.transpose() * arbitrary.b);
  MetaParams head = complement;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(complement.b);
  head.w = complement.w - cod.solve(complement.b * complement.w);
  MetaParams limit = limit_params(gt, arbitrary.alpha, arbitrary.beta, m_in, arbitrary.k_prime());
  return {arbitrary, complement, head, limit};
}

}  // namespace anil
