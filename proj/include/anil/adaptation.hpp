#pragma once

// Test-time adaptation of a learnt representation and excess-risk
// evaluation over a population of fresh tasks.

#include "anil/baselines.hpp"
#include "anil/task_model.hpp"

#include <limits>
#include <vector>

namespace anil {

/// ||B_hat head - B* w*||^2.
inline double excess_risk(const Matrix& b_hat, const Vector& head, const GroundTruth& gt, const Vector& w_star) {
  return (b_hat * head - gt.b_star * w_star).squaredNorm();
}

/// One gradient step on the head of (1/(2m)) ||X B w - y||^2 from w_hat.
template <class XType, class YType>
Vector one_gd_adapt(const Matrix& b_hat, const Vector& w_hat, const XType& x, const YType& y, double alpha) {
  const double m = static_cast<double>(x.rows());
  Vector r = x * (b_hat * w_hat) - y;
  return w_hat - (alpha / m) * (b_hat.transpose() * (x.transpose() * r));
}

struct AdaptTrajectory {
  std::vector<Vector> heads;  // heads[s] after s steps
  std::vector<double> risks;  // excess risk after s steps
  bool diverged = false;
};

/// n_steps full-batch gradient steps on the head. Stops early and flags
/// divergence when the training loss becomes non-finite.
template <class XType, class YType>
AdaptTrajectory multi_gd_adapt(const Matrix& b_hat, const Vector& w_hat, const XType& x, const YType& y, double step,
                               Index n_steps, const GroundTruth& gt, const Vector& w_star) {
  if (!(step > 0.0)) throw PreconditionError("adaptation step must be > 0");
  if (n_steps < 0) throw PreconditionError("n_steps must be >= 0");
  const double m = static_cast<double>(x.rows());
  // Work in feature space F = X B_hat; grad = F^T (F w - y) / m.
  const Matrix f = x * b_hat;
  const Matrix ftf = f.transpose() * f / m;
  const Vector fty = f.transpose() * y / m;
  AdaptTrajectory tr;
  Vector w = w_hat;
  tr.heads.push_back(w);
  tr.risks.push_back(excess_risk(b_hat, w, gt, w_star));
  for (Index s = 1; s <= n_steps; ++s) {
    w -= step * (ftf * w - fty);
    const double loss = 0.5 * (f * w - y).squaredNorm() / m;
    if (!std::isfinite(loss) || !w.allFinite()) {
      tr.diverged = true;
      break;
    }
    tr.heads.push_back(w);
    tr.risks.push_back(excess_risk(b_hat, w, gt, w_star));
  }
  return tr;
}

/// Linear-interpolation quantile of unsorted values.
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Upper bound on ||B_hat w_test - B* w*|| at the limit point, holding with
/// probability at least 1 - 4 exp(-k/2); m = m_in, sigma^2 = noise variance.
inline double excess_risk_bound(double w_star_norm, const GroundTruth& gt, Index m_in, Index m_test) {
  const Index k = gt.k();
  if (m_test < k) throw PreconditionError("m_test must be >= k");
  const double m = static_cast<double>(m_in);
  const double sb2 = gt.sigma_bar2();
  const double ratio = static_cast<double>(k) / static_cast<double>(m_test);
  const double shrink_min = (1.0 + sb2 / (lambda_min(gt.sigma_star) + sb2 / m)) / (m + 1.0);
  const double factor = 1.0 - (1.0 + sb2 / (lambda_max(gt.sigma_star) + sb2 / m)) / (m + 1.0);
  const double conc = std::max(2.0 * std::sqrt(ratio), 4.0 * ratio);
  return shrink_min * w_star_norm + 3.0 * factor * conc * w_star_norm +
         36.0 * factor * std::sqrt(gt.noise_var) * std::sqrt(ratio);
}

enum class Adaptation { one_gd, k_gd, ridge };

inline std::string to_string(Adaptation a) {
  switch (a) {
    case Adaptation::one_gd: return "1-GD";
    case Adaptation::k_gd: return "k-GD";
    case Adaptation::ridge: return "Ridge";
  }
  return "?";
}

struct EvalConfig {
  Index n_test_tasks = 10000;
  std::vector<Index> m_test = {20, 30};
  Index n_val_tasks = 2000;
  std::vector<double> lambda_grid = log_grid(1e-4, 1e2, 13);
  Index k_gd_steps = 1;
  double k_gd_step = 0.01;
  std::vector<double> quantile_levels = {0.05, 0.25, 0.5, 0.75, 0.95};

  Index max_m_test() const { return *std::max_element(m_test.begin(), m_test.end()); }
};

/// Held-out tasks generated once per ground truth; each task has
/// max(m_test) rows and smaller m_test values use its leading rows.
struct TestData {
  std::vector<TestTask> test;
  std::vector<TestTask> val;

  static TestData build(const GroundTruth& gt, const EvalConfig& cfg, const RngSpec& rng) {
    TestData d;
    const Index m = cfg.max_m_test();
    const RngSpec test_rng = rng.child("test_tasks");
    const RngSpec val_rng = rng.child("val_tasks");
    d.test.reserve(static_cast<std::size_t>(cfg.n_test_tasks));
    for (Index i = 0; i < cfg.n_test_tasks; ++i) d.test.push_back(sample_test_task(gt, m, test_rng, i));
    d.val.reserve(static_cast<std::size_t>(cfg.n_val_tasks));
    for (Index i = 0; i < cfg.n_val_tasks; ++i) d.val.push_back(sample_test_task(gt, m, val_rng, i));
    return d;
  }
};

struct MethodResult {
  std::string method;
  std::string adaptation;
  Index m_test = 0;
  double mean = 0.0;
  std::vector<double> quantiles;
  double lambda = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> risks;  // per test task, in task order
};

struct EvalReport {
  std::vector<MethodResult> results;

  const MethodResult& get(const std::string& method, const std::string& adaptation, Index m_test) const {
    for (const auto& r : results)
      if (r.method == method && r.adaptation == adaptation && r.m_test == m_test) return r;
    throw Error("no result for " + method + "/" + adaptation);
  }
};

namespace detail {

inline double fixed_order_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline std::vector<double> ridge_risks(const Matrix& b_hat, const GroundTruth& gt, const std::vector<TestTask>& tasks,
                                       Index m_test, double lambda) {
  std::vector<double> risks;
  risks.reserve(tasks.size());
  for (const auto& t : tasks) {
    Matrix f = t.x.topRows(m_test) * b_hat;
    Vector head = ridge_regression(f, Vector(t.y.head(m_test)), lambda);
    risks.push_back(excess_risk(b_hat, head, gt, t.w_star));
  }
  return risks;
}

// Mean validation risk for every lambda in the grid.
inline std::vector<double> ridge_validation(const Matrix& b_hat, const GroundTruth& gt,
                                            const std::vector<TestTask>& tasks, Index m_test,
                                            const std::vector<double>& grid) {
  std::vector<double> sums(grid.size(), 0.0);
  for (const auto& t : tasks) {
    Matrix f = t.x.topRows(m_test) * b_hat;
    RidgePath path(f, Vector(t.y.head(m_test)));
    for (std::size_t j = 0; j < grid.size(); ++j) sums[j] += excess_risk(b_hat, path.solve(grid[j]), gt, t.w_star);
  }
  for (double& s : sums) s /= static_cast<double>(tasks.size());
  return sums;
}

}  // namespace detail

/// Adapts (b_hat, w_hat) on every test task and summarises the excess risk.
/// For ridge, lambda is the grid value with the lowest mean validation risk.
/// `alpha` is the one-step adaptation step size.
inline MethodResult evaluate_method(const std::string& name, const Matrix& b_hat, const Vector& w_hat,
                                    const GroundTruth& gt, Adaptation adaptation, double alpha, Index m_test,
                                    const TestData& data, const EvalConfig& cfg) {
  if (m_test > cfg.max_m_test()) throw PreconditionError("m_test exceeds the generated rows");
  MethodResult r;
  r.method = name;
  r.adaptation = to_string(adaptation);
  r.m_test = m_test;
  switch (adaptation) {
    case Adaptation::one_gd:
      for (const auto& t : data.test) {
        Vector head = one_gd_adapt(b_hat, w_hat, t.x.topRows(m_test), t.y.head(m_test), alpha);
        r.risks.push_back(excess_risk(b_hat, head, gt, t.w_star));
      }
      break;
    case Adaptation::k_gd:
      for (const auto& t : data.test) {
        AdaptTrajectory tr = multi_gd_adapt(b_hat, w_hat, t.x.topRows(m_test), t.y.head(m_test), cfg.k_gd_step,
                                            cfg.k_gd_steps, gt, t.w_star);
        r.risks.push_back(tr.diverged ? std::numeric_limits<double>::infinity() : tr.risks.back());
      }
      break;
    case Adaptation::ridge: {
      if (cfg.lambda_grid.empty()) throw PreconditionError("empty lambda grid");
      if (data.val.empty()) throw PreconditionError("ridge needs validation tasks");
      std::vector<double> val = detail::ridge_validation(b_hat, gt, data.val, m_test, cfg.lambda_grid);
      auto best = std::min_element(val.begin(), val.end()) - val.begin();
      r.lambda = cfg.lambda_grid[static_cast<std::size_t>(best)];
      r.risks = detail::ridge_risks(b_hat, gt, data.test, m_test, r.lambda);
      break;
    }
  }
  r.mean = detail::fixed_order_mean(r.risks);
  for (double q : cfg.quantile_levels) r.quantiles.push_back(quantile(r.risks, q));
  return r;
}

/// Single-task ridge (raw d-dimensional features) and oracle ridge (features X B*).
inline EvalReport evaluate_baselines(const GroundTruth& gt, const TestData& data, const EvalConfig& cfg) {
  EvalReport rep;
  const Matrix eye = Matrix::Identity(gt.d(), gt.d());
  for (Index m : cfg.m_test) {
    rep.results.push_back(
        evaluate_method("single_task_ridge", eye, Vector::Zero(gt.d()), gt, Adaptation::ridge, 0.0, m, data, cfg));
    rep.results.push_back(
        evaluate_method("oracle_ridge", gt.b_star, Vector::Zero(gt.k()), gt, Adaptation::ridge, 0.0, m, data, cfg));
  }
  return rep;
}

}  // namespace anil
