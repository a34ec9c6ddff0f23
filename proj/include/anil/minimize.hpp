#pragma once

// Unconstrained smooth minimisation: limited-memory BFGS with a strong-Wolfe
// line search, and gradient descent with Armijo backtracking.

#include "anil/core.hpp"

#include <deque>
#include <functional>
#include <limits>

namespace anil {

/// f(x, grad) returns the objective and writes the gradient into grad.
using Objective = std::function<double(const Vector& x, Vector& grad)>;

struct IterationInfo {
  Index iter = 0;
  double loss = 0.0;
  double grad_norm = 0.0;  // infinity norm
  double step_len = 0.0;   // ||x_{k+1} - x_k||_2
  const Vector* x = nullptr;  // current iterate, valid during the call
};

using IterationCallback = std::function<void(const IterationInfo&)>;

struct MinimizerConfig {
  enum class Method { lbfgs, gd };
  Method method = Method::lbfgs;
  int history = 10;
  Index max_iters = 15000;
  Index max_evals = 15000;
  double grad_tol = 1e-5;  // on the infinity norm of the gradient
  double ftol = 2.220446049250313e-09;  // relative decrease between iterations
  double gd_step = 1.0;  // initial trial step for gd
  double gd_shrink = 0.5;
};

struct MinimizeResult {
  Vector x;
  double f = 0.0;
  Index iterations = 0;
  Index evaluations = 0;
  bool converged = false;
  std::string reason;
};

namespace detail {

struct LinePoint {
  double a;
  double f;
  double d;  // directional derivative
};

// Minimiser of the cubic interpolating (a0, f0, d0) and (a1, f1, d1), clamped
// into the interior of [lo, hi]; falls back to bisection.
inline double cubic_step(const LinePoint& p0, const LinePoint& p1, double lo, double hi) {
  const double d1 = p0.d + p1.d - 3.0 * (p0.f - p1.f) / (p0.a - p1.a);
  const double disc = d1 * d1 - p0.d * p1.d;
  double a = 0.5 * (lo + hi);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), p1.a - p0.a);
    const double denom = p1.d - p0.d + 2.0 * d2;
    if (denom != 0.0) a = p1.a - (p1.a - p0.a) * (p1.d + d2 - d1) / denom;
  }
  const double width = hi - lo;
  if (!std::isfinite(a) || a < lo + 0.1 * width || a > hi - 0.1 * width) a = 0.5 * (lo + hi);
  return a;
}

}  // namespace detail

/// Strong-Wolfe line search along `dir` from x (bracketing then zoom).
/// Returns the accepted step (0 if none was found) and leaves the trial
/// point, its value and gradient in x_new, f_new, g_new.
inline double wolfe_line_search(const Objective& f, const Vector& x, double fx, const Vector& gx, const Vector& dir,
                                double a_init, Vector& x_new, double& f_new, Vector& g_new, Index& evals,
                                double c1 = 1e-4, double c2 = 0.9, int max_trials = 40) {
  const double d0 = gx.dot(dir);
  if (!(d0 < 0.0)) return 0.0;
  auto eval = [&](double a) {
    x_new = x + a * dir;
    f_new = f(x_new, g_new);
    ++evals;
    return detail::LinePoint{a, f_new, g_new.dot(dir)};
  };
  detail::LinePoint prev{0.0, fx, d0};
  double a = a_init;
  detail::LinePoint lo{}, hi{};
  bool bracketed = false;
  for (int i = 0; i < max_trials; ++i) {
    detail::LinePoint cur = eval(a);
    if (!std::isfinite(cur.f) || cur.f > fx + c1 * a * d0 || (i > 0 && cur.f >= prev.f)) {
      lo = prev;
      hi = cur;
      bracketed = true;
      break;
    }
    if (std::abs(cur.d) <= -c2 * d0) return a;
    if (cur.d >= 0.0) {
      lo = cur;
      hi = prev;
      bracketed = true;
      break;
    }
    prev = cur;
    a *= 2.0;
  }
  if (!bracketed) return 0.0;
  for (int i = 0; i < max_trials; ++i) {
    double left = std::min(lo.a, hi.a), right = std::max(lo.a, hi.a);
    if (right - left <= 1e-16 * std::max(1.0, right)) break;
    double trial = std::isfinite(hi.f) ? detail::cubic_step(lo, hi, left, right) : 0.5 * (left + right);
    detail::LinePoint cur = eval(trial);
    if (!std::isfinite(cur.f) || cur.f > fx + c1 * trial * d0 || cur.f >= lo.f) {
      hi = cur;
    } else {
      if (std::abs(cur.d) <= -c2 * d0) return trial;
      if (cur.d * (hi.a - lo.a) >= 0.0) hi = lo;
      lo = cur;
    }
  }
  // Fall back to the best sufficient-decrease point seen.
  if (lo.a > 0.0 && lo.f <= fx + c1 * lo.a * d0) {
    eval(lo.a);
    return lo.a;
  }
  return 0.0;
}

inline MinimizeResult lbfgs(const Objective& f, Vector x, const MinimizerConfig& cfg,
                            const IterationCallback& callback = {}) {
  MinimizeResult res;
  Vector g(x.size());
  double fx = f(x, g);
  res.evaluations = 1;
  std::deque<Vector> s_hist, y_hist;
  std::deque<double> rho_hist;
  Vector x_new(x.size()), g_new(x.size());
  double f_new = 0.0;
  if (callback) callback({0, fx, g.lpNorm<Eigen::Infinity>(), 0.0, &x});

  for (Index it = 1; it <= cfg.max_iters; ++it) {
    if (!std::isfinite(fx)) {
      res.reason = "non-finite objective";
      break;
    }
    if (g.lpNorm<Eigen::Infinity>() <= cfg.grad_tol) {
      res.converged = true;
      res.reason = "gradient tolerance";
      break;
    }
    if (res.evaluations >= cfg.max_evals) {
      res.reason = "evaluation limit";
      break;
    }
    // Two-loop recursion.
    Vector q = g;
    const std::size_t h = s_hist.size();
    std::vector<double> alpha(h);
    for (std::size_t j = h; j-- > 0;) {
      alpha[j] = rho_hist[j] * s_hist[j].dot(q);
      q -= alpha[j] * y_hist[j];
    }
    if (h > 0) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t j = 0; j < h; ++j) {
      double b = rho_hist[j] * y_hist[j].dot(q);
      q += (alpha[j] - b) * s_hist[j];
    }
    Vector dir = -q;
    double a0 = 1.0;
    if (h == 0) a0 = std::min(1.0, 1.0 / g.norm());
    if (!(g.dot(dir) < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g;
      a0 = std::min(1.0, 1.0 / g.norm());
    }
    double a = wolfe_line_search(f, x, fx, g, dir, a0, x_new, f_new, g_new, res.evaluations);
    if (a == 0.0) {
      res.reason = "line search failed";
      res.converged = g.lpNorm<Eigen::Infinity>() <= 10.0 * cfg.grad_tol;
      break;
    }
    Vector s = x_new - x;
    Vector y = g_new - g;
    const double sy = s.dot(y);
    const double f_old = fx;
    x = x_new;
    g = g_new;
    fx = f_new;
    res.iterations = it;
    if (callback) callback({it, fx, g.lpNorm<Eigen::Infinity>(), s.norm(), &x});
    if (sy > 1e-10 * y.squaredNorm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > cfg.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    if ((f_old - fx) / std::max({std::abs(f_old), std::abs(fx), 1.0}) <= cfg.ftol) {
      res.converged = true;
      res.reason = "relative decrease tolerance";
      break;
    }
    if (it == cfg.max_iters) res.reason = "iteration limit";
  }
  res.x = std::move(x);
  res.f = fx;
  return res;
}

inline MinimizeResult gradient_descent(const Objective& f, Vector x, const MinimizerConfig& cfg,
                                       const IterationCallback& callback = {}) {
  MinimizeResult res;
  Vector g(x.size()), g_new(x.size());
  double fx = f(x, g);
  res.evaluations = 1;
  if (callback) callback({0, fx, g.lpNorm<Eigen::Infinity>(), 0.0, &x});
  double step = cfg.gd_step;
  for (Index it = 1; it <= cfg.max_iters; ++it) {
    if (!std::isfinite(fx)) {
      res.reason = "non-finite objective";
      break;
    }
    if (g.lpNorm<Eigen::Infinity>() <= cfg.grad_tol) {
      res.converged = true;
      res.reason = "gradient tolerance";
      break;
    }
    const double g2 = g.squaredNorm();
    Vector x_new;
    double f_new = std::numeric_limits<double>::infinity();
    for (int b = 0; b < 60; ++b) {
      x_new = x - step * g;
      f_new = f(x_new, g_new);
      ++res.evaluations;
      if (std::isfinite(f_new) && f_new <= fx - 1e-4 * step * g2) break;
      step *= cfg.gd_shrink;
    }
    if (!(f_new <= fx)) {
      res.reason = "backtracking failed";
      break;
    }
    const double f_old = fx;
    const double len = step * std::sqrt(g2);
    x = std::move(x_new);
    fx = f_new;
    g = g_new;
    res.iterations = it;
    if (callback) callback({it, fx, g.lpNorm<Eigen::Infinity>(), len, &x});
    step /= cfg.gd_shrink;
    if ((f_old - fx) / std::max({std::abs(f_old), std::abs(fx), 1.0}) <= cfg.ftol) {
      res.converged = true;
      res.reason = "relative decrease tolerance";
      break;
    }
    if (it == cfg.max_iters) res.reason = "iteration limit";
  }
  res.x = std::move(x);
  res.f = fx;
  return res;
}

inline MinimizeResult minimize(const Objective& f, Vector x, const MinimizerConfig& cfg,
                               const IterationCallback& callback = {}) {
  return cfg.method == MinimizerConfig::Method::lbfgs ? lbfgs(f, std::move(x), cfg, callback)
                                                      : gradient_descent(f, std::move(x), cfg, callback);
}

}  // namespace anil
