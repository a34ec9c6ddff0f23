#pragma once

// Per-step diagnostics of a training trajectory and the runtime checks on
// the infinite-tasks trajectory.

#include "anil/theory.hpp"

#include <array>
#include <chrono>
#include <iomanip>
#include <limits>
#include <ostream>

namespace anil {

struct TraceRecord {
  Index step = 0;
  double sv2_min_C = 0.0;
  double sv2_max_C = 0.0;
  double sv2_mean_D = 0.0;
  double sv2_max_D = 0.0;
  double btw_residual = 0.0;
  double lambda_residual = std::numeric_limits<double>::quiet_NaN();
  double rate_bound = 0.0;
  double wall_ms = 0.0;
};

inline constexpr const char* kTraceHeader =
    "step,sv2_min_C,sv2_max_C,sv2_mean_D,sv2_max_D,btw_residual,lambda_residual,rate_bound,wall_ms";

/// Metrics that do not depend on wall time, in trace column order.
inline constexpr int kTraceMetricCount = 7;

inline std::array<double, kTraceMetricCount> trace_metrics(const TraceRecord& r) {
  return {r.sv2_min_C, r.sv2_max_C, r.sv2_mean_D, r.sv2_max_D, r.btw_residual, r.lambda_residual, r.rate_bound};
}

inline std::ostream& write_trace_row(std::ostream& os, const TraceRecord& r) {
  os << r.step << std::setprecision(17);
  for (double v : trace_metrics(r)) os << ',' << v;
  os << ',' << std::setprecision(6) << r.wall_ms << '\n';
  return os;
}

/// Turns (t, params) into TraceRecords. Lambda* is used when the task mean is
/// zero; the rate bound uses ||D_0||_2^2 from the first observed step.
class TraceRecorder {
 public:
  TraceRecorder(const GroundTruth& gt, Index m_in) : gt_(gt), m_in_(m_in) {}

  TraceRecord record(Index t, const MetaParams& p) {
    if (!started_) {
      start_ = std::chrono::steady_clock::now();
      started_ = true;
      if (gt_.centered()) lambda_ = lambda_star(gt_, p.alpha, m_in_).lambda_star;
    }
    const Matrix c = gt_.b_star.transpose() * p.b;
    const Matrix dm = gt_.b_perp.transpose() * p.b;
    const Vector sc = squared_singular_values(c);
    const Vector sd = squared_singular_values(dm);
    TraceRecord r;
    r.step = t;
    r.sv2_min_C = sc.minCoeff();
    r.sv2_max_C = sc.maxCoeff();
    r.sv2_mean_D = sd.size() ? sd.mean() : 0.0;
    r.sv2_max_D = sd.size() ? sd.maxCoeff() : 0.0;
    r.btw_residual = (p.b * p.w - gt_.b_star * gt_.mu_star).squaredNorm();
    if (lambda_.size() > 0) r.lambda_residual = (c * c.transpose() - lambda_).norm() / lambda_.norm();
    if (t == 0 && !have_d0_) {
      d0_norm2_ = r.sv2_max_D;
      have_d0_ = true;
    }
    r.rate_bound = rate_bound(static_cast<double>(t), p.alpha, p.beta, m_in_, gt_.sigma_bar2(), d0_norm2_);
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    records_.push_back(r);
    return r;
  }

  /// Observer for `train` that records on cadence ticks.
  StepObserver observer() {
    return [this](Index t, const MetaParams& p, bool tick) {
      if (tick) record(t, p);
    };
  }

  const std::vector<TraceRecord>& records() const { return records_; }

  void write_csv(std::ostream& os) const {
    os << kTraceHeader << '\n';
    for (const auto& r : records_) write_trace_row(os, r);
  }

 private:
  const GroundTruth& gt_;
  Index m_in_;
  Matrix lambda_;
  bool started_ = false;
  bool have_d0_ = false;
  double d0_norm2_ = 0.0;
  std::chrono::steady_clock::time_point start_;
  std::vector<TraceRecord> records_;
};

/// Checks, at every step of a trajectory:
///   ||w_{t+1}|| <= ||w_t||,  ||D_{t+1} D_{t+1}^T||_2 <= ||D_t D_t^T||_2,
///   Lambda_t <= Lambda* + 1e-8 I,  ||D_t||_2^2 <= rate_bound(t).
/// The two monotonicity checks allow a relative slack of 1e-12 for rounding.
class MonotonicityMonitor {
 public:
  static constexpr double kRelativeSlack = 1e-12;
  static constexpr double kLambdaSlack = 1e-8;

  MonotonicityMonitor(const GroundTruth& gt, double alpha, Index m_in)
      : gt_(gt), m_in_(m_in), lambda_(lambda_star(gt, alpha, m_in).lambda_star) {}

  void observe(Index t, const MetaParams& p) {
    const Matrix c = gt_.b_star.transpose() * p.b;
    const Matrix dm = gt_.b_perp.transpose() * p.b;
    const double wn = p.w.norm();
    const double dd = squared_singular_values(dm).maxCoeff();
    const double excess = lambda_max(c * c.transpose() - lambda_);
    if (t == 0) d0_ = dd;
    const double bound = rate_bound(static_cast<double>(t), p.alpha, p.beta, m_in_, gt_.sigma_bar2(), d0_);
    if (steps_ > 0) {
      if (wn > prev_w_ * (1.0 + kRelativeSlack)) ++w_violations;
      if (dd > prev_d_ * (1.0 + kRelativeSlack)) ++d_violations;
    }
    if (excess > kLambdaSlack) ++lambda_violations;
    if (dd > bound * (1.0 + kRelativeSlack)) ++rate_violations;
    max_lambda_excess = std::max(max_lambda_excess, excess);
    min_rate_margin = std::min(min_rate_margin, bound - dd);
    prev_w_ = wn;
    prev_d_ = dd;
    ++steps_;
  }

  StepObserver observer() {
    return [this](Index t, const MetaParams& p, bool) { observe(t, p); };
  }

  Index steps() const { return steps_; }

  Index w_violations = 0;
  Index d_violations = 0;
  Index lambda_violations = 0;
  Index rate_violations = 0;
  double max_lambda_excess = -std::numeric_limits<double>::infinity();
  double min_rate_margin = std::numeric_limits<double>::infinity();

 private:
  const GroundTruth& gt_;
  Index m_in_;
  Matrix lambda_;
  double prev_w_ = 0.0;
  double prev_d_ = 0.0;
  double d0_ = 0.0;
  Index steps_ = 0;
};

/// Fans one step out to several observers.
inline StepObserver combine(std::vector<StepObserver> observers) {
  return [obs = std::move(observers)](Index t, const MetaParams& p, bool tick) {
    for (const auto& o : obs)
      if (o) o(t, p, tick);
  };
}

}  // namespace anil
