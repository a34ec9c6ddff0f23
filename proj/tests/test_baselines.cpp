#include "anil/baselines.hpp"

#include <catch_amalgamated.hpp>

#include <sstream>

using namespace anil;
using Catch::Approx;

namespace {

struct Problem {
  GroundTruth gt;
  TaskBatch batch;
};

Problem problem(std::uint64_t seed, Index d = 6, Index k = 2, Index n = 4, double noise = 0.5) {
  RngSpec rng(seed);
  Problem p;
  p.gt = make_ground_truth(d, k, CovSpec::diag_linear(), MeanSpec::zero(), noise, rng.child("gt"));
  p.batch = sample_tasks(p.gt, n, 3, 2, rng.child("tasks"));
  return p;
}

BmState random_state(Index d, Index kp, Index n, std::uint64_t seed) {
  Engine eng = RngSpec(seed).stream("state");
  BmState s;
  s.b = 0.5 * gaussian_matrix(d, kp, eng);
  s.w_cols = 0.5 * gaussian_matrix(kp, n, eng);
  return s;
}

}  // namespace

TEST_CASE("BM objective at the origin") {
  Problem p = problem(1);
  BmState s;
  s.b = Matrix::Zero(6, 3);
  s.w_cols = Matrix::Zero(3, 4);
  BmEvaluation ev = bm_objective_grad(s, p.batch);
  const double expect = 0.5 * (p.batch.y_in.squaredNorm() + p.batch.y_out.squaredNorm()) / (4.0 * 5.0);
  CHECK(ev.loss == Approx(expect).epsilon(1e-14));
  CHECK(ev.grad_b.isZero());
  CHECK(ev.grad_w.isZero());
}

TEST_CASE("BM gradients match central differences") {
  const double h = 1e-5;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Problem p = problem(10 + seed);
    BmState s = random_state(6, 3, 4, seed);
    BmEvaluation ev = bm_objective_grad(s, p.batch);
    double worst = 0.0;
    for (Index i = 0; i < s.b.size(); ++i) {
      BmState a = s, b = s;
      a.b.data()[i] += h;
      b.b.data()[i] -= h;
      double fd = (bm_objective_grad(a, p.batch).loss - bm_objective_grad(b, p.batch).loss) / (2 * h);
      worst = std::max(worst, std::abs(fd - ev.grad_b.data()[i]));
    }
    for (Index i = 0; i < s.w_cols.size(); ++i) {
      BmState a = s, b = s;
      a.w_cols.data()[i] += h;
      b.w_cols.data()[i] -= h;
      double fd = (bm_objective_grad(a, p.batch).loss - bm_objective_grad(b, p.batch).loss) / (2 * h);
      worst = std::max(worst, std::abs(fd - ev.grad_w.data()[i]));
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("BM exact fit has zero data term") {
  Problem p = problem(2, 6, 2, 5, 0.0);
  BmState s;
  s.b = p.gt.b_star;
  s.w_cols = p.batch.w_star;
  BmEvaluation ev = bm_objective_grad(s, p.batch);
  CHECK(ev.data_loss < 1e-28);
  CHECK(ev.reg_loss > 0.0);
}

TEST_CASE("minimiser solves the frozen-B least-squares subproblem") {
  Problem p = problem(3, 6, 2, 3, 0.5);
  BmState start = random_state(6, 3, 3, 4);
  start.reg_weight = 0.0;
  const Matrix b = start.b;
  Objective f = [&](const Vector& x, Vector& g) {
    BmState s = start;
    s.w_cols = x.reshaped(3, 3);
    BmEvaluation ev = bm_objective_grad(s, p.batch);
    g = ev.grad_w.reshaped();
    return ev.loss;
  };
  MinimizerConfig cfg;
  cfg.grad_tol = 1e-12;
  cfg.ftol = 0.0;
  cfg.max_iters = 2000;
  MinimizeResult r = lbfgs(f, Vector(start.w_cols.reshaped()), cfg);
  Matrix w = r.x.reshaped(3, 3);
  for (Index i = 0; i < 3; ++i) {
    RowMatrix x(5, 6);
    x << p.batch.task_x_in(i), p.batch.task_x_out(i);
    Vector y(5);
    y << p.batch.task_y_in(i), p.batch.task_y_out(i);
    Matrix f2 = x * b;
    Vector exact = (f2.transpose() * f2).ldlt().solve(f2.transpose() * y);
    CHECK((w.col(i) - exact).cwiseAbs().maxCoeff() < 1e-6);
  }

  MinimizerConfig gd = cfg;
  gd.method = MinimizerConfig::Method::gd;
  gd.grad_tol = 1e-9;
  gd.max_iters = 200000;
  MinimizeResult rg = minimize(f, Vector(start.w_cols.reshaped()), gd);
  // Plain GD stalls once f stops changing in double precision; on this
  // ill-conditioned problem that leaves x accurate to about 1e-5.
  INFO(rg.reason << " after " << rg.iterations);
  CHECK(rg.f - r.f <= 1e-12 * std::abs(r.f));
  CHECK((rg.x - r.x).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("L-BFGS on the Rosenbrock function") {
  Objective rosen = [](const Vector& x, Vector& g) {
    g.resize(2);
    g(0) = -400.0 * x(0) * (x(1) - x(0) * x(0)) - 2.0 * (1.0 - x(0));
    g(1) = 200.0 * (x(1) - x(0) * x(0));
    return 100.0 * std::pow(x(1) - x(0) * x(0), 2) + std::pow(1.0 - x(0), 2);
  };
  MinimizerConfig cfg;
  cfg.grad_tol = 1e-10;
  cfg.ftol = 0.0;
  MinimizeResult r = lbfgs(rosen, Vector::Constant(2, -1.2), cfg);
  CHECK(r.converged);
  CHECK((r.x - Vector::Ones(2)).norm() < 1e-6);
}

TEST_CASE("bm_fit decreases the loss monotonically and logs each iteration") {
  Problem p = problem(5, 8, 2, 30, 0.5);
  MinimizerConfig cfg;
  cfg.max_iters = 200;
  std::ostringstream log;
  BmFitResult r = bm_fit(p.batch, 4, BmInit::standard(0.025, 4), cfg, RngSpec(6), 0.125, &log);
  std::istringstream is(log.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "iter,loss,grad_norm,step_len");
  double prev = std::numeric_limits<double>::infinity();
  int rows = 0;
  while (std::getline(is, line)) {
    double loss = std::stod(line.substr(line.find(',') + 1));
    CHECK(loss <= prev);
    prev = loss;
    ++rows;
  }
  CHECK(rows == r.info.iterations + 1);
  CHECK(r.info.f == Approx(bm_objective_grad(r.state, p.batch).loss));
}

TEST_CASE("BM initialisation geometry") {
  BmState s = bm_init(10, 4, 7, BmInit::standard(0.025, 4), RngSpec(7));
  CHECK((s.b.transpose() * s.b - 0.01 * Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-14);
  for (Index i = 0; i < 7; ++i) CHECK(s.w_cols.col(i).squaredNorm() == Approx(0.01 * 4 * 0.025));
}

TEST_CASE("ridge regression") {
  Engine eng = RngSpec(8).stream("ridge");
  Matrix f = gaussian_matrix(12, 4, eng);
  Vector y = gaussian_vector(12, eng);

  CHECK(ridge_regression(f, y, 1e12).norm() < 1e-10);

  Matrix sq = gaussian_matrix(4, 4, eng);
  Vector ys = gaussian_vector(4, eng);
  CHECK((ridge_regression(sq, ys, 0.0) - sq.inverse() * ys).cwiseAbs().maxCoeff() < 1e-10);

  Matrix deficient = f;
  deficient.col(3) = deficient.col(0);
  CHECK_THROWS_AS(ridge_regression(deficient, y, 0.0), RankError);
  CHECK_NOTHROW(ridge_regression(deficient, y, 0.1));

  // Stationarity of (1/(2m)) ||y - F w||^2 + lambda ||w||^2.
  const double lambda = 0.3;
  Vector w = ridge_regression(f, y, lambda);
  Vector grad = -f.transpose() * (y - f * w) / 12.0 + 2.0 * lambda * w;
  CHECK(grad.norm() <= 1e-10 * (f.transpose() * y).norm() / 12.0);

  // Gradient descent to convergence on the same objective.
  Vector wg = Vector::Zero(4);
  const double step = 1.0 / (lambda_max(f.transpose() * f) / 12.0 + 2.0 * lambda);
  for (int it = 0; it < 20000; ++it) wg -= step * (-f.transpose() * (y - f * wg) / 12.0 + 2.0 * lambda * wg);
  CHECK((wg - w).cwiseAbs().maxCoeff() < 1e-8);

  RidgePath path(f, y);
  for (double l : {1e-4, 0.3, 50.0}) CHECK((path.solve(l) - ridge_regression(f, y, l)).cwiseAbs().maxCoeff() < 1e-10);
}
