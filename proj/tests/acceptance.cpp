// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.
//
//   acceptance [--only 1,5,...] [--with-diagnostics] [--out DIR]
//
// --with-diagnostics adds an informational reference-table run with trace-normalised
// task covariance (never affects the exit code).

#include "anil/harness.hpp"

#include <chrono>
#include <cstdio>

using namespace anil;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kTableMeanTol = 0.08;
constexpr double kTableStdFactor = 3.0;
constexpr double kTableRounding = 0.005;
constexpr double kLambdaResidualAniso = 0.05;
constexpr double kLambdaResidualIso = 0.02;
constexpr double kInfSamplesMaxChange = 0.01;
constexpr double kUnlearnMinDrop = 0.80;
constexpr double kGradFdTol = 1e-6;
constexpr double kFdStep = 1e-5;
constexpr Index kWwtopTrials = 1000000;
constexpr double kWwtopZ = 3.0;
constexpr Index kChainTrials = 200000;
constexpr double kKernelTol = 1e-10;
constexpr double kReductionTol = 1e-8;
constexpr Index kReductionSteps = 1000;

struct Line {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Line> g_lines;
double g_iso_residual = INFINITY;
double g_iso_theorem_residual = INFINITY;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] %2d %-28s %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  g_lines.push_back({id, name, pass, detail});
}

void info(const std::string& msg) {
  std::printf("[INFO]    %s\n", msg.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

ExperimentConfig default_config() {
  ExperimentConfig c;  // defaults are the reference experiment
  c.n_runs = 10;
  c.seed = 0;
  return c;
}

struct Reference {
  std::string method, adaptation;
  Index m_test;
  double mean, std;
};

// Excess-risk table of the reference experiment.
const std::vector<Reference> kReferenceTable = {
    {"single_task_ridge", "Ridge", 20, 1.84, 0.03}, {"single_task_ridge", "Ridge", 30, 1.63, 0.02},
    {"oracle_ridge", "Ridge", 20, 0.50, 0.01},      {"oracle_ridge", "Ridge", 30, 0.34, 0.01},
    {"burer_monteiro", "Ridge", 20, 1.23, 0.03},    {"burer_monteiro", "Ridge", 30, 1.03, 0.02},
    {"finite_anil", "1-GD", 20, 0.81, 0.01},        {"finite_anil", "Ridge", 20, 0.73, 0.03},
    {"finite_anil", "1-GD", 30, 0.64, 0.01},        {"finite_anil", "Ridge", 30, 0.57, 0.02},
    {"finite_maml", "1-GD", 20, 0.81, 0.01},        {"finite_maml", "Ridge", 20, 0.73, 0.04},
    {"finite_maml", "1-GD", 30, 0.63, 0.01},        {"finite_maml", "Ridge", 30, 0.58, 0.01},
    {"inf_tasks", "1-GD", 20, 0.77, 0.01},          {"inf_tasks", "Ridge", 20, 0.67, 0.03},
    {"inf_tasks", "1-GD", 30, 0.60, 0.01},          {"inf_tasks", "Ridge", 30, 0.52, 0.01},
    {"inf_samples", "1-GD", 20, 1.78, 0.02},        {"inf_samples", "Ridge", 20, 1.04, 0.02},
    {"inf_samples", "1-GD", 30, 1.19, 0.01},        {"inf_samples", "Ridge", 30, 0.84, 0.02},
};

const std::vector<std::string> kRegimes = {"finite_anil", "finite_maml", "inf_tasks", "inf_samples", "burer_monteiro"};

struct TableRun {
  RiskTable table;
  std::map<std::string, std::vector<std::vector<TraceRecord>>> traces;  // regime -> runs
};

TableRun run_table(const ExperimentConfig& base, const fs::path& out_dir) {
  TableRun tr;
  fs::create_directories(out_dir);
  for (Index r = 0; r < base.n_runs; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<LoadedParams> methods;
    GroundTruth gt;
    for (const auto& regime : kRegimes) {
      ExperimentConfig c = base;
      c.regime = regime;
      RunOutput out = train_run(c, r);
      gt = out.gt;
      LoadedParams lp;
      lp.method = regime;
      lp.run = r;
      lp.run_seed = run_rng(c, r).seed();
      lp.gt = out.gt;
      lp.params = out.params;
      methods.push_back(std::move(lp));
      tr.traces[regime].push_back(std::move(out.trace));
    }
    evaluate_run(base, gt, run_rng(base, r).seed(), methods, tr.table);
    info("table run " + std::to_string(r) + " finished in " +
         fmt("%.0f s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()));
  }
  write_text(out_dir / "table.csv", tr.table.to_csv());
  for (const auto& [regime, runs] : tr.traces) write_text(out_dir / ("aggregate_" + regime + ".csv"), aggregate_csv(runs));
  return tr;
}

// Compares a table against the reference; returns (all within, summary).
std::pair<bool, std::string> compare_table(const RiskTable& t, bool print_rows) {
  bool ok = true;
  int bad = 0;
  double worst = 0.0;
  for (const auto& ref : kReferenceTable) {
    const TableRow& row = t.get(ref.method, ref.adaptation, ref.m_test);
    const double dm = std::abs(row.mean() - ref.mean);
    const double lo = std::max(0.0, ref.std - kTableRounding) / kTableStdFactor;
    const double hi = kTableStdFactor * (ref.std + kTableRounding);
    const bool mean_ok = dm <= kTableMeanTol;
    const bool std_ok = row.std() >= lo && row.std() <= hi;
    if (!(mean_ok && std_ok)) ++bad;
    ok = ok && mean_ok && std_ok;
    worst = std::max(worst, dm);
    if (print_rows) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "  %-18s %-5s m=%2ld  mean %.3f (ref %.2f, %s)  std %.3f (ref %.2f, %s)",
                    ref.method.c_str(), ref.adaptation.c_str(), static_cast<long>(ref.m_test), row.mean(), ref.mean,
                    mean_ok ? "ok" : "off", row.std(), ref.std, std_ok ? "ok" : "off");
      info(buf);
    }
  }
  return {ok, std::to_string(kReferenceTable.size() - static_cast<std::size_t>(bad)) + "/" + std::to_string(kReferenceTable.size()) +
                  " cells within tolerance, worst |mean diff| " + fmt("%.3f", worst)};
}

double final_metric(const std::vector<std::vector<TraceRecord>>& runs, int metric, bool first) {
  std::vector<double> v;
  for (const auto& tr : runs) v.push_back(trace_metrics(first ? tr.front() : tr.back())[static_cast<std::size_t>(metric)]);
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

constexpr int kMeanD = 2;    // sv2_mean_D
constexpr int kLambda = 5;   // lambda_residual

// ---------------------------------------------------------------- criteria

void criteria_table(const fs::path& out, bool want1, bool want2, bool want5) {
  ExperimentConfig c = default_config();
  TableRun tr = run_table(c, out / "reference_table");
  if (want1) {
    auto [ok, summary] = compare_table(tr.table, true);
    report(1, "excess_risk_table", ok, summary);
  }
  if (want2) {
    double worst = 0.0;
    for (const auto& run : tr.traces["inf_tasks"]) worst = std::max(worst, trace_metrics(run.back())[kLambda]);
    report(2, "fixed_point_convergence", worst <= kLambdaResidualAniso && g_iso_residual <= kLambdaResidualIso,
           "lambda_residual at T=5000: anisotropic max over runs " + fmt("%.4f", worst) +
               fmt(" (<= %.2f), ", kLambdaResidualAniso) + "isotropic " + fmt("%.5f", g_iso_residual) +
               fmt(" (<= %.2f)", kLambdaResidualIso) + "; theorem-initialised isotropic run " +
               fmt("%.4f", g_iso_theorem_residual));
  }
  if (want5) {
    auto change = [&](const std::string& regime) {
      double a = final_metric(tr.traces[regime], kMeanD, true), b = final_metric(tr.traces[regime], kMeanD, false);
      return (b - a) / a;
    };
    const double s = change("inf_samples"), f = change("finite_anil"), t = change("inf_tasks");
    const bool ok = std::abs(s) < kInfSamplesMaxChange && -f >= kUnlearnMinDrop && -t >= kUnlearnMinDrop;
    report(5, "infinite_samples_contrast", ok,
           "relative change of mean sv^2(D): inf-samples " + fmt("%+.4f", s) + ", finite " + fmt("%+.3f", f) +
               ", inf-tasks " + fmt("%+.3f", t) + " (need |.|<0.01, <=-0.80, <=-0.80)");
  }
}

void diagnostic_table(const fs::path& out) {
  ExperimentConfig c = default_config();
  c.cov = CovSpec::diag_linear().with_trace(std::sqrt(5.0));
  c.n_runs = 3;
  info("diagnostic: reference table with tr(Sigma*) = sqrt(k) instead of ||Sigma*||_F = sqrt(k), 3 runs");
  TableRun tr = run_table(c, out / "reference_table_trace_normalised");
  auto [ok, summary] = compare_table(tr.table, true);
  info(std::string("diagnostic ") + (ok ? "(all within) " : "") + summary);
}

struct IsoRun {
  GroundTruth gt;
  ConditionReport conditions;
  MonotonicityMonitor monitor;
  std::vector<TraceRecord> trace;
  bool diverged = false;
};

IsoRun isotropic_theorem_run() {
  ExperimentConfig c = default_config();
  c.cov = CovSpec::isotropic(1.0);
  const RngSpec rng = run_rng(c, 0);
  GroundTruth gt = run_ground_truth(c, rng);
  MetaParams init = init_params(gt, c.k_prime, theorem_init(c.alpha, c.m_in, c.c1, c.c2), c.alpha, c.beta,
                                rng.child("init"));
  IsoRun r{gt, check_theorem3(gt, c.alpha, c.beta, c.m_in, c.c1, c.c2, &init), MonotonicityMonitor(gt, c.alpha, c.m_in),
           {}, false};
  TraceRecorder rec(gt, c.m_in);
  TrainOptions opt;
  opt.regime = Regime::inf_tasks;
  opt.steps = c.steps;
  opt.cadence = c.cadence;
  opt.m_in = c.m_in;
  try {
    train(init, gt, nullptr, opt, rng.child("train"), combine({r.monitor.observer(), rec.observer()}));
  } catch (const DivergenceError&) {
    r.diverged = true;
  }
  r.trace = rec.records();
  return r;
}

void criteria_isotropic(bool want2, bool want3, bool want4) {
  IsoRun r = isotropic_theorem_run();
  const std::string valid = r.conditions.all_pass() ? "theorem conditions hold" : "theorem conditions VIOLATED";
  if (want2) {
    // The reference run with only the covariance made isotropic; the
    // theorem-initialised run above starts far smaller and is reported too.
    ExperimentConfig c = default_config();
    c.cov = CovSpec::isotropic(1.0);
    c.regime = "inf_tasks";
    g_iso_residual = trace_metrics(train_run(c, 0).trace.back())[kLambda];
    g_iso_theorem_residual = r.diverged || r.trace.empty() ? INFINITY : trace_metrics(r.trace.back())[kLambda];
  }
  if (want3) {
    Index logged_violations = 0;
    for (const auto& rec : r.trace)
      if (rec.sv2_max_D > rec.rate_bound * (1.0 + MonotonicityMonitor::kRelativeSlack)) ++logged_violations;
    report(3, "unlearning_rate_bound",
           r.conditions.all_pass() && !r.diverged && r.monitor.rate_violations == 0 && logged_violations == 0,
           valid + "; violations " + std::to_string(logged_violations) + " of " + std::to_string(r.trace.size()) +
               " logged steps, " + std::to_string(r.monitor.rate_violations) + " of " +
               std::to_string(r.monitor.steps()) + " steps; min margin " + fmt("%.3g", r.monitor.min_rate_margin));
  }
  if (want4) {
    const auto& m = r.monitor;
    report(4, "monotonicity_suite",
           r.conditions.all_pass() && !r.diverged && m.w_violations == 0 && m.d_violations == 0 &&
               m.lambda_violations == 0,
           valid + "; violations |w| " + std::to_string(m.w_violations) + ", ||DD^T|| " +
               std::to_string(m.d_violations) + ", Lambda<=Lambda* " + std::to_string(m.lambda_violations) +
               " over " + std::to_string(m.steps()) + " steps; max Lambda excess " + fmt("%.3g", m.max_lambda_excess));
  }
}

double frozen_outer_loss(const Matrix& b, const Matrix& heads, const TaskBatch& batch) {
  double loss = 0.0;
  for (Index i = 0; i < batch.n_tasks; ++i)
    loss += 0.5 * (batch.task_x_out(i) * (b * heads.col(i)) - batch.task_y_out(i)).squaredNorm() /
            static_cast<double>(batch.m_out);
  return loss / static_cast<double>(batch.n_tasks);
}

void criterion_gradients() {
  double worst_anil = 0.0, worst_bm = 0.0;
  const double h = kFdStep;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngSpec rng = RngSpec(9000 + seed);
    GroundTruth gt = make_ground_truth(8, 2, CovSpec::diag_linear(), MeanSpec::sphere(), 0.5, rng.child("gt"));
    TaskBatch batch = sample_tasks(gt, 1 + static_cast<Index>(seed % 3), 5, 4, rng.child("tasks"));

    // FO-ANIL: B-gradient of the outer loss at frozen adapted heads; the
    // w-gradient moves every adapted head together.
    MetaParams p = init_params(gt, 4, InitSpec{0.8, 0.3}, 0.1, 0.05, rng.child("init"));
    OuterGradients g = first_order_gradients(p, batch, 0.0);
    for (Index i = 0; i < p.b.size(); ++i) {
      Matrix bp = p.b, bm = p.b;
      bp.data()[i] += h;
      bm.data()[i] -= h;
      double fd = (frozen_outer_loss(bp, g.heads, batch) - frozen_outer_loss(bm, g.heads, batch)) / (2 * h);
      worst_anil = std::max(worst_anil, std::abs(fd - g.grad_b.data()[i]));
    }
    for (Index j = 0; j < p.w.size(); ++j) {
      Matrix hp = g.heads, hm = g.heads;
      hp.row(j).array() += h;
      hm.row(j).array() -= h;
      double fd = (frozen_outer_loss(p.b, hp, batch) - frozen_outer_loss(p.b, hm, batch)) / (2 * h);
      worst_anil = std::max(worst_anil, std::abs(fd - g.grad_w(j)));
    }

    // Burer-Monteiro objective.
    Engine eng = rng.stream("bm_state");
    BmState s;
    s.b = 0.5 * gaussian_matrix(8, 3, eng);
    s.w_cols = 0.5 * gaussian_matrix(3, batch.n_tasks, eng);
    BmEvaluation ev = bm_objective_grad(s, batch);
    for (Index i = 0; i < s.b.size(); ++i) {
      BmState a = s, b = s;
      a.b.data()[i] += h;
      b.b.data()[i] -= h;
      double fd = (bm_objective_grad(a, batch).loss - bm_objective_grad(b, batch).loss) / (2 * h);
      worst_bm = std::max(worst_bm, std::abs(fd - ev.grad_b.data()[i]));
    }
    for (Index i = 0; i < s.w_cols.size(); ++i) {
      BmState a = s, b = s;
      a.w_cols.data()[i] += h;
      b.w_cols.data()[i] -= h;
      double fd = (bm_objective_grad(a, batch).loss - bm_objective_grad(b, batch).loss) / (2 * h);
      worst_bm = std::max(worst_bm, std::abs(fd - ev.grad_w.data()[i]));
    }
  }
  report(6, "gradient_oracles", worst_anil <= kGradFdTol && worst_bm <= kGradFdTol,
         "max |analytic - FD| over 20 instances (d=8): FO-ANIL " + fmt("%.2e", worst_anil) + ", BM " +
             fmt("%.2e", worst_bm));
}

void criterion_wwtop() {
  const std::vector<std::pair<Index, Index>> settings = {{1, 3}, {5, 4}, {20, 6}};
  bool ok = true;
  std::string detail;
  for (const auto& [n, dim] : settings) {
    Engine eng = RngSpec(7000 + static_cast<std::uint64_t>(n)).stream("direction");
    Vector v = uniform_sphere(dim, 1.0, eng);
    MatrixEstimate e = mc_wwtop(n, v, kWwtopTrials, RngSpec(7100 + static_cast<std::uint64_t>(n)));
    const double z = e.max_z(wwtop_expectation(n, v));
    ok = ok && z <= kWwtopZ;
    detail += "(n=" + std::to_string(n) + ",d=" + std::to_string(dim) + ") max|z| " + fmt("%.2f", z) + "  ";
  }
  report(7, "wwtop_monte_carlo", ok, detail + "at 1e6 trials");
}

void criterion_minimality() {
  bool chain_ok = true;
  double worst_slack = INFINITY;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngSpec rng(8000 + seed);
    GroundTruth gt = make_ground_truth(8, 2, CovSpec::diag_linear(), MeanSpec::zero(), 1.0, rng.child("gt"));
    const double alpha = 0.025;
    const Index m = 20;
    MetaParams arb = init_params(gt, 5, InitSpec{1.0 / (2.0 * alpha), 0.5}, alpha, alpha, rng.child("arbitrary"));
    LossComparison cmp = mc_anil_losses(minimality_chain(arb, gt, m), gt, m, kChainTrials, rng.child("mc"));
    for (const auto& d : cmp.consecutive_diffs) {
      chain_ok = chain_ok && d.mean >= -d.ci();
      worst_slack = std::min(worst_slack, d.mean + d.ci());
    }
  }
  ExperimentConfig c = default_config();
  c.cov = CovSpec::isotropic(1.0);
  GroundTruth gt = run_ground_truth(c, run_rng(c, 0));
  const double target = lambda_star(gt, c.alpha, c.m_in).lambda_star(0, 0);
  const int n_grid = 4000;
  const double step = (1.0 / c.alpha) / n_grid;
  double best = 0.0, best_val = INFINITY;
  for (int i = 0; i <= n_grid; ++i) {
    const double l = i * step;
    const double v = closed_form_anil_loss(l * Matrix::Identity(gt.k(), gt.k()), gt, c.alpha, c.m_in);
    if (v < best_val) {
      best_val = v;
      best = l;
    }
  }
  const bool argmin_ok = std::abs(best - target) <= step;
  report(8, "global_minimality", chain_ok && argmin_ok,
         std::string("chain ") + (chain_ok ? "holds" : "broken") + " on 5 seeds (min diff+CI " +
             fmt("%.3g", worst_slack) + "); grid argmin " + fmt("%.4f", best) + " vs lambda* " + fmt("%.4f", target) +
             " (grid step " + fmt("%.4f", step) + ")");
}

void criterion_reduction() {
  const double alpha = 0.1;
  GroundTruth gt = make_ground_truth(9, 2, CovSpec::diag_linear(), MeanSpec::sphere(), 0.5, RngSpec(6000));
  MetaParams p = init_params(gt, 5, InitSpec{1.0 / alpha, 0.4}, alpha, 0.05, RngSpec(6001));
  Eigen::JacobiSVD<Matrix> svd(gt.b_star.transpose() * p.b, Eigen::ComputeFullV);
  const Matrix r = svd.matrixV().leftCols(2).transpose();
  const Matrix r_perp = svd.matrixV().rightCols(3).transpose();
  const Matrix b_kernel = p.b * r_perp.transpose();
  const Vector w_kernel = r_perp * p.w;
  MetaParams red = p;
  red.b = p.b * r.transpose();
  red.w = r * p.w;
  double worst_kernel = 0.0, worst_reduced = 0.0;
  for (Index t = 0; t < kReductionSteps; ++t) {
    p = infinite_samples_step(p, gt);
    red = infinite_samples_step(red, gt);
    worst_kernel = std::max({worst_kernel, (p.b * r_perp.transpose() - b_kernel).cwiseAbs().maxCoeff(),
                             (r_perp * p.w - w_kernel).cwiseAbs().maxCoeff()});
    worst_reduced = std::max({worst_reduced, (p.b * r.transpose() - red.b).cwiseAbs().maxCoeff(),
                              (r * p.w - red.w).cwiseAbs().maxCoeff()});
  }
  report(9, "infinite_samples_reduction", worst_kernel <= kKernelTol && worst_reduced <= kReductionTol,
         "over 1000 steps: kernel drift " + fmt("%.2e", worst_kernel) + ", reduced trajectory gap " +
             fmt("%.2e", worst_reduced));
}

void criterion_risk_bound() {
  ExperimentConfig c = default_config();
  const RngSpec rng = run_rng(c, 0);
  GroundTruth gt = run_ground_truth(c, rng);
  MetaParams lim = limit_params(gt, c.alpha, c.beta, c.m_in, c.k_prime);
  const double level = 1.0 - 4.0 * std::exp(-static_cast<double>(gt.k()) / 2.0);
  bool ok = true;
  std::string detail = fmt("level %.4f:", level);
  for (Index m_test : {Index{20}, Index{30}}) {
    std::vector<double> ratio, err;
    for (Index i = 0; i < 10000; ++i) {
      TestTask t = sample_test_task(gt, m_test, rng.child("risk_bound", static_cast<std::uint64_t>(m_test)), i);
      Vector head = one_gd_adapt(lim.b, lim.w, t.x, t.y, c.alpha);
      const double e = (lim.b * head - gt.b_star * t.w_star).norm();
      err.push_back(e);
      ratio.push_back(e / excess_risk_bound(t.w_star.norm(), gt, c.m_in, m_test));
    }
    const double q = quantile(ratio, level);
    ok = ok && q <= 1.0;
    detail += " m_test=" + std::to_string(m_test) + " quantile(err/bound) " + fmt("%.3f", q) +
              fmt(" [err quantile %.3f]", quantile(err, level));
  }
  report(10, "risk_bound_coverage", ok, detail);
}

void criterion_determinism(const fs::path& out) {
  ExperimentConfig c = default_config();
  c.steps = 300;
  c.n_runs = 2;
  std::ostringstream sink;
  const fs::path a = out / "determinism_a", b = out / "determinism_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const int ra = cmd_train(c, a, sink), rb = cmd_train(c, b, sink);
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  const std::string sa = slurp(a / "aggregate.csv"), sb = slurp(b / "aggregate.csv");
  report(11, "determinism", ra == 0 && rb == 0 && !sa.empty() && sa == sb,
         "two train invocations, " + std::to_string(sa.size()) + " bytes of aggregate CSV, " +
             (sa == sb ? "identical" : "different"));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  bool diagnostics = false;
  fs::path out = fs::temp_directory_path() / "anil_acceptance";
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    } else if (a == "--with-diagnostics") {
      diagnostics = true;
    } else if (a == "--out" && i + 1 < argc) {
      out = argv[++i];
    } else {
      std::fprintf(stderr, "usage: acceptance [--only 1,2,...] [--with-diagnostics] [--out DIR]\n");
      return 1;
    }
  }
  auto want = [&](int id) { return only.empty() || only.count(id) > 0; };
  fs::create_directories(out);
  const auto t0 = std::chrono::steady_clock::now();

  try {
    if (want(6)) criterion_gradients();
    if (want(9)) criterion_reduction();
    if (want(7)) criterion_wwtop();
    if (want(8)) criterion_minimality();
    if (want(10)) criterion_risk_bound();
    if (want(11)) criterion_determinism(out);
    if (want(2) || want(3) || want(4)) criteria_isotropic(want(2), want(3), want(4));
    if (want(1) || want(2) || want(5)) criteria_table(out, want(1), want(2), want(5));
    if (diagnostics) diagnostic_table(out);
  } catch (const std::exception& e) {
    std::printf("[FAIL] aborted: %s\n", e.what());
    return 1;
  }

  int failed = 0;
  for (const auto& l : g_lines) failed += l.pass ? 0 : 1;
  std::printf("\n%zu checks, %d failed, %.0f s\n", g_lines.size(), failed,
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return failed == 0 ? 0 : 1;
}
