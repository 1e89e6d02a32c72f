// Acceptance run: one PASS/FAIL line per criterion. Pass a comma-separated list
// of criterion numbers to run a subset.

#include "oracles.hpp"
#include "psvn/benchmarks.hpp"
#include "psvn/diagnostics.hpp"
#include "psvn/parallel.hpp"
#include "psvn/subspace.hpp"
#include "psvn/transport.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <thread>

using namespace psvn;
using transport::TransportConfig;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double rel_mass(const Vector& a, const Vector& b, const Matrix& m) {
  const Vector e = a - b;
  return std::sqrt(e.dot(m * e) / b.dot(m * b));
}

// Fixed iteration count: the stopping tolerances never trigger.
TransportConfig fixed_iterations(transport::Method method, Index n, Index iterations) {
  TransportConfig cfg;
  cfg.method = method;
  cfg.particles = n;
  cfg.max_iterations = iterations;
  cfg.tol_update = 1e-300;
  cfg.tol_gradient = 1e-300;
  return cfg;
}

diag::MomentErrors linear_errors(const bench::LinearPdeProblem& p, const TransportConfig& cfg,
                                 int trials) {
  const auto post = bench::analytic_posterior(p);
  std::vector<Matrix> ensembles;
  for (int t = 0; t < trials; ++t) ensembles.push_back(transport::run(*p.model, cfg, 1000 + t).ensemble);
  return diag::moment_rmse(ensembles, post.mean, post.covariance.diagonal(), p.mass_matrix());
}

Outcome linear_oracle() {
  double worst_grad = 0.0, worst_cov = 0.0;
  for (int n : {4, 6, 8}) {
    const auto p = bench::assemble_linear_problem(n);
    const auto post = bench::analytic_posterior(p);
    worst_grad = std::max(worst_grad, p.model->grad_log_posterior(post.mean).norm());
    const Matrix& a = p.forward_matrix;
    const Matrix dense = (a.transpose() * p.model->noise().precision() * a +
                          p.model->prior().covariance().inverse())
                             .inverse();
    worst_cov = std::max(worst_cov, oracle::rel_err(post.covariance, dense));
  }
  return {worst_grad < 1e-8 && worst_cov < 1e-10,
          "max |grad(MAP)| " + fmt("%.2e", worst_grad) + ", max cov rel err " + fmt("%.2e", worst_cov)};
}

Outcome subspace_rank() {
  std::string ranks;
  std::set<Index> seen;
  bool in_range = true;
  for (int n : {4, 6, 8, 10}) {
    const auto p = bench::assemble_linear_problem(n);
    const auto basis = subspace::build_basis(*p.model, sample_prior(p.model->prior(), 4, 0), {});
    seen.insert(basis.rank());
    in_range &= basis.rank() >= 4 && basis.rank() <= 8;
    ranks += " d=" + std::to_string(p.d) + ":" + std::to_string(basis.rank());
  }
  return {in_range && seen.size() == 1, "ranks" + ranks};
}

Outcome dimension_independence() {
  double v[2][2];
  int i = 0;
  for (int n : {4, 10}) {
    const auto p = bench::assemble_linear_problem(n);
    int j = 0;
    for (auto m : {transport::Method::psvn, transport::Method::svn}) {
      v[j++][i] = linear_errors(p, fixed_iterations(m, 128, 10), 10).variance_rmse;
    }
    ++i;
  }
  const double rp = v[0][1] / v[0][0];
  const double rs = v[1][1] / v[1][0];
  return {rp <= 2.0 && rs > rp,
          "pSVN var rmse " + fmt("%.3e", v[0][0]) + " -> " + fmt("%.3e", v[0][1]) + " (ratio " +
              fmt("%.2f", rp) + "), SVN " + fmt("%.3e", v[1][0]) + " -> " + fmt("%.3e", v[1][1]) +
              " (ratio " + fmt("%.2f", rs) + ")"};
}

Outcome convergence_ordering() {
  const auto p = bench::assemble_linear_problem(8);
  double v[3];
  int i = 0;
  for (auto m : {transport::Method::psvn, transport::Method::svn, transport::Method::svgd}) {
    v[i++] = linear_errors(p, fixed_iterations(m, 512, 10), 3).variance_rmse;
  }
  return {v[0] < v[1] && v[1] < v[2], "var rmse pSVN " + fmt("%.3e", v[0]) + ", SVN " +
                                          fmt("%.3e", v[1]) + ", SVGD " + fmt("%.3e", v[2])};
}

Outcome newton_exactness() {
  const auto p = bench::assemble_linear_problem(6);
  auto cfg = fixed_iterations(transport::Method::psvn, 1, 1);
  cfg.line_search.enabled = false;
  const auto r = transport::run(*p.model, cfg, 5);
  const double g = subspace::projected_gradient(
                       *p.model, r.basis, subspace::project(r.basis, Vector(r.ensemble.col(0))).w)
                       .norm();
  return {g < 1e-8 && r.records.size() == 1, "projected gradient " + fmt("%.2e", g)};
}

// Damped Gauss-Newton iteration to the posterior mode.
Vector find_mode(const PosteriorModel& model) {
  Vector x = model.prior().mean();
  for (int it = 0; it < 50; ++it) {
    const Vector g = model.grad_log_posterior(x);
    if (g.norm() < 1e-10) break;
    const Vector step = model.hessian_matrix(x).ldlt().solve(g);
    double t = 1.0;
    const double f0 = model.log_unnormalized_posterior(x);
    while (t > 1e-6 && model.log_unnormalized_posterior(x + t * step) < f0) t *= 0.5;
    x += t * step;
  }
  return x;
}

Outcome derivatives() {
  const auto lin = bench::assemble_linear_problem(6);
  const auto nl = bench::assemble_lognormal_problem(65, 15, 0.01);
  double worst_grad = 0.0, worst_gn = 0.0;
  for (const PosteriorModel* m : {lin.model.get(), nl.model.get()}) {
    const Matrix x = sample_prior(m->prior(), 20, 77);
    auto f = [&](const Vector& z) { return m->log_unnormalized_posterior(z); };
    for (Index t = 0; t < 20; ++t) {
      worst_grad = std::max(worst_grad, oracle::rel_err(m->grad_log_posterior(x.col(t)),
                                                        oracle::fd_gradient(f, x.col(t), 1e-6)));
    }
    const Vector mode = find_mode(*m);
    const Matrix pert = sample_prior(m->prior(), 20, 91);
    auto grad = [&](const Vector& z) { return m->grad_log_posterior(z); };
    for (Index t = 0; t < 20; ++t) {
      const Vector z = mode + 0.05 * (pert.col(t) - m->prior().mean());
      const Vector v = oracle::random_vector(m->dim(), 600 + t);
      const Vector fd = -oracle::fd_directional(grad, z, v, 1e-5);
      worst_gn = std::max(worst_gn, oracle::rel_err(m->gauss_newton_hessian_action(z, v), fd));
    }
  }
  return {worst_grad < 1e-4 && worst_gn < 1e-3,
          "max gradient FD err " + fmt("%.2e", worst_grad) + ", max GN action err " + fmt("%.2e", worst_gn)};
}

Outcome eigensolver() {
  double worst = 0.0;
  auto check = [&](const PosteriorModel& m, const Matrix& h) {
    la::RandomizedEigOptions opt;
    opt.target_rank = 10;
    opt.oversample = std::min<Index>(10, h.rows() - 10);
    opt.seed = 3;
    const auto pairs = la::randomized_generalized_eig(la::SymmetricOperator::from_matrix(h),
                                                      m.prior().factor(), opt);
    const auto dense = oracle::dense_generalized_eig(h, m.prior().precision());
    for (Index i = 0; i < 10; ++i) {
      worst = std::max(worst, std::abs(pairs.values[i] - dense.values[i]) / std::abs(dense.values[i]));
    }
  };
  for (int n : {4, 6, 8}) {
    const auto p = bench::assemble_linear_problem(n);
    check(*p.model, p.forward_matrix.transpose() * p.model->noise().precision() * p.forward_matrix);
  }
  for (Index d : {65, 257}) {
    const auto p = bench::assemble_lognormal_problem(d, 15, 0.01);
    const Matrix x = sample_prior(p.model->prior(), 4, 1);
    check(*p.model, subspace::averaged_misfit_hessian(*p.model, x).apply(Matrix::Identity(d, d)));
  }
  return {worst < 1e-6, "max top-10 eigenvalue rel err " + fmt("%.2e", worst)};
}

Outcome projection_kl() {
  const auto p = bench::assemble_linear_problem(6);
  subspace::BasisOptions wide;
  wide.eps_lambda = 1e-8;
  wide.max_rank = 15;
  const auto basis = subspace::build_basis(*p.model, sample_prior(p.model->prior(), 1, 0), wide);
  const auto kl = diag::projection_kl_curve(*p.model, basis);
  bool monotone = true;
  for (std::size_t i = 0; i + 1 < kl.size(); ++i) monotone &= kl[i + 1] <= kl[i] * (1.0 + 1e-9) + 1e-14;
  Index r = 0;
  while (r < basis.rank() && std::abs(basis.eigenvalues[r]) >= 0.01) ++r;
  const double at_r = kl[static_cast<std::size_t>(r - 1)];
  return {monotone && at_r < 1e-3, std::string(monotone ? "monotone" : "not monotone") +
                                       ", KL at r=" + std::to_string(r) + " is " + fmt("%.3e", at_r)};
}

Outcome nonlinear_oracle() {
  const auto p = bench::assemble_lognormal_problem(129, 15, 0.01);
  const auto ref = bench::pcn_reference(*p.model, 4, 2000000, 0.2, 11);
  std::string detail = "pCN R-hat " + fmt("%.4f", ref.max_rhat) + ", acceptance " +
                       fmt("%.3f", ref.acceptance_rate);
  if (!(ref.max_rhat < 1.05)) return {false, detail + " (chains not self-consistent)"};
  TransportConfig cfg;
  cfg.particles = 512;
  cfg.max_iterations = 50;
  const auto r = transport::run(*p.model, cfg, 1);
  const double em = rel_mass(diag::sample_mean(r.ensemble), ref.mean, p.mass_matrix());
  const double ev = rel_mass(diag::pointwise_variance(r.ensemble), ref.variance, p.mass_matrix());
  return {em < 0.05 && ev < 0.15, detail + "; pSVN mean err " + fmt("%.4f", em) + ", variance err " +
                                      fmt("%.4f", ev) + " after " + std::to_string(r.records.size()) +
                                      " iterations"};
}

Outcome parallel_equivalence() {
  const auto p = bench::assemble_lognormal_problem(129, 15, 0.01);
  auto cfg = fixed_iterations(transport::Method::psvn, 256, 5);
  double worst = 0.0;
  std::vector<double> per_iter;
  Matrix ref;
  for (int k : {1, 2, 4}) {
    const auto r = par::parallel_psvn(*p.model, cfg, par::Partition::make(256, k), 7);
    if (k == 1) ref = r.run.ensemble;
    worst = std::max(worst, (r.run.ensemble - ref).cwiseAbs().maxCoeff());
    per_iter.push_back(r.wall_seconds / static_cast<double>(r.run.records.size()));
  }
  const bool monotone = per_iter[1] <= per_iter[0] && per_iter[2] <= per_iter[1];
  return {worst < 1e-8 && monotone, "max ensemble difference " + fmt("%.1e", worst) +
                                        ", s/iteration K=1,2,4: " + fmt("%.3f", per_iter[0]) + ", " +
                                        fmt("%.3f", per_iter[1]) + ", " + fmt("%.3f", per_iter[2]) +
                                        " on " + std::to_string(std::thread::hardware_concurrency()) +
                                        " hardware threads"};
}

Outcome n_independence() {
  const auto p = bench::assemble_lognormal_problem(129, 15, 0.01);
  std::vector<std::vector<double>> curves;
  for (Index n : {32, 128, 512}) {
    const auto r = transport::run(*p.model, fixed_iterations(transport::Method::psvn, n, 10), 3);
    std::vector<double> c;
    for (const auto& rec : r.records) c.push_back(rec.max_update);
    curves.push_back(c);
  }
  double worst = 1.0;
  for (std::size_t it = 0; it < curves[0].size(); ++it) {
    double lo = curves[0][it], hi = lo;
    for (const auto& c : curves) {
      lo = std::min(lo, c[it]);
      hi = std::max(hi, c[it]);
    }
    worst = std::max(worst, lo > 0.0 ? hi / lo : INFINITY);
  }
  std::ostringstream s;
  s << "max spread factor " << worst << "; final max update N=32,128,512:";
  for (const auto& c : curves) s << " " << c.back();
  return {worst <= 2.0, s.str()};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "linear oracle exactness", 10, linear_oracle},
      {2, "subspace dimension", 60, subspace_rank},
      {3, "dimension-independent accuracy", 600, dimension_independence},
      {4, "convergence ordering", 600, convergence_ordering},
      {5, "Newton exactness", 1, newton_exactness},
      {6, "derivative correctness", 60, derivatives},
      {7, "eigensolver oracle", 60, eigensolver},
      {8, "projection KL", 60, projection_kl},
      {9, "nonlinear oracle agreement", 1200, nonlinear_oracle},
      {10, "parallel equivalence", 600, parallel_equivalence},
      {11, "N-independent convergence", 600, n_independence},
  };
  std::set<int> only;
  if (argc > 1) {
    std::stringstream list(argv[1]);
    std::string item;
    while (std::getline(list, item, ',')) only.insert(std::stoi(item));
  }
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = t < c.budget_seconds;
    const bool pass = o.pass && in_budget;
    failed += !pass;
    std::printf("%s criterion %d (%s): %s; %.1f s%s\n", pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), t, in_budget ? "" : " (over budget)");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
