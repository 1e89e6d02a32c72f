#include "psvn/transport.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>

namespace psvn::transport {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

// ---------------------------------------------------------------- config

std::string to_string(Method m) {
  switch (m) {
    case Method::svgd: return "svgd";
    case Method::svn: return "svn";
    case Method::psvn: return "psvn";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "svgd") return Method::svgd;
  if (s == "svn") return Method::svn;
  if (s == "psvn") return Method::psvn;
  throw ConfigInvalid("unknown method \"" + s + "\" (svgd, svn, psvn)");
}

std::string to_string(Lumping l) { return l == Lumping::row_sum ? "row_sum" : "diagonal"; }

Lumping lumping_from_string(const std::string& s) {
  if (s == "row_sum") return Lumping::row_sum;
  if (s == "diagonal") return Lumping::diagonal;
  throw ConfigInvalid("unknown lumping \"" + s + "\" (row_sum, diagonal)");
}

void TransportConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigInvalid("transport config: " + what); };
  if (max_iterations < 1) fail("max_iterations must be >= 1");
  if (!(tol_update > 0.0) || !(tol_gradient > 0.0)) fail("tolerances must be > 0");
  if (!(line_search.backtrack > 0.0 && line_search.backtrack < 1.0)) fail("backtrack must be in (0, 1)");
  if (!(line_search.initial_step > 0.0)) fail("initial_step must be > 0");
  if (!(line_search.sufficient_decrease > 0.0 && line_search.sufficient_decrease < 1.0)) {
    fail("sufficient_decrease must be in (0, 1)");
  }
  if (line_search.max_backtracks < 0) fail("max_backtracks must be >= 0");
  if (metric_refresh < 1) fail("metric_refresh must be >= 1");
  if (!(damping > 0.0)) fail("damping must be > 0");
  if (!(basis.eps_lambda > 0.0)) fail("eps_lambda must be > 0");
  if (basis.max_rank < 1) fail("max_rank must be >= 1");
  if (basis.oversample < 0 || basis.power_iters < 0) fail("oversample and power_iters must be >= 0");
  if (outer_iterations < 1) fail("outer_iterations must be >= 1");
  if (!(stagnation_angle >= 0.0)) fail("stagnation_angle must be >= 0");
  if (particles < 1) fail("particles must be >= 1");
}

void write_iterations_csv(std::ostream& out, const std::vector<IterationRecord>& records) {
  out << "iter,max_update,max_grad,step,t_variation,t_kernel,t_solve,t_sample\n";
  out.precision(10);
  Index iter = 0;
  for (const IterationRecord& r : records) {
    out << ++iter << ',' << r.max_update << ',' << r.max_grad << ',' << r.step << ','
        << r.times.variation << ',' << r.times.kernel << ',' << r.times.solve << ','
        << r.times.sample << '\n';
  }
}

// ---------------------------------------------------------------- line search

LineSearchResult line_search(const std::function<Vector(const Vector& eps)>& objectives,
                             const Vector& f0, const Vector& slopes, const LineSearchConfig& config,
                             const std::vector<bool>& zero_direction) {
  const Index n = f0.size();
  require_dim(slopes.size() == n, "line_search: slopes size");
  LineSearchResult out;
  out.steps = Vector::Zero(n);
  out.objectives = f0;
  out.stalled.assign(static_cast<std::size_t>(n), false);
  auto is_zero = [&](Index i) {
    return !zero_direction.empty() && zero_direction[static_cast<std::size_t>(i)];
  };

  if (!config.enabled) {
    out.steps.setConstant(config.initial_step);
    out.objectives = objectives(out.steps);
    return out;
  }

  const double c = config.sufficient_decrease;
  if (config.per_sample) {
    std::vector<bool> done(static_cast<std::size_t>(n), false);
    Vector fallback = Vector::Zero(n);  // smallest trial step with any decrease
    Vector fallback_f = f0;
    Vector eps = Vector::Constant(n, config.initial_step);
    for (Index i = 0; i < n; ++i) {
      if (is_zero(i)) {
        done[static_cast<std::size_t>(i)] = true;
        out.steps[i] = config.initial_step;
      }
    }
    for (int trial = 0; trial <= config.max_backtracks; ++trial) {
      bool any = false;
      for (Index i = 0; i < n; ++i) any |= !done[static_cast<std::size_t>(i)];
      if (!any) break;
      // Finished particles are evaluated at step 0 so the callback can skip them.
      Vector trial_eps = eps;
      for (Index i = 0; i < n; ++i) {
        if (done[static_cast<std::size_t>(i)]) trial_eps[i] = 0.0;
      }
      const Vector f = objectives(trial_eps);
      for (Index i = 0; i < n; ++i) {
        if (done[static_cast<std::size_t>(i)]) continue;
        const double fi = std::isfinite(f[i]) ? f[i] : kInf;
        if (fi < f0[i]) {
          fallback[i] = eps[i];
          fallback_f[i] = fi;
          if (fi <= f0[i] + c * eps[i] * std::min(slopes[i], 0.0)) {
            out.steps[i] = eps[i];
            out.objectives[i] = fi;
            done[static_cast<std::size_t>(i)] = true;
            continue;
          }
        }
        eps[i] *= config.backtrack;
      }
    }
    for (Index i = 0; i < n; ++i) {
      if (done[static_cast<std::size_t>(i)]) continue;
      if (fallback[i] > 0.0) {
        out.steps[i] = fallback[i];
        out.objectives[i] = fallback_f[i];
      } else {
        out.stalled[static_cast<std::size_t>(i)] = true;
      }
    }
    return out;
  }

  // Common step for the ensemble mean.
  bool all_zero = true;
  for (Index i = 0; i < n; ++i) all_zero &= is_zero(i);
  if (all_zero) {
    out.steps.setConstant(config.initial_step);
    return out;
  }
  const double mean0 = f0.mean();
  const double slope = slopes.mean();
  double eps = config.initial_step;
  double fallback = 0.0;
  Vector fallback_f = f0;
  for (int trial = 0; trial <= config.max_backtracks; ++trial) {
    const Vector f = objectives(Vector::Constant(n, eps));
    const double mean = f.allFinite() ? f.mean() : kInf;
    if (mean < mean0) {
      fallback = eps;
      fallback_f = f;
      if (mean <= mean0 + c * eps * std::min(slope, 0.0)) {
        out.steps.setConstant(eps);
        out.objectives = f;
        return out;
      }
    }
    eps *= config.backtrack;
  }
  if (fallback > 0.0) {
    out.steps.setConstant(fallback);
    out.objectives = fallback_f;
  } else {
    out.stalled.assign(static_cast<std::size_t>(n), true);
  }
  return out;
}

namespace {

// Runs the line search over a worker's particles. In global mode the
// objectives are gathered so that every worker sees the same ensemble mean.
LineSearchResult distributed_line_search(const std::function<Vector(const Vector&)>& local_objectives,
                                         const Vector& f0, const Vector& slopes,
                                         const std::vector<bool>& zero, const LineSearchConfig& cfg,
                                         par::Collectives& comm) {
  if (cfg.per_sample || !cfg.enabled || comm.size() == 1) {
    return line_search(local_objectives, f0, slopes, cfg, zero);
  }
  const Index m = f0.size();
  const Vector f0_all = comm.allgather(f0);
  const Vector slopes_all = comm.allgather(slopes);
  Vector zero_flags(m);
  for (Index i = 0; i < m; ++i) zero_flags[i] = zero[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  const Vector zero_all_v = comm.allgather(zero_flags);
  std::vector<bool> zero_all(static_cast<std::size_t>(zero_all_v.size()));
  for (Index i = 0; i < zero_all_v.size(); ++i) zero_all[static_cast<std::size_t>(i)] = zero_all_v[i] != 0.0;
  const Index offset = m * comm.rank();
  auto global = [&](const Vector& eps_all) -> Vector {
    return comm.allgather(Vector(local_objectives(eps_all.segment(offset, m))));
  };
  LineSearchResult all = line_search(global, f0_all, slopes_all, cfg, zero_all);
  LineSearchResult out;
  out.steps = all.steps.segment(offset, m);
  out.objectives = all.objectives.segment(offset, m);
  out.stalled.assign(all.stalled.begin() + offset, all.stalled.begin() + offset + m);
  return out;
}

// Solves h c = rhs by LU; on a numerically singular h retries once with
// Levenberg damping mu I, mu = damping * trace(h) / dim.
Vector solve_lumped(const Matrix& h, const Vector& rhs, double damping) {
  constexpr double kMinRcond = 1e-13;
  {
    Eigen::PartialPivLU<Matrix> lu(h);
    const double rc = lu.rcond();
    if (std::isfinite(rc) && rc > kMinRcond) {
      Vector c = lu.solve(rhs);
      if (c.allFinite()) return c;
    }
  }
  const double mu = damping * std::abs(h.trace()) / static_cast<double>(h.rows());
  Matrix hd = h;
  hd.diagonal().array() += (mu > 0.0 ? mu : damping);
  Eigen::PartialPivLU<Matrix> lu(hd);
  const double rc = lu.rcond();
  if (std::isfinite(rc) && rc > kMinRcond) {
    Vector c = lu.solve(rhs);
    if (c.allFinite()) return c;
  }
  throw SolveFailure("lumped Newton system is singular even after damping");
}

std::vector<bool> zero_columns(const Matrix& dirs) {
  std::vector<bool> z(static_cast<std::size_t>(dirs.cols()));
  for (Index j = 0; j < dirs.cols(); ++j) z[static_cast<std::size_t>(j)] = dirs.col(j).squaredNorm() == 0.0;
  return z;
}

// -log p at x, +inf when the forward solve fails.
double safe_neg_log_posterior(const PosteriorModel& model, const Vector& x) {
  try {
    return -model.log_unnormalized_posterior(x);
  } catch (const ForwardSolveFailure&) {
    return kInf;
  }
}

// Moves a full-space ensemble along `dirs` with the line-searched steps.
void finish_full_space_step(const PosteriorModel& model, const Matrix& x, const Matrix& dirs,
                            const Vector& f0, const Vector& slopes, const TransportConfig& config,
                            StepResult& out) {
  const auto t0 = Clock::now();
  const Index n = x.cols();
  auto objectives = [&](const Vector& eps) {
    Vector f(n);
    for (Index j = 0; j < n; ++j) {
      f[j] = eps[j] == 0.0 ? f0[j] : safe_neg_log_posterior(model, x.col(j) + eps[j] * dirs.col(j));
    }
    return f;
  };
  const LineSearchResult ls = line_search(objectives, f0, slopes, config.line_search, zero_columns(dirs));
  out.ensemble = x;
  double max_update = 0.0;
  for (Index j = 0; j < n; ++j) {
    out.ensemble.col(j) += ls.steps[j] * dirs.col(j);
    max_update = std::max(max_update, ls.steps[j] * dirs.col(j).norm());
    if (ls.stalled[static_cast<std::size_t>(j)]) ++out.record.stalled;
  }
  out.steps = ls.steps;
  out.directions = dirs;
  out.record.max_update = max_update;
  out.record.step = ls.steps.mean();
  out.record.objective = ls.objectives.mean();
  out.record.times.sample += seconds_since(t0);
}

struct FullSpaceEval {
  Matrix neg_grad;  // G_j = -grad log p(x_j), d x N
  Vector f0;        // -log p(x_j)
};

FullSpaceEval evaluate_full(const PosteriorModel& model, const Matrix& x) {
  FullSpaceEval ev;
  ev.neg_grad.resize(x.rows(), x.cols());
  ev.f0.resize(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    ev.neg_grad.col(j) = -model.grad_log_posterior(x.col(j));
    ev.f0[j] = -model.log_unnormalized_posterior(x.col(j));
  }
  return ev;
}

}  // namespace

// ---------------------------------------------------------------- full space

kernel::KernelMetric full_space_metric(const PosteriorModel& model, const Matrix& ensemble) {
  const Index d = model.dim();
  kernel::KernelMetric km;
  km.divisor = static_cast<double>(d);
  if (model.hessian_is_constant()) {
    km.m = model.hessian_matrix(ensemble.col(0)) / static_cast<double>(d);
  } else {
    Matrix sum = Matrix::Zero(d, d);
    for (Index j = 0; j < ensemble.cols(); ++j) sum += model.hessian_matrix(ensemble.col(j));
    km.m = sum / (static_cast<double>(d) * static_cast<double>(ensemble.cols()));
  }
  km.m = 0.5 * (km.m + km.m.transpose()).eval();
  return km;
}

StepResult svgd_step(const PosteriorModel& model, const Matrix& x,
                     const kernel::KernelMetric& metric, const TransportConfig& config) {
  require_dim(x.rows() == model.dim() && x.cols() >= 1, "svgd_step: ensemble must be d x N");
  StepResult out;
  const Index n = x.cols();
  auto t0 = Clock::now();
  const FullSpaceEval ev = evaluate_full(model, x);
  out.record.times.variation = seconds_since(t0);

  t0 = Clock::now();
  const Matrix k = kernel::kernel_values_gram(metric, x);
  const Vector s = k.rowwise().sum();
  // sum_j grad_x k(x, x_j) at x_m = -M (x_m S_m - sum_j x_j k_mj).
  const Matrix y = x * s.asDiagonal() - x * k;
  const Matrix repulsion = -(metric.m * y);
  out.record.times.kernel = seconds_since(t0);

  t0 = Clock::now();
  const Matrix g = (ev.neg_grad * k + repulsion) / static_cast<double>(n);
  const Matrix dirs = -g;
  Vector slopes(n);
  for (Index j = 0; j < n; ++j) slopes[j] = -g.col(j).squaredNorm();
  double max_grad = 0.0;
  for (Index j = 0; j < n; ++j) max_grad = std::max(max_grad, g.col(j).norm());
  out.record.max_grad = max_grad;
  out.record.times.solve = seconds_since(t0);

  finish_full_space_step(model, x, dirs, ev.f0, slopes, config, out);
  return out;
}

namespace {

StepResult svn_step_impl(const PosteriorModel& model, const Matrix& x,
                         const kernel::KernelMetric& metric, const TransportConfig& config,
                         bool allow_structured) {
  require_dim(x.rows() == model.dim() && x.cols() >= 1, "svn_step: ensemble must be d x N");
  require_dim(metric.dim() == model.dim(), "svn_step: metric dimension");
  StepResult out;
  const Index n = x.cols();
  const Index d = x.rows();
  const double nd = static_cast<double>(n);
  const bool constant = model.hessian_is_constant();

  auto t0 = Clock::now();
  const FullSpaceEval ev = evaluate_full(model, x);
  std::vector<Matrix> hess;
  if (constant) {
    hess.push_back(model.hessian_matrix(x.col(0)));
  } else {
    hess.reserve(static_cast<std::size_t>(n));
    for (Index j = 0; j < n; ++j) hess.push_back(model.hessian_matrix(x.col(j)));
  }
  out.record.times.variation = seconds_since(t0);

  t0 = Clock::now();
  const Matrix k = kernel::kernel_values_gram(metric, x);
  const Vector s = k.rowwise().sum();
  const Matrix mx = metric.m * x;
  // B_j = sum_n grad k_n(x_j) = -M (x_j S_j - sum_n x_n k_jn).
  const Matrix b = -(metric.m * (x * s.asDiagonal() - x * k));
  out.record.times.kernel = seconds_since(t0);

  t0 = Clock::now();
  const Matrix g = (ev.neg_grad * k + b) / nd;
  const bool row_sum = config.lumping == Lumping::row_sum;
  // Per-particle scalar weight on the (constant) Hessian.
  Vector alpha(n);
  if (row_sum) {
    alpha = k * s / nd;
  } else {
    alpha = k.cwiseAbs2().rowwise().sum() / nd;
  }

  Matrix c(d, n);
  bool structured_done = false;
  if (constant && allow_structured && n < d) {
    const Matrix& h = hess.front();
    Eigen::LLT<Matrix> llt(h);
    if (llt.info() == Eigen::Success) {
      const Matrix hg = llt.solve(g);                  // H^{-1} g
      const Matrix e = mx.transpose() * hg;            // (MX)^T H^{-1} g
      structured_done = true;
      if (row_sum) {
        const Matrix p = llt.solve(b / nd);          // H^{-1} U
        const Matrix r = mx.transpose() * p;         // (MX)^T P
        for (Index m = 0; m < n && structured_done; ++m) {
          const double a = alpha[m];
          const Vector dk = k.col(m);
          // C = I + V^T A^{-1} U,  V^T A^{-1} U = -D (R - 1 R_m) / a.
          Matrix cap = -(dk.asDiagonal() * (r.rowwise() - r.row(m))) / a;
          cap.diagonal().array() += 1.0;
          const Vector vy = dk.cwiseProduct(e.col(m) - Vector::Constant(n, e(m, m))) / a;
          Eigen::PartialPivLU<Matrix> lu(cap);
          const double rc = lu.rcond();
          if (!(std::isfinite(rc) && rc > 1e-13)) {
            structured_done = false;
            break;
          }
          c.col(m) = -hg.col(m) / a - p * lu.solve(vy) / a;
        }
      } else {
        const Matrix z = llt.solve(mx);              // H^{-1} M X
        const Matrix r2 = mx.transpose() * z;        // X^T M H^{-1} M X
        for (Index m = 0; m < n && structured_done; ++m) {
          const double beta = alpha[m];
          const Vector dk = k.col(m);
          Matrix q = r2;
          q.colwise() -= r2.col(m);
          q.rowwise() -= r2.row(m);
          q.array() += r2(m, m);
          Matrix cap = dk.asDiagonal() * q * dk.asDiagonal() / (nd * beta);
          cap.diagonal().array() += 1.0;
          const Vector vy = dk.cwiseProduct(e.col(m) - Vector::Constant(n, e(m, m))) / beta;
          Eigen::PartialPivLU<Matrix> lu(cap);
          const double rc = lu.rcond();
          if (!(std::isfinite(rc) && rc > 1e-13)) {
            structured_done = false;
            break;
          }
          const Matrix zm = (z.colwise() - z.col(m)) * dk.asDiagonal();
          c.col(m) = -hg.col(m) / beta + zm * lu.solve(vy) / (nd * beta);
        }
      }
      if (structured_done && !c.allFinite()) structured_done = false;
    }
  }

  if (!structured_done) {
    for (Index m = 0; m < n; ++m) {
      const Vector dk = k.col(m);
      Matrix hm = Matrix::Zero(d, d);
      if (constant) {
        hm = alpha[m] * hess.front();
      } else {
        for (Index j = 0; j < n; ++j) {
          const double wgt = row_sum ? dk[j] * s[j] / nd : dk[j] * dk[j] / nd;
          hm += wgt * hess[static_cast<std::size_t>(j)];
        }
      }
      // v_mj = -M (x_j - x_m) k_jm, i.e. V_m = -(MX - Mx_m 1^T) D_m.
      const Matrix ym = (mx.colwise() - mx.col(m)) * dk.asDiagonal();
      if (row_sum) {
        hm.noalias() -= (b / nd) * ym.transpose();
      } else {
        hm.noalias() += ym * ym.transpose() / nd;
      }
      c.col(m) = solve_lumped(hm, -g.col(m), config.damping);
    }
  }

  Vector slopes(n);
  double max_grad = 0.0;
  for (Index m = 0; m < n; ++m) {
    slopes[m] = g.col(m).dot(c.col(m));
    max_grad = std::max(max_grad, g.col(m).norm());
  }
  const Matrix dirs = c * k;  // column m: sum_n c_n k(x_m, x_n)
  out.record.max_grad = max_grad;
  out.record.times.solve = seconds_since(t0);

  finish_full_space_step(model, x, dirs, ev.f0, slopes, config, out);
  return out;
}

}  // namespace

StepResult svn_step(const PosteriorModel& model, const Matrix& ensemble,
                    const kernel::KernelMetric& metric, const TransportConfig& config) {
  return svn_step_impl(model, ensemble, metric, config, true);
}

StepResult svn_step_dense(const PosteriorModel& model, const Matrix& ensemble,
                          const kernel::KernelMetric& metric, const TransportConfig& config) {
  return svn_step_impl(model, ensemble, metric, config, false);
}

// ---------------------------------------------------------------- pSVN

PsvnStep psvn_step(const PosteriorModel& model, const subspace::SubspaceBasis& basis,
                   const Matrix& w_all, const TransportConfig& config, par::Collectives& comm,
                   const par::Partition& partition, const kernel::KernelMetric* fixed_metric) {
  const Index r = basis.rank();
  const Index n = w_all.cols();
  require_dim(w_all.rows() == r, "psvn_step: coefficient dimension does not match basis");
  require_dim(partition.total == n && partition.workers == comm.size(),
              "psvn_step: partition does not match ensemble or team");
  const Index begin = partition.begin(comm.rank());
  const Index local = partition.count(comm.rank());
  const double nd = static_cast<double>(n);
  const std::size_t sent0 = comm.stats().doubles_sent;

  PsvnStep out;
  IterationRecord& rec = out.record;

  // Gradients and Hessians at the local particles.
  auto t0 = Clock::now();
  Matrix neg_grad(r, local);
  Matrix hess(r, r * local);
  Vector f0(local);
  for (Index i = 0; i < local; ++i) {
    const auto ev = subspace::evaluate_projected(model, basis, w_all.col(begin + i), true);
    neg_grad.col(i) = -ev.grad_log_density;
    hess.middleCols(i * r, r) = ev.neg_hessian;
    f0[i] = -ev.log_density;
  }
  const Matrix neg_grad_all = comm.allgather(neg_grad);
  const Matrix hess_all = comm.allgather(hess);
  rec.times.variation = seconds_since(t0);

  // Metric and the local rows of the kernel table.
  t0 = Clock::now();
  out.metric = fixed_metric ? *fixed_metric : kernel::build_metric_stacked(hess_all, static_cast<double>(r));
  const kernel::KernelTable table = kernel::evaluate_kernel_rows(out.metric, w_all, begin, local, true);
  Matrix s_local(1, local);
  Matrix b_local(r, local);
  for (Index i = 0; i < local; ++i) {
    s_local(0, i) = table.values.row(i).sum();
    b_local.col(i) = table.gradients[static_cast<std::size_t>(i)].rowwise().sum();
  }
  const Matrix s_all = comm.allgather(s_local);
  const Matrix b_all = comm.allgather(b_local);
  rec.times.kernel = seconds_since(t0);

  // Lumped systems.
  t0 = Clock::now();
  const bool row_sum = config.lumping == Lumping::row_sum;
  Matrix c_local(r, local);
  Vector slopes(local);
  double max_grad = 0.0;
  Matrix g_local(r, local);
  for (Index i = 0; i < local; ++i) {
    const Vector kj = table.values.row(i).transpose();  // k(w_j, w_m) over j
    const Matrix& dk = table.gradients[static_cast<std::size_t>(i)];  // -v_mj over j
    const Vector g = (neg_grad_all * kj + b_local.col(i)) / nd;
    Matrix h = Matrix::Zero(r, r);
    for (Index j = 0; j < n; ++j) {
      const double wgt = row_sum ? kj[j] * s_all(0, j) : kj[j] * kj[j];
      h += wgt * hess_all.middleCols(j * r, r);
    }
    if (row_sum) {
      h.noalias() -= b_all * dk.transpose();
    } else {
      h.noalias() += dk * dk.transpose();
    }
    h /= nd;
    c_local.col(i) = solve_lumped(h, -g, config.damping);
    g_local.col(i) = g;
    slopes[i] = g.dot(c_local.col(i));
    max_grad = std::max(max_grad, g.norm());
  }
  out.c_all = comm.allgather(c_local);
  rec.times.solve = seconds_since(t0);

  // Line search and move.
  t0 = Clock::now();
  Matrix dirs(r, local);
  for (Index i = 0; i < local; ++i) dirs.col(i) = out.c_all * table.values.row(i).transpose();
  const Matrix w_local = w_all.middleCols(begin, local);
  auto objectives = [&](const Vector& eps) {
    Vector f(local);
    for (Index i = 0; i < local; ++i) {
      if (eps[i] == 0.0) {
        f[i] = f0[i];
        continue;
      }
      try {
        f[i] = -subspace::projected_log_density(model, basis, w_local.col(i) + eps[i] * dirs.col(i));
      } catch (const ForwardSolveFailure&) {
        f[i] = kInf;
      }
    }
    return f;
  };
  const LineSearchResult ls = distributed_line_search(objectives, f0, slopes, zero_columns(dirs),
                                                      config.line_search, comm);
  Matrix w_new = w_local;
  Vector local_stats(4);  // max update, step sum, objective sum, stalled
  local_stats.setZero();
  for (Index i = 0; i < local; ++i) {
    w_new.col(i) += ls.steps[i] * dirs.col(i);
    local_stats[0] = std::max(local_stats[0], ls.steps[i] * dirs.col(i).norm());
    if (ls.stalled[static_cast<std::size_t>(i)]) local_stats[3] += 1.0;
  }
  out.w_all = comm.allgather(w_new);
  const Vector steps_all = comm.allgather(ls.steps);
  const Vector obj_all = comm.allgather(ls.objectives);
  const Matrix stats_all = comm.allgather(Matrix(local_stats));
  const Vector grad_all = comm.allgather(Vector(Vector::Constant(1, max_grad)));
  rec.times.sample = seconds_since(t0);

  rec.max_update = stats_all.row(0).maxCoeff();
  rec.stalled = static_cast<Index>(stats_all.row(3).sum());
  rec.max_grad = grad_all.maxCoeff();
  rec.step = steps_all.mean();
  rec.objective = obj_all.mean();
  rec.doubles_sent = comm.stats().doubles_sent - sent0;
  return out;
}

RunResult psvn_run(const PosteriorModel& model, const subspace::SubspaceBasis& basis,
                   const TransportConfig& config, const Matrix& initial, par::Collectives& comm) {
  config.validate();
  require_dim(initial.rows() == model.dim(), "psvn_run: initial ensemble must be d x N");
  const par::Partition partition = par::Partition::make(initial.cols(), comm.size());
  const Index begin = partition.begin(comm.rank());
  const Index local = partition.count(comm.rank());

  RunResult res;
  res.basis = basis;
  const subspace::ProjectedEnsemble pe = subspace::project(basis, Matrix(initial.middleCols(begin, local)));
  Matrix w_all = comm.allgather(pe.w);
  kernel::KernelMetric metric;
  Matrix x_perp_all;
  if (config.keep_snapshots) x_perp_all = subspace::project(basis, initial).x_perp;
  res.stop_reason = "max_iterations";
  for (Index l = 1; l <= config.max_iterations; ++l) {
    const bool refresh = ((l - 1) % config.metric_refresh) == 0;
    PsvnStep step = psvn_step(model, basis, w_all, config, comm, partition, refresh ? nullptr : &metric);
    metric = step.metric;
    w_all = std::move(step.w_all);
    step.record.iteration = l;
    res.records.push_back(step.record);
    if (config.keep_snapshots) res.snapshots.push_back(subspace::reconstruct(basis, subspace::ProjectedEnsemble{w_all, x_perp_all}));
    if (step.record.max_update < config.tol_update) {
      res.stop_reason = "update";
      break;
    }
    if (step.record.max_grad < config.tol_gradient) {
      res.stop_reason = "gradient";
      break;
    }
  }
  subspace::ProjectedEnsemble final_local{w_all.middleCols(begin, local), pe.x_perp};
  res.ensemble = comm.allgather(subspace::reconstruct(basis, final_local));
  res.outer_completed = 1;
  res.comm = comm.stats();
  return res;
}

RunResult adaptive_run(const PosteriorModel& model, const TransportConfig& config,
                       const Matrix& initial, par::Collectives& comm) {
  config.validate();
  RunResult res;
  Matrix x = initial;
  bool have_previous = false;
  subspace::SubspaceBasis previous;
  res.stop_reason = "outer_iterations";
  for (int outer = 1; outer <= config.outer_iterations; ++outer) {
    Matrix psi, eig;
    if (comm.rank() == 0) {
      const auto b = subspace::build_basis(model, x, config.basis);
      psi = b.psi;
      eig = b.eigenvalues;
    }
    psi = comm.broadcast(psi, 0);
    eig = comm.broadcast(eig, 0);
    subspace::SubspaceBasis basis =
        subspace::SubspaceBasis::from_columns(model.prior(), psi, Vector(eig.col(0)));
    res.spectra.push_back(basis.eigenvalues);
    if (have_previous && subspace::max_principal_angle(previous, basis) < config.stagnation_angle) {
      res.stagnated = true;
      res.stop_reason = "stagnation";
      res.basis = basis;
      break;
    }
    RunResult inner = psvn_run(model, basis, config, x, comm);
    for (IterationRecord rec : inner.records) {
      rec.outer = outer;
      res.records.push_back(rec);
    }
    for (Matrix& snap : inner.snapshots) res.snapshots.push_back(std::move(snap));
    x = std::move(inner.ensemble);
    res.basis = basis;
    res.outer_completed = outer;
    previous = std::move(basis);
    have_previous = true;
    if (config.outer_iterations == 1) res.stop_reason = inner.stop_reason;
  }
  res.ensemble = std::move(x);
  res.comm = comm.stats();
  return res;
}

RunResult run_from(const PosteriorModel& model, const TransportConfig& config,
                   const Matrix& initial, par::Collectives& comm) {
  config.validate();
  require_dim(initial.rows() == model.dim() && initial.cols() >= 1,
              "run: initial ensemble must be d x N");
  if (config.method == Method::psvn) return adaptive_run(model, config, initial, comm);
  if (comm.size() != 1) {
    throw ConfigInvalid("run: " + to_string(config.method) + " supports a single worker only");
  }

  RunResult res;
  Matrix x = initial;
  kernel::KernelMetric metric;
  res.stop_reason = "max_iterations";
  for (Index l = 1; l <= config.max_iterations; ++l) {
    const auto t0 = Clock::now();
    if (((l - 1) % config.metric_refresh) == 0) {
      if (config.method == Method::svgd && config.svgd_kernel == SvgdKernel::median) {
        metric = kernel::median_heuristic(x);
      } else {
        metric = full_space_metric(model, x);
      }
    }
    const double t_metric = seconds_since(t0);
    StepResult step = config.method == Method::svgd ? svgd_step(model, x, metric, config)
                                                    : svn_step(model, x, metric, config);
    step.record.iteration = l;
    step.record.times.kernel += t_metric;
    x = std::move(step.ensemble);
    res.records.push_back(step.record);
    if (config.keep_snapshots) res.snapshots.push_back(x);
    if (step.record.max_update < config.tol_update) {
      res.stop_reason = "update";
      break;
    }
    if (step.record.max_grad < config.tol_gradient) {
      res.stop_reason = "gradient";
      break;
    }
  }
  res.ensemble = std::move(x);
  res.outer_completed = 1;
  res.comm = comm.stats();
  return res;
}

RunResult run(const PosteriorModel& model, const TransportConfig& config, std::uint64_t seed,
              par::Collectives& comm) {
  config.validate();
  // Every worker draws the same ensemble (one stream per particle), so the
  // initial state does not depend on the partition and costs no traffic.
  const Matrix initial = sample_prior(model.prior(), config.particles, seed, config.init);
  return run_from(model, config, initial, comm);
}

RunResult run(const PosteriorModel& model, const TransportConfig& config, std::uint64_t seed) {
  par::SerialCollectives comm;
  return run(model, config, seed, comm);
}

}  // namespace psvn::transport
