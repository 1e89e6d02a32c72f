#pragma once

#include "psvn/collectives.hpp"
#include "psvn/kernels.hpp"
#include "psvn/model.hpp"
#include "psvn/subspace.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace psvn::transport {

enum class Method { svgd, svn, psvn };
enum class Lumping { row_sum, diagonal };
/// SVGD kernel: the Hessian-averaged metric, or alpha I with the median heuristic.
enum class SvgdKernel { hessian_metric, median };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
std::string to_string(Lumping l);
Lumping lumping_from_string(const std::string& s);

struct LineSearchConfig {
  bool enabled = true;
  double initial_step = 1.0;
  double backtrack = 0.5;
  double sufficient_decrease = 1e-4;
  int max_backtracks = 10;
  /// Armijo test per particle on -log pi(T(w_n)); otherwise on the ensemble mean.
  bool per_sample = true;
};

struct TransportConfig {
  Method method = Method::psvn;
  Index max_iterations = 100;
  double tol_update = 1e-2;
  double tol_gradient = 1e-2;
  LineSearchConfig line_search;
  Lumping lumping = Lumping::row_sum;
  SvgdKernel svgd_kernel = SvgdKernel::hessian_metric;
  /// Rebuild the kernel metric every this many iterations.
  Index metric_refresh = 1;
  /// Levenberg damping, relative to trace(H_m)/dim, applied when a lumped
  /// system is numerically singular.
  double damping = 1e-8;
  /// Subspace (pSVN).
  subspace::BasisOptions basis;
  int outer_iterations = 1;
  double stagnation_angle = 1e-2;
  /// Initial ensemble.
  Index particles = 64;
  InitSampling init = InitSampling::antithetic;
  /// Keep the full-space ensemble after every iteration in RunResult::snapshots.
  bool keep_snapshots = false;

  /// Throws ConfigInvalid.
  void validate() const;
};

struct PhaseTimes {
  double variation = 0.0;  // gradients and Hessians at the particles
  double kernel = 0.0;     // metric and kernel table
  double solve = 0.0;      // assembling and solving the lumped systems
  double sample = 0.0;     // line search and particle update
};

struct IterationRecord {
  Index iteration = 0;  // 1-based within its outer sweep
  int outer = 1;
  double max_update = 0.0;
  double max_grad = 0.0;
  double step = 0.0;       // mean accepted step
  double objective = 0.0;  // mean -log density after the step
  Index stalled = 0;       // particles whose line search found no decrease
  PhaseTimes times;
  std::size_t doubles_sent = 0;  // this worker's collective payload during the iteration
};

void write_iterations_csv(std::ostream& out, const std::vector<IterationRecord>& records);

/// Result of one step on a full-space ensemble (d x N).
struct StepResult {
  Matrix ensemble;
  IterationRecord record;
  Vector steps;       // accepted step per particle
  Matrix directions;  // the move per unit step, per particle
};

/// Full-space kernel metric M = (1/(d N)) sum_j H_j with H_j the negative
/// log-posterior Hessian (Gauss-Newton or full per the model).
kernel::KernelMetric full_space_metric(const PosteriorModel& model, const Matrix& ensemble);

/// SVGD: x_m <- x_m - eps g_m with g_m the kernelized Stein gradient.
StepResult svgd_step(const PosteriorModel& model, const Matrix& ensemble,
                     const kernel::KernelMetric& metric, const TransportConfig& config);

/// Full-space SVN with lumped Newton systems and the Galerkin move
/// x_m <- x_m + eps sum_n c_n k(x_m, x_n).
StepResult svn_step(const PosteriorModel& model, const Matrix& ensemble,
                    const kernel::KernelMetric& metric, const TransportConfig& config);
/// The same step forced through the dense per-particle assembly (for checks).
StepResult svn_step_dense(const PosteriorModel& model, const Matrix& ensemble,
                          const kernel::KernelMetric& metric, const TransportConfig& config);

/// Armijo backtracking on per-particle objectives f_n(eps); `slopes` are the
/// directional-derivative estimates at eps = 0. With per_sample = false a
/// common step is taken for the mean objective.
struct LineSearchResult {
  Vector steps;
  Vector objectives;
  std::vector<bool> stalled;
};
LineSearchResult line_search(const std::function<Vector(const Vector& eps)>& objectives,
                             const Vector& f0, const Vector& slopes, const LineSearchConfig& config,
                             const std::vector<bool>& zero_direction = {});

/// One pSVN iteration on the particles [begin, begin + M) of a coefficient
/// ensemble replicated on every worker.
struct PsvnStep {
  Matrix w_all;               // r x N, updated and gathered
  kernel::KernelMetric metric;
  IterationRecord record;
  Matrix c_all;               // r x N Newton coefficients
};
PsvnStep psvn_step(const PosteriorModel& model, const subspace::SubspaceBasis& basis,
                   const Matrix& w_all, const TransportConfig& config, par::Collectives& comm,
                   const par::Partition& partition, const kernel::KernelMetric* fixed_metric = nullptr);

struct RunResult {
  Matrix ensemble;  // final full-space particles, d x N
  std::vector<IterationRecord> records;
  std::vector<Matrix> snapshots;   // one per record when keep_snapshots
  subspace::SubspaceBasis basis;   // pSVN: last basis
  std::vector<Vector> spectra;     // pSVN: eigenvalues per outer sweep
  int outer_completed = 0;
  bool stagnated = false;
  std::string stop_reason;
  par::CommStats comm;
};

/// Draws the initial ensemble from the prior (config.particles, config.init)
/// and runs the configured method. pSVN runs the adaptive outer loop with
/// config.outer_iterations sweeps; SVGD and SVN need a single worker.
RunResult run(const PosteriorModel& model, const TransportConfig& config, std::uint64_t seed,
              par::Collectives& comm);
RunResult run(const PosteriorModel& model, const TransportConfig& config, std::uint64_t seed);
/// Same with an explicit initial ensemble (d x N).
RunResult run_from(const PosteriorModel& model, const TransportConfig& config,
                   const Matrix& initial, par::Collectives& comm);

/// Adaptive pSVN: rebuild the basis from the current ensemble, stop early when it
/// stops rotating, otherwise run the inner pSVN loop.
RunResult adaptive_run(const PosteriorModel& model, const TransportConfig& config,
                       const Matrix& initial, par::Collectives& comm);
/// Inner pSVN loop with a given basis (no rebuild).
RunResult psvn_run(const PosteriorModel& model, const subspace::SubspaceBasis& basis,
                   const TransportConfig& config, const Matrix& initial, par::Collectives& comm);

}  // namespace psvn::transport
