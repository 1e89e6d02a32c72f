#pragma once

#include "psvn/model.hpp"

#include <json.hpp>

#include <memory>
#include <vector>

namespace psvn::bench {

/// Piecewise-linear FEM matrices on a uniform mesh of [0, 1] with `nodes`
/// nodes, natural (Neumann) boundary rows kept.
struct FemMatrices1D {
  Index nodes = 0;
  double h = 0.0;
  Matrix stiffness;     // (1/h) tridiag(-1, 2, -1), boundary diagonal 1/h
  Matrix mass;          // (h/6) tridiag(1, 4, 1), boundary diagonal h/3
  Vector lumped_mass;   // row sums of `mass`: h/2 at the ends, h inside
};

FemMatrices1D fem_matrices(Index nodes);

/// Precision of the discretized (I - alpha Laplacian)^{-1} covariance for nodal
/// values: M_L + alpha K (lumped mass, natural boundary). Its inverse is the
/// discrete Green's function, so pointwise variances do not depend on h.
Matrix laplacian_prior_precision(const FemMatrices1D& fem, double alpha);
/// Precision of (I - alpha Laplacian)^{-2}: (M_L + alpha K) M_L^{-1} (M_L + alpha K).
Matrix bilaplacian_prior_precision(const FemMatrices1D& fem, double alpha);

struct LinearProblemOptions {
  Index observations = 15;
  double noise_pct = 0.01;
  std::uint64_t seed = 0;
};

/// -u'' + u = x on (0,1), u(0) = 0, u(1) = 1, observed at equispaced interior
/// points. The Dirichlet lift is subtracted from the data, leaving the linear
/// map f(x) = O (K+M)^{-1} M x (boundary rows eliminated). The noise standard
/// deviation is noise_pct times the largest observed value of the full state
/// u(x*) including the lift.
struct LinearPdeProblem {
  int n = 0;
  Index d = 0;
  double h = 0.0;
  LinearProblemOptions options;
  FemMatrices1D fem;
  Vector observation_points;
  Matrix observation;      // O, s x d (linear interpolation)
  Matrix forward_matrix;   // A, s x d
  Vector lift_observed;    // O u_lift
  Vector truth;
  Vector data;             // A x* + noise
  double noise_std = 0.0;
  std::shared_ptr<const PosteriorModel> model;

  const Matrix& mass_matrix() const { return fem.mass; }
};

LinearPdeProblem assemble_linear_problem(int n, const LinearProblemOptions& options = {});

/// u(s) = q * int_0^s exp(-x(t)) dt with q = 1 / int_0^1 exp(-x(t)) dt, i.e.
/// -(e^x u')' = 0 with u(0) = 0, u(1) = 1, integrated with the trapezoidal
/// rule on the mesh. Observed at interior nodes.
class LognormalForwardMap final : public ForwardMap {
 public:
  LognormalForwardMap(Index nodes, std::vector<Index> observed_nodes);

  Index input_dim() const override { return nodes_; }
  Index output_dim() const override { return static_cast<Index>(observed_.size()); }
  Vector evaluate(const Vector& x) const override;
  Vector jacobian_action(const Vector& x, const Vector& v) const override;
  Vector jacobian_transpose_action(const Vector& x, const Vector& u) const override;
  Matrix jacobian(const Vector& x) const override;
  bool has_second_order() const override { return true; }
  Vector second_order_action(const Vector& x, const Vector& u, const Vector& v) const override;

  /// Full nodal state u at every node.
  Vector state(const Vector& x) const;
  const std::vector<Index>& observed_nodes() const { return observed_; }

 private:
  // Cumulative integrals C_j, total T and the gradients used by all derivatives.
  struct Quadrature;
  Quadrature integrate(const Vector& x) const;

  Index nodes_;
  double h_;
  std::vector<Index> observed_;
};

struct LognormalFlowProblem {
  Index d = 0;
  Index s = 0;
  double noise_pct = 0.0;
  std::uint64_t seed = 0;
  FemMatrices1D fem;
  HessianKind hessian = HessianKind::gauss_newton;
  std::vector<Index> observation_indices;
  Vector truth;
  Vector data;
  double noise_std = 0.0;
  std::shared_ptr<const LognormalForwardMap> forward;
  std::shared_ptr<const PosteriorModel> model;

  const Matrix& mass_matrix() const { return fem.mass; }
};

LognormalFlowProblem assemble_lognormal_problem(Index d, Index s, double noise_pct,
                                                std::uint64_t seed = 0,
                                                HessianKind hessian = HessianKind::gauss_newton);

struct AnalyticGaussianPosterior {
  Vector mean;
  Matrix covariance;
};

/// Exact Gaussian posterior of a linear model: Gamma_post = (A^T Gamma^{-1} A +
/// Gamma0^{-1})^{-1}, x_MAP = xbar + Gamma_post A^T Gamma^{-1} (y - A xbar).
/// Computed in prior-whitened coordinates. Throws SingularSystem.
AnalyticGaussianPosterior analytic_posterior(const PosteriorModel& model);
AnalyticGaussianPosterior analytic_posterior(const LinearPdeProblem& problem);

struct PcnResult {
  Vector mean;
  Vector variance;
  double acceptance_rate = 0.0;
  Index samples = 0;  // retained after burn-in
};

/// Preconditioned Crank-Nicolson chain started at `start` (prior mean when
/// empty); moments over the last 80% of the steps.
PcnResult pcn_reference_sampler(const PosteriorModel& model, Index steps, double beta,
                                std::uint64_t seed, const Vector& start = Vector());

struct PcnReference {
  Vector mean;
  Vector variance;
  double max_rhat = 0.0;
  double acceptance_rate = 0.0;
  std::vector<PcnResult> chains;
};

/// Several pCN chains from independent prior draws, pooled, with the largest
/// per-coordinate Gelman-Rubin statistic.
PcnReference pcn_reference(const PosteriorModel& model, int chains, Index steps, double beta,
                           std::uint64_t seed);

/// Reproducible JSON descriptors.
nlohmann::json descriptor(const LinearPdeProblem& problem);
nlohmann::json descriptor(const LognormalFlowProblem& problem);
/// Rebuilds the model named by a descriptor (problem = linear1d | lognormal1d).
/// Returns the mass matrix alongside it for mass-weighted norms.
struct DescribedProblem {
  nlohmann::json descriptor;
  std::shared_ptr<const PosteriorModel> model;
  Matrix mass;
  bool linear = false;
};
DescribedProblem problem_from_descriptor(const nlohmann::json& descriptor);

}  // namespace psvn::bench
