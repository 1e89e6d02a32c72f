#pragma once

#include "psvn/linalg.hpp"
#include "psvn/model.hpp"

#include <iosfwd>

namespace psvn::subspace {

/// r prior-orthonormal directions Psi (Psi^T Gamma0^{-1} Psi = I) about the
/// prior mean, with the eigenvalues they came from.
struct SubspaceBasis {
  Matrix psi;            // d x r
  Vector eigenvalues;    // r, descending |lambda|
  Vector mean;           // prior mean xbar
  Matrix precision_psi;  // Gamma0^{-1} Psi, d x r

  Index dim() const { return psi.rows(); }
  Index rank() const { return psi.cols(); }

  static SubspaceBasis from_columns(const GaussianPrior& prior, Matrix psi, Vector eigenvalues);
  /// Leading k columns.
  SubspaceBasis leading(Index k) const;
};

struct BasisOptions {
  double eps_lambda = 0.01;
  Index max_rank = 32;  // clamped to d
  Index oversample = 10;
  int power_iters = 2;
  std::uint64_t seed = 0;
};

/// Ensemble-averaged likelihood Hessian (1/N) sum_n Hmisfit(x_n) as an operator.
/// A constant Hessian is evaluated once.
la::SymmetricOperator averaged_misfit_hessian(const PosteriorModel& model, const Matrix& ensemble);

/// Solves E[Hmisfit] psi = lambda Gamma0^{-1} psi over the ensemble (columns) and
/// keeps the pairs with |lambda| >= eps_lambda (at least one). The oversample is
/// reduced when max_rank + oversample would exceed d.
SubspaceBasis build_basis(const PosteriorModel& model, const Matrix& ensemble,
                          const BasisOptions& options);
/// The untruncated eigenpairs behind build_basis, up to max_rank of them.
la::EigenPairs basis_spectrum(const PosteriorModel& model, const Matrix& ensemble,
                              const BasisOptions& options);

struct ProjectedState {
  Vector w;       // coefficients
  Vector x_perp;  // complement, frozen during transport
};

ProjectedState project(const SubspaceBasis& basis, const Vector& x);
Vector reconstruct(const SubspaceBasis& basis, const ProjectedState& state);

/// Column-wise versions: W is r x N, Xperp d x N.
struct ProjectedEnsemble {
  Matrix w;
  Matrix x_perp;
};
ProjectedEnsemble project(const SubspaceBasis& basis, const Matrix& ensemble);
Matrix reconstruct(const SubspaceBasis& basis, const ProjectedEnsemble& state);

/// x^r = xbar + Psi w.
Vector subspace_point(const SubspaceBasis& basis, const Vector& w);

/// log pi(w) = -eta(xbar + Psi w) - |w|^2 / 2.
double projected_log_density(const PosteriorModel& model, const SubspaceBasis& basis,
                             const Vector& w);
/// -Psi^T grad eta(x^r) - w.
Vector projected_gradient(const PosteriorModel& model, const SubspaceBasis& basis, const Vector& w);
/// Hess log pi(w) = -(Psi^T Hmisfit(x^r) Psi + I).
Matrix projected_hessian(const PosteriorModel& model, const SubspaceBasis& basis, const Vector& w);

/// Everything one transport iteration needs at a coefficient vector, from a
/// single linearization.
struct ProjectedEvaluation {
  double log_density = 0.0;
  Vector grad_log_density;  // r
  Matrix neg_hessian;       // -Hess log pi(w), r x r, s.p.d. for Gauss-Newton
};
ProjectedEvaluation evaluate_projected(const PosteriorModel& model, const SubspaceBasis& basis,
                                       const Vector& w, bool with_hessian = true);

/// Largest principal angle (radians) between span(a.psi) and span(b.psi) in the
/// Gamma0^{-1} inner product; pi/2 when the ranks differ.
double max_principal_angle(const SubspaceBasis& a, const SubspaceBasis& b);

/// CSV exports: "index,eigenvalue" and long-form "column,row,value" in
/// column-major order (0-based indices).
void write_eigenvalues_csv(std::ostream& out, const Vector& eigenvalues);
void write_basis_csv(std::ostream& out, const SubspaceBasis& basis);

}  // namespace psvn::subspace
