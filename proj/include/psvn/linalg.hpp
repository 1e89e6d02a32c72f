#pragma once

#include "psvn/common.hpp"

#include <functional>

namespace psvn::la {

/// Symmetric linear operator given only by its action on a block of vectors.
/// `apply` maps a dim x k block to a dim x k block and must be safe to call
/// concurrently if the operator is shared between threads.
struct SymmetricOperator {
  Index dim = 0;
  std::function<Matrix(const Matrix&)> apply;

  Vector operator()(const Vector& v) const { return apply(v); }

  static SymmetricOperator from_matrix(Matrix a);
};

/// Eigenpairs sorted by descending |value|; `vectors` holds one pair per column.
struct EigenPairs {
  Vector values;
  Matrix vectors;

  Index size() const { return values.size(); }
};

struct RandomizedEigOptions {
  Index target_rank = 10;
  Index oversample = 10;
  int power_iters = 2;
  std::uint64_t seed = 0;
};

/// Lower-triangular L with L L^T = spd. Throws NotPositiveDefinite.
Matrix cholesky_factor(const Matrix& spd);

/// Solves a tridiagonal system. `lower` and `upper` have n-1 entries,
/// `diag` has n. Uses the Thomas algorithm without pivoting, so the matrix
/// should be diagonally dominant or s.p.d.; a vanishing pivot throws
/// SingularSystem.
Vector solve_tridiagonal(const Vector& lower, const Vector& diag, const Vector& upper,
                         const Vector& rhs);
Matrix solve_tridiagonal(const Vector& lower, const Vector& diag, const Vector& upper,
                         const Matrix& rhs);

/// Top eigenpairs of the pencil (H, Gamma0^{-1}) where Gamma0 = L L^T.
///
/// The pencil is whitened to the standard problem L^T H L phi = lambda phi,
/// which is solved by a randomized range finder with subspace (power)
/// iterations followed by a Rayleigh-Ritz step; the generalized vectors are
/// psi = L phi and are therefore Gamma0^{-1}-orthonormal. The result is ordered
/// by descending |lambda| (stable for ties) and each psi has its largest-
/// magnitude entry positive. Identical inputs and seed give bit-identical output.
EigenPairs randomized_generalized_eig(const SymmetricOperator& hessian,
                                      const Matrix& prior_factor,
                                      const RandomizedEigOptions& options);

/// Keeps the leading pairs with |lambda| >= eps_lambda, and at least one.
EigenPairs truncate_by_tolerance(const EigenPairs& pairs, double eps_lambda);

/// Flips each column so that its largest-magnitude entry is positive.
void normalize_signs(Matrix& vectors);

}  // namespace psvn::la
