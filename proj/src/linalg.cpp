#include "psvn/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

namespace psvn::la {

SymmetricOperator SymmetricOperator::from_matrix(Matrix a) {
  require_dim(a.rows() == a.cols(), "SymmetricOperator::from_matrix: matrix not square");
  const Index n = a.rows();
  return {n, [a = std::move(a)](const Matrix& v) -> Matrix { return a * v; }};
}

Matrix cholesky_factor(const Matrix& spd) {
  require_dim(spd.rows() == spd.cols(), "cholesky_factor: matrix not square");
  Eigen::LLT<Matrix> llt(spd);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefinite("cholesky_factor: non-positive pivot");
  }
  // Eigen's LLT only reports failure on a non-positive pivot; NaN input slips
  // through as NaN factors.
  Matrix lower = llt.matrixL();
  if (!lower.allFinite() || (lower.diagonal().array() <= 0.0).any()) {
    throw NotPositiveDefinite("cholesky_factor: non-positive pivot");
  }
  return lower;
}

Matrix solve_tridiagonal(const Vector& lower, const Vector& diag, const Vector& upper,
                         const Matrix& rhs) {
  const Index n = diag.size();
  require_dim(n >= 1 && lower.size() == n - 1 && upper.size() == n - 1 && rhs.rows() == n,
              "solve_tridiagonal: inconsistent band sizes");
  Vector c(n);
  Matrix x = rhs;
  double pivot = diag[0];
  if (pivot == 0.0) throw SingularSystem("solve_tridiagonal: zero pivot");
  c[0] = n > 1 ? upper[0] / pivot : 0.0;
  x.row(0) /= pivot;
  for (Index i = 1; i < n; ++i) {
    pivot = diag[i] - lower[i - 1] * c[i - 1];
    if (pivot == 0.0 || !std::isfinite(pivot)) {
      throw SingularSystem("solve_tridiagonal: zero pivot at row " + std::to_string(i));
    }
    c[i] = i < n - 1 ? upper[i] / pivot : 0.0;
    x.row(i) = (x.row(i) - lower[i - 1] * x.row(i - 1)) / pivot;
  }
  for (Index i = n - 2; i >= 0; --i) x.row(i) -= c[i] * x.row(i + 1);
  return x;
}

Vector solve_tridiagonal(const Vector& lower, const Vector& diag, const Vector& upper,
                         const Vector& rhs) {
  Matrix x = solve_tridiagonal(lower, diag, upper, Matrix(rhs));
  return x.col(0);
}

void normalize_signs(Matrix& vectors) {
  for (Index j = 0; j < vectors.cols(); ++j) {
    Index arg = 0;
    vectors.col(j).cwiseAbs().maxCoeff(&arg);
    if (vectors(arg, j) < 0.0) vectors.col(j) *= -1.0;
  }
}

namespace {

Matrix orthonormal_basis(const Matrix& y) {
  Eigen::HouseholderQR<Matrix> qr(y);
  return qr.householderQ() * Matrix::Identity(y.rows(), y.cols());
}

Matrix gaussian_sketch(Index rows, Index cols, std::uint64_t seed, std::uint64_t attempt) {
  Engine engine = make_engine(seed, attempt);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix omega(rows, cols);
  // Fill column by column so the sketch does not depend on storage order.
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) omega(i, j) = normal(engine);
  return omega;
}

}  // namespace

EigenPairs randomized_generalized_eig(const SymmetricOperator& hessian,
                                      const Matrix& prior_factor,
                                      const RandomizedEigOptions& options) {
  const Index d = hessian.dim;
  require_dim(prior_factor.rows() == d && prior_factor.cols() == d,
              "randomized_generalized_eig: prior factor dimension does not match operator");
  if (options.target_rank < 1 || options.oversample < 0 ||
      options.target_rank + options.oversample > d) {
    throw RankExceedsDimension("randomized_generalized_eig: target_rank + oversample = " +
                               std::to_string(options.target_rank + options.oversample) +
                               " exceeds dimension " + std::to_string(d));
  }
  const Index k = options.target_rank + options.oversample;
  const auto lower = prior_factor.triangularView<Eigen::Lower>();

  // Whitened operator B = L^T H L.
  auto whitened = [&](const Matrix& v) -> Matrix {
    Matrix lv = lower * v;
    Matrix hv = hessian.apply(lv);
    require_dim(hv.rows() == d && hv.cols() == v.cols(),
                "randomized_generalized_eig: operator returned wrong shape");
    return lower.transpose() * hv;
  };

  for (std::uint64_t attempt = 0; attempt < 2; ++attempt) {
    Matrix y = whitened(gaussian_sketch(d, k, options.seed, attempt));
    if (!y.allFinite()) continue;
    Matrix q = orthonormal_basis(y);
    bool finite = true;
    for (int it = 0; it < options.power_iters && finite; ++it) {
      y = whitened(q);
      finite = y.allFinite();
      if (finite) q = orthonormal_basis(y);
    }
    if (!finite) continue;

    Matrix bq = whitened(q);
    if (!bq.allFinite()) continue;
    Matrix t = q.transpose() * bq;
    t = 0.5 * (t + t.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(t);
    if (eig.info() != Eigen::Success) continue;

    // Ascending from the solver; reverse, then stable-sort by |lambda|.
    std::vector<Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), Index{0});
    std::reverse(order.begin(), order.end());
    const Vector& ev = eig.eigenvalues();
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return std::abs(ev[a]) > std::abs(ev[b]); });

    const Index r = options.target_rank;
    EigenPairs out;
    out.values.resize(r);
    Matrix phi(d, r);
    for (Index j = 0; j < r; ++j) {
      out.values[j] = ev[order[static_cast<std::size_t>(j)]];
      phi.col(j) = q * eig.eigenvectors().col(order[static_cast<std::size_t>(j)]);
    }
    out.vectors = lower * phi;
    normalize_signs(out.vectors);
    return out;
  }
  throw BreakdownInQR("randomized_generalized_eig: sketch is not finite after retry");
}

EigenPairs truncate_by_tolerance(const EigenPairs& pairs, double eps_lambda) {
  Index keep = 0;
  while (keep < pairs.size() && std::abs(pairs.values[keep]) >= eps_lambda) ++keep;
  keep = std::max<Index>(keep, std::min<Index>(1, pairs.size()));
  return {pairs.values.head(keep), pairs.vectors.leftCols(keep)};
}

}  // namespace psvn::la
