#include "psvn/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

namespace psvn::subspace {

SubspaceBasis SubspaceBasis::from_columns(const GaussianPrior& prior, Matrix psi,
                                          Vector eigenvalues) {
  require_dim(psi.rows() == prior.dim(), "SubspaceBasis: basis rows do not match prior");
  require_dim(eigenvalues.size() == psi.cols(), "SubspaceBasis: eigenvalue count");
  SubspaceBasis b;
  b.precision_psi = prior.apply_precision(psi);
  b.psi = std::move(psi);
  b.eigenvalues = std::move(eigenvalues);
  b.mean = prior.mean();
  return b;
}

SubspaceBasis SubspaceBasis::leading(Index k) const {
  require_dim(k >= 1 && k <= rank(), "SubspaceBasis::leading: bad rank");
  SubspaceBasis b;
  b.psi = psi.leftCols(k);
  b.eigenvalues = eigenvalues.head(k);
  b.mean = mean;
  b.precision_psi = precision_psi.leftCols(k);
  return b;
}

la::SymmetricOperator averaged_misfit_hessian(const PosteriorModel& model, const Matrix& ensemble) {
  require_dim(ensemble.rows() == model.dim() && ensemble.cols() >= 1,
              "averaged_misfit_hessian: ensemble must be d x N with N >= 1");
  const Index d = model.dim();
  const Index s = model.data_dim();
  const Index n = model.hessian_is_constant() ? 1 : ensemble.cols();

  if (model.hessian_kind() == HessianKind::full && !model.hessian_is_constant()) {
    Matrix points = ensemble;
    return {d, [&model, points](const Matrix& v) -> Matrix {
              Matrix out = Matrix::Zero(v.rows(), v.cols());
              for (Index p = 0; p < points.cols(); ++p) {
                for (Index j = 0; j < v.cols(); ++j) {
                  out.col(j) += model.misfit_hessian_action(points.col(p), v.col(j));
                }
              }
              return out / static_cast<double>(points.cols());
            }};
  }

  // Gauss-Newton: stack the Jacobians once.
  Matrix stacked(n * s, d);
  for (Index p = 0; p < n; ++p) {
    stacked.middleRows(p * s, s) = model.forward().jacobian(ensemble.col(p));
  }
  const Matrix w = model.noise().precision();
  return {d, [stacked = std::move(stacked), w, n, s](const Matrix& v) -> Matrix {
            Matrix jv = stacked * v;
            for (Index p = 0; p < n; ++p) jv.middleRows(p * s, s) = w * jv.middleRows(p * s, s);
            return stacked.transpose() * jv / static_cast<double>(n);
          }};
}

la::EigenPairs basis_spectrum(const PosteriorModel& model, const Matrix& ensemble,
                              const BasisOptions& options) {
  const Index d = model.dim();
  if (options.max_rank < 1) throw ConfigInvalid("build_basis: max_rank must be >= 1");
  la::RandomizedEigOptions eo;
  eo.target_rank = std::min(options.max_rank, d);
  eo.oversample = std::clamp<Index>(options.oversample, 0, d - eo.target_rank);
  eo.power_iters = options.power_iters;
  eo.seed = options.seed;
  return la::randomized_generalized_eig(averaged_misfit_hessian(model, ensemble),
                                        model.prior().factor(), eo);
}

SubspaceBasis build_basis(const PosteriorModel& model, const Matrix& ensemble,
                          const BasisOptions& options) {
  const la::EigenPairs kept =
      la::truncate_by_tolerance(basis_spectrum(model, ensemble, options), options.eps_lambda);
  return SubspaceBasis::from_columns(model.prior(), kept.vectors, kept.values);
}

ProjectedState project(const SubspaceBasis& basis, const Vector& x) {
  require_dim(x.size() == basis.dim(), "project: dimension mismatch");
  ProjectedState st;
  const Vector dx = x - basis.mean;
  st.w = basis.precision_psi.transpose() * dx;
  st.x_perp = dx - basis.psi * st.w;
  return st;
}

Vector reconstruct(const SubspaceBasis& basis, const ProjectedState& state) {
  require_dim(state.w.size() == basis.rank() && state.x_perp.size() == basis.dim(),
              "reconstruct: dimension mismatch");
  return basis.mean + basis.psi * state.w + state.x_perp;
}

ProjectedEnsemble project(const SubspaceBasis& basis, const Matrix& ensemble) {
  require_dim(ensemble.rows() == basis.dim(), "project: dimension mismatch");
  ProjectedEnsemble pe;
  const Matrix dx = ensemble.colwise() - basis.mean;
  pe.w = basis.precision_psi.transpose() * dx;
  pe.x_perp = dx - basis.psi * pe.w;
  return pe;
}

Matrix reconstruct(const SubspaceBasis& basis, const ProjectedEnsemble& state) {
  require_dim(state.w.rows() == basis.rank() && state.x_perp.rows() == basis.dim() &&
                  state.w.cols() == state.x_perp.cols(),
              "reconstruct: dimension mismatch");
  Matrix x = basis.psi * state.w + state.x_perp;
  x.colwise() += basis.mean;
  return x;
}

Vector subspace_point(const SubspaceBasis& basis, const Vector& w) {
  require_dim(w.size() == basis.rank(), "subspace_point: coefficient dimension");
  return basis.mean + basis.psi * w;
}

ProjectedEvaluation evaluate_projected(const PosteriorModel& model, const SubspaceBasis& basis,
                                       const Vector& w, bool with_hessian) {
  const Vector xr = subspace_point(basis, w);
  ProjectedEvaluation ev;
  if (!with_hessian) {
    ev.log_density = -model.potential(xr) - 0.5 * w.squaredNorm();
    const Vector g = model.grad_log_posterior(xr) + model.prior().precision() * (xr - basis.mean);
    ev.grad_log_density = basis.psi.transpose() * g - w;
    return ev;
  }
  const Linearization lin = model.linearize(xr);
  ev.log_density = -lin.potential - 0.5 * w.squaredNorm();
  ev.grad_log_density = -basis.psi.transpose() * lin.potential_gradient - w;
  ev.neg_hessian = model.misfit_hessian_in(xr, lin, basis.psi);
  ev.neg_hessian.diagonal().array() += 1.0;
  return ev;
}

double projected_log_density(const PosteriorModel& model, const SubspaceBasis& basis,
                             const Vector& w) {
  return -model.potential(subspace_point(basis, w)) - 0.5 * w.squaredNorm();
}

Vector projected_gradient(const PosteriorModel& model, const SubspaceBasis& basis,
                          const Vector& w) {
  return evaluate_projected(model, basis, w, false).grad_log_density;
}

Matrix projected_hessian(const PosteriorModel& model, const SubspaceBasis& basis, const Vector& w) {
  return -evaluate_projected(model, basis, w, true).neg_hessian;
}

double max_principal_angle(const SubspaceBasis& a, const SubspaceBasis& b) {
  require_dim(a.dim() == b.dim(), "max_principal_angle: dimension mismatch");
  if (a.rank() != b.rank()) return std::numbers::pi / 2.0;
  const Matrix c = a.precision_psi.transpose() * b.psi;
  Eigen::JacobiSVD<Matrix> svd(c);
  const double smin = std::clamp(svd.singularValues().minCoeff(), 0.0, 1.0);
  return std::acos(smin);
}

void write_eigenvalues_csv(std::ostream& out, const Vector& eigenvalues) {
  out << "index,eigenvalue\n";
  out.precision(17);
  for (Index i = 0; i < eigenvalues.size(); ++i) out << i << ',' << eigenvalues[i] << '\n';
}

void write_basis_csv(std::ostream& out, const SubspaceBasis& basis) {
  out << "column,row,value\n";
  out.precision(17);
  for (Index j = 0; j < basis.rank(); ++j) {
    for (Index i = 0; i < basis.dim(); ++i) out << j << ',' << i << ',' << basis.psi(i, j) << '\n';
  }
}

}  // namespace psvn::subspace
