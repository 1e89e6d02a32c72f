#include "psvn/diagnostics.hpp"

#include <cmath>
#include <ostream>

namespace psvn::diag {

std::string to_string(NormKind n) { return n == NormKind::mass ? "mass" : "euclidean"; }

NormKind norm_from_string(const std::string& s) {
  if (s == "mass") return NormKind::mass;
  if (s == "euclidean") return NormKind::euclidean;
  throw ConfigInvalid("unknown norm \"" + s + "\" (mass, euclidean)");
}

Vector sample_mean(const Matrix& ensemble) {
  require_dim(ensemble.cols() >= 1, "sample_mean: empty ensemble");
  // Shifted by the first particle: exact for a collapsed ensemble.
  const Vector x0 = ensemble.col(0);
  return x0 + (ensemble.colwise() - x0).rowwise().mean();
}

Vector pointwise_variance(const Matrix& ensemble) {
  const Index n = ensemble.cols();
  require_dim(n >= 1, "pointwise_variance: empty ensemble");
  if (n == 1) return Vector::Zero(ensemble.rows());
  const Matrix c = ensemble.colwise() - sample_mean(ensemble);
  return c.cwiseAbs2().rowwise().sum() / static_cast<double>(n - 1);
}

MomentErrors moment_rmse(const std::vector<Matrix>& ensembles, const Vector& oracle_mean,
                         const Vector& oracle_variance, const Matrix& mass, NormKind norm) {
  require_dim(!ensembles.empty(), "moment_rmse: need at least one trial");
  const Index d = oracle_mean.size();
  require_dim(oracle_variance.size() == d, "moment_rmse: oracle mean and variance differ in size");
  if (norm == NormKind::mass) {
    require_dim(mass.rows() == d && mass.cols() == d, "moment_rmse: mass matrix dimension");
  }
  auto sq = [&](const Vector& v) {
    return norm == NormKind::mass ? v.dot(mass * v) : v.squaredNorm();
  };
  MomentErrors e;
  e.norm = norm;
  e.trials = static_cast<Index>(ensembles.size());
  double sm = 0.0, sv = 0.0;
  for (const Matrix& x : ensembles) {
    require_dim(x.rows() == d, "moment_rmse: ensemble dimension");
    const double em = sq(sample_mean(x) - oracle_mean);
    const double ev = sq(pointwise_variance(x) - oracle_variance);
    e.mean_errors.push_back(std::sqrt(std::max(em, 0.0)));
    e.variance_errors.push_back(std::sqrt(std::max(ev, 0.0)));
    sm += em;
    sv += ev;
  }
  e.mean_rmse = std::sqrt(std::max(sm, 0.0) / static_cast<double>(e.trials));
  e.variance_rmse = std::sqrt(std::max(sv, 0.0) / static_cast<double>(e.trials));
  return e;
}

double gaussian_kl(const bench::AnalyticGaussianPosterior& p, const bench::AnalyticGaussianPosterior& q) {
  const Index d = p.mean.size();
  require_dim(q.mean.size() == d && p.covariance.rows() == d && q.covariance.rows() == d,
              "gaussian_kl: dimension mismatch");
  const Eigen::LLT<Matrix> lp(p.covariance), lq(q.covariance);
  if (lp.info() != Eigen::Success || lq.info() != Eigen::Success) {
    throw SingularCovariance("gaussian_kl: covariance is not positive definite");
  }
  const Matrix lpm = lp.matrixL(), lqm = lq.matrixL();
  // tr(Sq^{-1} Sp) = |Lq^{-1} Lp|_F^2, Mahalanobis via Lq^{-1}.
  const Matrix a = lq.matrixL().solve(lpm);
  const Vector diff = lq.matrixL().solve(q.mean - p.mean);
  const double logdet_p = 2.0 * lpm.diagonal().array().log().sum();
  const double logdet_q = 2.0 * lqm.diagonal().array().log().sum();
  const double kl = 0.5 * (a.squaredNorm() + diff.squaredNorm() - static_cast<double>(d) + logdet_q - logdet_p);
  return std::max(kl, 0.0);
}

bench::AnalyticGaussianPosterior projected_posterior(const PosteriorModel& model,
                                                     const subspace::SubspaceBasis& basis) {
  if (!model.forward().is_linear()) {
    throw ConfigInvalid("projected_posterior: the forward map must be linear");
  }
  const Index d = model.dim();
  const Vector& xbar = model.prior().mean();
  const Matrix a = model.forward().jacobian(xbar);
  // Likelihood of x only through A (xbar + P (x - xbar)), P = Psi Psi^T Gamma0^{-1}.
  const Matrix b = (a * basis.psi) * basis.precision_psi.transpose();
  const Vector offset = model.forward().evaluate(xbar) - b * xbar;
  const Matrix w = model.noise().precision();
  const Matrix& p0 = model.prior().precision();
  Matrix h = b.transpose() * w * b + p0;
  h = 0.5 * (h + h.transpose()).eval();
  const Eigen::LLT<Matrix> llt(h);
  if (llt.info() != Eigen::Success) throw SingularSystem("projected_posterior: precision not s.p.d.");
  bench::AnalyticGaussianPosterior out;
  out.mean = llt.solve(b.transpose() * w * (model.data() - offset) + p0 * xbar);
  out.covariance = llt.solve(Matrix::Identity(d, d));
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  return out;
}

std::vector<double> projection_kl_curve(const PosteriorModel& model, const subspace::SubspaceBasis& basis) {
  const auto full = bench::analytic_posterior(model);
  std::vector<double> kl;
  for (Index k = 1; k <= basis.rank(); ++k) {
    kl.push_back(gaussian_kl(full, projected_posterior(model, basis.leading(k))));
  }
  return kl;
}

void write_eigen_decay_csv(std::ostream& out, const std::vector<SpectrumRow>& rows) {
  out << "d,index,eigenvalue\n";
  out.precision(17);
  for (const auto& r : rows) {
    for (Index i = 0; i < r.eigenvalues.size(); ++i) out << r.d << ',' << i << ',' << r.eigenvalues[i] << '\n';
  }
}

void write_trials_csv(std::ostream& out, const std::vector<TrialRow>& rows) {
  out << "method,d,N,trial,mean_error,variance_error\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.method << ',' << r.d << ',' << r.n << ',' << r.trial << ',' << r.mean_error << ','
        << r.variance_error << '\n';
  }
}

}  // namespace psvn::diag
