#pragma once

#include "psvn/benchmarks.hpp"
#include "psvn/subspace.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace psvn::diag {

enum class NormKind { mass, euclidean };

std::string to_string(NormKind n);
NormKind norm_from_string(const std::string& s);

struct MomentErrors {
  double mean_rmse = 0.0;
  double variance_rmse = 0.0;
  Index trials = 0;
  NormKind norm = NormKind::mass;
  std::vector<double> mean_errors;      // per trial, same norm
  std::vector<double> variance_errors;
};

Vector sample_mean(const Matrix& ensemble);
/// Pointwise sample variance with the 1/(N-1) normalization (zero for N = 1).
Vector pointwise_variance(const Matrix& ensemble);

/// sqrt of the trial average of squared errors of the sample mean and the
/// pointwise sample variance; |v|_X^2 = v^T X v with X the mass matrix, or the
/// plain Euclidean norm.
MomentErrors moment_rmse(const std::vector<Matrix>& ensembles, const Vector& oracle_mean,
                         const Vector& oracle_variance, const Matrix& mass,
                         NormKind norm = NormKind::mass);

/// KL(p || q) between two Gaussians on R^d.
double gaussian_kl(const bench::AnalyticGaussianPosterior& p, const bench::AnalyticGaussianPosterior& q);

/// Posterior of a linear model whose likelihood only sees xbar + Psi Psi^T Gamma0^{-1} (x - xbar).
bench::AnalyticGaussianPosterior projected_posterior(const PosteriorModel& model,
                                                     const subspace::SubspaceBasis& basis);

/// KL(full || projected) for the leading k = 1..rank columns of `basis`.
std::vector<double> projection_kl_curve(const PosteriorModel& model, const subspace::SubspaceBasis& basis);

/// Long-form eigenvalue decay table "d,index,eigenvalue".
struct SpectrumRow {
  Index d;
  Vector eigenvalues;
};
void write_eigen_decay_csv(std::ostream& out, const std::vector<SpectrumRow>& rows);

/// Per-trial errors "method,d,N,trial,mean_error,variance_error".
struct TrialRow {
  std::string method;
  Index d = 0;
  Index n = 0;
  Index trial = 0;
  double mean_error = 0.0;
  double variance_error = 0.0;
};
void write_trials_csv(std::ostream& out, const std::vector<TrialRow>& rows);

}  // namespace psvn::diag
