#include "psvn/model.hpp"

#include "psvn/linalg.hpp"

#include <cmath>
#include <string>

namespace psvn {

// ---------------------------------------------------------------- prior

GaussianPrior::GaussianPrior(Vector mean, Matrix covariance, Matrix precision)
    : mean_(std::move(mean)),
      covariance_(std::move(covariance)),
      precision_(std::move(precision)),
      factor_(la::cholesky_factor(covariance_)) {}

GaussianPrior GaussianPrior::from_covariance(Vector mean, Matrix covariance) {
  require_dim(covariance.rows() == mean.size() && covariance.cols() == mean.size(),
              "GaussianPrior: covariance does not match mean");
  Eigen::LLT<Matrix> llt(covariance);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("GaussianPrior: covariance");
  Matrix precision = llt.solve(Matrix::Identity(mean.size(), mean.size()));
  precision = 0.5 * (precision + precision.transpose()).eval();
  return GaussianPrior(std::move(mean), std::move(covariance), std::move(precision));
}

GaussianPrior GaussianPrior::from_precision(Vector mean, Matrix precision) {
  require_dim(precision.rows() == mean.size() && precision.cols() == mean.size(),
              "GaussianPrior: precision does not match mean");
  Eigen::LLT<Matrix> llt(precision);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("GaussianPrior: precision");
  Matrix covariance = llt.solve(Matrix::Identity(mean.size(), mean.size()));
  covariance = 0.5 * (covariance + covariance.transpose()).eval();
  return GaussianPrior(std::move(mean), std::move(covariance), std::move(precision));
}

Matrix GaussianPrior::apply_factor(const Matrix& z) const {
  return factor_.triangularView<Eigen::Lower>() * z;
}

double GaussianPrior::log_density(const Vector& x) const {
  const Vector dx = x - mean_;
  return -0.5 * dx.dot(precision_ * dx);
}

// ---------------------------------------------------------------- sampling

Matrix sample_prior(const GaussianPrior& prior, Index count, std::uint64_t seed) {
  return sample_prior(prior, count, seed, InitSampling::iid);
}

Matrix sample_prior(const GaussianPrior& prior, Index count, std::uint64_t seed,
                    InitSampling mode) {
  if (count < 1) throw ConfigInvalid("sample_prior: count must be >= 1");
  const Index d = prior.dim();
  Matrix z(d, count);
  switch (mode) {
    case InitSampling::iid:
      for (Index i = 0; i < count; ++i) {
        Engine engine = make_engine(seed, static_cast<std::uint64_t>(i));
        z.col(i) = standard_normal(d, engine);
      }
      break;
    case InitSampling::antithetic:
      for (Index i = 0; i < count; i += 2) {
        Engine engine = make_engine(seed, static_cast<std::uint64_t>(i / 2));
        z.col(i) = standard_normal(d, engine);
        if (i + 1 < count) z.col(i + 1) = -z.col(i);
      }
      break;
    case InitSampling::moment_matched: {
      if (count <= d) {
        throw ConfigInvalid("sample_prior: moment matching needs count > dim (" +
                            std::to_string(count) + " <= " + std::to_string(d) + ")");
      }
      for (Index i = 0; i < count; ++i) {
        Engine engine = make_engine(seed, static_cast<std::uint64_t>(i));
        z.col(i) = standard_normal(d, engine);
      }
      z.colwise() -= z.rowwise().mean();
      Matrix cov = z * z.transpose() / static_cast<double>(count - 1);
      const Matrix lc = la::cholesky_factor(cov);
      z = lc.triangularView<Eigen::Lower>().solve(z);
      break;
    }
  }
  Matrix x = prior.apply_factor(z);
  x.colwise() += prior.mean();
  return x;
}

// ---------------------------------------------------------------- noise

GaussianNoise GaussianNoise::diagonal(Vector variances) {
  if ((variances.array() <= 0.0).any()) {
    throw NotPositiveDefinite("GaussianNoise: variances must be positive");
  }
  GaussianNoise noise;
  noise.covariance_ = variances.asDiagonal();
  noise.precision_ = variances.cwiseInverse().asDiagonal();
  return noise;
}

GaussianNoise GaussianNoise::from_covariance(Matrix covariance) {
  Eigen::LLT<Matrix> llt(covariance);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("GaussianNoise: covariance");
  GaussianNoise noise;
  noise.precision_ = llt.solve(Matrix::Identity(covariance.rows(), covariance.cols()));
  noise.precision_ = 0.5 * (noise.precision_ + noise.precision_.transpose()).eval();
  noise.covariance_ = std::move(covariance);
  return noise;
}

// ---------------------------------------------------------------- forward map

Matrix ForwardMap::jacobian(const Vector& x) const {
  const Index s = output_dim();
  Matrix j(s, input_dim());
  Vector e = Vector::Zero(s);
  for (Index i = 0; i < s; ++i) {
    e[i] = 1.0;
    j.row(i) = jacobian_transpose_action(x, e).transpose();
    e[i] = 0.0;
  }
  return j;
}

Vector ForwardMap::second_order_action(const Vector&, const Vector&, const Vector&) const {
  throw Error("ForwardMap: second-order derivatives are not available for this map");
}

// ---------------------------------------------------------------- posterior

PosteriorModel::PosteriorModel(GaussianPrior prior, GaussianNoise noise, Vector data,
                               std::shared_ptr<const ForwardMap> forward, HessianKind hessian)
    : prior_(std::move(prior)),
      noise_(std::move(noise)),
      data_(std::move(data)),
      forward_(std::move(forward)),
      hessian_(hessian) {
  require_dim(forward_ != nullptr, "PosteriorModel: no forward map");
  require_dim(forward_->input_dim() == prior_.dim(),
              "PosteriorModel: forward input dimension does not match prior");
  require_dim(forward_->output_dim() == data_.size() && noise_.dim() == data_.size(),
              "PosteriorModel: data, noise and forward output dimensions differ");
  if (hessian_ == HessianKind::full && !forward_->has_second_order()) {
    throw Error("PosteriorModel: full Hessian requested but forward map has no second order");
  }
}

Vector PosteriorModel::checked_forward(const Vector& x) const {
  Vector fx = forward_->evaluate(x);
  if (!fx.allFinite()) throw ForwardSolveFailure("forward map returned non-finite values");
  return fx;
}

double PosteriorModel::potential(const Vector& x) const {
  const Vector r = data_ - checked_forward(x);
  return 0.5 * noise_.weighted_norm_squared(r);
}

double PosteriorModel::log_unnormalized_posterior(const Vector& x) const {
  return -potential(x) + prior_.log_density(x);
}

Vector PosteriorModel::grad_log_posterior(const Vector& x) const {
  const Vector r = data_ - checked_forward(x);
  return forward_->jacobian_transpose_action(x, noise_.apply_precision(r)) -
         prior_.precision() * (x - prior_.mean());
}

Vector PosteriorModel::misfit_hessian_action(const Vector& x, const Vector& v) const {
  Vector hv = forward_->jacobian_transpose_action(
      x, noise_.apply_precision(forward_->jacobian_action(x, v)));
  if (hessian_ == HessianKind::full) {
    const Vector wr = noise_.apply_precision(data_ - checked_forward(x));
    hv -= forward_->second_order_action(x, wr, v);
  }
  return hv;
}

Vector PosteriorModel::gauss_newton_hessian_action(const Vector& x, const Vector& v) const {
  return misfit_hessian_action(x, v) + prior_.precision() * v;
}

Linearization PosteriorModel::linearize(const Vector& x) const {
  Linearization lin;
  lin.forward = checked_forward(x);
  lin.residual = data_ - lin.forward;
  lin.jacobian = forward_->jacobian(x);
  const Vector wr = noise_.apply_precision(lin.residual);
  lin.potential = 0.5 * lin.residual.dot(wr);
  lin.potential_gradient = -lin.jacobian.transpose() * wr;
  return lin;
}

Matrix PosteriorModel::misfit_hessian_in(const Vector& x, const Linearization& lin,
                                         const Matrix& d) const {
  const Matrix jd = lin.jacobian * d;
  Matrix h = jd.transpose() * noise_.precision() * jd;
  if (hessian_ == HessianKind::full) {
    const Vector wr = noise_.apply_precision(lin.residual);
    Matrix second(d.rows(), d.cols());
    for (Index j = 0; j < d.cols(); ++j) {
      second.col(j) = forward_->second_order_action(x, wr, d.col(j));
    }
    h -= d.transpose() * second;
  }
  return 0.5 * (h + h.transpose());
}

Matrix PosteriorModel::hessian_matrix(const Vector& x) const {
  const Linearization lin = linearize(x);
  return misfit_hessian_in(x, lin, Matrix::Identity(dim(), dim())) + prior_.precision();
}

}  // namespace psvn
