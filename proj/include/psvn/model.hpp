#pragma once

#include "psvn/common.hpp"

#include <memory>

namespace psvn {

/// Gaussian prior N(mean, Gamma0) stored densely with its precision and the
/// cached Cholesky factor of the covariance.
class GaussianPrior {
 public:
  static GaussianPrior from_covariance(Vector mean, Matrix covariance);
  static GaussianPrior from_precision(Vector mean, Matrix precision);

  Index dim() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return covariance_; }
  const Matrix& precision() const { return precision_; }
  /// Lower-triangular L with L L^T = covariance.
  const Matrix& factor() const { return factor_; }

  Matrix apply_covariance(const Matrix& v) const { return covariance_ * v; }
  Matrix apply_precision(const Matrix& v) const { return precision_ * v; }
  Matrix apply_factor(const Matrix& z) const;

  /// -1/2 (x - mean)^T Gamma0^{-1} (x - mean); normalization dropped.
  double log_density(const Vector& x) const;

 private:
  GaussianPrior(Vector mean, Matrix covariance, Matrix precision);

  Vector mean_;
  Matrix covariance_;
  Matrix precision_;
  Matrix factor_;
};

/// How an initial ensemble is drawn from the prior.
enum class InitSampling {
  iid,             // independent draws
  antithetic,      // pairs (mean + Lz, mean - Lz); exact sample mean
  moment_matched,  // exact sample mean and covariance (needs count > dim)
};

/// `count` prior draws as the columns of a dim x count matrix. Column i uses
/// its own RNG stream derived from (seed, i), so a column does not depend on how
/// many columns are drawn or on how particles are later partitioned.
Matrix sample_prior(const GaussianPrior& prior, Index count, std::uint64_t seed);
Matrix sample_prior(const GaussianPrior& prior, Index count, std::uint64_t seed,
                    InitSampling mode);

/// Gaussian observation noise N(0, Gamma).
class GaussianNoise {
 public:
  static GaussianNoise diagonal(Vector variances);
  static GaussianNoise from_covariance(Matrix covariance);

  Index dim() const { return precision_.rows(); }
  const Matrix& covariance() const { return covariance_; }
  const Matrix& precision() const { return precision_; }
  Vector apply_precision(const Vector& v) const { return precision_ * v; }
  /// v^T Gamma^{-1} v.
  double weighted_norm_squared(const Vector& v) const { return v.dot(precision_ * v); }

 private:
  Matrix covariance_;
  Matrix precision_;
};

/// Parameter-to-observable map f: R^d -> R^s.
class ForwardMap {
 public:
  virtual ~ForwardMap() = default;

  virtual Index input_dim() const = 0;
  virtual Index output_dim() const = 0;
  virtual Vector evaluate(const Vector& x) const = 0;
  virtual Vector jacobian_action(const Vector& x, const Vector& v) const = 0;
  virtual Vector jacobian_transpose_action(const Vector& x, const Vector& u) const = 0;
  /// Dense s x d Jacobian; the default assembles it from s transpose actions.
  virtual Matrix jacobian(const Vector& x) const;

  virtual bool is_linear() const { return false; }
  /// Whether second_order_action is implemented.
  virtual bool has_second_order() const { return false; }
  /// sum_i u_i * Hess(f_i)(x) v.
  virtual Vector second_order_action(const Vector& x, const Vector& u, const Vector& v) const;
};

/// f(x) = A x.
class LinearForwardMap final : public ForwardMap {
 public:
  explicit LinearForwardMap(Matrix a) : a_(std::move(a)) {}

  Index input_dim() const override { return a_.cols(); }
  Index output_dim() const override { return a_.rows(); }
  Vector evaluate(const Vector& x) const override { return a_ * x; }
  Vector jacobian_action(const Vector&, const Vector& v) const override { return a_ * v; }
  Vector jacobian_transpose_action(const Vector&, const Vector& u) const override {
    return a_.transpose() * u;
  }
  Matrix jacobian(const Vector&) const override { return a_; }
  bool is_linear() const override { return true; }
  bool has_second_order() const override { return true; }
  Vector second_order_action(const Vector&, const Vector&, const Vector& v) const override {
    return Vector::Zero(v.size());
  }

  const Matrix& matrix() const { return a_; }

 private:
  Matrix a_;
};

enum class HessianKind { gauss_newton, full };

/// Everything the transport engines need from one forward evaluation.
struct Linearization {
  Vector forward;             // f(x)
  Vector residual;            // y - f(x)
  Matrix jacobian;            // J(x), s x d
  double potential = 0.0;     // eta_y(x) = 1/2 ||y - f(x)||_Gamma^2
  Vector potential_gradient;  // grad eta_y(x) = -J^T Gamma^{-1} (y - f(x))
};

/// Posterior p_y(x) = p_noise(y - f(x)) p0(x), up to normalization.
class PosteriorModel {
 public:
  PosteriorModel(GaussianPrior prior, GaussianNoise noise, Vector data,
                 std::shared_ptr<const ForwardMap> forward,
                 HessianKind hessian = HessianKind::gauss_newton);

  const GaussianPrior& prior() const { return prior_; }
  const GaussianNoise& noise() const { return noise_; }
  const Vector& data() const { return data_; }
  const ForwardMap& forward() const { return *forward_; }
  std::shared_ptr<const ForwardMap> forward_ptr() const { return forward_; }
  Index dim() const { return prior_.dim(); }
  Index data_dim() const { return data_.size(); }
  HessianKind hessian_kind() const { return hessian_; }
  /// True when the likelihood Hessian does not depend on x (linear f with the
  /// Gauss-Newton or full Hessian, which then coincide).
  bool hessian_is_constant() const { return forward_->is_linear(); }

  /// eta_y(x) = 1/2 ||y - f(x)||_Gamma^2.
  double potential(const Vector& x) const;
  double log_unnormalized_posterior(const Vector& x) const;
  Vector grad_log_posterior(const Vector& x) const;
  /// (J^T Gamma^{-1} J + Gamma0^{-1}) v; with HessianKind::full the second-order
  /// term of f is included.
  Vector gauss_newton_hessian_action(const Vector& x, const Vector& v) const;
  /// Likelihood part only: J^T Gamma^{-1} J v (plus second order when full).
  Vector misfit_hessian_action(const Vector& x, const Vector& v) const;

  Linearization linearize(const Vector& x) const;
  /// D^T Hmisfit(x) D for the likelihood part of the Hessian at a linearization
  /// point; D is d x k.
  Matrix misfit_hessian_in(const Vector& x, const Linearization& lin, const Matrix& d) const;
  /// Dense -Hess log p_y(x) (Gauss-Newton or full), d x d.
  Matrix hessian_matrix(const Vector& x) const;

 private:
  Vector checked_forward(const Vector& x) const;

  GaussianPrior prior_;
  GaussianNoise noise_;
  Vector data_;
  std::shared_ptr<const ForwardMap> forward_;
  HessianKind hessian_;
};

}  // namespace psvn
