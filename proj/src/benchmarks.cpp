#include "psvn/benchmarks.hpp"

#include "psvn/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace psvn::bench {

FemMatrices1D fem_matrices(Index nodes) {
  if (nodes < 3) throw ConfigInvalid("fem_matrices: need at least 3 nodes");
  FemMatrices1D fem;
  fem.nodes = nodes;
  fem.h = 1.0 / static_cast<double>(nodes - 1);
  const double h = fem.h;
  fem.stiffness = Matrix::Zero(nodes, nodes);
  fem.mass = Matrix::Zero(nodes, nodes);
  for (Index e = 0; e + 1 < nodes; ++e) {
    fem.stiffness(e, e) += 1.0 / h;
    fem.stiffness(e + 1, e + 1) += 1.0 / h;
    fem.stiffness(e, e + 1) -= 1.0 / h;
    fem.stiffness(e + 1, e) -= 1.0 / h;
    fem.mass(e, e) += h / 3.0;
    fem.mass(e + 1, e + 1) += h / 3.0;
    fem.mass(e, e + 1) += h / 6.0;
    fem.mass(e + 1, e) += h / 6.0;
  }
  fem.lumped_mass = fem.mass.rowwise().sum();
  return fem;
}

Matrix laplacian_prior_precision(const FemMatrices1D& fem, double alpha) {
  Matrix p = alpha * fem.stiffness;
  p.diagonal() += fem.lumped_mass;
  return p;
}

Matrix bilaplacian_prior_precision(const FemMatrices1D& fem, double alpha) {
  const Matrix p = laplacian_prior_precision(fem, alpha);
  Matrix out = p * fem.lumped_mass.cwiseInverse().asDiagonal() * p;
  return 0.5 * (out + out.transpose());
}

namespace {

// Linear interpolation weights of nodal values at the points t.
Matrix interpolation_operator(const Vector& t, Index nodes) {
  const double h = 1.0 / static_cast<double>(nodes - 1);
  Matrix o = Matrix::Zero(t.size(), nodes);
  for (Index i = 0; i < t.size(); ++i) {
    const double pos = t[i] / h;
    Index e = static_cast<Index>(std::floor(pos));
    e = std::clamp<Index>(e, 0, nodes - 2);
    double theta = pos - static_cast<double>(e);
    if (std::abs(theta) < 1e-12) theta = 0.0;
    if (std::abs(theta - 1.0) < 1e-12) theta = 1.0;
    o(i, e) += 1.0 - theta;
    o(i, e + 1) += theta;
  }
  return o;
}

std::shared_ptr<const PosteriorModel> make_model(GaussianPrior prior, double noise_std,
                                                 Vector data,
                                                 std::shared_ptr<const ForwardMap> forward,
                                                 HessianKind hessian) {
  const Index s = data.size();
  return std::make_shared<const PosteriorModel>(
      std::move(prior), GaussianNoise::diagonal(Vector::Constant(s, noise_std * noise_std)),
      std::move(data), std::move(forward), hessian);
}

}  // namespace

LinearPdeProblem assemble_linear_problem(int n, const LinearProblemOptions& options) {
  if (n < 2 || n > 20) throw ConfigInvalid("assemble_linear_problem: n must be in [2, 20]");
  const Index d = (Index{1} << n) + 1;
  const Index s = options.observations;
  if (s < 1 || s > d - 2) {
    throw ConfigInvalid("assemble_linear_problem: observations must be in [1, d-2]");
  }
  if (!(options.noise_pct > 0.0)) throw ConfigInvalid("assemble_linear_problem: noise_pct <= 0");

  LinearPdeProblem p;
  p.n = n;
  p.d = d;
  p.options = options;
  p.fem = fem_matrices(d);
  p.h = p.fem.h;

  p.observation_points.resize(s);
  for (Index i = 0; i < s; ++i) {
    p.observation_points[i] = static_cast<double>(i + 1) / static_cast<double>(s + 1);
  }
  p.observation = interpolation_operator(p.observation_points, d);

  // Interior block of K + M, tridiagonal.
  const Index ni = d - 2;
  const Matrix km = p.fem.stiffness + p.fem.mass;
  Vector diag(ni), off(ni - 1);
  for (Index i = 0; i < ni; ++i) diag[i] = km(i + 1, i + 1);
  for (Index i = 0; i + 1 < ni; ++i) off[i] = km(i + 1, i + 2);

  // A^T = M_{:,I} (K+M)_II^{-1} O_I^T.
  const Matrix oi_t = p.observation.middleCols(1, ni).transpose();
  const Matrix z = la::solve_tridiagonal(off, diag, off, oi_t);
  const Matrix at = p.fem.mass.middleCols(1, ni) * z;
  p.forward_matrix = at.transpose();

  // Lift: x = 0, u(0) = 0, u(1) = 1.
  Vector rhs = Vector::Zero(ni);
  rhs[ni - 1] = -km(d - 2, d - 1);
  Vector lift = Vector::Zero(d);
  lift.segment(1, ni) = la::solve_tridiagonal(off, diag, off, rhs);
  lift[d - 1] = 1.0;
  p.lift_observed = p.observation * lift;

  GaussianPrior prior =
      GaussianPrior::from_precision(Vector::Zero(d), laplacian_prior_precision(p.fem, 0.1));
  Engine truth_engine = make_engine(options.seed, 1);
  p.truth = prior.apply_factor(standard_normal(d, truth_engine));

  const Vector clean = p.forward_matrix * p.truth;
  p.noise_std = options.noise_pct * (clean + p.lift_observed).cwiseAbs().maxCoeff();
  Engine noise_engine = make_engine(options.seed, 2);
  p.data = clean + p.noise_std * standard_normal(s, noise_engine);

  p.model = make_model(std::move(prior), p.noise_std, p.data,
                       std::make_shared<const LinearForwardMap>(p.forward_matrix),
                       HessianKind::gauss_newton);
  return p;
}

// ---------------------------------------------------------------- lognormal flow

struct LognormalForwardMap::Quadrature {
  Vector cumulative;   // C_j, j = 0..d-1
  double total = 0.0;  // T = C_{d-1}
  Vector weights;      // e^{-x_k}
};

LognormalForwardMap::LognormalForwardMap(Index nodes, std::vector<Index> observed_nodes)
    : nodes_(nodes), h_(1.0 / static_cast<double>(nodes - 1)), observed_(std::move(observed_nodes)) {
  if (nodes < 3) throw ConfigInvalid("LognormalForwardMap: need at least 3 nodes");
  for (Index j : observed_) {
    if (j < 0 || j >= nodes) throw ConfigInvalid("LognormalForwardMap: observed node out of range");
  }
}

LognormalForwardMap::Quadrature LognormalForwardMap::integrate(const Vector& x) const {
  require_dim(x.size() == nodes_, "LognormalForwardMap: parameter dimension");
  Quadrature q;
  q.weights = (-x.array()).exp().matrix();
  q.cumulative.resize(nodes_);
  q.cumulative[0] = 0.0;
  for (Index e = 0; e + 1 < nodes_; ++e) {
    q.cumulative[e + 1] = q.cumulative[e] + 0.5 * h_ * (q.weights[e] + q.weights[e + 1]);
  }
  q.total = q.cumulative[nodes_ - 1];
  if (!(q.total > 0.0) || !std::isfinite(q.total)) {
    throw ForwardSolveFailure("LognormalForwardMap: flux integral is not finite and positive");
  }
  return q;
}

Vector LognormalForwardMap::state(const Vector& x) const {
  const Quadrature q = integrate(x);
  return q.cumulative / q.total;
}

Vector LognormalForwardMap::evaluate(const Vector& x) const {
  const Quadrature q = integrate(x);
  Vector out(output_dim());
  for (Index i = 0; i < output_dim(); ++i) {
    out[i] = q.cumulative[observed_[static_cast<std::size_t>(i)]] / q.total;
  }
  return out;
}

Matrix LognormalForwardMap::jacobian(const Vector& x) const {
  const Quadrature q = integrate(x);
  const Index d = nodes_;
  // dT/dx_k = -(h/2) e^{-x_k} times the number of elements touching node k.
  Vector dt(d);
  for (Index k = 0; k < d; ++k) {
    const double touching = (k == 0 || k == d - 1) ? 1.0 : 2.0;
    dt[k] = -0.5 * h_ * q.weights[k] * touching;
  }
  Matrix jac = Matrix::Zero(output_dim(), d);
  for (Index i = 0; i < output_dim(); ++i) {
    const Index j = observed_[static_cast<std::size_t>(i)];
    const double u = q.cumulative[j] / q.total;
    for (Index k = 0; k < d; ++k) {
      // Elements e < j that touch node k: e = k - 1 and e = k.
      double count = 0.0;
      if (k >= 1 && k - 1 < j) count += 1.0;
      if (k < j && k <= d - 2) count += 1.0;
      const double dc = -0.5 * h_ * q.weights[k] * count;
      jac(i, k) = (dc - u * dt[k]) / q.total;
    }
  }
  return jac;
}

Vector LognormalForwardMap::jacobian_action(const Vector& x, const Vector& v) const {
  return jacobian(x) * v;
}

Vector LognormalForwardMap::jacobian_transpose_action(const Vector& x, const Vector& u) const {
  return jacobian(x).transpose() * u;
}

Vector LognormalForwardMap::second_order_action(const Vector& x, const Vector& u,
                                                const Vector& v) const {
  const Quadrature q = integrate(x);
  const Index d = nodes_;
  Vector dt(d);
  for (Index k = 0; k < d; ++k) {
    const double touching = (k == 0 || k == d - 1) ? 1.0 : 2.0;
    dt[k] = -0.5 * h_ * q.weights[k] * touching;
  }
  const Matrix jac = jacobian(x);
  // Hess(u_j) v = -grad(u_j) o v - [dT (grad(u_j).v) + grad(u_j) (dT.v)] / T.
  const Vector jtu = jac.transpose() * u;
  const double ujv = u.dot(jac * v);
  const double tv = dt.dot(v);
  return -jtu.cwiseProduct(v) - (dt * ujv + jtu * tv) / q.total;
}

LognormalFlowProblem assemble_lognormal_problem(Index d, Index s, double noise_pct,
                                                std::uint64_t seed, HessianKind hessian) {
  if (d < 9) throw ConfigInvalid("assemble_lognormal_problem: d must be >= 9");
  if (s < 1 || s > d - 2) throw ConfigInvalid("assemble_lognormal_problem: s must be in [1, d-2]");
  if (!(noise_pct > 0.0)) throw ConfigInvalid("assemble_lognormal_problem: noise_pct <= 0");

  LognormalFlowProblem p;
  p.d = d;
  p.s = s;
  p.noise_pct = noise_pct;
  p.seed = seed;
  p.hessian = hessian;
  p.fem = fem_matrices(d);

  std::set<Index> seen;
  for (Index i = 1; i <= s; ++i) {
    Index j = static_cast<Index>(std::llround(static_cast<double>(i * (d - 1)) /
                                              static_cast<double>(s + 1)));
    j = std::clamp<Index>(j, 1, d - 2);
    if (!seen.insert(j).second) {
      throw ConfigInvalid("assemble_lognormal_problem: observation nodes collide; reduce s");
    }
    p.observation_indices.push_back(j);
  }
  p.forward = std::make_shared<const LognormalForwardMap>(d, p.observation_indices);

  GaussianPrior prior =
      GaussianPrior::from_precision(Vector::Zero(d), bilaplacian_prior_precision(p.fem, 0.1));
  Engine truth_engine = make_engine(seed, 1);
  p.truth = prior.apply_factor(standard_normal(d, truth_engine));
  const Vector clean = p.forward->evaluate(p.truth);
  p.noise_std = noise_pct * clean.cwiseAbs().maxCoeff();
  Engine noise_engine = make_engine(seed, 2);
  p.data = clean + p.noise_std * standard_normal(s, noise_engine);

  p.model = make_model(std::move(prior), p.noise_std, p.data, p.forward, hessian);
  return p;
}

// ---------------------------------------------------------------- analytic posterior

AnalyticGaussianPosterior analytic_posterior(const PosteriorModel& model) {
  if (!model.forward().is_linear()) {
    throw Error("analytic_posterior: forward map is not linear");
  }
  const GaussianPrior& prior = model.prior();
  const Index d = model.dim();
  const Matrix a = model.forward().jacobian(prior.mean());
  const Matrix& w = model.noise().precision();
  const auto lower = prior.factor().triangularView<Eigen::Lower>();

  // Whitened precision I + L^T A^T W A L.
  const Matrix al = a * lower;
  Matrix whitened = al.transpose() * w * al;
  whitened.diagonal().array() += 1.0;
  Eigen::LLT<Matrix> llt(whitened);
  if (llt.info() != Eigen::Success) {
    throw SingularSystem("analytic_posterior: posterior precision is numerically singular");
  }
  const Matrix lt = prior.factor().transpose();
  const Matrix inner = llt.solve(lt);
  AnalyticGaussianPosterior post;
  post.covariance = lower * inner;
  post.covariance = 0.5 * (post.covariance + post.covariance.transpose()).eval();
  const Vector rhs = a.transpose() * (w * (model.data() - a * prior.mean()));
  post.mean = prior.mean() + post.covariance * rhs;
  if (!post.covariance.allFinite() || !post.mean.allFinite() || d == 0) {
    throw SingularSystem("analytic_posterior: non-finite result");
  }
  return post;
}

AnalyticGaussianPosterior analytic_posterior(const LinearPdeProblem& problem) {
  return analytic_posterior(*problem.model);
}

// ---------------------------------------------------------------- pCN

namespace {

// Running mean and sum of squared deviations.
struct Welford {
  Index count = 0;
  Vector mean;
  Vector m2;

  explicit Welford(Index d) : mean(Vector::Zero(d)), m2(Vector::Zero(d)) {}

  void add(const Vector& x) {
    ++count;
    const Vector delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta.cwiseProduct(x - mean);
  }
  Vector variance() const {
    if (count < 2) return Vector::Zero(mean.size());
    return m2 / static_cast<double>(count - 1);
  }
};

}  // namespace

PcnResult pcn_reference_sampler(const PosteriorModel& model, Index steps, double beta,
                                std::uint64_t seed, const Vector& start) {
  if (!(beta > 0.0 && beta <= 1.0)) throw ConfigInvalid("pcn: beta must be in (0, 1]");
  if (steps < 10) throw ConfigInvalid("pcn: steps too small");
  const GaussianPrior& prior = model.prior();
  const Index d = model.dim();
  Vector x = start.size() == 0 ? prior.mean() : start;
  require_dim(x.size() == d, "pcn: start has wrong dimension");

  Engine engine = make_engine(seed, 0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double rho = std::sqrt(1.0 - beta * beta);
  const Index burn = steps / 5;

  double eta = model.potential(x);
  Index accepted = 0;
  Welford stats(d);
  for (Index step = 0; step < steps; ++step) {
    const Vector z = standard_normal(d, engine);
    Vector proposal = prior.mean() + rho * (x - prior.mean()) + beta * prior.apply_factor(z);
    double eta_new = 0.0;
    bool ok = true;
    try {
      eta_new = model.potential(proposal);
    } catch (const ForwardSolveFailure&) {
      ok = false;
    }
    const double u = uniform(engine);
    if (ok && std::log(u) < eta - eta_new) {
      x = std::move(proposal);
      eta = eta_new;
      ++accepted;
    }
    if (step >= burn) stats.add(x);
  }
  PcnResult result;
  result.mean = stats.mean;
  result.variance = stats.variance();
  result.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(steps);
  result.samples = stats.count;
  return result;
}

PcnReference pcn_reference(const PosteriorModel& model, int chains, Index steps, double beta,
                           std::uint64_t seed) {
  if (chains < 2) throw ConfigInvalid("pcn_reference: need at least 2 chains");
  const Matrix starts = sample_prior(model.prior(), chains, derive_seed(seed, 100));
  PcnReference ref;
  for (int c = 0; c < chains; ++c) {
    ref.chains.push_back(pcn_reference_sampler(model, steps, beta,
                                               derive_seed(seed, static_cast<std::uint64_t>(c)),
                                               starts.col(c)));
  }
  const Index d = model.dim();
  const double m = static_cast<double>(chains);
  const double n = static_cast<double>(ref.chains.front().samples);
  Vector grand = Vector::Zero(d);
  Vector within = Vector::Zero(d);
  for (const PcnResult& c : ref.chains) {
    grand += c.mean;
    within += c.variance;
    ref.acceptance_rate += c.acceptance_rate;
  }
  grand /= m;
  within /= m;
  ref.acceptance_rate /= m;
  Vector between = Vector::Zero(d);  // B / n
  for (const PcnResult& c : ref.chains) between += (c.mean - grand).cwiseAbs2();
  between /= (m - 1.0);

  ref.mean = grand;
  // Pooled variance of all retained samples.
  Vector pooled = Vector::Zero(d);
  for (const PcnResult& c : ref.chains) {
    pooled += (n - 1.0) * c.variance + n * (c.mean - grand).cwiseAbs2();
  }
  ref.variance = pooled / (m * n - 1.0);

  // Gelman-Rubin: Vhat = (n-1)/n W + B/n, Rhat = sqrt(Vhat / W).
  ref.max_rhat = 0.0;
  for (Index i = 0; i < d; ++i) {
    if (within[i] <= 0.0) continue;
    const double vhat = (n - 1.0) / n * within[i] + between[i];
    ref.max_rhat = std::max(ref.max_rhat, std::sqrt(vhat / within[i]));
  }
  return ref;
}

// ---------------------------------------------------------------- descriptors

nlohmann::json descriptor(const LinearPdeProblem& problem) {
  nlohmann::json j;
  j["problem"] = "linear1d";
  j["n"] = problem.n;
  j["nodes"] = problem.d;
  j["observations"] = problem.options.observations;
  j["noise_pct"] = problem.options.noise_pct;
  j["seed"] = problem.options.seed;
  j["noise_std"] = problem.noise_std;
  j["observation_points"] = std::vector<double>(problem.observation_points.data(),
                                                problem.observation_points.data() +
                                                    problem.observation_points.size());
  return j;
}

nlohmann::json descriptor(const LognormalFlowProblem& problem) {
  nlohmann::json j;
  j["problem"] = "lognormal1d";
  j["nodes"] = problem.d;
  j["observations"] = problem.s;
  j["noise_pct"] = problem.noise_pct;
  j["seed"] = problem.seed;
  j["hessian"] = problem.hessian == HessianKind::full ? "full" : "gauss_newton";
  j["noise_std"] = problem.noise_std;
  j["observation_indices"] = problem.observation_indices;
  return j;
}

DescribedProblem problem_from_descriptor(const nlohmann::json& desc) {
  if (!desc.is_object() || !desc.contains("problem")) {
    throw ConfigInvalid("problem descriptor: missing \"problem\"");
  }
  const std::string kind = desc.at("problem").get<std::string>();
  // Derived, output-only fields are accepted and ignored.
  const std::set<std::string> derived = {"noise_std", "observation_points", "observation_indices"};
  DescribedProblem out;
  try {
    if (kind == "linear1d") {
      const std::set<std::string> allowed = {"problem", "n", "nodes", "observations", "noise_pct",
                                             "seed"};
      for (const auto& [key, value] : desc.items()) {
        if (!allowed.count(key) && !derived.count(key)) {
          throw ConfigInvalid("problem descriptor: unknown key \"" + key + "\"");
        }
      }
      LinearProblemOptions opt;
      opt.observations = desc.value("observations", opt.observations);
      opt.noise_pct = desc.value("noise_pct", opt.noise_pct);
      opt.seed = desc.value("seed", opt.seed);
      if (!desc.contains("n")) throw ConfigInvalid("problem descriptor: linear1d needs \"n\"");
      const int n = desc.at("n").get<int>();
      LinearPdeProblem p = assemble_linear_problem(n, opt);
      if (desc.contains("nodes") && desc.at("nodes").get<Index>() != p.d) {
        throw ConfigInvalid("problem descriptor: nodes inconsistent with n");
      }
      out.descriptor = descriptor(p);
      out.model = p.model;
      out.mass = p.fem.mass;
      out.linear = true;
    } else if (kind == "lognormal1d") {
      const std::set<std::string> allowed = {"problem", "nodes", "observations", "noise_pct",
                                             "seed", "hessian"};
      for (const auto& [key, value] : desc.items()) {
        if (!allowed.count(key) && !derived.count(key)) {
          throw ConfigInvalid("problem descriptor: unknown key \"" + key + "\"");
        }
      }
      if (!desc.contains("nodes")) throw ConfigInvalid("problem descriptor: lognormal1d needs \"nodes\"");
      const Index d = desc.at("nodes").get<Index>();
      const Index s = desc.value("observations", Index{15});
      const double pct = desc.value("noise_pct", 0.01);
      const std::uint64_t seed = desc.value("seed", std::uint64_t{0});
      const std::string hk = desc.value("hessian", std::string("gauss_newton"));
      HessianKind hessian;
      if (hk == "gauss_newton") {
        hessian = HessianKind::gauss_newton;
      } else if (hk == "full") {
        hessian = HessianKind::full;
      } else {
        throw ConfigInvalid("problem descriptor: hessian must be gauss_newton or full");
      }
      LognormalFlowProblem p = assemble_lognormal_problem(d, s, pct, seed, hessian);
      out.descriptor = descriptor(p);
      out.model = p.model;
      out.mass = p.fem.mass;
      out.linear = false;
    } else {
      throw ConfigInvalid("problem descriptor: unknown problem \"" + kind + "\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid(std::string("problem descriptor: ") + e.what());
  }
  return out;
}

}  // namespace psvn::bench
