#include "psvn/benchmarks.hpp"
#include "psvn/diagnostics.hpp"
#include "psvn/parallel.hpp"
#include "psvn/subspace.hpp"
#include "psvn/transport.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace psvn;

namespace {

using ModelPtr = std::shared_ptr<PosteriorModel>;

ModelPtr mutable_model(const std::shared_ptr<const PosteriorModel>& m) {
  return std::const_pointer_cast<PosteriorModel>(m);
}

InitSampling init_from_string(const std::string& s) {
  if (s == "iid") return InitSampling::iid;
  if (s == "antithetic") return InitSampling::antithetic;
  if (s == "moment_matched") return InitSampling::moment_matched;
  throw ConfigInvalid("unknown init sampling \"" + s + "\"");
}

std::string init_name(InitSampling s) {
  switch (s) {
    case InitSampling::iid: return "iid";
    case InitSampling::antithetic: return "antithetic";
    case InitSampling::moment_matched: return "moment_matched";
  }
  return "iid";
}

py::dict record_dict(const transport::IterationRecord& r) {
  py::dict d;
  d["iteration"] = r.iteration;
  d["outer"] = r.outer;
  d["max_update"] = r.max_update;
  d["max_grad"] = r.max_grad;
  d["step"] = r.step;
  d["objective"] = r.objective;
  d["stalled"] = r.stalled;
  d["t_variation"] = r.times.variation;
  d["t_kernel"] = r.times.kernel;
  d["t_solve"] = r.times.solve;
  d["t_sample"] = r.times.sample;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Projected Stein variational Newton with SVGD and SVN baselines";

  py::register_exception<ConfigInvalid>(m, "ConfigInvalid", PyExc_ValueError);
  py::register_exception<DimensionMismatch>(m, "DimensionMismatch", PyExc_ValueError);
  py::register_exception<ForwardSolveFailure>(m, "ForwardSolveFailure", PyExc_RuntimeError);
  py::register_exception<SolveFailure>(m, "SolveFailure", PyExc_RuntimeError);
  py::register_exception<SingularCovariance>(m, "SingularCovariance", PyExc_ValueError);

  py::class_<PosteriorModel, ModelPtr>(m, "PosteriorModel")
      .def_property_readonly("dim", &PosteriorModel::dim)
      .def_property_readonly("data_dim", &PosteriorModel::data_dim)
      .def_property_readonly("prior_mean", [](const PosteriorModel& p) { return p.prior().mean(); })
      .def_property_readonly("prior_covariance", [](const PosteriorModel& p) { return p.prior().covariance(); })
      .def_property_readonly("data", &PosteriorModel::data)
      .def("potential", &PosteriorModel::potential, py::arg("x"))
      .def("log_posterior", &PosteriorModel::log_unnormalized_posterior, py::arg("x"))
      .def("grad_log_posterior", &PosteriorModel::grad_log_posterior, py::arg("x"))
      .def("hessian_action", &PosteriorModel::gauss_newton_hessian_action, py::arg("x"), py::arg("v"));

  py::class_<bench::LinearPdeProblem>(m, "LinearProblem")
      .def_readonly("d", &bench::LinearPdeProblem::d)
      .def_readonly("forward_matrix", &bench::LinearPdeProblem::forward_matrix)
      .def_readonly("truth", &bench::LinearPdeProblem::truth)
      .def_readonly("data", &bench::LinearPdeProblem::data)
      .def_readonly("noise_std", &bench::LinearPdeProblem::noise_std)
      .def_property_readonly("mass", [](const bench::LinearPdeProblem& p) { return p.fem.mass; })
      .def_property_readonly("model", [](const bench::LinearPdeProblem& p) { return mutable_model(p.model); });

  py::class_<bench::LognormalFlowProblem>(m, "LognormalProblem")
      .def_readonly("d", &bench::LognormalFlowProblem::d)
      .def_readonly("s", &bench::LognormalFlowProblem::s)
      .def_readonly("truth", &bench::LognormalFlowProblem::truth)
      .def_readonly("data", &bench::LognormalFlowProblem::data)
      .def_readonly("noise_std", &bench::LognormalFlowProblem::noise_std)
      .def_property_readonly("mass", [](const bench::LognormalFlowProblem& p) { return p.fem.mass; })
      .def_property_readonly("model", [](const bench::LognormalFlowProblem& p) { return mutable_model(p.model); });

  m.def(
      "linear_problem",
      [](int n, Index observations, double noise_pct, std::uint64_t seed) {
        return bench::assemble_linear_problem(n, {observations, noise_pct, seed});
      },
      py::arg("n"), py::arg("observations") = 15, py::arg("noise_pct") = 0.01, py::arg("seed") = 0,
      "Linear elliptic benchmark on 2^n + 1 nodes.");
  m.def(
      "lognormal_problem",
      [](Index d, Index s, double noise_pct, std::uint64_t seed) {
        return bench::assemble_lognormal_problem(d, s, noise_pct, seed);
      },
      py::arg("d"), py::arg("observations") = 15, py::arg("noise_pct") = 0.01, py::arg("seed") = 0);
  m.def(
      "analytic_posterior",
      [](const bench::LinearPdeProblem& p) {
        const auto post = bench::analytic_posterior(p);
        return py::make_tuple(post.mean, post.covariance);
      },
      py::arg("problem"), "(mean, covariance) of the linear posterior.");
  m.def(
      "pcn_reference",
      [](const ModelPtr& model, int chains, Index steps, double beta, std::uint64_t seed) {
        const auto r = bench::pcn_reference(*model, chains, steps, beta, seed);
        py::dict d;
        d["mean"] = r.mean;
        d["variance"] = r.variance;
        d["max_rhat"] = r.max_rhat;
        d["acceptance_rate"] = r.acceptance_rate;
        return d;
      },
      py::arg("model"), py::arg("chains") = 4, py::arg("steps") = 200000, py::arg("beta") = 0.2,
      py::arg("seed") = 11);
  m.def(
      "sample_prior",
      [](const ModelPtr& model, Index count, std::uint64_t seed, const std::string& init) {
        return sample_prior(model->prior(), count, seed, init_from_string(init));
      },
      py::arg("model"), py::arg("count"), py::arg("seed") = 0, py::arg("init") = "iid");

  py::class_<subspace::SubspaceBasis>(m, "SubspaceBasis")
      .def_readonly("psi", &subspace::SubspaceBasis::psi)
      .def_readonly("eigenvalues", &subspace::SubspaceBasis::eigenvalues)
      .def_property_readonly("rank", &subspace::SubspaceBasis::rank)
      .def("project", [](const subspace::SubspaceBasis& b, const Matrix& x) { return subspace::project(b, x).w; });
  m.def(
      "build_basis",
      [](const ModelPtr& model, const Matrix& ensemble, double eps_lambda, Index max_rank, std::uint64_t seed) {
        subspace::BasisOptions o;
        o.eps_lambda = eps_lambda;
        o.max_rank = max_rank;
        o.seed = seed;
        return subspace::build_basis(*model, ensemble, o);
      },
      py::arg("model"), py::arg("ensemble"), py::arg("eps_lambda") = 0.01, py::arg("max_rank") = 32,
      py::arg("seed") = 0);

  py::class_<transport::TransportConfig>(m, "TransportConfig")
      .def(py::init<>())
      .def_property(
          "method", [](const transport::TransportConfig& c) { return transport::to_string(c.method); },
          [](transport::TransportConfig& c, const std::string& s) { c.method = transport::method_from_string(s); })
      .def_property(
          "lumping", [](const transport::TransportConfig& c) { return transport::to_string(c.lumping); },
          [](transport::TransportConfig& c, const std::string& s) { c.lumping = transport::lumping_from_string(s); })
      .def_property(
          "init", [](const transport::TransportConfig& c) { return init_name(c.init); },
          [](transport::TransportConfig& c, const std::string& s) { c.init = init_from_string(s); })
      .def_readwrite("particles", &transport::TransportConfig::particles)
      .def_readwrite("max_iterations", &transport::TransportConfig::max_iterations)
      .def_readwrite("tol_update", &transport::TransportConfig::tol_update)
      .def_readwrite("tol_gradient", &transport::TransportConfig::tol_gradient)
      .def_readwrite("outer_iterations", &transport::TransportConfig::outer_iterations)
      .def_readwrite("stagnation_angle", &transport::TransportConfig::stagnation_angle)
      .def_readwrite("metric_refresh", &transport::TransportConfig::metric_refresh)
      .def_readwrite("damping", &transport::TransportConfig::damping)
      .def_property(
          "eps_lambda", [](const transport::TransportConfig& c) { return c.basis.eps_lambda; },
          [](transport::TransportConfig& c, double v) { c.basis.eps_lambda = v; })
      .def_property(
          "line_search", [](const transport::TransportConfig& c) { return c.line_search.enabled; },
          [](transport::TransportConfig& c, bool v) { c.line_search.enabled = v; })
      .def_property(
          "per_sample_line_search", [](const transport::TransportConfig& c) { return c.line_search.per_sample; },
          [](transport::TransportConfig& c, bool v) { c.line_search.per_sample = v; })
      .def("validate", &transport::TransportConfig::validate);

  m.def(
      "run",
      [](const ModelPtr& model, const transport::TransportConfig& config, std::uint64_t seed, int workers) {
        transport::RunResult r;
        {
          py::gil_scoped_release release;
          if (workers > 1) {
            r = par::parallel_psvn(*model, config, par::Partition::make(config.particles, workers), seed).run;
          } else {
            r = transport::run(*model, config, seed);
          }
        }
        py::dict d;
        d["ensemble"] = r.ensemble;
        py::list records;
        for (const auto& rec : r.records) records.append(record_dict(rec));
        d["records"] = records;
        d["stop_reason"] = r.stop_reason;
        d["rank"] = r.basis.rank();
        d["eigenvalues"] = r.basis.eigenvalues;
        d["outer_completed"] = r.outer_completed;
        return d;
      },
      py::arg("model"), py::arg("config"), py::arg("seed") = 0, py::arg("workers") = 1);

  m.def("sample_mean", &diag::sample_mean, py::arg("ensemble"));
  m.def("pointwise_variance", &diag::pointwise_variance, py::arg("ensemble"));
  m.def(
      "moment_rmse",
      [](const std::vector<Matrix>& ensembles, const Vector& mean, const Vector& variance, const Matrix& mass,
         const std::string& norm) {
        const auto e = diag::moment_rmse(ensembles, mean, variance, mass, diag::norm_from_string(norm));
        return py::make_tuple(e.mean_rmse, e.variance_rmse);
      },
      py::arg("ensembles"), py::arg("mean"), py::arg("variance"), py::arg("mass"), py::arg("norm") = "mass",
      "(mean_rmse, variance_rmse) over trials.");
  m.def(
      "gaussian_kl",
      [](const Vector& mp, const Matrix& cp, const Vector& mq, const Matrix& cq) {
        return diag::gaussian_kl({mp, cp}, {mq, cq});
      },
      py::arg("mean_p"), py::arg("cov_p"), py::arg("mean_q"), py::arg("cov_q"), "KL(p || q).");
}
