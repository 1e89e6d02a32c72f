#include "experiment.hpp"

#include "psvn/benchmarks.hpp"
#include "psvn/parallel.hpp"
#include "psvn/subspace.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace psvn::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using transport::Method;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigInvalid(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigInvalid(where + ": unknown key \"" + key + "\"");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigInvalid(where + ": bad value for \"" + key + "\"");
  }
}

std::string init_name(InitSampling s) {
  switch (s) {
    case InitSampling::iid: return "iid";
    case InitSampling::antithetic: return "antithetic";
    case InitSampling::moment_matched: return "moment_matched";
  }
  return "iid";
}

InitSampling init_from_string(const std::string& s) {
  if (s == "iid") return InitSampling::iid;
  if (s == "antithetic") return InitSampling::antithetic;
  if (s == "moment_matched") return InitSampling::moment_matched;
  throw ConfigInvalid("unknown init sampling \"" + s + "\"");
}

std::string kernel_name(transport::SvgdKernel k) {
  return k == transport::SvgdKernel::median ? "median" : "hessian_metric";
}

transport::SvgdKernel kernel_from_string(const std::string& s) {
  if (s == "median") return transport::SvgdKernel::median;
  if (s == "hessian_metric") return transport::SvgdKernel::hessian_metric;
  throw ConfigInvalid("unknown svgd kernel \"" + s + "\"");
}

void read_transport(const json& j, transport::TransportConfig& t) {
  const std::string w = "transport";
  check_keys(j, {"max_iterations", "tol_update", "tol_gradient", "line_search", "lumping",
                 "svgd_kernel", "metric_refresh", "damping", "basis", "outer_iterations",
                 "stagnation_angle", "init"},
             w);
  read(j, "max_iterations", t.max_iterations, w);
  read(j, "tol_update", t.tol_update, w);
  read(j, "tol_gradient", t.tol_gradient, w);
  read(j, "metric_refresh", t.metric_refresh, w);
  read(j, "damping", t.damping, w);
  read(j, "outer_iterations", t.outer_iterations, w);
  read(j, "stagnation_angle", t.stagnation_angle, w);
  std::string s;
  if (j.contains("lumping")) {
    read(j, "lumping", s, w);
    t.lumping = transport::lumping_from_string(s);
  }
  if (j.contains("svgd_kernel")) {
    read(j, "svgd_kernel", s, w);
    t.svgd_kernel = kernel_from_string(s);
  }
  if (j.contains("init")) {
    read(j, "init", s, w);
    t.init = init_from_string(s);
  }
  if (j.contains("line_search")) {
    const json& ls = j.at("line_search");
    const std::string wl = "transport.line_search";
    check_keys(ls, {"enabled", "initial_step", "backtrack", "sufficient_decrease", "max_backtracks",
                    "per_sample"},
               wl);
    read(ls, "enabled", t.line_search.enabled, wl);
    read(ls, "initial_step", t.line_search.initial_step, wl);
    read(ls, "backtrack", t.line_search.backtrack, wl);
    read(ls, "sufficient_decrease", t.line_search.sufficient_decrease, wl);
    read(ls, "max_backtracks", t.line_search.max_backtracks, wl);
    read(ls, "per_sample", t.line_search.per_sample, wl);
  }
  if (j.contains("basis")) {
    const json& b = j.at("basis");
    const std::string wb = "transport.basis";
    check_keys(b, {"max_rank", "oversample", "power_iters", "seed"}, wb);
    read(b, "max_rank", t.basis.max_rank, wb);
    read(b, "oversample", t.basis.oversample, wb);
    read(b, "power_iters", t.basis.power_iters, wb);
    read(b, "seed", t.basis.seed, wb);
  }
}

json transport_json(const transport::TransportConfig& t) {
  return {{"max_iterations", t.max_iterations},
          {"tol_update", t.tol_update},
          {"tol_gradient", t.tol_gradient},
          {"line_search",
           {{"enabled", t.line_search.enabled},
            {"initial_step", t.line_search.initial_step},
            {"backtrack", t.line_search.backtrack},
            {"sufficient_decrease", t.line_search.sufficient_decrease},
            {"max_backtracks", t.line_search.max_backtracks},
            {"per_sample", t.line_search.per_sample}}},
          {"lumping", transport::to_string(t.lumping)},
          {"svgd_kernel", kernel_name(t.svgd_kernel)},
          {"metric_refresh", t.metric_refresh},
          {"damping", t.damping},
          {"basis",
           {{"max_rank", t.basis.max_rank},
            {"oversample", t.basis.oversample},
            {"power_iters", t.basis.power_iters},
            {"seed", t.basis.seed}}},
          {"outer_iterations", t.outer_iterations},
          {"stagnation_angle", t.stagnation_angle},
          {"init", init_name(t.init)}};
}

// A benchmark instance with whatever oracle it admits.
struct Instance {
  json descriptor;
  std::shared_ptr<const PosteriorModel> model;
  Matrix mass;
  bool linear = false;
  std::optional<bench::AnalyticGaussianPosterior> exact;
};

int linear_level(Index d) {
  for (int n = 2; n <= 20; ++n) {
    if ((Index{1} << n) + 1 == d) return n;
  }
  throw ConfigInvalid("linear1d: d must be 2^n + 1 nodes with n in [2, 20], got " + std::to_string(d));
}

Instance make_instance(const ExperimentConfig& c, Index d) {
  Instance inst;
  if (c.problem == "linear1d") {
    bench::LinearProblemOptions opt;
    opt.observations = c.observations;
    opt.noise_pct = c.noise_pct;
    opt.seed = c.data_seed;
    const auto p = bench::assemble_linear_problem(linear_level(d), opt);
    inst.descriptor = bench::descriptor(p);
    inst.model = p.model;
    inst.mass = p.fem.mass;
    inst.linear = true;
    inst.exact = bench::analytic_posterior(p);
  } else {
    const auto p = bench::assemble_lognormal_problem(d, c.observations, c.noise_pct, c.data_seed);
    inst.descriptor = bench::descriptor(p);
    inst.model = p.model;
    inst.mass = p.fem.mass;
  }
  return inst;
}

struct Moments {
  Vector mean;
  Vector variance;
};

Moments read_reference(const fs::path& path, Index d) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("reference: cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "index,mean,variance") throw ConfigInvalid("reference: bad header in " + path.string());
  Moments m{Vector::Zero(d), Vector::Zero(d)};
  Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, v;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, v, ',');
    const Index i = std::stol(a);
    if (i < 0 || i >= d) throw ConfigInvalid("reference: index out of range in " + path.string());
    m.mean[i] = std::stod(b);
    m.variance[i] = std::stod(v);
    ++rows;
  }
  if (rows != d) throw ConfigInvalid("reference: " + path.string() + " has the wrong dimension");
  return m;
}

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

json comm_json(const par::CommStats& s) {
  return {{"allgather_calls", s.allgather_calls},
          {"allreduce_calls", s.allreduce_calls},
          {"broadcast_calls", s.broadcast_calls},
          {"doubles_sent", s.doubles_sent}};
}

json manifest_base(const ExperimentConfig& c, const std::string& command) {
  return {{"manifest_version", kManifestVersion}, {"command", command}, {"config", to_json(c)}};
}

void write_manifest(const ExperimentConfig& c, const json& manifest) {
  auto out = open_out(fs::path(c.output) / "manifest.json");
  out << manifest.dump(2) << '\n';
}

std::string run_name(Method m, Index d, Index n, int trial) {
  return transport::to_string(m) + "_d" + std::to_string(d) + "_N" + std::to_string(n) + "_trial" +
         std::to_string(trial);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (problem != "linear1d" && problem != "lognormal1d") {
    throw ConfigInvalid("problem must be linear1d or lognormal1d");
  }
  if (methods.empty()) throw ConfigInvalid("methods must not be empty");
  if (dims.empty()) throw ConfigInvalid("dims must not be empty");
  if (particles.empty()) throw ConfigInvalid("particles must not be empty");
  for (Index d : dims) {
    if (problem == "linear1d") {
      linear_level(d);
    } else if (d < 5) {
      throw ConfigInvalid("lognormal1d: d must be >= 5");
    }
    if (observations < 1 || observations > d - 2) {
      throw ConfigInvalid("observations must be in [1, d-2] for every d");
    }
  }
  for (Index n : particles) {
    if (n < 1) throw ConfigInvalid("particles must be >= 1");
  }
  if (trials < 1) throw ConfigInvalid("trials must be >= 1");
  if (workers < 1) throw ConfigInvalid("workers must be >= 1");
  if (!(noise_pct > 0.0)) throw ConfigInvalid("noise_pct must be > 0");
  if (!(eps_lambda > 0.0)) throw ConfigInvalid("eps_lambda must be > 0");
  if (eigen_samples < 1) throw ConfigInvalid("eigen.samples must be >= 1");
  if (oracle.chains < 2) throw ConfigInvalid("oracle.chains must be >= 2");
  if (oracle.steps < 10) throw ConfigInvalid("oracle.steps must be >= 10");
  if (!(oracle.beta > 0.0 && oracle.beta <= 1.0)) throw ConfigInvalid("oracle.beta must be in (0, 1]");
  if (!reference.empty() && problem != "lognormal1d") {
    throw ConfigInvalid("reference is only used with lognormal1d");
  }
  for (Method m : methods) {
    if (m == Method::psvn && workers > 1) {
      for (Index n : particles) par::Partition::make(n, workers);
    }
  }
  transport.validate();
}

ExperimentConfig config_from_json(const json& input) {
  if (input.is_object() && input.contains("manifest_version")) {
    if (!input.contains("config")) throw ConfigInvalid("manifest without \"config\"");
    return config_from_json(input.at("config"));
  }
  const std::string w = "config";
  check_keys(input, {"problem", "methods", "dims", "particles", "trials", "seed", "data_seed",
                     "observations", "noise_pct", "eps_lambda", "workers", "output", "norm",
                     "record_iterations", "record_timings", "transport", "eigen", "oracle",
                     "reference"},
             w);
  ExperimentConfig c;
  read(input, "problem", c.problem, w);
  if (input.contains("methods")) {
    std::vector<std::string> names;
    read(input, "methods", names, w);
    c.methods.clear();
    for (const auto& n : names) c.methods.push_back(transport::method_from_string(n));
  }
  read(input, "dims", c.dims, w);
  read(input, "particles", c.particles, w);
  read(input, "trials", c.trials, w);
  read(input, "seed", c.seed, w);
  read(input, "data_seed", c.data_seed, w);
  read(input, "observations", c.observations, w);
  read(input, "noise_pct", c.noise_pct, w);
  read(input, "eps_lambda", c.eps_lambda, w);
  read(input, "workers", c.workers, w);
  read(input, "output", c.output, w);
  read(input, "record_iterations", c.record_iterations, w);
  read(input, "record_timings", c.record_timings, w);
  read(input, "reference", c.reference, w);
  if (input.contains("norm")) {
    std::string s;
    read(input, "norm", s, w);
    c.norm = diag::norm_from_string(s);
  }
  if (input.contains("transport")) read_transport(input.at("transport"), c.transport);
  if (input.contains("eigen")) {
    const json& e = input.at("eigen");
    check_keys(e, {"samples"}, "eigen");
    read(e, "samples", c.eigen_samples, "eigen");
  }
  if (input.contains("oracle")) {
    const json& o = input.at("oracle");
    check_keys(o, {"chains", "steps", "beta", "seed"}, "oracle");
    read(o, "chains", c.oracle.chains, "oracle");
    read(o, "steps", c.oracle.steps, "oracle");
    read(o, "beta", c.oracle.beta, "oracle");
    read(o, "seed", c.oracle.seed, "oracle");
  }
  c.transport.basis.eps_lambda = c.eps_lambda;
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot read config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigInvalid("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

json to_json(const ExperimentConfig& c) {
  std::vector<std::string> methods;
  for (Method m : c.methods) methods.push_back(transport::to_string(m));
  json j = {{"problem", c.problem},
            {"methods", methods},
            {"dims", c.dims},
            {"particles", c.particles},
            {"trials", c.trials},
            {"seed", c.seed},
            {"data_seed", c.data_seed},
            {"observations", c.observations},
            {"noise_pct", c.noise_pct},
            {"eps_lambda", c.eps_lambda},
            {"workers", c.workers},
            {"output", c.output},
            {"norm", diag::to_string(c.norm)},
            {"record_iterations", c.record_iterations},
            {"record_timings", c.record_timings},
            {"transport", transport_json(c.transport)},
            {"eigen", {{"samples", c.eigen_samples}}},
            {"oracle",
             {{"chains", c.oracle.chains},
              {"steps", c.oracle.steps},
              {"beta", c.oracle.beta},
              {"seed", c.oracle.seed}}}};
  if (!c.reference.empty()) j["reference"] = c.reference;
  return j;
}

void apply_overrides(ExperimentConfig& c, const Overrides& o) {
  if (o.methods) {
    c.methods.clear();
    for (const auto& n : *o.methods) c.methods.push_back(transport::method_from_string(n));
  }
  if (o.dims) c.dims = *o.dims;
  if (o.particles) c.particles = *o.particles;
  if (o.trials) c.trials = *o.trials;
  if (o.seed) c.seed = *o.seed;
  if (o.workers) c.workers = *o.workers;
  if (o.eps_lambda) {
    c.eps_lambda = *o.eps_lambda;
    c.transport.basis.eps_lambda = *o.eps_lambda;
  }
  if (o.output) c.output = *o.output;
  c.validate();
}

void run_experiment(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  const fs::path out_dir(c.output);
  json manifest = manifest_base(c, "run");
  manifest["problems"] = json::array();
  manifest["runs"] = json::array();

  std::vector<diag::TrialRow> trial_rows;
  std::vector<diag::SpectrumRow> spectra;
  std::ostringstream summary, by_iter;
  summary << std::setprecision(17) << "method,d,N,trials,norm,mean_rmse,variance_rmse\n";
  by_iter << std::setprecision(17) << "method,d,N,iter,mean_rmse,variance_rmse\n";

  for (Index d : c.dims) {
    const Instance inst = make_instance(c, d);
    manifest["problems"].push_back(inst.descriptor);
    Moments ref;
    if (inst.exact) {
      ref = {inst.exact->mean, inst.exact->covariance.diagonal()};
    } else if (!c.reference.empty()) {
      ref = read_reference(fs::path(c.reference) / ("oracle_d" + std::to_string(d) + ".csv"), d);
    } else {
      const auto pcn = bench::pcn_reference(*inst.model, c.oracle.chains, c.oracle.steps,
                                            c.oracle.beta, c.oracle.seed);
      if (!(pcn.max_rhat < 1.05)) {
        throw std::runtime_error("pCN reference chains disagree (R-hat " +
                                 std::to_string(pcn.max_rhat) + ")");
      }
      ref = {pcn.mean, pcn.variance};
      log << "d=" << d << ": pCN reference, R-hat " << pcn.max_rhat << "\n";
    }

    for (Method method : c.methods) {
      for (Index n : c.particles) {
        auto cfg = c.transport;
        cfg.method = method;
        cfg.particles = n;
        cfg.keep_snapshots = c.record_iterations;
        std::vector<Matrix> finals;
        std::vector<std::vector<Matrix>> snaps;
        for (int t = 0; t < c.trials; ++t) {
          const std::uint64_t seed = c.seed + static_cast<std::uint64_t>(t);
          const auto t0 = std::chrono::steady_clock::now();
          transport::RunResult res;
          json comm = json::array();
          const int workers = method == Method::psvn ? c.workers : 1;
          if (workers > 1) {
            auto pr = par::parallel_psvn(*inst.model, cfg, par::Partition::make(n, workers), seed);
            res = std::move(pr.run);
            for (const auto& s : pr.workers) comm.push_back(comm_json(s));
          } else {
            res = transport::run(*inst.model, cfg, seed);
            comm.push_back(comm_json(res.comm));
          }
          const double wall =
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          if (!c.record_timings) {
            for (auto& r : res.records) r.times = {};
          }
          const std::string name = run_name(method, d, n, t);
          {
            auto f = open_out(out_dir / "iterations" / (name + ".csv"));
            transport::write_iterations_csv(f, res.records);
          }
          if (method == Method::psvn && t == 0 && n == c.particles.front() && !res.spectra.empty()) {
            spectra.push_back({d, res.spectra.front()});
          }
          const auto e = diag::moment_rmse({res.ensemble}, ref.mean, ref.variance, inst.mass, c.norm);
          trial_rows.push_back({transport::to_string(method), d, n, t, e.mean_rmse, e.variance_rmse});
          json run = {{"name", name},
                      {"method", transport::to_string(method)},
                      {"d", d},
                      {"N", n},
                      {"trial", t},
                      {"seed", seed},
                      {"workers", workers},
                      {"iterations", res.records.size()},
                      {"stop_reason", res.stop_reason},
                      {"comm", comm}};
          if (method == Method::psvn) run["rank"] = res.basis.rank();
          if (c.record_timings) run["wall_seconds"] = wall;
          manifest["runs"].push_back(run);
          log << name << ": " << res.records.size() << " iterations (" << res.stop_reason
              << "), mean err " << e.mean_rmse << ", variance err " << e.variance_rmse << "\n";
          finals.push_back(std::move(res.ensemble));
          snaps.push_back(std::move(res.snapshots));
        }
        const auto e = diag::moment_rmse(finals, ref.mean, ref.variance, inst.mass, c.norm);
        summary << transport::to_string(method) << ',' << d << ',' << n << ',' << c.trials << ','
                << diag::to_string(c.norm) << ',' << e.mean_rmse << ',' << e.variance_rmse << '\n';
        if (c.record_iterations) {
          std::size_t longest = 0;
          for (const auto& s : snaps) longest = std::max(longest, s.size());
          for (std::size_t it = 0; it < longest; ++it) {
            // A trial that stopped early keeps its final ensemble.
            std::vector<Matrix> at;
            for (const auto& s : snaps) at.push_back(s.empty() ? Matrix() : s[std::min(it, s.size() - 1)]);
            const auto ei = diag::moment_rmse(at, ref.mean, ref.variance, inst.mass, c.norm);
            by_iter << transport::to_string(method) << ',' << d << ',' << n << ',' << it + 1 << ','
                    << ei.mean_rmse << ',' << ei.variance_rmse << '\n';
          }
        }
      }
    }
  }

  std::vector<std::string> artifacts = {"summary.csv", "trials.csv"};
  {
    auto f = open_out(out_dir / "summary.csv");
    f << summary.str();
  }
  {
    auto f = open_out(out_dir / "trials.csv");
    diag::write_trials_csv(f, trial_rows);
  }
  if (c.record_iterations) {
    auto f = open_out(out_dir / "rmse_iterations.csv");
    f << by_iter.str();
    artifacts.push_back("rmse_iterations.csv");
  }
  if (!spectra.empty()) {
    auto f = open_out(out_dir / "eigenvalues.csv");
    diag::write_eigen_decay_csv(f, spectra);
    artifacts.push_back("eigenvalues.csv");
  }
  artifacts.push_back("iterations/");
  manifest["artifacts"] = artifacts;
  write_manifest(c, manifest);
  log << "wrote " << (out_dir / "manifest.json").string() << "\n";
}

void run_eigen(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  const fs::path out_dir(c.output);
  json manifest = manifest_base(c, "eigen");
  manifest["problems"] = json::array();
  manifest["ranks"] = json::object();
  std::vector<diag::SpectrumRow> rows;
  for (Index d : c.dims) {
    const Instance inst = make_instance(c, d);
    manifest["problems"].push_back(inst.descriptor);
    const Matrix x = sample_prior(inst.model->prior(), c.eigen_samples, c.seed, InitSampling::iid);
    const la::EigenPairs all = subspace::basis_spectrum(*inst.model, x, c.transport.basis);
    const auto basis = subspace::build_basis(*inst.model, x, c.transport.basis);
    rows.push_back({d, all.values});
    auto f = open_out(out_dir / ("basis_d" + std::to_string(d) + ".csv"));
    subspace::write_basis_csv(f, basis);
    manifest["ranks"][std::to_string(d)] = basis.rank();
    log << "d=" << d << ": rank " << basis.rank() << " at eps_lambda " << c.eps_lambda << "\n";
  }
  auto f = open_out(out_dir / "eigen_decay.csv");
  diag::write_eigen_decay_csv(f, rows);
  manifest["artifacts"] = {"eigen_decay.csv", "basis_d*.csv"};
  write_manifest(c, manifest);
}

void run_oracle(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  const fs::path out_dir(c.output);
  json manifest = manifest_base(c, "oracle");
  manifest["problems"] = json::array();
  manifest["references"] = json::array();
  for (Index d : c.dims) {
    const Instance inst = make_instance(c, d);
    manifest["problems"].push_back(inst.descriptor);
    Moments m;
    json info = {{"d", d}};
    if (inst.exact) {
      m = {inst.exact->mean, inst.exact->covariance.diagonal()};
      info["source"] = "analytic";
    } else {
      const auto pcn = bench::pcn_reference(*inst.model, c.oracle.chains, c.oracle.steps,
                                            c.oracle.beta, c.oracle.seed);
      m = {pcn.mean, pcn.variance};
      info["source"] = "pcn";
      info["max_rhat"] = pcn.max_rhat;
      info["acceptance_rate"] = pcn.acceptance_rate;
      info["self_consistent"] = pcn.max_rhat < 1.05;
      log << "d=" << d << ": R-hat " << pcn.max_rhat << ", acceptance " << pcn.acceptance_rate << "\n";
    }
    auto f = open_out(out_dir / ("oracle_d" + std::to_string(d) + ".csv"));
    f << "index,mean,variance\n";
    for (Index i = 0; i < d; ++i) f << i << ',' << m.mean[i] << ',' << m.variance[i] << '\n';
    manifest["references"].push_back(info);
  }
  manifest["artifacts"] = {"oracle_d*.csv"};
  write_manifest(c, manifest);
}

bool run_check(std::ostream& log) {
  int failed = 0;
  auto report = [&](const std::string& what, bool ok, double value) {
    log << (ok ? "PASS " : "FAIL ") << what << " (" << value << ")\n";
    failed += !ok;
  };
  const auto lin = bench::assemble_linear_problem(5);
  const auto post = bench::analytic_posterior(lin);
  const double g = lin.model->grad_log_posterior(post.mean).norm();
  report("gradient vanishes at the analytic MAP", g < 1e-8, g);

  const auto basis = subspace::build_basis(*lin.model, sample_prior(lin.model->prior(), 1, 0), {});
  const Matrix gram = basis.psi.transpose() * lin.model->prior().precision() * basis.psi;
  const double orth = (gram - Matrix::Identity(basis.rank(), basis.rank())).cwiseAbs().maxCoeff();
  report("basis is prior-orthonormal", orth < 1e-10, orth);
  report("retained rank in [4, 8]", basis.rank() >= 4 && basis.rank() <= 8,
         static_cast<double>(basis.rank()));

  transport::TransportConfig one;
  one.particles = 1;
  one.max_iterations = 1;
  one.line_search.enabled = false;
  const auto r1 = transport::run(*lin.model, one, 3);
  const double pg = subspace::projected_gradient(
                        *lin.model, r1.basis, subspace::project(r1.basis, Vector(r1.ensemble.col(0))).w)
                        .norm();
  report("single-particle Newton step is exact", pg < 1e-8, pg);

  const auto nl = bench::assemble_lognormal_problem(33, 8, 0.01);
  transport::TransportConfig small;
  small.particles = 8;
  small.max_iterations = 3;
  const auto a = par::parallel_psvn(*nl.model, small, par::Partition::make(8, 1), 5);
  const auto b = par::parallel_psvn(*nl.model, small, par::Partition::make(8, 2), 5);
  const double diff = (a.run.ensemble - b.run.ensemble).cwiseAbs().maxCoeff();
  report("worker count does not change the ensemble", diff < 1e-8, diff);

  const Vector x = sample_prior(nl.model->prior(), 1, 9).col(0);
  const Vector grad = nl.model->grad_log_posterior(x);
  Vector fd(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Vector e = Vector::Zero(x.size());
    e[i] = 1e-6;
    fd[i] = (nl.model->log_unnormalized_posterior(x + e) - nl.model->log_unnormalized_posterior(x - e)) / 2e-6;
  }
  const double fd_err = (grad - fd).norm() / fd.norm();
  report("lognormal gradient matches finite differences", fd_err < 1e-4, fd_err);
  return failed == 0;
}

}  // namespace psvn::cli
