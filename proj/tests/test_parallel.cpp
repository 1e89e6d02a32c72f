#include <doctest.h>

#include "oracles.hpp"
#include "psvn/benchmarks.hpp"
#include "psvn/parallel.hpp"

#include <algorithm>

using namespace psvn;
using transport::TransportConfig;

namespace {

// Linear map whose Jacobian fails for inputs with a positive first entry.
class FlakyMap final : public ForwardMap {
 public:
  explicit FlakyMap(Matrix a) : a_(std::move(a)) {}
  Index input_dim() const override { return a_.cols(); }
  Index output_dim() const override { return a_.rows(); }
  Vector evaluate(const Vector& x) const override { return a_ * x; }
  Vector jacobian_action(const Vector&, const Vector& v) const override { return a_ * v; }
  Vector jacobian_transpose_action(const Vector&, const Vector& u) const override {
    return a_.transpose() * u;
  }
  Matrix jacobian(const Vector& x) const override {
    if (x[0] > 0.0) throw ForwardSolveFailure("flaky map");
    return a_;
  }
  bool is_linear() const override { return true; }

 private:
  Matrix a_;
};

TransportConfig small_config(Index n) {
  TransportConfig cfg;
  cfg.particles = n;
  cfg.max_iterations = 6;
  cfg.tol_update = 1e-12;
  cfg.tol_gradient = 1e-12;
  return cfg;
}

}  // namespace

TEST_CASE("one worker reproduces the serial run exactly") {
  const auto p = bench::assemble_linear_problem(5);
  const auto cfg = small_config(16);
  const auto serial = transport::run(*p.model, cfg, 7);
  const auto par1 = par::parallel_psvn(*p.model, cfg, par::Partition::make(16, 1), 7);
  CHECK(par1.run.ensemble == serial.ensemble);
  CHECK(par1.run.records.size() == serial.records.size());
}

TEST_CASE("worker count does not change the result") {
  const auto lin = bench::assemble_linear_problem(6);
  const auto nl = bench::assemble_lognormal_problem(33, 8, 0.01);
  for (const PosteriorModel* m : {lin.model.get(), nl.model.get()}) {
    auto cfg = small_config(16);
    cfg.outer_iterations = 2;
    const auto ref = par::parallel_psvn(*m, cfg, par::Partition::make(16, 1), 3);
    for (int k : {2, 4}) {
      const auto r = par::parallel_psvn(*m, cfg, par::Partition::make(16, k), 3);
      CHECK((r.run.ensemble - ref.run.ensemble).cwiseAbs().maxCoeff() < 1e-8);
      CHECK(r.run.records.size() == ref.run.records.size());
      CHECK(r.workers.size() == static_cast<std::size_t>(k));
    }
  }
}

TEST_CASE("global line search is also worker-count invariant") {
  const auto p = bench::assemble_lognormal_problem(33, 8, 0.01);
  auto cfg = small_config(8);
  cfg.line_search.per_sample = false;
  const auto a = par::parallel_psvn(*p.model, cfg, par::Partition::make(8, 1), 5);
  const auto b = par::parallel_psvn(*p.model, cfg, par::Partition::make(8, 4), 5);
  CHECK((a.run.ensemble - b.run.ensemble).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("per-iteration traffic stays within the max(M r^2, M N) bound") {
  const auto p = bench::assemble_linear_problem(6);
  for (int k : {1, 2, 4}) {
    const Index n = 32;
    const auto r = par::parallel_psvn(*p.model, small_config(n), par::Partition::make(n, k), 1);
    const Index m = n / k;
    const Index rank = r.run.basis.rank();
    const double bound = static_cast<double>(std::max(m * rank * rank, m * n));
    CHECK(r.max_iteration_doubles > 0);
    CHECK(static_cast<double>(r.max_iteration_doubles) <= 4.0 * bound);
  }
}

TEST_CASE("invalid partitions and methods are rejected") {
  const auto p = bench::assemble_linear_problem(4);
  auto cfg = small_config(10);
  CHECK_THROWS_AS(par::parallel_psvn(*p.model, cfg, par::Partition::make(12, 4), 0), ConfigInvalid);
  CHECK_THROWS_AS(par::parallel_psvn_from(*p.model, cfg, sample_prior(p.model->prior(), 10, 0), 4),
                  ConfigInvalid);
  cfg.method = transport::Method::svn;
  CHECK_THROWS_AS(par::parallel_psvn(*p.model, cfg, par::Partition::make(10, 2), 0), ConfigInvalid);
}

TEST_CASE("a worker failure propagates the original error") {
  const auto p = bench::assemble_linear_problem(4);
  const PosteriorModel flaky(p.model->prior(), p.model->noise(), p.data,
                             std::make_shared<FlakyMap>(p.forward_matrix));
  Matrix x = sample_prior(flaky.prior(), 8, 2);
  x.row(0) = x.row(0).cwiseAbs();  // every particle triggers the failure
  CHECK_THROWS_AS(par::parallel_psvn_from(flaky, small_config(8), x, 4), ForwardSolveFailure);
}
