#include "psvn/parallel.hpp"

#include <algorithm>
#include <chrono>

namespace psvn::par {

namespace {

ParallelResult run_team(const PosteriorModel& model, const transport::TransportConfig& config,
                        const Matrix& initial, int workers) {
  if (config.method != transport::Method::psvn) {
    throw ConfigInvalid("parallel_psvn: method must be psvn");
  }
  Partition::make(initial.cols(), workers);  // validates K | N up front
  ParallelResult out;
  std::vector<std::size_t> peak(static_cast<std::size_t>(workers), 0);
  ThreadTeam team(workers);
  const auto t0 = std::chrono::steady_clock::now();
  out.workers = team.run([&](Collectives& comm) {
    transport::RunResult res = transport::run_from(model, config, initial, comm);
    std::size_t p = 0;
    for (const auto& rec : res.records) p = std::max(p, rec.doubles_sent);
    peak[static_cast<std::size_t>(comm.rank())] = p;
    if (comm.rank() == 0) out.run = std::move(res);
  });
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.max_iteration_doubles = *std::max_element(peak.begin(), peak.end());
  return out;
}

}  // namespace

ParallelResult parallel_psvn(const PosteriorModel& model, const transport::TransportConfig& config,
                             const Partition& partition, std::uint64_t seed) {
  config.validate();
  if (partition.total != config.particles) {
    throw ConfigInvalid("parallel_psvn: partition size does not match the particle count");
  }
  const Matrix initial = sample_prior(model.prior(), config.particles, seed, config.init);
  return run_team(model, config, initial, partition.workers);
}

ParallelResult parallel_psvn_from(const PosteriorModel& model,
                                  const transport::TransportConfig& config, const Matrix& initial,
                                  int workers) {
  config.validate();
  return run_team(model, config, initial, workers);
}

}  // namespace psvn::par
