#pragma once

#include "psvn/collectives.hpp"
#include "psvn/transport.hpp"

#include <cstdint>
#include <vector>

namespace psvn::par {

struct ParallelResult {
  transport::RunResult run;         // as seen by rank 0
  std::vector<CommStats> workers;   // per-rank totals
  /// Largest per-worker payload (doubles) of any single iteration.
  std::size_t max_iteration_doubles = 0;
  double wall_seconds = 0.0;
};

/// pSVN with the particles split over `workers` threads. Every worker draws the
/// seeded initial ensemble, owns partition.count(rank) particles and exchanges
/// data only through the collectives; results do not depend on the worker count.
ParallelResult parallel_psvn(const PosteriorModel& model, const transport::TransportConfig& config,
                             const Partition& partition, std::uint64_t seed);
ParallelResult parallel_psvn_from(const PosteriorModel& model,
                                  const transport::TransportConfig& config, const Matrix& initial,
                                  int workers);

}  // namespace psvn::par
