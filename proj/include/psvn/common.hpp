#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace psvn {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Error hierarchy. Every failure the library signals derives from psvn::Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PSVN_DEFINE_ERROR(Name)         \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  };

PSVN_DEFINE_ERROR(NotPositiveDefinite)
PSVN_DEFINE_ERROR(RankExceedsDimension)
PSVN_DEFINE_ERROR(BreakdownInQR)
PSVN_DEFINE_ERROR(ForwardSolveFailure)
PSVN_DEFINE_ERROR(SingularSystem)
PSVN_DEFINE_ERROR(DimensionMismatch)
PSVN_DEFINE_ERROR(SolveFailure)
PSVN_DEFINE_ERROR(ShapeMismatch)
PSVN_DEFINE_ERROR(SingularCovariance)
PSVN_DEFINE_ERROR(ConfigInvalid)
PSVN_DEFINE_ERROR(CollectiveAborted)

#undef PSVN_DEFINE_ERROR

inline void require_dim(bool ok, const std::string& what) {
  if (!ok) throw DimensionMismatch(what);
}

// splitmix64 finalizer; used to derive independent, reproducible RNG streams
// from a (seed, stream) pair.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed, std::uint64_t stream) {
  return Engine(derive_seed(seed, stream));
}

// Fills a vector with standard normal draws from `engine`.
inline Vector standard_normal(Index n, Engine& engine) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(n);
  for (Index i = 0; i < n; ++i) z[i] = normal(engine);
  return z;
}

}  // namespace psvn
