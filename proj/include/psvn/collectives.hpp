#pragma once

#include "psvn/common.hpp"

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <vector>

namespace psvn::par {

/// Per-worker traffic counters. `doubles_sent` counts this worker's
/// contribution to each collective.
struct CommStats {
  std::size_t allgather_calls = 0;
  std::size_t allreduce_calls = 0;
  std::size_t broadcast_calls = 0;
  std::size_t doubles_sent = 0;

  CommStats& operator+=(const CommStats& o);
};

/// Bulk-synchronous collective contract. Every worker of a team must call the
/// same collectives in the same order.
class Collectives {
 public:
  virtual ~Collectives() = default;

  virtual int size() const = 0;
  virtual int rank() const = 0;

  /// Column-wise concatenation of every worker's block in rank order. All
  /// blocks must have the same shape (ShapeMismatch otherwise).
  virtual Matrix allgather(const Matrix& local) = 0;
  /// Elementwise sum, accumulated in rank order on every worker.
  virtual Matrix allreduce_sum(const Matrix& local) = 0;
  /// Copy of `value` as held by `root`.
  virtual Matrix broadcast(const Matrix& value, int root) = 0;

  const CommStats& stats() const { return stats_; }
  void reset_stats() { stats_ = CommStats{}; }

  // Scalar conveniences built on the matrix collectives.
  Vector allgather(const Vector& local);
  double allreduce_sum(double local);
  double allreduce_max(double local);
  /// Eigen expressions: column-vector types gather as vectors, others as matrices.
  template <class Derived>
  auto allgather(const Eigen::MatrixBase<Derived>& expr) {
    if constexpr (Derived::ColsAtCompileTime == 1) {
      return allgather(Vector(expr));
    } else {
      return allgather(Matrix(expr));
    }
  }

 protected:
  CommStats stats_;
};

/// Single worker: every collective is a copy.
class SerialCollectives final : public Collectives {
 public:
  int size() const override { return 1; }
  int rank() const override { return 0; }
  using Collectives::allgather;
  using Collectives::allreduce_sum;
  Matrix allgather(const Matrix& local) override;
  Matrix allreduce_sum(const Matrix& local) override;
  Matrix broadcast(const Matrix& value, int root) override;
};

/// Contiguous block decomposition of N particles over K workers; K must divide N.
struct Partition {
  Index total = 0;
  int workers = 1;
  Index per_worker = 0;

  static Partition make(Index total, int workers);
  Index begin(int rank) const { return per_worker * rank; }
  Index count(int) const { return per_worker; }
};

namespace detail {
struct TeamState;
}

/// In-process team of K worker threads sharing a rendezvous area. If any worker
/// throws, the others are released from their pending collective with
/// CollectiveAborted and the first original exception is rethrown by run().
class ThreadTeam {
 public:
  explicit ThreadTeam(int workers);
  ~ThreadTeam();

  int size() const { return workers_; }

  /// Runs body(collectives) on every worker and joins. Returns the per-rank
  /// communication counters.
  std::vector<CommStats> run(const std::function<void(Collectives&)>& body);

 private:
  int workers_;
  std::shared_ptr<detail::TeamState> state_;
};

}  // namespace psvn::par
