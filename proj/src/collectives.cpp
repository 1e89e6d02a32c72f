#include "psvn/collectives.hpp"

#include <string>
#include <thread>

namespace psvn::par {

CommStats& CommStats::operator+=(const CommStats& o) {
  allgather_calls += o.allgather_calls;
  allreduce_calls += o.allreduce_calls;
  broadcast_calls += o.broadcast_calls;
  doubles_sent += o.doubles_sent;
  return *this;
}

Vector Collectives::allgather(const Vector& local) {
  const Matrix row = local.transpose();
  const Matrix all = allgather(row);
  return all.transpose();
}

double Collectives::allreduce_sum(double local) {
  Matrix m(1, 1);
  m(0, 0) = local;
  return allreduce_sum(m)(0, 0);
}

double Collectives::allreduce_max(double local) {
  const Vector all = allgather(Vector(Vector::Constant(1, local)));
  return all.maxCoeff();
}

// ---------------------------------------------------------------- serial

Matrix SerialCollectives::allgather(const Matrix& local) {
  ++stats_.allgather_calls;
  stats_.doubles_sent += static_cast<std::size_t>(local.size());
  return local;
}

Matrix SerialCollectives::allreduce_sum(const Matrix& local) {
  ++stats_.allreduce_calls;
  stats_.doubles_sent += static_cast<std::size_t>(local.size());
  return local;
}

Matrix SerialCollectives::broadcast(const Matrix& value, int root) {
  if (root != 0) throw ConfigInvalid("broadcast: root out of range");
  ++stats_.broadcast_calls;
  stats_.doubles_sent += static_cast<std::size_t>(value.size());
  return value;
}

// ---------------------------------------------------------------- partition

Partition Partition::make(Index total, int workers) {
  if (workers < 1) throw ConfigInvalid("Partition: need at least one worker");
  if (total < 1 || total % workers != 0) {
    throw ConfigInvalid("Partition: worker count " + std::to_string(workers) +
                        " does not divide particle count " + std::to_string(total));
  }
  return {total, workers, total / workers};
}

// ---------------------------------------------------------------- threads

namespace detail {

struct TeamState {
  explicit TeamState(int k) : workers(k), slots(static_cast<std::size_t>(k)) {}

  int workers;
  std::mutex mutex;
  std::condition_variable cv;
  int arrived = 0;
  std::size_t generation = 0;
  bool aborted = false;
  std::vector<Matrix> slots;

  void abort() {
    std::lock_guard<std::mutex> lock(mutex);
    aborted = true;
    cv.notify_all();
  }

  void barrier() {
    std::unique_lock<std::mutex> lock(mutex);
    if (aborted) throw CollectiveAborted("collective aborted: another worker failed");
    const std::size_t gen = generation;
    if (++arrived == workers) {
      arrived = 0;
      ++generation;
      cv.notify_all();
      return;
    }
    cv.wait(lock, [&] { return generation != gen || aborted; });
    if (generation == gen) throw CollectiveAborted("collective aborted: another worker failed");
  }
};

}  // namespace detail

namespace {

class ThreadCollectives final : public Collectives {
 public:
  ThreadCollectives(detail::TeamState& state, int rank) : state_(state), rank_(rank) {}

  int size() const override { return state_.workers; }
  int rank() const override { return rank_; }
  using Collectives::allgather;
  using Collectives::allreduce_sum;

  Matrix allgather(const Matrix& local) override {
    ++stats_.allgather_calls;
    stats_.doubles_sent += static_cast<std::size_t>(local.size());
    publish(local);
    const Index rows = local.rows(), cols = local.cols();
    bool consistent = true;
    for (const Matrix& s : state_.slots) consistent &= (s.rows() == rows && s.cols() == cols);
    Matrix out;
    if (consistent) {
      out.resize(rows, cols * state_.workers);
      for (int k = 0; k < state_.workers; ++k) {
        out.middleCols(cols * k, cols) = state_.slots[static_cast<std::size_t>(k)];
      }
    }
    state_.barrier();
    if (!consistent) throw ShapeMismatch("allgather: workers contributed blocks of different shapes");
    return out;
  }

  Matrix allreduce_sum(const Matrix& local) override {
    ++stats_.allreduce_calls;
    stats_.doubles_sent += static_cast<std::size_t>(local.size());
    publish(local);
    bool consistent = true;
    for (const Matrix& s : state_.slots) {
      consistent &= (s.rows() == local.rows() && s.cols() == local.cols());
    }
    Matrix out;
    if (consistent) {
      out = state_.slots[0];
      for (int k = 1; k < state_.workers; ++k) out += state_.slots[static_cast<std::size_t>(k)];
    }
    state_.barrier();
    if (!consistent) throw ShapeMismatch("allreduce_sum: workers contributed arrays of different shapes");
    return out;
  }

  Matrix broadcast(const Matrix& value, int root) override {
    if (root < 0 || root >= state_.workers) throw ConfigInvalid("broadcast: root out of range");
    ++stats_.broadcast_calls;
    if (rank_ == root) stats_.doubles_sent += static_cast<std::size_t>(value.size());
    publish(rank_ == root ? value : Matrix());
    Matrix out = state_.slots[static_cast<std::size_t>(root)];
    state_.barrier();
    return out;
  }

 private:
  // Deposit this worker's contribution and wait until every worker has.
  void publish(const Matrix& local) {
    state_.barrier();  // previous readers are done with the slots
    state_.slots[static_cast<std::size_t>(rank_)] = local;
    state_.barrier();
  }

  detail::TeamState& state_;
  int rank_;
};

}  // namespace

ThreadTeam::ThreadTeam(int workers) : workers_(workers) {
  if (workers < 1) throw ConfigInvalid("ThreadTeam: need at least one worker");
}

ThreadTeam::~ThreadTeam() = default;

std::vector<CommStats> ThreadTeam::run(const std::function<void(Collectives&)>& body) {
  state_ = std::make_shared<detail::TeamState>(workers_);
  std::vector<CommStats> stats(static_cast<std::size_t>(workers_));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers_));
  std::vector<bool> secondary(static_cast<std::size_t>(workers_), false);
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(workers_));
  for (int k = 0; k < workers_; ++k) {
    threads.emplace_back([&, k] {
      ThreadCollectives comm(*state_, k);
      try {
        body(comm);
      } catch (const CollectiveAborted&) {
        errors[static_cast<std::size_t>(k)] = std::current_exception();
        secondary[static_cast<std::size_t>(k)] = true;
        state_->abort();
      } catch (...) {
        errors[static_cast<std::size_t>(k)] = std::current_exception();
        state_->abort();
      }
      stats[static_cast<std::size_t>(k)] = comm.stats();
    });
  }
  for (auto& t : threads) t.join();
  for (int k = 0; k < workers_; ++k) {
    if (errors[static_cast<std::size_t>(k)] && !secondary[static_cast<std::size_t>(k)]) {
      std::rethrow_exception(errors[static_cast<std::size_t>(k)]);
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return stats;
}

}  // namespace psvn::par
