#pragma once

// Serialized task execution against a virtual or wall clock. Every session
// runs its scheduler on exactly one executor, which is what totally orders
// scheduler events.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <queue>
#include <vector>

namespace duplex {

using Micros = std::chrono::microseconds;
using Task = std::function<void()>;

class Executor {
 public:
  virtual ~Executor() = default;

  /// Time since the executor's epoch.
  virtual Micros now() const = 0;
  /// Runs `task` no earlier than `at`. Tasks due at the same time run in
  /// submission order. Safe to call from any thread.
  virtual void schedule_at(Micros at, Task task) = 0;

  void post(Task task) { schedule_at(now(), std::move(task)); }
  void schedule_after(Micros delay, Task task) { schedule_at(now() + delay, std::move(task)); }
};

/// Discrete-event executor: time jumps straight to the next due task.
class VirtualExecutor final : public Executor {
 public:
  Micros now() const override;
  void schedule_at(Micros at, Task task) override;

  /// Runs the earliest task. False when the queue is empty.
  bool run_one();
  /// Runs until no task remains.
  void run();
  /// Runs every task due at or before `until`, then sets the clock to `until`.
  void run_until(Micros until);
  std::size_t pending() const;

 private:
  struct Entry {
    Micros at;
    std::uint64_t seq;
    Task task;
    bool operator>(const Entry& o) const { return at != o.at ? at > o.at : seq > o.seq; }
  };

  mutable std::mutex mutex_;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue_;
  Micros now_{0};
  std::uint64_t next_seq_ = 0;
};

/// Wall-clock executor. Tasks run on whichever thread calls run().
class RealExecutor final : public Executor {
 public:
  RealExecutor();

  Micros now() const override;
  void schedule_at(Micros at, Task task) override;

  /// Runs tasks as they fall due until stop() is called.
  void run();
  /// Runs tasks until the queue is empty and `quiescent()` holds, or stop().
  void run_until_idle(const std::function<bool()>& quiescent);
  void stop();

 private:
  struct Entry {
    Micros at;
    std::uint64_t seq;
    Task task;
    bool operator>(const Entry& o) const { return at != o.at ? at > o.at : seq > o.seq; }
  };

  template <typename Done>
  void loop(Done done);

  std::chrono::steady_clock::time_point epoch_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue_;
  std::uint64_t next_seq_ = 0;
  bool stopped_ = false;
};

}  // namespace duplex
