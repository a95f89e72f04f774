#include "duplex/executor.hpp"

namespace duplex {

Micros VirtualExecutor::now() const {
  std::lock_guard lock(mutex_);
  return now_;
}

void VirtualExecutor::schedule_at(Micros at, Task task) {
  std::lock_guard lock(mutex_);
  queue_.push(Entry{std::max(at, now_), next_seq_++, std::move(task)});
}

bool VirtualExecutor::run_one() {
  Task task;
  {
    std::lock_guard lock(mutex_);
    if (queue_.empty()) return false;
    // priority_queue::top is const; the entry is discarded right after.
    auto& top = const_cast<Entry&>(queue_.top());
    now_ = top.at;
    task = std::move(top.task);
    queue_.pop();
  }
  task();
  return true;
}

void VirtualExecutor::run() {
  while (run_one()) {
  }
}

void VirtualExecutor::run_until(Micros until) {
  for (;;) {
    {
      std::lock_guard lock(mutex_);
      if (queue_.empty() || queue_.top().at > until) {
        now_ = std::max(now_, until);
        return;
      }
    }
    run_one();
  }
}

std::size_t VirtualExecutor::pending() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

RealExecutor::RealExecutor() : epoch_(std::chrono::steady_clock::now()) {}

Micros RealExecutor::now() const {
  return std::chrono::duration_cast<Micros>(std::chrono::steady_clock::now() - epoch_);
}

void RealExecutor::schedule_at(Micros at, Task task) {
  {
    std::lock_guard lock(mutex_);
    queue_.push(Entry{at, next_seq_++, std::move(task)});
  }
  cv_.notify_all();
}

template <typename Done>
void RealExecutor::loop(Done done) {
  std::unique_lock lock(mutex_);
  for (;;) {
    if (stopped_) return;
    if (queue_.empty()) {
      if (done()) return;
      cv_.wait_for(lock, std::chrono::milliseconds(20));
      continue;
    }
    const auto due = epoch_ + queue_.top().at;
    if (std::chrono::steady_clock::now() < due) {
      cv_.wait_until(lock, due);
      continue;
    }
    auto& top = const_cast<Entry&>(queue_.top());
    Task task = std::move(top.task);
    queue_.pop();
    lock.unlock();
    task();
    lock.lock();
  }
}

void RealExecutor::run() {
  loop([] { return false; });
}

void RealExecutor::run_until_idle(const std::function<bool()>& quiescent) {
  // quiescent() is evaluated with the queue lock held; it must not schedule.
  loop([&] { return quiescent(); });
}

void RealExecutor::stop() {
  {
    std::lock_guard lock(mutex_);
    stopped_ = true;
  }
  cv_.notify_all();
}

}  // namespace duplex
