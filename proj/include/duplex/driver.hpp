#pragma once

// Session driver: owns one scheduler, one VAD stream and two backend slots,
// and runs them on a single executor. The live server and the scenario
// runner both go through this class; only the source of input differs.

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "duplex/backend.hpp"
#include "duplex/config.hpp"
#include "duplex/executor.hpp"
#include "duplex/messages.hpp"
#include "duplex/scheduler.hpp"
#include "duplex/vad.hpp"

namespace duplex {

struct SessionHooks {
  std::function<void(const ServerMessage&)> on_message;
  std::function<void(const Json&)> on_trace;  // one record per scheduler event
};

/// Backends for slots A and B as configured: mock backends run on `executor`,
/// remote ones connect to the configured endpoints. Both are wrapped in a
/// ValidatingBackend.
std::array<std::unique_ptr<backend::Backend>, 2> make_backends(const Config& config, Executor& executor);

class DuplexSession {
 public:
  /// Every method must run on `executor`'s thread.
  DuplexSession(Executor& executor, std::string session_id, const Config& config,
                std::array<std::unique_ptr<backend::Backend>, 2> backends, SessionHooks hooks);
  ~DuplexSession();
  DuplexSession(const DuplexSession&) = delete;
  DuplexSession& operator=(const DuplexSession&) = delete;

  void start();
  /// Feeds PCM through the VAD. `utterance` labels these samples; a segment
  /// takes the first label overlapping it.
  void push_audio(std::span<const vad::Sample> pcm, const std::string& utterance = {});
  /// Closes any utterance still open in the VAD.
  void flush_audio();
  void push_text(std::string text);
  void disconnect();
  /// Sends an error to the client outside of any scheduler transition.
  void send_error(std::string code, std::string message);

  bool quiescent() const { return scheduler_.quiescent(); }
  const scheduler::DuplexScheduler& scheduler() const { return scheduler_; }
  /// Invariant and stream-contiguity violations observed so far.
  const std::vector<std::string>& violations() const { return violations_; }
  std::int64_t events_processed() const { return static_cast<std::int64_t>(next_seq_); }

 private:
  struct LabelRange {
    std::int64_t begin = 0;  // sample offsets, [begin, end)
    std::int64_t end = 0;
    std::string utterance;
  };

  void process(scheduler::SchedulerEventKind kind);
  void apply(const scheduler::Transition& tr);
  void emit(const ServerMessage& msg);
  void on_vad_events(std::vector<vad::VadEvent> events);
  std::string label_for(const vad::AudioSegment& segment) const;

  Executor& executor_;
  std::string session_id_;
  scheduler::DuplexScheduler scheduler_;
  vad::VadStream vad_;
  std::array<std::unique_ptr<backend::Backend>, 2> backends_;
  SessionHooks hooks_;
  std::map<std::string, backend::CancelHandle> open_requests_;
  std::vector<LabelRange> labels_;
  ServerStreamChecker stream_checker_;
  std::vector<std::string> violations_;
  std::uint64_t next_seq_ = 0;
  std::shared_ptr<int> alive_;  // backend callbacks hold a weak_ptr to this
};

}  // namespace duplex
