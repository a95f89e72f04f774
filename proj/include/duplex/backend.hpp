#pragma once

// Inference backend contract: a request is classified (state token) and then,
// unless it is noise, answered as a token stream ending in exactly one
// terminal event.

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "duplex/executor.hpp"
#include "duplex/session.hpp"
#include "duplex/vad.hpp"

namespace duplex::backend {

/// Shared cancellation flag. Copies refer to the same signal; cancel() is
/// idempotent and fires registered callbacks exactly once.
class CancelHandle {
 public:
  CancelHandle();

  void cancel();
  bool cancelled() const;
  /// Runs `callback` on cancel, or immediately if already cancelled.
  void on_cancel(std::function<void()> callback);

 private:
  struct State {
    std::mutex mutex;
    bool cancelled = false;
    std::vector<std::function<void()>> callbacks;
  };
  std::shared_ptr<State> state_;
};

struct GenerationRequest {
  std::string request_id;
  ConversationHistory history;  // committed turns; `query` follows them
  Turn query;
  CancelHandle cancel_handle;
  std::optional<vad::AudioSegment> audio;
};

enum class EventKind { Classified, Token, Done, Cancelled, Failed };
std::string_view to_string(EventKind k);

struct BackendEvent {
  EventKind kind = EventKind::Done;
  std::optional<StateToken> state_token;  // Classified
  std::string text;                       // Token text or Failed reason

  static BackendEvent classified(StateToken t) { return {EventKind::Classified, t, {}}; }
  static BackendEvent token(std::string piece) { return {EventKind::Token, std::nullopt, std::move(piece)}; }
  static BackendEvent done() { return {EventKind::Done, std::nullopt, {}}; }
  static BackendEvent cancelled() { return {EventKind::Cancelled, std::nullopt, {}}; }
  static BackendEvent failed(std::string reason) { return {EventKind::Failed, std::nullopt, std::move(reason)}; }

  bool terminal() const {
    return kind == EventKind::Done || kind == EventKind::Cancelled || kind == EventKind::Failed;
  }
  bool operator==(const BackendEvent&) const = default;
};

using EventSink = std::function<void(BackendEvent)>;

class Backend {
 public:
  virtual ~Backend() = default;
  /// Non-blocking. Events for the request are delivered through `sink`,
  /// possibly from another thread. At most one request is active at a time.
  virtual void submit(GenerationRequest request, EventSink sink) = 0;
};

/// Per-request ordering check: one Classified first, then Tokens (none after
/// a noise verdict), then one terminal. Cancelled and Failed may also arrive
/// before classification (cancelled early, backend unreachable).
class StreamChecker {
 public:
  /// Empty when `ev` is a legal next event (state advances), else the reason.
  std::string check(const BackendEvent& ev);
  bool classified() const { return classified_.has_value(); }
  bool finished() const { return finished_; }

 private:
  std::optional<StateToken> classified_;
  bool finished_ = false;
};

/// Runs every request of `inner` through a StreamChecker. Violations before
/// the terminal become Failed(reason); anything after the terminal is dropped
/// and counted.
class ValidatingBackend final : public Backend {
 public:
  explicit ValidatingBackend(std::unique_ptr<Backend> inner);
  void submit(GenerationRequest request, EventSink sink) override;
  std::int64_t dropped_events() const;

 private:
  std::unique_ptr<Backend> inner_;
  std::shared_ptr<std::atomic<std::int64_t>> dropped_;
};

struct MockLabel {
  StateToken state_token = StateToken::QueryAudio;
  std::string answer;
  double tokens_per_second = 10.0;
};
using LabelMap = std::map<std::string, MockLabel>;

/// Key the mock uses to find a query's label: the query's text content.
std::string label_key(const Turn& query);
/// Whitespace-split answer; every piece after the first keeps one leading space.
std::vector<std::string> split_answer(const std::string& answer);

struct MockOptions {
  Micros classify_latency{100'000};
  /// Label used for keys missing from the map; absent means Failed("unlabeled").
  std::optional<MockLabel> fallback;
};

/// Scripted stand-in for a model: replies per the label map, pacing tokens
/// on the executor's clock.
class MockBackend final : public Backend {
 public:
  MockBackend(Executor& executor, LabelMap labels, MockOptions options = {});
  void submit(GenerationRequest request, EventSink sink) override;

 private:
  Executor& executor_;
  std::shared_ptr<const LabelMap> labels_;
  MockOptions options_;
};

/// Client side of the newline-delimited JSON backend protocol.
class RemoteBackend final : public Backend {
 public:
  /// endpoint: "host:port" or "tcp://host:port".
  RemoteBackend(std::string endpoint, Micros timeout);
  ~RemoteBackend() override;
  RemoteBackend(const RemoteBackend&) = delete;
  RemoteBackend& operator=(const RemoteBackend&) = delete;

  void submit(GenerationRequest request, EventSink sink) override;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

// Wire frames.
Json submit_frame(const GenerationRequest& request);
Json cancel_frame(const std::string& request_id);
Json to_wire(const BackendEvent& ev);
/// Throws PreconditionError for frames that are not server event frames.
BackendEvent from_wire(const Json& frame);

void to_json(Json& j, const BackendEvent& ev);
void to_json(Json& j, const MockLabel& l);
void from_json(const Json& j, MockLabel& l);

}  // namespace duplex::backend
