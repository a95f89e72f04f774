#pragma once

// Two-slot duplex scheduler. One slot generates while the other monitors new
// utterances; noise is suppressed without disturbing the generator, and an
// effective query interrupts it, consolidates the partial answer and swaps
// the slots' roles.
//
// The scheduler is a pure state machine: every handle_* call consumes one
// event and returns the actions the session driver must carry out. It never
// touches a clock, a thread or a backend directly.

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "duplex/backend.hpp"
#include "duplex/messages.hpp"
#include "duplex/session.hpp"
#include "duplex/vad.hpp"

namespace duplex::scheduler {

enum class SlotPhase { Idle, AwaitingClassification, Generating, Consolidating };
std::string_view to_string(SlotPhase p);

struct SlotState {
  SlotId slot_id = SlotId::A;
  SlotRole role = SlotRole::Generator;
  SlotPhase phase = SlotPhase::Idle;
  std::optional<std::string> active_request;
  bool operator==(const SlotState&) const = default;
};

// --- events ----------------------------------------------------------------

struct UtteranceReady {
  vad::AudioSegment segment;
};
struct TextQuery {
  std::string text;
};
struct BackendEv {
  SlotId slot_id = SlotId::A;
  std::string request_id;
  backend::BackendEvent event;
};
struct ClientDisconnect {};

using SchedulerEventKind = std::variant<UtteranceReady, TextQuery, BackendEv, ClientDisconnect>;

struct SchedulerEvent {
  std::uint64_t seq = 0;
  Timestamp time = 0;  // microseconds on the session clock
  SchedulerEventKind kind;
};

Json to_json(const SchedulerEventKind& kind);

// --- actions ---------------------------------------------------------------

struct Submit {
  SlotId slot_id = SlotId::A;
  backend::GenerationRequest request;
};
struct Cancel {
  SlotId slot_id = SlotId::A;
  std::string request_id;
};
struct Notify {
  ServerMessage message;
};

using Action = std::variant<Submit, Cancel, Notify>;

Json to_json(const Action& action);

struct Transition {
  std::vector<Action> actions;
  std::vector<std::string> notes;  // human-readable trace annotations

  std::vector<ServerMessage> notifications() const;
};

struct SchedulerOptions {
  std::string session_id = "s1";
  std::size_t queue_cap = 4;
};

struct SchedulerStats {
  std::int64_t answered = 0;        // answers started (completed or later interrupted)
  std::int64_t completed = 0;
  std::int64_t suppressed = 0;
  std::int64_t interrupts = 0;
  std::int64_t swaps = 0;
  std::int64_t dropped_utterances = 0;  // queue overflow
  std::int64_t stale_tokens = 0;        // tokens of a cancelled generation, never forwarded
  std::int64_t failures = 0;
  std::vector<TurnId> answered_turn_ids;
  bool operator==(const SchedulerStats&) const = default;
};

Json to_json(const SchedulerStats& stats);

class DuplexScheduler {
 public:
  explicit DuplexScheduler(SchedulerOptions options = {});

  /// Initial notification (listening) announcing the session is live.
  Transition start();
  Transition handle(const SchedulerEvent& event);

  Transition handle_utterance(vad::AudioSegment segment, Timestamp now);
  Transition handle_text_query(std::string text, Timestamp now);
  Transition handle_backend(SlotId slot, const std::string& request_id, const backend::BackendEvent& ev, Timestamp now);
  Transition handle_disconnect(Timestamp now);

  std::array<SlotState, 2> slot_states() const;
  const ConversationHistory& history() const { return history_; }
  const SchedulerStats& stats() const { return stats_; }
  std::size_t queued() const { return queue_.size(); }
  /// No request in flight, nothing queued.
  bool quiescent() const;
  bool closed() const { return closed_; }

  /// Empty when every structural invariant holds, else the first violation.
  std::string check_invariants() const;

 private:
  struct Pending {
    std::optional<vad::AudioSegment> audio;  // audio utterance, else text
    std::string text;
  };

  struct Slot {
    SlotId id = SlotId::A;
    SlotRole role = SlotRole::Generator;
    SlotPhase phase = SlotPhase::Idle;
    std::optional<std::string> request;  // open until its terminal event arrives
    Turn query;
    std::optional<vad::AudioSegment> audio;
    std::optional<StateToken> verdict;
    std::optional<TurnId> answer_turn;
    std::vector<std::string> answer_tokens;  // forwarded to the client
    bool muted = false;                      // interrupted: stop forwarding
    bool suppressed = false;                 // resubmitted query came back as noise

    void reset_work();
  };

  struct PendingInterrupt {
    SlotId generator;
    SlotId answerer;
    Turn query;
    std::optional<vad::AudioSegment> audio;
  };

  Slot& slot(SlotId id) { return slots_[static_cast<int>(id)]; }
  const Slot& slot(SlotId id) const { return slots_[static_cast<int>(id)]; }
  Slot& generator_slot();
  Slot& monitor_slot();
  Slot* generating_slot();
  bool busy() const;
  bool idle() const;

  void enqueue(Pending p, Transition& tr);
  void dispatch(Pending p, Timestamp now, Transition& tr);
  void dispatch_queue(Timestamp now, Transition& tr);
  void submit(Slot& s, Transition& tr);
  TurnId commit_query(Slot& s, Timestamp now);
  void start_answer(Slot& s, Turn query, std::optional<vad::AudioSegment> audio, Timestamp now, Transition& tr);
  void begin_generation(Slot& s, Timestamp now, Transition& tr);
  void begin_interrupt(Slot& gen, Slot& answerer, Turn query, std::optional<vad::AudioSegment> audio,
                       Transition& tr);
  void finish_interrupt(Timestamp now, Transition& tr);
  void swap_roles(Transition& tr);

  void handle_classification(Slot& s, StateToken token, Timestamp now, Transition& tr);
  void handle_completion(Slot& s, Timestamp now, Transition& tr);
  void on_classifying_event(Slot& s, const backend::BackendEvent& ev, Timestamp now, Transition& tr);
  void on_generating_event(Slot& s, const backend::BackendEvent& ev, Timestamp now, Transition& tr);
  void on_consolidating_event(Slot& s, const backend::BackendEvent& ev, Timestamp now, Transition& tr);
  void close_partial(Slot& s, Timestamp now, Transition& tr);
  void fault(const std::string& what, Transition& tr);
  void settle(Timestamp now, Transition& tr);

  static void notify(Transition& tr, ServerMessage msg) { tr.actions.emplace_back(Notify{std::move(msg)}); }

  SchedulerOptions options_;
  std::array<Slot, 2> slots_;
  ConversationHistory history_;
  std::deque<Pending> queue_;
  std::optional<PendingInterrupt> interrupt_;
  SchedulerStats stats_;
  TurnId next_turn_id_ = 1;
  std::int64_t next_request_ = 1;
  bool closed_ = false;
  bool announced_idle_ = false;
};

/// One JSON-lines trace record for a processed event.
Json trace_record(const SchedulerEvent& event, const std::array<SlotState, 2>& before,
                  const std::array<SlotState, 2>& after, const Transition& transition);

}  // namespace duplex::scheduler
