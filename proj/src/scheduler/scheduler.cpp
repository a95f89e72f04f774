#include "duplex/scheduler.hpp"

#include <algorithm>

namespace duplex::scheduler {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string slot_name(SlotId id) { return std::string(to_string(id)); }

Json slot_json(const SlotState& s) {
  Json j{{"slot", slot_name(s.slot_id)},
         {"role", std::string(to_string(s.role))},
         {"phase", std::string(to_string(s.phase))}};
  j["active_request"] = s.active_request ? Json(*s.active_request) : Json(nullptr);
  return j;
}

std::string utterance_name(const vad::AudioSegment& seg) {
  return seg.utterance.empty() ? "segment-" + std::to_string(seg.segment_id) : seg.utterance;
}

}  // namespace

std::string_view to_string(SlotPhase p) {
  switch (p) {
    case SlotPhase::Idle: return "Idle";
    case SlotPhase::AwaitingClassification: return "AwaitingClassification";
    case SlotPhase::Generating: return "Generating";
    case SlotPhase::Consolidating: return "Consolidating";
  }
  return "?";
}

Json to_json(const SchedulerEventKind& kind) {
  return std::visit(Overloaded{
                        [](const UtteranceReady& u) {
                          Json seg = u.segment;
                          return Json{{"kind", "UtteranceReady"}, {"segment", seg}};
                        },
                        [](const TextQuery& t) { return Json{{"kind", "TextQuery"}, {"text", t.text}}; },
                        [](const BackendEv& b) {
                          Json ev = b.event;
                          return Json{{"kind", "BackendEv"},
                                      {"slot", slot_name(b.slot_id)},
                                      {"request_id", b.request_id},
                                      {"event", ev}};
                        },
                        [](const ClientDisconnect&) { return Json{{"kind", "ClientDisconnect"}}; },
                    },
                    kind);
}

Json to_json(const Action& action) {
  return std::visit(Overloaded{
                        [](const Submit& s) {
                          Json query = s.request.query;
                          return Json{{"action", "submit"},
                                      {"slot", slot_name(s.slot_id)},
                                      {"request_id", s.request.request_id},
                                      {"history_turns", s.request.history.size()},
                                      {"query", query}};
                        },
                        [](const Cancel& c) {
                          return Json{{"action", "cancel"}, {"slot", slot_name(c.slot_id)}, {"request_id", c.request_id}};
                        },
                        [](const Notify& n) { return Json{{"action", "notify"}, {"message", to_wire(n.message)}}; },
                    },
                    action);
}

std::vector<ServerMessage> Transition::notifications() const {
  std::vector<ServerMessage> out;
  for (const auto& a : actions) {
    if (const auto* n = std::get_if<Notify>(&a)) out.push_back(n->message);
  }
  return out;
}

Json to_json(const SchedulerStats& s) {
  return Json{{"answered", s.answered},
              {"completed", s.completed},
              {"suppressed", s.suppressed},
              {"interrupts", s.interrupts},
              {"swaps", s.swaps},
              {"dropped_utterances", s.dropped_utterances},
              {"stale_tokens", s.stale_tokens},
              {"failures", s.failures},
              {"answered_turn_ids", s.answered_turn_ids}};
}

Json trace_record(const SchedulerEvent& event, const std::array<SlotState, 2>& before,
                  const std::array<SlotState, 2>& after, const Transition& transition) {
  Json actions = Json::array();
  for (const auto& a : transition.actions) actions.push_back(to_json(a));
  return Json{{"seq", event.seq},
              {"time", event.time},
              {"event", to_json(event.kind)},
              {"before", Json::array({slot_json(before[0]), slot_json(before[1])})},
              {"after", Json::array({slot_json(after[0]), slot_json(after[1])})},
              {"actions", std::move(actions)},
              {"notes", transition.notes}};
}

void DuplexScheduler::Slot::reset_work() {
  query = Turn{};
  audio.reset();
  verdict.reset();
  answer_turn.reset();
  answer_tokens.clear();
  muted = false;
  suppressed = false;
}

DuplexScheduler::DuplexScheduler(SchedulerOptions options) : options_(std::move(options)) {
  slots_[0].id = SlotId::A;
  slots_[0].role = SlotRole::Generator;
  slots_[1].id = SlotId::B;
  slots_[1].role = SlotRole::Monitor;
  history_.system_prompt = std::string(select_system_prompt({Modality::Audio, Modality::Text}).body);
}

Transition DuplexScheduler::start() {
  Transition tr;
  notify(tr, StateEvent{.state = ClientState::Listening});
  announced_idle_ = true;
  return tr;
}

Transition DuplexScheduler::handle(const SchedulerEvent& event) {
  return std::visit(Overloaded{
                        [&](const UtteranceReady& u) { return handle_utterance(u.segment, event.time); },
                        [&](const TextQuery& t) { return handle_text_query(t.text, event.time); },
                        [&](const BackendEv& b) { return handle_backend(b.slot_id, b.request_id, b.event, event.time); },
                        [&](const ClientDisconnect&) { return handle_disconnect(event.time); },
                    },
                    event.kind);
}

std::array<SlotState, 2> DuplexScheduler::slot_states() const {
  std::array<SlotState, 2> out;
  for (int i = 0; i < 2; ++i) {
    out[i] = SlotState{slots_[i].id, slots_[i].role, slots_[i].phase, slots_[i].request};
  }
  return out;
}

DuplexScheduler::Slot& DuplexScheduler::generator_slot() {
  return slots_[0].role == SlotRole::Generator ? slots_[0] : slots_[1];
}

DuplexScheduler::Slot& DuplexScheduler::monitor_slot() {
  return slots_[0].role == SlotRole::Monitor ? slots_[0] : slots_[1];
}

DuplexScheduler::Slot* DuplexScheduler::generating_slot() {
  for (auto& s : slots_) {
    if (s.phase == SlotPhase::Generating) return &s;
  }
  return nullptr;
}

bool DuplexScheduler::busy() const {
  if (interrupt_) return true;
  return std::any_of(slots_.begin(), slots_.end(),
                     [](const Slot& s) { return s.phase == SlotPhase::AwaitingClassification; });
}

bool DuplexScheduler::quiescent() const {
  return queue_.empty() && !interrupt_ &&
         std::none_of(slots_.begin(), slots_.end(), [](const Slot& s) { return s.request.has_value(); });
}

bool DuplexScheduler::idle() const {
  return quiescent() &&
         std::all_of(slots_.begin(), slots_.end(), [](const Slot& s) { return s.phase == SlotPhase::Idle; });
}

// --- inputs ----------------------------------------------------------------

Transition DuplexScheduler::handle_utterance(vad::AudioSegment segment, Timestamp now) {
  Transition tr;
  if (closed_) {
    tr.notes.push_back("ignored utterance: session closed");
    return tr;
  }
  Pending p{std::move(segment), {}};
  if (busy()) {
    enqueue(std::move(p), tr);
  } else {
    dispatch(std::move(p), now, tr);
  }
  settle(now, tr);
  return tr;
}

Transition DuplexScheduler::handle_text_query(std::string text, Timestamp now) {
  Transition tr;
  if (closed_) {
    tr.notes.push_back("ignored text query: session closed");
    return tr;
  }
  if (text.empty()) {
    notify(tr, ErrorMessage{"empty_text", "text query is empty"});
    tr.notes.push_back("rejected empty text query");
    return tr;
  }
  Pending p{std::nullopt, std::move(text)};
  if (busy()) {
    enqueue(std::move(p), tr);
  } else {
    dispatch(std::move(p), now, tr);
  }
  settle(now, tr);
  return tr;
}

Transition DuplexScheduler::handle_disconnect(Timestamp now) {
  Transition tr;
  if (closed_) return tr;
  closed_ = true;
  if (!queue_.empty()) {
    tr.notes.push_back("discarded " + std::to_string(queue_.size()) + " queued input(s)");
    queue_.clear();
  }
  for (auto& s : slots_) {
    if (s.request) {
      tr.actions.emplace_back(Cancel{s.id, *s.request});
      tr.notes.push_back("cancel " + *s.request + " on slot " + slot_name(s.id) + " (disconnect)");
      s.muted = true;
    }
  }
  settle(now, tr);
  return tr;
}

Transition DuplexScheduler::handle_backend(SlotId id, const std::string& request_id, const backend::BackendEvent& ev,
                                           Timestamp now) {
  Transition tr;
  Slot& s = slot(id);
  if (!s.request || *s.request != request_id) {
    if (ev.kind == backend::EventKind::Token) ++stats_.stale_tokens;
    tr.notes.push_back("ignored " + std::string(backend::to_string(ev.kind)) + " from closed request " + request_id);
    return tr;
  }
  if (ev.terminal()) s.request.reset();

  switch (s.phase) {
    case SlotPhase::AwaitingClassification: on_classifying_event(s, ev, now, tr); break;
    case SlotPhase::Generating: on_generating_event(s, ev, now, tr); break;
    case SlotPhase::Consolidating: on_consolidating_event(s, ev, now, tr); break;
    case SlotPhase::Idle:
      fault(std::string(backend::to_string(ev.kind)) + " for idle slot " + slot_name(id), tr);
      break;
  }
  settle(now, tr);
  return tr;
}

// --- queueing --------------------------------------------------------------

void DuplexScheduler::enqueue(Pending p, Transition& tr) {
  const std::string what = p.audio ? "utterance " + utterance_name(*p.audio) : "text query";
  queue_.push_back(std::move(p));
  tr.notes.push_back("queued " + what + " (depth " + std::to_string(queue_.size()) + ")");
  while (queue_.size() > std::max<std::size_t>(options_.queue_cap, 1)) {
    const Pending& dropped = queue_.front();
    tr.notes.push_back("queue full: dropped oldest " +
                       (dropped.audio ? "utterance " + utterance_name(*dropped.audio) : std::string("text query")));
    queue_.pop_front();
    ++stats_.dropped_utterances;
  }
}

void DuplexScheduler::dispatch(Pending p, Timestamp now, Transition& tr) {
  if (p.audio) {
    // While something is generating the Monitor classifies; otherwise the
    // idle Generator slot does, and keeps the request if it is a query.
    Slot& s = generating_slot() ? monitor_slot() : generator_slot();
    s.reset_work();
    s.query.source = TurnSource::User;
    s.query.content = {utterance_name(*p.audio)};
    s.query.modalities = {Modality::Audio};
    s.query.wall_time = now;
    s.query.turn_id = next_turn_id_;
    s.audio = std::move(p.audio);
    s.phase = SlotPhase::AwaitingClassification;
    tr.notes.push_back("classify utterance " + s.query.text() + " on slot " + slot_name(s.id));
    submit(s, tr);
    return;
  }

  Turn query;
  query.source = TurnSource::User;
  query.state_token = StateToken::QueryText;
  query.content = {p.text};
  query.modalities = {Modality::Text};
  query.wall_time = now;
  query.turn_id = next_turn_id_;
  if (Slot* g = generating_slot()) {
    begin_interrupt(*g, slot(other(g->id)), std::move(query), std::nullopt, tr);
  } else {
    start_answer(generator_slot(), std::move(query), std::nullopt, now, tr);
  }
}

void DuplexScheduler::dispatch_queue(Timestamp now, Transition& tr) {
  while (!closed_ && !busy() && !queue_.empty()) {
    Pending p = std::move(queue_.front());
    queue_.pop_front();
    tr.notes.push_back("dequeue " + (p.audio ? "utterance " + utterance_name(*p.audio) : std::string("text query")));
    dispatch(std::move(p), now, tr);
  }
}

// --- slot work -------------------------------------------------------------

void DuplexScheduler::submit(Slot& s, Transition& tr) {
  const std::string rid = options_.session_id + "-r" + std::to_string(next_request_++);
  s.request = rid;
  backend::GenerationRequest request;
  request.request_id = rid;
  request.history = history_;
  request.query = s.query;
  request.audio = s.audio;
  tr.actions.emplace_back(Submit{s.id, std::move(request)});
  tr.notes.push_back("submit " + rid + " on slot " + slot_name(s.id));
}

TurnId DuplexScheduler::commit_query(Slot& s, Timestamp now) {
  s.query.turn_id = next_turn_id_++;
  s.query.wall_time = now;
  history_ = append_turn(std::move(history_), s.query);
  s.answer_turn = next_turn_id_++;
  return s.query.turn_id;
}

void DuplexScheduler::start_answer(Slot& s, Turn query, std::optional<vad::AudioSegment> audio, Timestamp now,
                                   Transition& tr) {
  s.reset_work();
  s.query = std::move(query);
  s.audio = std::move(audio);
  // The backend classifies the query again; the verdict is confirmed when
  // its Classified event arrives.
  submit(s, tr);
  commit_query(s, now);
  s.phase = SlotPhase::Generating;
  begin_generation(s, now, tr);
}

void DuplexScheduler::begin_generation(Slot& s, Timestamp, Transition& tr) {
  ++stats_.answered;
  stats_.answered_turn_ids.push_back(*s.answer_turn);
  const bool text = s.query.state_token == StateToken::QueryText;
  notify(tr, StateEvent{.state = ClientState::Generating,
                        .turn_id = s.answer_turn,
                        .channel = std::string(text ? "text" : "speech")});
  tr.notes.push_back("slot " + slot_name(s.id) + " answers turn " + std::to_string(s.query.turn_id) +
                     " as turn " + std::to_string(*s.answer_turn));
}

void DuplexScheduler::begin_interrupt(Slot& gen, Slot& answerer, Turn query, std::optional<vad::AudioSegment> audio,
                                      Transition& tr) {
  ++stats_.interrupts;
  gen.muted = true;
  gen.phase = SlotPhase::Consolidating;
  notify(tr, StateEvent{.state = ClientState::Interrupted, .turn_id = gen.answer_turn});
  tr.notes.push_back("interrupt turn " + std::to_string(gen.answer_turn.value_or(0)) + " on slot " +
                     slot_name(gen.id));
  if (gen.request) {
    tr.actions.emplace_back(Cancel{gen.id, *gen.request});
    tr.notes.push_back("cancel " + *gen.request + " on slot " + slot_name(gen.id));
  }
  // The answer is regenerated against the consolidated history, so the
  // classifying request is not kept.
  if (answerer.request) {
    tr.actions.emplace_back(Cancel{answerer.id, *answerer.request});
    tr.notes.push_back("cancel " + *answerer.request + " on slot " + slot_name(answerer.id));
  }
  interrupt_ = PendingInterrupt{gen.id, answerer.id, std::move(query), std::move(audio)};
}

void DuplexScheduler::finish_interrupt(Timestamp now, Transition& tr) {
  if (!interrupt_) return;
  Slot& gen = slot(interrupt_->generator);
  Slot& ans = slot(interrupt_->answerer);
  if (gen.request || ans.request) return;

  if (gen.answer_turn) {
    history_ = consolidate(std::move(history_), gen.answer_tokens, *gen.answer_turn, now);
    tr.notes.push_back("consolidate turn " + std::to_string(*gen.answer_turn) + " with " +
                       std::to_string(gen.answer_tokens.size()) + " token(s)");
  }
  gen.reset_work();
  gen.phase = SlotPhase::Idle;
  ans.reset_work();
  ans.phase = SlotPhase::Idle;
  PendingInterrupt pending = std::move(*interrupt_);
  interrupt_.reset();
  if (closed_) return;
  swap_roles(tr);
  start_answer(ans, std::move(pending.query), std::move(pending.audio), now, tr);
}

void DuplexScheduler::swap_roles(Transition& tr) {
  std::swap(slots_[0].role, slots_[1].role);
  ++stats_.swaps;
  notify(tr, StateEvent{.state = ClientState::Swap, .roles = std::array<SlotRole, 2>{slots_[0].role, slots_[1].role}});
  tr.notes.push_back("swap: A=" + std::string(to_string(slots_[0].role)) + " B=" + std::string(to_string(slots_[1].role)));
}

// --- backend events --------------------------------------------------------

void DuplexScheduler::handle_classification(Slot& s, StateToken token, Timestamp now, Transition& tr) {
  s.verdict = token;
  tr.notes.push_back("slot " + slot_name(s.id) + " classified " + s.query.text() + " as " + std::string(render(token)));
  if (token == StateToken::NoisyAudio) {
    ++stats_.suppressed;
    notify(tr, StateEvent{.state = ClientState::Suppressed, .utterance = s.query.text()});
    return;
  }
  s.query.state_token = token;
  if (s.role == SlotRole::Generator) {
    // Idle session: the classifying request simply keeps going.
    commit_query(s, now);
    s.phase = SlotPhase::Generating;
    begin_generation(s, now, tr);
    return;
  }
  Slot& gen = slot(other(s.id));
  if (gen.phase == SlotPhase::Generating) {
    begin_interrupt(gen, s, s.query, s.audio, tr);
    return;
  }
  // The previous answer finished while this one was being classified:
  // hand the Generator role over without interrupting anything.
  swap_roles(tr);
  commit_query(s, now);
  s.phase = SlotPhase::Generating;
  begin_generation(s, now, tr);
}

void DuplexScheduler::handle_completion(Slot& s, Timestamp now, Transition& tr) {
  if (s.suppressed) {
    tr.notes.push_back("slot " + slot_name(s.id) + " finished a query reclassified as noise");
  } else {
    Turn answer;
    answer.turn_id = *s.answer_turn;
    answer.source = TurnSource::Assistant;
    answer.content = s.answer_tokens;
    answer.modalities = {Modality::Text};
    answer.wall_time = now;
    history_ = append_turn(std::move(history_), std::move(answer));
    ++stats_.completed;
    notify(tr, AnswerDone{*s.answer_turn});
    tr.notes.push_back("commit turn " + std::to_string(*s.answer_turn) + " (" +
                       std::to_string(s.answer_tokens.size()) + " token(s))");
  }
  s.reset_work();
  s.phase = SlotPhase::Idle;
}

void DuplexScheduler::on_classifying_event(Slot& s, const backend::BackendEvent& ev, Timestamp now, Transition& tr) {
  const bool answerer = interrupt_ && interrupt_->answerer == s.id;
  switch (ev.kind) {
    case backend::EventKind::Classified:
      if (s.verdict) return fault("second classification on slot " + slot_name(s.id), tr);
      handle_classification(s, *ev.state_token, now, tr);
      return;
    case backend::EventKind::Token:
      if (answerer) {
        tr.notes.push_back("drop token from cancelled classifier on slot " + slot_name(s.id));
        return;
      }
      return fault("token on classifying slot " + slot_name(s.id), tr);
    default: break;
  }
  // Terminal.
  if (answerer) {
    tr.notes.push_back("classifier on slot " + slot_name(s.id) + " closed (" +
                       std::string(backend::to_string(ev.kind)) + ")");
    s.phase = SlotPhase::Idle;
    return;
  }
  if (ev.kind == backend::EventKind::Failed) {
    ++stats_.failures;
    if (!closed_) notify(tr, ErrorMessage{"backend_failed", ev.text});
    tr.notes.push_back("classification failed on slot " + slot_name(s.id) + ": " + ev.text);
  } else if (ev.kind == backend::EventKind::Done && s.verdict != StateToken::NoisyAudio) {
    fault("done without a noise verdict on classifying slot " + slot_name(s.id), tr);
  } else {
    tr.notes.push_back("slot " + slot_name(s.id) + " back to idle");
  }
  s.reset_work();
  s.phase = SlotPhase::Idle;
}

void DuplexScheduler::on_generating_event(Slot& s, const backend::BackendEvent& ev, Timestamp now, Transition& tr) {
  switch (ev.kind) {
    case backend::EventKind::Classified:
      if (s.verdict) return fault("second classification on slot " + slot_name(s.id), tr);
      s.verdict = ev.state_token;
      if (*ev.state_token == StateToken::NoisyAudio) {
        s.suppressed = true;
        ++stats_.suppressed;
        notify(tr, StateEvent{.state = ClientState::Suppressed, .utterance = s.query.text()});
        // The generating event already opened this turn for the client.
        notify(tr, StateEvent{.state = ClientState::Interrupted, .turn_id = s.answer_turn});
        tr.notes.push_back("resubmitted query reclassified as noise on slot " + slot_name(s.id));
      }
      return;
    case backend::EventKind::Token:
      if (s.muted || s.suppressed) {
        ++stats_.stale_tokens;
        tr.notes.push_back("drop token on slot " + slot_name(s.id));
        return;
      }
      s.answer_tokens.push_back(ev.text);
      notify(tr, AnswerToken{ev.text, *s.answer_turn});
      return;
    case backend::EventKind::Done: handle_completion(s, now, tr); return;
    case backend::EventKind::Failed:
      ++stats_.failures;
      if (!closed_) notify(tr, ErrorMessage{"backend_failed", ev.text});
      tr.notes.push_back("generation failed on slot " + slot_name(s.id) + ": " + ev.text);
      close_partial(s, now, tr);
      return;
    case backend::EventKind::Cancelled:
      tr.notes.push_back("generation cancelled on slot " + slot_name(s.id));
      close_partial(s, now, tr);
      return;
  }
}

void DuplexScheduler::close_partial(Slot& s, Timestamp now, Transition& tr) {
  if (s.answer_turn) {
    if (!closed_) notify(tr, StateEvent{.state = ClientState::Interrupted, .turn_id = s.answer_turn});
    history_ = consolidate(std::move(history_), s.answer_tokens, *s.answer_turn, now);
  }
  s.reset_work();
  s.phase = SlotPhase::Idle;
}

void DuplexScheduler::on_consolidating_event(Slot& s, const backend::BackendEvent& ev, Timestamp, Transition& tr) {
  if (!ev.terminal()) {
    if (ev.kind == backend::EventKind::Token) ++stats_.stale_tokens;
    tr.notes.push_back("drop " + std::string(backend::to_string(ev.kind)) + " from interrupted slot " +
                       slot_name(s.id));
    return;
  }
  tr.notes.push_back("interrupted generation on slot " + slot_name(s.id) + " stopped (" +
                     std::string(backend::to_string(ev.kind)) + ")");
}

void DuplexScheduler::fault(const std::string& what, Transition& tr) {
  ++stats_.failures;
  tr.notes.push_back("protocol fault: " + what);
  if (!closed_) notify(tr, ErrorMessage{"session_fault", what});
}

void DuplexScheduler::settle(Timestamp now, Transition& tr) {
  finish_interrupt(now, tr);
  dispatch_queue(now, tr);
  if (idle()) {
    if (!announced_idle_ && !closed_) notify(tr, StateEvent{.state = ClientState::Listening});
    announced_idle_ = true;
  } else {
    announced_idle_ = false;
  }
}

std::string DuplexScheduler::check_invariants() const {
  if (slots_[0].role == slots_[1].role) return "both slots hold role " + std::string(to_string(slots_[0].role));
  int generating = 0;
  int classifying = 0;
  for (const auto& s : slots_) {
    const std::string name = "slot " + slot_name(s.id);
    if (s.phase == SlotPhase::Generating) ++generating;
    if (s.phase == SlotPhase::AwaitingClassification) ++classifying;
    if ((s.phase == SlotPhase::Generating || s.phase == SlotPhase::Consolidating) && s.role != SlotRole::Generator) {
      return name + " is " + std::string(to_string(s.phase)) + " without the Generator role";
    }
    if (s.phase == SlotPhase::Consolidating && !interrupt_ && !closed_) return name + " consolidating without an interrupt";
    if ((s.phase == SlotPhase::Generating || s.phase == SlotPhase::AwaitingClassification) && !s.request) {
      return name + " is " + std::string(to_string(s.phase)) + " without an open request";
    }
  }
  if (generating > 1) return "two slots generating";
  if (classifying > 1) return "two slots classifying";
  if (auto problem = validate(history_); !problem.empty()) return "history: " + problem;
  return {};
}

}  // namespace duplex::scheduler
