#include "duplex/driver.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace duplex {

std::array<std::unique_ptr<backend::Backend>, 2> make_backends(const Config& config, Executor& executor) {
  std::array<std::unique_ptr<backend::Backend>, 2> out;
  for (int i = 0; i < 2; ++i) {
    std::unique_ptr<backend::Backend> inner;
    if (config.backend.mode == BackendMode::Mock) {
      inner = std::make_unique<backend::MockBackend>(executor, config.backend.labels, config.backend.mock);
    } else {
      const auto& eps = config.backend.endpoints;
      inner = std::make_unique<backend::RemoteBackend>(eps[std::min<std::size_t>(i, eps.size() - 1)],
                                                       config.backend.timeout);
    }
    out[i] = std::make_unique<backend::ValidatingBackend>(std::move(inner));
  }
  return out;
}

DuplexSession::DuplexSession(Executor& executor, std::string session_id, const Config& config,
                             std::array<std::unique_ptr<backend::Backend>, 2> backends, SessionHooks hooks)
    : executor_(executor),
      session_id_(session_id),
      scheduler_(scheduler::SchedulerOptions{session_id, config.scheduler.queue_cap}),
      vad_(config.vad),
      backends_(std::move(backends)),
      hooks_(std::move(hooks)),
      alive_(std::make_shared<int>(0)) {}

DuplexSession::~DuplexSession() {
  alive_.reset();
  for (auto& [rid, handle] : open_requests_) handle.cancel();
}

void DuplexSession::start() { apply(scheduler_.start()); }

void DuplexSession::push_audio(std::span<const vad::Sample> pcm, const std::string& utterance) {
  if (!utterance.empty() && !pcm.empty()) {
    const std::int64_t begin = vad_.samples_seen();
    labels_.push_back(LabelRange{begin, begin + static_cast<std::int64_t>(pcm.size()), utterance});
  }
  on_vad_events(vad_.process_chunk(pcm));
}

void DuplexSession::flush_audio() { on_vad_events(vad_.flush()); }

void DuplexSession::push_text(std::string text) { process(scheduler::TextQuery{std::move(text)}); }

void DuplexSession::disconnect() {
  process(scheduler::ClientDisconnect{});
}

void DuplexSession::send_error(std::string code, std::string message) {
  emit(ErrorMessage{std::move(code), std::move(message)});
}

void DuplexSession::on_vad_events(std::vector<vad::VadEvent> events) {
  for (auto& ev : events) {
    if (auto* end = std::get_if<vad::SpeechEnd>(&ev)) {
      vad::AudioSegment segment = std::move(end->segment);
      if (segment.utterance.empty()) segment.utterance = label_for(segment);
      process(scheduler::UtteranceReady{std::move(segment)});
    }
  }
}

std::string DuplexSession::label_for(const vad::AudioSegment& segment) const {
  const double rate = vad_.config().sample_rate;
  const auto begin = static_cast<std::int64_t>(std::llround(segment.start_time * rate));
  const auto end = static_cast<std::int64_t>(std::llround(segment.end_time * rate));
  for (const auto& r : labels_) {
    if (r.begin < end && begin < r.end) return r.utterance;
  }
  return {};
}

void DuplexSession::process(scheduler::SchedulerEventKind kind) {
  scheduler::SchedulerEvent event{next_seq_++, executor_.now().count(), std::move(kind)};
  const auto before = scheduler_.slot_states();
  const scheduler::Transition tr = scheduler_.handle(event);
  const auto after = scheduler_.slot_states();
  if (auto problem = scheduler_.check_invariants(); !problem.empty()) {
    violations_.push_back("seq " + std::to_string(event.seq) + ": " + problem);
    spdlog::error("session {}: invariant violated: {}", session_id_, problem);
  }
  if (hooks_.on_trace) hooks_.on_trace(scheduler::trace_record(event, before, after, tr));
  apply(tr);
}

void DuplexSession::apply(const scheduler::Transition& tr) {
  for (const auto& action : tr.actions) {
    if (const auto* submit = std::get_if<scheduler::Submit>(&action)) {
      const std::string rid = submit->request.request_id;
      const SlotId slot = submit->slot_id;
      open_requests_.emplace(rid, submit->request.cancel_handle);
      std::weak_ptr<int> alive = alive_;
      Executor& executor = executor_;
      backends_[static_cast<int>(slot)]->submit(
          submit->request, [this, alive, &executor, slot, rid](backend::BackendEvent ev) {
            executor.post([this, alive, slot, rid, ev = std::move(ev)]() mutable {
              if (alive.expired()) return;
              if (ev.terminal()) open_requests_.erase(rid);
              process(scheduler::BackendEv{slot, rid, std::move(ev)});
            });
          });
    } else if (const auto* cancel = std::get_if<scheduler::Cancel>(&action)) {
      if (auto it = open_requests_.find(cancel->request_id); it != open_requests_.end()) it->second.cancel();
    } else if (const auto* notify = std::get_if<scheduler::Notify>(&action)) {
      emit(notify->message);
    }
  }
}

void DuplexSession::emit(const ServerMessage& msg) {
  if (auto problem = stream_checker_.check(msg); !problem.empty()) {
    violations_.push_back("stream: " + problem);
    spdlog::error("session {}: stream violation: {}", session_id_, problem);
  }
  if (hooks_.on_message) hooks_.on_message(msg);
}

}  // namespace duplex
