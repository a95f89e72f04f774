#include "duplex/backend.hpp"

#include <atomic>
#include <sstream>

#include "duplex/base64.hpp"

namespace duplex::backend {

CancelHandle::CancelHandle() : state_(std::make_shared<State>()) {}

void CancelHandle::cancel() {
  std::vector<std::function<void()>> callbacks;
  {
    std::lock_guard lock(state_->mutex);
    if (state_->cancelled) return;
    state_->cancelled = true;
    callbacks.swap(state_->callbacks);
  }
  for (auto& cb : callbacks) cb();
}

bool CancelHandle::cancelled() const {
  std::lock_guard lock(state_->mutex);
  return state_->cancelled;
}

void CancelHandle::on_cancel(std::function<void()> callback) {
  {
    std::lock_guard lock(state_->mutex);
    if (!state_->cancelled) {
      state_->callbacks.push_back(std::move(callback));
      return;
    }
  }
  callback();
}

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::Classified: return "Classified";
    case EventKind::Token: return "Token";
    case EventKind::Done: return "Done";
    case EventKind::Cancelled: return "Cancelled";
    case EventKind::Failed: return "Failed";
  }
  return "?";
}

std::string StreamChecker::check(const BackendEvent& ev) {
  if (finished_) return ev.terminal() ? "protocol: double terminal" : "protocol: event after terminal";
  switch (ev.kind) {
    case EventKind::Classified:
      if (classified_) return "protocol: duplicate state token";
      if (!ev.state_token) return "protocol: state token missing value";
      classified_ = ev.state_token;
      return {};
    case EventKind::Token:
      if (!classified_) return "protocol: token before state token";
      if (*classified_ == StateToken::NoisyAudio) return "protocol: token after noise state token";
      return {};
    case EventKind::Done:
      if (!classified_) return "protocol: done before state token";
      finished_ = true;
      return {};
    case EventKind::Cancelled:
    case EventKind::Failed:
      finished_ = true;
      return {};
  }
  return "protocol: unknown event";
}

ValidatingBackend::ValidatingBackend(std::unique_ptr<Backend> inner)
    : inner_(std::move(inner)), dropped_(std::make_shared<std::atomic<std::int64_t>>(0)) {}

void ValidatingBackend::submit(GenerationRequest request, EventSink sink) {
  struct Guard {
    std::mutex mutex;
    StreamChecker checker;
    bool failed = false;
  };
  auto guard = std::make_shared<Guard>();
  auto dropped = dropped_;
  CancelHandle handle = request.cancel_handle;
  inner_->submit(std::move(request), [guard, dropped, handle, sink = std::move(sink)](BackendEvent ev) mutable {
    std::optional<BackendEvent> out;
    {
      std::lock_guard lock(guard->mutex);
      if (guard->failed) {
        ++*dropped;
        return;
      }
      const std::string violation = guard->checker.check(ev);
      if (violation.empty()) {
        out = std::move(ev);
      } else if (guard->checker.finished()) {
        ++*dropped;
        return;
      } else {
        guard->failed = true;
        out = BackendEvent::failed(violation);
      }
    }
    if (out->kind == EventKind::Failed && guard->failed) handle.cancel();
    sink(std::move(*out));
  });
}

std::int64_t ValidatingBackend::dropped_events() const { return dropped_->load(); }

std::string label_key(const Turn& query) { return query.text(); }

std::vector<std::string> split_answer(const std::string& answer) {
  std::vector<std::string> pieces;
  std::istringstream in(answer);
  for (std::string word; in >> word;) {
    pieces.push_back(pieces.empty() ? word : " " + word);
  }
  return pieces;
}

namespace {

struct MockRun {
  CancelHandle cancel;
  EventSink sink;
  std::vector<std::string> tokens;
  std::size_t next = 0;
  Micros interval{100'000};
};

// Tasks capture the executor, never the backend, so a queued tick may outlive
// the MockBackend that scheduled it.
void mock_tick(Executor& executor, const std::shared_ptr<MockRun>& run) {
  if (run->cancel.cancelled()) {
    run->sink(BackendEvent::cancelled());
    return;
  }
  run->sink(BackendEvent::token(run->tokens[run->next++]));
  if (run->next == run->tokens.size()) {
    run->sink(BackendEvent::done());
    return;
  }
  executor.schedule_after(run->interval, [&executor, run] { mock_tick(executor, run); });
}

}  // namespace

MockBackend::MockBackend(Executor& executor, LabelMap labels, MockOptions options)
    : executor_(executor), labels_(std::make_shared<const LabelMap>(std::move(labels))), options_(options) {}

void MockBackend::submit(GenerationRequest request, EventSink sink) {
  const std::string key = label_key(request.query);
  std::optional<MockLabel> label;
  if (auto it = labels_->find(key); it != labels_->end()) {
    label = it->second;
  } else {
    label = options_.fallback;
  }

  auto run = std::make_shared<MockRun>();
  run->cancel = request.cancel_handle;
  run->sink = std::move(sink);
  Executor& executor = executor_;
  executor_.schedule_after(options_.classify_latency, [&executor, run, label] {
    if (!label) {
      run->sink(BackendEvent::failed("unlabeled"));
      return;
    }
    if (run->cancel.cancelled()) {
      run->sink(BackendEvent::cancelled());
      return;
    }
    run->sink(BackendEvent::classified(label->state_token));
    if (label->state_token == StateToken::NoisyAudio) {
      run->sink(BackendEvent::done());
      return;
    }
    run->tokens = split_answer(label->answer);
    if (run->tokens.empty()) {
      run->sink(BackendEvent::done());
      return;
    }
    const double tps = label->tokens_per_second > 0 ? label->tokens_per_second : 10.0;
    run->interval = Micros(std::llround(1e6 / tps));
    executor.schedule_after(run->interval, [&executor, run] { mock_tick(executor, run); });
  });
}


Json submit_frame(const GenerationRequest& request) {
  Json frame{{"type", "submit"},
             {"request_id", request.request_id},
             {"prompt", render_prompt(request.history, &request.query)},
             {"query", request.query}};
  if (request.audio) {
    const std::string bytes = vad::encode_pcm16le(request.audio->pcm);
    frame["audio"] = Json{{"pcm", base64_encode(bytes)}};
  }
  return frame;
}

Json cancel_frame(const std::string& request_id) { return Json{{"type", "cancel"}, {"request_id", request_id}}; }

Json to_wire(const BackendEvent& ev) {
  switch (ev.kind) {
    case EventKind::Classified: return Json{{"type", "state_token"}, {"value", *ev.state_token}};
    case EventKind::Token: return Json{{"type", "token"}, {"text", ev.text}};
    case EventKind::Done: return Json{{"type", "done"}};
    case EventKind::Cancelled: return Json{{"type", "cancelled"}};
    case EventKind::Failed: return Json{{"type", "failed"}, {"reason", ev.text}};
  }
  return Json{};
}

BackendEvent from_wire(const Json& frame) {
  if (!frame.is_object() || !frame.contains("type") || !frame["type"].is_string()) {
    throw PreconditionError("frame without a type");
  }
  const auto type = frame["type"].get<std::string>();
  if (type == "state_token") {
    if (!frame.contains("value") || !frame["value"].is_string()) throw PreconditionError("state_token without value");
    return BackendEvent::classified(parse_state_token(frame["value"].get<std::string>()));
  }
  if (type == "token") {
    if (!frame.contains("text") || !frame["text"].is_string()) throw PreconditionError("token without text");
    return BackendEvent::token(frame["text"].get<std::string>());
  }
  if (type == "done") return BackendEvent::done();
  if (type == "cancelled") return BackendEvent::cancelled();
  if (type == "failed") return BackendEvent::failed(frame.value("reason", std::string("remote failure")));
  throw PreconditionError("unknown frame type '" + type + "'");
}

void to_json(Json& j, const BackendEvent& ev) {
  j = Json{{"kind", std::string(to_string(ev.kind))}};
  if (ev.state_token) j["state_token"] = *ev.state_token;
  if (ev.kind == EventKind::Token) j["text"] = ev.text;
  if (ev.kind == EventKind::Failed) j["reason"] = ev.text;
}

void to_json(Json& j, const MockLabel& l) {
  j = Json{{"state_token", l.state_token}, {"answer", l.answer}, {"tokens_per_second", l.tokens_per_second}};
}

void from_json(const Json& j, MockLabel& l) {
  l.state_token = j.at("state_token").get<StateToken>();
  l.answer = j.value("answer", std::string{});
  l.tokens_per_second = j.value("tokens_per_second", 10.0);
  if (!(l.tokens_per_second > 0)) throw PreconditionError("label: tokens_per_second must be positive");
}

}  // namespace duplex::backend
