#include "duplex/server.hpp"

#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>

#include "duplex/driver.hpp"

namespace duplex {

namespace {

constexpr std::chrono::milliseconds kPollInterval{200};

std::chrono::milliseconds to_ms(Micros m) { return std::chrono::duration_cast<std::chrono::milliseconds>(m); }

void send_error_line(net::LineWriter& writer, std::string_view code, const std::string& message) {
  writer.write_line(to_wire(ServerMessage{ErrorMessage{std::string(code), message}}).dump());
}

// Stops `executor` once the session has settled or the deadline passes.
void drain(DuplexSession& session, RealExecutor& executor, Micros deadline) {
  if (session.quiescent() || executor.now() >= deadline) {
    executor.stop();
    return;
  }
  executor.schedule_after(Micros(10'000), [&session, &executor, deadline] { drain(session, executor, deadline); });
}

}  // namespace

Server::Server(Config config) : config_(std::move(config)) {}

Server::~Server() {
  stop();
  reap(true);
}

void Server::bind() {
  listener_ = net::listen_tcp(config_.gateway.host, static_cast<std::uint16_t>(config_.gateway.port));
}

std::uint16_t Server::port() const { return net::local_port(listener_); }

void Server::stop() { stopping_.store(true); }

void Server::reap(bool all) {
  std::lock_guard lock(workers_mutex_);
  for (auto it = workers_.begin(); it != workers_.end();) {
    if (all || it->done->load()) {
      if (it->thread.joinable()) it->thread.join();
      it = workers_.erase(it);
    } else {
      ++it;
    }
  }
}

void Server::run() {
  if (!listener_.valid()) bind();
  spdlog::info("listening on {}:{}", config_.gateway.host, port());
  while (!stopping_.load()) {
    net::Socket client = net::accept_with_timeout(listener_, kPollInterval);
    reap(false);
    if (!client.valid()) continue;
    if (active_.load() >= config_.gateway.max_sessions) {
      net::LineWriter writer(client.fd());
      send_error_line(writer, "busy", "session limit reached");
      continue;
    }
    const std::string id = "s" + std::to_string(next_session_++);
    auto done = std::make_shared<std::atomic<bool>>(false);
    ++active_;
    std::lock_guard lock(workers_mutex_);
    workers_.push_back(Worker{std::thread([this, id, done, sock = std::move(client)]() mutable {
                                serve(std::move(sock), id);
                                --active_;
                                done->store(true);
                              }),
                              done});
  }
  listener_.close();
  reap(true);
  spdlog::info("server stopped");
}

void Server::serve(net::Socket socket, std::string session_id) {
  net::LineReader reader(socket.fd());
  net::LineWriter writer(socket.fd());
  std::string line;

  // The first frame must be Hello.
  ClientMessage first;
  {
    const auto status = reader.read_line(line, to_ms(config_.gateway.hello_timeout));
    if (status != net::ReadStatus::Line) return;
    try {
      first = parse_client_message(line);
    } catch (const ProtocolError& e) {
      send_error_line(writer, e.code(), e.what());
      return;
    }
    if (!std::holds_alternative<Hello>(first)) {
      send_error_line(writer, kBadFrame, "expected hello first");
      return;
    }
  }

  Config config = config_;
  try {
    const Json& hello = std::get<Hello>(first).config;
    if (hello.contains("labels")) {
      for (auto& [key, label] : labels_from_json(hello["labels"])) config.backend.labels[key] = label;
    }
  } catch (const std::exception& e) {
    send_error_line(writer, kBadFrame, std::string("bad hello config: ") + e.what());
    return;
  }
  spdlog::info("session {} opened", session_id);

  std::ofstream trace;
  if (config.trace.enabled) {
    std::error_code ec;
    std::filesystem::create_directories(config.trace.directory, ec);
    trace.open(config.trace.directory / (session_id + ".jsonl"));
    if (!trace) spdlog::warn("session {}: cannot open trace file", session_id);
  }

  RealExecutor executor;
  SessionHooks hooks;
  hooks.on_message = [&writer](const ServerMessage& m) { writer.write_line(to_wire(m).dump()); };
  if (trace.is_open()) hooks.on_trace = [&trace](const Json& record) { trace << record.dump() << '\n'; };
  auto session =
      std::make_unique<DuplexSession>(executor, session_id, config, make_backends(config, executor), std::move(hooks));
  DuplexSession* s = session.get();
  std::thread loop([&executor] { executor.run(); });
  executor.post([s] { s->start(); });

  const int rate = config.vad.sample_rate;
  while (!stopping_.load()) {
    const auto status = reader.read_line(line, kPollInterval);
    if (status == net::ReadStatus::Timeout) continue;
    if (status == net::ReadStatus::Closed) break;
    if (line.empty()) continue;

    ClientMessage msg;
    try {
      msg = parse_client_message(line);
    } catch (const ProtocolError& e) {
      executor.post([s, code = e.code(), what = std::string(e.what())] { s->send_error(code, what); });
      if (e.code() == kBadFrame) break;
      continue;
    }
    if (std::holds_alternative<Bye>(msg)) break;
    if (std::holds_alternative<Hello>(msg)) {
      executor.post([s] { s->send_error(std::string(kBadFrame), "duplicate hello"); });
    } else if (auto* chunk = std::get_if<AudioChunk>(&msg)) {
      if (chunk->sample_rate != rate) {
        executor.post([s, got = chunk->sample_rate, rate] {
          s->send_error(std::string(kBadAudio),
                        "sample_rate " + std::to_string(got) + " does not match " + std::to_string(rate));
        });
        continue;
      }
      executor.post([s, pcm = std::move(chunk->pcm), label = std::move(chunk->utterance)] {
        s->push_audio(pcm, label);
      });
    } else if (auto* text = std::get_if<TextQueryMessage>(&msg)) {
      executor.post([s, t = std::move(text->text)]() mutable { s->push_text(std::move(t)); });
    }
  }

  // Drain: cancel in-flight work and wait for the backends to acknowledge.
  const Micros deadline = executor.now() + config.gateway.drain_timeout;
  executor.post([s, &executor, deadline] {
    s->disconnect();
    drain(*s, executor, deadline);
  });
  loop.join();
  session.reset();
  socket.shutdown();
  spdlog::info("session {} closed", session_id);
}

}  // namespace duplex
