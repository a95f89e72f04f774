#include <spdlog/spdlog.h>

#include <thread>

#include "duplex/backend.hpp"
#include "duplex/net.hpp"

namespace duplex::backend {

struct RemoteBackend::Impl : std::enable_shared_from_this<RemoteBackend::Impl> {
  net::Endpoint endpoint;
  std::chrono::milliseconds timeout;
  std::string endpoint_text;

  std::mutex conn_mutex;  // guards socket, reader, writer, active_request
  net::Socket socket;
  std::unique_ptr<net::LineReader> reader;
  std::unique_ptr<net::LineWriter> writer;
  std::string active_request;
  std::thread worker;

  void disconnect() {
    std::lock_guard lock(conn_mutex);
    socket.shutdown();
    socket.close();
    reader.reset();
    writer.reset();
  }

  void run(GenerationRequest request, const EventSink& sink);
};

RemoteBackend::RemoteBackend(std::string endpoint, Micros timeout) : impl_(std::make_shared<Impl>()) {
  impl_->endpoint_text = endpoint;
  impl_->endpoint = net::parse_endpoint(endpoint);
  impl_->timeout = std::chrono::duration_cast<std::chrono::milliseconds>(timeout);
}

RemoteBackend::~RemoteBackend() {
  {
    // Unblocks the worker; it owns teardown of the reader from there on.
    std::lock_guard lock(impl_->conn_mutex);
    impl_->socket.shutdown();
  }
  if (impl_->worker.joinable()) impl_->worker.join();
}

void RemoteBackend::submit(GenerationRequest request, EventSink sink) {
  if (impl_->worker.joinable()) impl_->worker.join();
  impl_->worker = std::thread([impl = impl_.get(), request = std::move(request), sink = std::move(sink)]() mutable {
    impl->run(std::move(request), sink);
  });
}

void RemoteBackend::Impl::run(GenerationRequest request, const EventSink& sink) {
  net::LineReader* in = nullptr;
  {
    std::lock_guard lock(conn_mutex);
    if (!socket.valid()) {
      try {
        socket = net::connect_tcp(endpoint, timeout);
      } catch (const net::NetError& e) {
        spdlog::warn("backend {}: {}", endpoint_text, e.what());
        sink(BackendEvent::failed("connect"));
        return;
      }
      reader = std::make_unique<net::LineReader>(socket.fd());
      writer = std::make_unique<net::LineWriter>(socket.fd());
    }
    if (!writer->write_line(submit_frame(request).dump())) {
      socket.close();
      reader.reset();
      writer.reset();
      sink(BackendEvent::failed("connect"));
      return;
    }
    active_request = request.request_id;
    in = reader.get();
  }

  const std::string rid = request.request_id;
  request.cancel_handle.on_cancel([weak = weak_from_this(), rid] {
    auto self = weak.lock();
    if (!self) return;
    std::lock_guard lock(self->conn_mutex);
    if (self->writer && self->active_request == rid) self->writer->write_line(cancel_frame(rid).dump());
  });

  auto finish = [&](BackendEvent ev, bool drop_connection) {
    {
      std::lock_guard lock(conn_mutex);
      active_request.clear();
    }
    if (drop_connection) disconnect();
    sink(std::move(ev));
  };

  StreamChecker checker;
  std::string line;
  for (;;) {
    const auto status = in->read_line(line, timeout);
    if (status == net::ReadStatus::Timeout) return finish(BackendEvent::failed("timeout"), true);
    if (status == net::ReadStatus::Closed) return finish(BackendEvent::failed("connection closed"), true);
    if (line.empty()) continue;

    BackendEvent ev;
    try {
      const Json frame = Json::parse(line);
      if (frame.contains("request_id") && frame["request_id"].is_string() && frame["request_id"] != rid) {
        continue;  // late frame from an earlier request
      }
      ev = from_wire(frame);
    } catch (const std::exception& e) {
      return finish(BackendEvent::failed(std::string("protocol: malformed frame: ") + e.what()), true);
    }
    if (const std::string violation = checker.check(ev); !violation.empty()) {
      return finish(BackendEvent::failed(violation), true);
    }
    if (ev.terminal()) return finish(std::move(ev), false);
    sink(std::move(ev));
  }
}

}  // namespace duplex::backend
