#pragma once

// Live service: accepts TCP clients speaking the newline-delimited JSON wire
// protocol. Each connection gets its own DuplexSession, backends and executor
// thread.

#include <atomic>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <thread>

#include "duplex/config.hpp"
#include "duplex/net.hpp"

namespace duplex {

class Server {
 public:
  explicit Server(Config config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds the listening socket. Throws net::NetError (e.g. port in use).
  void bind();
  std::uint16_t port() const;
  /// Accept loop; returns after stop() once every session has drained.
  void run();
  /// Safe from any thread, including signal-handling threads.
  void stop();
  int active_sessions() const { return active_.load(); }

 private:
  struct Worker {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };

  void serve(net::Socket socket, std::string session_id);
  void reap(bool all);

  Config config_;
  net::Socket listener_;
  std::atomic<bool> stopping_{false};
  std::atomic<int> active_{0};
  std::mutex workers_mutex_;
  std::list<Worker> workers_;
  std::int64_t next_session_ = 1;
};

}  // namespace duplex
