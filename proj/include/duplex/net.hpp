#pragma once

// Minimal blocking TCP plumbing for newline-delimited JSON streams.

#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace duplex::net {

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Owning file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { close(); }
  Socket(Socket&& o) noexcept : fd_(o.release()) {}
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() {
    int fd = fd_;
    fd_ = -1;
    return fd;
  }
  void close();
  /// Wakes up any thread blocked reading this socket.
  void shutdown();

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};
/// "host:port" or "tcp://host:port".
Endpoint parse_endpoint(std::string_view text);

/// Throws NetError on failure or timeout.
Socket connect_tcp(const Endpoint& endpoint, std::chrono::milliseconds timeout);

/// Bound, listening socket. Port 0 picks an ephemeral port.
Socket listen_tcp(const std::string& host, std::uint16_t port, int backlog = 64);
std::uint16_t local_port(const Socket& s);

enum class ReadStatus { Line, Timeout, Closed };

/// Buffered line reader over a socket it does not own.
class LineReader {
 public:
  explicit LineReader(int fd) : fd_(fd) {}
  /// Reads one '\n'-terminated line (terminator stripped). A negative
  /// timeout waits forever.
  ReadStatus read_line(std::string& line, std::chrono::milliseconds timeout = std::chrono::milliseconds(-1));

 private:
  int fd_;
  std::string buffer_;
};

/// Serializes whole-line writes from several threads. Returns false once the
/// peer is gone.
class LineWriter {
 public:
  explicit LineWriter(int fd) : fd_(fd) {}
  bool write_line(std::string_view line);

 private:
  int fd_;
  std::mutex mutex_;
};

/// Waits up to `timeout` for a connection. Returns an invalid socket on timeout.
Socket accept_with_timeout(const Socket& listener, std::chrono::milliseconds timeout);

}  // namespace duplex::net
