#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mlsim::coupling {

struct SocketError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TimeoutError : SocketError {
  using SocketError::SocketError;
};

/// Owning file descriptor.
class UniqueFd {
 public:
  UniqueFd() = default;
  explicit UniqueFd(int fd) : fd_(fd) {}
  ~UniqueFd() { reset(); }
  UniqueFd(UniqueFd&& o) noexcept : fd_(o.release()) {}
  UniqueFd& operator=(UniqueFd&& o) noexcept {
    if (this != &o) reset(o.release());
    return *this;
  }
  UniqueFd(const UniqueFd&) = delete;
  UniqueFd& operator=(const UniqueFd&) = delete;

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  int release() {
    const int fd = fd_;
    fd_ = -1;
    return fd;
  }
  void reset(int fd = -1);

 private:
  int fd_ = -1;
};

using Timeout = std::chrono::milliseconds;
inline constexpr Timeout kNoTimeout{-1};

/// Newline-framed text stream over a connected socket.
class LineChannel {
 public:
  LineChannel() = default;
  explicit LineChannel(UniqueFd fd) : fd_(std::move(fd)) {}

  bool is_open() const { return static_cast<bool>(fd_); }
  void close() { fd_.reset(); }

  /// Writes `line` followed by '\n'.
  void send_line(std::string_view line);
  /// Next line without its '\n'; std::nullopt once the peer has closed.
  /// Throws TimeoutError when nothing complete arrives within `timeout`.
  std::optional<std::string> read_line(Timeout timeout = kNoTimeout);

 private:
  UniqueFd fd_;
  std::string buffer_;
};

/// Listening TCP socket on 127.0.0.1 with a kernel-chosen free port.
class Listener {
 public:
  static Listener bind_loopback();

  std::uint16_t port() const { return port_; }
  /// Throws TimeoutError if no client connects in time.
  LineChannel accept(Timeout timeout);

 private:
  UniqueFd fd_;
  std::uint16_t port_ = 0;
};

LineChannel connect_loopback(std::uint16_t port, Timeout timeout);

}  // namespace mlsim::coupling
