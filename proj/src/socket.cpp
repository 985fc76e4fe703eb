#include "mlsim/socket.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

namespace mlsim::coupling {

namespace {

[[noreturn]] void fail(const std::string& what) { throw SocketError(what + ": " + std::strerror(errno)); }

/// poll() for `events`; false on timeout.
bool wait_for(int fd, short events, Timeout timeout) {
  pollfd p{fd, events, 0};
  for (;;) {
    const int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) fail("poll");
  }
}

sockaddr_in loopback(std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  return addr;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

void UniqueFd::reset(int fd) {
  if (fd_ >= 0) ::close(fd_);
  fd_ = fd;
}

void LineChannel::send_line(std::string_view line) {
  if (!fd_) throw SocketError("send on a closed channel");
  std::string data(line);
  data.push_back('\n');
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd_.get(), data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail("send");
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::optional<std::string> LineChannel::read_line(Timeout timeout) {
  if (!fd_) throw SocketError("read on a closed channel");
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    Timeout left = kNoTimeout;
    if (timeout.count() >= 0) {
      left = std::chrono::duration_cast<Timeout>(deadline - std::chrono::steady_clock::now());
      if (left.count() < 0) left = Timeout{0};
    }
    if (!wait_for(fd_.get(), POLLIN, left)) throw TimeoutError("timed out waiting for a line");
    char chunk[4096];
    const ssize_t n = ::recv(fd_.get(), chunk, sizeof(chunk), 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == ECONNRESET) return std::nullopt;
      fail("recv");
    }
    if (n == 0) return std::nullopt;  // peer closed; a partial line is discarded
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

Listener Listener::bind_loopback() {
  Listener l;
  l.fd_.reset(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!l.fd_) fail("socket");
  auto addr = loopback(0);
  if (::bind(l.fd_.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) fail("bind");
  if (::listen(l.fd_.get(), 4) < 0) fail("listen");
  socklen_t len = sizeof(addr);
  if (::getsockname(l.fd_.get(), reinterpret_cast<sockaddr*>(&addr), &len) < 0) fail("getsockname");
  l.port_ = ntohs(addr.sin_port);
  return l;
}

LineChannel Listener::accept(Timeout timeout) {
  if (!wait_for(fd_.get(), POLLIN, timeout)) throw TimeoutError("no connection on port " + std::to_string(port_));
  UniqueFd client(::accept4(fd_.get(), nullptr, nullptr, SOCK_CLOEXEC));
  if (!client) fail("accept");
  set_nodelay(client.get());
  return LineChannel(std::move(client));
}

LineChannel connect_loopback(std::uint16_t port, Timeout timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    UniqueFd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd) fail("socket");
    auto addr = loopback(port);
    if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) {
      set_nodelay(fd.get());
      return LineChannel(std::move(fd));
    }
    if (errno != ECONNREFUSED && errno != EINTR) fail("connect to port " + std::to_string(port));
    if (std::chrono::steady_clock::now() >= deadline)
      throw TimeoutError("could not connect to port " + std::to_string(port));
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
}

}  // namespace mlsim::coupling
