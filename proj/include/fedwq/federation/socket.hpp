/*
 * Copyright 2026 The FedWQ Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "fedwq/error.hpp"

// Minimal blocking-with-deadline TCP helpers over POSIX sockets.
namespace fedwq::net {

using Clock = std::chrono::steady_clock;

inline constexpr const char* kBindEnvVar = "FEDWQ_BIND";
inline constexpr const char* kDefaultBind = "127.0.0.1:7070";

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  static Endpoint parse(std::string_view text) {
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos || colon + 1 == text.size()) {
      throw ValidationError("endpoint '" + std::string(text) + "' is not host:port");
    }
    Endpoint e;
    e.host = std::string(text.substr(0, colon));
    if (e.host.empty()) e.host = "0.0.0.0";
    const std::string port_text(text.substr(colon + 1));
    char* end = nullptr;
    const long port = std::strtol(port_text.c_str(), &end, 10);
    if (*end != '\0' || port < 0 || port > 65535) {
      throw ValidationError("endpoint '" + std::string(text) + "' has a bad port");
    }
    e.port = static_cast<std::uint16_t>(port);
    return e;
  }

  std::string str() const { return host + ":" + std::to_string(port); }
};

// Bind address precedence: explicit flag, then FEDWQ_BIND, then the default.
inline Endpoint resolve_bind(const std::optional<std::string>& flag) {
  if (flag && !flag->empty()) return Endpoint::parse(*flag);
  if (const char* env = std::getenv(kBindEnvVar); env && *env) return Endpoint::parse(env);
  return Endpoint::parse(kDefaultBind);
}

inline std::string errno_text(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      close();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  void close() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline sockaddr_in resolve(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const auto port = std::to_string(ep.port);
  if (int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0 || !res) {
    throw TransportError("cannot resolve " + ep.str() + ": " + ::gai_strerror(rc));
  }
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof(addr));
  ::freeaddrinfo(res);
  return addr;
}

inline Socket listen_tcp(const Endpoint& ep, int backlog = 64) {
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) throw TransportError(errno_text("socket"));
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  auto addr = resolve(ep);
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw TransportError(errno_text(("bind " + ep.str()).c_str()));
  }
  if (::listen(s.fd(), backlog) != 0) throw TransportError(errno_text("listen"));
  return s;
}

inline std::uint16_t local_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
    throw TransportError(errno_text("getsockname"));
  }
  return ntohs(addr.sin_port);
}

inline int remaining_ms(Clock::time_point deadline) {
  const auto left =
      std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 1'000'000));
}

// Waits for `events` on fd until the deadline; false on timeout.
inline bool wait_fd(int fd, short events, Clock::time_point deadline) {
  while (true) {
    pollfd p{fd, events, 0};
    const int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw TransportError(errno_text("poll"));
  }
}

inline std::optional<Socket> accept_until(const Socket& listener, Clock::time_point deadline) {
  if (!wait_fd(listener.fd(), POLLIN, deadline)) return std::nullopt;
  const int fd = ::accept4(listener.fd(), nullptr, nullptr, SOCK_CLOEXEC);
  if (fd < 0) {
    if (errno == EINTR || errno == EAGAIN || errno == ECONNABORTED) return std::nullopt;
    throw TransportError(errno_text("accept"));
  }
  return Socket(fd);
}

inline Socket connect_tcp(const Endpoint& ep, std::chrono::milliseconds timeout) {
  auto addr = resolve(ep);
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0));
  if (!s.valid()) throw TransportError(errno_text("socket"));
  if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    if (errno != EINPROGRESS) throw TransportError(errno_text(("connect " + ep.str()).c_str()));
    if (!wait_fd(s.fd(), POLLOUT, Clock::now() + timeout)) {
      throw TransportError("connect " + ep.str() + ": timed out");
    }
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) {
      errno = err;
      throw TransportError(errno_text(("connect " + ep.str()).c_str()));
    }
  }
  const int flags = ::fcntl(s.fd(), F_GETFL, 0);
  ::fcntl(s.fd(), F_SETFL, flags & ~O_NONBLOCK);
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return s;
}

inline void write_all(const Socket& s, std::string_view bytes, Clock::time_point deadline) {
  while (!bytes.empty()) {
    if (!wait_fd(s.fd(), POLLOUT, deadline)) throw TransportError("write timed out");
    const auto n = ::send(s.fd(), bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw TransportError(errno_text("send"));
    }
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
}

// Buffered newline-delimited reader.
class LineReader {
 public:
  static constexpr std::size_t kMaxLine = 64 * 1024 * 1024;

  explicit LineReader(const Socket& s) : socket_(s) {}

  // Next line including its '\n'. nullopt on orderly EOF (a trailing partial
  // line is dropped). `cancelled` is polled while waiting; a cancelled or
  // timed-out read throws TransportError.
  std::optional<std::string> read_line(Clock::time_point deadline,
                                       const std::function<bool()>& cancelled = {}) {
    while (true) {
      if (const auto pos = buffer_.find('\n'); pos != std::string::npos) {
        std::string line = buffer_.substr(0, pos + 1);
        buffer_.erase(0, pos + 1);
        return line;
      }
      if (buffer_.size() > kMaxLine) throw TransportError("line exceeds size limit");
      const auto slice = std::min(deadline, Clock::now() + std::chrono::milliseconds(50));
      if (!wait_fd(socket_.fd(), POLLIN, slice)) {
        if (cancelled && cancelled()) throw TransportError("read cancelled");
        if (Clock::now() >= deadline) throw TransportError("read timed out");
        continue;
      }
      char chunk[65536];
      const auto n = ::recv(socket_.fd(), chunk, sizeof(chunk), 0);
      if (n == 0) return std::nullopt;
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        if (errno == ECONNRESET) return std::nullopt;
        throw TransportError(errno_text("recv"));
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  const Socket& socket_;
  std::string buffer_;
};

}  // namespace fedwq::net
