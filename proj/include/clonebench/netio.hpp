#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>
#include <string>
#include <utility>

namespace clonebench {

struct NetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thin blocking TCP wrapper; everything this project needs is loopback
// streams with low-latency small writes, so TCP_NODELAY is always on.
class TcpStream {
public:
  TcpStream() = default;
  explicit TcpStream(int fd) : fd_(fd) { set_nodelay(); }
  TcpStream(TcpStream&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  TcpStream& operator=(TcpStream&& o) noexcept {
    close();
    fd_ = std::exchange(o.fd_, -1);
    return *this;
  }
  TcpStream(const TcpStream&) = delete;
  TcpStream& operator=(const TcpStream&) = delete;
  ~TcpStream() { close(); }

  static TcpStream connect(const std::string& host, uint16_t port) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw NetError("socket: " + std::string(std::strerror(errno)));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd);
      throw NetError("bad address: " + host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      const std::string err = std::strerror(errno);
      ::close(fd);
      throw NetError("connect " + host + ":" + std::to_string(port) + ": " + err);
    }
    return TcpStream(fd);
  }

  bool valid() const { return fd_ >= 0; }

  // Reads exactly n bytes; returns false on clean EOF at a record boundary
  // (no bytes read), throws when the stream dies mid-record.
  bool read_exact(uint8_t* dst, size_t n) {
    size_t got = 0;
    while (got < n) {
      const ssize_t r = ::recv(fd_, dst + got, n - got, 0);
      if (r == 0) {
        if (got == 0) return false;
        throw NetError("connection closed mid-record");
      }
      if (r < 0) {
        if (errno == EINTR) continue;
        throw NetError("recv: " + std::string(std::strerror(errno)));
      }
      got += static_cast<size_t>(r);
    }
    return true;
  }

  void write_all(const uint8_t* src, size_t n) {
    size_t sent = 0;
    while (sent < n) {
      const ssize_t r = ::send(fd_, src + sent, n - sent, MSG_NOSIGNAL);
      if (r < 0) {
        if (errno == EINTR) continue;
        throw NetError("send: " + std::string(std::strerror(errno)));
      }
      sent += static_cast<size_t>(r);
    }
  }

  // Wakes any blocked reader on the peer and on this side.
  void shutdown_both() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

  void close() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

private:
  void set_nodelay() {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }

  int fd_ = -1;
};

class TcpListener {
public:
  // port 0 asks the kernel for an ephemeral port; see port().
  explicit TcpListener(uint16_t port, const std::string& host = "127.0.0.1") {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw NetError("socket: " + std::string(std::strerror(errno)));
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd_);
      throw NetError("bad address: " + host);
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
        ::listen(fd_, 1) != 0) {
      const std::string err = std::strerror(errno);
      ::close(fd_);
      throw NetError("bind/listen " + host + ":" + std::to_string(port) + ": " + err);
    }
    sockaddr_in bound{};
    socklen_t len = sizeof bound;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
  }
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  uint16_t port() const { return port_; }

  TcpStream accept() {
    const int c = ::accept(fd_, nullptr, nullptr);
    if (c < 0) throw NetError("accept: " + std::string(std::strerror(errno)));
    return TcpStream(c);
  }

private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

} // namespace clonebench
