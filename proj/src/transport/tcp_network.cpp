#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "dflow/error.hpp"
#include "dflow/transport/network.hpp"

namespace dflow::transport {

struct TcpNetwork::Registry {
  std::mutex mu;
  // fd -> outbound backlog (nullptr for listeners)
  std::map<int, const std::vector<std::byte>*> fds;
  int wake_read = -1;
  int wake_write = -1;

  void add(int fd, const std::vector<std::byte>* backlog) {
    std::lock_guard lock(mu);
    fds[fd] = backlog;
  }
  void remove(int fd) {
    std::lock_guard lock(mu);
    fds.erase(fd);
  }
};

namespace {

void set_nonblocking(int fd) {
  int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

std::string errno_text(int err) {
  switch (err) {
    case EPIPE: return "broken pipe";
    case ECONNRESET: return "connection reset";
    case ECONNREFUSED: return "connection refused";
    case ETIMEDOUT: return "connection timed out";
    default: return std::strerror(err);
  }
}

bool split_address(const std::string& address, std::string& host, std::string& port) {
  auto colon = address.rfind(':');
  if (colon == std::string::npos || colon + 1 == address.size()) return false;
  host = address.substr(0, colon);
  port = address.substr(colon + 1);
  if (host.empty() || host == "*") host = "0.0.0.0";
  if (host == "localhost") host = "127.0.0.1";
  return true;
}

bool resolve(const std::string& address, sockaddr_in& out, std::string& error) {
  std::string host, port;
  if (!split_address(address, host, port)) {
    error = "bad address '" + address + "' (expected host:port)";
    return false;
  }
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res);
  if (rc != 0 || !res) {
    error = "cannot resolve '" + address + "': " + ::gai_strerror(rc);
    return false;
  }
  std::memcpy(&out, res->ai_addr, sizeof(sockaddr_in));
  ::freeaddrinfo(res);
  return true;
}

class TcpConnection : public Connection {
 public:
  TcpConnection(std::shared_ptr<TcpNetwork::Registry> registry, int fd) : registry_(std::move(registry)), fd_(fd) {
    set_nonblocking(fd_);
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    registry_->add(fd_, &backlog_);
  }
  ~TcpConnection() override { close(); }

  bool send(std::span<const std::byte> bytes) override {
    if (fd_ < 0 || broken_) {
      if (error_.empty()) error_ = "broken pipe";
      return false;
    }
    {
      std::lock_guard lock(registry_->mu);
      backlog_.insert(backlog_.end(), bytes.begin(), bytes.end());
    }
    return flush();
  }

  bool receive(std::vector<std::byte>& out) override {
    if (fd_ < 0) return false;
    if (!broken_) flush();
    bool got = false;
    std::byte buf[65536];
    while (!eof_) {
      ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
      if (n > 0) {
        out.insert(out.end(), buf, buf + n);
        got = true;
        continue;
      }
      if (n == 0) {
        eof_ = true;
        if (error_.empty()) error_ = "connection closed";
        break;
      }
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) break;
      eof_ = true;
      broken_ = true;
      error_ = errno_text(errno);
    }
    return got || !eof_;
  }

  void close() override {
    if (fd_ < 0) return;
    if (!broken_) flush();
    if (!broken_ && !backlog_.empty()) {
      // Give the tail (usually a BYE) a bounded chance to leave.
      timeval tv{1, 0};
      ::setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
      ::fcntl(fd_, F_SETFL, ::fcntl(fd_, F_GETFL, 0) & ~O_NONBLOCK);
      flush();
    }
    registry_->remove(fd_);
    ::close(fd_);
    fd_ = -1;
  }

  const std::string& error() const override { return error_; }

 private:
  bool flush() {
    std::lock_guard lock(registry_->mu);
    std::size_t sent = 0;
    while (sent < backlog_.size()) {
      ssize_t n = ::send(fd_, backlog_.data() + sent, backlog_.size() - sent, MSG_NOSIGNAL);
      if (n > 0) {
        sent += static_cast<std::size_t>(n);
        continue;
      }
      if (n < 0 && errno == EINTR) continue;
      if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) break;
      broken_ = true;
      error_ = errno_text(n < 0 ? errno : EPIPE);
      backlog_.clear();
      return false;
    }
    backlog_.erase(backlog_.begin(), backlog_.begin() + static_cast<std::ptrdiff_t>(sent));
    return true;
  }

  std::shared_ptr<TcpNetwork::Registry> registry_;
  int fd_;
  std::vector<std::byte> backlog_;
  bool eof_ = false;
  bool broken_ = false;
  std::string error_;
};

class TcpListener : public Listener {
 public:
  TcpListener(std::shared_ptr<TcpNetwork::Registry> registry, int fd) : registry_(std::move(registry)), fd_(fd) {
    registry_->add(fd_, nullptr);
  }
  ~TcpListener() override {
    registry_->remove(fd_);
    ::close(fd_);
  }

  std::unique_ptr<Connection> accept() override {
    while (true) {
      int c = ::accept(fd_, nullptr, nullptr);
      if (c >= 0) return std::make_unique<TcpConnection>(registry_, c);
      if (errno == EINTR || errno == ECONNABORTED) continue;
      return nullptr;
    }
  }

  int port() const {
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) != 0) return -1;
    return ntohs(addr.sin_port);
  }

 private:
  std::shared_ptr<TcpNetwork::Registry> registry_;
  int fd_;
};

}  // namespace

TcpNetwork::TcpNetwork() : registry_(std::make_shared<Registry>()) {
  int p[2];
  if (::pipe(p) != 0) throw Error(std::string("pipe: ") + std::strerror(errno));
  set_nonblocking(p[0]);
  set_nonblocking(p[1]);
  registry_->wake_read = p[0];
  registry_->wake_write = p[1];
}

TcpNetwork::~TcpNetwork() {
  ::close(registry_->wake_read);
  ::close(registry_->wake_write);
}

std::unique_ptr<Connection> TcpNetwork::dial(const std::string& address, std::string& error) {
  sockaddr_in addr{};
  if (!resolve(address, addr, error)) return nullptr;
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) {
    error = errno_text(errno);
    return nullptr;
  }
  set_nonblocking(fd);
  int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  if (rc != 0 && errno != EINPROGRESS) {
    error = errno_text(errno);
    ::close(fd);
    return nullptr;
  }
  if (rc != 0) {
    pollfd p{fd, POLLOUT, 0};
    int n = ::poll(&p, 1, 500);
    int so_error = 0;
    socklen_t len = sizeof(so_error);
    if (n <= 0) {
      error = "connection timed out";
      ::close(fd);
      return nullptr;
    }
    ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &so_error, &len);
    if (so_error != 0) {
      error = errno_text(so_error);
      ::close(fd);
      return nullptr;
    }
  }
  return std::make_unique<TcpConnection>(registry_, fd);
}

std::unique_ptr<Listener> TcpNetwork::listen(const std::string& address) {
  sockaddr_in addr{};
  std::string error;
  if (!resolve(address, addr, error)) throw Error(error);
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw Error("socket: " + errno_text(errno));
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    std::string why = errno == EADDRINUSE ? "address in use" : errno_text(errno);
    ::close(fd);
    throw Error("cannot listen on " + address + ": " + why);
  }
  if (::listen(fd, 64) != 0) {
    std::string why = errno_text(errno);
    ::close(fd);
    throw Error("cannot listen on " + address + ": " + why);
  }
  set_nonblocking(fd);
  return std::make_unique<TcpListener>(registry_, fd);
}

void TcpNetwork::wait_until(Clock::time_point deadline) {
  std::vector<pollfd> fds;
  {
    std::lock_guard lock(registry_->mu);
    fds.push_back({registry_->wake_read, POLLIN, 0});
    for (auto& [fd, backlog] : registry_->fds) {
      short events = POLLIN;
      if (backlog && !backlog->empty()) events |= POLLOUT;
      fds.push_back({fd, events, 0});
    }
  }
  auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  if (left < 0) left = 0;
  ::poll(fds.data(), fds.size(), static_cast<int>(left));
  if (fds[0].revents & POLLIN) {
    char buf[64];
    while (::read(registry_->wake_read, buf, sizeof(buf)) > 0) {
    }
  }
}

void TcpNetwork::wake() {
  char c = 1;
  [[maybe_unused]] auto n = ::write(registry_->wake_write, &c, 1);
}

int tcp_listener_port(const Listener& listener) {
  auto* l = dynamic_cast<const TcpListener*>(&listener);
  return l ? l->port() : -1;
}

}  // namespace dflow::transport
