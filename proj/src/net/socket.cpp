#include "h2scope/net/socket.hpp"

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

#include "h2scope/common/error.hpp"

namespace h2scope::net {

const char* to_string(NetErrc e) noexcept {
  switch (e) {
    case NetErrc::ResolveFailed: return "ResolveFailed";
    case NetErrc::Refused: return "Refused";
    case NetErrc::Timeout: return "Timeout";
    case NetErrc::Reset: return "Reset";
    case NetErrc::Closed: return "Closed";
    case NetErrc::TlsFailure: return "TlsFailure";
    case NetErrc::NoApplicationProtocol: return "NoApplicationProtocol";
    case NetErrc::Malformed: return "Malformed";
  }
  return "Unknown";
}

int poll_timeout_ms(Deadline deadline) {
  auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
  if (left.count() <= 0) return 0;
  if (left.count() > 60'000) return 60'000;
  return static_cast<int>(left.count());
}

void Fd::reset() noexcept {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

Resolver::Resolver(const Resolver& o) {
  std::lock_guard lk(o.mu_);
  overrides_ = o.overrides_;
}

Resolver& Resolver::operator=(const Resolver& o) {
  if (this != &o) {
    std::scoped_lock lk(mu_, o.mu_);
    overrides_ = o.overrides_;
  }
  return *this;
}

void Resolver::add_override(const std::string& host, std::uint16_t port, Endpoint target) {
  std::lock_guard lk(mu_);
  overrides_[{host, port}] = std::move(target);
}

namespace {

std::uint16_t parse_port(const std::string& s) {
  try {
    std::size_t used = 0;
    unsigned long v = std::stoul(s, &used);
    if (used != s.size() || v > 65535) throw std::out_of_range("port");
    return static_cast<std::uint16_t>(v);
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "bad port '" + s + "'");
  }
}

}  // namespace

void Resolver::add_override_spec(const std::string& spec) {
  // host:port=address:port
  auto eq = spec.find('=');
  if (eq != std::string::npos) {
    std::string lhs = spec.substr(0, eq), rhs = spec.substr(eq + 1);
    auto lc = lhs.rfind(':'), rc = rhs.rfind(':');
    if (lc == std::string::npos || rc == std::string::npos)
      throw Error(ErrorCode::InvalidArgument, "resolve spec '" + spec + "' needs host:port=addr:port");
    add_override(lhs.substr(0, lc), parse_port(lhs.substr(lc + 1)),
                 Endpoint{rhs.substr(0, rc), parse_port(rhs.substr(rc + 1))});
    return;
  }
  // curl style host:port:address keeps the port.
  auto first = spec.find(':');
  auto second = first == std::string::npos ? std::string::npos : spec.find(':', first + 1);
  if (second == std::string::npos)
    throw Error(ErrorCode::InvalidArgument, "resolve spec '" + spec + "' needs host:port:addr");
  std::uint16_t port = parse_port(spec.substr(first + 1, second - first - 1));
  add_override(spec.substr(0, first), port, Endpoint{spec.substr(second + 1), port});
}

std::optional<Endpoint> Resolver::lookup_override(const std::string& host, std::uint16_t port) const {
  std::lock_guard lk(mu_);
  if (auto it = overrides_.find({host, port}); it != overrides_.end()) return it->second;
  if (auto it = overrides_.find({host, 0}); it != overrides_.end()) {
    Endpoint e = it->second;
    if (e.port == 0) e.port = port;
    return e;
  }
  return std::nullopt;
}

bool Resolver::empty() const {
  std::lock_guard lk(mu_);
  return overrides_.empty();
}

void set_nonblocking(int fd, bool on) {
  int flags = ::fcntl(fd, F_GETFL, 0);
  if (flags < 0) return;
  ::fcntl(fd, F_SETFL, on ? (flags | O_NONBLOCK) : (flags & ~O_NONBLOCK));
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

bool wait_fd(int fd, bool for_write, Deadline deadline) {
  for (;;) {
    pollfd p{fd, static_cast<short>(for_write ? POLLOUT : POLLIN), 0};
    int rc = ::poll(&p, 1, poll_timeout_ms(deadline));
    if (rc > 0) return true;
    if (rc == 0) {
      if (std::chrono::steady_clock::now() >= deadline) return false;
      continue;
    }
    if (errno != EINTR) return false;
  }
}

namespace {

Fd try_connect(const sockaddr* addr, socklen_t len, Deadline deadline, NetErrc* err, std::string* detail) {
  Fd fd(::socket(addr->sa_family, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!fd.valid()) {
    *err = NetErrc::Refused;
    *detail = std::strerror(errno);
    return {};
  }
  set_nonblocking(fd.get(), true);
  set_nodelay(fd.get());
  int rc = ::connect(fd.get(), addr, len);
  if (rc == 0) return fd;
  if (errno != EINPROGRESS) {
    *err = errno == ETIMEDOUT ? NetErrc::Timeout : NetErrc::Refused;
    *detail = std::strerror(errno);
    return {};
  }
  if (!wait_fd(fd.get(), true, deadline)) {
    *err = NetErrc::Timeout;
    *detail = "connect timed out";
    return {};
  }
  int soerr = 0;
  socklen_t sl = sizeof(soerr);
  ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &soerr, &sl);
  if (soerr != 0) {
    *err = soerr == ETIMEDOUT ? NetErrc::Timeout : NetErrc::Refused;
    *detail = std::strerror(soerr);
    return {};
  }
  return fd;
}

}  // namespace

Fd connect_tcp(const Resolver& resolver, const std::string& host, std::uint16_t port, Deadline deadline) {
  std::string target_host = host;
  std::uint16_t target_port = port;
  if (auto o = resolver.lookup_override(host, port)) {
    target_host = o->address;
    target_port = o->port;
  }
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  std::string service = std::to_string(target_port);
  int rc = ::getaddrinfo(target_host.c_str(), service.c_str(), &hints, &res);
  if (rc != 0 || res == nullptr) throw NetError(NetErrc::ResolveFailed, host + ": " + ::gai_strerror(rc));
  NetErrc err = NetErrc::Refused;
  std::string detail = "no addresses";
  Fd fd;
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = try_connect(ai->ai_addr, ai->ai_addrlen, deadline, &err, &detail);
    if (fd.valid()) break;
    if (err == NetErrc::Timeout) break;
  }
  ::freeaddrinfo(res);
  if (!fd.valid()) throw NetError(err, host + ":" + std::to_string(port) + " " + detail);
  return fd;
}

Fd listen_tcp(const std::string& address, std::uint16_t port, std::uint16_t* bound_port) {
  Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!fd.valid()) throw Error(ErrorCode::IoError, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(port);
  if (address.empty() || address == "*") {
    sa.sin_addr.s_addr = htonl(INADDR_ANY);
  } else if (::inet_pton(AF_INET, address.c_str(), &sa.sin_addr) != 1) {
    throw Error(ErrorCode::InvalidArgument, "listen address must be IPv4: " + address);
  }
  if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0)
    throw Error(ErrorCode::IoError, std::string("bind: ") + std::strerror(errno));
  if (::listen(fd.get(), 512) != 0) throw Error(ErrorCode::IoError, std::string("listen: ") + std::strerror(errno));
  if (bound_port) {
    socklen_t len = sizeof(sa);
    ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&sa), &len);
    *bound_port = ntohs(sa.sin_port);
  }
  return fd;
}

Fd listen_loopback(std::uint16_t port, std::uint16_t* bound_port) { return listen_tcp("127.0.0.1", port, bound_port); }

}  // namespace h2scope::net
