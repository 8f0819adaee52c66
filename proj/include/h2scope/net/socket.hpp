#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "h2scope/common/time.hpp"

namespace h2scope::net {

enum class NetErrc {
  ResolveFailed,
  Refused,
  Timeout,
  Reset,
  Closed,
  TlsFailure,
  NoApplicationProtocol,
  Malformed,
};

const char* to_string(NetErrc e) noexcept;

// Thrown inside the networking layers; callers at module boundaries convert
// it into a record field rather than letting it escape.
class NetError : public std::runtime_error {
 public:
  NetError(NetErrc errc, const std::string& detail)
      : std::runtime_error(std::string(to_string(errc)) + ": " + detail), errc_(errc) {}
  NetErrc errc() const noexcept { return errc_; }

 private:
  NetErrc errc_;
};

using Deadline = SteadyTime;

inline Deadline deadline_after(std::chrono::milliseconds d) { return std::chrono::steady_clock::now() + d; }

// Remaining milliseconds until |deadline| clamped for poll(); -1 never happens.
int poll_timeout_ms(Deadline deadline);

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  int release() noexcept { return std::exchange(fd_, -1); }
  void reset() noexcept;

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string address;
  std::uint16_t port = 0;
};

// Name resolution with a static override table, so fixture hostnames can be
// pinned to loopback listeners the same way `curl --resolve` does.
class Resolver {
 public:
  Resolver() = default;
  Resolver(const Resolver& o);
  Resolver& operator=(const Resolver& o);

  // Maps host:port to address:port. A port of 0 in |port| matches any port.
  void add_override(const std::string& host, std::uint16_t port, Endpoint target);

  // Parses "host:port=address:port" (or "host:port:address" as curl does).
  void add_override_spec(const std::string& spec);

  std::optional<Endpoint> lookup_override(const std::string& host, std::uint16_t port) const;

  bool empty() const;

 private:
  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::uint16_t>, Endpoint> overrides_;
};

// Blocking connect bounded by |deadline|; the returned socket is non-blocking.
Fd connect_tcp(const Resolver& resolver, const std::string& host, std::uint16_t port, Deadline deadline);

// Listens on an IPv4 address ("" or "*" for any). Port 0 picks an ephemeral port.
Fd listen_tcp(const std::string& address, std::uint16_t port, std::uint16_t* bound_port);

// Listens on 127.0.0.1. Port 0 picks an ephemeral port.
Fd listen_loopback(std::uint16_t port, std::uint16_t* bound_port);

void set_nonblocking(int fd, bool on);
void set_nodelay(int fd);

// Waits until |fd| is readable (or writable); false on timeout.
bool wait_fd(int fd, bool for_write, Deadline deadline);

}  // namespace h2scope::net
