#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "h2scope/http/message.hpp"
#include "h2scope/net/transport.hpp"

namespace h2scope::fixtures {

struct FixtureResource {
  int status = 200;
  std::string content_type = "text/plain";
  std::string body;
  http::HeaderMap headers;
};

struct FixtureServerOptions {
  bool tls = true;
  // Announced in server-preference order. "h2" selects the HTTP/2 engine;
  // any other token is served as HTTP/1.1.
  std::vector<std::string> alpn = {"h2", "http/1.1"};
  bool alpn_fatal_on_mismatch = true;
  std::vector<std::string> npn;
  int max_tls_version = 0;
  int extra_chain_certs = 0;
  std::string organization = "Fixture Org";
  std::string common_name = "fixture.test";
  // Cleartext only: honor "Upgrade: h2c" with 101 Switching Protocols.
  bool h2c_upgrade = false;
  // Headers added to every response (e.g. Alt-Svc).
  http::HeaderMap extra_headers;
  std::uint16_t port = 0;
};

// Loopback HTTP/1.1 + HTTP/2 server with in-memory, host-aware routes.
class FixtureServer {
 public:
  using Handler = std::function<std::optional<http::Response>(const http::Request&, http::Protocol)>;

  explicit FixtureServer(FixtureServerOptions opts);
  ~FixtureServer();
  FixtureServer(const FixtureServer&) = delete;
  FixtureServer& operator=(const FixtureServer&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  const FixtureServerOptions& options() const noexcept { return opts_; }

  // |host| empty matches any Host/:authority.
  void route(const std::string& host, const std::string& path, FixtureResource res);
  // Consulted before the route table.
  void set_handler(Handler h);

  std::size_t connections_accepted() const noexcept { return accepted_.load(); }
  std::size_t requests_served() const noexcept { return served_.load(); }
  void stop();

 private:
  void accept_loop();
  void serve_connection(net::Fd fd);
  void serve_h1(net::Transport& t, bool cleartext);
  http::Response respond(const http::Request& req, http::Protocol proto);

  FixtureServerOptions opts_;
  std::shared_ptr<net::TlsContext> tls_;
  net::Fd listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<std::size_t> accepted_{0};
  std::atomic<std::size_t> served_{0};

  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::string>, FixtureResource> routes_;
  Handler handler_;
  struct Worker {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };
  std::multiset<int> live_fds_;
  std::list<Worker> workers_;
  std::thread acceptor_;
};

}  // namespace h2scope::fixtures
