#include "h2scope/fixtures/fixture_server.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <spdlog/spdlog.h>

#include "h2scope/http/h1.hpp"
#include "h2scope/http/h2_connection.hpp"

namespace h2scope::fixtures {

using http::Protocol;
using http::Request;
using http::Response;

namespace {

std::string strip_port(const std::string& authority) {
  if (!authority.empty() && authority.front() == '[') return authority;
  auto c = authority.rfind(':');
  return c == std::string::npos ? authority : authority.substr(0, c);
}

std::string path_only(const std::string& target) {
  auto q = target.find('?');
  return q == std::string::npos ? target : target.substr(0, q);
}

}  // namespace

FixtureServer::FixtureServer(FixtureServerOptions opts) : opts_(std::move(opts)) {
  net::ignore_sigpipe();
  if (opts_.tls) {
    net::TlsServerOptions t;
    t.alpn = opts_.alpn;
    t.alpn_fatal_on_mismatch = opts_.alpn_fatal_on_mismatch;
    t.npn = opts_.npn;
    t.max_version = opts_.max_tls_version;
    t.extra_chain_certs = opts_.extra_chain_certs;
    t.organization = opts_.organization;
    t.common_name = opts_.common_name;
    tls_ = net::TlsContext::server(t);
  }
  listener_ = net::listen_loopback(opts_.port, &port_);
  acceptor_ = std::thread([this] { accept_loop(); });
}

FixtureServer::~FixtureServer() { stop(); }

void FixtureServer::stop() {
  if (stopping_.exchange(true)) return;
  ::shutdown(listener_.get(), SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  std::list<Worker> workers;
  {
    std::lock_guard lk(mu_);
    for (int fd : live_fds_) ::shutdown(fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (auto& w : workers) {
    if (w.thread.joinable()) w.thread.join();
  }
}

void FixtureServer::route(const std::string& host, const std::string& path, FixtureResource res) {
  std::lock_guard lk(mu_);
  routes_[{host, path}] = std::move(res);
}

void FixtureServer::set_handler(Handler h) {
  std::lock_guard lk(mu_);
  handler_ = std::move(h);
}

void FixtureServer::accept_loop() {
  while (!stopping_.load()) {
    pollfd p{listener_.get(), POLLIN, 0};
    int rc = ::poll(&p, 1, 200);
    if (rc <= 0) continue;
    int cfd = ::accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC);
    if (cfd < 0) continue;
    accepted_.fetch_add(1);
    net::set_nodelay(cfd);
    std::lock_guard lk(mu_);
    if (stopping_.load()) {
      ::close(cfd);
      break;
    }
    live_fds_.insert(cfd);
    for (auto it = workers_.begin(); it != workers_.end();) {
      if (it->done->load()) {
        it->thread.join();
        it = workers_.erase(it);
      } else {
        ++it;
      }
    }
    auto done = std::make_shared<std::atomic<bool>>(false);
    workers_.push_back(Worker{std::thread([this, cfd, done] {
                                serve_connection(net::Fd(cfd));
                                done->store(true);
                              }),
                              done});
  }
}

void FixtureServer::serve_connection(net::Fd fd) {
  int raw = fd.get();
  try {
    if (opts_.tls) {
      auto t = net::TlsTransport::accept(std::move(fd), tls_, net::deadline_after(std::chrono::seconds(10)));
      if (t->alpn_selected() == "h2") {
        http::H2Connection::Options o;
        o.idle_timeout = std::chrono::seconds(30);
        http::H2Connection::serve(
            std::move(t), [this](const Request& r) { return respond(r, Protocol::H2); }, o);
      } else {
        serve_h1(*t, false);
      }
    } else {
      net::PlainTransport t(std::move(fd));
      serve_h1(t, true);
    }
  } catch (const std::exception& e) {
    spdlog::debug("fixture connection ended: {}", e.what());
  }
  std::lock_guard lk(mu_);
  if (auto it = live_fds_.find(raw); it != live_fds_.end()) live_fds_.erase(it);
}

void FixtureServer::serve_h1(net::Transport& t, bool cleartext) {
  http::H1RequestReader reader;
  for (;;) {
    auto req = reader.next(t, net::deadline_after(std::chrono::seconds(30)));
    if (!req) return;
    req->scheme = cleartext ? "http" : "https";
    if (cleartext && opts_.h2c_upgrade && http::iequals(req->headers.get("upgrade").value_or(""), "h2c")) {
      Response sw{101, {}, {}};
      sw.headers.add("Connection", "Upgrade");
      sw.headers.add("Upgrade", "h2c");
      net::write_all(t, http::serialize_response(sw), net::deadline_after(std::chrono::seconds(10)));
      // Hand the socket to the HTTP/2 engine; the upgrade request is stream 1.
      auto* plain = dynamic_cast<net::PlainTransport*>(&t);
      if (!plain) return;
      auto owned = std::make_unique<net::PlainTransport>(net::Fd(::dup(plain->fd())));
      plain->close();
      http::H2Connection::Options o;
      o.idle_timeout = std::chrono::seconds(10);
      http::H2Connection::serve(
          std::move(owned), [this](const Request& r) { return respond(r, Protocol::H2); }, o, *req,
          reader.take_buffer());
      return;
    }
    Response resp = respond(*req, Protocol::H1);
    bool close_after = http::iequals(req->headers.get("connection").value_or(""), "close");
    if (close_after) resp.headers.set("Connection", "close");
    net::write_all(t, http::serialize_response(resp, req->method == "HEAD"),
                   net::deadline_after(std::chrono::seconds(30)));
    if (close_after) return;
  }
}

Response FixtureServer::respond(const Request& req, Protocol proto) {
  served_.fetch_add(1);
  Handler handler;
  std::optional<FixtureResource> res;
  {
    std::lock_guard lk(mu_);
    handler = handler_;
    std::string host = strip_port(req.authority);
    std::string path = path_only(req.target);
    if (auto it = routes_.find({host, path}); it != routes_.end()) {
      res = it->second;
    } else if (auto it2 = routes_.find({"", path}); it2 != routes_.end()) {
      res = it2->second;
    }
  }
  Response out;
  if (handler) {
    if (auto r = handler(req, proto)) {
      out = std::move(*r);
      res.reset();
      for (const auto& [k, v] : opts_.extra_headers) out.headers.add(k, v);
      return out;
    }
  }
  if (!res) {
    out.status = 404;
    out.headers.add("content-type", "text/plain");
    out.body = "not found";
  } else {
    out.status = res->status;
    out.headers = res->headers;
    out.headers.set("content-type", res->content_type);
    out.body = res->body;
  }
  for (const auto& [k, v] : opts_.extra_headers) out.headers.add(k, v);
  return out;
}

}  // namespace h2scope::fixtures
