#include "h2scope/http/client.hpp"

#include <mutex>

namespace h2scope::http {

std::shared_ptr<net::TlsContext> shared_client_tls() {
  static std::once_flag once;
  static std::shared_ptr<net::TlsContext> ctx;
  std::call_once(once, [] { ctx = net::TlsContext::client(); });
  return ctx;
}

std::unique_ptr<ClientSession> ClientSession::open(const net::Resolver& resolver, const Url& origin,
                                                   const std::vector<std::string>& alpn, SessionTimeouts timeouts) {
  std::unique_ptr<ClientSession> s(new ClientSession());
  net::Fd fd = net::connect_tcp(resolver, origin.host, origin.port, net::deadline_after(timeouts.connect));
  net::set_nodelay(fd.get());
  if (!origin.is_https()) {
    s->h1_ = std::make_unique<H1Connection>(std::make_unique<net::PlainTransport>(std::move(fd)));
    s->protocol_ = Protocol::H1;
    return s;
  }
  net::TlsClientParams params;
  params.sni = origin.host;
  params.alpn = alpn;
  auto tls = net::TlsTransport::connect(std::move(fd), shared_client_tls(), params,
                                        net::deadline_after(timeouts.handshake));
  s->alpn_ = tls->alpn_selected();
  s->cert_ = tls->peer_certificate();
  if (s->alpn_ == "h2") {
    s->protocol_ = Protocol::H2;
    s->h2_ = H2Connection::connect_client(std::move(tls));
  } else if (s->alpn_.empty() || s->alpn_ == "http/1.1" || s->alpn_ == "http/1.0") {
    s->protocol_ = Protocol::H1;
    s->h1_ = std::make_unique<H1Connection>(std::move(tls));
  } else {
    throw net::NetError(net::NetErrc::NoApplicationProtocol, "server selected unsupported protocol " + s->alpn_);
  }
  return s;
}

ClientSession::~ClientSession() { close(); }

Response ClientSession::fetch(const Request& req, net::Deadline deadline) {
  if (h1_) return h1_->round_trip(req, deadline);
  if (!h2_) throw net::NetError(net::NetErrc::Closed, "session closed");
  auto fut = h2_->submit(req);
  if (fut.wait_until(deadline) != std::future_status::ready)
    throw net::NetError(net::NetErrc::Timeout, "HTTP/2 response timed out");
  return fut.get();
}

bool ClientSession::reusable() const {
  if (h1_) return h1_->reusable();
  return h2_ && h2_->usable();
}

std::size_t ClientSession::pushes_rejected() const { return h2_ ? h2_->pushes_rejected() : 0; }

void ClientSession::close() {
  if (h2_) h2_->close();
  h2_.reset();
  h1_.reset();
}

Request make_get(const Url& url, const std::string& user_agent) {
  Request req;
  req.method = "GET";
  req.scheme = url.scheme;
  req.authority = url.authority();
  req.target = url.target();
  req.headers.add("user-agent", user_agent);
  req.headers.add("accept", "*/*");
  return req;
}

}  // namespace h2scope::http
