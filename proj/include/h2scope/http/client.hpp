#pragma once

#include <chrono>
#include <future>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "h2scope/http/h1.hpp"
#include "h2scope/http/h2_connection.hpp"
#include "h2scope/http/message.hpp"
#include "h2scope/http/url.hpp"
#include "h2scope/net/socket.hpp"
#include "h2scope/net/transport.hpp"

namespace h2scope::http {

struct SessionTimeouts {
  std::chrono::milliseconds connect{10'000};
  std::chrono::milliseconds handshake{10'000};
};

// One client connection to an origin, speaking whatever ALPN selected.
// https origins negotiate with |alpn|; http origins always get HTTP/1.1.
class ClientSession {
 public:
  static std::unique_ptr<ClientSession> open(const net::Resolver& resolver, const Url& origin,
                                             const std::vector<std::string>& alpn, SessionTimeouts timeouts = {});
  ~ClientSession();

  Protocol protocol() const noexcept { return protocol_; }
  // Raw ALPN selection; empty when the server ignored ALPN.
  const std::string& alpn() const noexcept { return alpn_; }
  const std::optional<net::CertificateInfo>& certificate() const noexcept { return cert_; }

  // Blocking exchange. H2 sessions may call this from several threads.
  Response fetch(const Request& req, net::Deadline deadline);
  bool reusable() const;
  std::size_t pushes_rejected() const;
  void close();

 private:
  ClientSession() = default;

  Protocol protocol_ = Protocol::H1;
  std::string alpn_;
  std::optional<net::CertificateInfo> cert_;
  std::unique_ptr<H1Connection> h1_;
  std::shared_ptr<H2Connection> h2_;
};

// Process-wide client TLS context (no verification, no resumption).
std::shared_ptr<net::TlsContext> shared_client_tls();

// GET request for |url| with the given User-Agent.
Request make_get(const Url& url, const std::string& user_agent);

}  // namespace h2scope::http
