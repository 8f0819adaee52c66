#include "h2scope/prober/prober.hpp"

#include <openssl/ssl.h>

#include <algorithm>
#include <cctype>
#include <mutex>
#include <variant>

#include <spdlog/spdlog.h>

#include "h2scope/common/error.hpp"
#include "h2scope/http/client.hpp"
#include "h2scope/http/h1.hpp"
#include "h2scope/http/h2_connection.hpp"
#include "h2scope/net/transport.hpp"

namespace h2scope::prober {

std::string_view to_string(Mechanism m) noexcept {
  switch (m) {
    case Mechanism::ALPN: return "ALPN";
    case Mechanism::NPN: return "NPN";
    case Mechanism::NONE: return "NONE";
  }
  return "NONE";
}

std::string_view to_string(UpgradeResult u) noexcept {
  switch (u) {
    case UpgradeResult::SUPPORTED: return "SUPPORTED";
    case UpgradeResult::UNSUPPORTED: return "UNSUPPORTED";
    case UpgradeResult::ERROR: return "ERROR";
  }
  return "ERROR";
}

std::string_view to_string(ProbeError e) noexcept {
  switch (e) {
    case ProbeError::NoTlsEndpoint: return "NoTlsEndpoint";
    case ProbeError::DnsFailure: return "DnsFailure";
    case ProbeError::HandshakeFailure: return "HandshakeFailure";
    case ProbeError::Timeout: return "Timeout";
  }
  return "HandshakeFailure";
}

const std::vector<std::string>& default_offered_protocols() {
  static const std::vector<std::string> kOffered = {"h2",       "h2-17",  "h2-16",  "h2-15",   "h2-14",
                                                    "spdy/3.1", "spdy/3", "spdy/2", "http/1.1"};
  return kOffered;
}

bool ProbeRecord::announces_h2() const {
  return std::any_of(announced.begin(), announced.end(), [](const std::string& t) { return is_h2_family(t); });
}

bool is_h2_family(std::string_view token) {
  if (token == "h2") return true;
  if (token.size() < 4 || token.substr(0, 3) != "h2-") return false;
  return std::all_of(token.begin() + 3, token.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

bool valid_dns_name(std::string_view host) {
  if (host.empty() || host.size() > 253) return false;
  if (host.back() == '.') host.remove_suffix(1);
  std::size_t start = 0;
  while (start <= host.size()) {
    std::size_t dot = host.find('.', start);
    std::string_view label = host.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start);
    if (label.empty() || label.size() > 63) return false;
    if (label.front() == '-' || label.back() == '-') return false;
    for (char c : label) {
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') return false;
    }
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return true;
}

namespace {

struct Failure {
  ProbeError kind;
  std::string detail;
  // NoApplicationProtocol: the server answered but shares no token with us.
  bool no_overlap = false;
};

std::shared_ptr<net::TlsContext> npn_client_tls() {
  static std::once_flag once;
  static std::shared_ptr<net::TlsContext> ctx;
  std::call_once(once, [] { ctx = net::TlsContext::client(TLS1_2_VERSION, true); });
  return ctx;
}

// One TCP connect plus TLS handshake. Returns the transport or a Failure.
std::variant<std::unique_ptr<net::TlsTransport>, Failure> handshake(const std::string& host, std::uint16_t port,
                                                                    const ProbeConfig& cfg,
                                                                    const net::TlsClientParams& params,
                                                                    std::shared_ptr<net::TlsContext> ctx) {
  net::Fd fd;
  try {
    fd = net::connect_tcp(cfg.resolver, host, port, net::deadline_after(cfg.connect_timeout));
  } catch (const net::NetError& e) {
    ProbeError kind = e.errc() == net::NetErrc::ResolveFailed ? ProbeError::DnsFailure : ProbeError::NoTlsEndpoint;
    return Failure{kind, e.what()};
  }
  try {
    return net::TlsTransport::connect(std::move(fd), std::move(ctx), params,
                                      net::deadline_after(cfg.handshake_timeout));
  } catch (const net::NetError& e) {
    Failure f{e.errc() == net::NetErrc::Timeout ? ProbeError::Timeout : ProbeError::HandshakeFailure, e.what()};
    f.no_overlap = e.errc() == net::NetErrc::NoApplicationProtocol;
    return f;
  }
}

auto handshake_with_retries(const std::string& host, std::uint16_t port, const ProbeConfig& cfg,
                            const net::TlsClientParams& params, const std::shared_ptr<net::TlsContext>& ctx) {
  auto r = handshake(host, port, cfg, params, ctx);
  for (int i = 0; i < cfg.retries; ++i) {
    auto* f = std::get_if<Failure>(&r);
    // A refusal to negotiate is an answer, not a transient failure.
    if (!f || f->no_overlap || f->kind == ProbeError::DnsFailure) break;
    spdlog::debug("probe {}:{} retry {} after {}", host, port, i + 1, f->detail);
    r = handshake(host, port, cfg, params, ctx);
  }
  return r;
}

// GET / over the freshly negotiated session, returning the response headers.
std::optional<http::HeaderMap> fetch_root_headers(std::unique_ptr<net::TlsTransport> tls, const std::string& host,
                                                  std::uint16_t port, const ProbeConfig& cfg) {
  http::Url url;
  url.scheme = "https";
  url.host = host;
  url.port = port;
  http::Request req = http::make_get(url, "h2scope-prober");
  auto deadline = net::deadline_after(cfg.handshake_timeout);
  const std::string alpn = tls->alpn_selected();
  try {
    if (alpn == "h2") {
      auto conn = http::H2Connection::connect_client(std::move(tls));
      auto fut = conn->submit(req);
      if (fut.wait_until(deadline) != std::future_status::ready) return std::nullopt;
      auto resp = fut.get();
      conn->close();
      return resp.headers;
    }
    if (alpn.empty() || alpn == "http/1.1") {
      http::H1Connection conn(std::move(tls));
      return conn.round_trip(req, deadline).headers;
    }
  } catch (const std::exception& e) {
    spdlog::debug("probe {}: header fetch failed: {}", host, e.what());
  }
  return std::nullopt;
}

}  // namespace

ProbeRecord probe_host(const std::string& host_in, std::uint16_t port, const ProbeConfig& cfg) {
  if (!valid_dns_name(host_in)) throw Error(ErrorCode::InvalidArgument, "invalid host name: " + host_in);
  if (port == 0) throw Error(ErrorCode::InvalidArgument, "port must be in 1..65535");
  if (cfg.offered_protocols.empty()) throw Error(ErrorCode::InvalidArgument, "offered_protocols is empty");
  if (cfg.connect_timeout.count() <= 0 || cfg.handshake_timeout.count() <= 0)
    throw Error(ErrorCode::InvalidArgument, "timeouts must be positive");

  ProbeRecord rec;
  rec.host = cfg.www_prefix && host_in.rfind("www.", 0) != 0 ? "www." + host_in : host_in;
  rec.port = port;
  rec.timestamp = unique_utc_now();
  const std::string& host = rec.host;

  net::TlsClientParams params;
  params.sni = host;
  params.alpn = cfg.offered_protocols;
  auto first = handshake_with_retries(host, port, cfg, params, http::shared_client_tls());

  bool alpn_answered = false;
  if (auto* f = std::get_if<Failure>(&first)) {
    if (!f->no_overlap) {
      rec.error = f->kind;
      rec.error_detail = f->detail;
      return rec;
    }
  } else {
    auto& tls = std::get<std::unique_ptr<net::TlsTransport>>(first);
    if (auto cert = tls->peer_certificate(); cert && !cert->organization.empty()) rec.cert_org = cert->organization;
    if (!tls->alpn_selected().empty()) {
      alpn_answered = true;
      rec.mechanism = Mechanism::ALPN;
      rec.negotiated = tls->alpn_selected();
      rec.announced.push_back(tls->alpn_selected());
    }
    if (cfg.check_quic) {
      if (auto headers = fetch_root_headers(std::move(tls), host, port, cfg))
        rec.quic_advertised = check_quic_advertisement(*headers);
    }
  }

  if (alpn_answered) {
    // ALPN reveals only the server's pick. Withdraw each pick and ask again;
    // the sequence of picks is the server's list in its own preference order.
    std::vector<std::string> remaining = cfg.offered_protocols;
    remaining.erase(std::find(remaining.begin(), remaining.end(), rec.announced.front()));
    while (!remaining.empty()) {
      params.alpn = remaining;
      auto r = handshake_with_retries(host, port, cfg, params, http::shared_client_tls());
      auto* tls = std::get_if<std::unique_ptr<net::TlsTransport>>(&r);
      if (!tls) break;
      const std::string pick = (*tls)->alpn_selected();
      auto it = std::find(remaining.begin(), remaining.end(), pick);
      if (pick.empty() || it == remaining.end()) break;
      rec.announced.push_back(pick);
      rec.multi_handshake = true;
      remaining.erase(it);
    }
  } else if (cfg.try_npn) {
    net::TlsClientParams npn;
    npn.sni = host;
    npn.npn = cfg.offered_protocols;
    auto r = handshake_with_retries(host, port, cfg, npn, npn_client_tls());
    if (auto* tls = std::get_if<std::unique_ptr<net::TlsTransport>>(&r)) {
      if (!(*tls)->npn_advertised().empty()) {
        rec.mechanism = Mechanism::NPN;
        rec.announced = (*tls)->npn_advertised();
        if (!(*tls)->npn_selected().empty()) rec.negotiated = (*tls)->npn_selected();
      }
      if (!rec.cert_org) {
        if (auto cert = (*tls)->peer_certificate(); cert && !cert->organization.empty())
          rec.cert_org = cert->organization;
      }
    }
  }

  if (cfg.check_cleartext) rec.cleartext_upgrade = check_cleartext_upgrade(host, cfg.cleartext_port, cfg);
  return rec;
}

UpgradeResult check_cleartext_upgrade(const std::string& host, std::uint16_t port, const ProbeConfig& cfg) {
  try {
    net::Fd fd = net::connect_tcp(cfg.resolver, host, port, net::deadline_after(cfg.connect_timeout));
    net::PlainTransport t(std::move(fd));
    auto deadline = net::deadline_after(cfg.handshake_timeout);
    std::string req = "GET / HTTP/1.1\r\nHost: " + host +
                      "\r\nConnection: Upgrade, HTTP2-Settings\r\nUpgrade: h2c\r\n"
                      "HTTP2-Settings: AAMAAABk\r\nUser-Agent: h2scope-prober\r\n\r\n";
    net::write_all(t, req, deadline);
    std::string buf;
    auto head = http::read_head(t, buf, deadline);
    if (!head) return UpgradeResult::ERROR;
    auto resp = http::parse_response_head(*head);
    if (resp.status == 101) {
      auto upgrade = resp.headers.get("upgrade");
      return upgrade && http::to_lower(*upgrade).find("h2c") != std::string::npos ? UpgradeResult::SUPPORTED
                                                                            : UpgradeResult::UNSUPPORTED;
    }
    return resp.status >= 100 ? UpgradeResult::UNSUPPORTED : UpgradeResult::ERROR;
  } catch (const std::exception& e) {
    spdlog::debug("cleartext upgrade check {}:{}: {}", host, port, e.what());
    return UpgradeResult::ERROR;
  }
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

bool quic_family(std::string_view proto) {
  std::string p = http::to_lower(proto);
  return p.rfind("h3", 0) == 0 || p.rfind("quic", 0) == 0 || p.rfind("hq", 0) == 0;
}

}  // namespace

bool check_quic_advertisement(const http::HeaderMap& headers) {
  if (headers.contains("alternate-protocol")) return true;
  for (const std::string& value : headers.get_all("alt-svc")) {
    std::string_view rest = value;
    // alt-value = protocol-id "=" alt-authority *( OWS ";" OWS parameter )
    while (!rest.empty()) {
      std::size_t comma = rest.find(',');
      std::string_view entry = trim(rest.substr(0, comma));
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
      std::size_t eq = entry.find('=');
      if (eq == std::string_view::npos) continue;
      if (quic_family(trim(entry.substr(0, eq)))) return true;
    }
  }
  return false;
}

json to_json(const ProbeRecord& r) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["host"] = r.host;
  j["port"] = r.port;
  j["timestamp_us"] = to_us(r.timestamp);
  j["mechanism"] = to_string(r.mechanism);
  j["announced"] = r.announced;
  j["negotiated"] = r.negotiated ? json(*r.negotiated) : json(nullptr);
  j["cleartext_upgrade"] = r.cleartext_upgrade ? json(to_string(*r.cleartext_upgrade)) : json(nullptr);
  j["quic_advertised"] = r.quic_advertised;
  j["error"] = r.error ? json(to_string(*r.error)) : json(nullptr);
  if (r.error_detail) j["error_detail"] = *r.error_detail;
  j["multi_handshake"] = r.multi_handshake;
  j["cert_org"] = r.cert_org ? json(*r.cert_org) : json(nullptr);
  return j;
}

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const E (&values)[N]) {
  for (E v : values) {
    if (to_string(v) == s) return v;
  }
  throw Error(ErrorCode::ParseError, "unknown enum value: " + s);
}

std::optional<std::string> opt_string(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

}  // namespace

ProbeRecord probe_record_from_json(const json& j) {
  check_schema(j);
  try {
    ProbeRecord r;
    r.host = j.at("host").get<std::string>();
    r.port = j.at("port").get<std::uint16_t>();
    r.timestamp = utc_from_us(j.at("timestamp_us").get<std::int64_t>());
    r.mechanism = parse_enum(j.at("mechanism").get<std::string>(), {Mechanism::ALPN, Mechanism::NPN, Mechanism::NONE});
    r.announced = j.at("announced").get<std::vector<std::string>>();
    r.negotiated = opt_string(j, "negotiated");
    if (auto u = opt_string(j, "cleartext_upgrade"))
      r.cleartext_upgrade =
          parse_enum(*u, {UpgradeResult::SUPPORTED, UpgradeResult::UNSUPPORTED, UpgradeResult::ERROR});
    r.quic_advertised = j.value("quic_advertised", false);
    if (auto e = opt_string(j, "error"))
      r.error = parse_enum(*e, {ProbeError::NoTlsEndpoint, ProbeError::DnsFailure, ProbeError::HandshakeFailure,
                                ProbeError::Timeout});
    r.error_detail = opt_string(j, "error_detail");
    r.multi_handshake = j.value("multi_handshake", false);
    r.cert_org = opt_string(j, "cert_org");
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("probe record: ") + e.what());
  }
}

}  // namespace h2scope::prober
