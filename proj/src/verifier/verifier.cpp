#include "h2scope/verifier/verifier.hpp"

#include <mutex>

#include <spdlog/spdlog.h>

#include "h2scope/common/error.hpp"
#include "h2scope/common/parallel.hpp"
#include "h2scope/http/client.hpp"
#include "h2scope/http/url.hpp"

namespace h2scope::verifier {

std::string_view to_string(Classification c) noexcept {
  switch (c) {
    case Classification::SERVES_H2: return "SERVES_H2";
    case Classification::REDIRECT_TO_H1: return "REDIRECT_TO_H1";
    case Classification::H1_ONLY_ROOT: return "H1_ONLY_ROOT";
    case Classification::PROTOCOL_ERROR: return "PROTOCOL_ERROR";
    case Classification::NETWORK_ERROR: return "NETWORK_ERROR";
  }
  return "NETWORK_ERROR";
}

namespace {

bool is_network_errc(net::NetErrc e) {
  switch (e) {
    case net::NetErrc::ResolveFailed:
    case net::NetErrc::Refused:
    case net::NetErrc::Timeout:
    case net::NetErrc::Reset:
    case net::NetErrc::Closed:
      return true;
    default:
      return false;
  }
}

void finish(VerdictRecord& v, Classification c, std::optional<std::string> reason = std::nullopt) {
  v.classification = c;
  v.serves_h2 = c == Classification::SERVES_H2;
  v.reason = std::move(reason);
  if (!v.chain.hops.empty()) v.chain.terminal_status = v.chain.hops.back().status;
}

// Classification of a terminal response reached after |hops| responses.
Classification classify_terminal(const VerdictRecord& v) {
  const Hop& first = v.chain.hops.front();
  const Hop& last = v.chain.hops.back();
  if (first.protocol == http::Protocol::H1) return Classification::H1_ONLY_ROOT;
  if (last.protocol == http::Protocol::H1) return Classification::REDIRECT_TO_H1;
  return last.status == 200 ? Classification::SERVES_H2 : Classification::PROTOCOL_ERROR;
}

}  // namespace

VerdictRecord verify_h2(const std::string& host, const VerifyConfig& cfg) {
  VerdictRecord v;
  v.host = host;
  v.timestamp = unique_utc_now();

  http::Url url;
  url.scheme = "https";
  url.host = http::to_lower(host);
  url.port = cfg.port;
  url.path = "/";

  const std::vector<std::string> alpn = {"h2", "http/1.1"};
  http::SessionTimeouts timeouts{cfg.connect_timeout, cfg.connect_timeout};
  for (int attempt = 0;; ++attempt) {
    v.terminal_host = url.host;
    http::Response resp;
    http::Protocol proto;
    try {
      auto session = http::ClientSession::open(cfg.resolver, url, alpn, timeouts);
      proto = session->protocol();
      resp = session->fetch(http::make_get(url, cfg.user_agent), net::deadline_after(cfg.request_timeout));
    } catch (const net::NetError& e) {
      v.error_detail = e.what();
      finish(v, is_network_errc(e.errc()) ? Classification::NETWORK_ERROR : Classification::PROTOCOL_ERROR,
             std::string(net::to_string(e.errc())));
      return v;
    }
    v.chain.hops.push_back({url.str(), resp.status, proto});

    if (http::is_redirect_status(resp.status)) {
      auto location = resp.headers.get("location");
      std::optional<http::Url> next = location ? http::resolve_url(url, *location) : std::nullopt;
      if (!next) {
        finish(v, Classification::PROTOCOL_ERROR, "MissingLocation");
        return v;
      }
      if (attempt >= cfg.max_redirects) {
        finish(v, Classification::PROTOCOL_ERROR, "RedirectLoop");
        return v;
      }
      url = *next;
      continue;
    }

    Classification c = classify_terminal(v);
    std::optional<std::string> reason;
    if (c == Classification::PROTOCOL_ERROR) reason = "HttpStatus";
    if (c == Classification::SERVES_H2) v.root_size = static_cast<std::int64_t>(resp.body.size());
    finish(v, c, reason);
    return v;
  }
}

VerdictRecord verify_h2(const std::string& host, int max_redirects) {
  VerifyConfig cfg;
  cfg.max_redirects = max_redirects;
  return verify_h2(host, cfg);
}

std::vector<VerdictRecord> verify_many(const std::vector<std::string>& hosts, const VerifyConfig& cfg,
                                       std::size_t parallel, const std::function<void(const VerdictRecord&)>& sink,
                                       BatchStats* stats) {
  std::vector<VerdictRecord> out(hosts.size());
  std::mutex sink_mu;
  std::size_t peak = bounded_for_each(hosts.size(), parallel, [&](std::size_t i) {
    try {
      out[i] = verify_h2(hosts[i], cfg);
    } catch (const std::exception& e) {
      out[i].host = hosts[i];
      out[i].timestamp = unique_utc_now();
      out[i].classification = Classification::NETWORK_ERROR;
      out[i].error_detail = e.what();
    }
    if (sink) {
      std::lock_guard lk(sink_mu);
      sink(out[i]);
    }
  });
  if (stats) stats->peak_in_flight = peak;
  return out;
}

json to_json(const VerdictRecord& v) {
  json hops = json::array();
  for (const auto& h : v.chain.hops)
    hops.push_back({{"url", h.url}, {"status", h.status}, {"protocol", http::to_string(h.protocol)}});
  json j;
  j["schema_version"] = kSchemaVersion;
  j["host"] = v.host;
  j["timestamp_us"] = to_us(v.timestamp);
  j["serves_h2"] = v.serves_h2;
  j["classification"] = to_string(v.classification);
  j["chain"] = {{"hops", hops}, {"terminal_status", v.chain.terminal_status}};
  j["root_size"] = v.root_size ? json(*v.root_size) : json(nullptr);
  j["terminal_host"] = v.terminal_host;
  j["reason"] = v.reason ? json(*v.reason) : json(nullptr);
  if (v.error_detail) j["error_detail"] = *v.error_detail;
  return j;
}

VerdictRecord verdict_from_json(const json& j) {
  check_schema(j);
  try {
    VerdictRecord v;
    v.host = j.at("host").get<std::string>();
    v.timestamp = utc_from_us(j.at("timestamp_us").get<std::int64_t>());
    const std::string c = j.at("classification").get<std::string>();
    bool known = false;
    for (auto k : {Classification::SERVES_H2, Classification::REDIRECT_TO_H1, Classification::H1_ONLY_ROOT,
                   Classification::PROTOCOL_ERROR, Classification::NETWORK_ERROR}) {
      if (to_string(k) == c) {
        v.classification = k;
        known = true;
      }
    }
    if (!known) throw Error(ErrorCode::ParseError, "unknown classification " + c);
    v.serves_h2 = j.at("serves_h2").get<bool>();
    for (const auto& h : j.at("chain").at("hops")) {
      auto p = http::parse_protocol(h.at("protocol").get<std::string>());
      if (!p) throw Error(ErrorCode::ParseError, "bad hop protocol");
      v.chain.hops.push_back({h.at("url").get<std::string>(), h.at("status").get<int>(), *p});
    }
    v.chain.terminal_status = j.at("chain").at("terminal_status").get<int>();
    if (!j.at("root_size").is_null()) v.root_size = j.at("root_size").get<std::int64_t>();
    v.terminal_host = j.value("terminal_host", "");
    if (j.contains("reason") && !j.at("reason").is_null()) v.reason = j.at("reason").get<std::string>();
    if (j.contains("error_detail")) v.error_detail = j.at("error_detail").get<std::string>();
    return v;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("verdict record: ") + e.what());
  }
}

}  // namespace h2scope::verifier
