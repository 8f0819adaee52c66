#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "h2scope/common/json_io.hpp"
#include "h2scope/common/time.hpp"
#include "h2scope/http/message.hpp"
#include "h2scope/net/socket.hpp"

namespace h2scope::verifier {

enum class Classification { SERVES_H2, REDIRECT_TO_H1, H1_ONLY_ROOT, PROTOCOL_ERROR, NETWORK_ERROR };

std::string_view to_string(Classification c) noexcept;

struct Hop {
  std::string url;
  int status = 0;
  http::Protocol protocol = http::Protocol::H1;
};

struct RedirectChain {
  std::vector<Hop> hops;
  int terminal_status = 0;
};

struct VerdictRecord {
  std::string host;
  UtcTime timestamp{};
  bool serves_h2 = false;
  Classification classification = Classification::NETWORK_ERROR;
  RedirectChain chain;
  std::optional<std::int64_t> root_size;
  // Host of the last URL attempted.
  std::string terminal_host;
  // RedirectLoop, HttpStatus, MissingLocation, or the transport error class.
  std::optional<std::string> reason;
  std::optional<std::string> error_detail;
};

struct VerifyConfig {
  std::uint16_t port = 443;
  int max_redirects = 10;
  std::chrono::milliseconds connect_timeout{10'000};
  std::chrono::milliseconds request_timeout{15'000};
  std::string user_agent = "h2scope-verifier";
  net::Resolver resolver;
};

inline constexpr std::size_t kDefaultParallel = 10;

VerdictRecord verify_h2(const std::string& host, const VerifyConfig& cfg);
VerdictRecord verify_h2(const std::string& host, int max_redirects);

struct BatchStats {
  std::size_t peak_in_flight = 0;
};

// Verifies every host with at most |parallel| in flight. Results come back
// in input order; |sink| (if set) sees each record as soon as it is ready,
// from whichever thread produced it, serialized by an internal lock.
std::vector<VerdictRecord> verify_many(const std::vector<std::string>& hosts, const VerifyConfig& cfg,
                                       std::size_t parallel = kDefaultParallel,
                                       const std::function<void(const VerdictRecord&)>& sink = {},
                                       BatchStats* stats = nullptr);

json to_json(const VerdictRecord& v);
VerdictRecord verdict_from_json(const json& j);

}  // namespace h2scope::verifier
