#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "h2scope/common/json_io.hpp"
#include "h2scope/common/time.hpp"
#include "h2scope/http/message.hpp"
#include "h2scope/net/socket.hpp"

namespace h2scope::prober {

enum class Mechanism { ALPN, NPN, NONE };
enum class UpgradeResult { SUPPORTED, UNSUPPORTED, ERROR };
enum class ProbeError { NoTlsEndpoint, DnsFailure, HandshakeFailure, Timeout };

std::string_view to_string(Mechanism m) noexcept;
std::string_view to_string(UpgradeResult u) noexcept;
std::string_view to_string(ProbeError e) noexcept;

// Tokens offered by default, most preferred first.
const std::vector<std::string>& default_offered_protocols();

struct ProbeConfig {
  std::vector<std::string> offered_protocols = default_offered_protocols();
  std::chrono::milliseconds connect_timeout{10'000};
  std::chrono::milliseconds handshake_timeout{10'000};
  int retries = 1;
  // Fall back to an NPN handshake (TLS 1.2) when ALPN reveals nothing.
  bool try_npn = true;
  // Run the cleartext upgrade check against |cleartext_port|.
  bool check_cleartext = true;
  std::uint16_t cleartext_port = 80;
  // Issue one GET / over the first session to look for QUIC advertisements.
  bool check_quic = true;
  // Probe "www." + host instead of the bare name.
  bool www_prefix = false;
  net::Resolver resolver;
};

struct ProbeRecord {
  std::string host;
  std::uint16_t port = 443;
  UtcTime timestamp{};
  Mechanism mechanism = Mechanism::NONE;
  std::vector<std::string> announced;
  std::optional<std::string> negotiated;
  // Absent when the check was not run.
  std::optional<UpgradeResult> cleartext_upgrade;
  bool quic_advertised = false;
  std::optional<ProbeError> error;
  std::optional<std::string> error_detail;
  // True when the announced list was assembled from several handshakes.
  bool multi_handshake = false;
  std::optional<std::string> cert_org;

  bool announces_h2() const;
};

// Never throws for network failures; they are recorded in the result.
ProbeRecord probe_host(const std::string& host, std::uint16_t port, const ProbeConfig& cfg);

UpgradeResult check_cleartext_upgrade(const std::string& host, std::uint16_t port, const ProbeConfig& cfg);

bool check_quic_advertisement(const http::HeaderMap& headers);

// h2 and its draft tokens h2-NN.
bool is_h2_family(std::string_view token);

bool valid_dns_name(std::string_view host);

json to_json(const ProbeRecord& r);
ProbeRecord probe_record_from_json(const json& j);

}  // namespace h2scope::prober
