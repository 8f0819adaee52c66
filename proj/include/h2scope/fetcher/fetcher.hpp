#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "h2scope/common/json_io.hpp"
#include "h2scope/common/time.hpp"
#include "h2scope/fetcher/extract.hpp"
#include "h2scope/http/message.hpp"
#include "h2scope/net/socket.hpp"

namespace h2scope::fetcher {

enum class UserAgent { DESKTOP, MOBILE };

std::string_view to_string(UserAgent a) noexcept;
std::string_view user_agent_string(UserAgent a) noexcept;

struct FetchConfig {
  int h1_max_conns_per_domain = 6;
  std::chrono::milliseconds per_object_timeout{30'000};
  std::chrono::milliseconds connect_timeout{10'000};
  int max_objects = 500;
  UserAgent user_agent = UserAgent::DESKTOP;
  int max_root_redirects = 10;
  // Stylesheets discovered deeper than this are fetched but not parsed.
  int max_css_depth = 2;
  // Upper bound on simultaneous HTTP/2 requests per page.
  int h2_max_in_flight = 64;
  net::Resolver resolver;
};

struct ObjectRecord {
  std::string url;
  // Registrable domain of the URL's host.
  std::string domain;
  std::string host;
  int status = 0;
  std::int64_t size = 0;
  std::string content_type;
  http::Protocol protocol = http::Protocol::H1;
  std::string connection_id;
  // Offsets from root request dispatch.
  Micros t_start{0};
  Micros t_end{0};
  OriginTag origin_tag = OriginTag::HTML_ATTR;
};

struct ConnectionRecord {
  std::string connection_id;
  // Host name the connection was opened to; one H2 connection per host.
  std::string domain;
  http::Protocol protocol = http::Protocol::H1;
  std::int64_t object_count = 0;
};

struct FetchErrorRecord {
  std::string url;
  // RootFetchFailed, ProtocolUnavailable, HttpStatus, Network, Timeout,
  // ObjectCap, PushRejected.
  std::string kind;
  std::string detail;
  Micros at{0};
};

struct PageSnapshot {
  std::string root_url;
  http::Protocol protocol = http::Protocol::H1;
  UtcTime started_at{};
  // Final root document (after redirects), absent when the root failed.
  std::optional<ObjectRecord> root;
  // Redirect responses that led to the root document.
  std::vector<ObjectRecord> root_redirects;
  // Embedded objects, in completion order.
  std::vector<ObjectRecord> objects;
  std::int64_t inline_css_js_bytes = 0;
  std::int64_t html_bytes = 0;
  std::vector<ConnectionRecord> connections;
  Micros plt{0};
  std::vector<FetchErrorRecord> fetch_errors;
  UserAgent user_agent = UserAgent::DESKTOP;

  bool root_failed() const { return !root.has_value(); }
  // html_bytes plus every embedded object's size.
  std::int64_t total_bytes() const;
  std::size_t distinct_hosts() const;
};

PageSnapshot fetch_page(const std::string& root_url, http::Protocol protocol, const FetchConfig& cfg);

// Sequential repetitions, returned in execution order.
std::vector<PageSnapshot> measure_plt(const std::string& root_url, http::Protocol protocol, const FetchConfig& cfg,
                                      int repetitions = 3);

json to_json(const PageSnapshot& s);
PageSnapshot snapshot_from_json(const json& j);

}  // namespace h2scope::fetcher
