#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace h2scope::http {

// Absolute hierarchical URL. Fragments are dropped at parse time because they
// never reach the wire.
struct Url {
  std::string scheme;  // lower-case
  std::string host;    // lower-case, brackets stripped for IPv6 literals
  std::uint16_t port = 0;
  std::string path = "/";
  std::optional<std::string> query;

  bool is_https() const { return scheme == "https"; }
  bool has_default_port() const;
  // scheme://host[:port]
  std::string origin() const;
  // Host header / :authority value.
  std::string authority() const;
  // path[?query]
  std::string target() const;
  std::string str() const;

  friend bool operator==(const Url&, const Url&) = default;
};

std::uint16_t default_port(std::string_view scheme);

// Parses an absolute http(s) URL. Other schemes and relative references
// yield nullopt.
std::optional<Url> parse_url(std::string_view text);

// RFC 3986 reference resolution against |base|; nullopt when the result is
// not a fetchable http(s) URL (mailto:, javascript:, data:, ...).
std::optional<Url> resolve_url(const Url& base, std::string_view reference);

// RFC 3986 remove_dot_segments.
std::string remove_dot_segments(std::string_view path);

}  // namespace h2scope::http
