#include "h2scope/net/public_suffix.hpp"

#include <arpa/inet.h>

#include <unordered_set>

#include "h2scope/http/message.hpp"

namespace h2scope::net {

extern const std::string_view kPublicSuffixList;

namespace {

struct Rules {
  std::unordered_set<std::string> exact;
  std::unordered_set<std::string> wildcard;   // "*.foo" stored as "foo"
  std::unordered_set<std::string> exception;  // "!a.foo" stored as "a.foo"
};

const Rules& rules() {
  static const Rules r = [] {
    Rules out;
    std::string_view text = kPublicSuffixList;
    while (!text.empty()) {
      std::size_t nl = text.find('\n');
      std::string_view line = text.substr(0, nl);
      text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
      // A rule is the first whitespace-delimited token on a line.
      std::size_t end = line.find_first_of(" \t\r");
      line = line.substr(0, end);
      if (line.empty() || line.starts_with("//")) continue;
      if (line.starts_with("!")) {
        out.exception.insert(http::to_lower(line.substr(1)));
      } else if (line.starts_with("*.")) {
        out.wildcard.insert(http::to_lower(line.substr(2)));
      } else {
        out.exact.insert(http::to_lower(line));
      }
    }
    return out;
  }();
  return r;
}

bool is_ip_literal(std::string_view host) {
  std::string h(host);
  in_addr v4;
  in6_addr v6;
  return inet_pton(AF_INET, h.c_str(), &v4) == 1 || inet_pton(AF_INET6, h.c_str(), &v6) == 1;
}

std::string normalize(std::string_view host) {
  if (!host.empty() && host.back() == '.') host.remove_suffix(1);
  return http::to_lower(host);
}

// Number of labels in the public suffix of |host|.
std::size_t suffix_labels(const std::string& host) {
  const Rules& r = rules();
  std::size_t best = 1;  // implicit "*"
  std::size_t labels = 1;
  for (char c : host) labels += c == '.';

  // Walk suffixes from the full name down to the last label.
  std::size_t pos = 0;
  std::size_t n = labels;
  for (;;) {
    std::string_view suffix(host.data() + pos, host.size() - pos);
    std::string s(suffix);
    if (r.exception.contains(s)) return n - 1;
    if (r.exact.contains(s)) best = std::max(best, n);
    if (r.wildcard.contains(s) && n + 1 <= labels) best = std::max(best, n + 1);
    std::size_t dot = host.find('.', pos);
    if (dot == std::string::npos) break;
    pos = dot + 1;
    --n;
  }
  return best;
}

std::string last_labels(const std::string& host, std::size_t count) {
  std::size_t pos = host.size();
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t dot = host.rfind('.', pos == 0 ? 0 : pos - 1);
    if (dot == std::string::npos || pos == 0) return host;
    pos = dot;
  }
  return host.substr(pos + 1);
}

}  // namespace

std::string public_suffix(std::string_view host_in) {
  std::string host = normalize(host_in);
  if (host.empty() || is_ip_literal(host)) return host;
  return last_labels(host, suffix_labels(host));
}

std::optional<std::string> registrable_domain(std::string_view host_in) {
  std::string host = normalize(host_in);
  if (host.empty()) return std::nullopt;
  if (is_ip_literal(host)) return host;
  std::size_t labels = 1;
  for (char c : host) labels += c == '.';
  std::size_t n = suffix_labels(host);
  if (labels <= n) return std::nullopt;
  return last_labels(host, n + 1);
}

std::string registrable_or_host(std::string_view host) {
  if (auto d = registrable_domain(host)) return *d;
  return normalize(host);
}

}  // namespace h2scope::net
