#include "h2scope/http/url.hpp"

#include <algorithm>
#include <cctype>

namespace h2scope::http {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string_view trim(std::string_view s) {
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

struct Reference {
  std::optional<std::string> scheme;
  std::optional<std::string> authority;
  std::string path;
  std::optional<std::string> query;
};

// Splits a URI reference into its RFC 3986 components (Appendix B).
Reference split_reference(std::string_view s) {
  Reference r;
  if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
  auto colon = s.find(':');
  auto delim = s.find_first_of("/?");
  if (colon != std::string_view::npos && colon > 0 && (delim == std::string_view::npos || colon < delim)) {
    std::string_view scheme = s.substr(0, colon);
    bool valid = std::isalpha(static_cast<unsigned char>(scheme[0]));
    for (char c : scheme) {
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.')) valid = false;
    }
    if (valid) {
      r.scheme = lower(scheme);
      s.remove_prefix(colon + 1);
    }
  }
  if (s.substr(0, 2) == "//") {
    s.remove_prefix(2);
    auto end = s.find_first_of("/?");
    r.authority = std::string(s.substr(0, end));
    s = end == std::string_view::npos ? std::string_view() : s.substr(end);
  }
  auto q = s.find('?');
  r.path = std::string(s.substr(0, q));
  if (q != std::string_view::npos) r.query = std::string(s.substr(q + 1));
  return r;
}

bool parse_authority(std::string_view auth, const std::string& scheme, Url* url) {
  if (auto at = auth.rfind('@'); at != std::string_view::npos) auth.remove_prefix(at + 1);
  std::string_view host = auth;
  std::string_view port;
  if (!auth.empty() && auth.front() == '[') {
    auto close = auth.find(']');
    if (close == std::string_view::npos) return false;
    host = auth.substr(1, close - 1);
    std::string_view rest = auth.substr(close + 1);
    if (!rest.empty()) {
      if (rest.front() != ':') return false;
      port = rest.substr(1);
    }
  } else if (auto c = auth.rfind(':'); c != std::string_view::npos) {
    host = auth.substr(0, c);
    port = auth.substr(c + 1);
  }
  if (host.empty()) return false;
  url->host = lower(host);
  if (port.empty()) {
    url->port = default_port(scheme);
  } else {
    unsigned long v = 0;
    for (char c : port) {
      if (!std::isdigit(static_cast<unsigned char>(c))) return false;
      v = v * 10 + static_cast<unsigned long>(c - '0');
      if (v > 65535) return false;
    }
    if (v == 0) return false;
    url->port = static_cast<std::uint16_t>(v);
  }
  return true;
}

std::string merge_paths(const Url& base, const std::string& ref_path) {
  auto slash = base.path.rfind('/');
  if (slash == std::string::npos) return "/" + ref_path;
  return base.path.substr(0, slash + 1) + ref_path;
}

}  // namespace

std::uint16_t default_port(std::string_view scheme) {
  if (scheme == "https") return 443;
  if (scheme == "http") return 80;
  return 0;
}

bool Url::has_default_port() const { return port == default_port(scheme); }

std::string Url::authority() const {
  std::string h = host.find(':') != std::string::npos ? "[" + host + "]" : host;
  if (has_default_port()) return h;
  return h + ":" + std::to_string(port);
}

std::string Url::origin() const { return scheme + "://" + authority(); }

std::string Url::target() const { return query ? path + "?" + *query : path; }

std::string Url::str() const { return origin() + target(); }

std::string remove_dot_segments(std::string_view in) {
  std::string input(in);
  std::string output;
  while (!input.empty()) {
    if (input.rfind("../", 0) == 0) {
      input.erase(0, 3);
    } else if (input.rfind("./", 0) == 0) {
      input.erase(0, 2);
    } else if (input.rfind("/./", 0) == 0) {
      input.erase(0, 2);
    } else if (input == "/.") {
      input = "/";
    } else if (input.rfind("/../", 0) == 0 || input == "/..") {
      input = input == "/.." ? "/" : input.substr(3);
      auto last = output.rfind('/');
      output.erase(last == std::string::npos ? 0 : last);
    } else if (input == "." || input == "..") {
      input.clear();
    } else {
      std::size_t start = input[0] == '/' ? 1 : 0;
      auto next = input.find('/', start);
      output += input.substr(0, next);
      input.erase(0, next == std::string::npos ? input.size() : next);
    }
  }
  return output;
}

std::optional<Url> parse_url(std::string_view text) {
  Reference r = split_reference(trim(text));
  if (!r.scheme || (*r.scheme != "http" && *r.scheme != "https") || !r.authority) return std::nullopt;
  Url url;
  url.scheme = *r.scheme;
  if (!parse_authority(*r.authority, url.scheme, &url)) return std::nullopt;
  url.path = r.path.empty() ? "/" : remove_dot_segments(r.path);
  if (url.path.empty() || url.path[0] != '/') url.path.insert(url.path.begin(), '/');
  url.query = r.query;
  return url;
}

std::optional<Url> resolve_url(const Url& base, std::string_view reference) {
  std::string_view ref_text = trim(reference);
  Reference r = split_reference(ref_text);
  Url out;
  if (r.scheme) {
    if (*r.scheme != "http" && *r.scheme != "https") return std::nullopt;
    if (!r.authority) {
      // "http:foo" style: same-scheme relative per the lenient browser rule.
      if (*r.scheme != base.scheme) return std::nullopt;
      r.scheme.reset();
    }
  }
  if (r.scheme) {
    out.scheme = *r.scheme;
    if (!parse_authority(*r.authority, out.scheme, &out)) return std::nullopt;
    out.path = remove_dot_segments(r.path);
    out.query = r.query;
  } else if (r.authority) {
    out.scheme = base.scheme;
    if (!parse_authority(*r.authority, out.scheme, &out)) return std::nullopt;
    out.path = remove_dot_segments(r.path);
    out.query = r.query;
  } else {
    out.scheme = base.scheme;
    out.host = base.host;
    out.port = base.port;
    if (r.path.empty()) {
      out.path = base.path;
      out.query = r.query ? r.query : base.query;
    } else {
      out.path = r.path[0] == '/' ? remove_dot_segments(r.path) : remove_dot_segments(merge_paths(base, r.path));
      out.query = r.query;
    }
  }
  if (out.path.empty() || out.path[0] != '/') out.path.insert(out.path.begin(), '/');
  return out;
}

}  // namespace h2scope::http
