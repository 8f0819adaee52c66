#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace h2scope::http {

enum class Protocol { H1, H2 };

std::string_view to_string(Protocol p) noexcept;
std::optional<Protocol> parse_protocol(std::string_view s);

bool iequals(std::string_view a, std::string_view b) noexcept;
std::string to_lower(std::string_view s);

// Ordered, case-insensitive multimap of header fields. Names are stored
// lower-case, which is what HTTP/2 mandates on the wire anyway.
class HeaderMap {
 public:
  void add(std::string_view name, std::string_view value);
  void set(std::string_view name, std::string_view value);
  std::optional<std::string> get(std::string_view name) const;
  std::vector<std::string> get_all(std::string_view name) const;
  bool contains(std::string_view name) const { return get(name).has_value(); }
  bool empty() const { return fields_.empty(); }
  std::size_t size() const { return fields_.size(); }

  auto begin() const { return fields_.begin(); }
  auto end() const { return fields_.end(); }

 private:
  std::vector<std::pair<std::string, std::string>> fields_;
};

struct Request {
  std::string method = "GET";
  std::string scheme = "https";
  std::string authority;
  std::string target = "/";
  HeaderMap headers;
  std::string body;
};

struct Response {
  int status = 0;
  HeaderMap headers;
  std::string body;
};

inline bool is_redirect_status(int status) {
  return status == 301 || status == 302 || status == 303 || status == 307 || status == 308;
}

}  // namespace h2scope::http
