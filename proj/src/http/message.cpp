#include "h2scope/http/message.hpp"

#include <algorithm>
#include <cctype>

namespace h2scope::http {

std::string_view to_string(Protocol p) noexcept { return p == Protocol::H2 ? "h2" : "h1"; }

std::optional<Protocol> parse_protocol(std::string_view s) {
  std::string l = to_lower(s);
  if (l == "h2" || l == "http2" || l == "http/2") return Protocol::H2;
  if (l == "h1" || l == "http1" || l == "http/1.1" || l == "http/1") return Protocol::H1;
  return std::nullopt;
}

bool iequals(std::string_view a, std::string_view b) noexcept {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) != std::tolower(static_cast<unsigned char>(b[i]))) return false;
  }
  return true;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

void HeaderMap::add(std::string_view name, std::string_view value) { fields_.emplace_back(to_lower(name), value); }

void HeaderMap::set(std::string_view name, std::string_view value) {
  std::string key = to_lower(name);
  std::erase_if(fields_, [&](const auto& f) { return f.first == key; });
  fields_.emplace_back(std::move(key), value);
}

std::optional<std::string> HeaderMap::get(std::string_view name) const {
  for (const auto& [k, v] : fields_) {
    if (iequals(k, name)) return v;
  }
  return std::nullopt;
}

std::vector<std::string> HeaderMap::get_all(std::string_view name) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : fields_) {
    if (iequals(k, name)) out.push_back(v);
  }
  return out;
}

}  // namespace h2scope::http
