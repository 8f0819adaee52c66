#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "h2scope/http/url.hpp"

namespace h2scope::fetcher {

enum class OriginTag { HTML_ATTR, CSS_URL, INLINE };

std::string_view to_string(OriginTag t) noexcept;

struct ObjectRef {
  // Absolute URL; empty for INLINE entries.
  std::string url;
  OriginTag origin_tag = OriginTag::HTML_ATTR;
  std::string discovered_from;
  // INLINE only: body length of the style/script element.
  std::int64_t inline_bytes = 0;
  // The reference came from a stylesheet link or an @import.
  bool stylesheet = false;
};

struct Extraction {
  std::vector<ObjectRef> refs;
  std::int64_t inline_css_js_bytes = 0;
};

enum class MediaKind { Html, Css, Other };

// Classifies a Content-Type value; falls back to the URL path's extension
// when the header is missing or generic.
MediaKind media_kind(std::string_view content_type, std::string_view path = {});

// Best-effort reference extraction. Never throws on malformed input; refs
// keep document order, duplicates included.
Extraction extract_objects(std::string_view document, std::string_view media_type, const http::Url& base);

Extraction extract_html(std::string_view html, const http::Url& base);
Extraction extract_css(std::string_view css, const http::Url& base);

// Decodes the handful of character references that show up in URLs.
std::string decode_entities(std::string_view s);

}  // namespace h2scope::fetcher
