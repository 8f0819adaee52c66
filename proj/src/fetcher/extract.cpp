#include "h2scope/fetcher/extract.hpp"

#include <cctype>
#include <map>
#include <optional>

#include "h2scope/common/error.hpp"
#include "h2scope/http/message.hpp"

namespace h2scope::fetcher {

std::string_view to_string(OriginTag t) noexcept {
  switch (t) {
    case OriginTag::HTML_ATTR: return "HTML_ATTR";
    case OriginTag::CSS_URL: return "CSS_URL";
    case OriginTag::INLINE: return "INLINE";
  }
  return "HTML_ATTR";
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f'; }
bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

bool starts_with_ci(std::string_view s, std::size_t pos, std::string_view prefix) {
  if (s.size() - pos < prefix.size() || pos > s.size()) return false;
  return http::iequals(s.substr(pos, prefix.size()), prefix);
}

std::size_t find_ci(std::string_view s, std::string_view needle, std::size_t from) {
  if (needle.empty()) return from;
  for (std::size_t i = from; i + needle.size() <= s.size(); ++i) {
    if (starts_with_ci(s, i, needle)) return i;
  }
  return std::string_view::npos;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string path_extension(std::string_view path) {
  std::size_t slash = path.rfind('/');
  std::size_t dot = path.rfind('.');
  if (dot == std::string_view::npos || (slash != std::string_view::npos && dot < slash)) return {};
  return http::to_lower(path.substr(dot + 1));
}

struct Tag {
  std::string name;
  std::map<std::string, std::string> attrs;  // first occurrence wins
  std::size_t end = 0;                       // index just past '>'
};

// Parses a start tag beginning at s[pos] == '<'. Unterminated tags run to
// the end of input.
Tag parse_start_tag(std::string_view s, std::size_t pos) {
  Tag t;
  std::size_t i = pos + 1;
  while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '-' || s[i] == ':')) ++i;
  t.name = http::to_lower(s.substr(pos + 1, i - pos - 1));
  for (;;) {
    while (i < s.size() && (is_space(s[i]) || s[i] == '/')) ++i;
    if (i >= s.size()) break;
    if (s[i] == '>') {
      ++i;
      break;
    }
    std::size_t ns = i;
    while (i < s.size() && !is_space(s[i]) && s[i] != '=' && s[i] != '>' && s[i] != '/') ++i;
    if (i == ns) {
      ++i;
      continue;
    }
    std::string name = http::to_lower(s.substr(ns, i - ns));
    std::string value;
    std::size_t j = i;
    while (j < s.size() && is_space(s[j])) ++j;
    if (j < s.size() && s[j] == '=') {
      ++j;
      while (j < s.size() && is_space(s[j])) ++j;
      if (j < s.size() && (s[j] == '"' || s[j] == '\'')) {
        char q = s[j++];
        std::size_t close = s.find(q, j);
        if (close == std::string_view::npos) close = s.size();
        value = decode_entities(s.substr(j, close - j));
        j = close == s.size() ? close : close + 1;
      } else {
        std::size_t vs = j;
        while (j < s.size() && !is_space(s[j]) && s[j] != '>') ++j;
        value = decode_entities(s.substr(vs, j - vs));
      }
      i = j;
    }
    t.attrs.emplace(std::move(name), std::move(value));
  }
  t.end = i;
  return t;
}

const std::string* attr(const Tag& t, const char* name) {
  auto it = t.attrs.find(name);
  return it == t.attrs.end() ? nullptr : &it->second;
}

// First URL of a srcset candidate list.
std::string first_srcset_candidate(std::string_view srcset) {
  srcset = trim(srcset);
  std::size_t end = 0;
  while (end < srcset.size() && !is_space(srcset[end]) && srcset[end] != ',') ++end;
  return std::string(srcset.substr(0, end));
}

bool rel_is_fetched(std::string_view rel) {
  std::string r = http::to_lower(rel);
  for (std::string_view token : {"stylesheet", "icon", "preload", "modulepreload", "apple-touch-icon"}) {
    std::size_t at = r.find(token);
    while (at != std::string::npos) {
      bool left = at == 0 || is_space(r[at - 1]);
      bool right = at + token.size() == r.size() || is_space(r[at + token.size()]);
      if (left && right) return true;
      at = r.find(token, at + 1);
    }
  }
  return false;
}

class Collector {
 public:
  Collector(Extraction& out, const http::Url& doc) : out_(out), doc_(doc.str()) {}

  void add(const http::Url& base, std::string_view ref, OriginTag tag, bool stylesheet = false) {
    ref = trim(ref);
    if (ref.empty()) return;
    auto url = http::resolve_url(base, ref);
    if (!url) return;
    ObjectRef r;
    r.url = url->str();
    r.origin_tag = tag;
    r.discovered_from = doc_;
    r.stylesheet = stylesheet;
    out_.refs.push_back(std::move(r));
  }

  void add_inline(std::int64_t bytes) {
    out_.inline_css_js_bytes += bytes;
    if (bytes == 0) return;
    ObjectRef r;
    r.origin_tag = OriginTag::INLINE;
    r.discovered_from = doc_;
    r.inline_bytes = bytes;
    out_.refs.push_back(std::move(r));
  }

 private:
  Extraction& out_;
  std::string doc_;
};

void scan_css(std::string_view css, const http::Url& base, Collector& c) {
  std::size_t i = 0;
  auto read_url_token = [&](std::size_t open) -> std::pair<std::string, std::size_t> {
    // |open| is just past "url(".
    std::size_t j = open;
    while (j < css.size() && is_space(css[j])) ++j;
    if (j < css.size() && (css[j] == '"' || css[j] == '\'')) {
      char q = css[j++];
      std::size_t close = css.find(q, j);
      if (close == std::string_view::npos) return {std::string(css.substr(j)), css.size()};
      std::size_t paren = css.find(')', close);
      return {std::string(css.substr(j, close - j)), paren == std::string_view::npos ? css.size() : paren + 1};
    }
    std::size_t close = css.find(')', j);
    if (close == std::string_view::npos) close = css.size();
    return {std::string(trim(css.substr(j, close - j))), std::min(close + 1, css.size())};
  };
  while (i < css.size()) {
    if (css[i] == '/' && i + 1 < css.size() && css[i + 1] == '*') {
      std::size_t end = css.find("*/", i + 2);
      i = end == std::string_view::npos ? css.size() : end + 2;
      continue;
    }
    if (css[i] == '@' && starts_with_ci(css, i, "@import")) {
      std::size_t j = i + 7;
      while (j < css.size() && is_space(css[j])) ++j;
      if (j < css.size() && (css[j] == '"' || css[j] == '\'')) {
        char q = css[j++];
        std::size_t close = css.find(q, j);
        if (close == std::string_view::npos) close = css.size();
        c.add(base, css.substr(j, close - j), OriginTag::CSS_URL, true);
        i = std::min(close + 1, css.size());
        continue;
      }
      if (starts_with_ci(css, j, "url(")) {
        auto [u, next] = read_url_token(j + 4);
        c.add(base, u, OriginTag::CSS_URL, true);
        i = next;
        continue;
      }
      i = j;
      continue;
    }
    if ((css[i] == 'u' || css[i] == 'U') && starts_with_ci(css, i, "url(") &&
        (i == 0 || !(std::isalnum(static_cast<unsigned char>(css[i - 1])) || css[i - 1] == '-'))) {
      auto [u, next] = read_url_token(i + 4);
      c.add(base, u, OriginTag::CSS_URL);
      i = next;
      continue;
    }
    ++i;
  }
}

}  // namespace

std::string decode_entities(std::string_view s) {
  static const std::map<std::string, std::string, std::less<>> kNamed = {
      {"amp", "&"}, {"lt", "<"}, {"gt", ">"}, {"quot", "\""}, {"apos", "'"}, {"nbsp", "\xc2\xa0"}};
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '&') {
      out.push_back(s[i]);
      continue;
    }
    std::size_t semi = s.find(';', i + 1);
    if (semi == std::string_view::npos || semi - i > 10) {
      out.push_back('&');
      continue;
    }
    std::string_view ent = s.substr(i + 1, semi - i - 1);
    if (!ent.empty() && ent[0] == '#') {
      unsigned long cp = 0;
      bool ok = ent.size() > 1;
      bool hex = ok && (ent[1] == 'x' || ent[1] == 'X');
      for (std::size_t k = hex ? 2 : 1; ok && k < ent.size(); ++k) {
        int d = std::isdigit(static_cast<unsigned char>(ent[k]))                 ? ent[k] - '0'
                : hex && std::isxdigit(static_cast<unsigned char>(ent[k])) ? (std::tolower(ent[k]) - 'a' + 10)
                                                                             : -1;
        if (d < 0) ok = false;
        cp = cp * (hex ? 16 : 10) + static_cast<unsigned long>(d);
        if (cp > 0x10ffff) ok = false;
      }
      if (ok && cp > 0 && cp < 0x80) {
        out.push_back(static_cast<char>(cp));
        i = semi;
        continue;
      }
    } else if (auto it = kNamed.find(ent); it != kNamed.end()) {
      out += it->second;
      i = semi;
      continue;
    }
    out.push_back('&');
  }
  return out;
}

MediaKind media_kind(std::string_view content_type, std::string_view path) {
  std::string ct = http::to_lower(trim(content_type.substr(0, content_type.find(';'))));
  if (ct == "text/html" || ct == "application/xhtml+xml") return MediaKind::Html;
  if (ct == "text/css") return MediaKind::Css;
  if (!ct.empty() && ct != "application/octet-stream" && ct != "text/plain") return MediaKind::Other;
  std::string ext = path_extension(path);
  if (ext == "css") return MediaKind::Css;
  if (ext == "html" || ext == "htm" || (ext.empty() && !path.empty() && path.back() == '/')) return MediaKind::Html;
  return MediaKind::Other;
}

Extraction extract_html(std::string_view s, const http::Url& doc_url) {
  Extraction out;
  Collector c(out, doc_url);
  http::Url base = doc_url;
  bool base_seen = false;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t lt = s.find('<', i);
    if (lt == std::string_view::npos) break;
    if (s.compare(lt, 4, "<!--") == 0) {
      std::size_t end = s.find("-->", lt + 4);
      i = end == std::string_view::npos ? s.size() : end + 3;
      continue;
    }
    if (lt + 1 < s.size() && (s[lt + 1] == '!' || s[lt + 1] == '?' || s[lt + 1] == '/')) {
      std::size_t end = s.find('>', lt + 1);
      i = end == std::string_view::npos ? s.size() : end + 1;
      continue;
    }
    if (lt + 1 >= s.size() || !is_alpha(s[lt + 1])) {
      i = lt + 1;
      continue;
    }
    Tag t = parse_start_tag(s, lt);
    i = t.end;

    if (auto* style = attr(t, "style")) scan_css(*style, base, c);

    const std::string& n = t.name;
    if (n == "script" || n == "style") {
      std::size_t close = find_ci(s, "</" + n, i);
      std::string_view body = s.substr(i, close == std::string_view::npos ? std::string_view::npos : close - i);
      c.add_inline(static_cast<std::int64_t>(body.size()));
      if (n == "style") scan_css(body, base, c);
      if (n == "script") {
        if (auto* src = attr(t, "src")) c.add(base, *src, OriginTag::HTML_ATTR);
      }
      if (close == std::string_view::npos) break;
      std::size_t gt = s.find('>', close);
      i = gt == std::string_view::npos ? s.size() : gt + 1;
      continue;
    }
    if (n == "textarea" || n == "title" || n == "noscript" || n == "xmp") {
      std::size_t close = find_ci(s, "</" + n, i);
      if (close == std::string_view::npos) break;
      std::size_t gt = s.find('>', close);
      i = gt == std::string_view::npos ? s.size() : gt + 1;
      continue;
    }
    if (n == "base") {
      if (auto* href = attr(t, "href"); href && !base_seen) {
        if (auto b = http::resolve_url(doc_url, trim(*href))) {
          base = *b;
          base_seen = true;
        }
      }
      continue;
    }
    if (n == "img" || n == "source") {
      if (auto* src = attr(t, "src"); src && !trim(*src).empty()) {
        c.add(base, *src, OriginTag::HTML_ATTR);
      } else if (auto* set = attr(t, "srcset")) {
        c.add(base, first_srcset_candidate(*set), OriginTag::HTML_ATTR);
      }
      continue;
    }
    if (n == "link") {
      auto* href = attr(t, "href");
      auto* rel = attr(t, "rel");
      if (href && rel && rel_is_fetched(*rel))
        c.add(base, *href, OriginTag::HTML_ATTR, http::to_lower(*rel).find("stylesheet") != std::string::npos);
      continue;
    }
    if (n == "iframe" || n == "frame" || n == "embed" || n == "audio" || n == "track") {
      if (auto* src = attr(t, "src")) c.add(base, *src, OriginTag::HTML_ATTR);
      continue;
    }
    if (n == "video") {
      if (auto* poster = attr(t, "poster")) c.add(base, *poster, OriginTag::HTML_ATTR);
      if (auto* src = attr(t, "src")) c.add(base, *src, OriginTag::HTML_ATTR);
      continue;
    }
    if (n == "object") {
      if (auto* data = attr(t, "data")) c.add(base, *data, OriginTag::HTML_ATTR);
      continue;
    }
    if (n == "input") {
      auto* type = attr(t, "type");
      auto* src = attr(t, "src");
      if (type && src && http::iequals(*type, "image")) c.add(base, *src, OriginTag::HTML_ATTR);
      continue;
    }
    if (n == "body" || n == "table" || n == "td") {
      if (auto* bg = attr(t, "background")) c.add(base, *bg, OriginTag::HTML_ATTR);
      continue;
    }
  }
  return out;
}

Extraction extract_css(std::string_view css, const http::Url& base) {
  Extraction out;
  Collector c(out, base);
  scan_css(css, base, c);
  return out;
}

Extraction extract_objects(std::string_view document, std::string_view media_type, const http::Url& base) {
  switch (media_kind(media_type, base.path)) {
    case MediaKind::Html: return extract_html(document, base);
    case MediaKind::Css: return extract_css(document, base);
    case MediaKind::Other: break;
  }
  throw Error(ErrorCode::InvalidArgument, "extract_objects needs HTML or CSS, got " + std::string(media_type));
}

}  // namespace h2scope::fetcher
