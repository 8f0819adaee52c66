#include "h2scope/http/h1.hpp"

#include <charconv>

namespace h2scope::http {

using net::NetErrc;
using net::NetError;

namespace {

constexpr std::size_t kMaxHead = 64 * 1024;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

void parse_fields(std::string_view rest, HeaderMap& headers) {
  while (!rest.empty()) {
    auto eol = rest.find("\r\n");
    std::string_view line = rest.substr(0, eol);
    rest = eol == std::string_view::npos ? std::string_view() : rest.substr(eol + 2);
    if (line.empty()) continue;
    auto colon = line.find(':');
    if (colon == std::string_view::npos || colon == 0) throw NetError(NetErrc::Malformed, "bad header line");
    headers.add(trim(line.substr(0, colon)), trim(line.substr(colon + 1)));
  }
}

bool has_token(const std::optional<std::string>& value, std::string_view token) {
  if (!value) return false;
  std::string_view v = *value;
  while (!v.empty()) {
    auto comma = v.find(',');
    if (iequals(trim(v.substr(0, comma)), token)) return true;
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return false;
}

}  // namespace

ResponseHead parse_response_head(std::string_view head) {
  auto eol = head.find("\r\n");
  std::string_view status_line = head.substr(0, eol);
  if (status_line.size() < 12 || status_line.substr(0, 7) != "HTTP/1.")
    throw NetError(NetErrc::Malformed, "bad status line");
  ResponseHead out;
  out.http10 = status_line[7] == '0';
  int status = 0;
  auto [p, ec] = std::from_chars(status_line.data() + 9, status_line.data() + 12, status);
  if (ec != std::errc() || p != status_line.data() + 12 || status < 100 || status > 999)
    throw NetError(NetErrc::Malformed, "bad status code");
  out.status = status;
  if (status_line.size() > 13) out.reason = std::string(status_line.substr(13));
  if (eol != std::string_view::npos) parse_fields(head.substr(eol + 2), out.headers);
  return out;
}

Request parse_request_head(std::string_view head) {
  auto eol = head.find("\r\n");
  std::string_view line = head.substr(0, eol);
  auto sp1 = line.find(' ');
  auto sp2 = line.rfind(' ');
  if (sp1 == std::string_view::npos || sp2 == sp1 || line.substr(sp2 + 1, 7) != "HTTP/1.")
    throw NetError(NetErrc::Malformed, "bad request line");
  Request req;
  req.method = std::string(line.substr(0, sp1));
  req.target = std::string(line.substr(sp1 + 1, sp2 - sp1 - 1));
  req.scheme = "http";
  if (eol != std::string_view::npos) parse_fields(head.substr(eol + 2), req.headers);
  req.authority = req.headers.get("host").value_or("");
  return req;
}

std::string serialize_request(const Request& req) {
  std::string out = req.method + " " + req.target + " HTTP/1.1\r\n";
  if (!req.headers.contains("host")) out += "Host: " + req.authority + "\r\n";
  for (const auto& [k, v] : req.headers) out += k + ": " + v + "\r\n";
  if (!req.body.empty() && !req.headers.contains("content-length"))
    out += "Content-Length: " + std::to_string(req.body.size()) + "\r\n";
  out += "\r\n";
  out += req.body;
  return out;
}

std::string serialize_response(const Response& resp, bool omit_body) {
  std::string out = "HTTP/1.1 " + std::to_string(resp.status) + " ";
  switch (resp.status) {
    case 101: out += "Switching Protocols"; break;
    case 200: out += "OK"; break;
    case 301: out += "Moved Permanently"; break;
    case 302: out += "Found"; break;
    case 404: out += "Not Found"; break;
    default: out += "Status"; break;
  }
  out += "\r\n";
  for (const auto& [k, v] : resp.headers) out += k + ": " + v + "\r\n";
  if (resp.status != 101 && resp.status != 204 && resp.status != 304 && !resp.headers.contains("content-length"))
    out += "content-length: " + std::to_string(resp.body.size()) + "\r\n";
  out += "\r\n";
  if (!omit_body) out += resp.body;
  return out;
}

std::optional<std::string> read_head(net::Transport& t, std::string& buf, net::Deadline deadline) {
  char chunk[16 * 1024];
  for (;;) {
    if (auto end = buf.find("\r\n\r\n"); end != std::string::npos) {
      std::string head = buf.substr(0, end + 2);
      buf.erase(0, end + 4);
      return head;
    }
    if (buf.size() > kMaxHead) throw NetError(NetErrc::Malformed, "message head too large");
    std::size_t n = net::read_some(t, chunk, deadline);
    if (n == 0) {
      if (buf.empty()) return std::nullopt;
      throw NetError(NetErrc::Closed, "connection closed mid-head");
    }
    buf.append(chunk, n);
  }
}

H1Connection::H1Connection(std::unique_ptr<net::Transport> transport) : transport_(std::move(transport)) {}

void H1Connection::fill(net::Deadline deadline) {
  char chunk[32 * 1024];
  std::size_t n = net::read_some(*transport_, chunk, deadline);
  if (n == 0) throw NetError(NetErrc::Closed, "connection closed mid-body");
  buf_.append(chunk, n);
}

Response H1Connection::round_trip(const Request& req, net::Deadline deadline) {
  if (!reusable_) throw NetError(NetErrc::Closed, "connection not reusable");
  reusable_ = false;
  net::write_all(*transport_, serialize_request(req), deadline);
  for (;;) {
    auto head_text = read_head(*transport_, buf_, deadline);
    if (!head_text) throw NetError(NetErrc::Closed, "connection closed before response");
    ResponseHead head = parse_response_head(*head_text);
    // Interim responses other than 101 precede the real one.
    if (head.status >= 100 && head.status < 200 && head.status != 101) continue;
    Response resp;
    resp.status = head.status;
    resp.headers = head.headers;
    if (head.status == 101) return resp;
    bool close_delimited = false;
    resp.body = read_body(head, req.method == "HEAD", deadline);
    auto te = head.headers.get("transfer-encoding");
    close_delimited = !head.headers.contains("content-length") && !has_token(te, "chunked") &&
                      req.method != "HEAD" && head.status != 204 && head.status != 304;
    bool wants_close = has_token(head.headers.get("connection"), "close") || head.http10;
    reusable_ = !close_delimited && !wants_close;
    return resp;
  }
}

std::string H1Connection::read_body(const ResponseHead& head, bool is_head_request, net::Deadline deadline) {
  if (is_head_request || head.status == 204 || head.status == 304) return {};
  std::string body;
  if (has_token(head.headers.get("transfer-encoding"), "chunked")) {
    for (;;) {
      std::size_t eol;
      while ((eol = buf_.find("\r\n")) == std::string::npos) fill(deadline);
      std::size_t size = 0;
      auto [p, ec] = std::from_chars(buf_.data(), buf_.data() + eol, size, 16);
      if (ec != std::errc()) throw NetError(NetErrc::Malformed, "bad chunk size");
      buf_.erase(0, eol + 2);
      if (size == 0) {
        // Trailers end with an empty line.
        for (;;) {
          while ((eol = buf_.find("\r\n")) == std::string::npos) fill(deadline);
          bool last = eol == 0;
          buf_.erase(0, eol + 2);
          if (last) return body;
        }
      }
      while (buf_.size() < size + 2) fill(deadline);
      body.append(buf_, 0, size);
      buf_.erase(0, size + 2);
    }
  }
  if (auto cl = head.headers.get("content-length")) {
    std::size_t len = 0;
    auto [p, ec] = std::from_chars(cl->data(), cl->data() + cl->size(), len);
    if (ec != std::errc()) throw NetError(NetErrc::Malformed, "bad content-length");
    while (buf_.size() < len) fill(deadline);
    body = buf_.substr(0, len);
    buf_.erase(0, len);
    return body;
  }
  char chunk[32 * 1024];
  for (;;) {
    std::size_t n = net::read_some(*transport_, chunk, deadline);
    if (n == 0) break;
    buf_.append(chunk, n);
  }
  body = std::move(buf_);
  buf_.clear();
  return body;
}

std::optional<Request> H1RequestReader::next(net::Transport& t, net::Deadline deadline) {
  auto head = read_head(t, buf_, deadline);
  if (!head) return std::nullopt;
  Request req = parse_request_head(*head);
  if (auto cl = req.headers.get("content-length")) {
    std::size_t len = 0;
    std::from_chars(cl->data(), cl->data() + cl->size(), len);
    char chunk[16 * 1024];
    while (buf_.size() < len) {
      std::size_t n = net::read_some(t, chunk, deadline);
      if (n == 0) throw NetError(NetErrc::Closed, "closed mid-request body");
      buf_.append(chunk, n);
    }
    req.body = buf_.substr(0, len);
    buf_.erase(0, len);
  }
  return req;
}

}  // namespace h2scope::http
