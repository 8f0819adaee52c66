#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "h2scope/http/message.hpp"
#include "h2scope/net/transport.hpp"

namespace h2scope::http {

struct ResponseHead {
  int status = 0;
  std::string reason;
  HeaderMap headers;
  bool http10 = false;
};

// Parses "HTTP/1.x NNN reason\r\nfields\r\n" (without the blank line).
ResponseHead parse_response_head(std::string_view head);
// Parses a request head into method/target/headers; authority comes from Host.
Request parse_request_head(std::string_view head);

std::string serialize_request(const Request& req);
std::string serialize_response(const Response& resp, bool omit_body = false);

// Reads one message head (through the blank line) from |t| into |buf|,
// returning the head text and leaving any surplus bytes in |buf|.
// Returns nullopt on clean end of stream before any byte.
std::optional<std::string> read_head(net::Transport& t, std::string& buf, net::Deadline deadline);

// Client side of one HTTP/1.1 connection; requests are strictly sequential.
class H1Connection {
 public:
  explicit H1Connection(std::unique_ptr<net::Transport> transport);

  Response round_trip(const Request& req, net::Deadline deadline);
  bool reusable() const noexcept { return reusable_; }
  net::Transport& transport() { return *transport_; }

 private:
  std::string read_body(const ResponseHead& head, bool is_head_request, net::Deadline deadline);
  void fill(net::Deadline deadline);

  std::unique_ptr<net::Transport> transport_;
  std::string buf_;
  bool reusable_ = true;
};

// Server side request reader with keep-alive buffering.
class H1RequestReader {
 public:
  std::optional<Request> next(net::Transport& t, net::Deadline deadline);
  // Bytes read past the last request (e.g. an HTTP/2 preface after 101).
  std::string take_buffer() { return std::move(buf_); }

 private:
  std::string buf_;
};

}  // namespace h2scope::http
