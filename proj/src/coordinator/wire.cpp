#include "h2scope/coordinator/wire.hpp"

#include <sys/socket.h>

#include <cerrno>

#include <fmt/format.h>

#include "h2scope/common/error.hpp"

namespace h2scope::coordinator {

std::string_view to_string(MessageKind k) noexcept {
  switch (k) {
    case MessageKind::Hello: return "hello";
    case MessageKind::Task: return "task";
    case MessageKind::Report: return "report";
    case MessageKind::Bye: return "bye";
  }
  return "bye";
}

std::string encode_frame(const Message& m) {
  json j = m.body;
  j["kind"] = to_string(m.kind);
  j["protocol_version"] = kProtocolVersion;
  j["worker_id"] = m.worker_id;
  std::string payload = j.dump();
  if (payload.size() > kMaxFrameBytes) throw Error(ErrorCode::ProtocolError, "message too large");
  auto n = static_cast<std::uint32_t>(payload.size());
  std::string out;
  out.reserve(4 + payload.size());
  out += static_cast<char>((n >> 24) & 0xff);
  out += static_cast<char>((n >> 16) & 0xff);
  out += static_cast<char>((n >> 8) & 0xff);
  out += static_cast<char>(n & 0xff);
  out += payload;
  return out;
}

Message decode_message(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ProtocolError, "message is not an object");
  if (!j.contains("protocol_version") || !j["protocol_version"].is_number_integer())
    throw Error(ErrorCode::ProtocolError, "missing protocol_version");
  int v = j["protocol_version"].get<int>();
  if (v != kProtocolVersion)
    throw Error(ErrorCode::ProtocolError, fmt::format("protocol_version {} (expected {})", v, kProtocolVersion));
  if (!j.contains("worker_id") || !j["worker_id"].is_string()) throw Error(ErrorCode::ProtocolError, "missing worker_id");
  const std::string kind = j.value("kind", "");
  Message m;
  if (kind == "hello") {
    m.kind = MessageKind::Hello;
  } else if (kind == "task") {
    m.kind = MessageKind::Task;
  } else if (kind == "report") {
    m.kind = MessageKind::Report;
  } else if (kind == "bye") {
    m.kind = MessageKind::Bye;
  } else {
    throw Error(ErrorCode::ProtocolError, "unknown message kind '" + kind + "'");
  }
  m.worker_id = j["worker_id"].get<std::string>();
  m.body = j;
  m.body.erase("kind");
  m.body.erase("protocol_version");
  m.body.erase("worker_id");
  return m;
}

std::optional<Message> FrameDecoder::next() {
  if (buf_.size() < 4) return std::nullopt;
  auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[i])); };
  std::uint32_t n = (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
  if (n > kMaxFrameBytes) throw Error(ErrorCode::ProtocolError, fmt::format("frame of {} bytes", n));
  if (buf_.size() < 4 + static_cast<std::size_t>(n)) return std::nullopt;
  std::string payload = buf_.substr(4, n);
  buf_.erase(0, 4 + static_cast<std::size_t>(n));
  json j = json::parse(payload, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::ProtocolError, "frame is not JSON");
  return decode_message(j);
}

void send_message(int fd, const Message& m, net::Deadline deadline) {
  std::string frame = encode_frame(m);
  std::string_view rest = frame;
  while (!rest.empty()) {
    ssize_t w = ::send(fd, rest.data(), rest.size(), MSG_NOSIGNAL);
    if (w > 0) {
      rest.remove_prefix(static_cast<std::size_t>(w));
      continue;
    }
    if (w < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) {
      if (!net::wait_fd(fd, true, deadline)) throw net::NetError(net::NetErrc::Timeout, "sending message");
      continue;
    }
    throw net::NetError(net::NetErrc::Reset, "sending message");
  }
}

std::optional<Message> recv_message(int fd, FrameDecoder& decoder, net::Deadline deadline) {
  char buf[16384];
  for (;;) {
    if (auto m = decoder.next()) return m;
    ssize_t n = ::recv(fd, buf, sizeof(buf), 0);
    if (n > 0) {
      decoder.feed(std::string_view(buf, static_cast<std::size_t>(n)));
      continue;
    }
    if (n == 0) {
      if (decoder.empty()) return std::nullopt;
      throw net::NetError(net::NetErrc::Closed, "peer closed mid-frame");
    }
    if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) {
      if (!net::wait_fd(fd, false, deadline)) throw net::NetError(net::NetErrc::Timeout, "waiting for message");
      continue;
    }
    throw net::NetError(net::NetErrc::Reset, "receiving message");
  }
}

}  // namespace h2scope::coordinator
