#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "h2scope/common/json_io.hpp"
#include "h2scope/net/socket.hpp"

namespace h2scope::coordinator {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::size_t kMaxFrameBytes = 64u << 20;

enum class MessageKind { Hello, Task, Report, Bye };

std::string_view to_string(MessageKind k) noexcept;

// hello:  {"health": WorkerHealth}
// task:   {"task": TaskAssignment}
// report: {"report": WorkerReport}
// bye:    {"reason": string, "retry_after_ms"?: integer}
struct Message {
  MessageKind kind = MessageKind::Bye;
  std::string worker_id;
  json body = json::object();
};

// 4-byte big-endian length, then the JSON document.
std::string encode_frame(const Message& m);

// Incremental decoder. next() throws Error(ProtocolError) on oversize
// frames, malformed JSON, unknown kinds, or a protocol_version mismatch.
class FrameDecoder {
 public:
  void feed(std::string_view bytes) { buf_.append(bytes); }
  std::optional<Message> next();
  bool empty() const { return buf_.empty(); }

 private:
  std::string buf_;
};

Message decode_message(const json& j);

// Blocking helpers on a non-blocking socket, bounded by |deadline|.
// recv_message returns nothing when the peer closes between frames.
void send_message(int fd, const Message& m, net::Deadline deadline);
std::optional<Message> recv_message(int fd, FrameDecoder& decoder, net::Deadline deadline);

}  // namespace h2scope::coordinator
