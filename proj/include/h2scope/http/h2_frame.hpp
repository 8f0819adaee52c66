#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace h2scope::http::h2 {

inline constexpr std::string_view kClientPreface = "PRI * HTTP/2.0\r\n\r\nSM\r\n\r\n";
inline constexpr std::uint32_t kDefaultWindow = 65535;
inline constexpr std::uint32_t kDefaultMaxFrame = 16384;
inline constexpr std::size_t kFrameHeaderSize = 9;

enum class FrameType : std::uint8_t {
  Data = 0x0,
  Headers = 0x1,
  Priority = 0x2,
  RstStream = 0x3,
  Settings = 0x4,
  PushPromise = 0x5,
  Ping = 0x6,
  GoAway = 0x7,
  WindowUpdate = 0x8,
  Continuation = 0x9,
};

namespace flags {
inline constexpr std::uint8_t kEndStream = 0x1;
inline constexpr std::uint8_t kAck = 0x1;
inline constexpr std::uint8_t kEndHeaders = 0x4;
inline constexpr std::uint8_t kPadded = 0x8;
inline constexpr std::uint8_t kPriority = 0x20;
}  // namespace flags

enum class SettingId : std::uint16_t {
  HeaderTableSize = 0x1,
  EnablePush = 0x2,
  MaxConcurrentStreams = 0x3,
  InitialWindowSize = 0x4,
  MaxFrameSize = 0x5,
  MaxHeaderListSize = 0x6,
};

enum class ErrorCode : std::uint32_t {
  NoError = 0x0,
  ProtocolError = 0x1,
  InternalError = 0x2,
  FlowControlError = 0x3,
  StreamClosed = 0x5,
  FrameSizeError = 0x6,
  RefusedStream = 0x7,
  Cancel = 0x8,
  CompressionError = 0x9,
};

struct Frame {
  FrameType type = FrameType::Data;
  std::uint8_t flags = 0;
  std::uint32_t stream_id = 0;
  std::string payload;

  bool has(std::uint8_t f) const noexcept { return (flags & f) != 0; }
};

std::string encode_frame(FrameType type, std::uint8_t flags, std::uint32_t stream_id, std::string_view payload);
std::string encode_settings(std::initializer_list<std::pair<SettingId, std::uint32_t>> settings);
std::string encode_window_update(std::uint32_t stream_id, std::uint32_t increment);
std::string encode_rst_stream(std::uint32_t stream_id, ErrorCode code);
std::string encode_goaway(std::uint32_t last_stream_id, ErrorCode code);

std::uint32_t read_u32(std::string_view p);
void put_u32(std::string& out, std::uint32_t v);

// Incremental frame splitter over a byte stream.
class FrameReader {
 public:
  void feed(std::string_view bytes) { buf_.append(bytes); }
  // Consumes the connection preface; false while not enough bytes yet.
  // Throws NetError(Malformed) if the bytes are not a preface.
  bool consume_preface();
  // Throws NetError(Malformed) on an oversized frame.
  std::optional<Frame> next();
  void set_max_frame_size(std::uint32_t n) { max_frame_ = n; }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
  std::uint32_t max_frame_ = kDefaultMaxFrame;
};

// Strips PADDED (and PRIORITY for HEADERS) framing, leaving the fragment.
std::string_view frame_fragment(const Frame& f);

}  // namespace h2scope::http::h2
