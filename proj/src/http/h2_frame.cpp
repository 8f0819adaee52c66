#include "h2scope/http/h2_frame.hpp"

#include "h2scope/net/socket.hpp"

namespace h2scope::http::h2 {

using net::NetErrc;
using net::NetError;

std::uint32_t read_u32(std::string_view p) {
  return (static_cast<std::uint32_t>(static_cast<unsigned char>(p[0])) << 24) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(p[1])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(p[2])) << 8) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(p[3]));
}

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

std::string encode_frame(FrameType type, std::uint8_t fl, std::uint32_t stream_id, std::string_view payload) {
  std::string out;
  out.reserve(kFrameHeaderSize + payload.size());
  auto len = static_cast<std::uint32_t>(payload.size());
  out.push_back(static_cast<char>((len >> 16) & 0xff));
  out.push_back(static_cast<char>((len >> 8) & 0xff));
  out.push_back(static_cast<char>(len & 0xff));
  out.push_back(static_cast<char>(type));
  out.push_back(static_cast<char>(fl));
  put_u32(out, stream_id & 0x7fffffffu);
  out.append(payload);
  return out;
}

std::string encode_settings(std::initializer_list<std::pair<SettingId, std::uint32_t>> settings) {
  std::string payload;
  for (auto [id, value] : settings) {
    auto v = static_cast<std::uint16_t>(id);
    payload.push_back(static_cast<char>(v >> 8));
    payload.push_back(static_cast<char>(v & 0xff));
    put_u32(payload, value);
  }
  return encode_frame(FrameType::Settings, 0, 0, payload);
}

std::string encode_window_update(std::uint32_t stream_id, std::uint32_t increment) {
  std::string payload;
  put_u32(payload, increment & 0x7fffffffu);
  return encode_frame(FrameType::WindowUpdate, 0, stream_id, payload);
}

std::string encode_rst_stream(std::uint32_t stream_id, ErrorCode code) {
  std::string payload;
  put_u32(payload, static_cast<std::uint32_t>(code));
  return encode_frame(FrameType::RstStream, 0, stream_id, payload);
}

std::string encode_goaway(std::uint32_t last_stream_id, ErrorCode code) {
  std::string payload;
  put_u32(payload, last_stream_id & 0x7fffffffu);
  put_u32(payload, static_cast<std::uint32_t>(code));
  return encode_frame(FrameType::GoAway, 0, 0, payload);
}

bool FrameReader::consume_preface() {
  std::size_t avail = buf_.size() - pos_;
  std::size_t n = std::min(avail, kClientPreface.size());
  if (std::string_view(buf_).substr(pos_, n) != kClientPreface.substr(0, n))
    throw NetError(NetErrc::Malformed, "bad HTTP/2 connection preface");
  if (avail < kClientPreface.size()) return false;
  pos_ += kClientPreface.size();
  return true;
}

std::optional<Frame> FrameReader::next() {
  if (buf_.size() - pos_ < kFrameHeaderSize) {
    if (pos_ > 0 && pos_ == buf_.size()) {
      buf_.clear();
      pos_ = 0;
    }
    return std::nullopt;
  }
  std::string_view h = std::string_view(buf_).substr(pos_, kFrameHeaderSize);
  std::uint32_t len = (static_cast<std::uint32_t>(static_cast<unsigned char>(h[0])) << 16) |
                      (static_cast<std::uint32_t>(static_cast<unsigned char>(h[1])) << 8) |
                      static_cast<std::uint32_t>(static_cast<unsigned char>(h[2]));
  if (len > max_frame_) throw NetError(NetErrc::Malformed, "frame exceeds max frame size");
  if (buf_.size() - pos_ < kFrameHeaderSize + len) return std::nullopt;
  Frame f;
  f.type = static_cast<FrameType>(h[3]);
  f.flags = static_cast<std::uint8_t>(h[4]);
  f.stream_id = read_u32(h.substr(5)) & 0x7fffffffu;
  f.payload = buf_.substr(pos_ + kFrameHeaderSize, len);
  pos_ += kFrameHeaderSize + len;
  if (pos_ > 64 * 1024) {
    buf_.erase(0, pos_);
    pos_ = 0;
  }
  return f;
}

std::string_view frame_fragment(const Frame& f) {
  std::string_view p = f.payload;
  std::size_t pad = 0;
  if (f.has(flags::kPadded)) {
    if (p.empty()) throw NetError(NetErrc::Malformed, "padded frame without pad length");
    pad = static_cast<unsigned char>(p.front());
    p.remove_prefix(1);
  }
  if (f.type == FrameType::Headers && f.has(flags::kPriority)) {
    if (p.size() < 5) throw NetError(NetErrc::Malformed, "short priority block");
    p.remove_prefix(5);
  }
  if (f.type == FrameType::PushPromise) {
    if (p.size() < 4) throw NetError(NetErrc::Malformed, "short push promise");
    p.remove_prefix(4);
  }
  if (pad > p.size()) throw NetError(NetErrc::Malformed, "padding exceeds payload");
  p.remove_suffix(pad);
  return p;
}

}  // namespace h2scope::http::h2
