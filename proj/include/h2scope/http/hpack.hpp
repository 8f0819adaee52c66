#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace h2scope::http {

namespace hpack_tables {
struct StaticEntry {
  const char* name;
  const char* value;
};
struct HuffmanCode {
  std::uint32_t code;
  std::uint8_t bits;
};
extern const std::array<StaticEntry, 61> kStaticTable;
extern const std::array<HuffmanCode, 257> kHuffmanCodes;
}  // namespace hpack_tables

using HeaderList = std::vector<std::pair<std::string, std::string>>;

std::string huffman_encode(std::string_view in);
std::size_t huffman_encoded_size(std::string_view in);
// Throws NetError(Malformed) on invalid padding or an embedded EOS.
std::string huffman_decode(std::string_view in);

void hpack_encode_integer(std::string& out, std::uint64_t value, int prefix_bits, std::uint8_t flags);
// Consumes the integer from the front of |in|.
std::uint64_t hpack_decode_integer(std::string_view& in, int prefix_bits);

class HpackDynamicTable {
 public:
  explicit HpackDynamicTable(std::size_t max_size = 4096) : max_size_(max_size) {}

  void add(std::string name, std::string value);
  void set_max_size(std::size_t max_size);
  std::size_t size() const noexcept { return size_; }
  std::size_t max_size() const noexcept { return max_size_; }
  std::size_t count() const noexcept { return entries_.size(); }
  // 0-based, newest first.
  const std::pair<std::string, std::string>& at(std::size_t i) const { return entries_.at(i); }

 private:
  void evict_to(std::size_t limit);

  std::deque<std::pair<std::string, std::string>> entries_;
  std::size_t size_ = 0;
  std::size_t max_size_;
};

class HpackEncoder {
 public:
  std::string encode(const HeaderList& headers);
  // Peer's SETTINGS_HEADER_TABLE_SIZE; the next block starts with a size update.
  void set_peer_max_size(std::size_t n);

 private:
  HpackDynamicTable table_;
  std::optional<std::size_t> pending_size_update_;
};

class HpackDecoder {
 public:
  HeaderList decode(std::string_view block);
  void set_protocol_max_size(std::size_t n) { protocol_max_ = n; }

 private:
  std::pair<std::string, std::string> lookup(std::uint64_t index) const;
  std::string read_string(std::string_view& in);

  HpackDynamicTable table_;
  std::size_t protocol_max_ = 4096;
};

}  // namespace h2scope::http
