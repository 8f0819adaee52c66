#include "h2scope/http/hpack.hpp"

#include <algorithm>

#include "h2scope/net/socket.hpp"

namespace h2scope::http {

using net::NetErrc;
using net::NetError;

namespace {

constexpr std::size_t kEntryOverhead = 32;
constexpr int kEos = 256;

struct HuffmanNode {
  std::int16_t child[2] = {-1, -1};
  std::int16_t symbol = -1;
};

const std::vector<HuffmanNode>& huffman_tree() {
  static const std::vector<HuffmanNode> tree = [] {
    std::vector<HuffmanNode> nodes(1);
    for (int sym = 0; sym < 257; ++sym) {
      const auto& hc = hpack_tables::kHuffmanCodes[static_cast<std::size_t>(sym)];
      std::size_t cur = 0;
      for (int b = hc.bits - 1; b >= 0; --b) {
        int bit = (hc.code >> b) & 1;
        if (nodes[cur].child[bit] < 0) {
          nodes[cur].child[bit] = static_cast<std::int16_t>(nodes.size());
          nodes.emplace_back();
        }
        cur = static_cast<std::size_t>(nodes[cur].child[bit]);
      }
      nodes[cur].symbol = static_cast<std::int16_t>(sym);
    }
    return nodes;
  }();
  return tree;
}

}  // namespace

std::size_t huffman_encoded_size(std::string_view in) {
  std::size_t bits = 0;
  for (unsigned char c : in) bits += hpack_tables::kHuffmanCodes[c].bits;
  return (bits + 7) / 8;
}

std::string huffman_encode(std::string_view in) {
  std::string out;
  out.reserve(huffman_encoded_size(in));
  std::uint64_t acc = 0;
  int nbits = 0;
  for (unsigned char c : in) {
    const auto& hc = hpack_tables::kHuffmanCodes[c];
    acc = (acc << hc.bits) | hc.code;
    nbits += hc.bits;
    while (nbits >= 8) {
      nbits -= 8;
      out.push_back(static_cast<char>((acc >> nbits) & 0xff));
    }
  }
  if (nbits > 0) {
    // Pad with the most significant bits of EOS (all ones).
    acc = (acc << (8 - nbits)) | ((1u << (8 - nbits)) - 1);
    out.push_back(static_cast<char>(acc & 0xff));
  }
  return out;
}

std::string huffman_decode(std::string_view in) {
  const auto& tree = huffman_tree();
  std::string out;
  std::size_t cur = 0;
  int depth = 0;
  bool all_ones = true;
  for (unsigned char byte : in) {
    for (int b = 7; b >= 0; --b) {
      int bit = (byte >> b) & 1;
      auto next = tree[cur].child[bit];
      if (next < 0) throw NetError(NetErrc::Malformed, "invalid huffman code");
      cur = static_cast<std::size_t>(next);
      ++depth;
      all_ones = all_ones && bit == 1;
      if (tree[cur].symbol >= 0) {
        if (tree[cur].symbol == kEos) throw NetError(NetErrc::Malformed, "EOS inside huffman string");
        out.push_back(static_cast<char>(tree[cur].symbol));
        cur = 0;
        depth = 0;
        all_ones = true;
      }
    }
  }
  if (depth > 7 || !all_ones) throw NetError(NetErrc::Malformed, "invalid huffman padding");
  return out;
}

void hpack_encode_integer(std::string& out, std::uint64_t value, int prefix_bits, std::uint8_t flags) {
  const std::uint64_t max_prefix = (1u << prefix_bits) - 1;
  if (value < max_prefix) {
    out.push_back(static_cast<char>(flags | value));
    return;
  }
  out.push_back(static_cast<char>(flags | max_prefix));
  value -= max_prefix;
  while (value >= 128) {
    out.push_back(static_cast<char>((value & 0x7f) | 0x80));
    value >>= 7;
  }
  out.push_back(static_cast<char>(value));
}

std::uint64_t hpack_decode_integer(std::string_view& in, int prefix_bits) {
  if (in.empty()) throw NetError(NetErrc::Malformed, "truncated integer");
  const std::uint64_t max_prefix = (1u << prefix_bits) - 1;
  std::uint64_t value = static_cast<unsigned char>(in.front()) & max_prefix;
  in.remove_prefix(1);
  if (value < max_prefix) return value;
  int shift = 0;
  for (;;) {
    if (in.empty()) throw NetError(NetErrc::Malformed, "truncated integer");
    auto b = static_cast<unsigned char>(in.front());
    in.remove_prefix(1);
    if (shift > 56) throw NetError(NetErrc::Malformed, "integer overflow");
    value += static_cast<std::uint64_t>(b & 0x7f) << shift;
    shift += 7;
    if ((b & 0x80) == 0) return value;
  }
}

void HpackDynamicTable::add(std::string name, std::string value) {
  std::size_t entry = name.size() + value.size() + kEntryOverhead;
  if (entry > max_size_) {
    entries_.clear();
    size_ = 0;
    return;
  }
  evict_to(max_size_ - entry);
  size_ += entry;
  entries_.emplace_front(std::move(name), std::move(value));
}

void HpackDynamicTable::set_max_size(std::size_t max_size) {
  max_size_ = max_size;
  evict_to(max_size_);
}

void HpackDynamicTable::evict_to(std::size_t limit) {
  while (size_ > limit && !entries_.empty()) {
    const auto& back = entries_.back();
    size_ -= back.first.size() + back.second.size() + kEntryOverhead;
    entries_.pop_back();
  }
}

namespace {

void encode_string(std::string& out, std::string_view s) {
  std::size_t huff = huffman_encoded_size(s);
  if (huff < s.size()) {
    hpack_encode_integer(out, huff, 7, 0x80);
    out += huffman_encode(s);
  } else {
    hpack_encode_integer(out, s.size(), 7, 0x00);
    out += s;
  }
}

bool never_index(std::string_view name) {
  return name == "authorization" || name == "cookie" || name == "set-cookie" || name == "proxy-authorization";
}

}  // namespace

void HpackEncoder::set_peer_max_size(std::size_t n) {
  std::size_t use = std::min<std::size_t>(n, 4096);
  if (use != table_.max_size()) {
    table_.set_max_size(use);
    pending_size_update_ = use;
  }
}

std::string HpackEncoder::encode(const HeaderList& headers) {
  std::string out;
  if (pending_size_update_) {
    hpack_encode_integer(out, *pending_size_update_, 5, 0x20);
    pending_size_update_.reset();
  }
  for (const auto& [name, value] : headers) {
    std::size_t full_index = 0, name_index = 0;
    for (std::size_t i = 0; i < hpack_tables::kStaticTable.size(); ++i) {
      const auto& e = hpack_tables::kStaticTable[i];
      if (name == e.name) {
        if (name_index == 0) name_index = i + 1;
        if (value == e.value) {
          full_index = i + 1;
          break;
        }
      }
    }
    if (full_index == 0) {
      for (std::size_t i = 0; i < table_.count(); ++i) {
        const auto& e = table_.at(i);
        if (e.first == name) {
          if (name_index == 0) name_index = hpack_tables::kStaticTable.size() + i + 1;
          if (e.second == value) {
            full_index = hpack_tables::kStaticTable.size() + i + 1;
            break;
          }
        }
      }
    }
    if (full_index != 0) {
      hpack_encode_integer(out, full_index, 7, 0x80);
      continue;
    }
    if (never_index(name)) {
      hpack_encode_integer(out, name_index, 4, 0x10);
    } else {
      hpack_encode_integer(out, name_index, 6, 0x40);
    }
    if (name_index == 0) encode_string(out, name);
    encode_string(out, value);
    if (!never_index(name)) table_.add(name, value);
  }
  return out;
}

std::pair<std::string, std::string> HpackDecoder::lookup(std::uint64_t index) const {
  if (index == 0) throw NetError(NetErrc::Malformed, "hpack index 0");
  if (index <= hpack_tables::kStaticTable.size()) {
    const auto& e = hpack_tables::kStaticTable[index - 1];
    return {e.name, e.value};
  }
  std::uint64_t dyn = index - hpack_tables::kStaticTable.size() - 1;
  if (dyn >= table_.count()) throw NetError(NetErrc::Malformed, "hpack index out of range");
  return table_.at(dyn);
}

std::string HpackDecoder::read_string(std::string_view& in) {
  if (in.empty()) throw NetError(NetErrc::Malformed, "truncated string");
  bool huff = (static_cast<unsigned char>(in.front()) & 0x80) != 0;
  std::uint64_t len = hpack_decode_integer(in, 7);
  if (len > in.size()) throw NetError(NetErrc::Malformed, "truncated string");
  std::string_view raw = in.substr(0, len);
  in.remove_prefix(len);
  return huff ? huffman_decode(raw) : std::string(raw);
}

HeaderList HpackDecoder::decode(std::string_view in) {
  HeaderList out;
  bool seen_field = false;
  while (!in.empty()) {
    auto b = static_cast<unsigned char>(in.front());
    if (b & 0x80) {
      out.push_back(lookup(hpack_decode_integer(in, 7)));
      seen_field = true;
    } else if ((b & 0xc0) == 0x40) {
      std::uint64_t idx = hpack_decode_integer(in, 6);
      std::string name = idx ? lookup(idx).first : read_string(in);
      std::string value = read_string(in);
      table_.add(name, value);
      out.emplace_back(std::move(name), std::move(value));
      seen_field = true;
    } else if ((b & 0xe0) == 0x20) {
      if (seen_field) throw NetError(NetErrc::Malformed, "table size update after field");
      std::uint64_t size = hpack_decode_integer(in, 5);
      if (size > protocol_max_) throw NetError(NetErrc::Malformed, "table size above limit");
      table_.set_max_size(static_cast<std::size_t>(size));
    } else {
      // Literal without indexing (0000) or never indexed (0001).
      std::uint64_t idx = hpack_decode_integer(in, 4);
      std::string name = idx ? lookup(idx).first : read_string(in);
      std::string value = read_string(in);
      out.emplace_back(std::move(name), std::move(value));
      seen_field = true;
    }
  }
  return out;
}

}  // namespace h2scope::http
