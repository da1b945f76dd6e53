#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "qgnn/quantcodec/quant.hpp"

namespace qgnn {

// A message is one node's vector addressed to one device.
struct MessageView {
  uint32_t id = 0;  // node id
  std::span<const double> values;
};

struct RetrievalEntry {
  uint32_t id = 0;
  uint8_t bit_width = 0;
  uint64_t offset = 0;  // byte offset of the chunk
  uint64_t dim = 0;
};

// Index into a concatenated byte array; entries appear in wire order.
struct RetrievalIndex {
  std::vector<RetrievalEntry> entries;
  uint64_t total_bytes = 0;
};

struct EncodedSet {
  std::vector<uint8_t> bytes;
  RetrievalIndex index;
};

// Quantizes a batch of messages into one byte array. Wire order: bit-width
// groups ascending (2, 4, 8), and the caller's order within each group. Each
// message gets its own rng substream keyed by id, so encode order does not
// affect the draws.
inline EncodedSet encode_message_set(std::span<const MessageView> messages,
                                     const std::function<int(uint32_t)>& bits_of,
                                     const RngStream& rng) {
  std::vector<int> bits(messages.size());
  std::vector<uint32_t> ids;
  ids.reserve(messages.size());
  for (std::size_t i = 0; i < messages.size(); ++i) {
    bits[i] = bits_of(messages[i].id);
    if (!is_valid_bit_width(bits[i]))
      throw std::invalid_argument("encode_message_set: bit width must be 2, 4, or 8");
    ids.push_back(messages[i].id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw std::invalid_argument("encode_message_set: duplicate message ids");

  EncodedSet set;
  for (int b : {2, 4, 8}) {
    for (std::size_t i = 0; i < messages.size(); ++i) {
      if (bits[i] != b) continue;
      const MessageView& m = messages[i];
      RngStream sub = rng.fork(m.id);
      QuantizedChunk chunk = quantize(m.values, b, sub);
      set.index.entries.push_back({m.id, static_cast<uint8_t>(b),
                                   static_cast<uint64_t>(set.bytes.size()),
                                   static_cast<uint64_t>(m.values.size())});
      append_chunk(set.bytes, chunk);
    }
  }
  set.index.total_bytes = set.bytes.size();
  return set;
}

struct DecodedMessage {
  uint32_t id = 0;
  std::vector<double> values;
};

// Inverse of encode_message_set; validates every chunk against the index.
inline std::vector<DecodedMessage> decode_message_set(std::span<const uint8_t> bytes,
                                                      const RetrievalIndex& index) {
  if (bytes.size() != index.total_bytes) throw DecodeError("message set: byte count mismatch");
  std::vector<DecodedMessage> out;
  out.reserve(index.entries.size());
  std::size_t expect = 0;
  for (const RetrievalEntry& e : index.entries) {
    if (e.offset != expect) throw DecodeError("message set: index offsets not contiguous");
    QuantizedChunk chunk = parse_chunk(bytes, e.offset);
    if (chunk.bit_width != e.bit_width || chunk.count != e.dim)
      throw DecodeError("message set: chunk disagrees with index");
    out.push_back({e.id, dequantize(chunk)});
    expect = e.offset + chunk_wire_bytes(chunk.count, chunk.bit_width);
  }
  if (expect != bytes.size()) throw DecodeError("message set: trailing bytes");
  return out;
}

}  // namespace qgnn
