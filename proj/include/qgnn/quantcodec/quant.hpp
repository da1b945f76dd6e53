#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "qgnn/common/errors.hpp"
#include "qgnn/quantcodec/rng.hpp"

namespace qgnn {

inline bool is_valid_bit_width(int b) { return b == 2 || b == 4 || b == 8; }

inline std::size_t packed_bytes(std::size_t count, int b) {
  return (count * static_cast<std::size_t>(b) + 7) / 8;
}

// One quantized vector: codes are offsets from zero_point in units of scale.
// scale == 0 means the input was constant and the payload is all zeros.
struct QuantizedChunk {
  uint8_t bit_width = 8;
  uint64_t count = 0;
  double scale = 0.0;
  double zero_point = 0.0;
  std::vector<uint8_t> payload;
};

// Codes are laid out LSB first: code i occupies bits [i*b, (i+1)*b) of the
// little-endian byte stream.
inline std::vector<uint8_t> pack(std::span<const uint32_t> codes, int b) {
  if (!is_valid_bit_width(b)) throw std::invalid_argument("pack: bit width must be 2, 4, or 8");
  const uint32_t maxcode = (1u << b) - 1;
  std::vector<uint8_t> bytes(packed_bytes(codes.size(), b), 0);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] > maxcode) throw std::invalid_argument("pack: code exceeds bit width");
    const std::size_t bit = i * static_cast<std::size_t>(b);
    bytes[bit / 8] |= static_cast<uint8_t>(codes[i] << (bit % 8));
  }
  return bytes;
}

inline std::vector<uint32_t> unpack(std::span<const uint8_t> bytes, int b, std::size_t count) {
  if (!is_valid_bit_width(b)) throw std::invalid_argument("unpack: bit width must be 2, 4, or 8");
  if (bytes.size() != packed_bytes(count, b)) throw DecodeError("unpack: payload size mismatch");
  std::vector<uint32_t> codes(count);
  const uint32_t mask = (1u << b) - 1;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t bit = i * static_cast<std::size_t>(b);
    codes[i] = (bytes[bit / 8] >> (bit % 8)) & mask;
  }
  return codes;
}

// Stochastic uniform quantization: x = (h - min) / scale is rounded down with
// probability 1 - frac(x) and up with probability frac(x), so the dequantized
// value is unbiased. Expected total variance for a vector whose scaled
// fractional parts are uniform is count * scale^2 / 6.
inline QuantizedChunk quantize(std::span<const double> h, int b, RngStream& rng) {
  if (!is_valid_bit_width(b)) throw std::invalid_argument("quantize: bit width must be 2, 4, or 8");
  if (h.empty()) throw std::invalid_argument("quantize: empty input");
  double lo = h[0], hi = h[0];
  for (double x : h) {
    if (!std::isfinite(x)) throw std::invalid_argument("quantize: non-finite input");
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  QuantizedChunk chunk;
  chunk.bit_width = static_cast<uint8_t>(b);
  chunk.count = h.size();
  chunk.zero_point = lo;
  const uint32_t levels = (1u << b) - 1;
  if (hi == lo) {
    chunk.scale = 0.0;
    chunk.payload.assign(packed_bytes(h.size(), b), 0);
    return chunk;
  }
  chunk.scale = (hi - lo) / static_cast<double>(levels);
  std::vector<uint32_t> codes(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double x = (h[i] - lo) / chunk.scale;
    double base = std::floor(x);
    const double frac = x - base;
    if (rng.next_double() < frac) base += 1.0;
    codes[i] = static_cast<uint32_t>(std::min(base, static_cast<double>(levels)));
  }
  chunk.payload = pack(codes, b);
  return chunk;
}

inline std::vector<double> dequantize(const QuantizedChunk& chunk) {
  if (!is_valid_bit_width(chunk.bit_width)) throw DecodeError("dequantize: bad bit width");
  const auto codes = unpack(chunk.payload, chunk.bit_width, chunk.count);
  std::vector<double> h(chunk.count);
  for (std::size_t i = 0; i < chunk.count; ++i)
    h[i] = static_cast<double>(codes[i]) * chunk.scale + chunk.zero_point;
  return h;
}

// Chunk wire layout: bit_width u8, count u64, scale f64, zero_point f64, then
// the packed payload. All multi-byte fields little endian.
inline constexpr std::size_t kChunkHeaderBytes = 25;

inline std::size_t chunk_wire_bytes(std::size_t count, int b) {
  return kChunkHeaderBytes + packed_bytes(count, b);
}

inline void append_chunk(std::vector<uint8_t>& out, const QuantizedChunk& chunk) {
  out.push_back(chunk.bit_width);
  const auto put = [&out](const void* p, std::size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  };
  put(&chunk.count, 8);
  put(&chunk.scale, 8);
  put(&chunk.zero_point, 8);
  out.insert(out.end(), chunk.payload.begin(), chunk.payload.end());
}

inline QuantizedChunk parse_chunk(std::span<const uint8_t> bytes, std::size_t offset) {
  if (offset + kChunkHeaderBytes > bytes.size()) throw DecodeError("chunk: truncated header");
  QuantizedChunk chunk;
  chunk.bit_width = bytes[offset];
  if (!is_valid_bit_width(chunk.bit_width)) throw DecodeError("chunk: bad bit width");
  std::memcpy(&chunk.count, bytes.data() + offset + 1, 8);
  std::memcpy(&chunk.scale, bytes.data() + offset + 9, 8);
  std::memcpy(&chunk.zero_point, bytes.data() + offset + 17, 8);
  const std::size_t n = packed_bytes(chunk.count, chunk.bit_width);
  if (offset + kChunkHeaderBytes + n > bytes.size()) throw DecodeError("chunk: truncated payload");
  chunk.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset + kChunkHeaderBytes),
                       bytes.begin() + static_cast<std::ptrdiff_t>(offset + kChunkHeaderBytes + n));
  return chunk;
}

}  // namespace qgnn
