#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <map>
#include <vector>

#include "qgnn/quantcodec/codec.hpp"
#include "qgnn/quantcodec/quant.hpp"
#include "qgnn/quantcodec/rng.hpp"

using namespace qgnn;

TEST_CASE("rng streams are pure functions of seed and coordinates") {
  RngStream a(42);
  RngStream b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

  RngStream base(7);
  RngStream f1 = base.fork({3, 9});
  RngStream f2 = base.fork(3).fork(9);
  for (int i = 0; i < 20; ++i) REQUIRE(f1.next_u64() == f2.next_u64());

  // fork is const: drawing from the parent first must not change the child.
  RngStream p1(11), p2(11);
  (void)p1.next_u64();
  RngStream c1 = p1.fork(5);
  RngStream c2 = p2.fork(5);
  REQUIRE(c1.next_u64() == c2.next_u64());

  // Different coordinates give different streams.
  RngStream d1 = base.fork(1);
  RngStream d2 = base.fork(2);
  REQUIRE(d1.next_u64() != d2.next_u64());
}

TEST_CASE("rng uniform draws land in range with sane moments") {
  RngStream r(123);
  double sum = 0.0, sumsq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.next_double();
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  REQUIRE(std::abs(mean - 0.5) < 0.005);
  REQUIRE(std::abs(var - 1.0 / 12.0) < 0.005);

  for (int i = 0; i < 10000; ++i) {
    const uint64_t k = r.next_below(7);
    REQUIRE(k < 7);
  }
}

TEST_CASE("pack lays codes out LSB first") {
  const std::vector<uint32_t> c2{3, 0, 1, 2};
  REQUIRE(pack(c2, 2) == std::vector<uint8_t>{0x93});

  const std::vector<uint32_t> c4{0xA, 0x3, 0xF};
  REQUIRE(pack(c4, 4) == std::vector<uint8_t>{0x3A, 0x0F});

  const std::vector<uint32_t> c8{7, 255};
  REQUIRE(pack(c8, 8) == std::vector<uint8_t>{0x07, 0xFF});

  // Partial trailing byte: 3 two-bit codes fit in one byte.
  const std::vector<uint32_t> c2b{1, 2, 3};
  REQUIRE(pack(c2b, 2) == std::vector<uint8_t>{static_cast<uint8_t>(1 | (2 << 2) | (3 << 4))});
}

TEST_CASE("pack and unpack reject bad arguments") {
  const std::vector<uint32_t> codes{1, 2};
  REQUIRE_THROWS_AS(pack(codes, 3), std::invalid_argument);
  REQUIRE_THROWS_AS(pack(std::vector<uint32_t>{4}, 2), std::invalid_argument);
  REQUIRE_THROWS_AS(pack(std::vector<uint32_t>{16}, 4), std::invalid_argument);

  const std::vector<uint8_t> bytes{0x00, 0x00};
  REQUIRE_THROWS_AS(unpack(bytes, 3, 2), std::invalid_argument);
  REQUIRE_THROWS_AS(unpack(bytes, 8, 3), DecodeError);
  REQUIRE_THROWS_AS(unpack(bytes, 2, 9), DecodeError);
}

TEST_CASE("pack then unpack is the identity on random code vectors") {
  RngStream r(99);
  for (int b : {2, 4, 8}) {
    const uint32_t levels = (1u << b) - 1;
    for (int trial = 0; trial < 2000; ++trial) {
      const std::size_t n = 1 + r.next_below(40);
      std::vector<uint32_t> codes(n);
      for (auto& c : codes) c = static_cast<uint32_t>(r.next_below(levels + 1));
      const auto bytes = pack(codes, b);
      REQUIRE(bytes.size() == (n * static_cast<std::size_t>(b) + 7) / 8);
      REQUIRE(unpack(bytes, b, n) == codes);
    }
  }
}

TEST_CASE("quantize on the integer lattice is exact") {
  const std::vector<double> h{0.0, 1.0, 2.0, 3.0};
  RngStream r(1);
  const QuantizedChunk c = quantize(h, 2, r);
  REQUIRE(c.zero_point == 0.0);
  REQUIRE(c.scale == 1.0);
  REQUIRE(c.count == 4);
  REQUIRE(unpack(c.payload, 2, 4) == std::vector<uint32_t>{0, 1, 2, 3});
  REQUIRE(dequantize(c) == h);
}

TEST_CASE("constant vectors quantize losslessly with zero scale") {
  const std::vector<double> h{5.0, 5.0, 5.0};
  for (int b : {2, 4, 8}) {
    RngStream r(2);
    const QuantizedChunk c = quantize(h, b, r);
    REQUIRE(c.scale == 0.0);
    REQUIRE(c.zero_point == 5.0);
    REQUIRE(unpack(c.payload, b, 3) == std::vector<uint32_t>{0, 0, 0});
    REQUIRE(dequantize(c) == h);
  }
}

TEST_CASE("quantize rejects bad inputs") {
  RngStream r(3);
  REQUIRE_THROWS_AS(quantize(std::vector<double>{}, 4, r), std::invalid_argument);
  REQUIRE_THROWS_AS(quantize(std::vector<double>{1.0}, 5, r), std::invalid_argument);
  const std::vector<double> with_nan{0.0, std::nan("")};
  REQUIRE_THROWS_AS(quantize(with_nan, 4, r), std::invalid_argument);
  const std::vector<double> with_inf{0.0, std::numeric_limits<double>::infinity()};
  REQUIRE_THROWS_AS(quantize(with_inf, 4, r), std::invalid_argument);
}

TEST_CASE("dequantized values stay within one step of the input") {
  RngStream r(4);
  for (int b : {2, 4, 8}) {
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> h(32);
      for (auto& x : h) x = r.next_gaussian() * 3.0 - 1.0;
      RngStream q = r.fork({static_cast<uint64_t>(b), static_cast<uint64_t>(trial)});
      const QuantizedChunk c = quantize(h, b, q);
      const auto back = dequantize(c);
      const double slack = c.scale * 1e-9;
      for (std::size_t i = 0; i < h.size(); ++i) {
        REQUIRE(std::abs(back[i] - h[i]) <= c.scale + slack);
      }
    }
  }
}

TEST_CASE("stochastic rounding is unbiased per element") {
  const std::size_t dim = 64;
  RngStream setup(5);
  std::vector<double> h(dim);
  for (auto& x : h) x = setup.next_double();

  for (int b : {2, 4, 8}) {
    const int trials = 20000;
    std::vector<double> sum(dim, 0.0);
    double scale = 0.0;
    RngStream r(6);
    for (int t = 0; t < trials; ++t) {
      RngStream q = r.fork({static_cast<uint64_t>(b), static_cast<uint64_t>(t)});
      const QuantizedChunk c = quantize(h, b, q);
      scale = c.scale;
      const auto back = dequantize(c);
      for (std::size_t i = 0; i < dim; ++i) sum[i] += back[i];
    }
    for (std::size_t i = 0; i < dim; ++i) {
      const double mean = sum[i] / trials;
      // Bernoulli rounding noise has sd <= scale/2 per draw.
      const double se = 0.5 * scale / std::sqrt(static_cast<double>(trials));
      REQUIRE(std::abs(mean - h[i]) <= 4.0 * se + 1e-12);
    }
  }
}

TEST_CASE("per-vector variance tracks both the exact and the uniform-fraction model") {
  // Vector built so the extremes sit exactly on the lattice (scale is then
  // exact) and interior fractional parts are stratified over (0, 1).
  const std::size_t dim = 64;
  const int b = 4;
  const double levels = 15.0;
  std::vector<double> h(dim);
  h[0] = 0.0;
  h[1] = levels;
  RngStream setup(7);
  for (std::size_t i = 2; i < dim; ++i) {
    const double frac = (static_cast<double>(i) - 1.5) / (static_cast<double>(dim) - 2.0);
    h[i] = static_cast<double>(setup.next_below(14)) + frac;
  }

  double expected = 0.0;  // sum over elements of f(1-f) * S^2 with S = 1
  for (std::size_t i = 0; i < dim; ++i) {
    const double f = h[i] - std::floor(h[i]);
    expected += f * (1.0 - f);
  }

  const int trials = 20000;
  std::vector<double> sum(dim, 0.0), sumsq(dim, 0.0);
  RngStream r(8);
  for (int t = 0; t < trials; ++t) {
    RngStream q = r.fork(static_cast<uint64_t>(t));
    const auto back = dequantize(quantize(h, b, q));
    for (std::size_t i = 0; i < dim; ++i) {
      sum[i] += back[i];
      sumsq[i] += back[i] * back[i];
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double mean = sum[i] / trials;
    total += (sumsq[i] - trials * mean * mean) / (trials - 1);
  }
  REQUIRE(total / expected > 0.95);
  REQUIRE(total / expected < 1.05);

  // The design-sheet approximation assumes uniform fractional parts.
  const double model = static_cast<double>(dim) * 1.0 / 6.0;
  REQUIRE(total / model > 0.90);
  REQUIRE(total / model < 1.10);
}

TEST_CASE("chunk wire format is byte exact") {
  QuantizedChunk c;
  c.bit_width = 4;
  c.count = 3;
  c.scale = 0.5;
  c.zero_point = -1.25;
  c.payload = pack(std::vector<uint32_t>{0xA, 0x3, 0xF}, 4);

  std::vector<uint8_t> wire;
  append_chunk(wire, c);
  REQUIRE(wire.size() == kChunkHeaderBytes + 2);
  REQUIRE(wire[0] == 4);
  uint64_t count = 0;
  std::memcpy(&count, wire.data() + 1, 8);
  REQUIRE(count == 3);
  double s = 0.0, z = 0.0;
  std::memcpy(&s, wire.data() + 9, 8);
  std::memcpy(&z, wire.data() + 17, 8);
  REQUIRE(s == 0.5);
  REQUIRE(z == -1.25);
  REQUIRE(wire[25] == 0x3A);
  REQUIRE(wire[26] == 0x0F);

  const QuantizedChunk back = parse_chunk(wire, 0);
  REQUIRE(back.bit_width == c.bit_width);
  REQUIRE(back.count == c.count);
  REQUIRE(back.scale == c.scale);
  REQUIRE(back.zero_point == c.zero_point);
  REQUIRE(back.payload == c.payload);

  REQUIRE(chunk_wire_bytes(10, 8) == 35);
  REQUIRE(chunk_wire_bytes(64, 2) == 25 + 16);
  REQUIRE(chunk_wire_bytes(5, 4) == 25 + 3);
}

TEST_CASE("parse_chunk rejects corrupt wire bytes") {
  QuantizedChunk c;
  c.bit_width = 2;
  c.count = 4;
  c.scale = 1.0;
  c.zero_point = 0.0;
  c.payload = pack(std::vector<uint32_t>{3, 0, 1, 2}, 2);
  std::vector<uint8_t> wire;
  append_chunk(wire, c);

  std::vector<uint8_t> short_header(wire.begin(), wire.begin() + 10);
  REQUIRE_THROWS_AS(parse_chunk(short_header, 0), DecodeError);

  std::vector<uint8_t> short_payload(wire.begin(), wire.end() - 1);
  REQUIRE_THROWS_AS(parse_chunk(short_payload, 0), DecodeError);

  std::vector<uint8_t> bad_width = wire;
  bad_width[0] = 3;
  REQUIRE_THROWS_AS(parse_chunk(bad_width, 0), DecodeError);
}

namespace {

std::vector<std::vector<double>> random_vectors(RngStream& r, std::size_t n) {
  std::vector<std::vector<double>> out(n);
  for (auto& v : out) {
    v.resize(2 + r.next_below(30));
    for (auto& x : v) x = r.next_gaussian() * 2.0;
  }
  return out;
}

}  // namespace

TEST_CASE("message sets are grouped by ascending bit width") {
  RngStream r(9);
  auto store = random_vectors(r, 4);
  std::vector<MessageView> msgs{
      {10, store[0]}, {11, store[1]}, {12, store[2]}, {13, store[3]}};
  std::map<uint32_t, int> plan{{10, 8}, {11, 2}, {12, 4}, {13, 2}};
  const auto bits_of = [&](uint32_t id) { return plan.at(id); };

  const EncodedSet set = encode_message_set(msgs, bits_of, r.fork(1));
  REQUIRE(set.index.entries.size() == 4);
  REQUIRE(set.index.entries[0].id == 11);
  REQUIRE(set.index.entries[1].id == 13);
  REQUIRE(set.index.entries[2].id == 12);
  REQUIRE(set.index.entries[3].id == 10);
  REQUIRE(set.index.total_bytes == set.bytes.size());

  std::size_t expect = 0;
  for (const auto& e : set.index.entries) {
    REQUIRE(e.offset == expect);
    expect += chunk_wire_bytes(e.dim, e.bit_width);
  }
  REQUIRE(expect == set.bytes.size());
}

TEST_CASE("single 8-bit message is one chunk with header") {
  std::vector<double> v{1.0, 2.0, 3.0, 4.0, 5.0};
  std::vector<MessageView> msgs{{0, v}};
  const EncodedSet set = encode_message_set(msgs, [](uint32_t) { return 8; }, RngStream(10));
  REQUIRE(set.bytes.size() == kChunkHeaderBytes + 5);
  REQUIRE(set.index.entries.size() == 1);
}

TEST_CASE("message set decode matches per-message quantization exactly") {
  RngStream r(11);
  auto store = random_vectors(r, 50);
  std::vector<MessageView> msgs;
  std::map<uint32_t, int> plan;
  const int widths[3] = {2, 4, 8};
  for (std::size_t i = 0; i < store.size(); ++i) {
    const uint32_t id = static_cast<uint32_t>(7 * i + 3);
    msgs.push_back({id, store[i]});
    plan[id] = widths[i % 3];
  }
  const auto bits_of = [&](uint32_t id) { return plan.at(id); };
  const RngStream coord = RngStream(12).fork({4, 2, 0});

  const EncodedSet set = encode_message_set(msgs, bits_of, coord);
  const auto decoded = decode_message_set(set.bytes, set.index);
  REQUIRE(decoded.size() == msgs.size());

  for (const auto& d : decoded) {
    const auto it = std::find_if(msgs.begin(), msgs.end(),
                                 [&](const MessageView& m) { return m.id == d.id; });
    REQUIRE(it != msgs.end());
    RngStream sub = coord.fork(d.id);
    const QuantizedChunk direct = quantize(it->values, plan.at(d.id), sub);
    REQUIRE(d.values == dequantize(direct));
  }
}

TEST_CASE("encode draws depend on message id, not caller order") {
  RngStream r(13);
  auto store = random_vectors(r, 6);
  std::vector<MessageView> fwd, rev;
  std::map<uint32_t, int> plan;
  for (std::size_t i = 0; i < store.size(); ++i) {
    fwd.push_back({static_cast<uint32_t>(i), store[i]});
    plan[static_cast<uint32_t>(i)] = (i < 3) ? 2 : 4;
  }
  rev.assign(fwd.rbegin(), fwd.rend());
  const auto bits_of = [&](uint32_t id) { return plan.at(id); };
  const RngStream coord = RngStream(14);

  const auto a = encode_message_set(fwd, bits_of, coord);
  const auto b = encode_message_set(rev, bits_of, coord);

  std::map<uint32_t, std::vector<double>> va, vb;
  for (const auto& d : decode_message_set(a.bytes, a.index)) va[d.id] = d.values;
  for (const auto& d : decode_message_set(b.bytes, b.index)) vb[d.id] = d.values;
  REQUIRE(va == vb);

  // Same caller order twice is bit identical.
  const auto c = encode_message_set(fwd, bits_of, coord);
  REQUIRE(a.bytes == c.bytes);
}

TEST_CASE("message set encode rejects bad plans") {
  std::vector<double> v{1.0, 2.0};
  std::vector<MessageView> dup{{5, v}, {5, v}};
  REQUIRE_THROWS_AS(encode_message_set(dup, [](uint32_t) { return 8; }, RngStream(15)),
                    std::invalid_argument);
  std::vector<MessageView> one{{5, v}};
  REQUIRE_THROWS_AS(encode_message_set(one, [](uint32_t) { return 5; }, RngStream(15)),
                    std::invalid_argument);
}

TEST_CASE("message set decode validates bytes against the index") {
  RngStream r(16);
  auto store = random_vectors(r, 3);
  std::vector<MessageView> msgs{{1, store[0]}, {2, store[1]}, {3, store[2]}};
  const EncodedSet set = encode_message_set(msgs, [](uint32_t) { return 4; }, RngStream(17));

  RetrievalIndex wrong_total = set.index;
  wrong_total.total_bytes += 1;
  REQUIRE_THROWS_AS(decode_message_set(set.bytes, wrong_total), DecodeError);

  RetrievalIndex gap = set.index;
  gap.entries[1].offset += 1;
  REQUIRE_THROWS_AS(decode_message_set(set.bytes, gap), DecodeError);

  RetrievalIndex wrong_dim = set.index;
  wrong_dim.entries[0].dim += 1;
  REQUIRE_THROWS_AS(decode_message_set(set.bytes, wrong_dim), DecodeError);

  RetrievalIndex wrong_width = set.index;
  wrong_width.entries[0].bit_width = 8;
  REQUIRE_THROWS_AS(decode_message_set(set.bytes, wrong_width), DecodeError);

  std::vector<uint8_t> truncated(set.bytes.begin(), set.bytes.end() - 1);
  RetrievalIndex short_total = set.index;
  short_total.total_bytes -= 1;
  REQUIRE_THROWS_AS(decode_message_set(truncated, short_total), DecodeError);

  // Index that stops before the end of the byte array.
  RetrievalIndex missing_tail = set.index;
  missing_tail.entries.pop_back();
  REQUIRE_THROWS_AS(decode_message_set(set.bytes, missing_tail), DecodeError);
}
