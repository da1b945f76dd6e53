#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "qgnn/commsim/cost_model.hpp"
#include "qgnn/common/errors.hpp"
#include "qgnn/quantcodec/codec.hpp"

namespace qgnn {

// One device-to-device transfer. Quantized payloads carry a retrieval index;
// full-precision payloads are raw little-endian doubles in agreed node order
// and leave index empty.
struct ExchangePayload {
  uint32_t source = 0;
  uint32_t target = 0;
  uint64_t plan_version = 0;
  std::vector<uint8_t> bytes;
  std::optional<RetrievalIndex> index;

  bool empty() const { return bytes.empty(); }
};

inline uint32_t ring_target(uint32_t device, uint32_t round, uint32_t n) {
  return (device + round) % n;
}

inline uint32_t ring_source(uint32_t device, uint32_t round, uint32_t n) {
  return (device + n - round % n) % n;
}

struct RingResult {
  // received[dst][src]: payload delivered to dst from src (empty slots allowed)
  std::vector<std::vector<ExchangePayload>> received;
  std::vector<double> round_seconds;  // n - 1 entries
  double total_seconds = 0.0;
};

// Synchronous all-to-all over n-1 ring rounds; in round r every device d
// sends to (d + r) mod n. A round lasts as long as its slowest active pair;
// a pair is active when it has bytes to move or comm_set marks it, and an
// active empty transfer still pays the pair's fixed gamma cost.
inline RingResult ring_all2all(std::vector<std::vector<ExchangePayload>> outbox,
                               const CostModel& cm,
                               const std::vector<std::vector<uint8_t>>& comm_set) {
  const std::size_t n = cm.num_devices;
  if (outbox.size() != n) throw ProtocolError("ring_all2all: outbox must have one row per device");
  if (comm_set.size() != n) throw ProtocolError("ring_all2all: comm_set must have one row per device");
  for (std::size_t d = 0; d < n; ++d) {
    if (outbox[d].size() != n || comm_set[d].size() != n)
      throw ProtocolError("ring_all2all: payload matrix must be N x N");
    for (std::size_t t = 0; t < n; ++t) {
      const ExchangePayload& p = outbox[d][t];
      if (!p.empty() && (p.source != d || p.target != t))
        throw ProtocolError("ring_all2all: payload routed to wrong slot");
    }
  }

  RingResult res;
  res.received.assign(n, std::vector<ExchangePayload>(n));
  for (uint32_t r = 1; r < n; ++r) {
    double round_t = 0.0;
    for (uint32_t d = 0; d < n; ++d) {
      const uint32_t t = ring_target(d, r, static_cast<uint32_t>(n));
      ExchangePayload& p = outbox[d][t];
      const bool active = !p.empty() || comm_set[d][t];
      if (!active) continue;
      round_t = std::max(round_t,
                         cm.transfer_seconds(d, t, 8.0 * static_cast<double>(p.bytes.size())));
      res.received[t][d] = std::move(p);
    }
    res.round_seconds.push_back(round_t);
    res.total_seconds += round_t;
  }
  return res;
}

}  // namespace qgnn
