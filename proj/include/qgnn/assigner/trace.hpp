#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "qgnn/common/errors.hpp"

namespace qgnn {

enum class Direction { kForward, kBackward };

// Identifies one exchanged tensor: forward keys carry layer inputs h^layer
// (layer 0 = raw features), backward keys carry gradients w.r.t. h^layer.
struct TensorKey {
  uint32_t layer = 0;
  Direction dir = Direction::kForward;

  auto operator<=>(const TensorKey&) const = default;
};

inline const char* dir_name(Direction d) {
  return d == Direction::kForward ? "fwd" : "bwd";
}

// Per-message statistics driving bit-width assignment. lo/hi are the observed
// value extrema over the current tracing window; sum_alpha_sq is the message's
// squared-coefficient weight on the consuming device (1 for backward partials,
// which are accumulated unweighted).
struct MessageStats {
  uint32_t id = 0;
  uint64_t dim = 0;
  double lo = 0.0;
  double hi = 0.0;
  double sum_alpha_sq = 0.0;

  bool operator==(const MessageStats&) const = default;
};

struct PairStats {
  uint32_t src = 0;
  uint32_t dst = 0;
  std::vector<MessageStats> messages;  // ascending by id

  bool operator==(const PairStats&) const = default;
};

// One (tensor, direction) assignment instance across all device pairs.
struct InstanceStats {
  std::vector<PairStats> pairs;  // ascending by (src, dst)

  bool operator==(const InstanceStats&) const = default;
};

inline void validate_stats(const InstanceStats& s) {
  for (const PairStats& p : s.pairs) {
    if (p.src == p.dst) throw std::invalid_argument("stats: src == dst");
    for (const MessageStats& m : p.messages) {
      if (m.dim == 0) throw std::invalid_argument("stats: zero dim");
      if (m.hi < m.lo) throw std::invalid_argument("stats: hi < lo");
      if (!(m.sum_alpha_sq > 0.0)) throw std::invalid_argument("stats: sum_alpha_sq must be > 0");
    }
  }
}

// Variance weight of a message; its gradient-variance contribution at bit
// width b is beta / (2^b - 1)^2.
inline double compute_beta(const MessageStats& m) {
  const double range = m.hi - m.lo;
  return m.sum_alpha_sq * static_cast<double>(m.dim) * range * range / 6.0;
}

// Running extrema tracker for one device's outgoing messages. Values are
// aligned with the agreed message order per (key, target device).
struct TraceWindow {
  std::vector<double> lo, hi;

  void reset(std::size_t n) {
    lo.assign(n, std::numeric_limits<double>::infinity());
    hi.assign(n, -std::numeric_limits<double>::infinity());
  }

  void update(std::size_t i, std::span<const double> values) {
    for (double v : values) {
      lo[i] = std::min(lo[i], v);
      hi[i] = std::max(hi[i], v);
    }
  }

  bool traced(std::size_t i) const { return hi[i] >= lo[i]; }
};

// All trace windows of one device: per tensor key, per target device.
struct TraceStore {
  std::map<TensorKey, std::vector<TraceWindow>> windows;

  TraceWindow& window(TensorKey key, std::size_t target) { return windows.at(key)[target]; }
};

}  // namespace qgnn
