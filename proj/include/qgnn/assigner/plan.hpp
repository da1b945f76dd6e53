#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "qgnn/assigner/trace.hpp"
#include "qgnn/quantcodec/quant.hpp"

namespace qgnn {

// Messages sharing one assigned bit width. ids/dims are parallel arrays in
// descending-beta order (the grouping order), beta is the group's summed
// variance weight.
struct PlanGroup {
  std::vector<uint32_t> ids;
  std::vector<uint64_t> dims;
  double beta = 0.0;
  int bits = 8;

  uint64_t dim_sum() const { return std::accumulate(dims.begin(), dims.end(), uint64_t{0}); }

  bool operator==(const PlanGroup&) const = default;
};

struct PlanPair {
  uint32_t src = 0;
  uint32_t dst = 0;
  std::vector<PlanGroup> groups;

  bool operator==(const PlanPair&) const = default;
};

struct InstancePlan {
  std::vector<PlanPair> pairs;  // ascending by (src, dst)
  double objective = 0.0;
  double variance_term = 0.0;
  double z_seconds = 0.0;

  bool operator==(const InstancePlan&) const = default;
};

// Full bit-width assignment shared by all devices. version increments on
// every re-solve; exchanges stamp payloads with it to catch skew.
struct BitWidthPlan {
  uint64_t version = 0;
  std::map<TensorKey, InstancePlan> instances;

  bool operator==(const BitWidthPlan&) const = default;

  // flat per-message lookup, built once after solving
  struct Lookup {
    // key -> (src, dst) -> sorted (id, bits, dim)
    std::map<TensorKey, std::map<std::pair<uint32_t, uint32_t>,
                                 std::vector<std::tuple<uint32_t, int, uint64_t>>>>
        by_pair;

    int bits_for(TensorKey key, uint32_t src, uint32_t dst, uint32_t id) const {
      const auto ki = by_pair.find(key);
      if (ki == by_pair.end()) throw std::invalid_argument("plan: unknown tensor key");
      const auto pi = ki->second.find({src, dst});
      if (pi == ki->second.end()) throw std::invalid_argument("plan: unknown device pair");
      const auto& v = pi->second;
      auto it = std::lower_bound(v.begin(), v.end(), id, [](const auto& t, uint32_t x) {
        return std::get<0>(t) < x;
      });
      if (it == v.end() || std::get<0>(*it) != id)
        throw std::invalid_argument("plan: unknown message id");
      return std::get<1>(*it);
    }
  };

  Lookup make_lookup() const {
    Lookup lk;
    for (const auto& [key, inst] : instances) {
      for (const PlanPair& pp : inst.pairs) {
        auto& v = lk.by_pair[key][{pp.src, pp.dst}];
        for (const PlanGroup& g : pp.groups)
          for (std::size_t i = 0; i < g.ids.size(); ++i)
            v.emplace_back(g.ids[i], g.bits, g.dims[i]);
        std::sort(v.begin(), v.end());
      }
    }
    return lk;
  }

  // wire bytes of the encoded message set src -> dst for one tensor key
  uint64_t pair_wire_bytes(TensorKey key, uint32_t src, uint32_t dst) const {
    const auto ki = instances.find(key);
    if (ki == instances.end()) throw std::invalid_argument("plan: unknown tensor key");
    uint64_t total = 0;
    for (const PlanPair& pp : ki->second.pairs) {
      if (pp.src != src || pp.dst != dst) continue;
      for (const PlanGroup& g : pp.groups)
        for (uint64_t d : g.dims) total += chunk_wire_bytes(d, g.bits);
    }
    return total;
  }
};

// Builds the all-8-bit plan used before any statistics exist.
inline BitWidthPlan initial_plan(const std::map<TensorKey, InstanceStats>& stats) {
  BitWidthPlan plan;
  plan.version = 1;
  for (const auto& [key, inst] : stats) {
    InstancePlan ip;
    for (const PairStats& ps : inst.pairs) {
      PlanPair pp;
      pp.src = ps.src;
      pp.dst = ps.dst;
      PlanGroup g;
      for (const MessageStats& m : ps.messages) {
        g.ids.push_back(m.id);
        g.dims.push_back(m.dim);
        g.beta += compute_beta(m);
      }
      g.bits = 8;
      if (!g.ids.empty()) pp.groups.push_back(std::move(g));
      ip.pairs.push_back(std::move(pp));
    }
    plan.instances[key] = std::move(ip);
  }
  return plan;
}

// Receive-buffer negotiation: every device derives, from its own plan copy,
// the byte count it expects from each source for each tensor key. Disagreeing
// plan versions or contents abort the protocol.
inline std::vector<std::map<TensorKey, std::vector<uint64_t>>> negotiate_buffers(
    const std::vector<BitWidthPlan>& device_plans) {
  const std::size_t n = device_plans.size();
  if (n == 0) throw std::invalid_argument("negotiate_buffers: no devices");
  for (std::size_t d = 1; d < n; ++d) {
    if (device_plans[d].version != device_plans[0].version)
      throw ProtocolError("negotiate_buffers: plan version skew");
    if (!(device_plans[d] == device_plans[0]))
      throw ProtocolError("negotiate_buffers: plan contents disagree");
  }
  std::vector<std::map<TensorKey, std::vector<uint64_t>>> out(n);
  for (std::size_t d = 0; d < n; ++d) {
    for (const auto& [key, inst] : device_plans[d].instances) {
      auto& per_src = out[d][key];
      per_src.assign(n, 0);
      for (const PlanPair& pp : inst.pairs) {
        if (pp.dst != d) continue;
        for (const PlanGroup& g : pp.groups)
          for (uint64_t dim : g.dims) per_src[pp.src] += chunk_wire_bytes(dim, g.bits);
      }
    }
  }
  return out;
}

}  // namespace qgnn
