#pragma once

#include <deque>
#include <numeric>
#include <vector>

#include "qgnn/graphcore/graph.hpp"
#include "qgnn/quantcodec/rng.hpp"

namespace qgnn {

// One device's share of the graph. owned/central/marginal are ascending node
// ids; remote_in[q] are nodes owned by q whose values this device consumes,
// remote_out[q] are owned nodes that device q consumes. A node is marginal
// iff it has a neighbor on another device.
struct Partition {
  uint32_t device_id = 0;
  std::vector<NodeId> owned;
  std::vector<NodeId> central;
  std::vector<NodeId> marginal;
  std::vector<std::vector<NodeId>> remote_in;
  std::vector<std::vector<NodeId>> remote_out;
};

// Per owned node, neighbors split into same-device and cross-device lists,
// CSR-aligned with Partition::owned.
struct LocalRemoteSplit {
  std::vector<std::size_t> local_ptr, remote_ptr;
  std::vector<NodeId> local_nbrs, remote_nbrs;

  std::span<const NodeId> local_of(std::size_t row) const {
    return {local_nbrs.data() + local_ptr[row], local_ptr[row + 1] - local_ptr[row]};
  }
  std::span<const NodeId> remote_of(std::size_t row) const {
    return {remote_nbrs.data() + remote_ptr[row], remote_ptr[row + 1] - remote_ptr[row]};
  }
};

inline std::vector<Partition> partitions_from_owner(const Graph& g,
                                                    const std::vector<uint32_t>& owner,
                                                    std::size_t n_parts) {
  if (owner.size() != g.num_nodes) throw std::invalid_argument("owner size mismatch");
  std::vector<Partition> parts(n_parts);
  for (std::size_t p = 0; p < n_parts; ++p) {
    parts[p].device_id = static_cast<uint32_t>(p);
    parts[p].remote_in.resize(n_parts);
    parts[p].remote_out.resize(n_parts);
  }
  for (NodeId v = 0; v < g.num_nodes; ++v) {
    if (owner[v] >= n_parts) throw std::invalid_argument("owner id out of range");
    parts[owner[v]].owned.push_back(v);
  }
  std::vector<std::vector<char>> is_marginal(n_parts);
  for (std::size_t p = 0; p < n_parts; ++p) is_marginal[p].assign(g.num_nodes, 0);
  std::vector<std::vector<std::vector<char>>> out_flag(n_parts);
  for (std::size_t p = 0; p < n_parts; ++p) {
    out_flag[p].assign(n_parts, {});
    for (std::size_t q = 0; q < n_parts; ++q) out_flag[p][q].assign(g.num_nodes, 0);
  }
  for (NodeId v = 0; v < g.num_nodes; ++v) {
    for (NodeId u : g.neighbors(v)) {
      if (owner[u] != owner[v]) {
        is_marginal[owner[v]][v] = 1;
        out_flag[owner[v]][owner[u]][v] = 1;  // v's value is consumed by owner[u]
      }
    }
  }
  for (std::size_t p = 0; p < n_parts; ++p) {
    for (NodeId v : parts[p].owned) {
      if (is_marginal[p][v])
        parts[p].marginal.push_back(v);
      else
        parts[p].central.push_back(v);
    }
    for (std::size_t q = 0; q < n_parts; ++q) {
      if (q == p) continue;
      for (NodeId v : parts[p].owned)
        if (out_flag[p][q][v]) parts[p].remote_out[q].push_back(v);
      for (NodeId u : parts[q].owned)
        if (out_flag[q][p][u]) parts[p].remote_in[q].push_back(u);
    }
  }
  return parts;
}

// Seeded greedy region growing. Part p may own at most floor(n/P)+1 nodes when
// p < n mod P, else floor(n/P); parts claim one node per turn from their BFS
// frontier, falling back to the lowest unclaimed id, so quotas are met exactly
// even on disconnected graphs.
inline std::vector<Partition> partition_graph(const Graph& g, std::size_t n_parts, uint64_t seed) {
  if (n_parts == 0 || n_parts > g.num_nodes)
    throw std::invalid_argument("partition_graph: n_parts must be in [1, num_nodes]");
  const std::size_t n = g.num_nodes;
  std::vector<uint32_t> owner(n, UINT32_MAX);
  std::vector<std::size_t> quota(n_parts, n / n_parts);
  for (std::size_t p = 0; p < n % n_parts; ++p) ++quota[p];

  RngStream rng = RngStream(seed).fork(0x9a27);
  std::vector<std::deque<NodeId>> frontier(n_parts);
  std::vector<char> rooted(n, 0);
  for (std::size_t p = 0; p < n_parts; ++p) {
    NodeId r = static_cast<NodeId>(rng.next_below(n));
    while (rooted[r]) r = static_cast<NodeId>(rng.next_below(n));
    rooted[r] = 1;
    frontier[p].push_back(r);
  }

  std::vector<std::size_t> owned_count(n_parts, 0);
  NodeId next_unclaimed = 0;
  std::size_t assigned = 0;
  while (assigned < n) {
    for (std::size_t p = 0; p < n_parts && assigned < n; ++p) {
      if (owned_count[p] >= quota[p]) continue;
      NodeId v = UINT32_MAX;
      while (!frontier[p].empty()) {
        NodeId cand = frontier[p].front();
        frontier[p].pop_front();
        if (owner[cand] == UINT32_MAX) {
          v = cand;
          break;
        }
      }
      if (v == UINT32_MAX) {
        while (next_unclaimed < n && owner[next_unclaimed] != UINT32_MAX) ++next_unclaimed;
        v = next_unclaimed;
      }
      owner[v] = static_cast<uint32_t>(p);
      ++owned_count[p];
      ++assigned;
      for (NodeId u : g.neighbors(v))
        if (owner[u] == UINT32_MAX) frontier[p].push_back(u);
    }
  }
  return partitions_from_owner(g, owner, n_parts);
}

inline LocalRemoteSplit split_local_remote(const Partition& part, const Graph& g) {
  LocalRemoteSplit s;
  std::vector<char> mine(g.num_nodes, 0);
  for (NodeId v : part.owned) mine[v] = 1;
  s.local_ptr.assign(part.owned.size() + 1, 0);
  s.remote_ptr.assign(part.owned.size() + 1, 0);
  for (std::size_t i = 0; i < part.owned.size(); ++i) {
    for (NodeId u : g.neighbors(part.owned[i])) {
      if (mine[u])
        s.local_nbrs.push_back(u);
      else
        s.remote_nbrs.push_back(u);
    }
    s.local_ptr[i + 1] = s.local_nbrs.size();
    s.remote_ptr[i + 1] = s.remote_nbrs.size();
  }
  return s;
}

}  // namespace qgnn
