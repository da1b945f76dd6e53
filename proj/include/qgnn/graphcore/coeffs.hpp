#pragma once

#include <cmath>
#include <vector>

#include "qgnn/graphcore/graph.hpp"

namespace qgnn {

enum class AggMode { kGcn, kSageMean };

// Aggregation weights. alpha[i] pairs with the CSR adjacency slot i: for row v
// and neighbor u = adj[i], alpha[i] is u's weight in v's aggregation. The
// self pair (v, v) is carried separately; no explicit self loops are stored.
struct AggCoeffs {
  AggMode mode = AggMode::kGcn;
  std::vector<double> alpha;
  std::vector<double> self_alpha;

  // weight of u inside v's aggregation, for u adjacent to v or u == v
  double of(const Graph& g, NodeId u, NodeId v) const {
    if (u == v) return self_alpha[v];
    auto ns = g.neighbors(v);
    auto it = std::lower_bound(ns.begin(), ns.end(), u);
    if (it == ns.end() || *it != u) throw std::invalid_argument("coeffs: not an edge");
    return alpha[g.adj_ptr[v] + static_cast<std::size_t>(it - ns.begin())];
  }
};

inline AggCoeffs compute_coeffs(const Graph& g, AggMode mode) {
  AggCoeffs c;
  c.mode = mode;
  c.alpha.resize(g.adj.size());
  c.self_alpha.resize(g.num_nodes);
  for (NodeId v = 0; v < g.num_nodes; ++v) {
    const double dv1 = static_cast<double>(g.degree(v)) + 1.0;
    c.self_alpha[v] = 1.0 / dv1;
    for (std::size_t i = g.adj_ptr[v]; i < g.adj_ptr[v + 1]; ++i) {
      const NodeId u = g.adj[i];
      const double du1 = static_cast<double>(g.degree(u)) + 1.0;
      c.alpha[i] = mode == AggMode::kGcn ? 1.0 / std::sqrt(du1 * dv1) : 1.0 / dv1;
    }
  }
  return c;
}

}  // namespace qgnn
