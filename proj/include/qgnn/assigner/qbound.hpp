#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "qgnn/assigner/plan.hpp"
#include "qgnn/assigner/trace.hpp"
#include "qgnn/graphcore/coeffs.hpp"
#include "qgnn/graphcore/partition.hpp"

namespace qgnn {

struct QBoundTerms {
  double cross = 0.0;
  double fwd = 0.0;
  double bwd = 0.0;

  double total() const { return cross + fwd + bwd; }
};

namespace detail {

// (src, dst, id) -> dim * S^2 / 6 with S implied by the planned bit width
struct ScaleLookup {
  std::map<std::tuple<uint32_t, uint32_t, uint32_t>, double> var;

  static ScaleLookup build(TensorKey key, const InstanceStats& stats,
                           const BitWidthPlan::Lookup& plan) {
    ScaleLookup lk;
    for (const PairStats& ps : stats.pairs) {
      for (const MessageStats& m : ps.messages) {
        const int bits = plan.bits_for(key, ps.src, ps.dst, m.id);
        const double levels = static_cast<double>((1u << bits) - 1);
        const double s = (m.hi - m.lo) / levels;
        lk.var[{ps.src, ps.dst, m.id}] = static_cast<double>(m.dim) * s * s / 6.0;
      }
    }
    return lk;
  }

  double at(uint32_t src, uint32_t dst, uint32_t id) const {
    auto it = var.find({src, dst, id});
    if (it == var.end()) throw std::invalid_argument("variance_bound_q: message missing from stats");
    return it->second;
  }
};

}  // namespace detail

// Per-layer gradient-variance bound: for every node v,
//   VarF_v = sum over remote neighbors k of alpha_{k,v}^2 * D * S_fwd^2 / 6
//   VarB_v = same with the scale of the backward partial v's device sends for k
// and the layer bound is sum_v [VarF_v * VarB_v + M^2 VarB_v + N^2 VarF_v].
// Forward scales come from the (layer-1, fwd) stats, backward from (layer, bwd);
// the top layer has no backward messages so its VarB is zero.
inline std::vector<QBoundTerms> variance_bound_q(
    const Graph& g, const std::vector<Partition>& parts, const AggCoeffs& coeffs,
    const std::map<TensorKey, InstanceStats>& stats, const BitWidthPlan& plan,
    std::size_t num_layers, double m_bound, double n_bound) {
  if (num_layers == 0) throw std::invalid_argument("variance_bound_q: num_layers must be > 0");
  std::vector<uint32_t> owner(g.num_nodes, 0);
  bool any_remote = false;
  for (const Partition& p : parts)
    for (NodeId v : p.owned) owner[v] = p.device_id;
  for (NodeId v = 0; v < g.num_nodes; ++v)
    for (NodeId u : g.neighbors(v)) any_remote = any_remote || owner[u] != owner[v];

  const BitWidthPlan::Lookup lookup = plan.make_lookup();
  std::vector<QBoundTerms> out(num_layers);
  if (!any_remote) return out;

  for (std::size_t l = 1; l <= num_layers; ++l) {
    const TensorKey fwd_key{static_cast<uint32_t>(l - 1), Direction::kForward};
    const TensorKey bwd_key{static_cast<uint32_t>(l), Direction::kBackward};
    auto fwd_it = stats.find(fwd_key);
    if (fwd_it == stats.end())
      throw std::invalid_argument("variance_bound_q: missing forward stats for layer");
    const bool has_bwd = l < num_layers;
    if (has_bwd && stats.find(bwd_key) == stats.end())
      throw std::invalid_argument("variance_bound_q: missing backward stats for layer");
    const auto fwd_scales = detail::ScaleLookup::build(fwd_key, fwd_it->second, lookup);
    detail::ScaleLookup bwd_scales;
    if (has_bwd) bwd_scales = detail::ScaleLookup::build(bwd_key, stats.at(bwd_key), lookup);

    QBoundTerms& t = out[l - 1];
    for (NodeId v = 0; v < g.num_nodes; ++v) {
      double varf = 0.0, varb = 0.0;
      for (NodeId k : g.neighbors(v)) {
        if (owner[k] == owner[v]) continue;
        const double a = coeffs.of(g, k, v);
        varf += a * a * fwd_scales.at(owner[k], owner[v], k);
        if (has_bwd) varb += a * a * bwd_scales.at(owner[v], owner[k], k);
      }
      t.cross += varf * varb;
      t.bwd += m_bound * m_bound * varb;
      t.fwd += n_bound * n_bound * varf;
    }
  }
  return out;
}

}  // namespace qgnn
