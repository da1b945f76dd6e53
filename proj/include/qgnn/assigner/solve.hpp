#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <vector>

#include "qgnn/assigner/plan.hpp"
#include "qgnn/assigner/trace.hpp"
#include "qgnn/commsim/cost_model.hpp"

namespace qgnn {

inline constexpr int kBitChoices[3] = {2, 4, 8};
inline constexpr std::size_t kBruteForceGroupLimit = 16;

// Orders each pair's messages by descending beta (ties by ascending id) and
// chunks them into groups of at most group_size. Bits are left at 8.
inline InstancePlan group_and_order(const InstanceStats& stats, std::size_t group_size) {
  if (group_size == 0) throw std::invalid_argument("group_and_order: group_size must be > 0");
  validate_stats(stats);
  InstancePlan plan;
  for (const PairStats& ps : stats.pairs) {
    if (ps.messages.empty()) continue;
    std::vector<std::pair<double, const MessageStats*>> order;
    order.reserve(ps.messages.size());
    for (const MessageStats& m : ps.messages) order.emplace_back(compute_beta(m), &m);
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second->id < b.second->id;
    });
    PlanPair pp;
    pp.src = ps.src;
    pp.dst = ps.dst;
    for (std::size_t i = 0; i < order.size(); i += group_size) {
      PlanGroup g;
      for (std::size_t j = i; j < std::min(order.size(), i + group_size); ++j) {
        g.ids.push_back(order[j].second->id);
        g.dims.push_back(order[j].second->dim);
        g.beta += order[j].first;
      }
      pp.groups.push_back(std::move(g));
    }
    plan.pairs.push_back(std::move(pp));
  }
  return plan;
}

struct SolveEval {
  double objective = 0.0;
  double variance_term = 0.0;
  double z_seconds = 0.0;
};

inline double group_variance_at(double beta, int bits) {
  const double levels = static_cast<double>((1u << bits) - 1);
  return beta / (levels * levels);
}

// Canonical objective: variance folds pairs then groups in plan order, the
// time term is the slowest pair's theta * bits + gamma. Both solvers score
// through here so their results are directly comparable.
inline SolveEval evaluate_plan(const InstancePlan& plan, const CostModel& cm, double lambda) {
  SolveEval ev;
  for (const PlanPair& pp : plan.pairs) {
    uint64_t pair_bits = 0;
    for (const PlanGroup& g : pp.groups) {
      ev.variance_term += group_variance_at(g.beta, g.bits);
      pair_bits += g.dim_sum() * static_cast<uint64_t>(g.bits);
    }
    ev.z_seconds = std::max(
        ev.z_seconds, cm.transfer_seconds(pp.src, pp.dst, static_cast<double>(pair_bits)));
  }
  ev.objective = lambda * ev.variance_term + (1.0 - lambda) * ev.z_seconds;
  return ev;
}

namespace detail {

inline void validate_instance(const InstancePlan& plan, const CostModel& cm, double lambda) {
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("solve: lambda must be in [0, 1]");
  if (plan.pairs.empty()) throw std::invalid_argument("solve: no device pairs");
  for (const PlanPair& pp : plan.pairs) {
    if (pp.src >= cm.num_devices || pp.dst >= cm.num_devices)
      throw std::invalid_argument("solve: pair outside cost model");
    if (pp.groups.empty()) throw std::invalid_argument("solve: empty groups");
    for (const PlanGroup& g : pp.groups) {
      if (g.ids.empty() || g.ids.size() != g.dims.size())
        throw std::invalid_argument("solve: malformed group");
      if (g.dim_sum() == 0) throw std::invalid_argument("solve: zero-dim group");
      if (!(g.beta >= 0.0) || !std::isfinite(g.beta))
        throw std::invalid_argument("solve: beta must be finite and >= 0");
    }
  }
}

inline std::vector<int> flatten_bits(const InstancePlan& plan) {
  std::vector<int> bits;
  for (const PlanPair& pp : plan.pairs)
    for (const PlanGroup& g : pp.groups) bits.push_back(g.bits);
  return bits;
}

inline void apply_bits(InstancePlan& plan, const std::vector<int>& bits) {
  std::size_t i = 0;
  for (PlanPair& pp : plan.pairs)
    for (PlanGroup& g : pp.groups) g.bits = bits[i++];
}

// objective, then variance, then lexicographically larger bit vector
inline bool better_assignment(const SolveEval& ea, const std::vector<int>& ba,
                              const SolveEval& eb, const std::vector<int>& bb) {
  if (ea.objective != eb.objective) return ea.objective < eb.objective;
  if (ea.variance_term != eb.variance_term) return ea.variance_term < eb.variance_term;
  return ba > bb;
}

// Per-pair knapsack table: minvar[j][c] is the least variance attainable by
// groups j.. when their bit total is at most c scaled units.
struct PairTable {
  double theta = 0.0, gamma = 0.0;
  uint64_t unit = 1;   // bits per scaled state
  uint64_t smax = 0;   // scaled bit total with every group at 8
  std::vector<std::vector<uint64_t>> weight;  // [group][bit choice]
  std::vector<std::vector<double>> minvar;
  std::vector<char> reachable;  // exact scaled totals

  double time_at(uint64_t s) const {
    return theta * static_cast<double>(s * unit) + gamma;
  }

  // largest s with time_at(s) <= z, or nullopt
  std::optional<uint64_t> cap_for(double z) const {
    if (time_at(0) > z) return std::nullopt;
    uint64_t lo = 0, hi = smax;
    while (lo < hi) {
      const uint64_t mid = lo + (hi - lo + 1) / 2;
      if (time_at(mid) <= z)
        lo = mid;
      else
        hi = mid - 1;
    }
    return lo;
  }
};

inline PairTable build_pair_table(const PlanPair& pp, const CostModel& cm) {
  PairTable t;
  t.theta = cm.theta[pp.src * cm.num_devices + pp.dst];
  t.gamma = cm.gamma[pp.src * cm.num_devices + pp.dst];
  uint64_t base = 0;
  for (const PlanGroup& g : pp.groups) base = std::gcd(base, g.dim_sum());
  t.unit = 2 * base;
  const std::size_t n = pp.groups.size();
  t.weight.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (int b : kBitChoices) t.weight[j].push_back(pp.groups[j].dim_sum() * b / t.unit);
    t.smax += t.weight[j][2];
  }
  const double inf = std::numeric_limits<double>::infinity();
  t.minvar.assign(n + 1, std::vector<double>(t.smax + 1, inf));
  std::fill(t.minvar[n].begin(), t.minvar[n].end(), 0.0);
  for (std::size_t j = n; j-- > 0;) {
    for (uint64_t c = 0; c <= t.smax; ++c) {
      double best = inf;
      for (int bi = 2; bi >= 0; --bi) {  // prefer larger bits on ties
        const uint64_t w = t.weight[j][bi];
        if (w > c) continue;
        const double below = t.minvar[j + 1][c - w];
        if (below == inf) continue;
        const double v = group_variance_at(pp.groups[j].beta, kBitChoices[bi]) + below;
        if (v < best) best = v;
      }
      t.minvar[j][c] = best;
    }
  }
  t.reachable.assign(t.smax + 1, 0);
  t.reachable[0] = 1;
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<char> next(t.smax + 1, 0);
    for (uint64_t s = 0; s <= t.smax; ++s) {
      if (!t.reachable[s]) continue;
      for (int bi = 0; bi < 3; ++bi) next[s + t.weight[j][bi]] = 1;
    }
    t.reachable = std::move(next);
  }
  return t;
}

// Greedy largest-bits walk consistent with the table's minima.
inline std::vector<int> reconstruct_pair(const PairTable& t, const PlanPair& pp, uint64_t cap) {
  std::vector<int> bits(pp.groups.size(), 0);
  uint64_t c = cap;
  for (std::size_t j = 0; j < pp.groups.size(); ++j) {
    for (int bi = 2; bi >= 0; --bi) {
      const uint64_t w = t.weight[j][bi];
      if (w > c) continue;
      const double below = t.minvar[j + 1][c - w];
      if (below == std::numeric_limits<double>::infinity()) continue;
      if (group_variance_at(pp.groups[j].beta, kBitChoices[bi]) + below == t.minvar[j][c]) {
        bits[j] = kBitChoices[bi];
        c -= w;
        break;
      }
    }
  }
  return bits;
}

}  // namespace detail

// Exhaustive reference solver; throws ResourceLimitError past
// kBruteForceGroupLimit total groups.
inline SolveEval brute_force_assignment(InstancePlan& plan, const CostModel& cm, double lambda) {
  detail::validate_instance(plan, cm, lambda);
  std::size_t n_groups = 0;
  for (const PlanPair& pp : plan.pairs) n_groups += pp.groups.size();
  if (n_groups > kBruteForceGroupLimit)
    throw ResourceLimitError("brute_force_assignment: too many groups");

  std::vector<int> idx(n_groups, 0);
  std::vector<int> bits(n_groups, 2);
  std::vector<int> best_bits;
  SolveEval best_ev;
  InstancePlan work = plan;
  bool have = false;
  for (;;) {
    detail::apply_bits(work, bits);
    const SolveEval ev = evaluate_plan(work, cm, lambda);
    if (!have || detail::better_assignment(ev, bits, best_ev, best_bits)) {
      best_ev = ev;
      best_bits = bits;
      have = true;
    }
    std::size_t j = 0;
    while (j < n_groups) {
      if (++idx[j] < 3) {
        bits[j] = kBitChoices[idx[j]];
        break;
      }
      idx[j] = 0;
      bits[j] = 2;
      ++j;
    }
    if (j == n_groups) break;
  }
  detail::apply_bits(plan, best_bits);
  plan.objective = best_ev.objective;
  plan.variance_term = best_ev.variance_term;
  plan.z_seconds = best_ev.z_seconds;
  return best_ev;
}

// Exact solve: the optimum's time term equals some pair's reachable transfer
// time, so every such time is tried as a budget; per pair a knapsack table
// gives the least variance within the budget, and the best reconstructed
// assignment under the canonical objective wins.
inline SolveEval solve_assignment(InstancePlan& plan, const CostModel& cm, double lambda) {
  detail::validate_instance(plan, cm, lambda);
  std::vector<detail::PairTable> tables;
  tables.reserve(plan.pairs.size());
  for (const PlanPair& pp : plan.pairs) tables.push_back(detail::build_pair_table(pp, cm));

  std::vector<double> candidates;
  for (const detail::PairTable& t : tables)
    for (uint64_t s = 0; s <= t.smax; ++s)
      if (t.reachable[s]) candidates.push_back(t.time_at(s));
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  std::vector<int> best_bits;
  SolveEval best_ev;
  bool have = false;
  InstancePlan work = plan;
  std::vector<int> bits;
  for (double z : candidates) {
    bits.clear();
    bool feasible = true;
    for (std::size_t i = 0; i < tables.size(); ++i) {
      const auto cap = tables[i].cap_for(z);
      if (!cap || tables[i].minvar[0][*cap] == std::numeric_limits<double>::infinity()) {
        feasible = false;
        break;
      }
      const auto pair_bits = detail::reconstruct_pair(tables[i], plan.pairs[i], *cap);
      bits.insert(bits.end(), pair_bits.begin(), pair_bits.end());
    }
    if (!feasible) continue;
    detail::apply_bits(work, bits);
    const SolveEval ev = evaluate_plan(work, cm, lambda);
    if (!have || detail::better_assignment(ev, bits, best_ev, best_bits)) {
      best_ev = ev;
      best_bits = bits;
      have = true;
    }
  }
  if (!have) throw std::invalid_argument("solve_assignment: no feasible assignment");
  detail::apply_bits(plan, best_bits);
  plan.objective = best_ev.objective;
  plan.variance_term = best_ev.variance_term;
  plan.z_seconds = best_ev.z_seconds;
  return best_ev;
}

// Mean gradient-variance contribution when bits are drawn uniformly from
// {2, 4, 8} per message.
inline double uniform_expected_variance(const InstanceStats& stats) {
  double mean_inv = 0.0;
  for (int b : kBitChoices) {
    const double levels = static_cast<double>((1u << b) - 1);
    mean_inv += 1.0 / (levels * levels);
  }
  mean_inv /= 3.0;
  double total = 0.0;
  for (const PairStats& ps : stats.pairs)
    for (const MessageStats& m : ps.messages) total += compute_beta(m) * mean_inv;
  return total;
}

struct ReassignmentResult {
  BitWidthPlan plan;
  double objective = 0.0;
  double variance_term = 0.0;
  double z_seconds = 0.0;  // summed over instances
  double uniform_variance = 0.0;
};

// Periodic re-solve: a no-op except when epoch is a positive multiple of
// period. Instances solve independently (concurrently); the merged plan gets
// the next version number.
inline std::optional<ReassignmentResult> reassignment_round(
    uint64_t epoch, uint64_t period, const std::map<TensorKey, InstanceStats>& stats,
    const CostModel& cm, double lambda, std::size_t group_size, uint64_t current_version) {
  if (period == 0) throw std::invalid_argument("reassignment_round: period must be > 0");
  if (epoch == 0 || epoch % period != 0) return std::nullopt;

  std::vector<std::pair<TensorKey, std::future<InstancePlan>>> jobs;
  for (const auto& [key, inst] : stats) {
    if (inst.pairs.empty()) continue;
    jobs.emplace_back(key, std::async(std::launch::async, [&inst, &cm, lambda, group_size]() {
      InstancePlan p = group_and_order(inst, group_size);
      solve_assignment(p, cm, lambda);
      return p;
    }));
  }
  ReassignmentResult res;
  res.plan.version = current_version + 1;
  for (auto& [key, fut] : jobs) {
    InstancePlan p = fut.get();
    res.objective += p.objective;
    res.variance_term += p.variance_term;
    res.z_seconds += p.z_seconds;
    res.uniform_variance += uniform_expected_variance(stats.at(key));
    res.plan.instances[key] = std::move(p);
  }
  return res;
}

}  // namespace qgnn
