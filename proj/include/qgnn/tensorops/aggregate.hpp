#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "qgnn/graphcore/coeffs.hpp"
#include "qgnn/graphcore/partition.hpp"
#include "qgnn/tensorops/matrix.hpp"

namespace qgnn {

// One device's aggregation structure. Owned rows follow Partition::owned
// order; remote slots concatenate remote_in lists by ascending source device,
// node ids ascending within each source. Central rows have no remote entries,
// so their aggregation reads only owned rows.
struct DeviceAggView {
  std::size_t num_owned = 0;
  std::size_t num_remote = 0;

  std::vector<double> self_alpha;  // per owned row

  // same-device neighbors, CSR over owned rows
  std::vector<std::size_t> local_ptr;
  std::vector<uint32_t> local_row;        // neighbor's owned-row index
  std::vector<double> local_alpha_fwd;    // neighbor's weight in this row's aggregation
  std::vector<double> local_alpha_bwd;    // this row's weight in the neighbor's aggregation

  // cross-device neighbors, CSR over owned rows
  std::vector<std::size_t> remote_ptr;
  std::vector<uint32_t> remote_slot;
  std::vector<double> remote_alpha;       // remote node's weight in this row's aggregation

  std::vector<uint32_t> slot_node;        // node id per remote slot
  std::vector<uint32_t> slot_owner;       // owning device per remote slot
  std::vector<std::size_t> device_slot_offset;  // first slot per source device, size n+1

  std::vector<uint32_t> central_rows, marginal_rows;
  std::unordered_map<uint32_t, uint32_t> row_of_node;  // owned node id -> row

  static DeviceAggView build(const Graph& g, const Partition& part, const AggCoeffs& coeffs) {
    DeviceAggView view;
    view.num_owned = part.owned.size();
    const std::size_t n_parts = part.remote_in.size();
    view.device_slot_offset.assign(n_parts + 1, 0);
    std::unordered_map<uint32_t, uint32_t> slot_of;
    for (std::size_t q = 0; q < n_parts; ++q) {
      view.device_slot_offset[q] = view.slot_node.size();
      for (NodeId k : part.remote_in[q]) {
        slot_of[k] = static_cast<uint32_t>(view.slot_node.size());
        view.slot_node.push_back(k);
        view.slot_owner.push_back(static_cast<uint32_t>(q));
      }
    }
    view.device_slot_offset[n_parts] = view.slot_node.size();
    view.num_remote = view.slot_node.size();

    for (std::size_t i = 0; i < part.owned.size(); ++i)
      view.row_of_node[part.owned[i]] = static_cast<uint32_t>(i);

    view.local_ptr.assign(view.num_owned + 1, 0);
    view.remote_ptr.assign(view.num_owned + 1, 0);
    view.self_alpha.resize(view.num_owned);
    for (std::size_t i = 0; i < part.owned.size(); ++i) {
      const NodeId v = part.owned[i];
      view.self_alpha[i] = coeffs.self_alpha[v];
      bool has_remote = false;
      for (std::size_t e = g.adj_ptr[v]; e < g.adj_ptr[v + 1]; ++e) {
        const NodeId u = g.adj[e];
        auto own = view.row_of_node.find(u);
        if (own != view.row_of_node.end()) {
          view.local_row.push_back(own->second);
          view.local_alpha_fwd.push_back(coeffs.alpha[e]);        // u's weight in v's agg
          view.local_alpha_bwd.push_back(coeffs.of(g, v, u));     // v's weight in u's agg
        } else {
          view.remote_slot.push_back(slot_of.at(u));
          view.remote_alpha.push_back(coeffs.alpha[e]);
          has_remote = true;
        }
      }
      view.local_ptr[i + 1] = view.local_row.size();
      view.remote_ptr[i + 1] = view.remote_slot.size();
      if (has_remote)
        view.marginal_rows.push_back(static_cast<uint32_t>(i));
      else
        view.central_rows.push_back(static_cast<uint32_t>(i));
    }
    return view;
  }
};

// out rows in `rows` get self + local + remote weighted sums; h_remote is
// indexed by slot. Rows outside `rows` are left untouched.
inline void aggregate_rows(const DeviceAggView& view, const Matrix& h_owned,
                           const Matrix& h_remote, std::span<const uint32_t> rows, Matrix& out) {
  check_shape(h_owned.rows == view.num_owned && out.rows == view.num_owned &&
                  out.cols == h_owned.cols,
              "aggregate");
  check_shape(view.num_remote == 0 ||
                  (h_remote.rows == view.num_remote && h_remote.cols == h_owned.cols),
              "aggregate remote");
  const std::size_t d = h_owned.cols;
  for (uint32_t r : rows) {
    double* dst = out.data.data() + r * d;
    const double* self = h_owned.data.data() + r * d;
    const double sa = view.self_alpha[r];
    for (std::size_t j = 0; j < d; ++j) dst[j] = sa * self[j];
    for (std::size_t e = view.local_ptr[r]; e < view.local_ptr[r + 1]; ++e) {
      const double a = view.local_alpha_fwd[e];
      const double* src = h_owned.data.data() + view.local_row[e] * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += a * src[j];
    }
    for (std::size_t e = view.remote_ptr[r]; e < view.remote_ptr[r + 1]; ++e) {
      const double a = view.remote_alpha[e];
      const double* src = h_remote.data.data() + view.remote_slot[e] * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += a * src[j];
    }
  }
}

// Full aggregation over every owned row.
inline Matrix aggregate(const DeviceAggView& view, const Matrix& h_owned, const Matrix& h_remote) {
  Matrix out(view.num_owned, h_owned.cols);
  std::vector<uint32_t> rows(view.num_owned);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<uint32_t>(i);
  aggregate_rows(view, h_owned, h_remote, rows, out);
  return out;
}

// Transpose aggregation against same-device rows: for each row u in `rows`,
// out_u = sum over v in {u} + local neighbors of (u's weight in v's agg) * gbar_v.
// Only rows listed in `rows` are written.
inline void aggregate_backward_local(const DeviceAggView& view, const Matrix& gbar,
                                     std::span<const uint32_t> rows, Matrix& out) {
  check_shape(gbar.rows == view.num_owned && out.same_shape(gbar), "aggregate_backward");
  const std::size_t d = gbar.cols;
  for (uint32_t r : rows) {
    double* dst = out.data.data() + r * d;
    const double* self = gbar.data.data() + r * d;
    const double sa = view.self_alpha[r];
    for (std::size_t j = 0; j < d; ++j) dst[j] = sa * self[j];
    for (std::size_t e = view.local_ptr[r]; e < view.local_ptr[r + 1]; ++e) {
      const double a = view.local_alpha_bwd[e];
      const double* src = gbar.data.data() + view.local_row[e] * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += a * src[j];
    }
  }
}

// Gradients of remote inputs: partial_k = sum over owned rows v adjacent to
// slot k of (k's weight in v's agg) * gbar_v. Only marginal rows contribute.
inline Matrix backward_remote_partials(const DeviceAggView& view, const Matrix& gbar) {
  check_shape(gbar.rows == view.num_owned, "backward_remote_partials");
  Matrix out(view.num_remote, gbar.cols);
  const std::size_t d = gbar.cols;
  for (uint32_t r : view.marginal_rows) {
    const double* src = gbar.data.data() + r * d;
    for (std::size_t e = view.remote_ptr[r]; e < view.remote_ptr[r + 1]; ++e) {
      const double a = view.remote_alpha[e];
      double* dst = out.data.data() + view.remote_slot[e] * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += a * src[j];
    }
  }
  return out;
}

}  // namespace qgnn
