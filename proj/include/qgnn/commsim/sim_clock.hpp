#pragma once

#include <algorithm>

namespace qgnn {

// Simulated wall clock for one device. elapsed always equals
// comm + comp + quant: when communication overlaps compute, only the exposed
// part of the compute window, max(0, compute - comm), lands in comp.
// central_comp/marginal_comp record full (unhidden) compute for reporting,
// and serialized is what elapsed would be with no overlap at all.
struct SimClock {
  double elapsed = 0.0;
  double serialized = 0.0;
  double comm = 0.0;
  double comp = 0.0;
  double quant = 0.0;
  double central_comp = 0.0;
  double marginal_comp = 0.0;

  void add_quant(double t) {
    elapsed += t;
    serialized += t;
    quant += t;
  }

  void add_central(double t) {
    elapsed += t;
    serialized += t;
    comp += t;
    central_comp += t;
  }

  void add_marginal(double t) {
    elapsed += t;
    serialized += t;
    comp += t;
    marginal_comp += t;
  }

  void add_comm(double t) {
    elapsed += t;
    serialized += t;
    comm += t;
  }

  // Communication running concurrently with central compute.
  void add_overlap(double comm_t, double central_t) {
    elapsed += std::max(comm_t, central_t);
    serialized += comm_t + central_t;
    comm += comm_t;
    comp += std::max(0.0, central_t - comm_t);
    central_comp += central_t;
  }
};

}  // namespace qgnn
