#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "qgnn/tensorops/matrix.hpp"

namespace qgnn {

enum class OptKind { kGd, kAdam };

struct OptimizerState {
  OptKind kind = OptKind::kAdam;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  uint64_t t = 0;
  std::vector<Matrix> m, v;

  static OptimizerState make(OptKind kind, double lr, const std::vector<Matrix>& params) {
    OptimizerState s;
    s.kind = kind;
    s.lr = lr;
    if (kind == OptKind::kAdam) {
      for (const Matrix& p : params) {
        s.m.emplace_back(p.rows, p.cols);
        s.v.emplace_back(p.rows, p.cols);
      }
    }
    return s;
  }
};

inline void optimizer_step(OptimizerState& st, std::vector<Matrix>& params,
                           const std::vector<Matrix>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("optimizer: size mismatch");
  if (st.kind == OptKind::kGd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      check_shape(params[i].same_shape(grads[i]), "optimizer");
      for (std::size_t j = 0; j < params[i].data.size(); ++j)
        params[i].data[j] -= st.lr * grads[i].data[j];
    }
    return;
  }
  ++st.t;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    check_shape(params[i].same_shape(grads[i]), "optimizer");
    for (std::size_t j = 0; j < params[i].data.size(); ++j) {
      const double g = grads[i].data[j];
      double& m = st.m[i].data[j];
      double& v = st.v[i].data[j];
      m = st.beta1 * m + (1.0 - st.beta1) * g;
      v = st.beta2 * v + (1.0 - st.beta2) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      params[i].data[j] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
}

}  // namespace qgnn
