#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "qgnn/graphcore/coeffs.hpp"
#include "qgnn/quantcodec/rng.hpp"
#include "qgnn/tensorops/matrix.hpp"

namespace qgnn {

enum class Activation { kNone, kRelu };

struct GnnLayer {
  Matrix weight;  // in_dim x out_dim
  Activation act = Activation::kRelu;
};

struct GnnModel {
  AggMode mode = AggMode::kGcn;
  std::vector<GnnLayer> layers;
  bool layer_norm = false;
  double dropout = 0.0;

  // Glorot-uniform weights; hidden layers relu, final layer linear.
  static GnnModel init(AggMode mode, const std::vector<std::size_t>& dims, uint64_t seed) {
    if (dims.size() < 2) throw std::invalid_argument("model: need at least one layer");
    GnnModel m;
    m.mode = mode;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      GnnLayer layer;
      layer.weight = Matrix(dims[l], dims[l + 1]);
      layer.act = l + 2 == dims.size() ? Activation::kNone : Activation::kRelu;
      const double a = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
      RngStream rng = RngStream(seed).fork({0x77, l});
      for (double& w : layer.weight.data) w = (2.0 * rng.next_double() - 1.0) * a;
      m.layers.push_back(std::move(layer));
    }
    return m;
  }

  std::vector<Matrix> weights() const {
    std::vector<Matrix> w;
    for (const GnnLayer& l : layers) w.push_back(l.weight);
    return w;
  }
};

// Saved activations for one layer's backward pass. Matrices cover all owned
// rows even when stages fill them subset by subset.
struct LayerCache {
  Matrix h_agg;     // aggregated input
  Matrix pre_act;   // h_agg * W
  Matrix act_in;    // layer-norm output when enabled, else alias of pre_act content
  std::vector<double> inv_std;  // per row, layer norm only
  Matrix drop_mask; // inverted-dropout multipliers, empty when dropout off
};

namespace detail {

inline void layer_norm_row(const double* z, double* y, double& inv_std, std::size_t d) {
  double mean = 0.0;
  for (std::size_t j = 0; j < d; ++j) mean += z[j];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t j = 0; j < d; ++j) var += (z[j] - mean) * (z[j] - mean);
  var /= static_cast<double>(d);
  inv_std = 1.0 / std::sqrt(var + 1e-6);
  for (std::size_t j = 0; j < d; ++j) y[j] = (z[j] - mean) * inv_std;
}

// dL/dz from dL/dy for one normalized row
inline void layer_norm_row_backward(const double* y, const double* dy, double inv_std, double* dz,
                                    std::size_t d) {
  double mean_dy = 0.0, mean_dyy = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    mean_dy += dy[j];
    mean_dyy += dy[j] * y[j];
  }
  mean_dy /= static_cast<double>(d);
  mean_dyy /= static_cast<double>(d);
  for (std::size_t j = 0; j < d; ++j) dz[j] = inv_std * (dy[j] - mean_dy - y[j] * mean_dyy);
}

}  // namespace detail

// Forward for a row subset: out rows = dropout(act(norm(h_agg W))). cache must
// be pre-sized by the caller; h_agg rows for `rows` must already be filled.
inline void layer_forward_rows(const GnnLayer& layer, const GnnModel& model, LayerCache& cache,
                               std::span<const uint32_t> rows, Matrix& out,
                               const RngStream& drop_rng) {
  const std::size_t din = layer.weight.rows, dout = layer.weight.cols;
  check_shape(cache.h_agg.cols == din && out.cols == dout, "layer_forward");
  for (uint32_t r : rows) {
    const double* h = cache.h_agg.data.data() + r * din;
    double* z = cache.pre_act.data.data() + r * dout;
    for (std::size_t j = 0; j < dout; ++j) z[j] = 0.0;
    for (std::size_t i = 0; i < din; ++i) {
      const double hi = h[i];
      if (hi == 0.0) continue;
      const double* wrow = layer.weight.data.data() + i * dout;
      for (std::size_t j = 0; j < dout; ++j) z[j] += hi * wrow[j];
    }
    const double* src = z;
    if (model.layer_norm) {
      double* y = cache.act_in.data.data() + r * dout;
      detail::layer_norm_row(z, y, cache.inv_std[r], dout);
      src = y;
    }
    double* o = out.data.data() + r * dout;
    for (std::size_t j = 0; j < dout; ++j)
      o[j] = layer.act == Activation::kRelu ? std::max(0.0, src[j]) : src[j];
    if (model.dropout > 0.0 && !cache.drop_mask.data.empty()) {
      RngStream rng = drop_rng.fork(r);
      double* mask = cache.drop_mask.data.data() + r * dout;
      const double keep = 1.0 - model.dropout;
      for (std::size_t j = 0; j < dout; ++j) {
        mask[j] = rng.next_double() < keep ? 1.0 / keep : 0.0;
        o[j] *= mask[j];
      }
    }
  }
}

// Backward through dropout, activation, and norm for a row subset: fills
// dz rows (gradients at pre_act) from dh rows (gradients at layer output).
inline void layer_backward_rows(const GnnLayer& layer, const GnnModel& model,
                                const LayerCache& cache, const Matrix& dh,
                                std::span<const uint32_t> rows, Matrix& dz) {
  const std::size_t dout = layer.weight.cols;
  check_shape(dh.cols == dout && dz.cols == dout, "layer_backward");
  std::vector<double> tmp(dout);
  for (uint32_t r : rows) {
    const double* dhr = dh.data.data() + r * dout;
    for (std::size_t j = 0; j < dout; ++j) tmp[j] = dhr[j];
    if (model.dropout > 0.0 && !cache.drop_mask.data.empty()) {
      const double* mask = cache.drop_mask.data.data() + r * dout;
      for (std::size_t j = 0; j < dout; ++j) tmp[j] *= mask[j];
    }
    const double* act_in =
        (model.layer_norm ? cache.act_in.data : cache.pre_act.data).data() + r * dout;
    if (layer.act == Activation::kRelu)
      for (std::size_t j = 0; j < dout; ++j)
        if (act_in[j] <= 0.0) tmp[j] = 0.0;
    double* dzr = dz.data.data() + r * dout;
    if (model.layer_norm) {
      detail::layer_norm_row_backward(act_in, tmp.data(), cache.inv_std[r], dzr, dout);
    } else {
      for (std::size_t j = 0; j < dout; ++j) dzr[j] = tmp[j];
    }
  }
}

// Gradient w.r.t. the aggregated input for a row subset: dh_agg = dz W^T.
inline void input_grad_rows(const GnnLayer& layer, const Matrix& dz,
                            std::span<const uint32_t> rows, Matrix& dh_agg) {
  const std::size_t din = layer.weight.rows, dout = layer.weight.cols;
  check_shape(dz.cols == dout && dh_agg.cols == din, "input_grad");
  for (uint32_t r : rows) {
    const double* dzr = dz.data.data() + r * dout;
    double* out = dh_agg.data.data() + r * din;
    for (std::size_t i = 0; i < din; ++i) {
      const double* wrow = layer.weight.data.data() + i * dout;
      double acc = 0.0;
      for (std::size_t j = 0; j < dout; ++j) acc += dzr[j] * wrow[j];
      out[i] = acc;
    }
  }
}

// Softmax cross-entropy over a row subset, scaled by inv_denom (the caller
// picks the denominator so shards of a global mean add up exactly). Gradient
// rows outside the subset stay zero.
inline std::pair<double, Matrix> masked_ce_partial(const Matrix& logits,
                                                   const std::vector<int32_t>& labels,
                                                   std::span<const uint32_t> rows,
                                                   double inv_denom) {
  if (labels.size() != logits.rows)
    throw std::invalid_argument("loss: labels size mismatch");
  Matrix grad(logits.rows, logits.cols);
  double loss = 0.0;
  for (uint32_t r : rows) {
    const int32_t y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols)
      throw std::invalid_argument("loss: label out of range");
    const double* row = logits.data.data() + r * logits.cols;
    double hi = row[0];
    for (std::size_t c = 1; c < logits.cols; ++c) hi = std::max(hi, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) sum += std::exp(row[c] - hi);
    const double lse = hi + std::log(sum);
    loss += (lse - row[y]) * inv_denom;
    double* grow = grad.data.data() + r * logits.cols;
    for (std::size_t c = 0; c < logits.cols; ++c)
      grow[c] =
          (std::exp(row[c] - lse) - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0)) * inv_denom;
  }
  return {loss, std::move(grad)};
}

// Softmax cross-entropy over masked rows; gradient rows outside the mask stay
// zero. Returns (mean loss, dL/dlogits).
inline std::pair<double, Matrix> loss_and_grad(const Matrix& logits,
                                               const std::vector<int32_t>& labels,
                                               const std::vector<uint8_t>& mask) {
  if (labels.size() != logits.rows || mask.size() != logits.rows)
    throw std::invalid_argument("loss: labels/mask size mismatch");
  std::vector<uint32_t> rows;
  for (std::size_t r = 0; r < logits.rows; ++r)
    if (mask[r]) rows.push_back(static_cast<uint32_t>(r));
  if (rows.empty()) throw std::invalid_argument("loss: empty mask");
  return masked_ce_partial(logits, labels, rows, 1.0 / static_cast<double>(rows.size()));
}

inline std::size_t count_correct(const Matrix& logits, const std::vector<int32_t>& labels,
                                 std::span<const uint32_t> rows) {
  std::size_t correct = 0;
  for (uint32_t r : rows) {
    const double* row = logits.data.data() + r * logits.cols;
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols; ++c)
      if (row[c] > row[best]) best = c;
    correct += static_cast<int32_t>(best) == labels[r];
  }
  return correct;
}

}  // namespace qgnn
