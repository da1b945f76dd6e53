#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "qgnn/common/errors.hpp"

namespace qgnn {

// Affine transfer time per ordered device pair: seconds = theta * bits + gamma.
struct CostModel {
  std::size_t num_devices = 0;
  std::vector<double> theta;  // s per bit, indexed src * N + dst
  std::vector<double> gamma;  // s per transfer

  double transfer_seconds(std::size_t src, std::size_t dst, double bits) const {
    const std::size_t i = src * num_devices + dst;
    return theta[i] * bits + gamma[i];
  }

  static CostModel uniform(std::size_t n, double theta_, double gamma_) {
    CostModel cm;
    cm.num_devices = n;
    cm.theta.assign(n * n, theta_);
    cm.gamma.assign(n * n, gamma_);
    return cm;
  }

  // File format: one "src dst theta gamma" line per ordered pair; '#' comments.
  static CostModel from_file(const std::string& path, std::size_t n) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open cost model: " + path);
    CostModel cm = uniform(n, 0.0, 0.0);
    std::vector<char> seen(n * n, 0);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      std::istringstream ls(line);
      std::size_t src, dst;
      double th, ga;
      if (!(ls >> src)) continue;
      if (!(ls >> dst >> th >> ga))
        throw IoError(path + ":" + std::to_string(lineno) + ": expected 'src dst theta gamma'");
      if (src >= n || dst >= n)
        throw IoError(path + ":" + std::to_string(lineno) + ": device id out of range");
      cm.theta[src * n + dst] = th;
      cm.gamma[src * n + dst] = ga;
      seen[src * n + dst] = 1;
    }
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t d = 0; d < n; ++d)
        if (s != d && !seen[s * n + d])
          throw IoError(path + ": missing pair " + std::to_string(s) + "->" + std::to_string(d));
    return cm;
  }

  void to_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write cost model: " + path);
    out << "# src dst theta gamma\n";
    out.precision(17);
    for (std::size_t s = 0; s < num_devices; ++s)
      for (std::size_t d = 0; d < num_devices; ++d)
        if (s != d)
          out << s << " " << d << " " << theta[s * num_devices + d] << " "
              << gamma[s * num_devices + d] << "\n";
  }
};

// Per-pair least squares over (bits, seconds) samples. Exact on two points;
// negative fitted coefficients are clamped to zero.
inline CostModel fit_cost_model(
    std::size_t n, const std::vector<std::vector<std::pair<double, double>>>& samples) {
  if (samples.size() != n * n) throw std::invalid_argument("fit_cost_model: need N*N sample lists");
  CostModel cm = CostModel::uniform(n, 0.0, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t d = 0; d < n; ++d) {
      if (s == d) continue;
      const auto& pts = samples[s * n + d];
      if (pts.size() < 2)
        throw std::invalid_argument("fit_cost_model: need at least 2 samples per pair");
      double mx = 0, my = 0;
      for (auto [x, y] : pts) {
        mx += x;
        my += y;
      }
      mx /= static_cast<double>(pts.size());
      my /= static_cast<double>(pts.size());
      double sxx = 0, sxy = 0;
      for (auto [x, y] : pts) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
      }
      if (sxx == 0.0)
        throw std::invalid_argument("fit_cost_model: need at least 2 distinct sizes per pair");
      double th = sxy / sxx;
      double ga = my - th * mx;
      cm.theta[s * n + d] = std::max(0.0, th);
      cm.gamma[s * n + d] = std::max(0.0, ga);
    }
  }
  return cm;
}

}  // namespace qgnn
