#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "qgnn/trainer/engine.hpp"

namespace qgnn {

struct RunMode {
  BitMode mode = BitMode::kAdaptive;
  int fixed_bits = 8;
};

inline std::string mode_label(RunMode m) {
  switch (m.mode) {
    case BitMode::kFp:
      return "fp";
    case BitMode::kUniform:
      return "uniform";
    case BitMode::kAdaptive:
      return "adaptive";
    case BitMode::kFixed:
      return "fixed" + std::to_string(m.fixed_bits);
  }
  return "unknown";
}

struct RunSummary {
  std::string mode;
  uint64_t seed = 0;
  double final_loss = 0.0;
  double final_val_acc = 0.0;
  double final_test_acc = 0.0;
  double sim_total_s = 0.0;
  uint64_t bytes_total = 0;
  double wall_s = 0.0;
};

// Trains every (mode, seed) combination from the same base settings. Per-run
// metric rows go to out_dir as JSONL; summary.csv collects finals plus
// mean/std aggregates per mode. Wall-clock time appears only here, the
// simulated clocks never mix with it.
inline std::vector<RunSummary> run_experiment(const Graph& g, const TrainSettings& base,
                                              const std::vector<RunMode>& modes,
                                              const std::vector<uint64_t>& seeds,
                                              const std::string& out_dir) {
  if (modes.empty() || seeds.empty())
    throw std::invalid_argument("run_experiment: need at least one mode and seed");
  std::vector<RunSummary> rows;
  for (const RunMode& m : modes) {
    for (uint64_t seed : seeds) {
      TrainSettings s = base;
      s.bit_mode = m.mode;
      s.fixed_bits = m.fixed_bits;
      s.seed = seed;
      s.out_dir = out_dir;
      s.run_name = mode_label(m) + "_s" + std::to_string(seed);
      const auto t0 = std::chrono::steady_clock::now();
      Engine eng(g, s);
      TrainResult r = eng.run();
      const auto t1 = std::chrono::steady_clock::now();

      RunSummary row;
      row.mode = mode_label(m);
      row.seed = seed;
      row.final_loss = r.final_loss;
      row.final_val_acc = r.final_val_acc;
      row.final_test_acc = r.final_test_acc;
      for (const EpochMetrics& em : r.epochs) {
        row.sim_total_s += em.sim_total_s;
        row.bytes_total += em.bytes_total;
      }
      row.wall_s = std::chrono::duration<double>(t1 - t0).count();
      rows.push_back(std::move(row));
    }
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream csv(std::filesystem::path(out_dir) / "summary.csv");
    if (!csv) throw IoError("cannot write experiment summary");
    csv << "mode,seed,final_loss,final_val_acc,final_test_acc,sim_total_s,bytes_total,wall_s\n";
    csv.precision(10);
    for (const RunSummary& r : rows)
      csv << r.mode << "," << r.seed << "," << r.final_loss << "," << r.final_val_acc << ","
          << r.final_test_acc << "," << r.sim_total_s << "," << r.bytes_total << "," << r.wall_s
          << "\n";
    csv << "# aggregates: mode,mean_val_acc,std_val_acc,mean_test_acc,std_test_acc,mean_sim_total_s\n";
    for (const RunMode& m : modes) {
      const std::string label = mode_label(m);
      std::vector<const RunSummary*> sel;
      for (const RunSummary& r : rows)
        if (r.mode == label) sel.push_back(&r);
      auto mean_std = [&sel](auto proj) {
        double mean = 0.0;
        for (const RunSummary* r : sel) mean += proj(*r);
        mean /= static_cast<double>(sel.size());
        double var = 0.0;
        for (const RunSummary* r : sel) var += (proj(*r) - mean) * (proj(*r) - mean);
        var /= static_cast<double>(sel.size());
        return std::pair<double, double>(mean, std::sqrt(var));
      };
      const auto [mv, sv] = mean_std([](const RunSummary& r) { return r.final_val_acc; });
      const auto [mt, st] = mean_std([](const RunSummary& r) { return r.final_test_acc; });
      const auto [ms, _] = mean_std([](const RunSummary& r) { return r.sim_total_s; });
      csv << label << "," << mv << "," << sv << "," << mt << "," << st << "," << ms << "\n";
    }
  }
  return rows;
}

}  // namespace qgnn
