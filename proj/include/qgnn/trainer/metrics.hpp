#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qgnn/common/errors.hpp"

namespace qgnn {

// One epoch of observability. Simulated seconds cover the slowest device;
// bytes_per_pair is a flattened src-major N x N matrix of wire bytes sent.
struct EpochMetrics {
  uint64_t epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  double sim_comm_s = 0.0;
  double sim_central_s = 0.0;
  double sim_marginal_s = 0.0;
  double sim_quant_s = 0.0;
  double sim_total_s = 0.0;
  double sim_serialized_s = 0.0;
  uint64_t bytes_total = 0;
  std::vector<uint64_t> bytes_per_pair;
  uint64_t plan_version = 0;
  uint64_t msgs_b2 = 0, msgs_b4 = 0, msgs_b8 = 0, msgs_fp = 0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"epoch", epoch},
                          {"train_loss", train_loss},
                          {"val_acc", val_acc},
                          {"test_acc", test_acc},
                          {"sim_comm_s", sim_comm_s},
                          {"sim_central_s", sim_central_s},
                          {"sim_marginal_s", sim_marginal_s},
                          {"sim_quant_s", sim_quant_s},
                          {"sim_total_s", sim_total_s},
                          {"sim_serialized_s", sim_serialized_s},
                          {"bytes_total", bytes_total},
                          {"bytes_per_pair", bytes_per_pair},
                          {"plan_version", plan_version},
                          {"msgs_b2", msgs_b2},
                          {"msgs_b4", msgs_b4},
                          {"msgs_b8", msgs_b8},
                          {"msgs_fp", msgs_fp}};
  }

  static EpochMetrics from_json(const nlohmann::json& j) {
    EpochMetrics m;
    m.epoch = j.at("epoch").get<uint64_t>();
    m.train_loss = j.at("train_loss").get<double>();
    m.val_acc = j.at("val_acc").get<double>();
    m.test_acc = j.at("test_acc").get<double>();
    m.sim_comm_s = j.at("sim_comm_s").get<double>();
    m.sim_central_s = j.at("sim_central_s").get<double>();
    m.sim_marginal_s = j.at("sim_marginal_s").get<double>();
    m.sim_quant_s = j.at("sim_quant_s").get<double>();
    m.sim_total_s = j.at("sim_total_s").get<double>();
    m.sim_serialized_s = j.at("sim_serialized_s").get<double>();
    m.bytes_total = j.at("bytes_total").get<uint64_t>();
    m.bytes_per_pair = j.at("bytes_per_pair").get<std::vector<uint64_t>>();
    m.plan_version = j.at("plan_version").get<uint64_t>();
    m.msgs_b2 = j.at("msgs_b2").get<uint64_t>();
    m.msgs_b4 = j.at("msgs_b4").get<uint64_t>();
    m.msgs_b8 = j.at("msgs_b8").get<uint64_t>();
    m.msgs_fp = j.at("msgs_fp").get<uint64_t>();
    return m;
  }
};

inline void write_metrics_jsonl(const std::string& path, const std::vector<EpochMetrics>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metrics: " + path);
  for (const EpochMetrics& m : rows) out << m.to_json().dump() << "\n";
}

inline std::vector<EpochMetrics> read_metrics_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics: " + path);
  std::vector<EpochMetrics> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      rows.push_back(EpochMetrics::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace qgnn
