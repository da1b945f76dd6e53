#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qgnn/common/errors.hpp"
#include "qgnn/trainer/experiment.hpp"

namespace qgnn {

inline RunMode parse_bit_mode(const std::string& s) {
  if (s == "fp") return {BitMode::kFp, 8};
  if (s == "uniform") return {BitMode::kUniform, 8};
  if (s == "adaptive") return {BitMode::kAdaptive, 8};
  if (s.rfind("fixed:", 0) == 0) {
    int b = 0;
    try {
      b = std::stoi(s.substr(6));
    } catch (const std::exception&) {
      throw std::invalid_argument("mode: bad bit width in '" + s + "'");
    }
    if (b != 2 && b != 4 && b != 8)
      throw std::invalid_argument("mode: fixed bit width must be 2, 4, or 8");
    return {BitMode::kFixed, b};
  }
  throw std::invalid_argument("mode must be fp, fixed:<2|4|8>, uniform, or adaptive");
}

// Run configuration. Everything has a default so a config file or CLI flags
// only need to override what differs.
struct RunConfig {
  std::string dataset;  // dataset directory; required for train
  std::size_t parts = 4;
  std::string mode = "adaptive";
  std::size_t epochs = 200;
  uint64_t seed = 7;
  double lr = 0.01;
  std::string opt = "adam";
  std::string agg = "gcn";
  std::vector<std::size_t> hidden = {64};
  bool layer_norm = false;
  double dropout = 0.0;
  double lambda = 0.5;
  std::size_t period = 50;
  std::size_t group_size = 4;
  double theta = 3e-9;
  double gamma = 5e-5;
  std::string cost_model;  // optional per-pair file; overrides theta/gamma
  double flop_rate = 2e-10;
  double quant_rate = 1.5e-9;
  std::string exec = "roundrobin";
  std::string out;
  std::string run_name = "run";

  void set(const std::string& key, const std::string& value) {
    try {
      if (key == "dataset") dataset = value;
      else if (key == "parts") parts = std::stoul(value);
      else if (key == "mode") mode = value;
      else if (key == "epochs") epochs = std::stoul(value);
      else if (key == "seed") seed = std::stoull(value);
      else if (key == "lr") lr = std::stod(value);
      else if (key == "opt") opt = value;
      else if (key == "agg") agg = value;
      else if (key == "hidden") {
        hidden.clear();
        std::istringstream hs(value);
        std::string tok;
        while (std::getline(hs, tok, ',')) hidden.push_back(std::stoul(tok));
      }
      else if (key == "layer_norm") layer_norm = value == "1" || value == "true";
      else if (key == "dropout") dropout = std::stod(value);
      else if (key == "lambda") lambda = std::stod(value);
      else if (key == "period") period = std::stoul(value);
      else if (key == "group_size") group_size = std::stoul(value);
      else if (key == "theta") theta = std::stod(value);
      else if (key == "gamma") gamma = std::stod(value);
      else if (key == "cost_model") cost_model = value;
      else if (key == "flop_rate") flop_rate = std::stod(value);
      else if (key == "quant_rate") quant_rate = std::stod(value);
      else if (key == "exec") exec = value;
      else if (key == "out") out = value;
      else if (key == "run_name") run_name = value;
      else throw std::invalid_argument("config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad value for '" + key + "': '" + value + "'");
    }
  }

  TrainSettings to_settings(std::size_t feature_dim, std::size_t classes) const {
    TrainSettings s;
    if (agg == "gcn") s.agg = AggMode::kGcn;
    else if (agg == "sage") s.agg = AggMode::kSageMean;
    else throw std::invalid_argument("config: agg must be gcn or sage");
    s.dims.push_back(feature_dim);
    for (std::size_t h : hidden) s.dims.push_back(h);
    s.dims.push_back(classes);
    s.layer_norm = layer_norm;
    s.dropout = dropout;
    if (opt == "adam") s.opt = OptKind::kAdam;
    else if (opt == "gd") s.opt = OptKind::kGd;
    else throw std::invalid_argument("config: opt must be adam or gd");
    s.lr = lr;
    const RunMode m = parse_bit_mode(mode);
    s.bit_mode = m.mode;
    s.fixed_bits = m.fixed_bits;
    s.lambda = lambda;
    s.group_size = group_size;
    s.period = period;
    s.epochs = epochs;
    s.seed = seed;
    s.n_parts = parts;
    if (exec == "roundrobin") s.exec = ExecMode::kRoundRobin;
    else if (exec == "threads") s.exec = ExecMode::kThreads;
    else throw std::invalid_argument("config: exec must be roundrobin or threads");
    if (!cost_model.empty()) s.cost = CostModel::from_file(cost_model, parts);
    else s.cost = CostModel::uniform(parts, theta, gamma);
    s.flop_rate = flop_rate;
    s.quant_rate = quant_rate;
    s.out_dir = out;
    s.run_name = run_name;
    return s;
  }
};

namespace detail {
inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace detail

// key=value lines; '#' starts a comment, blank lines are skipped.
inline void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw IoError(path + ":" + std::to_string(lineno) + ": expected key=value");
    try {
      cfg.set(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace qgnn
