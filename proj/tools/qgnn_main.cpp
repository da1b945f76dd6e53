// Command-line front end: dataset generation, training, offline bit-width
// assignment, quantizer benchmarking, and metrics reporting.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qgnn/assigner/serialize.hpp"
#include "qgnn/assigner/solve.hpp"
#include "qgnn/cli/config.hpp"
#include "qgnn/cli/synth.hpp"
#include "qgnn/quantcodec/quant.hpp"
#include "qgnn/trainer/engine.hpp"
#include "qgnn/trainer/experiment.hpp"

namespace {

using namespace qgnn;

struct GenArgs {
  std::string out;
  std::string kind = "sbm";
  DatasetSpec spec;
};

int run_gen(const GenArgs& a) {
  DatasetSpec spec = a.spec;
  if (a.kind == "sbm") spec.kind = SynthKind::kSbm;
  else if (a.kind == "cite") spec.kind = SynthKind::kCite;
  else throw std::invalid_argument("gen: kind must be sbm or cite");
  const Graph g = generate_dataset(spec);
  save_dataset(g, a.out);
  std::size_t train = 0, val = 0, test = 0;
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    train += g.train_mask[v];
    val += g.val_mask[v];
    test += g.test_mask[v];
  }
  std::cout << "wrote " << a.out << ": " << g.num_nodes << " nodes, " << g.num_edges()
            << " edges, splits " << train << "/" << val << "/" << test << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  RunConfig cfg;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::string sweep_modes;
  std::string sweep_seeds;
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  return out;
}

int run_train(TrainArgs& a) {
  if (!a.config.empty()) load_config_file(a.cfg, a.config);
  for (const auto& [k, v] : a.overrides) a.cfg.set(k, v);
  if (a.cfg.dataset.empty()) throw std::invalid_argument("train: dataset is required");

  const Graph g = load_dataset(a.cfg.dataset);
  int32_t classes = 0;
  for (int32_t y : g.labels) classes = std::max(classes, y + 1);
  TrainSettings s = a.cfg.to_settings(g.features.cols, static_cast<std::size_t>(classes));

  if (!a.sweep_modes.empty() || !a.sweep_seeds.empty()) {
    std::vector<RunMode> modes;
    for (const std::string& m : split_csv(a.sweep_modes.empty() ? a.cfg.mode : a.sweep_modes))
      modes.push_back(parse_bit_mode(m));
    std::vector<uint64_t> seeds;
    if (a.sweep_seeds.empty())
      seeds.push_back(s.seed);
    else
      for (const std::string& t : split_csv(a.sweep_seeds)) seeds.push_back(std::stoull(t));
    const auto rows = run_experiment(g, s, modes, seeds, s.out_dir);
    for (const RunSummary& r : rows)
      std::cout << r.mode << " seed=" << r.seed << " loss=" << r.final_loss
                << " val=" << r.final_val_acc << " test=" << r.final_test_acc
                << " sim_s=" << r.sim_total_s << " bytes=" << r.bytes_total << "\n";
    if (!s.out_dir.empty()) std::cout << "summary: " << s.out_dir << "/summary.csv\n";
    return 0;
  }

  Engine eng(g, s);
  const TrainResult r = eng.run();
  double sim_total = 0.0, comm = 0.0;
  uint64_t bytes = 0;
  for (const EpochMetrics& em : r.epochs) {
    sim_total += em.sim_total_s;
    comm += em.sim_comm_s;
    bytes += em.bytes_total;
  }
  std::cout << "mode=" << a.cfg.mode << " epochs=" << r.epochs.size()
            << " loss=" << r.final_loss << " val=" << r.final_val_acc
            << " test=" << r.final_test_acc << " sim_s=" << sim_total << " comm_s=" << comm
            << " bytes=" << bytes << " resolves=" << r.resolves.size() << "\n";
  if (!s.out_dir.empty())
    std::cout << "metrics: " << s.out_dir << "/" << s.run_name << ".metrics.jsonl\n";
  return 0;
}

struct AssignArgs {
  std::string stats;
  std::size_t parts = 0;
  double theta = 3e-9, gamma = 5e-5;
  std::string cost_model;
  double lambda = 0.5;
  std::size_t group_size = 4;
  std::string out;
};

int run_assign(const AssignArgs& a) {
  std::ifstream in(a.stats);
  if (!in) throw IoError("cannot open stats: " + a.stats);
  nlohmann::json js;
  try {
    in >> js;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad stats json: ") + e.what());
  }
  const auto stats = stats_from_json(js);
  if (stats.empty()) throw std::invalid_argument("assign: stats are empty");

  std::size_t parts = a.parts;
  if (parts == 0) {
    for (const auto& [key, inst] : stats)
      for (const PairStats& ps : inst.pairs)
        parts = std::max({parts, static_cast<std::size_t>(ps.src) + 1,
                          static_cast<std::size_t>(ps.dst) + 1});
  }
  const CostModel cm = a.cost_model.empty() ? CostModel::uniform(parts, a.theta, a.gamma)
                                            : CostModel::from_file(a.cost_model, parts);

  BitWidthPlan plan;
  plan.version = 1;
  double objective = 0.0, variance = 0.0, z = 0.0, uniform = 0.0;
  for (const auto& [key, inst] : stats) {
    InstancePlan p = group_and_order(inst, a.group_size);
    solve_assignment(p, cm, a.lambda);
    objective += p.objective;
    variance += p.variance_term;
    z += p.z_seconds;
    uniform += uniform_expected_variance(inst);
    plan.instances[key] = std::move(p);
  }
  nlohmann::json out = plan_to_json(plan);
  out["objective"] = objective;
  out["variance_term"] = variance;
  out["z_seconds"] = z;
  out["uniform_variance"] = uniform;
  if (a.out.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    std::ofstream of(a.out);
    if (!of) throw IoError("cannot write plan: " + a.out);
    of << out.dump(2) << "\n";
    std::cout << "objective=" << objective << " variance=" << variance << " z=" << z
              << " plan: " << a.out << "\n";
  }
  return 0;
}

struct BenchArgs {
  std::size_t dim = 64;
  std::size_t samples = 2000;
  double lo = -1.0, hi = 1.0;
  uint64_t seed = 1;
};

int run_quantbench(const BenchArgs& a) {
  if (a.dim == 0 || a.samples == 0)
    throw std::invalid_argument("quantbench: dim and samples must be > 0");
  RngStream root(a.seed);
  std::vector<double> values(a.dim);
  {
    RngStream r = root.fork(1);
    for (double& x : values) x = a.lo + (a.hi - a.lo) * r.next_double();
  }
  std::printf("%-5s %-14s %-14s %-14s %-8s %-10s\n", "bits", "mean_abs_err", "pred_var",
              "emp_var", "ratio", "bytes");
  const double fp_bytes = static_cast<double>(a.dim) * 8.0;
  for (int b : {2, 4, 8}) {
    double lo_v = values[0], hi_v = values[0];
    for (double x : values) {
      lo_v = std::min(lo_v, x);
      hi_v = std::max(hi_v, x);
    }
    const double scale = (hi_v - lo_v) / static_cast<double>((1u << b) - 1);
    const double pred = static_cast<double>(a.dim) * scale * scale / 6.0;
    double err_sum = 0.0, var_sum = 0.0;
    RngStream r = root.fork({2, static_cast<uint64_t>(b)});
    for (std::size_t s = 0; s < a.samples; ++s) {
      RngStream rs = r.fork(s);
      const QuantizedChunk chunk = quantize(values, b, rs);
      const std::vector<double> back = dequantize(chunk);
      double sq = 0.0, mean_err = 0.0;
      for (std::size_t i = 0; i < a.dim; ++i) {
        const double d = back[i] - values[i];
        sq += d * d;
        mean_err += d;
      }
      var_sum += sq;
      err_sum += mean_err / static_cast<double>(a.dim);
    }
    const double emp = var_sum / static_cast<double>(a.samples);
    const double wire = static_cast<double>(chunk_wire_bytes(a.dim, b));
    std::printf("%-5d %-14.6e %-14.6e %-14.6e %-8.3f %-10.0f\n", b,
                std::abs(err_sum) / static_cast<double>(a.samples), pred, emp,
                emp / (pred > 0 ? pred : 1.0), wire);
  }
  std::printf("fp    %-14s %-14s %-14s %-8s %-10.0f\n", "-", "-", "-", "-", fp_bytes);
  return 0;
}

struct ReportArgs {
  std::string dir;
  std::string csv;
};

int run_report(const ReportArgs& a) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(a.dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 14 && name.substr(name.size() - 14) == ".metrics.jsonl")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("report: no .metrics.jsonl files in " + a.dir);

  std::ostringstream out;
  out << "run,epochs,final_loss,final_val_acc,final_test_acc,sim_total_s,comm_frac,bytes_total,"
         "plan_version\n";
  out.precision(10);
  for (const fs::path& f : files) {
    const auto rows = read_metrics_jsonl(f.string());
    if (rows.empty()) continue;
    double sim = 0.0, comm = 0.0;
    uint64_t bytes = 0;
    for (const EpochMetrics& em : rows) {
      sim += em.sim_total_s;
      comm += em.sim_comm_s;
      bytes += em.bytes_total;
    }
    std::string run = f.filename().string();
    run.resize(run.size() - 14);
    const EpochMetrics& last = rows.back();
    out << run << "," << rows.size() << "," << last.train_loss << "," << last.val_acc << ","
        << last.test_acc << "," << sim << "," << (sim > 0 ? comm / sim : 0.0) << "," << bytes
        << "," << last.plan_version << "\n";
  }
  if (a.csv.empty()) {
    std::cout << out.str();
  } else {
    std::ofstream of(a.csv);
    if (!of) throw IoError("cannot write report: " + a.csv);
    of << out.str();
    std::cout << "report: " << a.csv << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distributed GNN training simulator with adaptive message quantization"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* cgen = app.add_subcommand("gen", "generate a synthetic dataset directory");
  cgen->add_option("--out", gen.out, "output directory")->required();
  cgen->add_option("--kind", gen.kind, "sbm or cite");
  cgen->add_option("--nodes", gen.spec.nodes, "node count");
  cgen->add_option("--classes", gen.spec.classes, "label count");
  cgen->add_option("--feature-dim", gen.spec.feature_dim, "feature width");
  cgen->add_option("--p-intra", gen.spec.p_intra, "sbm in-class edge probability");
  cgen->add_option("--p-inter", gen.spec.p_inter, "sbm cross-class edge probability");
  cgen->add_option("--attach-edges", gen.spec.attach_edges, "cite edges per new node");
  cgen->add_option("--bias", gen.spec.same_class_bias, "cite same-class attachment bias");
  cgen->add_option("--sep", gen.spec.sep, "feature class separation");
  cgen->add_option("--train-frac", gen.spec.train_frac, "train fraction");
  cgen->add_option("--val-frac", gen.spec.val_frac, "validation fraction");
  cgen->add_option("--test-frac", gen.spec.test_frac, "test fraction");
  cgen->add_option("--seed", gen.spec.seed, "generator seed");

  TrainArgs train;
  CLI::App* ctrain = app.add_subcommand("train", "train on a dataset directory");
  ctrain->add_option("--config", train.config, "key=value config file");
  auto add_override = [&](const std::string& flag, const std::string& key,
                          const std::string& help) {
    ctrain->add_option_function<std::string>(
        flag, [&train, key](const std::string& v) { train.overrides.emplace_back(key, v); },
        help);
  };
  add_override("--dataset", "dataset", "dataset directory");
  add_override("--mode", "mode", "fp | fixed:<b> | uniform | adaptive");
  add_override("--parts", "parts", "device count");
  add_override("--epochs", "epochs", "training epochs");
  add_override("--seed", "seed", "run seed");
  add_override("--lr", "lr", "learning rate");
  add_override("--opt", "opt", "adam or gd");
  add_override("--agg", "agg", "gcn or sage");
  add_override("--hidden", "hidden", "hidden sizes, comma separated");
  add_override("--layer-norm", "layer_norm", "1 to enable layer norm");
  add_override("--dropout", "dropout", "dropout probability");
  add_override("--lambda", "lambda", "variance/time tradeoff in [0,1]");
  add_override("--period", "period", "epochs between re-solves");
  add_override("--group-size", "group_size", "messages per assignment group");
  add_override("--theta", "theta", "uniform cost: seconds per bit");
  add_override("--gamma", "gamma", "uniform cost: seconds per transfer");
  add_override("--cost-model", "cost_model", "per-pair cost file");
  add_override("--flop-rate", "flop_rate", "seconds per flop");
  add_override("--quant-rate", "quant_rate", "seconds per quantized element");
  add_override("--exec", "exec", "roundrobin or threads");
  add_override("--out", "out", "output directory");
  add_override("--run-name", "run_name", "output file prefix");
  ctrain->add_option("--sweep-modes", train.sweep_modes, "comma list of modes to sweep");
  ctrain->add_option("--sweep-seeds", train.sweep_seeds, "comma list of seeds to sweep");

  AssignArgs assign;
  CLI::App* cassign = app.add_subcommand("assign", "solve bit widths from a stats json");
  cassign->add_option("--stats", assign.stats, "stats json (as dumped by training)")->required();
  cassign->add_option("--parts", assign.parts, "device count (default: inferred)");
  cassign->add_option("--theta", assign.theta, "uniform cost: seconds per bit");
  cassign->add_option("--gamma", assign.gamma, "uniform cost: seconds per transfer");
  cassign->add_option("--cost-model", assign.cost_model, "per-pair cost file");
  cassign->add_option("--lambda", assign.lambda, "variance/time tradeoff in [0,1]");
  cassign->add_option("--group-size", assign.group_size, "messages per assignment group");
  cassign->add_option("--out", assign.out, "write plan json here instead of stdout");

  BenchArgs bench;
  CLI::App* cbench = app.add_subcommand("quantbench", "quantizer error/size benchmark");
  cbench->add_option("--dim", bench.dim, "vector width");
  cbench->add_option("--samples", bench.samples, "Monte Carlo draws");
  cbench->add_option("--lo", bench.lo, "value range low end");
  cbench->add_option("--hi", bench.hi, "value range high end");
  cbench->add_option("--seed", bench.seed, "rng seed");

  ReportArgs report;
  CLI::App* creport = app.add_subcommand("report", "summarize metrics jsonl files");
  creport->add_option("--in", report.dir, "directory with .metrics.jsonl files")->required();
  creport->add_option("--csv", report.csv, "write csv here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cgen->parsed()) return run_gen(gen);
    if (ctrain->parsed()) return run_train(train);
    if (cassign->parsed()) return run_assign(assign);
    if (cbench->parsed()) return run_quantbench(bench);
    if (creport->parsed()) return run_report(report);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
