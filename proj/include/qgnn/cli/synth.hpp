#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "qgnn/common/errors.hpp"
#include "qgnn/graphcore/graph.hpp"
#include "qgnn/quantcodec/rng.hpp"

namespace qgnn {

enum class SynthKind { kSbm, kCite };

// Synthetic node-classification data. Blocks follow the labels: kSbm wires
// each unordered pair independently (p_intra within a class, p_inter across),
// kCite grows the graph by preferential attachment with a same-class bias.
// Features are class-mean Gaussians; sep scales the means against unit noise.
struct DatasetSpec {
  SynthKind kind = SynthKind::kSbm;
  std::size_t nodes = 1000;
  std::size_t classes = 4;
  std::size_t feature_dim = 32;
  double p_intra = 0.01;
  double p_inter = 0.001;
  std::size_t attach_edges = 4;  // kCite: edges per arriving node
  double same_class_bias = 0.8;  // kCite: chance an attachment stays in-class
  double sep = 1.0;
  double train_frac = 0.6, val_frac = 0.2, test_frac = 0.2;
  uint64_t seed = 1;

  void validate() const {
    if (nodes < 4) throw std::invalid_argument("dataset: need at least 4 nodes");
    if (classes < 2 || classes > nodes) throw std::invalid_argument("dataset: bad class count");
    if (feature_dim == 0) throw std::invalid_argument("dataset: feature_dim must be > 0");
    for (double p : {p_intra, p_inter})
      if (p < 0.0 || p > 1.0) throw std::invalid_argument("dataset: edge probability outside [0, 1]");
    if (same_class_bias < 0.0 || same_class_bias > 1.0)
      throw std::invalid_argument("dataset: same_class_bias outside [0, 1]");
    if (kind == SynthKind::kCite && attach_edges == 0)
      throw std::invalid_argument("dataset: attach_edges must be > 0");
    for (double f : {train_frac, val_frac, test_frac})
      if (f < 0.0 || f > 1.0) throw std::invalid_argument("dataset: split fraction outside [0, 1]");
    if (train_frac + val_frac + test_frac > 1.0 + 1e-12)
      throw std::invalid_argument("dataset: split fractions exceed 1");
    if (train_frac == 0.0) throw std::invalid_argument("dataset: empty train split");
  }
};

inline Graph generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  RngStream root(spec.seed);

  // balanced labels in shuffled order
  std::vector<int32_t> labels(spec.nodes);
  for (std::size_t i = 0; i < spec.nodes; ++i)
    labels[i] = static_cast<int32_t>(i % spec.classes);
  {
    RngStream r = root.fork(0x51);
    for (std::size_t i = spec.nodes; i > 1; --i)
      std::swap(labels[i - 1], labels[r.next_below(i)]);
  }

  std::vector<std::pair<NodeId, NodeId>> edges;
  if (spec.kind == SynthKind::kSbm) {
    RngStream r = root.fork(0x52);
    for (std::size_t u = 0; u < spec.nodes; ++u) {
      for (std::size_t v = u + 1; v < spec.nodes; ++v) {
        const double p = labels[u] == labels[v] ? spec.p_intra : spec.p_inter;
        if (r.next_double() < p)
          edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
      }
    }
  } else {
    RngStream r = root.fork(0x53);
    std::vector<std::vector<NodeId>> by_class(spec.classes);
    std::vector<NodeId> endpoints;  // attachment pool, one entry per endpoint
    const std::size_t seed_nodes = std::min(spec.nodes, spec.attach_edges + 1);
    for (std::size_t u = 0; u < seed_nodes; ++u) {
      for (std::size_t v = u + 1; v < seed_nodes; ++v) {
        edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
        endpoints.push_back(static_cast<NodeId>(u));
        endpoints.push_back(static_cast<NodeId>(v));
      }
      by_class[static_cast<std::size_t>(labels[u])].push_back(static_cast<NodeId>(u));
    }
    for (std::size_t u = seed_nodes; u < spec.nodes; ++u) {
      const auto& mine = by_class[static_cast<std::size_t>(labels[u])];
      for (std::size_t e = 0; e < spec.attach_edges; ++e) {
        NodeId v;
        if (!mine.empty() && r.next_double() < spec.same_class_bias)
          v = mine[r.next_below(mine.size())];
        else
          v = endpoints[r.next_below(endpoints.size())];
        if (v == static_cast<NodeId>(u)) continue;
        edges.emplace_back(static_cast<NodeId>(u), v);
        endpoints.push_back(static_cast<NodeId>(u));
        endpoints.push_back(v);
      }
      by_class[static_cast<std::size_t>(labels[u])].push_back(static_cast<NodeId>(u));
    }
  }

  Graph g = build_graph(spec.nodes, edges);
  g.labels = std::move(labels);

  // class means drawn once, then per-node noise
  Matrix means(spec.classes, spec.feature_dim);
  {
    RngStream r = root.fork(0x54);
    for (double& x : means.data) x = r.next_gaussian();
  }
  g.features = Matrix(spec.nodes, spec.feature_dim);
  for (std::size_t v = 0; v < spec.nodes; ++v) {
    RngStream r = root.fork({0x55, v});
    for (std::size_t j = 0; j < spec.feature_dim; ++j)
      g.features(v, j) = spec.sep * means(static_cast<std::size_t>(g.labels[v]), j) +
                         r.next_gaussian();
  }

  std::vector<NodeId> order(spec.nodes);
  std::iota(order.begin(), order.end(), 0);
  {
    RngStream r = root.fork(0x56);
    for (std::size_t i = spec.nodes; i > 1; --i)
      std::swap(order[i - 1], order[r.next_below(i)]);
  }
  const std::size_t n_train = static_cast<std::size_t>(spec.train_frac * static_cast<double>(spec.nodes));
  const std::size_t n_val = static_cast<std::size_t>(spec.val_frac * static_cast<double>(spec.nodes));
  const std::size_t n_test = static_cast<std::size_t>(spec.test_frac * static_cast<double>(spec.nodes));
  g.train_mask.assign(spec.nodes, 0);
  g.val_mask.assign(spec.nodes, 0);
  g.test_mask.assign(spec.nodes, 0);
  for (std::size_t i = 0; i < spec.nodes; ++i) {
    if (i < n_train)
      g.train_mask[order[i]] = 1;
    else if (i < n_train + n_val)
      g.val_mask[order[i]] = 1;
    else if (i < n_train + n_val + n_test)
      g.test_mask[order[i]] = 1;
  }
  g.validate();
  return g;
}

// Dataset directory layout: edges.txt, features.bin, labels.txt,
// {train,val,test}_mask.txt, meta.json.
inline void save_dataset(const Graph& g, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path base(dir);
  {
    std::ofstream out(base / "edges.txt");
    if (!out) throw IoError("cannot write edges: " + dir);
    for (NodeId v = 0; v < g.num_nodes; ++v)
      for (NodeId u : g.neighbors(v))
        if (v < u) out << v << " " << u << "\n";
  }
  save_matrix_bin((base / "features.bin").string(), g.features);
  {
    std::ofstream out(base / "labels.txt");
    if (!out) throw IoError("cannot write labels: " + dir);
    for (int32_t y : g.labels) out << y << "\n";
  }
  save_mask((base / "train_mask.txt").string(), g.train_mask);
  save_mask((base / "val_mask.txt").string(), g.val_mask);
  save_mask((base / "test_mask.txt").string(), g.test_mask);
  int32_t classes = 0;
  for (int32_t y : g.labels) classes = std::max(classes, y + 1);
  nlohmann::json meta{{"nodes", g.num_nodes},
                      {"edges", g.num_edges()},
                      {"classes", classes},
                      {"feature_dim", g.features.cols}};
  std::ofstream mf(base / "meta.json");
  if (!mf) throw IoError("cannot write meta: " + dir);
  mf << meta.dump(2) << "\n";
}

inline Graph load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path base(dir);
  std::ifstream mf(base / "meta.json");
  if (!mf) throw IoError("cannot open dataset meta: " + dir);
  nlohmann::json meta;
  try {
    mf >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad dataset meta in " + dir + ": " + e.what());
  }
  const std::size_t nodes = meta.at("nodes").get<std::size_t>();

  Graph g = build_graph(nodes, load_edge_list((base / "edges.txt").string()));
  g.features = load_matrix_bin((base / "features.bin").string());
  if (g.features.rows != nodes) throw IoError("dataset features row count mismatch: " + dir);
  g.labels = load_labels((base / "labels.txt").string(), nodes);
  g.train_mask = load_mask((base / "train_mask.txt").string(), nodes);
  g.val_mask = load_mask((base / "val_mask.txt").string(), nodes);
  g.test_mask = load_mask((base / "test_mask.txt").string(), nodes);
  g.validate();
  return g;
}

}  // namespace qgnn
