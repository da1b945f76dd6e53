#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qgnn/common/errors.hpp"
#include "qgnn/tensorops/matrix.hpp"

namespace qgnn {

using NodeId = uint32_t;

// Undirected graph in CSR form. Adjacency lists are sorted, self-loop free,
// and symmetric; node features/labels/masks ride along when loaded.
struct Graph {
  std::size_t num_nodes = 0;
  std::vector<std::size_t> adj_ptr;  // size num_nodes + 1
  std::vector<NodeId> adj;

  Matrix features;                  // num_nodes x feature_dim (may be empty)
  std::vector<int32_t> labels;      // may be empty
  std::vector<uint8_t> train_mask, val_mask, test_mask;

  std::size_t degree(NodeId v) const { return adj_ptr[v + 1] - adj_ptr[v]; }
  std::size_t num_edges() const { return adj.size() / 2; }

  std::span<const NodeId> neighbors(NodeId v) const {
    return {adj.data() + adj_ptr[v], degree(v)};
  }

  bool has_edge(NodeId u, NodeId v) const {
    auto ns = neighbors(u);
    return std::binary_search(ns.begin(), ns.end(), v);
  }

  void validate() const {
    if (adj_ptr.size() != num_nodes + 1) throw std::invalid_argument("graph: bad adj_ptr size");
    for (NodeId v = 0; v < num_nodes; ++v) {
      auto ns = neighbors(v);
      for (std::size_t i = 0; i < ns.size(); ++i) {
        if (ns[i] >= num_nodes) throw std::invalid_argument("graph: neighbor out of range");
        if (ns[i] == v) throw std::invalid_argument("graph: self loop");
        if (i && ns[i] <= ns[i - 1]) throw std::invalid_argument("graph: unsorted adjacency");
        if (!has_edge(ns[i], v)) throw std::invalid_argument("graph: asymmetric edge");
      }
    }
    for (std::size_t v = 0; v < train_mask.size(); ++v)
      if (train_mask[v] + val_mask[v] + test_mask[v] > 1)
        throw std::invalid_argument("graph: overlapping masks");
  }
};

// Symmetrizes, deduplicates, and drops self loops.
inline Graph build_graph(std::size_t num_nodes, const std::vector<std::pair<NodeId, NodeId>>& edges) {
  std::vector<std::vector<NodeId>> adj(num_nodes);
  for (auto [u, v] : edges) {
    if (u >= num_nodes || v >= num_nodes) throw std::invalid_argument("edge endpoint out of range");
    if (u == v) continue;
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  Graph g;
  g.num_nodes = num_nodes;
  g.adj_ptr.assign(num_nodes + 1, 0);
  for (std::size_t v = 0; v < num_nodes; ++v) {
    auto& ns = adj[v];
    std::sort(ns.begin(), ns.end());
    ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
    g.adj_ptr[v + 1] = g.adj_ptr[v] + ns.size();
    g.adj.insert(g.adj.end(), ns.begin(), ns.end());
  }
  return g;
}

// --- file formats ---------------------------------------------------------
// Edge list: one "u v" pair per text line, '#' comments allowed.
// Matrix container: u64 rows, u64 cols, then row-major f64, all little endian.
// Masks: one node id per line.

inline std::vector<std::pair<NodeId, NodeId>> load_edge_list(const std::string& path,
                                                             std::size_t* max_node = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open edge list: " + path);
  std::vector<std::pair<NodeId, NodeId>> edges;
  std::size_t hi = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    unsigned long long u, v;
    if (!(ls >> u)) continue;  // blank line
    if (!(ls >> v)) throw IoError(path + ":" + std::to_string(lineno) + ": expected two node ids");
    edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
    hi = std::max({hi, static_cast<std::size_t>(u) + 1, static_cast<std::size_t>(v) + 1});
  }
  if (max_node) *max_node = hi;
  return edges;
}

inline void save_matrix_bin(const std::string& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  uint64_t r = m.rows, c = m.cols;
  out.write(reinterpret_cast<const char*>(&r), 8);
  out.write(reinterpret_cast<const char*>(&c), 8);
  out.write(reinterpret_cast<const char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
  if (!out) throw IoError("short write: " + path);
}

inline Matrix load_matrix_bin(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  uint64_t r = 0, c = 0;
  in.read(reinterpret_cast<char*>(&r), 8);
  in.read(reinterpret_cast<char*>(&c), 8);
  if (!in) throw IoError("truncated header: " + path);
  if (r > (1ull << 32) || c > (1ull << 24)) throw IoError("implausible matrix dims: " + path);
  Matrix m(r, c);
  in.read(reinterpret_cast<char*>(m.data.data()),
          static_cast<std::streamsize>(m.data.size() * sizeof(double)));
  if (!in) throw IoError("truncated payload: " + path);
  return m;
}

inline Matrix load_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError(path + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw IoError(path + ":" + std::to_string(lineno) + ": ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("empty csv: " + path);
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < m.cols; ++j) m(i, j) = rows[i][j];
  return m;
}

inline std::vector<int32_t> load_labels(const std::string& path, std::size_t num_nodes) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open labels: " + path);
  std::vector<int32_t> labels(num_nodes, 0);
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (row >= num_nodes) throw IoError("too many label rows: " + path);
    try {
      labels[row++] = std::stoi(line);
    } catch (const std::exception&) {
      throw IoError(path + ": bad label '" + line + "'");
    }
  }
  if (row != num_nodes) throw IoError("label count mismatch: " + path);
  return labels;
}

inline std::vector<uint8_t> load_mask(const std::string& path, std::size_t num_nodes) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mask: " + path);
  std::vector<uint8_t> mask(num_nodes, 0);
  unsigned long long v;
  while (in >> v) {
    if (v >= num_nodes) throw IoError("mask node id out of range: " + path);
    mask[v] = 1;
  }
  return mask;
}

inline void save_mask(const std::string& path, const std::vector<uint8_t>& mask) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write mask: " + path);
  for (std::size_t v = 0; v < mask.size(); ++v)
    if (mask[v]) out << v << "\n";
}

}  // namespace qgnn
