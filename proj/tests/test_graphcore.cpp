#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "qgnn/graphcore/coeffs.hpp"
#include "qgnn/graphcore/graph.hpp"
#include "qgnn/graphcore/partition.hpp"
#include "qgnn/quantcodec/rng.hpp"

using namespace qgnn;

namespace {

Graph random_graph(std::size_t n, double p, uint64_t seed) {
  RngStream r(seed);
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId u = 0; u < n; ++u)
    for (NodeId v = u + 1; v < n; ++v)
      if (r.next_double() < p) edges.emplace_back(u, v);
  return build_graph(n, edges);
}

Graph path4() {
  return build_graph(4, {{0, 1}, {1, 2}, {2, 3}});
}

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "qgnn_graphcore_test";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("build_graph symmetrizes, deduplicates, and drops self loops") {
  const Graph g = build_graph(4, {{0, 1}, {1, 0}, {1, 1}, {2, 1}, {0, 3}, {0, 1}});
  g.validate();
  REQUIRE(g.num_nodes == 4);
  REQUIRE(g.num_edges() == 3);
  REQUIRE(g.degree(0) == 2);
  REQUIRE(g.degree(1) == 2);
  REQUIRE(g.degree(2) == 1);
  REQUIRE(g.degree(3) == 1);
  REQUIRE(g.has_edge(0, 1));
  REQUIRE(g.has_edge(1, 0));
  REQUIRE(g.has_edge(1, 2));
  REQUIRE(g.has_edge(0, 3));
  REQUIRE_FALSE(g.has_edge(1, 1));
  REQUIRE_FALSE(g.has_edge(2, 3));

  REQUIRE_THROWS_AS(build_graph(2, {{0, 5}}), std::invalid_argument);
}

TEST_CASE("graph validation catches malformed adjacency") {
  Graph g = path4();
  g.adj[0] = 2;  // 0 now claims neighbor 2, but 2 does not list 0
  REQUIRE_THROWS_AS(g.validate(), std::invalid_argument);

  Graph self = path4();
  self.adj[0] = 0;
  REQUIRE_THROWS_AS(self.validate(), std::invalid_argument);

  Graph masks = path4();
  masks.train_mask = {1, 0, 0, 0};
  masks.val_mask = {1, 0, 0, 0};
  masks.test_mask = {0, 0, 0, 0};
  REQUIRE_THROWS_AS(masks.validate(), std::invalid_argument);
}

TEST_CASE("edge list loader handles comments and rejects bad lines") {
  const auto dir = temp_dir();
  const auto path = (dir / "edges.txt").string();
  {
    std::ofstream out(path);
    out << "# header comment\n0 1\n\n1 2   # trailing comment\n2 3\n";
  }
  std::size_t max_node = 0;
  const auto edges = load_edge_list(path, &max_node);
  REQUIRE(edges == std::vector<std::pair<NodeId, NodeId>>{{0, 1}, {1, 2}, {2, 3}});
  REQUIRE(max_node == 4);

  const auto bad = (dir / "bad_edges.txt").string();
  {
    std::ofstream out(bad);
    out << "0 1\n7\n";
  }
  REQUIRE_THROWS_AS(load_edge_list(bad), IoError);
  REQUIRE_THROWS_AS(load_edge_list((dir / "missing.txt").string()), IoError);
}

TEST_CASE("binary matrix container roundtrips exactly") {
  const auto dir = temp_dir();
  const auto path = (dir / "m.bin").string();
  Matrix m(3, 2);
  m(0, 0) = -1.5;
  m(0, 1) = 0.0;
  m(1, 0) = 3.25;
  m(1, 1) = 1e-300;
  m(2, 0) = -7.0;
  m(2, 1) = 0.1;
  save_matrix_bin(path, m);
  const Matrix back = load_matrix_bin(path);
  REQUIRE(back.rows == 3);
  REQUIRE(back.cols == 2);
  REQUIRE(back.data == m.data);

  {
    std::ofstream out((dir / "trunc.bin").string(), std::ios::binary);
    out.write("\x02\x00", 2);
  }
  REQUIRE_THROWS_AS(load_matrix_bin((dir / "trunc.bin").string()), IoError);
  REQUIRE_THROWS_AS(load_matrix_bin((dir / "nope.bin").string()), IoError);
}

TEST_CASE("csv matrix loader validates shape and numbers") {
  const auto dir = temp_dir();
  const auto good = (dir / "m.csv").string();
  {
    std::ofstream out(good);
    out << "1.5,2\n-3,0.25\n";
  }
  const Matrix m = load_matrix_csv(good);
  REQUIRE(m.rows == 2);
  REQUIRE(m.cols == 2);
  REQUIRE(m(0, 0) == 1.5);
  REQUIRE(m(1, 1) == 0.25);

  const auto ragged = (dir / "ragged.csv").string();
  {
    std::ofstream out(ragged);
    out << "1,2\n3\n";
  }
  REQUIRE_THROWS_AS(load_matrix_csv(ragged), IoError);

  const auto junk = (dir / "junk.csv").string();
  {
    std::ofstream out(junk);
    out << "1,abc\n";
  }
  REQUIRE_THROWS_AS(load_matrix_csv(junk), IoError);
}

TEST_CASE("label and mask files roundtrip") {
  const auto dir = temp_dir();
  const auto lpath = (dir / "labels.txt").string();
  {
    std::ofstream out(lpath);
    out << "2\n0\n1\n1\n";
  }
  REQUIRE(load_labels(lpath, 4) == std::vector<int32_t>{2, 0, 1, 1});
  REQUIRE_THROWS_AS(load_labels(lpath, 3), IoError);
  REQUIRE_THROWS_AS(load_labels(lpath, 5), IoError);

  const auto mpath = (dir / "mask.txt").string();
  save_mask(mpath, {1, 0, 0, 1});
  REQUIRE(load_mask(mpath, 4) == std::vector<uint8_t>{1, 0, 0, 1});
  {
    std::ofstream out(mpath);
    out << "9\n";
  }
  REQUIRE_THROWS_AS(load_mask(mpath, 4), IoError);
}

TEST_CASE("single partition owns everything as central nodes") {
  const Graph g = path4();
  const auto parts = partition_graph(g, 1, 0);
  REQUIRE(parts.size() == 1);
  REQUIRE(parts[0].owned == std::vector<NodeId>{0, 1, 2, 3});
  REQUIRE(parts[0].central == std::vector<NodeId>{0, 1, 2, 3});
  REQUIRE(parts[0].marginal.empty());
}

TEST_CASE("path graph split across two devices marks the cut nodes marginal") {
  const Graph g = path4();
  const auto parts = partitions_from_owner(g, {0, 0, 1, 1}, 2);

  REQUIRE(parts[0].owned == std::vector<NodeId>{0, 1});
  REQUIRE(parts[0].central == std::vector<NodeId>{0});
  REQUIRE(parts[0].marginal == std::vector<NodeId>{1});
  REQUIRE(parts[0].remote_out[1] == std::vector<NodeId>{1});
  REQUIRE(parts[0].remote_in[1] == std::vector<NodeId>{2});

  REQUIRE(parts[1].central == std::vector<NodeId>{3});
  REQUIRE(parts[1].marginal == std::vector<NodeId>{2});
  REQUIRE(parts[1].remote_out[0] == std::vector<NodeId>{2});
  REQUIRE(parts[1].remote_in[0] == std::vector<NodeId>{1});

  const auto split = split_local_remote(parts[0], g);
  // owned row 1 is node 1: local neighbor 0, remote neighbor 2
  REQUIRE(split.local_of(1).size() == 1);
  REQUIRE(split.local_of(1)[0] == 0);
  REQUIRE(split.remote_of(1).size() == 1);
  REQUIRE(split.remote_of(1)[0] == 2);
  // node 0 is central: no remote neighbors
  REQUIRE(split.remote_of(0).empty());
}

TEST_CASE("partition_graph rejects bad part counts") {
  const Graph g = path4();
  REQUIRE_THROWS_AS(partition_graph(g, 0, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(partition_graph(g, 5, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(partitions_from_owner(g, {0, 0, 1}, 2), std::invalid_argument);
  REQUIRE_THROWS_AS(partitions_from_owner(g, {0, 0, 2, 0}, 2), std::invalid_argument);
}

TEST_CASE("partitions balance sizes and are deterministic per seed") {
  const Graph g = random_graph(103, 0.05, 21);
  const auto parts = partition_graph(g, 4, 77);
  std::size_t total = 0;
  for (const auto& p : parts) {
    REQUIRE(p.owned.size() >= 103 / 4);
    REQUIRE(p.owned.size() <= 103 / 4 + 1);
    total += p.owned.size();
  }
  REQUIRE(total == 103);

  const auto again = partition_graph(g, 4, 77);
  for (std::size_t p = 0; p < 4; ++p) REQUIRE(parts[p].owned == again[p].owned);

  std::set<NodeId> seen;
  for (const auto& p : parts) seen.insert(p.owned.begin(), p.owned.end());
  REQUIRE(seen.size() == 103);
}

TEST_CASE("remote index sets agree pairwise and cover exactly the cut edges") {
  const Graph g = random_graph(100, 0.06, 5);
  const std::size_t n_parts = 4;
  const auto parts = partition_graph(g, n_parts, 13);

  std::vector<uint32_t> owner(g.num_nodes, 0);
  for (const auto& p : parts)
    for (NodeId v : p.owned) owner[v] = p.device_id;

  for (std::size_t p = 0; p < n_parts; ++p) {
    for (std::size_t q = 0; q < n_parts; ++q) {
      if (p == q) continue;
      REQUIRE(parts[p].remote_in[q] == parts[q].remote_out[p]);
      REQUIRE(std::is_sorted(parts[p].remote_in[q].begin(), parts[p].remote_in[q].end()));
    }
  }

  // Brute force from the edge list: k appears in remote_in[owner(k)] on device
  // d iff k has a neighbor owned by d.
  for (std::size_t d = 0; d < n_parts; ++d) {
    std::vector<std::set<NodeId>> expect_in(n_parts);
    for (NodeId v : parts[d].owned)
      for (NodeId u : g.neighbors(v))
        if (owner[u] != d) expect_in[owner[u]].insert(u);
    for (std::size_t q = 0; q < n_parts; ++q) {
      const std::vector<NodeId> want(expect_in[q].begin(), expect_in[q].end());
      REQUIRE(parts[d].remote_in[q] == want);
    }
  }

  // Marginal iff some neighbor lives elsewhere; central plus marginal = owned.
  for (const auto& p : parts) {
    std::vector<NodeId> merged;
    std::merge(p.central.begin(), p.central.end(), p.marginal.begin(), p.marginal.end(),
               std::back_inserter(merged));
    REQUIRE(merged == p.owned);
    for (NodeId v : p.owned) {
      bool cross = false;
      for (NodeId u : g.neighbors(v)) cross = cross || owner[u] != p.device_id;
      const bool marked =
          std::binary_search(p.marginal.begin(), p.marginal.end(), v);
      REQUIRE(marked == cross);
    }
  }
}

TEST_CASE("aggregation coefficients follow the degree formulas") {
  // Star: center 0 with leaves 1,2,3 plus a pendant 4 on leaf 1.
  const Graph g = build_graph(5, {{0, 1}, {0, 2}, {0, 3}, {1, 4}});
  const AggCoeffs gcn = compute_coeffs(g, AggMode::kGcn);

  // d_4 = 1, d_1 = 2: alpha = 1 / sqrt(2 * 3)
  REQUIRE(gcn.of(g, 4, 1) == Catch::Approx(1.0 / std::sqrt(6.0)).epsilon(1e-15));
  // d_1 = 2, d_0 = 3: alpha = 1 / sqrt(3 * 4)
  REQUIRE(gcn.of(g, 1, 0) == Catch::Approx(1.0 / std::sqrt(12.0)).epsilon(1e-15));
  // self pair uses 1 / (d + 1)
  REQUIRE(gcn.of(g, 0, 0) == Catch::Approx(0.25).epsilon(1e-15));

  const Graph lone = build_graph(1, {});
  const AggCoeffs lone_c = compute_coeffs(lone, AggMode::kGcn);
  REQUIRE(lone_c.of(lone, 0, 0) == 1.0);

  // Hand case from the degree formula: d_u = 1, d_v = 3.
  const Graph h = build_graph(5, {{0, 1}, {1, 2}, {1, 3}});
  REQUIRE(compute_coeffs(h, AggMode::kGcn).of(h, 0, 1) ==
          Catch::Approx(1.0 / std::sqrt(8.0)).epsilon(1e-15));

  const AggCoeffs sage = compute_coeffs(g, AggMode::kSageMean);
  // node 0 has degree 3: every contributor weighs 1/4
  REQUIRE(sage.of(g, 0, 0) == 0.25);
  REQUIRE(sage.of(g, 1, 0) == 0.25);
  REQUIRE(sage.of(g, 2, 0) == 0.25);
  REQUIRE(sage.of(g, 3, 0) == 0.25);

  REQUIRE_THROWS_AS(gcn.of(g, 4, 0), std::invalid_argument);
}

TEST_CASE("gcn coefficients are symmetric, sage rows sum to one") {
  const Graph g = random_graph(60, 0.08, 33);
  const AggCoeffs gcn = compute_coeffs(g, AggMode::kGcn);
  const AggCoeffs sage = compute_coeffs(g, AggMode::kSageMean);

  for (NodeId v = 0; v < g.num_nodes; ++v) {
    double row_sum = sage.of(g, v, v);
    for (NodeId u : g.neighbors(v)) {
      REQUIRE(gcn.of(g, u, v) == Catch::Approx(gcn.of(g, v, u)).epsilon(1e-15));
      REQUIRE(gcn.of(g, u, v) > 0.0);
      row_sum += sage.of(g, u, v);
    }
    REQUIRE(row_sum == Catch::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("local plus remote neighbor lists reconstruct the adjacency") {
  const Graph g = random_graph(50, 0.1, 8);
  const auto parts = partition_graph(g, 4, 3);
  std::vector<uint32_t> owner(g.num_nodes, 0);
  for (const auto& p : parts)
    for (NodeId v : p.owned) owner[v] = p.device_id;

  for (const auto& p : parts) {
    const auto split = split_local_remote(p, g);
    for (std::size_t i = 0; i < p.owned.size(); ++i) {
      const NodeId v = p.owned[i];
      const auto local = split.local_of(i);
      const auto remote = split.remote_of(i);
      REQUIRE(local.size() + remote.size() == g.degree(v));
      std::vector<NodeId> merged(local.begin(), local.end());
      merged.insert(merged.end(), remote.begin(), remote.end());
      std::sort(merged.begin(), merged.end());
      const auto ns = g.neighbors(v);
      REQUIRE(merged == std::vector<NodeId>(ns.begin(), ns.end()));
      for (NodeId u : local) REQUIRE(owner[u] == p.device_id);
      for (NodeId u : remote) REQUIRE(owner[u] != p.device_id);
    }
  }
}
