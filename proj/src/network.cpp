#include "dtdlab/network.hpp"

#include "dtdlab/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

namespace dtdlab {
namespace {
constexpr double kStochasticTol = 1e-12;
}

CommGraph::CommGraph(std::size_t num_agents, std::vector<std::pair<std::size_t, std::size_t>> edges)
    : num_agents_(num_agents) {
  if (num_agents == 0) throw Error("graph needs at least one agent");
  for (auto [u, v] : edges) {
    if (u >= num_agents || v >= num_agents) throw Error("edge endpoint out of range");
    if (u == v) throw Error("self-loops are not stored as edges");
    edges_.emplace_back(std::min(u, v), std::max(u, v));
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
}

bool CommGraph::has_edge(std::size_t u, std::size_t v) const {
  const std::pair key{std::min(u, v), std::max(u, v)};
  return std::binary_search(edges_.begin(), edges_.end(), key);
}

std::vector<std::size_t> CommGraph::degrees() const {
  std::vector<std::size_t> deg(num_agents_, 0);
  for (auto [u, v] : edges_) {
    ++deg[u];
    ++deg[v];
  }
  return deg;
}

bool CommGraph::connected() const {
  if (num_agents_ == 0) return false;
  std::vector<std::size_t> parent(num_agents_);
  for (std::size_t i = 0; i < num_agents_; ++i) parent[i] = i;
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::size_t components = num_agents_;
  for (auto [u, v] : edges_) {
    const auto a = find(u), b = find(v);
    if (a != b) {
      parent[a] = b;
      --components;
    }
  }
  return components == 1;
}

double second_singular_value(const Matrix& W) {
  if (W.rows() <= 1) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(W);
  return svd.singularValues()(1);
}

ConsensusMatrix metropolis_weights(const CommGraph& g) {
  if (!g.connected()) throw Error("metropolis_weights: graph is disconnected");
  const auto n = static_cast<Eigen::Index>(g.num_agents());
  const auto deg = g.degrees();
  Matrix W = Matrix::Zero(n, n);
  for (auto [u, v] : g.edges()) {
    const double w = 1.0 / (1.0 + static_cast<double>(std::max(deg[u], deg[v])));
    W(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) = w;
    W(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(u)) = w;
  }
  for (Eigen::Index u = 0; u < n; ++u) W(u, u) = 1.0 - W.row(u).sum();
  return make_consensus(std::move(W), g);
}

ConsensusMatrix make_consensus(Matrix W, const CommGraph& g) {
  if (auto check = validate_consensus(W, g); !check)
    throw Error("invalid consensus matrix: " + check.describe());
  ConsensusMatrix cm;
  cm.sigma2 = second_singular_value(W);
  cm.W = std::move(W);
  if (cm.sigma2 >= 1.0) throw Error("consensus matrix has sigma2 >= 1");
  return cm;
}

Validation validate_consensus(const Matrix& W, const CommGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.num_agents());
  if (W.rows() != n || W.cols() != n) return Validation::fail("shape does not match graph");
  if (!W.allFinite() || W.minCoeff() < 0.0) return Validation::fail("negative or non-finite entry");
  for (Eigen::Index u = 0; u < n; ++u)
    if (std::abs(W.row(u).sum() - 1.0) > kStochasticTol)
      return Validation::fail("row sums", static_cast<std::size_t>(u));
  for (Eigen::Index v = 0; v < n; ++v)
    if (std::abs(W.col(v).sum() - 1.0) > kStochasticTol)
      return Validation::fail("column sums", static_cast<std::size_t>(v));
  for (Eigen::Index u = 0; u < n; ++u) {
    if (W(u, u) <= 0.0) return Validation::fail("self weight not positive", static_cast<std::size_t>(u));
    for (Eigen::Index v = 0; v < n; ++v) {
      if (u == v) continue;
      const bool edge = g.has_edge(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
      if (edge != (W(u, v) > 0.0)) return Validation::fail("sparsity", static_cast<std::size_t>(u));
    }
  }
  return Validation::pass();
}

GraphKind parse_graph_kind(const std::string& name) {
  if (name == "complete") return GraphKind::complete;
  if (name == "ring") return GraphKind::ring;
  if (name == "star") return GraphKind::star;
  if (name == "erdos_renyi") return GraphKind::erdos_renyi;
  throw Error("unknown graph kind '" + name + "'");
}

std::string to_string(GraphKind kind) {
  switch (kind) {
    case GraphKind::complete: return "complete";
    case GraphKind::ring: return "ring";
    case GraphKind::star: return "star";
    case GraphKind::erdos_renyi: return "erdos_renyi";
  }
  return "?";
}

CommGraph complete_graph(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v) edges.emplace_back(u, v);
  return {n, std::move(edges)};
}

CommGraph ring_graph(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  if (n == 2) edges.emplace_back(0, 1);
  if (n >= 3)
    for (std::size_t u = 0; u < n; ++u) edges.emplace_back(u, (u + 1) % n);
  return {n, std::move(edges)};
}

CommGraph star_graph(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t v = 1; v < n; ++v) edges.emplace_back(0, v);
  return {n, std::move(edges)};
}

CommGraph erdos_renyi_graph(std::size_t n, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error("erdos_renyi: p must lie in [0, 1]");
  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng(seed + static_cast<std::uint64_t>(attempt));
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t u = 0; u < n; ++u)
      for (std::size_t v = u + 1; v < n; ++v)
        if (rng.uniform() < p) edges.emplace_back(u, v);
    CommGraph g(n, std::move(edges));
    if (g.connected()) return g;
  }
  throw Error("erdos_renyi: no connected graph after 100 attempts");
}

CommGraph make_graph(GraphKind kind, std::size_t num_agents, double p, std::uint64_t seed) {
  if (num_agents == 0) throw Error("graph needs at least one agent");
  switch (kind) {
    case GraphKind::complete: return complete_graph(num_agents);
    case GraphKind::ring: return ring_graph(num_agents);
    case GraphKind::star: return star_graph(num_agents);
    case GraphKind::erdos_renyi: return erdos_renyi_graph(num_agents, p, seed);
  }
  throw Error("unknown graph kind");
}

void write_graph(std::ostream& out, const CommGraph& g) {
  out << "dtdlab-graph 1\nagents " << g.num_agents() << '\n';
  for (auto [u, v] : g.edges()) out << u << ' ' << v << '\n';
}

CommGraph read_graph(std::istream& in) {
  TokenReader reader(in);
  reader.expect("dtdlab-graph");
  if (reader.count() != 1) reader.fail("unsupported graph format version");
  reader.expect("agents");
  const std::size_t n = reader.count();
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  while (!reader.at_end()) {
    const std::size_t u = reader.count();
    const std::size_t v = reader.count();
    if (u >= n || v >= n || u == v) reader.fail("bad edge " + std::to_string(u) + " " + std::to_string(v));
    edges.emplace_back(u, v);
  }
  return {n, std::move(edges)};
}

CommGraph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return read_graph(in);
  } catch (const ParseError& e) {
    throw Error(path + ": " + e.what());
  }
}

void save_graph(const std::string& path, const CommGraph& g) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_graph(out, g);
}

}  // namespace dtdlab
