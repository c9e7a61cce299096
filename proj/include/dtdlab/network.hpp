#pragma once

#include "dtdlab/common.hpp"

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace dtdlab {

/// Undirected communication graph without self-loops.  Edges are stored with
/// first < second, sorted, without duplicates.
class CommGraph {
public:
  CommGraph() = default;
  CommGraph(std::size_t num_agents, std::vector<std::pair<std::size_t, std::size_t>> edges);

  std::size_t num_agents() const { return num_agents_; }
  const std::vector<std::pair<std::size_t, std::size_t>>& edges() const { return edges_; }
  bool has_edge(std::size_t u, std::size_t v) const;
  std::vector<std::size_t> degrees() const;
  bool connected() const;

private:
  std::size_t num_agents_ = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges_;
};

/// Doubly stochastic consensus weights aligned with a graph, plus the second
/// largest singular value.
struct ConsensusMatrix {
  Matrix W;
  double sigma2 = 0.0;

  std::size_t num_agents() const { return static_cast<std::size_t>(W.rows()); }
};

/// Second largest singular value; 0 for a 1x1 matrix.
double second_singular_value(const Matrix& W);

ConsensusMatrix metropolis_weights(const CommGraph& g);

/// Wraps a user supplied W after validating it against `g`.
ConsensusMatrix make_consensus(Matrix W, const CommGraph& g);

Validation validate_consensus(const Matrix& W, const CommGraph& g);

enum class GraphKind { complete, ring, star, erdos_renyi };

GraphKind parse_graph_kind(const std::string& name);
std::string to_string(GraphKind kind);

/// Builds a named topology.  Erdos-Renyi draws with edge probability `p` are
/// retried with incremented seeds until connected (at most 100 attempts).
CommGraph make_graph(GraphKind kind, std::size_t num_agents, double p = 0.5, std::uint64_t seed = 0);

CommGraph complete_graph(std::size_t n);
CommGraph ring_graph(std::size_t n);
CommGraph star_graph(std::size_t n);
CommGraph erdos_renyi_graph(std::size_t n, double p, std::uint64_t seed);

// Edge-list text format:
//
//   dtdlab-graph 1
//   agents <N>
//   <u> <v>        (one line per undirected edge, 0-based)
void write_graph(std::ostream& out, const CommGraph& g);
CommGraph read_graph(std::istream& in);
CommGraph load_graph(const std::string& path);
void save_graph(const std::string& path, const CommGraph& g);

}  // namespace dtdlab
