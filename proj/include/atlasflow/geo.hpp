#pragma once

#include "atlasflow/common.hpp"
#include "atlasflow/kernels.hpp"

namespace atlasflow::geo {

struct NeighborGraph {
  kernels::Adjacency adjacency;  // symmetric, both arc directions stored
  int k = 0;

  int size() const { return adjacency.size(); }
  bool has_edge(int a, int b) const;
};

// Each point joined to its k nearest rows, union symmetrized. Zero-length
// edges between duplicate points are dropped.
NeighborGraph knn_graph(const Matrix& points, int k);

// Index of a node unreachable from node 0, or -1 when the graph is connected.
int stranded_node(const NeighborGraph& g);

// All-pairs geodesic distances. Throws ConnectivityError on a disconnected graph.
Matrix geodesic_matrix(const NeighborGraph& g);

// Graph sizes up to this bound use a dense eigensolver in classical_mds;
// larger ones use block subspace iteration on the implicit centered matrix.
inline constexpr Index kDenseMdsLimit = 1000;

// Classical MDS of a distance matrix into n dimensions. Columns are ordered by
// decreasing eigenvalue; each column's largest-magnitude entry is positive.
Matrix classical_mds(const Matrix& dist, int n);

struct IsomapResult {
  Matrix embedding;  // N x n
  Matrix geodesics;  // N x N
  int k_used = 0;
};

// knn graph, geodesics and MDS. When the graph at k is disconnected, k is
// doubled (capped at N-1) until it connects.
IsomapResult isomap(const Matrix& points, int k, int n);

}  // namespace atlasflow::geo
