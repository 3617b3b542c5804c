#pragma once

// Data-parallel inner loops. Each kernel has an OpenMP version used by the
// library and a plain serial reference kept for tests and benchmarks; both
// produce bit-identical results because every output element is computed by
// the same sequence of operations regardless of the thread that owns it.

#include "atlasflow/common.hpp"

#include <utility>

namespace atlasflow::kernels {

// Adjacency list with weighted, directed arcs (store both directions for an
// undirected graph).
struct Adjacency {
  std::vector<std::vector<std::pair<int, double>>> arcs;
  int size() const { return static_cast<int>(arcs.size()); }
};

// Single-source shortest paths with a binary heap; unreachable nodes get +inf.
void dijkstra(const Adjacency& graph, int source, double* out_row);

Matrix all_pairs_shortest_paths(const Adjacency& graph);
Matrix all_pairs_shortest_paths_serial(const Adjacency& graph);

// Indices of the k nearest rows (Euclidean, self excluded, ties by index).
std::vector<IndexList> k_nearest(const Matrix& points, int k);
std::vector<IndexList> k_nearest_serial(const Matrix& points, int k);

Vector kde(const Matrix& reference, const Matrix& queries, const Vector& bandwidth);
Vector kde_serial(const Matrix& reference, const Matrix& queries, const Vector& bandwidth);

// Euclidean distance matrix between the rows of a.
Matrix pairwise_distances(const Matrix& a);
Matrix pairwise_distances_serial(const Matrix& a);

}  // namespace atlasflow::kernels
