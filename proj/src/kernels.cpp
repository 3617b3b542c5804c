#include "atlasflow/kernels.hpp"

#include "atlasflow/parallel.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>

namespace atlasflow::kernels {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void knn_row(const Matrix& points, int k, Index i, IndexList& out) {
  const Index n = points.rows();
  std::vector<std::pair<double, int>> cand;
  cand.reserve(static_cast<std::size_t>(n - 1));
  for (Index j = 0; j < n; ++j) {
    if (j == i) continue;
    cand.emplace_back((points.row(i) - points.row(j)).squaredNorm(), static_cast<int>(j));
  }
  const auto kk = static_cast<std::ptrdiff_t>(std::min<std::size_t>(k, cand.size()));
  std::partial_sort(cand.begin(), cand.begin() + kk, cand.end());
  out.resize(static_cast<std::size_t>(kk));
  for (std::ptrdiff_t m = 0; m < kk; ++m) out[static_cast<std::size_t>(m)] = cand[static_cast<std::size_t>(m)].second;
}

double kde_at(const Matrix& reference, const Eigen::RowVectorXd& q, const Vector& inv_h, double norm) {
  double acc = 0.0;
  for (Index r = 0; r < reference.rows(); ++r) {
    double e = 0.0;
    for (Index c = 0; c < reference.cols(); ++c) {
      const double z = (q(c) - reference(r, c)) * inv_h(c);
      e += z * z;
    }
    acc += std::exp(-0.5 * e);
  }
  return acc * norm;
}

double kde_norm(const Matrix& reference, const Vector& bandwidth) {
  const double d = static_cast<double>(reference.cols());
  double norm = 1.0 / static_cast<double>(reference.rows());
  norm /= std::pow(2.0 * M_PI, 0.5 * d);
  for (Index c = 0; c < bandwidth.size(); ++c) norm /= bandwidth(c);
  return norm;
}

}  // namespace

void dijkstra(const Adjacency& graph, int source, double* out_row) {
  const int n = graph.size();
  std::fill(out_row, out_row + n, kInf);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  out_row[source] = 0.0;
  heap.emplace(0.0, source);
  while (!heap.empty()) {
    auto [dist, u] = heap.top();
    heap.pop();
    if (dist > out_row[u]) continue;
    for (const auto& [v, w] : graph.arcs[static_cast<std::size_t>(u)]) {
      const double cand = dist + w;
      if (cand < out_row[v]) {
        out_row[v] = cand;
        heap.emplace(cand, v);
      }
    }
  }
}

Matrix all_pairs_shortest_paths(const Adjacency& graph) {
  const int n = graph.size();
  // Row-major fill: each source writes its own column of the col-major matrix.
  Matrix out(n, n);
  parallel_for(n, [&](std::ptrdiff_t s) { dijkstra(graph, static_cast<int>(s), out.col(s).data()); },
               true);
  // Dijkstra sums arcs outward from the source, so D(s, t) and D(t, s) may
  // differ in the last bit; keep the smaller.
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) out(i, j) = out(j, i) = std::min(out(i, j), out(j, i));
  return out;
}

Matrix all_pairs_shortest_paths_serial(const Adjacency& graph) {
  const int n = graph.size();
  Matrix out(n, n);
  for (int s = 0; s < n; ++s) dijkstra(graph, s, out.col(s).data());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) out(i, j) = out(j, i) = std::min(out(i, j), out(j, i));
  return out;
}

std::vector<IndexList> k_nearest(const Matrix& points, int k) {
  std::vector<IndexList> out(static_cast<std::size_t>(points.rows()));
  parallel_for(points.rows(), [&](std::ptrdiff_t i) { knn_row(points, k, i, out[static_cast<std::size_t>(i)]); });
  return out;
}

std::vector<IndexList> k_nearest_serial(const Matrix& points, int k) {
  std::vector<IndexList> out(static_cast<std::size_t>(points.rows()));
  for (Index i = 0; i < points.rows(); ++i) knn_row(points, k, i, out[static_cast<std::size_t>(i)]);
  return out;
}

Vector kde(const Matrix& reference, const Matrix& queries, const Vector& bandwidth) {
  const Vector inv_h = bandwidth.cwiseInverse();
  const double norm = kde_norm(reference, bandwidth);
  Vector out(queries.rows());
  parallel_for(queries.rows(), [&](std::ptrdiff_t q) { out(q) = kde_at(reference, queries.row(q), inv_h, norm); });
  return out;
}

Vector kde_serial(const Matrix& reference, const Matrix& queries, const Vector& bandwidth) {
  const Vector inv_h = bandwidth.cwiseInverse();
  const double norm = kde_norm(reference, bandwidth);
  Vector out(queries.rows());
  for (Index q = 0; q < queries.rows(); ++q) out(q) = kde_at(reference, queries.row(q), inv_h, norm);
  return out;
}

Matrix pairwise_distances(const Matrix& a) {
  const Index n = a.rows();
  Matrix out(n, n);
  parallel_for(n, [&](std::ptrdiff_t j) {
    for (Index i = 0; i < n; ++i) out(i, j) = (a.row(i) - a.row(j)).norm();
  });
  return out;
}

Matrix pairwise_distances_serial(const Matrix& a) {
  const Index n = a.rows();
  Matrix out(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) out(i, j) = (a.row(i) - a.row(j)).norm();
  return out;
}

}  // namespace atlasflow::kernels
