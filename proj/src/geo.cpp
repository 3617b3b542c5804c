#include "atlasflow/geo.hpp"

#include "atlasflow/parallel.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>

namespace atlasflow::geo {
namespace {

void fix_column_signs(Matrix& vecs) {
  for (Index c = 0; c < vecs.cols(); ++c) {
    Index arg = 0;
    vecs.col(c).cwiseAbs().maxCoeff(&arg);
    if (vecs(arg, c) < 0.0) vecs.col(c) *= -1.0;
  }
}

// Centered squared-distance operator B = -1/2 J (D o D) J applied to a block.
Matrix apply_centered(const Matrix& dist, const Matrix& x) {
  const Index n = dist.rows();
  Matrix xc = x.rowwise() - x.colwise().mean();
  Matrix y(n, x.cols());
  parallel_for(n, [&](std::ptrdiff_t i) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(x.cols());
    for (Index j = 0; j < n; ++j) {
      const double d = dist(j, i);
      acc.noalias() += (d * d) * xc.row(j);
    }
    y.row(i) = -0.5 * acc;
  });
  y.rowwise() -= y.colwise().mean();
  return y;
}

// Top-n eigenpairs of the centered operator; eigenvalues descending.
std::pair<Vector, Matrix> top_eigenpairs(const Matrix& dist, int n) {
  const Index size = dist.rows();
  if (size <= kDenseMdsLimit) {
    Matrix d2 = dist.array().square();
    const Vector row_mean = d2.rowwise().mean();
    const Eigen::RowVectorXd col_mean = d2.colwise().mean();
    Matrix b = d2;
    b.colwise() -= row_mean;
    b.rowwise() -= col_mean;
    b.array() += d2.mean();
    b = -0.25 * (b + b.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(b);
    if (es.info() != Eigen::Success) throw NumericError("eigensolver did not converge");
    Vector vals = es.eigenvalues().reverse().head(n);
    Matrix vecs = es.eigenvectors().rowwise().reverse().leftCols(n);
    return {vals, vecs};
  }
  const Index block = std::min<Index>(size, n + 10);
  Rng rng = make_rng(0x6d6473ULL, {static_cast<std::uint64_t>(size)});
  Matrix x(size, block);
  for (Index c = 0; c < block; ++c)
    for (Index r = 0; r < size; ++r) x(r, c) = standard_normal(rng);
  Vector ritz;
  Matrix vecs;
  constexpr double tol = 1e-10;
  for (int iter = 0; iter < 2000; ++iter) {
    Eigen::HouseholderQR<Matrix> qr(x);
    Matrix q = qr.householderQ() * Matrix::Identity(size, block);
    Matrix bq = apply_centered(dist, q);
    Matrix small = q.transpose() * bq;
    small = 0.5 * (small + small.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(small);
    ritz = es.eigenvalues().reverse();
    Matrix rot = es.eigenvectors().rowwise().reverse();
    vecs = q * rot;
    Matrix bv = bq * rot;
    const double scale = std::max(std::abs(ritz(0)), 1e-300);
    double worst = 0.0;
    for (int c = 0; c < n; ++c) worst = std::max(worst, (bv.col(c) - ritz(c) * vecs.col(c)).norm() / scale);
    if (worst < tol) break;
    x = bv;
  }
  return {ritz.head(n), vecs.leftCols(n)};
}

}  // namespace

bool NeighborGraph::has_edge(int a, int b) const {
  for (const auto& arc : adjacency.arcs[static_cast<std::size_t>(a)])
    if (arc.first == b) return true;
  return false;
}

NeighborGraph knn_graph(const Matrix& points, int k) {
  const auto n = static_cast<int>(points.rows());
  if (k < 1 || k >= n) throw ArgumentError("knn graph needs 1 <= k < N (k=" + std::to_string(k) + ", N=" +
                                           std::to_string(n) + ")");
  const auto nearest = kernels::k_nearest(points, k);
  std::vector<std::vector<int>> nbrs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    for (int j : nearest[static_cast<std::size_t>(i)]) {
      nbrs[static_cast<std::size_t>(i)].push_back(j);
      nbrs[static_cast<std::size_t>(j)].push_back(i);
    }
  NeighborGraph g;
  g.k = k;
  g.adjacency.arcs.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& list = nbrs[static_cast<std::size_t>(i)];
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
    for (int j : list) {
      const double w = (points.row(i) - points.row(j)).norm();
      if (w > 0.0) g.adjacency.arcs[static_cast<std::size_t>(i)].emplace_back(j, w);
    }
  }
  return g;
}

int stranded_node(const NeighborGraph& g) {
  const int n = g.size();
  if (n == 0) return -1;
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (const auto& [v, w] : g.adjacency.arcs[static_cast<std::size_t>(u)]) {
      if (!seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = 1;
        stack.push_back(v);
      }
    }
  }
  for (int i = 0; i < n; ++i)
    if (!seen[static_cast<std::size_t>(i)]) return i;
  return -1;
}

Matrix geodesic_matrix(const NeighborGraph& g) {
  const int stranded = stranded_node(g);
  if (stranded >= 0)
    throw ConnectivityError("neighbor graph is disconnected: node " + std::to_string(stranded) +
                                " is unreachable from node 0",
                            stranded);
  return kernels::all_pairs_shortest_paths(g.adjacency);
}

Matrix classical_mds(const Matrix& dist, int n) {
  const Index size = dist.rows();
  if (dist.cols() != size) throw ArgumentError("distance matrix must be square");
  if (n < 1 || n >= size) throw ArgumentError("mds needs 1 <= n < N");
  auto [vals, vecs] = top_eigenpairs(dist, n);
  for (int c = 0; c < n; ++c)
    if (!(vals(c) > 0.0))
      throw RankError("centered distance matrix has non-positive eigenvalue " + std::to_string(vals(c)) +
                      " at rank " + std::to_string(c + 1));
  fix_column_signs(vecs);
  Matrix emb = vecs * vals.cwiseSqrt().asDiagonal();
  emb.rowwise() -= emb.colwise().mean();
  return emb;
}

IsomapResult isomap(const Matrix& points, int k, int n) {
  const auto size = static_cast<int>(points.rows());
  if (size < 2) throw ArgumentError("isomap needs at least two points");
  int kk = std::min(k, size - 1);
  for (;;) {
    NeighborGraph g = knn_graph(points, kk);
    if (stranded_node(g) < 0 || kk == size - 1) {
      IsomapResult r;
      r.geodesics = geodesic_matrix(g);
      r.embedding = classical_mds(r.geodesics, n);
      r.k_used = kk;
      return r;
    }
    kk = std::min(2 * kk, size - 1);
  }
}

}  // namespace atlasflow::geo
