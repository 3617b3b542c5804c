#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "atlasflow/kernels.hpp"
#include "atlasflow/parallel.hpp"

#include <limits>

using namespace atlasflow;
using namespace atlasflow::kernels;

namespace {

Matrix random_points(Index n, Index d, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Matrix p(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < d; ++c) p(i, c) = standard_normal(rng);
  return p;
}

Adjacency random_graph(int n, double edge_prob, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Adjacency g;
  g.arcs.resize(static_cast<std::size_t>(n));
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      if (uniform01(rng) < edge_prob) {
        const double w = 0.125 * static_cast<double>(1 + uniform_index(rng, 40));
        g.arcs[static_cast<std::size_t>(a)].emplace_back(b, w);
        g.arcs[static_cast<std::size_t>(b)].emplace_back(a, w);
      }
  return g;
}

struct ThreadGuard {
  int saved = worker_threads();
  explicit ThreadGuard(int n) { set_worker_threads(n); }
  ~ThreadGuard() { set_worker_threads(saved); }
};

}  // namespace

TEST_CASE("parallel kernels match their serial references bit for bit") {
  ThreadGuard threads(4);
  const Matrix pts = random_points(300, 3, 1);
  CHECK(pairwise_distances(pts) == pairwise_distances_serial(pts));
  CHECK(k_nearest(pts, 7) == k_nearest_serial(pts, 7));
  const Matrix q = random_points(120, 3, 2);
  const Vector bw = Vector::Constant(3, 0.4);
  CHECK(kde(pts, q, bw) == kde_serial(pts, q, bw));
  const Adjacency g = random_graph(150, 0.05, 3);
  const Matrix a = all_pairs_shortest_paths(g);
  const Matrix b = all_pairs_shortest_paths_serial(g);
  for (Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    CHECK(((std::isinf(x) && std::isinf(y)) || x == y));
  }
}

TEST_CASE("dijkstra leaves unreachable nodes at infinity") {
  Adjacency g;
  g.arcs.resize(3);
  g.arcs[0].emplace_back(1, 2.0);
  g.arcs[1].emplace_back(0, 2.0);
  std::vector<double> row(3);
  dijkstra(g, 0, row.data());
  CHECK(row[0] == 0.0);
  CHECK(row[1] == 2.0);
  CHECK(row[2] == std::numeric_limits<double>::infinity());
}

TEST_CASE("k nearest excludes self and breaks ties by index") {
  Matrix p(4, 1);
  p << 0.0, 1.0, -1.0, 2.0;
  auto nn = k_nearest_serial(p, 2);
  CHECK(nn[0] == IndexList{1, 2});
  CHECK(nn[3] == IndexList{1, 0});
}

TEST_CASE("pairwise distances of a right triangle") {
  Matrix p(3, 2);
  p << 0.0, 0.0, 3.0, 0.0, 0.0, 4.0;
  const Matrix d = pairwise_distances(p);
  CHECK(d(0, 1) == 3.0);
  CHECK(d(0, 2) == 4.0);
  CHECK(d(1, 2) == doctest::Approx(5.0));
  CHECK(d.diagonal().isZero(0.0));
}

TEST_CASE("kde of a single reference point at its centre") {
  Matrix r = Matrix::Zero(1, 1);
  CHECK(kde_serial(r, r, Vector::Ones(1))(0) == doctest::Approx(0.3989422804014327));
}
