#include "atlasflow/cover.hpp"

#include "atlasflow/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>

namespace atlasflow::cover {
namespace {

struct DisjointSets {
  std::vector<int> parent;
  explicit DisjointSets(int n) : parent(static_cast<std::size_t>(n)) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int a) {
    while (parent[static_cast<std::size_t>(a)] != a) {
      parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
      a = parent[static_cast<std::size_t>(a)];
    }
    return a;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[static_cast<std::size_t>(b)] = a;
  }
};

Eigen::RowVectorXd centroid(const Matrix& points, const IndexList& members) {
  Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(points.cols());
  for (int i : members) c += points.row(i);
  return c / static_cast<double>(members.size());
}

IndexList merged(const IndexList& a, const IndexList& b) {
  IndexList out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

bool intersects(const IndexList& a, const IndexList& b) {
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia == *ib) return true;
    if (*ia < *ib)
      ++ia;
    else
      ++ib;
  }
  return false;
}

}  // namespace

void MapperConfig::validate() const {
  if (n_cubes < 1) throw ConfigError("n_cubes must be at least 1");
  if (!(perc_overlap >= 0.0 && perc_overlap < 1.0)) throw ConfigError("perc_overlap must lie in [0, 1)");
  if (!(linkage_threshold > 0.0)) throw ConfigError("linkage threshold must be positive");
  if (latent_dim < 1) throw ConfigError("latent dimension must be positive");
}

bool ChartCover::adjacent(int a, int b) const {
  if (a > b) std::swap(a, b);
  return std::binary_search(nerve_edges.begin(), nerve_edges.end(), std::make_pair(a, b));
}

std::vector<IndexList> ChartCover::memberships() const {
  std::vector<IndexList> out(multiplicity.size());
  for (int k = 0; k < chart_count(); ++k)
    for (int i : charts[static_cast<std::size_t>(k)]) out[static_cast<std::size_t>(i)].push_back(k);
  return out;
}

Vector pca_lens(const Matrix& points) {
  if (points.rows() < 2) throw ArgumentError("lens needs at least two points");
  Matrix centered = points.rowwise() - points.colwise().mean();
  Matrix cov = centered.transpose() * centered / static_cast<double>(points.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const Index top = cov.rows() - 1;
  if (!(es.eigenvalues()(top) > 0.0)) throw DegenerateLensError("all points are identical; the PCA lens is undefined");
  Vector dir = es.eigenvectors().col(top);
  Index arg = 0;
  dir.cwiseAbs().maxCoeff(&arg);
  if (dir(arg) < 0.0) dir = -dir;
  return centered * dir;
}

std::vector<Interval> build_intervals(const Vector& lens, int n_cubes, double perc_overlap) {
  if (n_cubes < 1) throw ArgumentError("n_cubes must be at least 1");
  if (lens.size() == 0) throw ArgumentError("empty lens");
  const double lo = lens.minCoeff();
  const double hi = lens.maxCoeff();
  if (!(hi > lo)) throw DegenerateLensError("lens range is empty (all values equal " + std::to_string(lo) + ")");
  const double step = (hi - lo) / n_cubes;
  const double half = 0.5 * step * (1.0 + perc_overlap);
  std::vector<Interval> out;
  for (int j = 0; j < n_cubes; ++j) {
    const double center = lo + (j + 0.5) * step;
    out.push_back({center - half, center + half});
  }
  return out;
}

std::vector<IndexList> single_linkage(const Matrix& points, double threshold) {
  const auto n = static_cast<int>(points.rows());
  const double t2 = threshold * threshold;
  DisjointSets sets(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if ((points.row(i) - points.row(j)).squaredNorm() <= t2) sets.unite(i, j);
  std::map<int, IndexList> groups;
  for (int i = 0; i < n; ++i) groups[sets.find(i)].push_back(i);
  std::vector<IndexList> out;
  for (auto& [root, members] : groups) out.push_back(std::move(members));
  return out;
}

ChartCover make_cover(std::vector<IndexList> charts, Index point_count) {
  ChartCover c;
  for (auto& ch : charts) {
    std::sort(ch.begin(), ch.end());
    ch.erase(std::unique(ch.begin(), ch.end()), ch.end());
    for (int i : ch)
      if (i < 0 || i >= point_count) throw CoverError("chart member " + std::to_string(i) + " out of range");
  }
  c.charts = std::move(charts);
  c.multiplicity.assign(static_cast<std::size_t>(point_count), 0);
  for (const auto& ch : c.charts)
    for (int i : ch) ++c.multiplicity[static_cast<std::size_t>(i)];
  for (int a = 0; a < c.chart_count(); ++a)
    for (int b = a + 1; b < c.chart_count(); ++b)
      if (intersects(c.charts[static_cast<std::size_t>(a)], c.charts[static_cast<std::size_t>(b)]))
        c.nerve_edges.emplace_back(a, b);
  return c;
}

ChartCover mapper_cover(const Matrix& points, const MapperConfig& config) {
  config.validate();
  const Vector lens = pca_lens(points);
  const auto intervals = build_intervals(lens, config.n_cubes, config.perc_overlap);
  std::vector<IndexList> preimages;
  for (const auto& iv : intervals) {
    IndexList members;
    for (Index i = 0; i < lens.size(); ++i)
      if (lens(i) >= iv.lo && lens(i) <= iv.hi) members.push_back(static_cast<int>(i));
    if (!members.empty()) preimages.push_back(std::move(members));
  }
  std::vector<std::vector<IndexList>> clusters(preimages.size());
  parallel_for(static_cast<std::ptrdiff_t>(preimages.size()), [&](std::ptrdiff_t p) {
    const auto& members = preimages[static_cast<std::size_t>(p)];
    Matrix sub(static_cast<Index>(members.size()), points.cols());
    for (std::size_t r = 0; r < members.size(); ++r) sub.row(static_cast<Index>(r)) = points.row(members[r]);
    for (auto& local : single_linkage(sub, config.linkage_threshold)) {
      for (int& i : local) i = members[static_cast<std::size_t>(i)];
      clusters[static_cast<std::size_t>(p)].push_back(std::move(local));
    }
  }, true);
  std::vector<IndexList> charts;
  for (auto& per_interval : clusters)
    for (auto& c : per_interval) charts.push_back(std::move(c));
  if (charts.empty()) throw CoverError("mapper produced no charts");

  const std::size_t min_size = static_cast<std::size_t>(config.latent_dim) + 2;
  for (;;) {
    auto small = std::find_if(charts.begin(), charts.end(), [&](const IndexList& c) { return c.size() < min_size; });
    if (small == charts.end() || charts.size() == 1) break;
    const auto s = static_cast<std::size_t>(small - charts.begin());
    const auto cs = centroid(points, charts[s]);
    std::size_t best = charts.size();
    double best_dist = std::numeric_limits<double>::infinity();
    bool best_is_neighbor = false;
    for (std::size_t o = 0; o < charts.size(); ++o) {
      if (o == s) continue;
      const bool nb = intersects(charts[s], charts[o]);
      const double d = (centroid(points, charts[o]) - cs).squaredNorm();
      if ((nb && !best_is_neighbor) || (nb == best_is_neighbor && d < best_dist)) {
        best = o;
        best_dist = d;
        best_is_neighbor = nb;
      }
    }
    charts[best] = merged(charts[best], charts[s]);
    charts.erase(charts.begin() + static_cast<std::ptrdiff_t>(s));
  }
  ChartCover cover = make_cover(std::move(charts), points.rows());
  for (std::size_t i = 0; i < cover.multiplicity.size(); ++i)
    if (cover.multiplicity[i] == 0) throw CoverError("point " + std::to_string(i) + " is not covered");
  return cover;
}

RefinedPartition refine_partition(const ChartCover& cover) {
  const auto members = cover.memberships();
  std::map<IndexList, IndexList> by_signature;
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (members[i].empty()) throw CoverError("point " + std::to_string(i) + " is not covered");
    by_signature[members[i]].push_back(static_cast<int>(i));
  }
  RefinedPartition part;
  part.point_count = static_cast<Index>(members.size());
  for (auto& [sig, idx] : by_signature) {
    Cell cell;
    cell.owners = sig;
    cell.n = static_cast<int>(sig.size());
    cell.nu = static_cast<double>(idx.size()) / static_cast<double>(part.point_count);
    cell.indices = std::move(idx);
    part.cells.push_back(std::move(cell));
  }
  return part;
}

Matrix chart_centroids(const ChartCover& cover, const Matrix& points) {
  Matrix out(cover.chart_count(), points.cols());
  for (int k = 0; k < cover.chart_count(); ++k) out.row(k) = centroid(points, cover.charts[static_cast<std::size_t>(k)]);
  return out;
}

IndexList partition_from_cover(const ChartCover& cover, const Matrix& points) {
  if (points.rows() != cover.point_count()) throw ArgumentError("point count does not match the cover");
  const Matrix cents = chart_centroids(cover, points);
  const auto members = cover.memberships();
  IndexList labels(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (members[i].empty()) throw CoverError("point " + std::to_string(i) + " is not covered");
    int best = members[i].front();
    double best_dist = std::numeric_limits<double>::infinity();
    for (int k : members[i]) {
      const double d = (points.row(static_cast<Index>(i)) - cents.row(k)).squaredNorm();
      if (d < best_dist) {
        best_dist = d;
        best = k;
      }
    }
    labels[i] = best;
  }
  return labels;
}

ChartCover cover_from_labels(const IndexList& labels, int chart_count) {
  std::vector<IndexList> charts(static_cast<std::size_t>(chart_count));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= chart_count) throw CoverError("label out of range");
    charts[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
  }
  return make_cover(std::move(charts), static_cast<Index>(labels.size()));
}

}  // namespace atlasflow::cover
