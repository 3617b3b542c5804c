#pragma once

#include "atlasflow/common.hpp"

#include <utility>

namespace atlasflow::cover {

enum class Lens { pca1 };

struct MapperConfig {
  int n_cubes = 5;
  double perc_overlap = 0.45;
  double linkage_threshold = 1.0;
  Lens lens = Lens::pca1;
  int latent_dim = 2;  // charts smaller than latent_dim + 2 are merged away

  void validate() const;
};

struct Interval {
  double lo;
  double hi;
};

struct ChartCover {
  std::vector<IndexList> charts;                   // sorted member indices per chart
  std::vector<std::pair<int, int>> nerve_edges;    // i < j, sorted
  std::vector<int> multiplicity;                   // charts containing each point

  int chart_count() const { return static_cast<int>(charts.size()); }
  Index point_count() const { return static_cast<Index>(multiplicity.size()); }
  bool adjacent(int a, int b) const;
  // Charts containing each point, ascending.
  std::vector<IndexList> memberships() const;
};

struct Cell {
  IndexList indices;
  IndexList owners;  // chart-membership signature, ascending
  int n = 0;         // owners.size()
  double nu = 0.0;   // |indices| / N
};

struct RefinedPartition {
  std::vector<Cell> cells;
  Index point_count = 0;
};

// Values of the centered points along the top principal direction.
Vector pca_lens(const Matrix& points);

std::vector<Interval> build_intervals(const Vector& lens, int n_cubes, double perc_overlap);

// Connected components of the graph joining pairs at distance <= threshold.
// Each component is sorted; components are ordered by their smallest index.
std::vector<IndexList> single_linkage(const Matrix& points, double threshold);

// Rebuilds nerve edges and multiplicities from the chart lists.
ChartCover make_cover(std::vector<IndexList> charts, Index point_count);

ChartCover mapper_cover(const Matrix& points, const MapperConfig& config);

RefinedPartition refine_partition(const ChartCover& cover);

// One chart per point: the unique containing chart, otherwise the containing
// chart with the nearest member centroid (lowest id on ties).
IndexList partition_from_cover(const ChartCover& cover, const Matrix& points);

// Hard partition viewed as a cover with disjoint charts.
ChartCover cover_from_labels(const IndexList& labels, int chart_count);

Matrix chart_centroids(const ChartCover& cover, const Matrix& points);

}  // namespace atlasflow::cover
