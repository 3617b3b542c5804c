#pragma once

#include "atlasflow/common.hpp"
#include "atlasflow/cover.hpp"
#include "atlasflow/flow.hpp"
#include "atlasflow/losses.hpp"

#include <cstdint>
#include <functional>
#include <string>

namespace atlasflow::atlas {

inline constexpr int kFormatVersion = 1;

struct TrainConfig {
  int latent_dim = 2;
  int layers = 13;
  std::vector<int> hidden = {64, 64};
  int spline_bins = 8;
  double lr = 0.0015;
  int batch = 256;
  int e1 = 60, e2 = 30, e3 = 60, e4 = 60, e5 = 60;
  double lambda_m = 100.0;
  double lambda_p = 0.1;
  double lambda_o = 25.0;
  double lambda_d = 0.01;
  int cs = 2;
  double clip_norm = 5.0;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  int isomap_k = 10;
  double membership_threshold = 0.3;  // reconstruction error admitting x to a chart
  bool train_density = true;
  cover::MapperConfig mapper;

  void validate() const;
  flow::FlowConfig coordinate_flow(int dim) const;
  flow::FlowConfig density_flow() const;

  static TrainConfig torus();
  static TrainConfig trefoil();
};

struct ChartModel {
  int id = 0;
  IndexList members;
  flow::CoordinateMap phi;
  flow::DensityMap gamma;
  double c = 0.0;
};

struct AtlasModel {
  int dim = 0;
  int latent_dim = 0;
  std::vector<ChartModel> charts;
  cover::ChartCover cover;
  cover::RefinedPartition partition;
  TrainConfig config;
  int format_version = kFormatVersion;

  int chart_count() const { return static_cast<int>(charts.size()); }
  std::vector<flow::CoordinateMap> coordinate_maps() const;
};

struct DisintegrationWeights {
  Vector c;                                     // one entry per chart
  std::vector<std::vector<double>> cell_weight; // [chart][cell] conditional weight, 0 if not owned
};

DisintegrationWeights disintegration_weights(const cover::RefinedPartition& part, int chart_count);

// Sampling probabilities over a chart's members, proportional to 1/m_x.
Vector bootstrap_probabilities(const IndexList& members, const std::vector<int>& multiplicity);

// b member ids drawn with replacement according to bootstrap_probabilities.
IndexList bootstrap_batch(const IndexList& members, const std::vector<int>& multiplicity, int b, Rng& rng);

// Epoch-averaged losses for one chart.
struct LogRow {
  int phase = 0;
  int epoch = 0;
  int chart = 0;
  double lambda = 0.0;
  double pretrain = 0.0;
  double distance = 0.0;
  double recon = 0.0;
  double compat = 0.0;
  double density = 0.0;
  int batches = 0;
};

struct TrainReport {
  std::vector<LogRow> log;
  // Batch-weighted mean training reconstruction loss over all charts, one
  // entry per epoch of phases 3 and 4.
  std::vector<double> recon_curve;
  // Mean over overlap points of the largest pairwise distance between
  // per-chart reconstructions, at the start and end of phase 4.
  double overlap_spread_start = 0.0;
  double overlap_spread_end = 0.0;
};

using ProgressFn = std::function<void(const LogRow&)>;

// Five-phase training over the cover's charts. points is N x d.
AtlasModel train(const Matrix& points, const cover::ChartCover& cover, const TrainConfig& cfg,
                 TrainReport* report = nullptr, const ProgressFn& progress = {});

struct Samples {
  Matrix points;  // count x d
  IndexList chart;
};

Samples sample(const AtlasModel& model, int count, Rng& rng);

// Per-chart log density of each row of x (count x d) including the Gram term.
Vector log_density(const AtlasModel& model, const Matrix& x, int chart);

// log sum_k c_k p_k(x) over the charts whose reconstruction error for x is
// below the membership threshold; -inf where no chart qualifies.
Vector log_density_mixture(const AtlasModel& model, const Matrix& x);

// Squared reconstruction error of each row of x under one chart.
Vector chart_recon_error(const AtlasModel& model, const Matrix& x, int chart);

// Cover-versus-partition comparison on the overlap band.
struct BoundaryRow {
  int data_label = 0;
  int model_label = 0;
  double cover_error = 0.0;
  double partition_error = 0.0;
  int count = 0;
};

struct BoundaryTable {
  std::vector<BoundaryRow> rows;
  double cover_average = 0.0;
  double partition_average = 0.0;
  int band_points = 0;
};

// Band points (multiplicity >= 2) with their partition label; the model label
// is the other containing chart sharing the most points with the data label's
// chart. Each point is reconstructed with the model-label chart of both models.
BoundaryTable boundary_table(const AtlasModel& cover_model, const AtlasModel& partition_model, const Matrix& points);

void save(const AtlasModel& model, const std::string& path);
AtlasModel load(const std::string& path);

}  // namespace atlasflow::atlas
