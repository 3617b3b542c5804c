#pragma once

#include "atlasflow/common.hpp"
#include "atlasflow/cover.hpp"
#include "atlasflow/flow.hpp"

#include <optional>

namespace atlasflow::losses {

// A minibatch from one chart. Points are stored one per column.
struct Batch {
  IndexList indices;          // global point ids
  Matrix x;                   // d x b
  std::optional<Matrix> ref;  // n x b Isomap targets
  std::optional<Matrix> dist; // b x b reference distances

  Index size() const { return x.cols(); }
};

// Average of the per-chart reconstructions of every point, refreshed at
// barriers during the compatibility phase.
struct ExpectedPoints {
  Matrix points;  // d x N
  int epoch = 0;  // epoch at which the snapshot was taken

  // Throws StalenessError when the snapshot is at least `period` epochs old.
  void check_fresh(int current_epoch, int period) const;
};

struct LossGrad {
  double loss = 0.0;
  Vector grad;  // w.r.t. the flow parameters
};

// Loss weights and inputs for one evaluation of the coordinate-map objective.
struct ObjectiveTerms {
  double pretrain = 0.0;
  double distance = 0.0;
  double recon = 0.0;
  double compat = 0.0;
  const Matrix* xhat = nullptr;        // d x b expected points for the batch
  const std::vector<char>* overlap = nullptr;  // per batch column: point lies in >= 2 charts
  bool report_recon = false;           // evaluate L_recon even when its weight is zero
};

struct ObjectiveValue {
  double total = 0.0;
  double pretrain = 0.0;
  double distance = 0.0;
  double recon = 0.0;
  double compat = 0.0;
  Vector grad;
};

// Weighted sum of the coordinate-map losses with one shared forward/inverse
// pass and a single reverse sweep.
ObjectiveValue chart_objective(const flow::CoordinateMap& phi, const Batch& batch, const ObjectiveTerms& terms);

LossGrad pretraining_loss(const flow::CoordinateMap& phi, const Batch& batch);
LossGrad reconstruction_loss(const flow::CoordinateMap& phi, const Batch& batch);
LossGrad pairwise_distance_loss(const flow::CoordinateMap& phi, const Batch& batch);
LossGrad manifold_loss(const flow::CoordinateMap& phi, const Batch& batch, double lambda_t);

// Squared distance between Recon(x) and x_hat averaged over the overlap
// points of the batch; zero when there are none. x_hat is a constant.
LossGrad compatibility_loss(const flow::CoordinateMap& phi, const Batch& batch, const ExpectedPoints& xhat,
                            const std::vector<int>& multiplicity, int current_epoch, int period);

// Negative log-likelihood of latents v (n x b) under the density map,
// without the embedding Gram term.
LossGrad density_nll(const flow::DensityMap& gamma, const Matrix& v);

// x_hat_i = mean over charts containing i of Recon_k(x_i). points is N x d.
ExpectedPoints expected_points(const std::vector<flow::CoordinateMap>& charts, const cover::ChartCover& cover,
                               const Matrix& points, int epoch);

}  // namespace atlasflow::losses
