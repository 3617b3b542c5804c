#include "atlasflow/losses.hpp"

#include "atlasflow/parallel.hpp"

#include <numbers>

namespace atlasflow::losses {

void ExpectedPoints::check_fresh(int current_epoch, int period) const {
  if (current_epoch - epoch >= period || current_epoch < epoch)
    throw StalenessError("expected points from epoch " + std::to_string(epoch) + " are stale at epoch " +
                         std::to_string(current_epoch) + " (refresh period " + std::to_string(period) + ")");
}

ObjectiveValue chart_objective(const flow::CoordinateMap& phi, const Batch& batch, const ObjectiveTerms& terms) {
  const int n = phi.latent_dim;
  const Index b = batch.size();
  const double sigma = phi.scale;
  if (batch.x.rows() != phi.dim()) throw ArgumentError("batch dimension does not match the chart");
  if (b < 1) throw ArgumentError("empty batch");

  ObjectiveValue out;
  out.grad = Vector::Zero(phi.flow.params().size());

  flow::FlowTape fwd_tape;
  const Matrix z = phi.flow.forward(phi.to_flow(batch.x), nullptr, &fwd_tape) * sigma;
  Matrix g_z = Matrix::Zero(z.rows(), b);

  if (terms.pretrain != 0.0) {
    if (!batch.ref) throw ArgumentError("pretraining loss needs reference coordinates");
    if (batch.ref->rows() != n || batch.ref->cols() != b) throw ArgumentError("reference block has the wrong shape");
    const Matrix diff = z.topRows(n) - *batch.ref;
    out.pretrain = diff.squaredNorm() / static_cast<double>(b);
    g_z.topRows(n) += terms.pretrain * 2.0 / static_cast<double>(b) * diff;
  }

  if (terms.distance != 0.0) {
    if (!batch.dist) throw ArgumentError("pairwise distance loss needs a reference distance block");
    if (b < 2) throw ArgumentError("pairwise distance loss needs at least two points");
    const Matrix& dref = *batch.dist;
    if (dref.rows() != b || dref.cols() != b) throw ArgumentError("distance block has the wrong shape");
    const Matrix v = z.topRows(n);
    const double norm = 1.0 / (static_cast<double>(b) * static_cast<double>(b - 1));
    double acc = 0.0;
    Matrix g_v = Matrix::Zero(n, b);
    for (Index i = 0; i < b; ++i) {
      for (Index j = 0; j < b; ++j) {
        if (i == j) continue;
        const auto delta = v.col(i) - v.col(j);
        const double d = delta.norm();
        const double r = d - dref(i, j);
        acc += r * r;
        // Each unordered pair appears twice in the double sum.
        if (d > 0.0) g_v.col(i) += (4.0 * norm * r / d) * delta;
      }
    }
    out.distance = acc * norm;
    g_z.topRows(n) += terms.distance * g_v;
  }

  const bool need_inverse = terms.recon != 0.0 || terms.compat != 0.0 || terms.report_recon;
  if (need_inverse) {
    flow::FlowTape inv_tape;
    const Matrix zp = flow::project_batch(z, n);
    const Matrix xr = phi.from_flow(phi.flow.inverse(zp / sigma, nullptr, &inv_tape));
    Matrix g_xr = Matrix::Zero(xr.rows(), b);
    const Matrix resid = xr - batch.x;
    out.recon = resid.squaredNorm() / static_cast<double>(b);
    if (terms.recon != 0.0) g_xr += terms.recon * 2.0 / static_cast<double>(b) * resid;
    if (terms.compat != 0.0) {
      if (!terms.xhat || !terms.overlap) throw ArgumentError("compatibility loss needs expected points and overlap flags");
      if (terms.xhat->cols() != b || terms.overlap->size() != static_cast<std::size_t>(b))
        throw ArgumentError("expected-point block has the wrong shape");
      Index count = 0;
      for (Index i = 0; i < b; ++i) count += (*terms.overlap)[static_cast<std::size_t>(i)] ? 1 : 0;
      if (count > 0) {
        double acc = 0.0;
        for (Index i = 0; i < b; ++i) {
          if (!(*terms.overlap)[static_cast<std::size_t>(i)]) continue;
          const Vector diff = xr.col(i) - terms.xhat->col(i);
          acc += diff.squaredNorm();
          g_xr.col(i) += terms.compat * 2.0 / static_cast<double>(count) * diff;
        }
        out.compat = acc / static_cast<double>(count);
      }
    }
    if (terms.recon != 0.0 || terms.compat != 0.0) {
      const Matrix g_u = phi.frame.size() > 0 ? Matrix(phi.frame.transpose() * g_xr * sigma) : Matrix(g_xr * sigma);
      const Matrix g_w = phi.flow.inverse_backward(inv_tape, g_u, out.grad);
      g_z.topRows(n) += g_w.topRows(n) / sigma;
    }
  }

  phi.flow.forward_backward(fwd_tape, g_z * sigma, nullptr, out.grad);
  out.total = terms.pretrain * out.pretrain + terms.distance * out.distance + terms.recon * out.recon +
              terms.compat * out.compat;
  return out;
}

LossGrad pretraining_loss(const flow::CoordinateMap& phi, const Batch& batch) {
  ObjectiveTerms t;
  t.pretrain = 1.0;
  auto v = chart_objective(phi, batch, t);
  return {v.pretrain, std::move(v.grad)};
}

LossGrad reconstruction_loss(const flow::CoordinateMap& phi, const Batch& batch) {
  ObjectiveTerms t;
  t.recon = 1.0;
  auto v = chart_objective(phi, batch, t);
  return {v.recon, std::move(v.grad)};
}

LossGrad pairwise_distance_loss(const flow::CoordinateMap& phi, const Batch& batch) {
  ObjectiveTerms t;
  t.distance = 1.0;
  auto v = chart_objective(phi, batch, t);
  return {v.distance, std::move(v.grad)};
}

LossGrad manifold_loss(const flow::CoordinateMap& phi, const Batch& batch, double lambda_t) {
  if (!(lambda_t >= 0.0 && lambda_t <= 1.0)) throw ArgumentError("lambda_t must lie in [0, 1]");
  ObjectiveTerms t;
  t.distance = lambda_t;
  t.recon = 1.0 - lambda_t;
  t.report_recon = true;
  auto v = chart_objective(phi, batch, t);
  return {v.total, std::move(v.grad)};
}

LossGrad compatibility_loss(const flow::CoordinateMap& phi, const Batch& batch, const ExpectedPoints& xhat,
                            const std::vector<int>& multiplicity, int current_epoch, int period) {
  xhat.check_fresh(current_epoch, period);
  Matrix block(batch.x.rows(), batch.size());
  std::vector<char> overlap(static_cast<std::size_t>(batch.size()));
  for (Index i = 0; i < batch.size(); ++i) {
    const int id = batch.indices.at(static_cast<std::size_t>(i));
    block.col(i) = xhat.points.col(id);
    overlap[static_cast<std::size_t>(i)] = multiplicity.at(static_cast<std::size_t>(id)) >= 2;
  }
  ObjectiveTerms t;
  t.compat = 1.0;
  t.xhat = &block;
  t.overlap = &overlap;
  auto v = chart_objective(phi, batch, t);
  return {v.compat, std::move(v.grad)};
}

LossGrad density_nll(const flow::DensityMap& gamma, const Matrix& v) {
  const Index b = v.cols();
  const int n = gamma.dim();
  if (v.rows() != n) throw ArgumentError("latent batch dimension does not match the density map");
  if (b < 1) throw ArgumentError("empty batch");
  if (!v.allFinite()) throw NumericError("latent batch contains non-finite entries");
  flow::FlowTape tape;
  Vector ld;
  const Matrix u = (v.colwise() - gamma.center) / gamma.scale;
  const Matrix w = gamma.flow.forward(u, &ld, &tape);
  ld.array() -= n * std::log(gamma.scale);
  if (!ld.allFinite()) throw NumericError("density map log-determinant is not finite");
  const double inv_b = 1.0 / static_cast<double>(b);
  const double log_norm = 0.5 * n * std::log(2.0 * std::numbers::pi);
  LossGrad out;
  out.loss = (0.5 * w.colwise().squaredNorm().sum() - ld.sum()) * inv_b + log_norm;
  out.grad = Vector::Zero(gamma.flow.params().size());
  const Vector g_ld = Vector::Constant(b, -inv_b);
  gamma.flow.forward_backward(tape, w * inv_b, &g_ld, out.grad);
  return out;
}

ExpectedPoints expected_points(const std::vector<flow::CoordinateMap>& charts, const cover::ChartCover& cover,
                               const Matrix& points, int epoch) {
  if (static_cast<int>(charts.size()) != cover.chart_count())
    throw ArgumentError("chart model count does not match the cover");
  const Index npts = points.rows();
  if (npts != cover.point_count()) throw ArgumentError("point count does not match the cover");
  std::vector<Matrix> recon(charts.size());
  parallel_for(static_cast<std::ptrdiff_t>(charts.size()), [&](std::ptrdiff_t k) {
    const auto& members = cover.charts[static_cast<std::size_t>(k)];
    Matrix x(points.cols(), static_cast<Index>(members.size()));
    for (std::size_t c = 0; c < members.size(); ++c) x.col(static_cast<Index>(c)) = points.row(members[c]).transpose();
    recon[static_cast<std::size_t>(k)] = charts[static_cast<std::size_t>(k)].reconstruct(x);
  }, true);
  ExpectedPoints out;
  out.epoch = epoch;
  out.points = Matrix::Zero(points.cols(), npts);
  for (std::size_t k = 0; k < charts.size(); ++k) {
    const auto& members = cover.charts[k];
    for (std::size_t c = 0; c < members.size(); ++c) out.points.col(members[c]) += recon[k].col(static_cast<Index>(c));
  }
  for (Index i = 0; i < npts; ++i) {
    const int m = cover.multiplicity[static_cast<std::size_t>(i)];
    if (m < 1) throw CoverError("point " + std::to_string(i) + " is not covered");
    out.points.col(i) /= static_cast<double>(m);
  }
  return out;
}

}  // namespace atlasflow::losses
