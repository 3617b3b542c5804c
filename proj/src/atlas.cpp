#include "atlasflow/atlas.hpp"

#include "atlasflow/geo.hpp"
#include "atlasflow/io.hpp"
#include "atlasflow/parallel.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <limits>
#include <map>
#include <numbers>

namespace atlasflow::atlas {
namespace {

enum Stream : std::uint64_t { kInitPhi = 1, kInitGamma, kBatches, kBootstrap };

constexpr const char* kPhaseNames[] = {"", "pretrain-coordinates", "pretrain-density", "manifold",
                                       "compatibility", "density"};

Matrix gather_columns(const Matrix& points_rows, const IndexList& ids) {
  Matrix out(points_rows.cols(), static_cast<Index>(ids.size()));
  for (std::size_t c = 0; c < ids.size(); ++c) out.col(static_cast<Index>(c)) = points_rows.row(ids[c]).transpose();
  return out;
}

constexpr double kSupportFill = 0.8;

// Principal axes of the columns of x, strongest first, each with its
// largest-magnitude entry positive. Returns (frame, top standard deviation).
std::pair<Matrix, double> principal_frame(const Matrix& centered) {
  const Matrix cov = centered * centered.transpose() / std::max<double>(1.0, static_cast<double>(centered.cols() - 1));
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  Matrix frame = es.eigenvectors().rowwise().reverse();
  for (Index c = 0; c < frame.cols(); ++c) {
    Index arg = 0;
    frame.col(c).cwiseAbs().maxCoeff(&arg);
    if (frame(arg, c) < 0.0) frame.col(c) *= -1.0;
  }
  const double top = es.eigenvalues().maxCoeff();
  return {frame, std::sqrt(std::max(top, 1e-24))};
}

struct ChartState {
  int id = 0;
  IndexList members;
  Matrix x;       // d x N_k
  Matrix ref;     // n x N_k Isomap targets
  Matrix dist;    // N_k x N_k geodesics
  flow::CoordinateMap phi;
  flow::DensityMap gamma;
  nn::AdamState opt_phi;
  nn::AdamState opt_gamma;
  Rng batch_rng;
  Rng boot_rng;
  Vector boot_cdf;
  std::vector<char> overlap;  // per member
  long steps_per_epoch = 0;
};

void build_chart(ChartState& s, const Matrix& points, const cover::ChartCover& cov, const TrainConfig& cfg) {
  const int d = static_cast<int>(points.cols());
  const int n = cfg.latent_dim;
  s.x = gather_columns(points, s.members);
  const Index nk = s.x.cols();
  if (nk < n + 2) throw DegenerateChartError("chart " + std::to_string(s.id + 1) + " has only " + std::to_string(nk) + " points");

  const Vector mu = s.x.rowwise().mean();
  const Matrix centered = s.x.colwise() - mu;
  auto [frame, sigma] = principal_frame(centered);

  auto iso = geo::isomap(Matrix(s.x.transpose()), cfg.isomap_k, n);
  // Rotate the embedding onto the chart's principal coordinates; geodesic
  // distances are unchanged and the identity-initialized map starts close.
  const Matrix rotated = frame.transpose() * centered;
  const Matrix scores = rotated.topRows(n).transpose();
  Eigen::JacobiSVD<Matrix> svd(iso.embedding.transpose() * scores, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Matrix q = svd.matrixU() * svd.matrixV().transpose();
  s.ref = (iso.embedding * q).transpose();
  s.dist = std::move(iso.geodesics);

  // A long curved chart unrolls to targets well beyond its principal spread.
  // Past the spline bound the couplings are identity tails and cannot bend,
  // so widen the scale until data and targets sit inside the support.
  const flow::FlowConfig fc = cfg.coordinate_flow(d);
  const double reach = std::max(rotated.cwiseAbs().maxCoeff(), s.ref.cwiseAbs().maxCoeff());
  sigma = std::max(sigma, reach / (kSupportFill * fc.spline.bound));

  Rng init_phi = make_rng(cfg.seed, {static_cast<std::uint64_t>(s.id), kInitPhi});
  s.phi = flow::CoordinateMap{flow::FlowStack::create(fc, init_phi), mu, sigma, n, frame};

  const Vector nu = s.ref.rowwise().mean();
  const double tau = std::sqrt(std::max(((s.ref.colwise() - nu).rowwise().squaredNorm() / static_cast<double>(nk)).maxCoeff(), 1e-24));
  Rng init_gamma = make_rng(cfg.seed, {static_cast<std::uint64_t>(s.id), kInitGamma});
  s.gamma = flow::DensityMap{flow::FlowStack::create(cfg.density_flow(), init_gamma), nu, tau};

  nn::AdamConfig ac;
  ac.weight_decay = cfg.weight_decay;
  s.opt_phi = nn::AdamState(s.phi.flow.params().size(), ac);
  s.opt_gamma = nn::AdamState(s.gamma.flow.params().size(), ac);
  s.batch_rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(s.id), kBatches});
  s.boot_rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(s.id), kBootstrap});

  const Vector p = bootstrap_probabilities(s.members, cov.multiplicity);
  s.boot_cdf.resize(p.size());
  double acc = 0.0;
  for (Index i = 0; i < p.size(); ++i) s.boot_cdf(i) = (acc += p(i));
  s.overlap.resize(s.members.size());
  for (std::size_t i = 0; i < s.members.size(); ++i)
    s.overlap[i] = cov.multiplicity[static_cast<std::size_t>(s.members[i])] >= 2;
  const long b = cfg.batch;
  s.steps_per_epoch = nk / b + ((nk % b) >= 2 ? 1 : 0);
  if (s.steps_per_epoch == 0) s.steps_per_epoch = 1;
}

// Shuffled minibatches of local member positions; a trailing singleton is dropped.
std::vector<IndexList> epoch_batches(ChartState& s, int b) {
  const auto nk = static_cast<int>(s.members.size());
  IndexList perm(static_cast<std::size_t>(nk));
  for (int i = 0; i < nk; ++i) perm[static_cast<std::size_t>(i)] = i;
  for (int i = nk - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)], perm[uniform_index(s.batch_rng, static_cast<std::size_t>(i) + 1)]);
  std::vector<IndexList> out;
  for (int start = 0; start < nk; start += b) {
    const int stop = std::min(nk, start + b);
    if (stop - start < 2 && !out.empty()) break;
    out.emplace_back(perm.begin() + start, perm.begin() + stop);
  }
  return out;
}

losses::Batch make_batch(const ChartState& s, const IndexList& local, bool with_geometry) {
  losses::Batch batch;
  const auto b = static_cast<Index>(local.size());
  batch.x = Matrix(s.x.rows(), b);
  for (Index c = 0; c < b; ++c) {
    const int i = local[static_cast<std::size_t>(c)];
    batch.x.col(c) = s.x.col(i);
    batch.indices.push_back(s.members[static_cast<std::size_t>(i)]);
  }
  if (with_geometry) {
    Matrix ref(s.ref.rows(), b);
    Matrix dist(b, b);
    for (Index c = 0; c < b; ++c) {
      const int i = local[static_cast<std::size_t>(c)];
      ref.col(c) = s.ref.col(i);
      for (Index r = 0; r < b; ++r) dist(r, c) = s.dist(local[static_cast<std::size_t>(r)], i);
    }
    batch.ref = std::move(ref);
    batch.dist = std::move(dist);
  }
  return batch;
}

void apply_update(nn::AdamState& opt, Vector& params, Vector grad, double weight, double clip, double lr) {
  grad *= weight;
  if (!grad.allFinite()) throw NumericError("non-finite gradient");
  nn::clip_global_norm(grad, clip);
  nn::adam_step(opt, params, grad, lr);
  if (!params.allFinite()) throw NumericError("non-finite parameters after update");
}

double density_step(ChartState& s, const TrainConfig& cfg, double lr) {
  IndexList local(static_cast<std::size_t>(cfg.batch));
  for (auto& l : local) {
    const double u = uniform01(s.boot_rng);
    const auto* pos = std::upper_bound(s.boot_cdf.data(), s.boot_cdf.data() + s.boot_cdf.size(), u);
    l = static_cast<int>(std::min<Index>(pos - s.boot_cdf.data(), s.boot_cdf.size() - 1));
  }
  Matrix x(s.x.rows(), static_cast<Index>(local.size()));
  for (std::size_t c = 0; c < local.size(); ++c) x.col(static_cast<Index>(c)) = s.x.col(local[c]);
  const Matrix v = s.phi.latent(x);
  auto lg = losses::density_nll(s.gamma, v);
  if (!std::isfinite(lg.loss)) throw NumericError("density loss is not finite");
  apply_update(s.opt_gamma, s.gamma.flow.params(), std::move(lg.grad), cfg.lambda_d, cfg.clip_norm, lr);
  return lg.loss;
}

double manifold_step(ChartState& s, const TrainConfig& cfg, const losses::Batch& batch,
                     const losses::ObjectiveTerms& terms, double lr, LogRow& row) {
  auto val = losses::chart_objective(s.phi, batch, terms);
  if (!std::isfinite(val.total)) throw NumericError("coordinate loss is not finite");
  row.pretrain += val.pretrain;
  row.distance += val.distance;
  row.recon += val.recon;
  row.compat += val.compat;
  apply_update(s.opt_phi, s.phi.flow.params(), std::move(val.grad), cfg.lambda_m, cfg.clip_norm, lr);
  return val.total;
}

void finish_row(LogRow& row) {
  if (row.batches == 0) return;
  const double inv = 1.0 / row.batches;
  row.pretrain *= inv;
  row.distance *= inv;
  row.recon *= inv;
  row.compat *= inv;
  row.density *= inv;
}

struct Trainer {
  const Matrix& points;
  const cover::ChartCover& cov;
  const TrainConfig& cfg;
  std::vector<ChartState> charts;
  std::vector<std::vector<LogRow>> rows;  // per chart, in order

  template <class Body>
  void guarded(int phase, int epoch, ChartState& s, Body&& body) {
    try {
      body();
    } catch (const NumericError& e) {
      throw DivergenceError(kPhaseNames[phase], epoch, s.id, e.what());
    }
  }

  void phase_pretrain(ChartState& s) {
    if (cfg.e1 == 0) return;
    nn::LrSchedule sched{cfg.lr, cfg.e1 * s.steps_per_epoch};
    long step = 0;
    losses::ObjectiveTerms terms;
    terms.pretrain = 1.0;
    for (int j = 1; j <= cfg.e1; ++j) {
      LogRow row{1, j, s.id};
      guarded(1, j, s, [&] {
        for (const auto& local : epoch_batches(s, cfg.batch)) {
          manifold_step(s, cfg, make_batch(s, local, true), terms, nn::lr_at(sched, step++), row);
          ++row.batches;
        }
      });
      finish_row(row);
      rows[static_cast<std::size_t>(s.id)].push_back(row);
    }
  }

  void phase_density_only(ChartState& s, int phase, int epochs) {
    if (epochs == 0 || !cfg.train_density) return;
    nn::LrSchedule sched{cfg.lr, epochs * s.steps_per_epoch};
    long step = 0;
    for (int j = 1; j <= epochs; ++j) {
      LogRow row{phase, j, s.id};
      guarded(phase, j, s, [&] {
        for (long k = 0; k < s.steps_per_epoch; ++k) {
          row.density += density_step(s, cfg, nn::lr_at(sched, step++));
          ++row.batches;
        }
      });
      finish_row(row);
      rows[static_cast<std::size_t>(s.id)].push_back(row);
    }
  }

  double lambda_at(int j) const {
    if (j > cfg.e2) return cfg.lambda_p;
    if (cfg.e2 <= 1) return cfg.lambda_p;
    return 1.0 + (cfg.lambda_p - 1.0) * static_cast<double>(j - 1) / static_cast<double>(cfg.e2 - 1);
  }

  void phase_manifold(ChartState& s) {
    const int epochs = cfg.e2 + cfg.e3;
    if (epochs == 0) return;
    nn::LrSchedule sched{cfg.lr, epochs * s.steps_per_epoch};
    long step = 0;
    for (int j = 1; j <= epochs; ++j) {
      const double lambda = lambda_at(j);
      losses::ObjectiveTerms terms;
      terms.distance = lambda;
      terms.recon = 1.0 - lambda;
      terms.report_recon = true;
      LogRow row{3, j, s.id, lambda};
      guarded(3, j, s, [&] {
        for (const auto& local : epoch_batches(s, cfg.batch)) {
          const double lr = nn::lr_at(sched, step++);
          manifold_step(s, cfg, make_batch(s, local, true), terms, lr, row);
          if (cfg.train_density) row.density += density_step(s, cfg, lr);
          ++row.batches;
        }
      });
      finish_row(row);
      rows[static_cast<std::size_t>(s.id)].push_back(row);
    }
  }

  void compat_epoch(ChartState& s, int j, const losses::ExpectedPoints& xhat, const nn::LrSchedule& sched,
                    long& step) {
    xhat.check_fresh(j, cfg.cs);
    losses::ObjectiveTerms terms;
    terms.distance = cfg.lambda_p;
    terms.recon = 1.0 - cfg.lambda_p;
    terms.compat = static_cast<double>(j) / static_cast<double>(cfg.e4) * cfg.lambda_o;
    terms.report_recon = true;
    LogRow row{4, j, s.id, cfg.lambda_p};
    guarded(4, j, s, [&] {
      for (const auto& local : epoch_batches(s, cfg.batch)) {
        const double lr = nn::lr_at(sched, step++);
        auto batch = make_batch(s, local, true);
        Matrix block(batch.x.rows(), batch.size());
        std::vector<char> overlap(local.size());
        for (std::size_t c = 0; c < local.size(); ++c) {
          block.col(static_cast<Index>(c)) = xhat.points.col(batch.indices[c]);
          overlap[c] = s.overlap[static_cast<std::size_t>(local[c])];
        }
        terms.xhat = &block;
        terms.overlap = &overlap;
        manifold_step(s, cfg, batch, terms, lr, row);
        if (cfg.train_density) row.density += density_step(s, cfg, lr);
        ++row.batches;
      }
    });
    finish_row(row);
    rows[static_cast<std::size_t>(s.id)].push_back(row);
  }

  std::vector<flow::CoordinateMap> maps() const {
    std::vector<flow::CoordinateMap> out;
    for (const auto& s : charts) out.push_back(s.phi);
    return out;
  }

  double overlap_spread() const {
    const auto members = cov.memberships();
    std::vector<Matrix> recon(charts.size());
    parallel_for(static_cast<std::ptrdiff_t>(charts.size()), [&](std::ptrdiff_t k) {
      recon[static_cast<std::size_t>(k)] = charts[static_cast<std::size_t>(k)].phi.reconstruct(charts[static_cast<std::size_t>(k)].x);
    }, true);
    // position of each point inside each chart's member list
    std::vector<std::map<int, Index>> where(charts.size());
    for (std::size_t k = 0; k < charts.size(); ++k)
      for (std::size_t c = 0; c < charts[k].members.size(); ++c) where[k][charts[k].members[c]] = static_cast<Index>(c);
    double total = 0.0;
    long count = 0;
    for (std::size_t i = 0; i < members.size(); ++i) {
      const auto& ks = members[i];
      if (ks.size() < 2) continue;
      double worst = 0.0;
      for (std::size_t a = 0; a < ks.size(); ++a)
        for (std::size_t b = a + 1; b < ks.size(); ++b) {
          const auto ka = static_cast<std::size_t>(ks[a]);
          const auto kb = static_cast<std::size_t>(ks[b]);
          worst = std::max(worst, (recon[ka].col(where[ka].at(static_cast<int>(i))) -
                                   recon[kb].col(where[kb].at(static_cast<int>(i))))
                                      .norm());
        }
      total += worst;
      ++count;
    }
    return count ? total / static_cast<double>(count) : 0.0;
  }
};

}  // namespace

void TrainConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
  if (layers < 1) throw ConfigError("layers must be positive");
  for (int h : hidden)
    if (h < 1) throw ConfigError("hidden widths must be positive");
  if (spline_bins < 2 || spline_bins > flow::kMaxBins) throw ConfigError("spline_bins must lie in [2, 32]");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch < 2) throw ConfigError("batch must be at least 2");
  if (e1 < 0 || e2 < 0 || e3 < 0 || e4 < 0 || e5 < 0) throw ConfigError("epoch counts must be nonnegative");
  if (!(lambda_m > 0.0) || !(lambda_d > 0.0)) throw ConfigError("lambda_m and lambda_d must be positive");
  if (!(lambda_p > 0.0 && lambda_p <= 1.0)) throw ConfigError("lambda_p must lie in (0, 1]");
  if (!(lambda_o >= 0.0)) throw ConfigError("lambda_o must be nonnegative");
  if (cs < 1) throw ConfigError("cs must be at least 1");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
  if (isomap_k < 1) throw ConfigError("isomap_k must be positive");
  if (!(membership_threshold > 0.0)) throw ConfigError("membership_threshold must be positive");
  mapper.validate();
}

flow::FlowConfig TrainConfig::coordinate_flow(int dim) const {
  flow::FlowConfig f;
  f.dim = dim;
  f.layers = layers;
  f.hidden = hidden;
  f.spline.bins = spline_bins;
  return f;
}

flow::FlowConfig TrainConfig::density_flow() const {
  flow::FlowConfig f = coordinate_flow(latent_dim);
  return f;
}

TrainConfig TrainConfig::torus() {
  TrainConfig c;
  c.latent_dim = 2;
  c.e1 = 60;
  c.e2 = 30;
  c.e3 = 60;
  c.e4 = 60;
  c.e5 = 60;
  c.lambda_m = 100.0;
  c.lambda_p = 0.1;
  c.lambda_o = 25.0;
  c.lambda_d = 0.01;
  c.mapper.n_cubes = 5;
  c.mapper.perc_overlap = 0.45;
  c.mapper.latent_dim = 2;
  return c;
}

TrainConfig TrainConfig::trefoil() {
  TrainConfig c;
  c.latent_dim = 1;
  c.e1 = 15;
  c.e2 = 30;
  c.e3 = 60;
  c.e4 = 60;
  c.e5 = 60;
  c.lambda_m = 100.0;
  c.lambda_p = 0.01;
  c.lambda_o = 100.0;
  c.lambda_d = 0.1;
  c.mapper.n_cubes = 2;
  c.mapper.perc_overlap = 0.2;
  c.mapper.latent_dim = 1;
  return c;
}

std::vector<flow::CoordinateMap> AtlasModel::coordinate_maps() const {
  std::vector<flow::CoordinateMap> out;
  for (const auto& c : charts) out.push_back(c.phi);
  return out;
}

DisintegrationWeights disintegration_weights(const cover::RefinedPartition& part, int chart_count) {
  DisintegrationWeights w;
  w.c = Vector::Zero(chart_count);
  for (const auto& cell : part.cells)
    for (int k : cell.owners) {
      if (k < 0 || k >= chart_count) throw ArgumentError("cell owner out of range");
      w.c(k) += cell.nu / cell.n;
    }
  for (int k = 0; k < chart_count; ++k)
    if (!(w.c(k) > 0.0)) throw DegenerateChartError("chart " + std::to_string(k + 1) + " has zero total weight");
  w.cell_weight.assign(static_cast<std::size_t>(chart_count), std::vector<double>(part.cells.size(), 0.0));
  for (std::size_t i = 0; i < part.cells.size(); ++i)
    for (int k : part.cells[i].owners)
      w.cell_weight[static_cast<std::size_t>(k)][i] = part.cells[i].nu / part.cells[i].n / w.c(k);
  return w;
}

Vector bootstrap_probabilities(const IndexList& members, const std::vector<int>& multiplicity) {
  if (members.empty()) throw DegenerateChartError("bootstrap over an empty chart");
  Vector p(static_cast<Index>(members.size()));
  for (std::size_t i = 0; i < members.size(); ++i) {
    const int m = multiplicity.at(static_cast<std::size_t>(members[i]));
    if (m < 1) throw CoverError("chart member with zero multiplicity");
    p(static_cast<Index>(i)) = 1.0 / m;
  }
  return p / p.sum();
}

IndexList bootstrap_batch(const IndexList& members, const std::vector<int>& multiplicity, int b, Rng& rng) {
  const Vector p = bootstrap_probabilities(members, multiplicity);
  std::vector<double> cdf(static_cast<std::size_t>(p.size()));
  double acc = 0.0;
  for (Index i = 0; i < p.size(); ++i) cdf[static_cast<std::size_t>(i)] = (acc += p(i));
  IndexList out(static_cast<std::size_t>(b));
  for (auto& o : out) {
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), uniform01(rng));
    const auto pos = std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1);
    o = members[static_cast<std::size_t>(pos)];
  }
  return out;
}

AtlasModel train(const Matrix& points, const cover::ChartCover& cov, const TrainConfig& cfg, TrainReport* report,
                 const ProgressFn& progress) {
  cfg.validate();
  if (points.rows() != cov.point_count()) throw ArgumentError("point count does not match the cover");
  if (cfg.latent_dim >= points.cols()) throw ConfigError("latent_dim must be smaller than the ambient dimension");
  for (std::size_t i = 0; i < cov.multiplicity.size(); ++i)
    if (cov.multiplicity[i] < 1) throw CoverError("point " + std::to_string(i) + " is not covered");
  const auto part = cover::refine_partition(cov);
  const auto weights = disintegration_weights(part, cov.chart_count());

  Trainer t{points, cov, cfg, {}, {}};
  t.charts.resize(static_cast<std::size_t>(cov.chart_count()));
  t.rows.resize(t.charts.size());
  for (int k = 0; k < cov.chart_count(); ++k) {
    auto& s = t.charts[static_cast<std::size_t>(k)];
    s.id = k;
    s.members = cov.charts[static_cast<std::size_t>(k)];
    build_chart(s, points, cov, cfg);
  }
  const auto n_charts = static_cast<std::ptrdiff_t>(t.charts.size());

  parallel_for(n_charts, [&](std::ptrdiff_t k) {
    auto& s = t.charts[static_cast<std::size_t>(k)];
    t.phase_pretrain(s);
    t.phase_density_only(s, 2, cfg.e1);
    t.phase_manifold(s);
  }, true);

  TrainReport local_report;
  TrainReport& rep = report ? *report : local_report;
  if (cfg.e4 > 0) {
    rep.overlap_spread_start = t.overlap_spread();
    std::vector<nn::LrSchedule> sched;
    std::vector<long> steps(t.charts.size(), 0);
    for (const auto& s : t.charts) sched.push_back({cfg.lr, cfg.e4 * s.steps_per_epoch});
    losses::ExpectedPoints xhat;
    for (int j = 1; j <= cfg.e4; ++j) {
      if ((j - 1) % cfg.cs == 0) xhat = losses::expected_points(t.maps(), cov, points, j);
      parallel_for(n_charts, [&](std::ptrdiff_t k) {
        t.compat_epoch(t.charts[static_cast<std::size_t>(k)], j, xhat, sched[static_cast<std::size_t>(k)],
                       steps[static_cast<std::size_t>(k)]);
      }, true);
    }
    rep.overlap_spread_end = t.overlap_spread();
  }

  parallel_for(n_charts, [&](std::ptrdiff_t k) {
    t.phase_density_only(t.charts[static_cast<std::size_t>(k)], 5, cfg.e5);
  }, true);

  rep.log.clear();
  for (const auto& per_chart : t.rows)
    for (const auto& row : per_chart) rep.log.push_back(row);
  std::stable_sort(rep.log.begin(), rep.log.end(), [](const LogRow& a, const LogRow& b) {
    return std::tie(a.phase, a.epoch, a.chart) < std::tie(b.phase, b.epoch, b.chart);
  });
  rep.recon_curve.clear();
  for (int phase : {3, 4}) {
    std::map<int, std::pair<double, int>> per_epoch;
    for (const auto& row : rep.log) {
      if (row.phase != phase) continue;
      auto& acc = per_epoch[row.epoch];
      acc.first += row.recon * row.batches;
      acc.second += row.batches;
    }
    for (const auto& [epoch, acc] : per_epoch) rep.recon_curve.push_back(acc.first / acc.second);
  }
  if (progress)
    for (const auto& row : rep.log) progress(row);

  AtlasModel model;
  model.dim = static_cast<int>(points.cols());
  model.latent_dim = cfg.latent_dim;
  model.cover = cov;
  model.partition = part;
  model.config = cfg;
  for (auto& s : t.charts) {
    ChartModel cm;
    cm.id = s.id;
    cm.members = s.members;
    cm.phi = std::move(s.phi);
    cm.gamma = std::move(s.gamma);
    cm.c = weights.c(s.id);
    model.charts.push_back(std::move(cm));
  }
  return model;
}

Samples sample(const AtlasModel& model, int count, Rng& rng) {
  if (count < 0) throw ArgumentError("sample count must be nonnegative");
  const int n = model.latent_dim;
  std::vector<double> cdf;
  double acc = 0.0;
  for (const auto& c : model.charts) cdf.push_back(acc += c.c);
  Samples out;
  out.chart.resize(static_cast<std::size_t>(count));
  Matrix w(n, count);
  for (int i = 0; i < count; ++i) {
    const double u = uniform01(rng) * acc;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    out.chart[static_cast<std::size_t>(i)] =
        static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1));
    for (int r = 0; r < n; ++r) w(r, i) = standard_normal(rng);
  }
  out.points = Matrix(count, model.dim);
  for (int k = 0; k < model.chart_count(); ++k) {
    IndexList ids;
    for (int i = 0; i < count; ++i)
      if (out.chart[static_cast<std::size_t>(i)] == k) ids.push_back(i);
    if (ids.empty()) continue;
    Matrix wk(n, static_cast<Index>(ids.size()));
    for (std::size_t c = 0; c < ids.size(); ++c) wk.col(static_cast<Index>(c)) = w.col(ids[c]);
    const auto& chart = model.charts[static_cast<std::size_t>(k)];
    const Matrix x = chart.phi.embed(chart.gamma.inverse(wk));
    for (std::size_t c = 0; c < ids.size(); ++c) out.points.row(ids[c]) = x.col(static_cast<Index>(c)).transpose();
  }
  return out;
}

Vector log_density(const AtlasModel& model, const Matrix& x, int chart) {
  if (chart < 0 || chart >= model.chart_count()) throw ArgumentError("chart id out of range");
  if (x.cols() != model.dim) throw ArgumentError("points have the wrong dimension");
  const auto& c = model.charts[static_cast<std::size_t>(chart)];
  const int n = model.latent_dim;
  const Matrix v = c.phi.latent(x.transpose());
  Vector ld;
  const Matrix w = c.gamma.forward(v, &ld);
  const Vector gram = c.phi.gram_logdet(v);
  Vector out(x.rows());
  const double log_norm = 0.5 * n * std::log(2.0 * std::numbers::pi);
  for (Index i = 0; i < x.rows(); ++i) out(i) = -0.5 * w.col(i).squaredNorm() - log_norm + ld(i) - gram(i);
  return out;
}

Vector chart_recon_error(const AtlasModel& model, const Matrix& x, int chart) {
  if (chart < 0 || chart >= model.chart_count()) throw ArgumentError("chart id out of range");
  const Matrix xt = x.transpose();
  return (model.charts[static_cast<std::size_t>(chart)].phi.reconstruct(xt) - xt).colwise().squaredNorm().transpose();
}

Vector log_density_mixture(const AtlasModel& model, const Matrix& x) {
  const double thr2 = model.config.membership_threshold * model.config.membership_threshold;
  const Index m = x.rows();
  Matrix terms = Matrix::Constant(model.chart_count(), m, -std::numeric_limits<double>::infinity());
  for (int k = 0; k < model.chart_count(); ++k) {
    const Vector err = chart_recon_error(model, x, k);
    IndexList rows;
    for (Index i = 0; i < m; ++i)
      if (err(i) < thr2) rows.push_back(static_cast<int>(i));
    if (rows.empty()) continue;
    Matrix sub(static_cast<Index>(rows.size()), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<Index>(r)) = x.row(rows[r]);
    const Vector lp = log_density(model, sub, k);
    const double lc = std::log(model.charts[static_cast<std::size_t>(k)].c);
    for (std::size_t r = 0; r < rows.size(); ++r) terms(k, rows[r]) = lc + lp(static_cast<Index>(r));
  }
  Vector out(m);
  for (Index i = 0; i < m; ++i) {
    const double mx = terms.col(i).maxCoeff();
    if (!std::isfinite(mx)) {
      out(i) = mx;
      continue;
    }
    out(i) = mx + std::log((terms.col(i).array() - mx).exp().sum());
  }
  return out;
}

BoundaryTable boundary_table(const AtlasModel& cover_model, const AtlasModel& partition_model, const Matrix& points) {
  if (cover_model.chart_count() != partition_model.chart_count() || cover_model.dim != partition_model.dim ||
      cover_model.cover.point_count() != partition_model.cover.point_count())
    throw LabelMismatchError("checkpoints disagree on chart count, point count or dimension");
  if (points.rows() != cover_model.cover.point_count() || points.cols() != cover_model.dim)
    throw ArgumentError("points do not match the checkpoints");
  const auto& cov = cover_model.cover;
  const IndexList labels = cover::partition_from_cover(cov, points);
  const auto members = cov.memberships();
  const int L = cov.chart_count();
  // Shared point counts between charts.
  Eigen::MatrixXi shared = Eigen::MatrixXi::Zero(L, L);
  for (const auto& ks : members)
    for (int a : ks)
      for (int b : ks)
        if (a != b) ++shared(a, b);

  std::map<std::pair<int, int>, IndexList> groups;
  for (const auto& [a, b] : cov.nerve_edges) {
    groups[{a, b}];
    groups[{b, a}];
  }
  BoundaryTable table;
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (members[i].size() < 2) continue;
    const int a = labels[i];
    int best = -1;
    for (int k : members[i]) {
      if (k == a) continue;
      if (best < 0 || shared(a, k) > shared(a, best)) best = k;
    }
    groups[{a, best}].push_back(static_cast<int>(i));
    ++table.band_points;
  }
  double cover_total = 0.0, part_total = 0.0;
  for (const auto& [key, ids] : groups) {
    BoundaryRow row;
    row.data_label = key.first;
    row.model_label = key.second;
    row.count = static_cast<int>(ids.size());
    if (ids.empty()) {
      row.cover_error = row.partition_error = std::nan("");
      table.rows.push_back(row);
      continue;
    }
    Matrix x(static_cast<Index>(ids.size()), points.cols());
    for (std::size_t r = 0; r < ids.size(); ++r) x.row(static_cast<Index>(r)) = points.row(ids[r]);
    const Vector ec = chart_recon_error(cover_model, x, key.second);
    const Vector ep = chart_recon_error(partition_model, x, key.second);
    row.cover_error = ec.mean();
    row.partition_error = ep.mean();
    cover_total += ec.sum();
    part_total += ep.sum();
    table.rows.push_back(row);
  }
  if (table.band_points > 0) {
    table.cover_average = cover_total / table.band_points;
    table.partition_average = part_total / table.band_points;
  }
  return table;
}

namespace {

io::Json flow_to_json(const flow::FlowStack& f) {
  return io::Json{{"dim", f.dim()},
                  {"layers", f.config().layers},
                  {"hidden", f.config().hidden},
                  {"bins", f.config().spline.bins},
                  {"bound", f.config().spline.bound},
                  {"params", std::vector<double>(f.params().data(), f.params().data() + f.params().size())}};
}

flow::FlowStack flow_from_json(const io::Json& j) {
  flow::FlowConfig cfg;
  cfg.dim = j.at("dim").get<int>();
  cfg.layers = j.at("layers").get<int>();
  cfg.hidden = j.at("hidden").get<std::vector<int>>();
  cfg.spline.bins = j.at("bins").get<int>();
  cfg.spline.bound = j.at("bound").get<double>();
  flow::FlowStack f(cfg);
  const auto p = j.at("params").get<std::vector<double>>();
  f.set_params(Eigen::Map<const Vector>(p.data(), static_cast<Index>(p.size())));
  return f;
}

std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_vec(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())); }

}  // namespace

void save(const AtlasModel& model, const std::string& path) {
  io::Json j;
  j["format_version"] = model.format_version;
  j["dim"] = model.dim;
  j["latent_dim"] = model.latent_dim;
  j["config"] = io::config_to_json(model.config);
  j["cover"] = io::cover_to_json(model.cover, model.partition);
  io::Json charts = io::Json::array();
  for (const auto& c : model.charts) {
    io::Json frame = io::Json::array();
    for (Index r = 0; r < c.phi.frame.rows(); ++r) frame.push_back(to_vec(c.phi.frame.row(r).transpose()));
    charts.push_back({{"id", c.id},
                      {"members", c.members},
                      {"c", c.c},
                      {"phi",
                       {{"center", to_vec(c.phi.center)},
                        {"scale", c.phi.scale},
                        {"latent_dim", c.phi.latent_dim},
                        {"frame", frame},
                        {"flow", flow_to_json(c.phi.flow)}}},
                      {"gamma",
                       {{"center", to_vec(c.gamma.center)}, {"scale", c.gamma.scale}, {"flow", flow_to_json(c.gamma.flow)}}}});
  }
  j["charts"] = charts;
  io::write_json_file(path, j);
}

AtlasModel load(const std::string& path) {
  const io::Json j = io::read_json_file(path);
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kFormatVersion)
      throw FormatVersionError(path + ": checkpoint format_version " + std::to_string(version) + " is not supported (expected " +
                               std::to_string(kFormatVersion) + ")");
    AtlasModel m;
    m.dim = j.at("dim").get<int>();
    m.latent_dim = j.at("latent_dim").get<int>();
    m.config = io::config_from_json(j.at("config"), TrainConfig{});
    m.cover = io::cover_from_json(j.at("cover"));
    m.partition = cover::refine_partition(m.cover);
    for (const auto& cj : j.at("charts")) {
      ChartModel c;
      c.id = cj.at("id").get<int>();
      c.members = cj.at("members").get<IndexList>();
      c.c = cj.at("c").get<double>();
      const auto& pj = cj.at("phi");
      c.phi.flow = flow_from_json(pj.at("flow"));
      c.phi.center = from_vec(pj.at("center").get<std::vector<double>>());
      c.phi.scale = pj.at("scale").get<double>();
      c.phi.latent_dim = pj.at("latent_dim").get<int>();
      const auto rows = pj.at("frame").get<std::vector<std::vector<double>>>();
      if (!rows.empty()) {
        c.phi.frame = Matrix(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
        for (std::size_t r = 0; r < rows.size(); ++r) c.phi.frame.row(static_cast<Index>(r)) = from_vec(rows[r]).transpose();
      }
      const auto& gj = cj.at("gamma");
      c.gamma.flow = flow_from_json(gj.at("flow"));
      c.gamma.center = from_vec(gj.at("center").get<std::vector<double>>());
      c.gamma.scale = gj.at("scale").get<double>();
      m.charts.push_back(std::move(c));
    }
    if (m.chart_count() != m.cover.chart_count()) throw ParseError(path + ": chart count does not match the cover", 0);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": malformed checkpoint: " + e.what(), 0);
  } catch (const ConfigError& e) {
    throw ParseError(path + ": malformed checkpoint config: " + e.what(), 0);
  } catch (const CoverError& e) {
    throw ParseError(path + ": malformed checkpoint cover: " + e.what(), 0);
  }
}

}  // namespace atlasflow::atlas
