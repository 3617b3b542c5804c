#include "atlasflow/synth.hpp"

#include "atlasflow/kernels.hpp"

#include <numbers>

namespace atlasflow::synth {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_angle(double a) {
  double w = std::fmod(a, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  if (w >= kTwoPi) w = 0.0;
  return w;
}

void validate_gmm(const std::vector<GmmComponent>& gmm, std::size_t param_dim) {
  if (gmm.empty()) throw ConfigError("mixture has no components");
  for (const auto& c : gmm) {
    if (!(c.std > 0.0) || !std::isfinite(c.std))
      throw ConfigError("mixture component std must be positive, got " + std::to_string(c.std));
    if (!(c.weight > 0.0) || !std::isfinite(c.weight))
      throw ConfigError("mixture component weight must be positive, got " + std::to_string(c.weight));
    if (c.mean.size() != param_dim)
      throw ConfigError("mixture component mean has " + std::to_string(c.mean.size()) +
                        " entries, expected " + std::to_string(param_dim));
  }
}

// Draws wrapped mixture parameters, one row per point.
Matrix sample_parameters(const std::vector<GmmComponent>& gmm, int n, std::size_t param_dim, Rng& rng) {
  double total = 0.0;
  for (const auto& c : gmm) total += c.weight;
  std::vector<double> cumulative;
  double acc = 0.0;
  for (const auto& c : gmm) cumulative.push_back(acc += c.weight / total);
  cumulative.back() = 1.0;

  Matrix params(n, static_cast<Index>(param_dim));
  for (int i = 0; i < n; ++i) {
    const double u = uniform01(rng);
    std::size_t comp = 0;
    while (comp + 1 < cumulative.size() && u >= cumulative[comp]) ++comp;
    for (std::size_t p = 0; p < param_dim; ++p)
      params(i, static_cast<Index>(p)) = wrap_angle(gmm[comp].mean[p] + gmm[comp].std * standard_normal(rng));
  }
  return params;
}

void check_spec(const ManifoldSpec& spec, ManifoldKind expected) {
  if (spec.kind != expected) throw ArgumentError("manifold spec kind does not match generator");
  if (spec.n_points < 1) throw ConfigError("n_points must be at least 1");
  if (!(spec.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be nonnegative");
}

}  // namespace

std::vector<GmmComponent> default_trefoil_gmm() {
  const double sd = std::numbers::pi / 6.0;
  return {{{0.0}, sd, 1.0}, {{std::numbers::pi}, sd, 1.0}};
}

std::vector<GmmComponent> default_torus_gmm(std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x6d6978ULL});
  std::vector<GmmComponent> out;
  for (int c = 0; c < 4; ++c) {
    const double t = -std::numbers::pi + kTwoPi * uniform01(rng);
    const double s = -std::numbers::pi + kTwoPi * uniform01(rng);
    out.push_back({{t, s}, std::numbers::pi / 3.0, 1.0});
  }
  return out;
}

Eigen::Vector3d trefoil_point(double t) {
  return {std::sin(t) + 3.0 * std::sin(2.0 * t), std::cos(t) - 3.0 * std::cos(2.0 * t), -std::sin(3.0 * t)};
}

Eigen::Vector3d torus_point(double t, double s) {
  const double r = std::cos(t) + 3.0;
  return {r * std::cos(s), r * std::sin(s), std::sin(t)};
}

PointCloud gen_trefoil(const ManifoldSpec& spec) {
  check_spec(spec, ManifoldKind::trefoil);
  const auto gmm = spec.gmm.empty() ? default_trefoil_gmm() : spec.gmm;
  validate_gmm(gmm, 1);
  Rng rng = make_rng(spec.seed, {1});
  PointCloud cloud;
  cloud.params = sample_parameters(gmm, spec.n_points, 1, rng);
  cloud.points.resize(spec.n_points, 3);
  for (int i = 0; i < spec.n_points; ++i) cloud.points.row(i) = trefoil_point((*cloud.params)(i, 0)).transpose();
  if (spec.noise_sigma > 0.0)
    for (int i = 0; i < spec.n_points; ++i)
      for (int c = 0; c < 3; ++c) cloud.points(i, c) += spec.noise_sigma * standard_normal(rng);
  return cloud;
}

PointCloud gen_torus(const ManifoldSpec& spec) {
  check_spec(spec, ManifoldKind::torus);
  const auto gmm = spec.gmm.empty() ? default_torus_gmm(spec.seed) : spec.gmm;
  validate_gmm(gmm, 2);
  Rng rng = make_rng(spec.seed, {2});
  PointCloud cloud;
  cloud.params = sample_parameters(gmm, spec.n_points, 2, rng);
  cloud.points.resize(spec.n_points, 3);
  for (int i = 0; i < spec.n_points; ++i)
    cloud.points.row(i) = torus_point((*cloud.params)(i, 0), (*cloud.params)(i, 1)).transpose();
  if (spec.noise_sigma > 0.0)
    for (int i = 0; i < spec.n_points; ++i)
      for (int c = 0; c < 3; ++c) cloud.points(i, c) += spec.noise_sigma * standard_normal(rng);
  return cloud;
}

PointCloud generate(const ManifoldSpec& spec) {
  return spec.kind == ManifoldKind::trefoil ? gen_trefoil(spec) : gen_torus(spec);
}

Vector scott_bandwidth(const Matrix& reference) {
  if (reference.rows() < 2) throw ArgumentError("bandwidth rule needs at least two reference points");
  const double n = static_cast<double>(reference.rows());
  const double d = static_cast<double>(reference.cols());
  const Eigen::RowVectorXd mean = reference.colwise().mean();
  Vector h(reference.cols());
  for (Index c = 0; c < reference.cols(); ++c) {
    const double var = (reference.col(c).array() - mean(c)).square().sum() / (n - 1.0);
    h(c) = std::sqrt(var) * std::pow(n, -1.0 / (d + 4.0));
    if (!(h(c) > 0.0)) h(c) = 1e-3;
  }
  return h;
}

Vector kde_density(const Matrix& reference, const Matrix& queries, const Vector& bandwidth) {
  if (reference.rows() == 0) throw ArgumentError("kde reference cloud is empty");
  if (queries.cols() != reference.cols())
    throw ArgumentError("kde query dimension " + std::to_string(queries.cols()) + " != reference dimension " +
                        std::to_string(reference.cols()));
  if (bandwidth.size() != reference.cols() || !(bandwidth.array() > 0.0).all())
    throw ArgumentError("kde bandwidth must be positive in every dimension");
  return kernels::kde(reference, queries, bandwidth);
}

Vector kde_density(const Matrix& reference, const Matrix& queries, double bandwidth) {
  if (!(bandwidth > 0.0)) throw ArgumentError("kde bandwidth must be positive");
  return kde_density(reference, queries, Vector::Constant(reference.cols(), bandwidth));
}

}  // namespace atlasflow::synth
