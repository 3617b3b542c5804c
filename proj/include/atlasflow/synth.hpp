#pragma once

#include "atlasflow/common.hpp"

#include <cstdint>
#include <optional>

namespace atlasflow::synth {

enum class ManifoldKind { trefoil, torus };

struct GmmComponent {
  std::vector<double> mean;  // one entry per manifold parameter
  double std = 1.0;
  double weight = 1.0;
};

struct ManifoldSpec {
  ManifoldKind kind = ManifoldKind::torus;
  int n_points = 10000;
  double noise_sigma = 0.1;
  std::vector<GmmComponent> gmm;  // empty: the dataset's default mixture
  std::uint64_t seed = 0;
};

// Points plus the generating parameters (t for the knot, (t, s) for the torus).
struct PointCloud {
  Matrix points;  // N x d, one point per row
  std::optional<Matrix> params;

  Index size() const { return points.rows(); }
  Index dim() const { return points.cols(); }
};

// Two components at 0 and pi with std pi/6.
std::vector<GmmComponent> default_trefoil_gmm();
// Four components with means uniform on [-pi, pi]^2 and std pi/3, drawn from seed.
std::vector<GmmComponent> default_torus_gmm(std::uint64_t seed);

Eigen::Vector3d trefoil_point(double t);
Eigen::Vector3d torus_point(double t, double s);

PointCloud gen_trefoil(const ManifoldSpec& spec);
PointCloud gen_torus(const ManifoldSpec& spec);
PointCloud generate(const ManifoldSpec& spec);

// Scott's rule, one bandwidth per ambient dimension.
Vector scott_bandwidth(const Matrix& reference);

// Gaussian product-kernel density estimate at every query row. Each kernel
// integrates to one, so the estimate is a probability density on R^d.
Vector kde_density(const Matrix& reference, const Matrix& queries, const Vector& bandwidth);
Vector kde_density(const Matrix& reference, const Matrix& queries, double bandwidth);

}  // namespace atlasflow::synth
