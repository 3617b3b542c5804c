#pragma once

#include "atlasflow/common.hpp"

#include <array>

namespace atlasflow::flow {

inline constexpr int kMaxBins = 32;

// Monotone rational-quadratic spline on [-bound, bound] with identity tails.
// A spline is driven by 3K-1 unnormalized values: K widths, K heights (both
// through a softmax) and K-1 interior knot derivatives (through a scaled
// softplus). All-zero raw values give the identity map exactly.
struct SplineConfig {
  int bins = 8;
  double bound = 5.0;
  double min_bin = 1.0 / 1024.0;
  double min_derivative = 1.0 / 1024.0;

  int raw_count() const { return 3 * bins - 1; }
  void validate() const;
};

struct RqSplineParams {
  SplineConfig config;
  std::vector<double> raw;  // 3K-1 unnormalized values

  static RqSplineParams identity(const SplineConfig& config);
};

// Normalized knots: positions, values and derivatives at the K+1 knots.
struct SplineKnots {
  int bins = 0;
  std::array<double, kMaxBins + 1> xs{};
  std::array<double, kMaxBins + 1> ys{};
  std::array<double, kMaxBins + 1> derivs{};
  std::array<double, kMaxBins> width_softmax{};
  std::array<double, kMaxBins> height_softmax{};
  std::array<double, kMaxBins> deriv_sigmoid{};
};

SplineKnots spline_knots(const SplineConfig& config, const double* raw);

struct SplineValue {
  double value;
  double logdet;  // log |d value / d input|
};

SplineValue spline_forward(const SplineConfig& config, const double* raw, double x);
SplineValue spline_inverse(const SplineConfig& config, const double* raw, double y);
SplineValue spline_forward(const RqSplineParams& p, double x);
SplineValue spline_inverse(const RqSplineParams& p, double y);

// Reverse pass of the forward map at x for cotangents (g_value, g_logdet).
// Accumulates into g_raw (3K-1 entries) and returns the gradient w.r.t. x.
double spline_forward_backward(const SplineConfig& config, const double* raw, double x, double g_value,
                               double g_logdet, double* g_raw);

// Reverse pass of the inverse map for cotangent g_x on its output. x is the
// inverse's output (the pre-image). Accumulates into g_raw and returns the
// gradient w.r.t. the inverse's input y.
double spline_inverse_backward(const SplineConfig& config, const double* raw, double x, double g_x, double* g_raw);

}  // namespace atlasflow::flow
