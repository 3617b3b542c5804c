#include "atlasflow/spline.hpp"

#include <algorithm>
#include <array>

namespace atlasflow::flow {
namespace {

// Forward-mode number carrying partials w.r.t. the seven quantities a bin
// evaluation depends on: x, x_lo, x_hi, y_lo, y_hi, d_lo, d_hi.
struct Dual {
  double v = 0.0;
  std::array<double, 7> g{};

  static Dual var(double value, int slot) {
    Dual d;
    d.v = value;
    d.g[static_cast<std::size_t>(slot)] = 1.0;
    return d;
  }
};

inline Dual operator+(const Dual& a, const Dual& b) {
  Dual r;
  r.v = a.v + b.v;
  for (std::size_t i = 0; i < 7; ++i) r.g[i] = a.g[i] + b.g[i];
  return r;
}
inline Dual operator-(const Dual& a, const Dual& b) {
  Dual r;
  r.v = a.v - b.v;
  for (std::size_t i = 0; i < 7; ++i) r.g[i] = a.g[i] - b.g[i];
  return r;
}
inline Dual operator*(const Dual& a, const Dual& b) {
  Dual r;
  r.v = a.v * b.v;
  for (std::size_t i = 0; i < 7; ++i) r.g[i] = a.g[i] * b.v + a.v * b.g[i];
  return r;
}
inline Dual operator/(const Dual& a, const Dual& b) {
  Dual r;
  r.v = a.v / b.v;
  const double inv = 1.0 / b.v;
  for (std::size_t i = 0; i < 7; ++i) r.g[i] = (a.g[i] - r.v * b.g[i]) * inv;
  return r;
}
inline Dual operator-(double a, const Dual& b) {
  Dual r;
  r.v = a - b.v;
  for (std::size_t i = 0; i < 7; ++i) r.g[i] = -b.g[i];
  return r;
}
inline Dual operator-(const Dual& a, double b) {
  Dual r = a;
  r.v = a.v - b;
  return r;
}
inline Dual operator*(double a, const Dual& b) {
  Dual r;
  r.v = a * b.v;
  for (std::size_t i = 0; i < 7; ++i) r.g[i] = a * b.g[i];
  return r;
}
inline Dual log(const Dual& a) {
  Dual r;
  r.v = std::log(a.v);
  for (std::size_t i = 0; i < 7; ++i) r.g[i] = a.g[i] / a.v;
  return r;
}
using std::log;

// Rational-quadratic bin written so that the identity configuration
// (y_lo == x_lo, s == d_lo == d_hi == 1) evaluates to y == x and logdet == 0
// without rounding.
template <class T>
void eval_bin(const T& x, const T& xlo, const T& xhi, const T& ylo, const T& yhi, const T& dlo, const T& dhi, T& y,
              T& ld) {
  const T w = xhi - xlo;
  const T h = yhi - ylo;
  const T s = h / w;
  const T xi = (x - xlo) / w;
  const T om = 1.0 - xi;
  const T t = xi * om;
  const T sum = dhi + dlo - 2.0 * s;
  const T den = s + sum * t;
  y = x + (ylo - xlo) + (s - 1.0) * (x - xlo) + h * t * ((dlo - s) - sum * xi) / den;
  const T numd = s * s * (s + (dhi - s) * xi * xi + (dlo - s) * om * om);
  ld = log(numd) - 2.0 * log(den);
}

double softplus(double u) { return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u)); }
double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

void softmax(const double* u, int k, double* out) {
  double mx = u[0];
  for (int i = 1; i < k; ++i) mx = std::max(mx, u[i]);
  double total = 0.0;
  for (int i = 0; i < k; ++i) total += (out[i] = std::exp(u[i] - mx));
  for (int i = 0; i < k; ++i) out[i] /= total;
}

int find_bin(const std::array<double, kMaxBins + 1>& knots, int bins, double v) {
  int k = 0;
  while (k + 1 < bins && v >= knots[static_cast<std::size_t>(k + 1)]) ++k;
  return k;
}

void check_raw(const SplineConfig& config, const double* raw) {
  for (int i = 0; i < config.raw_count(); ++i)
    if (!std::isfinite(raw[i])) throw NumericError("spline parameter " + std::to_string(i) + " is not finite");
}

// Chain local-bin gradients (x_lo, x_hi, y_lo, y_hi, d_lo, d_hi) back to raw.
void scatter_local_grads(const SplineConfig& config, const SplineKnots& kn, int k, const double* g_local,
                         double* g_raw) {
  const int bins = config.bins;
  const double b2 = 2.0 * config.bound;
  const double scale = 1.0 - config.min_bin * bins;
  std::array<double, kMaxBins + 1> g_xs{}, g_ys{}, g_d{};
  g_xs[static_cast<std::size_t>(k)] += g_local[0];
  g_xs[static_cast<std::size_t>(k + 1)] += g_local[1];
  g_ys[static_cast<std::size_t>(k)] += g_local[2];
  g_ys[static_cast<std::size_t>(k + 1)] += g_local[3];
  g_d[static_cast<std::size_t>(k)] += g_local[4];
  g_d[static_cast<std::size_t>(k + 1)] += g_local[5];

  auto through_softmax = [&](const std::array<double, kMaxBins + 1>& g_knot,
                             const std::array<double, kMaxBins>& sm, double* g_u) {
    // knot j (1..K-1) = -B + 2B * sum_{i<j} (min_bin + scale * sm_i)
    std::array<double, kMaxBins> g_sm{};
    double running = 0.0;
    for (int i = bins - 1; i >= 0; --i) {
      if (i + 1 <= bins - 1) running += g_knot[static_cast<std::size_t>(i + 1)];
      g_sm[static_cast<std::size_t>(i)] = b2 * scale * running;
    }
    double dot = 0.0;
    for (int i = 0; i < bins; ++i) dot += sm[static_cast<std::size_t>(i)] * g_sm[static_cast<std::size_t>(i)];
    for (int i = 0; i < bins; ++i)
      g_u[i] += sm[static_cast<std::size_t>(i)] * (g_sm[static_cast<std::size_t>(i)] - dot);
  };
  through_softmax(g_xs, kn.width_softmax, g_raw);
  through_softmax(g_ys, kn.height_softmax, g_raw + bins);
  for (int j = 1; j < bins; ++j)
    g_raw[2 * bins + j - 1] += g_d[static_cast<std::size_t>(j)] * kn.deriv_sigmoid[static_cast<std::size_t>(j - 1)];
}

void local_duals(const SplineKnots& kn, int k, double x, Dual& y, Dual& ld) {
  const auto ks = static_cast<std::size_t>(k);
  eval_bin(Dual::var(x, 0), Dual::var(kn.xs[ks], 1), Dual::var(kn.xs[ks + 1], 2), Dual::var(kn.ys[ks], 3),
           Dual::var(kn.ys[ks + 1], 4), Dual::var(kn.derivs[ks], 5), Dual::var(kn.derivs[ks + 1], 6), y, ld);
}

}  // namespace

void SplineConfig::validate() const {
  if (bins < 1 || bins > kMaxBins) throw ArgumentError("spline bins must be in [1, " + std::to_string(kMaxBins) + "]");
  if (!(bound > 0.0)) throw ArgumentError("spline bound must be positive");
  if (!(min_bin > 0.0) || min_bin * bins >= 1.0) throw ArgumentError("spline min_bin too large for the bin count");
  if (!(min_derivative > 0.0) || min_derivative >= 1.0) throw ArgumentError("spline min_derivative must be in (0, 1)");
}

RqSplineParams RqSplineParams::identity(const SplineConfig& config) {
  return {config, std::vector<double>(static_cast<std::size_t>(config.raw_count()), 0.0)};
}

SplineKnots spline_knots(const SplineConfig& config, const double* raw) {
  const int bins = config.bins;
  SplineKnots kn;
  kn.bins = bins;
  softmax(raw, bins, kn.width_softmax.data());
  softmax(raw + bins, bins, kn.height_softmax.data());
  const double scale = 1.0 - config.min_bin * bins;
  const double b2 = 2.0 * config.bound;
  double cw = 0.0;
  double ch = 0.0;
  kn.xs[0] = kn.ys[0] = -config.bound;
  for (int j = 1; j < bins; ++j) {
    cw += config.min_bin + scale * kn.width_softmax[static_cast<std::size_t>(j - 1)];
    ch += config.min_bin + scale * kn.height_softmax[static_cast<std::size_t>(j - 1)];
    kn.xs[static_cast<std::size_t>(j)] = -config.bound + b2 * cw;
    kn.ys[static_cast<std::size_t>(j)] = -config.bound + b2 * ch;
  }
  kn.xs[static_cast<std::size_t>(bins)] = kn.ys[static_cast<std::size_t>(bins)] = config.bound;

  // Boundary derivatives are 1 so the spline joins the identity tails C^1.
  const double sp0 = softplus(0.0);
  const double span = 1.0 - config.min_derivative;
  kn.derivs[0] = kn.derivs[static_cast<std::size_t>(bins)] = 1.0;
  for (int j = 1; j < bins; ++j) {
    const double u = raw[2 * bins + j - 1];
    kn.derivs[static_cast<std::size_t>(j)] = config.min_derivative + span * (softplus(u) / sp0);
    kn.deriv_sigmoid[static_cast<std::size_t>(j - 1)] = span * sigmoid(u) / sp0;
  }
  return kn;
}

SplineValue spline_forward(const SplineConfig& config, const double* raw, double x) {
  check_raw(config, raw);
  if (!(x >= -config.bound && x <= config.bound)) return {x, 0.0};
  const SplineKnots kn = spline_knots(config, raw);
  const int k = find_bin(kn.xs, kn.bins, x);
  const auto ks = static_cast<std::size_t>(k);
  double y = 0.0;
  double ld = 0.0;
  eval_bin(x, kn.xs[ks], kn.xs[ks + 1], kn.ys[ks], kn.ys[ks + 1], kn.derivs[ks], kn.derivs[ks + 1], y, ld);
  return {y, ld};
}

SplineValue spline_inverse(const SplineConfig& config, const double* raw, double y) {
  check_raw(config, raw);
  if (!(y >= -config.bound && y <= config.bound)) return {y, 0.0};
  const SplineKnots kn = spline_knots(config, raw);
  const int k = find_bin(kn.ys, kn.bins, y);
  const auto ks = static_cast<std::size_t>(k);
  const double xlo = kn.xs[ks];
  const double w = kn.xs[ks + 1] - xlo;
  const double ylo = kn.ys[ks];
  const double h = kn.ys[ks + 1] - ylo;
  const double s = h / w;
  const double dlo = kn.derivs[ks];
  const double dhi = kn.derivs[ks + 1];
  const double dy = y - ylo;
  const double sum = dhi + dlo - 2.0 * s;
  const double a = h * (s - dlo) + dy * sum;
  const double b = h * dlo - dy * sum;
  const double c = -s * dy;
  const double disc = std::max(0.0, b * b - 4.0 * a * c);
  double xi = (2.0 * c) / (-b - std::sqrt(disc));
  if (!std::isfinite(xi)) xi = 0.0;
  xi = std::clamp(xi, 0.0, 1.0);
  const double x = xlo + xi * w;
  double yy = 0.0;
  double ld = 0.0;
  eval_bin(x, xlo, kn.xs[ks + 1], ylo, kn.ys[ks + 1], dlo, dhi, yy, ld);
  return {x, -ld};
}

SplineValue spline_forward(const RqSplineParams& p, double x) {
  if (static_cast<int>(p.raw.size()) != p.config.raw_count()) throw ArgumentError("spline raw parameter count mismatch");
  return spline_forward(p.config, p.raw.data(), x);
}

SplineValue spline_inverse(const RqSplineParams& p, double y) {
  if (static_cast<int>(p.raw.size()) != p.config.raw_count()) throw ArgumentError("spline raw parameter count mismatch");
  return spline_inverse(p.config, p.raw.data(), y);
}

double spline_forward_backward(const SplineConfig& config, const double* raw, double x, double g_value,
                               double g_logdet, double* g_raw) {
  if (!(x >= -config.bound && x <= config.bound)) return g_value;
  const SplineKnots kn = spline_knots(config, raw);
  const int k = find_bin(kn.xs, kn.bins, x);
  Dual y, ld;
  local_duals(kn, k, x, y, ld);
  double g_local[6];
  for (std::size_t i = 0; i < 6; ++i) g_local[i] = g_value * y.g[i + 1] + g_logdet * ld.g[i + 1];
  scatter_local_grads(config, kn, k, g_local, g_raw);
  return g_value * y.g[0] + g_logdet * ld.g[0];
}

double spline_inverse_backward(const SplineConfig& config, const double* raw, double x, double g_x, double* g_raw) {
  if (!(x >= -config.bound && x <= config.bound)) return g_x;
  const SplineKnots kn = spline_knots(config, raw);
  const int k = find_bin(kn.xs, kn.bins, x);
  Dual y, ld;
  local_duals(kn, k, x, y, ld);
  // x = f^{-1}(y; theta): dx/dy = 1/f'(x), dx/dtheta = -(df/dtheta)/f'(x).
  const double inv_slope = 1.0 / y.g[0];
  double g_local[6];
  for (std::size_t i = 0; i < 6; ++i) g_local[i] = -g_x * y.g[i + 1] * inv_slope;
  scatter_local_grads(config, kn, k, g_local, g_raw);
  return g_x * inv_slope;
}

}  // namespace atlasflow::flow
