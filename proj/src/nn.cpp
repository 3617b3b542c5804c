#include "atlasflow/nn.hpp"

#include <numbers>

namespace atlasflow::nn {
namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;
using ConstVecMap = Eigen::Map<const Vector>;
using MutVecMap = Eigen::Map<Vector>;

}  // namespace

Index MlpShape::param_count() const {
  Index total = 0;
  for (int l = 0; l < layer_count(); ++l) total += static_cast<Index>(sizes[l + 1]) * (sizes[l] + 1);
  return total;
}

void MlpShape::validate() const {
  if (sizes.size() < 2) throw ArgumentError("mlp needs at least an input and an output size");
  if (sizes.front() < 0) throw ArgumentError("mlp input size must be nonnegative");
  for (std::size_t i = 1; i < sizes.size(); ++i)
    if (sizes[i] < 1) throw ArgumentError("mlp layer sizes must be positive");
}

Matrix mlp_forward_batch(const MlpShape& shape, const double* params, const Matrix& x, MlpCache* cache) {
  if (x.rows() != shape.input_size())
    throw ArgumentError("mlp input has " + std::to_string(x.rows()) + " rows, expected " +
                        std::to_string(shape.input_size()));
  if (cache) {
    cache->activations.resize(static_cast<std::size_t>(shape.layer_count()) + 1);
    cache->activations[0] = x;
  }
  Matrix a = x;
  const double* p = params;
  for (int l = 0; l < shape.layer_count(); ++l) {
    const int in = shape.sizes[l];
    const int out = shape.sizes[l + 1];
    ConstMap w(p, out, in);
    ConstVecMap b(p + static_cast<Index>(out) * in, out);
    p += static_cast<Index>(out) * (in + 1);
    Matrix z(out, a.cols());
    if (in > 0)
      z.noalias() = w * a;
    else
      z.setZero();
    z.colwise() += b;
    if (l + 1 < shape.layer_count()) {
      if (shape.hidden == Activation::tanh)
        z = z.array().tanh();
      else
        z = z.array().max(0.0);
    }
    a = std::move(z);
    if (cache) cache->activations[static_cast<std::size_t>(l) + 1] = a;
  }
  return a;
}

Matrix mlp_vjp_batch(const MlpShape& shape, const double* params, const MlpCache& cache, const Matrix& cotangent,
                     double* grad) {
  if (cotangent.rows() != shape.output_size())
    throw ArgumentError("mlp cotangent has " + std::to_string(cotangent.rows()) + " rows, expected " +
                        std::to_string(shape.output_size()));
  std::vector<Index> offsets(static_cast<std::size_t>(shape.layer_count()));
  Index off = 0;
  for (int l = 0; l < shape.layer_count(); ++l) {
    offsets[static_cast<std::size_t>(l)] = off;
    off += static_cast<Index>(shape.sizes[l + 1]) * (shape.sizes[l] + 1);
  }
  Matrix delta = cotangent;  // gradient w.r.t. the pre-activation of the current layer
  for (int l = shape.layer_count() - 1; l >= 0; --l) {
    const int in = shape.sizes[l];
    const int out = shape.sizes[l + 1];
    const Index o = offsets[static_cast<std::size_t>(l)];
    const Matrix& a_in = cache.activations[static_cast<std::size_t>(l)];
    MutMap gw(grad + o, out, in);
    MutVecMap gb(grad + o + static_cast<Index>(out) * in, out);
    if (in > 0) gw.noalias() += delta * a_in.transpose();
    gb += delta.rowwise().sum();
    ConstMap w(params + o, out, in);
    Matrix g_in(in, delta.cols());
    if (in > 0)
      g_in.noalias() = w.transpose() * delta;
    if (l > 0) {
      if (shape.hidden == Activation::tanh)
        g_in.array() *= 1.0 - a_in.array().square();
      else
        g_in.array() *= (a_in.array() > 0.0).cast<double>();
    }
    delta = std::move(g_in);
  }
  return delta;
}

void init_mlp_params(const MlpShape& shape, double* params, Rng& rng, bool zero_output_head) {
  double* p = params;
  for (int l = 0; l < shape.layer_count(); ++l) {
    const int in = shape.sizes[l];
    const int out = shape.sizes[l + 1];
    const bool zero = zero_output_head && l + 1 == shape.layer_count();
    const double bound = in > 0 ? 1.0 / std::sqrt(static_cast<double>(in)) : 0.0;
    for (Index i = 0; i < static_cast<Index>(out) * in; ++i) p[i] = zero ? 0.0 : bound * (2.0 * uniform01(rng) - 1.0);
    p += static_cast<Index>(out) * in;
    for (int i = 0; i < out; ++i) p[i] = 0.0;
    p += out;
  }
}

Mlp::Mlp(MlpShape shape, Vector params) : shape_(std::move(shape)), params_(std::move(params)) {
  shape_.validate();
  if (params_.size() != shape_.param_count())
    throw ArgumentError("mlp parameter vector has " + std::to_string(params_.size()) + " entries, expected " +
                        std::to_string(shape_.param_count()));
}

Mlp Mlp::random(MlpShape shape, Rng& rng, bool zero_output_head) {
  shape.validate();
  Vector p(shape.param_count());
  init_mlp_params(shape, p.data(), rng, zero_output_head);
  return Mlp(std::move(shape), std::move(p));
}

Vector Mlp::forward(const Vector& x) const {
  if (x.size() != shape_.input_size())
    throw ArgumentError("mlp input dimension " + std::to_string(x.size()) + " != " +
                        std::to_string(shape_.input_size()));
  return mlp_forward_batch(shape_, params_.data(), Matrix(x)).col(0);
}

std::pair<Vector, Vector> Mlp::vjp(const Vector& x, const Vector& cotangent) const {
  if (x.size() != shape_.input_size())
    throw ArgumentError("mlp input dimension " + std::to_string(x.size()) + " != " +
                        std::to_string(shape_.input_size()));
  if (cotangent.size() != shape_.output_size())
    throw ArgumentError("mlp cotangent dimension " + std::to_string(cotangent.size()) + " != " +
                        std::to_string(shape_.output_size()));
  MlpCache cache;
  mlp_forward_batch(shape_, params_.data(), Matrix(x), &cache);
  Vector grad = Vector::Zero(params_.size());
  Matrix gx = mlp_vjp_batch(shape_, params_.data(), cache, Matrix(cotangent), grad.data());
  return {grad, gx.col(0)};
}

void adam_step(AdamState& state, Vector& params, const Vector& grads, double lr) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw ArgumentError("adam shapes do not match the parameter vector");
  for (Index i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads(i))) throw NumericError("non-finite gradient at index " + std::to_string(i));
  const auto& c = state.config;
  state.step += 1;
  if (c.weight_decay != 0.0) params *= 1.0 - lr * c.weight_decay;
  state.m = c.beta1 * state.m + (1.0 - c.beta1) * grads;
  state.v = c.beta2 * state.v + (1.0 - c.beta2) * grads.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  params.array() -= lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + c.eps);
}

double clip_global_norm(Vector& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ArgumentError("max_norm must be positive");
  const double norm = grads.norm();
  if (norm > max_norm) grads *= max_norm / norm;
  return norm;
}

double lr_at(const LrSchedule& schedule, long step) {
  if (schedule.total_steps < 1) throw ArgumentError("schedule needs at least one step");
  if (step < 0 || step > schedule.total_steps)
    throw ArgumentError("step " + std::to_string(step) + " outside schedule of " +
                        std::to_string(schedule.total_steps) + " steps");
  if (step == schedule.total_steps) return 0.0;
  const double frac = static_cast<double>(step) / static_cast<double>(schedule.total_steps);
  return schedule.alpha * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace atlasflow::nn
