#pragma once

#include "atlasflow/common.hpp"

#include <utility>

namespace atlasflow::nn {

enum class Activation { tanh, relu };

// Layer sizes from input to output. Hidden layers use the activation, the
// output layer is affine. Parameters live in one flat buffer, per layer the
// weight matrix (out x in, column-major) followed by the bias.
struct MlpShape {
  std::vector<int> sizes;
  Activation hidden = Activation::tanh;

  int input_size() const { return sizes.front(); }
  int output_size() const { return sizes.back(); }
  int layer_count() const { return static_cast<int>(sizes.size()) - 1; }
  Index param_count() const;
  void validate() const;
};

// Post-activation values for each layer; activations[0] is the input batch.
struct MlpCache {
  std::vector<Matrix> activations;
};

// Batched evaluation, one sample per column.
Matrix mlp_forward_batch(const MlpShape& shape, const double* params, const Matrix& x, MlpCache* cache = nullptr);

// Reverse pass for cotangent^T * output. Parameter gradients are accumulated
// into grad (same layout as params); returns the gradient w.r.t. the input.
Matrix mlp_vjp_batch(const MlpShape& shape, const double* params, const MlpCache& cache, const Matrix& cotangent,
                     double* grad);

// Hidden weights uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases. With
// zero_output_head the last layer's weights are zeroed as well.
void init_mlp_params(const MlpShape& shape, double* params, Rng& rng, bool zero_output_head);

class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpShape shape, Vector params);
  static Mlp random(MlpShape shape, Rng& rng, bool zero_output_head = false);

  const MlpShape& shape() const { return shape_; }
  const Vector& params() const { return params_; }
  Vector& params() { return params_; }

  Vector forward(const Vector& x) const;
  // Returns (grad w.r.t. params, grad w.r.t. x).
  std::pair<Vector, Vector> vjp(const Vector& x, const Vector& cotangent) const;

 private:
  MlpShape shape_;
  Vector params_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  AdamConfig config;
  long step = 0;
  Vector m;
  Vector v;

  AdamState() = default;
  AdamState(Index n, AdamConfig cfg) : config(cfg), m(Vector::Zero(n)), v(Vector::Zero(n)) {}
};

// Bias-corrected Adam with decoupled weight decay applied before the update.
void adam_step(AdamState& state, Vector& params, const Vector& grads, double lr);

// Scales grads in place so their l2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_global_norm(Vector& grads, double max_norm);

// Cosine annealing from alpha at step 0 to zero at total_steps.
struct LrSchedule {
  double alpha = 1e-3;
  long total_steps = 1;
};

double lr_at(const LrSchedule& schedule, long step);

}  // namespace atlasflow::nn
