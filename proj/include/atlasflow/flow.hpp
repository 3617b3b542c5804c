#pragma once

#include "atlasflow/common.hpp"
#include "atlasflow/nn.hpp"
#include "atlasflow/spline.hpp"

#include <utility>

namespace atlasflow::flow {

struct FlowConfig {
  int dim = 3;
  int layers = 13;
  std::vector<int> hidden = {64, 64};
  nn::Activation activation = nn::Activation::tanh;
  SplineConfig spline;

  void validate() const;
};

// One coupling layer: coordinates in identity_part pass through and condition
// the splines applied to transform_part. With dim 1 the identity part is empty
// and the conditioner reduces to a learned constant (its output bias).
struct CouplingLayer {
  IndexList identity_part;
  IndexList transform_part;
  nn::MlpShape conditioner;
  SplineConfig spline;
  Index param_offset = 0;

  Index param_count() const { return conditioner.param_count(); }
  // Offset (inside the layer's block) of the conditioner's output bias; the
  // spline raw values for transformed coordinate t start at t * (3K-1).
  Index output_bias_offset() const { return param_count() - conditioner.output_size(); }
};

// Cached values of one layer application needed by the reverse pass.
struct LayerTape {
  Matrix input;
  Matrix output;
  Matrix raw;
  nn::MlpCache cond;
};

struct FlowTape {
  std::vector<LayerTape> layers;
};

// Batched coupling evaluation, one point per column of x.
Matrix coupling_forward(const CouplingLayer& layer, const double* params, const Matrix& x, Vector* logdet,
                        LayerTape* tape = nullptr);
Matrix coupling_inverse(const CouplingLayer& layer, const double* params, const Matrix& y, Vector* logdet,
                        LayerTape* tape = nullptr);
// Reverse passes; parameter gradients are accumulated into grad (the layer's
// block starts at grad + layer.param_offset).
Matrix coupling_forward_backward(const CouplingLayer& layer, const double* params, const LayerTape& tape,
                                 const Matrix& g_out, const Vector* g_logdet, double* grad);
Matrix coupling_inverse_backward(const CouplingLayer& layer, const double* params, const LayerTape& tape,
                                 const Matrix& g_out, double* grad);

// A bijection on R^d built from coupling layers with alternating masks.
class FlowStack {
 public:
  FlowStack() = default;
  explicit FlowStack(FlowConfig config);  // all parameters zero
  static FlowStack create(const FlowConfig& config, Rng& rng);  // identity map, random hidden weights

  int dim() const { return config_.dim; }
  const FlowConfig& config() const { return config_; }
  const std::vector<CouplingLayer>& layers() const { return layers_; }
  const Vector& params() const { return params_; }
  Vector& params() { return params_; }
  void set_params(const Vector& p);

  Matrix forward(const Matrix& x, Vector* logdet = nullptr, FlowTape* tape = nullptr) const;
  Matrix inverse(const Matrix& z, Vector* logdet = nullptr, FlowTape* tape = nullptr) const;
  Matrix forward_backward(const FlowTape& tape, const Matrix& g_out, const Vector* g_logdet, Vector& grad) const;
  Matrix inverse_backward(const FlowTape& tape, const Matrix& g_out, Vector& grad) const;

 private:
  FlowConfig config_;
  std::vector<CouplingLayer> layers_;
  Vector params_;
};

std::pair<Vector, double> stack_forward(const FlowStack& f, const Vector& x);
std::pair<Vector, double> stack_inverse(const FlowStack& f, const Vector& z);

// Keeps the first n coordinates and zeroes the rest.
Vector project(const Vector& v, int n);
Matrix project_batch(const Matrix& v, int n);

// f^{-1}(Proj(f(x))).
Vector reconstruct(const FlowStack& f, int n, const Vector& x);
Matrix reconstruct_batch(const FlowStack& f, int n, const Matrix& x);

// 1/2 log det(J^T J) for the embedding v -> f^{-1}(v, 0), J by forward
// differences. Throws NumericError when the Gram matrix is not positive.
double embedding_gram_logdet(const FlowStack& f, int n, const Vector& v, double step = 1e-5);

// Coordinate map of a chart: phi(x) = scale * F(frame^T (x - center) / scale).
// The fixed orthogonal frame and scale keep chart data at unit size inside the
// spline support while latent coordinates stay in data units. An empty frame
// means the identity.
struct CoordinateMap {
  FlowStack flow;
  Vector center;
  double scale = 1.0;
  int latent_dim = 1;
  Matrix frame;

  int dim() const { return flow.dim(); }
  Matrix encode(const Matrix& x) const;  // d x b
  Matrix decode(const Matrix& z) const;
  Matrix latent(const Matrix& x) const;  // first n coordinates of encode
  Matrix embed(const Matrix& v) const;   // decode((v, 0))
  Matrix reconstruct(const Matrix& x) const;
  Vector gram_logdet(const Matrix& v, double step = 1e-5) const;

  // Normalized flow input and its inverse.
  Matrix to_flow(const Matrix& x) const;
  Matrix from_flow(const Matrix& u) const;
};

// Density map of a chart: gamma(v) = G((v - center) / scale).
struct DensityMap {
  FlowStack flow;
  Vector center;
  double scale = 1.0;

  int dim() const { return flow.dim(); }
  Matrix forward(const Matrix& v, Vector* logdet) const;
  Matrix inverse(const Matrix& w) const;
};

}  // namespace atlasflow::flow
