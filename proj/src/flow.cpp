#include "atlasflow/flow.hpp"

#include "atlasflow/parallel.hpp"

namespace atlasflow::flow {
namespace {

Matrix gather_rows(const Matrix& m, const IndexList& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
  return out;
}

void check_batch(const Matrix& x, int dim, const char* what) {
  if (x.rows() != dim)
    throw ArgumentError(std::string(what) + " expects " + std::to_string(dim) + " rows, got " +
                        std::to_string(x.rows()));
}

double gram_half_logdet(const Matrix& jac) {
  const Matrix gram = jac.transpose() * jac;
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) throw NumericError("embedding Gram matrix is singular");
  const auto diag = llt.matrixLLT().diagonal();
  double acc = 0.0;
  for (Index i = 0; i < diag.size(); ++i) {
    if (!(diag(i) > 0.0)) throw NumericError("embedding Gram matrix is singular");
    acc += std::log(diag(i));
  }
  return acc;  // log det(L) = 1/2 log det(gram)
}

// Forward-difference Jacobians for a batch of latent points; embed maps an
// n x m batch to d x m.
template <class Embed>
Vector fd_gram_logdet(const Matrix& v, double step, int dim, Embed&& embed) {
  const Index n = v.rows();
  const Index b = v.cols();
  Matrix probes(n, b * (n + 1));
  for (Index p = 0; p < b; ++p) {
    probes.col(p * (n + 1)) = v.col(p);
    for (Index j = 0; j < n; ++j) {
      probes.col(p * (n + 1) + j + 1) = v.col(p);
      probes(j, p * (n + 1) + j + 1) += step;
    }
  }
  const Matrix images = embed(probes);
  Vector out(b);
  for (Index p = 0; p < b; ++p) {
    Matrix jac(dim, n);
    for (Index j = 0; j < n; ++j)
      jac.col(j) = (images.col(p * (n + 1) + j + 1) - images.col(p * (n + 1))) / step;
    out(p) = gram_half_logdet(jac);
  }
  return out;
}

}  // namespace

void FlowConfig::validate() const {
  if (dim < 1) throw ArgumentError("flow dimension must be positive");
  if (layers < 0) throw ArgumentError("flow layer count must be nonnegative");
  for (int h : hidden)
    if (h < 1) throw ArgumentError("hidden widths must be positive");
  spline.validate();
}

Matrix coupling_forward(const CouplingLayer& layer, const double* params, const Matrix& x, Vector* logdet,
                        LayerTape* tape) {
  const double* p = params + layer.param_offset;
  const Matrix cond_in = gather_rows(x, layer.identity_part);
  nn::MlpCache cache;
  const Matrix raw = nn::mlp_forward_batch(layer.conditioner, p, cond_in, tape ? &cache : nullptr);
  Matrix y = x;
  const int per = layer.spline.raw_count();
  const auto nt = static_cast<int>(layer.transform_part.size());
  Vector ld = Vector::Zero(x.cols());
  parallel_for(x.cols(), [&](std::ptrdiff_t col) {
    double acc = 0.0;
    for (int t = 0; t < nt; ++t) {
      const int row = layer.transform_part[static_cast<std::size_t>(t)];
      const auto r = spline_forward(layer.spline, raw.col(col).data() + t * per, x(row, col));
      y(row, col) = r.value;
      acc += r.logdet;
    }
    ld(col) = acc;
  });
  if (logdet) *logdet += ld;
  if (tape) {
    tape->input = x;
    tape->output = y;
    tape->raw = raw;
    tape->cond = std::move(cache);
  }
  return y;
}

Matrix coupling_inverse(const CouplingLayer& layer, const double* params, const Matrix& y, Vector* logdet,
                        LayerTape* tape) {
  const double* p = params + layer.param_offset;
  const Matrix cond_in = gather_rows(y, layer.identity_part);
  nn::MlpCache cache;
  const Matrix raw = nn::mlp_forward_batch(layer.conditioner, p, cond_in, tape ? &cache : nullptr);
  Matrix x = y;
  const int per = layer.spline.raw_count();
  const auto nt = static_cast<int>(layer.transform_part.size());
  Vector ld = Vector::Zero(y.cols());
  parallel_for(y.cols(), [&](std::ptrdiff_t col) {
    double acc = 0.0;
    for (int t = 0; t < nt; ++t) {
      const int row = layer.transform_part[static_cast<std::size_t>(t)];
      const auto r = spline_inverse(layer.spline, raw.col(col).data() + t * per, y(row, col));
      x(row, col) = r.value;
      acc += r.logdet;
    }
    ld(col) = acc;
  });
  if (logdet) *logdet += ld;
  if (tape) {
    tape->input = y;
    tape->output = x;
    tape->raw = raw;
    tape->cond = std::move(cache);
  }
  return x;
}

Matrix coupling_forward_backward(const CouplingLayer& layer, const double* params, const LayerTape& tape,
                                 const Matrix& g_out, const Vector* g_logdet, double* grad) {
  const int per = layer.spline.raw_count();
  const auto nt = static_cast<int>(layer.transform_part.size());
  Matrix g_in = g_out;
  Matrix g_raw = Matrix::Zero(tape.raw.rows(), tape.raw.cols());
  parallel_for(g_out.cols(), [&](std::ptrdiff_t col) {
    const double gl = g_logdet ? (*g_logdet)(col) : 0.0;
    for (int t = 0; t < nt; ++t) {
      const int row = layer.transform_part[static_cast<std::size_t>(t)];
      g_in(row, col) = spline_forward_backward(layer.spline, tape.raw.col(col).data() + t * per,
                                               tape.input(row, col), g_out(row, col), gl,
                                               g_raw.col(col).data() + t * per);
    }
  });
  const Matrix g_cond = nn::mlp_vjp_batch(layer.conditioner, params + layer.param_offset, tape.cond, g_raw,
                                          grad + layer.param_offset);
  for (std::size_t r = 0; r < layer.identity_part.size(); ++r)
    g_in.row(layer.identity_part[r]) += g_cond.row(static_cast<Index>(r));
  return g_in;
}

Matrix coupling_inverse_backward(const CouplingLayer& layer, const double* params, const LayerTape& tape,
                                 const Matrix& g_out, double* grad) {
  const int per = layer.spline.raw_count();
  const auto nt = static_cast<int>(layer.transform_part.size());
  Matrix g_in = g_out;
  Matrix g_raw = Matrix::Zero(tape.raw.rows(), tape.raw.cols());
  parallel_for(g_out.cols(), [&](std::ptrdiff_t col) {
    for (int t = 0; t < nt; ++t) {
      const int row = layer.transform_part[static_cast<std::size_t>(t)];
      g_in(row, col) = spline_inverse_backward(layer.spline, tape.raw.col(col).data() + t * per,
                                               tape.output(row, col), g_out(row, col),
                                               g_raw.col(col).data() + t * per);
    }
  });
  const Matrix g_cond = nn::mlp_vjp_batch(layer.conditioner, params + layer.param_offset, tape.cond, g_raw,
                                          grad + layer.param_offset);
  for (std::size_t r = 0; r < layer.identity_part.size(); ++r)
    g_in.row(layer.identity_part[r]) += g_cond.row(static_cast<Index>(r));
  return g_in;
}

FlowStack::FlowStack(FlowConfig config) : config_(std::move(config)) {
  config_.validate();
  const int d = config_.dim;
  const int half = (d + 1) / 2;
  Index offset = 0;
  for (int l = 0; l < config_.layers; ++l) {
    CouplingLayer layer;
    IndexList lower, upper;
    for (int i = 0; i < d; ++i) (i < half ? lower : upper).push_back(i);
    if (d == 1) {
      layer.transform_part = {0};
    } else if (l % 2 == 0) {
      layer.identity_part = lower;
      layer.transform_part = upper;
    } else {
      layer.identity_part = upper;
      layer.transform_part = lower;
    }
    layer.spline = config_.spline;
    layer.conditioner.hidden = config_.activation;
    layer.conditioner.sizes.push_back(static_cast<int>(layer.identity_part.size()));
    if (!layer.identity_part.empty())
      for (int h : config_.hidden) layer.conditioner.sizes.push_back(h);
    layer.conditioner.sizes.push_back(static_cast<int>(layer.transform_part.size()) * config_.spline.raw_count());
    layer.param_offset = offset;
    offset += layer.param_count();
    layers_.push_back(std::move(layer));
  }
  params_ = Vector::Zero(offset);
}

FlowStack FlowStack::create(const FlowConfig& config, Rng& rng) {
  FlowStack f(config);
  for (const auto& layer : f.layers_)
    nn::init_mlp_params(layer.conditioner, f.params_.data() + layer.param_offset, rng, true);
  return f;
}

void FlowStack::set_params(const Vector& p) {
  if (p.size() != params_.size())
    throw ArgumentError("flow parameter vector has " + std::to_string(p.size()) + " entries, expected " +
                        std::to_string(params_.size()));
  params_ = p;
}

Matrix FlowStack::forward(const Matrix& x, Vector* logdet, FlowTape* tape) const {
  check_batch(x, dim(), "flow forward");
  if (logdet) *logdet = Vector::Zero(x.cols());
  if (tape) tape->layers.assign(layers_.size(), {});
  Matrix cur = x;
  for (std::size_t l = 0; l < layers_.size(); ++l)
    cur = coupling_forward(layers_[l], params_.data(), cur, logdet, tape ? &tape->layers[l] : nullptr);
  return cur;
}

Matrix FlowStack::inverse(const Matrix& z, Vector* logdet, FlowTape* tape) const {
  check_batch(z, dim(), "flow inverse");
  if (logdet) *logdet = Vector::Zero(z.cols());
  if (tape) tape->layers.assign(layers_.size(), {});
  Matrix cur = z;
  for (std::size_t l = layers_.size(); l-- > 0;)
    cur = coupling_inverse(layers_[l], params_.data(), cur, logdet, tape ? &tape->layers[l] : nullptr);
  return cur;
}

Matrix FlowStack::forward_backward(const FlowTape& tape, const Matrix& g_out, const Vector* g_logdet,
                                   Vector& grad) const {
  if (grad.size() != params_.size()) throw ArgumentError("gradient buffer does not match flow parameters");
  Matrix g = g_out;
  for (std::size_t l = layers_.size(); l-- > 0;)
    g = coupling_forward_backward(layers_[l], params_.data(), tape.layers[l], g, g_logdet, grad.data());
  return g;
}

Matrix FlowStack::inverse_backward(const FlowTape& tape, const Matrix& g_out, Vector& grad) const {
  if (grad.size() != params_.size()) throw ArgumentError("gradient buffer does not match flow parameters");
  Matrix g = g_out;
  for (std::size_t l = 0; l < layers_.size(); ++l)
    g = coupling_inverse_backward(layers_[l], params_.data(), tape.layers[l], g, grad.data());
  return g;
}

std::pair<Vector, double> stack_forward(const FlowStack& f, const Vector& x) {
  Vector ld;
  Matrix z = f.forward(Matrix(x), &ld);
  return {z.col(0), ld(0)};
}

std::pair<Vector, double> stack_inverse(const FlowStack& f, const Vector& z) {
  Vector ld;
  Matrix x = f.inverse(Matrix(z), &ld);
  return {x.col(0), ld(0)};
}

Vector project(const Vector& v, int n) {
  if (n < 1 || n > v.size())
    throw ArgumentError("latent dimension " + std::to_string(n) + " outside [1, " + std::to_string(v.size()) + "]");
  Vector out = v;
  out.tail(v.size() - n).setZero();
  return out;
}

Matrix project_batch(const Matrix& v, int n) {
  if (n < 1 || n > v.rows())
    throw ArgumentError("latent dimension " + std::to_string(n) + " outside [1, " + std::to_string(v.rows()) + "]");
  Matrix out = v;
  out.bottomRows(v.rows() - n).setZero();
  return out;
}

Vector reconstruct(const FlowStack& f, int n, const Vector& x) { return reconstruct_batch(f, n, Matrix(x)).col(0); }

Matrix reconstruct_batch(const FlowStack& f, int n, const Matrix& x) {
  return f.inverse(project_batch(f.forward(x), n));
}

double embedding_gram_logdet(const FlowStack& f, int n, const Vector& v, double step) {
  if (n < 1 || n > f.dim()) throw ArgumentError("latent dimension out of range");
  if (v.size() != n) throw ArgumentError("latent vector has the wrong dimension");
  return fd_gram_logdet(Matrix(v), step, f.dim(), [&](const Matrix& probes) {
    Matrix z = Matrix::Zero(f.dim(), probes.cols());
    z.topRows(n) = probes;
    return f.inverse(z);
  })(0);
}

Matrix CoordinateMap::to_flow(const Matrix& x) const {
  Matrix u = (x.colwise() - center) / scale;
  if (frame.size() > 0) u = frame.transpose() * u;
  return u;
}

Matrix CoordinateMap::from_flow(const Matrix& u) const {
  Matrix x = frame.size() > 0 ? Matrix(frame * u * scale) : Matrix(u * scale);
  x.colwise() += center;
  return x;
}

Matrix CoordinateMap::encode(const Matrix& x) const {
  check_batch(x, dim(), "coordinate map");
  return flow.forward(to_flow(x)) * scale;
}

Matrix CoordinateMap::decode(const Matrix& z) const {
  check_batch(z, dim(), "coordinate map inverse");
  return from_flow(flow.inverse(z / scale));
}

Matrix CoordinateMap::latent(const Matrix& x) const { return encode(x).topRows(latent_dim); }

Matrix CoordinateMap::embed(const Matrix& v) const {
  if (v.rows() != latent_dim) throw ArgumentError("latent batch has the wrong dimension");
  Matrix z = Matrix::Zero(dim(), v.cols());
  z.topRows(latent_dim) = v;
  return decode(z);
}

Matrix CoordinateMap::reconstruct(const Matrix& x) const { return decode(project_batch(encode(x), latent_dim)); }

Vector CoordinateMap::gram_logdet(const Matrix& v, double step) const {
  if (v.rows() != latent_dim) throw ArgumentError("latent batch has the wrong dimension");
  return fd_gram_logdet(v, step, dim(), [&](const Matrix& probes) { return embed(probes); });
}

Matrix DensityMap::forward(const Matrix& v, Vector* logdet) const {
  check_batch(v, dim(), "density map");
  Matrix u = (v.colwise() - center) / scale;
  Matrix w = flow.forward(u, logdet);
  if (logdet) logdet->array() -= static_cast<double>(dim()) * std::log(scale);
  return w;
}

Matrix DensityMap::inverse(const Matrix& w) const {
  check_batch(w, dim(), "density map inverse");
  Matrix v = flow.inverse(w) * scale;
  v.colwise() += center;
  return v;
}

}  // namespace atlasflow::flow
