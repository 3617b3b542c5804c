#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "atlasflow/nn.hpp"

#include <numbers>

using namespace atlasflow;
using namespace atlasflow::nn;

TEST_CASE("mlp vjp matches finite differences") {
  Rng rng = make_rng(1);
  for (auto act : {Activation::tanh, Activation::relu}) {
    MlpShape shape{{3, 7, 5, 4}, act};
    Mlp mlp = Mlp::random(shape, rng);
    for (Index i = 0; i < mlp.params().size(); ++i) mlp.params()(i) += 0.1 * standard_normal(rng);
    Vector x = Vector::Random(3);
    Vector cot = Vector::Random(4);
    auto [gp, gx] = mlp.vjp(x, cot);
    const double h = 1e-6;
    for (Index i = 0; i < mlp.params().size(); ++i) {
      Mlp up = mlp, dn = mlp;
      up.params()(i) += h;
      dn.params()(i) -= h;
      const double fd = (cot.dot(up.forward(x)) - cot.dot(dn.forward(x))) / (2 * h);
      CHECK(gp(i) == doctest::Approx(fd).epsilon(1e-5));
    }
    for (Index i = 0; i < 3; ++i) {
      Vector xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      const double fd = (cot.dot(mlp.forward(xp)) - cot.dot(mlp.forward(xm))) / (2 * h);
      CHECK(gx(i) == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("zero output head gives a zero network and an input-free mlp is a bias") {
  Rng rng = make_rng(2);
  Mlp mlp = Mlp::random({{2, 8, 3}}, rng, true);
  CHECK(mlp.forward(Vector::Random(2)).isZero(0.0));
  MlpShape bias_only{{0, 5}};
  CHECK(bias_only.param_count() == 5);
  Vector p = Vector::LinSpaced(5, 1.0, 5.0);
  Matrix out = mlp_forward_batch(bias_only, p.data(), Matrix(0, 3));
  CHECK(out.cols() == 3);
  CHECK(out.col(2) == p);
}

TEST_CASE("adam first step moves each coordinate by lr against the gradient sign") {
  AdamState st(3, AdamConfig{});
  Vector params = Vector::Zero(3);
  Vector g(3);
  g << 2.0, -0.5, 0.0;
  adam_step(st, params, g, 0.1);
  CHECK(params(0) == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(params(1) == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(params(2) == 0.0);
}

TEST_CASE("adam with weight decay shrinks parameters when gradients vanish") {
  AdamState st(2, AdamConfig{0.9, 0.999, 1e-8, 0.5});
  Vector params = Vector::Ones(2);
  adam_step(st, params, Vector::Zero(2), 0.1);
  CHECK(params(0) == doctest::Approx(0.95));
}

TEST_CASE("adam rejects non-finite gradients") {
  AdamState st(2, AdamConfig{});
  Vector params = Vector::Zero(2);
  Vector g(2);
  g << 1.0, std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(adam_step(st, params, g, 0.1), NumericError);
}

TEST_CASE("global norm clipping") {
  Vector g(2);
  g << 3.0, 4.0;
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g.norm() == doctest::Approx(1.0));
  Vector small(2);
  small << 0.3, 0.4;
  clip_global_norm(small, 1.0);
  CHECK(small(0) == 0.3);
  CHECK_THROWS_AS(clip_global_norm(small, 0.0), ArgumentError);
}

TEST_CASE("cosine schedule endpoints and midpoint") {
  LrSchedule s{0.0015, 100};
  CHECK(lr_at(s, 0) == doctest::Approx(0.0015));
  CHECK(lr_at(s, 50) == doctest::Approx(0.00075));
  CHECK(lr_at(s, 100) == 0.0);
  CHECK_THROWS_AS(lr_at(s, 101), ArgumentError);
}
