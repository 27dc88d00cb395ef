// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "pga/gradcheck.hpp"
#include "pga/objective.hpp"
#include "pga/rng.hpp"
#include "pga/testbeds/spurious.hpp"

using namespace pga;

namespace {

class Square final : public ObjectiveFn {
public:
  std::size_t dim() const override { return 1; }
  double value(std::span<const double> x) const override { return x[0] * x[0]; }
  Vec gradient(std::span<const double> x) const override { return {2.0 * x[0]}; }
};

class Constant final : public ObjectiveFn {
public:
  explicit Constant(std::size_t d) : d_(d) {}
  std::size_t dim() const override { return d_; }
  double value(std::span<const double>) const override { return 4.25; }
  Vec gradient(std::span<const double>) const override { return Vec(d_, 0.0); }

private:
  std::size_t d_;
};

class WrongGradientSquare final : public ObjectiveFn {
public:
  std::size_t dim() const override { return 1; }
  double value(std::span<const double> x) const override { return x[0] * x[0]; }
  Vec gradient(std::span<const double> x) const override { return {4.0 * x[0]}; }
};

class ZeroDim final : public ObjectiveFn {
public:
  std::size_t dim() const override { return 0; }
  double value(std::span<const double>) const override { return 1.0; }
  Vec gradient(std::span<const double>) const override { return {}; }
};

class BlowsUp final : public ObjectiveFn {
public:
  std::size_t dim() const override { return 2; }
  double value(std::span<const double> x) const override {
    if (x[1] > 1.0)
      return std::numeric_limits<double>::infinity();
    return x[0] + x[1];
  }
  Vec gradient(std::span<const double>) const override { return {1.0, 1.0}; }
};

} // namespace

TEST_CASE("fd_gradient: central differences on basic shapes") {
  Square sq;
  const Vec g = fd_gradient(sq, Vec{3.0}, 1e-4);
  CHECK(std::abs(g[0] - 6.0) <= 1e-6);

  Constant c(4);
  const Vec gc = fd_gradient(c, Vec{0.1, -2.0, 5.0, 0.0}, 1e-4);
  for (double v : gc)
    CHECK(v == 0.0);

  BilinearObjective bil;
  const Vec gb = fd_gradient(bil, Vec{2.0, 5.0}, 1e-4);
  CHECK(std::abs(gb[0] - 5.0) <= 1e-6);
  CHECK(std::abs(gb[1] - 2.0) <= 1e-6);
}

TEST_CASE("fd_gradient: error paths") {
  Square sq;
  CHECK_THROWS_AS(fd_gradient(sq, Vec{1.0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(fd_gradient(sq, Vec{1.0, 2.0}, 1e-4), std::invalid_argument);
  BlowsUp b;
  CHECK_THROWS_WITH_AS(fd_gradient(b, Vec{0.0, 1.0}, 1e-3),
                       doctest::Contains("coordinate 1"), std::runtime_error);
}

TEST_CASE("fd_gradient: exact on degree <= 2 polynomials") {
  QuadraticObjective quad({1.5, -0.5, 2.0}, {0.2, -1.0, 0.0});
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Vec pt{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
           rng.uniform(-2.0, 2.0)};
    const Vec fd = fd_gradient(quad, pt, 1e-5);
    const Vec an = quad.gradient(pt);
    for (std::size_t k = 0; k < 3; ++k)
      CHECK(std::abs(fd[k] - an[k]) <= 1e-8);
  }
}

TEST_CASE("check_gradient: passes on a softmax-CE classifier") {
  SpuriousConfig cfg;
  cfg.p = 0.8;
  cfg.c = 2.0;
  cfg.noise_dim = 6;
  cfg.n_samples = 20;
  cfg.seed = 5;
  const LabeledSet data = gen_spurious(cfg);
  ClassifierModel model;
  model.feature_dim = cfg.feature_dim();
  SourceCEObjective obj(model, data, 0);
  std::vector<std::size_t> batch{0, 1, 2, 3, 4, 5, 6, 7};
  FullSpaceObjective full(obj, model.layout(), batch);

  Rng rng(11);
  Vec pt(full.dim());
  for (double &v : pt)
    v = 0.3 * rng.normal();
  const GradCheckReport rep = check_gradient(full, pt, 1e-5, 1e-7);
  CHECK(rep.ok);
}

TEST_CASE("check_gradient: rejects a doubled gradient") {
  WrongGradientSquare wrong;
  const GradCheckReport rep = check_gradient(wrong, Vec{3.0}, 1e-5, 1e-7);
  CHECK_FALSE(rep.ok);
  CHECK(rep.worst_coord == 0);
  CHECK(std::abs(rep.max_abs_err - 6.0) < 1e-4); // 12 vs 6
}

TEST_CASE("check_gradient: zero-dim objective passes vacuously") {
  ZeroDim z;
  const GradCheckReport rep = check_gradient(z, Vec{}, 1e-5, 1e-7);
  CHECK(rep.ok);
}

TEST_CASE("check_gradient: tolerance preconditions") {
  Square sq;
  CHECK_THROWS_AS(check_gradient(sq, Vec{1.0}, 0.0, 1e-7),
                  std::invalid_argument);
  CHECK_THROWS_AS(check_gradient(sq, Vec{1.0}, 1e-5, -1.0),
                  std::invalid_argument);
}

TEST_CASE("gradcheck suite: every shipped objective at 100 random points") {
  std::ostringstream sink;
  CHECK(run_gradcheck_suite(sink, 100));
}
