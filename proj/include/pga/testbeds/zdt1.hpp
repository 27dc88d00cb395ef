// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>

#include "pga/domain_objective.hpp"
#include "pga/objective.hpp"
#include "pga/param_space.hpp"

namespace pga {

inline constexpr std::size_t kZdt1Dim = 30;

namespace detail {

inline Vec clamp_box(std::span<const double> x) {
  Vec out(x.begin(), x.end());
  for (double &v : out)
    v = std::clamp(v, 0.0, 1.0);
  return out;
}

inline double zdt1_g(std::span<const double> x) {
  double s = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i)
    s += x[i];
  return 1.0 + (9.0 / static_cast<double>(x.size() - 1)) * s;
}

} // namespace detail

/// First ZDT-1 objective, f1(x) = x1 over [0,1]^30. Out-of-box inputs are
/// clamped so the optimizer's perturbed evaluation points stay well-defined.
class Zdt1F1 final : public ObjectiveFn {
public:
  std::size_t dim() const override { return kZdt1Dim; }

  double value(std::span<const double> point) const override {
    check(point);
    return std::clamp(point[0], 0.0, 1.0);
  }

  Vec gradient(std::span<const double> point) const override {
    check(point);
    Vec g(kZdt1Dim, 0.0);
    g[0] = 1.0;
    return g;
  }

private:
  static void check(std::span<const double> p) {
    if (p.size() != kZdt1Dim)
      throw std::invalid_argument("Zdt1F1: expected 30 coordinates");
  }
};

/// Second ZDT-1 objective, f2 = g*h = g - sqrt(f1*g) with
/// g = 1 + (9/29) sum_{i>=2} x_i and h = 1 - sqrt(f1/g). The x1-partial is
/// singular at x1 = 0; its quotient is evaluated with x1 floored at 1e-4 so
/// gradients stay bounded at the clamped boundary.
class Zdt1F2 final : public ObjectiveFn {
public:
  std::size_t dim() const override { return kZdt1Dim; }

  double value(std::span<const double> point) const override {
    check(point);
    const Vec x = detail::clamp_box(point);
    const double g = detail::zdt1_g(x);
    return g - std::sqrt(x[0] * g);
  }

  Vec gradient(std::span<const double> point) const override {
    check(point);
    const Vec x = detail::clamp_box(point);
    const double g = detail::zdt1_g(x);
    const double f1 = x[0];
    Vec grad(kZdt1Dim, 0.0);
    const double f1_floored = std::max(f1, 1e-4);
    grad[0] = -g / (2.0 * std::sqrt(f1_floored * g));
    const double coef = 9.0 / static_cast<double>(kZdt1Dim - 1);
    const double h_term = 0.5 * std::sqrt(f1 / g); // f1/g <= 1 inside the box
    for (std::size_t i = 1; i < kZdt1Dim; ++i)
      grad[i] = coef * (1.0 - h_term);
    return grad;
  }

private:
  static void check(std::span<const double> p) {
    if (p.size() != kZdt1Dim)
      throw std::invalid_argument("Zdt1F2: expected 30 coordinates");
  }
};

struct Zdt1Objectives {
  Zdt1F1 f1;
  Zdt1F2 f2;
};

inline Zdt1Objectives zdt1_objectives() { return {}; }

/// Adapts a shared-block-only ObjectiveFn to the DomainObjective contract.
/// The owner's specific block must have dimension zero.
class SharedOnlyObjective final : public DomainObjective {
public:
  SharedOnlyObjective(const ObjectiveFn &fn, Domain owner, const ParamLayout &layout)
      : fn_(fn), owner_(owner) {
    if (fn.dim() != layout.shared_dim)
      throw std::invalid_argument(
          "SharedOnlyObjective: dim must equal the shared block size");
    if (block_dim(layout, owner.specific_block()) != 0)
      throw std::invalid_argument(
          "SharedOnlyObjective: owner's specific block must be empty");
  }

  Domain owner() const override { return owner_; }

  Evaluation eval(const ParamVector &p, Batch) const override {
    const std::span<const double> sh = slice_view(p, Block::shared());
    Evaluation e;
    e.value = fn_.value(sh);
    e.grads = GradSlices{p.layout, fn_.gradient(sh), Vec{}, owner_};
    return e;
  }

  double value(const ParamVector &p, Batch) const override {
    return fn_.value(slice_view(p, Block::shared()));
  }

private:
  const ObjectiveFn &fn_;
  Domain owner_;
};

} // namespace pga
