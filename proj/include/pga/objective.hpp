// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>

#include "pga/vec.hpp"

namespace pga {

/// Differentiable-objective contract. value and gradient must be pure
/// functions of the point (and whatever data the instance was bound to at
/// construction), and gradient(point) has exactly dim() entries.
class ObjectiveFn {
public:
  virtual ~ObjectiveFn() = default;
  virtual std::size_t dim() const = 0;
  virtual double value(std::span<const double> point) const = 0;
  virtual Vec gradient(std::span<const double> point) const = 0;
};

/// Central-difference gradient oracle:
///   [f(x + h e_k) - f(x - h e_k)] / (2h) per coordinate.
/// Exact for polynomials of degree <= 2 up to rounding.
inline Vec fd_gradient(const ObjectiveFn &obj, std::span<const double> point,
                       double step) {
  if (!(step > 0.0))
    throw std::invalid_argument("fd_gradient: step must be positive");
  if (point.size() != obj.dim())
    throw std::invalid_argument("fd_gradient: point has wrong dimension");
  Vec x(point.begin(), point.end());
  Vec g(x.size(), 0.0);
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = x[k];
    x[k] = orig + step;
    const double fp = obj.value(x);
    x[k] = orig - step;
    const double fm = obj.value(x);
    x[k] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      std::ostringstream msg;
      msg << "fd_gradient: non-finite objective value at coordinate " << k;
      throw std::runtime_error(msg.str());
    }
    g[k] = (fp - fm) / (2.0 * step);
  }
  return g;
}

struct GradCheckReport {
  bool ok = true;
  std::size_t worst_coord = 0; // coordinate with the largest tolerance excess
  double max_abs_err = 0.0;    // |analytic - fd| at that coordinate
  double analytic_at_worst = 0.0;
  double fd_at_worst = 0.0;
};

/// Compares the analytic gradient against fd_gradient coordinate-wise:
/// passes iff |analytic_k - fd_k| <= abs_tol + rel_tol * |fd_k| for all k.
inline GradCheckReport check_gradient(const ObjectiveFn &obj,
                                      std::span<const double> point,
                                      double rel_tol, double abs_tol,
                                      double step = 1e-5) {
  if (!(rel_tol > 0.0) || !(abs_tol > 0.0))
    throw std::invalid_argument("check_gradient: tolerances must be positive");
  const Vec analytic = obj.gradient(point);
  const Vec fd = fd_gradient(obj, point, step);
  if (analytic.size() != fd.size())
    throw std::runtime_error("check_gradient: gradient dimension mismatch");
  GradCheckReport rep;
  double worst_ratio = -1.0;
  for (std::size_t k = 0; k < fd.size(); ++k) {
    const double err = std::abs(analytic[k] - fd[k]);
    const double tol = abs_tol + rel_tol * std::abs(fd[k]);
    if (err > tol)
      rep.ok = false;
    const double ratio = err / tol; // > 1 means failing
    if (ratio > worst_ratio) {
      worst_ratio = ratio;
      rep.worst_coord = k;
      rep.max_abs_err = err;
      rep.analytic_at_worst = analytic[k];
      rep.fd_at_worst = fd[k];
    }
  }
  return rep; // zero-dim objectives pass vacuously
}

} // namespace pga
