// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace pga {

using Vec = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += a[i] * b[i];
  return s;
}

inline double norm_sq(std::span<const double> a) {
  double s = 0.0;
  for (double v : a)
    s += v * v;
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(norm_sq(a)); }

inline bool all_finite(std::span<const double> a) {
  for (double v : a)
    if (!std::isfinite(v))
      return false;
  return true;
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, Vec &y) {
  if (x.size() != y.size())
    throw std::invalid_argument("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] += alpha * x[i];
}

inline Vec scaled(std::span<const double> x, double alpha) {
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = alpha * x[i];
  return out;
}

} // namespace pga
