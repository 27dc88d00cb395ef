// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "pga/optimizer.hpp"
#include "pga/param_space.hpp"

namespace pga {

/// Gradient-dependent summand of the generalization-bound proxy. The bound's
/// untrackable constants (subgaussian R, sample counts, noise variances, the
/// distribution-gap KL term) are excluded; only this sum is tracked.
struct BoundTerm {
  double increment = 0.0;
};

/// eta_t^2 * sum_i ( ||g^src_i||^2 + ||g^tgt||^2 + ||g^src_i - g^tgt||^2 )
/// over full embedded gradients, computed via the block-disjointness
/// decomposition 2||g^src||^2 + 2||g^tgt||^2 - 2<g_sh,src, g_sh,tgt> so the
/// full vectors are never materialized.
inline BoundTerm bound_increment(const StepReport &report, double eta_t) {
  const double tgt_sq =
      report.gnorm_sh_tgt * report.gnorm_sh_tgt + report.gnorm_tgt * report.gnorm_tgt;
  double sum = 0.0;
  for (std::size_t i = 0; i < report.gnorm_sh_src.size(); ++i) {
    const double src_sq = report.gnorm_sh_src[i] * report.gnorm_sh_src[i] +
                          report.gnorm_spec_src[i] * report.gnorm_spec_src[i];
    sum += 2.0 * src_sq + 2.0 * tgt_sq - 2.0 * report.shared_dot[i];
  }
  // the exact value is nonnegative; clamp away rounding residue
  return BoundTerm{std::max(0.0, eta_t * eta_t * sum)};
}

/// Compensated (Kahan) accumulator; keeps the cumulative bound sum from
/// drifting over long runs.
class KahanSum {
public:
  void add(double x) {
    const double y = x - comp_;
    const double t = sum_ + y;
    comp_ = (t - sum_) - y;
    sum_ = t;
  }
  double value() const { return sum_; }

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct TraceRow {
  std::size_t iter = 0;
  double eta = 0.0;
  std::vector<double> loss_src;
  double loss_tgt = 0.0;
  std::vector<double> cos;
  std::vector<double> gnorm_sh_src;
  std::vector<double> gnorm_spec_src;
  double gnorm_sh_tgt = 0.0;
  double gnorm_tgt = 0.0;
  double bound_inc = 0.0;
  double bound_cum = 0.0;
};

/// Append-only per-run record. Owned by one run; read-only afterwards.
class TrainTrace {
public:
  explicit TrainTrace(std::size_t num_sources) : num_sources_(num_sources) {}

  /// Appends one row, computing the bound increment from the report and
  /// accumulating it with compensated summation. Also writes the increment
  /// back into the report.
  double record(std::size_t iter, double eta, StepReport &report) {
    if (!rows_.empty() && iter <= rows_.back().iter)
      throw std::invalid_argument("TrainTrace: iter must be strictly increasing");
    if (rows_.empty() && iter != 0)
      throw std::invalid_argument("TrainTrace: first iter must be 0");
    if (report.loss_src.size() != num_sources_)
      throw std::invalid_argument("TrainTrace: report source count mismatch");
    const double inc = bound_increment(report, eta).increment;
    report.bound_increment = inc;
    cum_.add(inc);
    TraceRow row;
    row.iter = iter;
    row.eta = eta;
    row.loss_src = report.loss_src;
    row.loss_tgt = report.loss_tgt;
    row.cos = report.cos;
    row.gnorm_sh_src = report.gnorm_sh_src;
    row.gnorm_spec_src = report.gnorm_spec_src;
    row.gnorm_sh_tgt = report.gnorm_sh_tgt;
    row.gnorm_tgt = report.gnorm_tgt;
    row.bound_inc = inc;
    row.bound_cum = cum_.value();
    rows_.push_back(std::move(row));
    return inc;
  }

  const std::vector<TraceRow> &rows() const { return rows_; }
  std::size_t num_sources() const { return num_sources_; }
  double bound_cumulative() const { return cum_.value(); }

  /// Per-iteration cosine similarity, averaged across sources.
  std::vector<double> cosine_series() const {
    std::vector<double> s;
    s.reserve(rows_.size());
    for (const TraceRow &r : rows_) {
      double m = 0.0;
      for (double c : r.cos)
        m += c;
      s.push_back(r.cos.empty() ? 0.0 : m / static_cast<double>(r.cos.size()));
    }
    return s;
  }

  void write_csv(std::ostream &out) const {
    out << "# bound_inc/bound_cum are the gradient-dependent bound proxy "
           "(untrackable constants excluded)\n";
    out << "iter,eta";
    for (std::size_t i = 0; i < num_sources_; ++i)
      out << ",loss_src_" << i;
    out << ",loss_tgt";
    for (std::size_t i = 0; i < num_sources_; ++i)
      out << ",cos_" << i;
    for (std::size_t i = 0; i < num_sources_; ++i)
      out << ",gnorm_sh_src_" << i;
    for (std::size_t i = 0; i < num_sources_; ++i)
      out << ",gnorm_spec_src_" << i;
    out << ",gnorm_sh_tgt,gnorm_tgt,bound_inc,bound_cum\n";
    for (const TraceRow &r : rows_) {
      out << r.iter << ',' << format_g17(r.eta);
      for (double v : r.loss_src)
        out << ',' << format_g17(v);
      out << ',' << format_g17(r.loss_tgt);
      for (double v : r.cos)
        out << ',' << format_g17(v);
      for (double v : r.gnorm_sh_src)
        out << ',' << format_g17(v);
      for (double v : r.gnorm_spec_src)
        out << ',' << format_g17(v);
      out << ',' << format_g17(r.gnorm_sh_tgt) << ',' << format_g17(r.gnorm_tgt)
          << ',' << format_g17(r.bound_inc) << ',' << format_g17(r.bound_cum)
          << '\n';
    }
  }

private:
  std::size_t num_sources_;
  std::vector<TraceRow> rows_;
  KahanSum cum_;
};

/// ZDT-1 convergence metric g(x) - 1 = (9/29) * sum_{i>=2} x_i; zero exactly
/// on the Pareto set (x_i = 0 for i >= 2).
inline double zdt1_convergence(std::span<const double> x) {
  if (x.size() != 30)
    throw std::invalid_argument("zdt1_convergence: expected 30 coordinates");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0.0 || x[i] > 1.0)
      throw std::invalid_argument("zdt1_convergence: x outside [0,1]^30");
    if (i >= 1)
      s += x[i];
  }
  return (9.0 / 29.0) * s;
}

struct SimilarityProfile {
  bool rise = false;
  bool fall = false;
  std::size_t peak_iter = 0;
};

namespace detail {

inline std::vector<double> moving_average(const std::vector<double> &s,
                                          std::size_t window) {
  const std::size_t h = window / 2;
  std::vector<double> out(s.size(), 0.0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t lo = (i >= h) ? i - h : 0;
    const std::size_t hi = std::min(s.size() - 1, i + h);
    double m = 0.0;
    for (std::size_t j = lo; j <= hi; ++j)
      m += s[j];
    out[i] = m / static_cast<double>(hi - lo + 1);
  }
  return out;
}

} // namespace detail

/// Detects the rise-then-fall shape of the gradient-similarity evolution:
/// smooths the per-iteration cosine series with a centered moving average
/// (window 5% of length, floor 3), then compares the peak against the first
/// smoothed value (rise) and the final one (fall). Ties pick the earliest peak.
inline SimilarityProfile similarity_profile(const TrainTrace &trace) {
  const std::vector<double> s = trace.cosine_series();
  if (s.size() < 10)
    throw std::invalid_argument("similarity_profile: trace too short");
  std::size_t w = std::max<std::size_t>(3, s.size() * 5 / 100);
  if (w % 2 == 0)
    ++w;
  const std::vector<double> sm = detail::moving_average(s, w);
  std::size_t peak = 0;
  for (std::size_t i = 1; i < sm.size(); ++i)
    if (sm[i] > sm[peak])
      peak = i;
  // tolerance absorbs last-ulp noise from the shrinking edge windows, so a
  // constant series reads as neither rising nor falling
  const double tol = 1e-12 * (1.0 + std::abs(sm[peak]));
  SimilarityProfile prof;
  prof.peak_iter = trace.rows()[peak].iter;
  prof.rise = sm[peak] > sm.front() + tol;
  prof.fall = sm.back() < sm[peak] - tol;
  return prof;
}

/// Smoothed peak value of the cosine series (same smoothing as
/// similarity_profile); used to compare alignment strengths.
inline double smoothed_cosine_peak(const TrainTrace &trace) {
  const std::vector<double> s = trace.cosine_series();
  if (s.size() < 10)
    throw std::invalid_argument("smoothed_cosine_peak: trace too short");
  std::size_t w = std::max<std::size_t>(3, s.size() * 5 / 100);
  if (w % 2 == 0)
    ++w;
  const std::vector<double> sm = detail::moving_average(s, w);
  return *std::max_element(sm.begin(), sm.end());
}

} // namespace pga
