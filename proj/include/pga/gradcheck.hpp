// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iomanip>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pga/domain_objective.hpp"
#include "pga/objective.hpp"
#include "pga/rng.hpp"
#include "pga/testbeds/spurious.hpp"
#include "pga/testbeds/zdt1.hpp"

namespace pga {

/// f(x) = 0.5 * sum_i a_i (x_i - c_i)^2
class QuadraticObjective final : public ObjectiveFn {
public:
  QuadraticObjective(Vec coeffs, Vec centers)
      : coeffs_(std::move(coeffs)), centers_(std::move(centers)) {}

  std::size_t dim() const override { return coeffs_.size(); }

  double value(std::span<const double> x) const override {
    double s = 0.0;
    for (std::size_t i = 0; i < coeffs_.size(); ++i) {
      const double d = x[i] - centers_[i];
      s += 0.5 * coeffs_[i] * d * d;
    }
    return s;
  }

  Vec gradient(std::span<const double> x) const override {
    Vec g(coeffs_.size());
    for (std::size_t i = 0; i < coeffs_.size(); ++i)
      g[i] = coeffs_[i] * (x[i] - centers_[i]);
    return g;
  }

private:
  Vec coeffs_;
  Vec centers_;
};

/// f(x) = x0 * x1
class BilinearObjective final : public ObjectiveFn {
public:
  std::size_t dim() const override { return 2; }
  double value(std::span<const double> x) const override { return x[0] * x[1]; }
  Vec gradient(std::span<const double> x) const override {
    return {x[1], x[0]};
  }
};

struct GradCheckCase {
  std::string name;
  bool passed = false;
  double worst_err = 0.0;
};

namespace detail {

inline GradCheckCase check_objective_at_points(
    const std::string &name, const ObjectiveFn &obj,
    const std::vector<Vec> &points, double rel_tol, double abs_tol) {
  GradCheckCase result{name, true, 0.0};
  for (const Vec &pt : points) {
    const GradCheckReport rep = check_gradient(obj, pt, rel_tol, abs_tol);
    result.passed = result.passed && rep.ok;
    result.worst_err = std::max(result.worst_err, rep.max_abs_err);
  }
  return result;
}

} // namespace detail

/// Checks every shipped analytic gradient against the finite-difference
/// oracle at seeded random points. Prints one line per objective with the
/// worst absolute error; returns true iff all pass.
inline bool run_gradcheck_suite(std::ostream &out,
                                std::size_t points_per_objective = 100,
                                double rel_tol = 1e-5, double abs_tol = 1e-7) {
  Rng rng(20240517);
  std::vector<GradCheckCase> cases;

  {
    QuadraticObjective quad({1.0, 2.0, 0.5, 4.0, 3.0},
                            {0.5, -1.0, 2.0, 0.0, -0.25});
    std::vector<Vec> pts;
    for (std::size_t i = 0; i < points_per_objective; ++i) {
      Vec pt(quad.dim());
      for (double &v : pt)
        v = rng.uniform(-2.0, 2.0);
      pts.push_back(std::move(pt));
    }
    cases.push_back(detail::check_objective_at_points("quadratic", quad, pts,
                                                      rel_tol, abs_tol));
  }

  {
    BilinearObjective bil;
    std::vector<Vec> pts;
    for (std::size_t i = 0; i < points_per_objective; ++i)
      pts.push_back({rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)});
    cases.push_back(detail::check_objective_at_points("bilinear", bil, pts,
                                                      rel_tol, abs_tol));
  }

  {
    // small spurious-task instance: CE source and thresholded CE target
    SpuriousConfig data_cfg;
    data_cfg.p = 0.8;
    data_cfg.c = 2.0;
    data_cfg.noise_dim = 10;
    data_cfg.n_samples = 30;
    data_cfg.seed = 99;
    const LabeledSet src = gen_spurious(data_cfg);
    data_cfg.p = 0.2;
    data_cfg.seed = 100;
    const UnlabeledSet tgt = strip_labels(gen_spurious(data_cfg));

    ClassifierModel model;
    model.num_classes = 2;
    model.feature_dim = data_cfg.feature_dim();
    model.num_sources = 1;

    const AnchorPredictor anchor = train_anchor(src, 50, 0.1);
    const PseudoLabelSet pseudo = pseudo_label(anchor, tgt, 0.6);

    SourceCEObjective src_obj(model, src, 0);
    TargetCEObjective tgt_obj(model, tgt, pseudo);
    std::vector<std::size_t> batch;
    for (std::size_t j = 0; j < 16; ++j)
      batch.push_back(j);
    FullSpaceObjective src_full(src_obj, model.layout(), batch);
    FullSpaceObjective tgt_full(tgt_obj, model.layout(), batch);

    std::vector<Vec> pts;
    for (std::size_t i = 0; i < points_per_objective; ++i) {
      Vec pt(model.layout().total_dim());
      for (double &v : pt)
        v = 0.3 * rng.normal();
      pts.push_back(std::move(pt));
    }
    cases.push_back(detail::check_objective_at_points("ce_source", src_full,
                                                      pts, rel_tol, abs_tol));
    cases.push_back(detail::check_objective_at_points("ce_target", tgt_full,
                                                      pts, rel_tol, abs_tol));
  }

  {
    Zdt1Objectives zdt = zdt1_objectives();
    std::vector<Vec> pts;
    for (std::size_t i = 0; i < points_per_objective; ++i) {
      Vec pt(kZdt1Dim);
      for (double &v : pt)
        v = rng.uniform(0.05, 0.95); // interior; fd needs room near x1 = 0
      pts.push_back(std::move(pt));
    }
    cases.push_back(detail::check_objective_at_points("zdt1_f1", zdt.f1, pts,
                                                      rel_tol, abs_tol));
    cases.push_back(detail::check_objective_at_points("zdt1_f2", zdt.f2, pts,
                                                      rel_tol, abs_tol));
  }

  bool all_ok = true;
  for (const GradCheckCase &c : cases) {
    out << "gradcheck " << c.name << ": " << (c.passed ? "pass" : "FAIL")
        << " worst_abs_err=" << format_g17(c.worst_err) << "\n";
    all_ok = all_ok && c.passed;
  }
  return all_ok;
}

} // namespace pga
