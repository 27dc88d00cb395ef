// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "pga/domain_objective.hpp"
#include "pga/param_space.hpp"
#include "pga/vec.hpp"

namespace pga {

/// Thrown when a step cannot proceed (non-finite loss or gradient).
class StepAbort : public std::runtime_error {
public:
  explicit StepAbort(const std::string &msg) : std::runtime_error(msg) {}
};

enum class Schedule { constant, cosine };

struct PGAConfig {
  double rho_ga = 0.5;   // alignment strength
  double rho_gn = 0.05;  // gradient-norm penalty radius
  double lambda = 1.0;   // source-gradient trade-off
  double eta0 = 0.1;     // base learning rate
  std::size_t total_iters = 1000;
  double tau = 0.4;      // pseudo-label confidence threshold
  double eps_guard = 1e-12;
  Schedule schedule = Schedule::cosine;

  void validate() const {
    if (rho_ga < 0.0 || rho_gn < 0.0 || lambda < 0.0)
      throw std::invalid_argument("PGAConfig: rho/lambda must be nonnegative");
    if (!(eta0 > 0.0))
      throw std::invalid_argument("PGAConfig: eta0 must be positive");
    if (total_iters == 0)
      throw std::invalid_argument("PGAConfig: total_iters must be positive");
    if (tau < 0.0 || tau > 1.0)
      throw std::invalid_argument("PGAConfig: tau must lie in [0,1]");
    if (!(eps_guard > 0.0) || eps_guard > 1e-8)
      throw std::invalid_argument("PGAConfig: eps_guard must be in (0, 1e-8]");
  }
};

/// Per-iteration statistics of the base (unperturbed) gradients.
struct StepReport {
  std::vector<double> loss_src;
  double loss_tgt = 0.0;
  std::vector<double> cos;            // cos(g_sh,i , g_sh,T) per source
  std::vector<double> gnorm_sh_src;   // ||g_sh,i||
  std::vector<double> gnorm_spec_src; // ||g_S,i||
  double gnorm_sh_tgt = 0.0;          // ||g_sh,T||
  double gnorm_tgt = 0.0;             // ||g_T||
  std::vector<double> shared_dot;     // <g_sh,i , g_sh,T>, feeds the bound term
  double bound_increment = 0.0;       // filled when the trace records the step
};

inline double lr_at(const PGAConfig &cfg, std::size_t t) {
  if (t >= cfg.total_iters)
    throw std::invalid_argument("lr_at: iteration index out of range");
  if (cfg.schedule == Schedule::constant)
    return cfg.eta0;
  const double pi = 3.14159265358979323846;
  return cfg.eta0 * 0.5 *
         (1.0 + std::cos(pi * static_cast<double>(t) /
                         static_cast<double>(cfg.total_iters)));
}

/// <u,v> / max(||u||*||v||, eps), clamped to [-1, 1]. The norm product is
/// computed as sqrt(||u||^2 ||v||^2) so parallel vectors give exactly +-1.
inline double cos_sim(std::span<const double> u, std::span<const double> v,
                      double eps_guard) {
  const double d = dot(u, v);
  const double c = d / std::max(std::sqrt(norm_sq(u) * norm_sq(v)), eps_guard);
  return std::clamp(c, -1.0, 1.0);
}

/// Alignment perturbation: rho_ga * g_num / max(||g_num||*||g_self||, eps).
/// For the target objective g_num is a source shared-gradient (vector a);
/// for source objective i it is the target shared-gradient (vector b).
inline Vec align_vector(std::span<const double> g_num,
                        std::span<const double> g_self, double rho_ga,
                        double eps_guard) {
  if (g_num.size() != g_self.size())
    throw std::invalid_argument("align_vector: length mismatch");
  const double denom = std::max(norm(g_num) * norm(g_self), eps_guard);
  return scaled(g_num, rho_ga / denom);
}

/// Norm-penalty ascent direction: rho_gn * g / max(||g||, eps).
inline Vec norm_ascent(std::span<const double> g, double rho_gn,
                       double eps_guard) {
  return scaled(g, rho_gn / std::max(norm(g), eps_guard));
}

/// Exactly one objective per source domain (index order) plus one target.
struct ObjectiveSet {
  std::vector<const DomainObjective *> sources;
  const DomainObjective *target = nullptr;
};

struct BatchSet {
  std::vector<std::vector<std::size_t>> source;
  std::vector<std::size_t> target;
};

struct BaseGradients {
  Evaluation target;
  std::vector<Evaluation> sources;
};

struct StepResult {
  ParamVector params;
  StepReport report;
};

namespace detail {

inline void check_objective_set(const ObjectiveSet &objectives,
                                const ParamLayout &layout,
                                const BatchSet &batches) {
  if (objectives.target == nullptr)
    throw std::invalid_argument("ObjectiveSet: missing target objective");
  if (!objectives.target->owner().target)
    throw std::invalid_argument("ObjectiveSet: target objective owner tag");
  if (objectives.sources.size() != layout.num_sources())
    throw std::invalid_argument(
        "ObjectiveSet: need exactly one objective per source block");
  for (std::size_t i = 0; i < objectives.sources.size(); ++i) {
    const Domain d = objectives.sources[i]->owner();
    if (d.target || d.index != i)
      throw std::invalid_argument("ObjectiveSet: source objective owner tag");
  }
  if (batches.source.size() != objectives.sources.size())
    throw std::invalid_argument("BatchSet: one batch per source required");
}

inline void require_finite(const Evaluation &e, const char *what) {
  if (!std::isfinite(e.value) || !all_finite(e.grads.g_shared) ||
      !all_finite(e.grads.g_specific))
    throw StepAbort(std::string("non-finite ") + what);
}

// Rescales a perturbation whose norm exceeds the cap. The cap keeps shifted
// evaluation points sane when gradient norms vanish and the eps_guard
// fallback would otherwise produce an enormous offset.
inline void cap_perturbation(Vec &shift, const PGAConfig &cfg,
                             const ParamVector &p) {
  const double cap =
      10.0 * std::max(cfg.rho_ga, cfg.rho_gn) * (1.0 + norm(p.values));
  const double n = norm(shift);
  if (n > cap && n > 0.0) {
    const double s = cap / n;
    for (double &v : shift)
      v *= s;
  }
}

inline Batch source_batch(const BatchSet &batches, std::size_t i) {
  return Batch(batches.source[i]);
}

} // namespace detail

/// Base gradients of every objective at the unperturbed point
/// (Algorithm steps: target loss/gradients first, then each source).
inline BaseGradients eval_base_gradients(const ParamVector &p,
                                         const ObjectiveSet &objectives,
                                         const BatchSet &batches) {
  detail::check_objective_set(objectives, p.layout, batches);
  BaseGradients base;
  base.target = objectives.target->eval(p, Batch(batches.target));
  detail::require_finite(base.target, "target gradient");
  base.sources.reserve(objectives.sources.size());
  for (std::size_t i = 0; i < objectives.sources.size(); ++i) {
    base.sources.push_back(
        objectives.sources[i]->eval(p, detail::source_batch(batches, i)));
    detail::require_finite(base.sources.back(), "source gradient");
  }
  return base;
}

/// Target PGA gradient: evaluates the target objective at the point whose
/// shared block is shifted by
///   - rho_ga * sum_i g_sh,i / (||g_sh,i|| ||g_sh,T||)  +  rho_gn * g_sh,T/||g_sh,T||
/// and whose target block is shifted by + rho_gn * g_T/||g_T||.
inline GradSlices pga_target_gradient(const ParamVector &p,
                                      const ObjectiveSet &objectives,
                                      const BatchSet &batches,
                                      const BaseGradients &base,
                                      const PGAConfig &cfg) {
  const Vec &g_sh_t = base.target.grads.g_shared;
  Vec shift_sh(p.layout.shared_dim, 0.0);
  for (const Evaluation &src : base.sources)
    axpy(-1.0, align_vector(src.grads.g_shared, g_sh_t, cfg.rho_ga,
                            cfg.eps_guard),
         shift_sh);
  axpy(1.0, norm_ascent(g_sh_t, cfg.rho_gn, cfg.eps_guard), shift_sh);
  Vec shift_spec =
      norm_ascent(base.target.grads.g_specific, cfg.rho_gn, cfg.eps_guard);
  detail::cap_perturbation(shift_sh, cfg, p);
  detail::cap_perturbation(shift_spec, cfg, p);

  ParamVector shifted = block_perturb(p, Block::shared(), shift_sh);
  shifted = block_perturb(shifted, Block::target(), shift_spec);
  Evaluation e = objectives.target->eval(shifted, Batch(batches.target));
  if (!std::isfinite(e.value))
    throw StepAbort("non-finite target loss at perturbed point "
                    "(rho may be too large)");
  detail::require_finite(e, "target gradient at perturbed point");
  return std::move(e.grads);
}

/// Mirror of pga_target_gradient for source i: the shared block is shifted by
///   - rho_ga * g_sh,T / (||g_sh,i|| ||g_sh,T||)  +  rho_gn * g_sh,i/||g_sh,i||
/// and the source-specific block by + rho_gn * g_S,i/||g_S,i||.
inline GradSlices pga_source_gradient(const ParamVector &p,
                                      const ObjectiveSet &objectives,
                                      const BatchSet &batches,
                                      const BaseGradients &base, std::size_t i,
                                      const PGAConfig &cfg) {
  if (i >= objectives.sources.size())
    throw std::invalid_argument("pga_source_gradient: bad source index");
  const Vec &g_sh_i = base.sources[i].grads.g_shared;
  Vec shift_sh(p.layout.shared_dim, 0.0);
  axpy(-1.0, align_vector(base.target.grads.g_shared, g_sh_i, cfg.rho_ga,
                          cfg.eps_guard),
       shift_sh);
  axpy(1.0, norm_ascent(g_sh_i, cfg.rho_gn, cfg.eps_guard), shift_sh);
  Vec shift_spec =
      norm_ascent(base.sources[i].grads.g_specific, cfg.rho_gn, cfg.eps_guard);
  detail::cap_perturbation(shift_sh, cfg, p);
  detail::cap_perturbation(shift_spec, cfg, p);

  ParamVector shifted = block_perturb(p, Block::shared(), shift_sh);
  shifted = block_perturb(shifted, Block::source(i), shift_spec);
  Evaluation e =
      objectives.sources[i]->eval(shifted, detail::source_batch(batches, i));
  if (!std::isfinite(e.value))
    throw StepAbort("non-finite source loss at perturbed point "
                    "(rho may be too large)");
  detail::require_finite(e, "source gradient at perturbed point");
  return std::move(e.grads);
}

namespace detail {

inline StepReport build_report(const BaseGradients &base,
                               const PGAConfig &cfg) {
  StepReport rep;
  const Vec &g_sh_t = base.target.grads.g_shared;
  rep.loss_tgt = base.target.value;
  rep.gnorm_sh_tgt = norm(g_sh_t);
  rep.gnorm_tgt = norm(base.target.grads.g_specific);
  for (const Evaluation &src : base.sources) {
    rep.loss_src.push_back(src.value);
    rep.cos.push_back(cos_sim(src.grads.g_shared, g_sh_t, cfg.eps_guard));
    rep.gnorm_sh_src.push_back(norm(src.grads.g_shared));
    rep.gnorm_spec_src.push_back(norm(src.grads.g_specific));
    rep.shared_dot.push_back(dot(src.grads.g_shared, g_sh_t));
  }
  return rep;
}

// Single update path shared by erm_step and pga_step so that the rho=0
// reduction yields bit-identical trajectories.
inline ParamVector apply_update(const ParamVector &p, const PGAConfig &cfg,
                                std::size_t t, const GradSlices &target_grads,
                                const std::vector<GradSlices> &source_grads) {
  const double eta = lr_at(cfg, t);
  // combined shared gradient: g_sh,T + lambda * sum_i g_sh,i
  Vec g_sh = target_grads.g_shared;
  for (const GradSlices &g : source_grads)
    axpy(cfg.lambda, g.g_shared, g_sh);

  ParamVector out = p;
  const std::size_t sh_off = p.layout.shared_offset();
  for (std::size_t j = 0; j < p.layout.shared_dim; ++j)
    out.values[sh_off + j] -= eta * g_sh[j];
  for (std::size_t i = 0; i < source_grads.size(); ++i) {
    const std::size_t off = p.layout.source_offset(i);
    const Vec &g = source_grads[i].g_specific;
    for (std::size_t j = 0; j < g.size(); ++j)
      out.values[off + j] -= eta * g[j];
  }
  const std::size_t t_off = p.layout.target_offset();
  for (std::size_t j = 0; j < target_grads.g_specific.size(); ++j)
    out.values[t_off + j] -= eta * target_grads.g_specific[j];
  return out;
}

} // namespace detail

/// ERM baseline update: all blocks step along their unperturbed gradients,
///   P_S,i -= eta g_S,i;  P_T -= eta g_T;  P_sh -= eta (g_sh,T + lambda sum g_sh,i).
inline StepResult erm_step(const ParamVector &p, const ObjectiveSet &objectives,
                           const BatchSet &batches, const PGAConfig &cfg,
                           std::size_t t) {
  cfg.validate();
  const BaseGradients base = eval_base_gradients(p, objectives, batches);
  std::vector<GradSlices> src_grads;
  src_grads.reserve(base.sources.size());
  for (const Evaluation &e : base.sources)
    src_grads.push_back(e.grads);
  StepResult res{detail::apply_update(p, cfg, t, base.target.grads, src_grads),
                 detail::build_report(base, cfg)};
  return res;
}

/// One full PGA iteration: base gradients at p, perturbed-point gradients per
/// objective, scalarized combination with lambda, then the block-wise update.
/// Issues exactly 2(N+1) fused gradient evaluations.
inline StepResult pga_step(const ParamVector &p, const ObjectiveSet &objectives,
                           const BatchSet &batches, const PGAConfig &cfg,
                           std::size_t t) {
  cfg.validate();
  const BaseGradients base = eval_base_gradients(p, objectives, batches);
  GradSlices pga_tgt = pga_target_gradient(p, objectives, batches, base, cfg);
  std::vector<GradSlices> pga_src;
  pga_src.reserve(objectives.sources.size());
  for (std::size_t i = 0; i < objectives.sources.size(); ++i)
    pga_src.push_back(pga_source_gradient(p, objectives, batches, base, i, cfg));
  StepResult res{detail::apply_update(p, cfg, t, pga_tgt, pga_src),
                 detail::build_report(base, cfg)};
  return res;
}

} // namespace pga
