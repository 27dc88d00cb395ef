// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pga/objective.hpp"
#include "pga/param_space.hpp"

namespace pga {

// Sample indices for one evaluation. Objectives that subsample data must see
// the same batch for the value/gradient pair used within a single step;
// full-data objectives ignore it.
using Batch = std::span<const std::size_t>;

struct Evaluation {
  double value = 0.0;
  GradSlices grads;
};

/// A differentiable loss bound to (shared block, one specific block),
/// evaluable at arbitrary full parameter points. Immutable after
/// construction; purity is per-(point, batch).
class DomainObjective {
public:
  virtual ~DomainObjective() = default;
  virtual Domain owner() const = 0;
  /// One fused value+gradient evaluation. This is the unit the optimizer's
  /// evaluation budget counts.
  virtual Evaluation eval(const ParamVector &p, Batch batch) const = 0;
  virtual double value(const ParamVector &p, Batch batch) const = 0;
};

/// Presents a DomainObjective as an ObjectiveFn over the full flat space
/// with a pinned batch, so fd_gradient / check_gradient apply directly.
class FullSpaceObjective final : public ObjectiveFn {
public:
  FullSpaceObjective(const DomainObjective &inner, ParamLayout layout,
                     std::vector<std::size_t> batch = {})
      : inner_(inner), layout_(std::move(layout)), batch_(std::move(batch)) {}

  std::size_t dim() const override { return layout_.total_dim(); }

  double value(std::span<const double> point) const override {
    return inner_.value(ParamVector(layout_, Vec(point.begin(), point.end())),
                        batch_);
  }

  Vec gradient(std::span<const double> point) const override {
    const Evaluation e = inner_.eval(
        ParamVector(layout_, Vec(point.begin(), point.end())), batch_);
    return embed_full(e.grads);
  }

private:
  const DomainObjective &inner_;
  ParamLayout layout_;
  std::vector<std::size_t> batch_;
};

} // namespace pga
