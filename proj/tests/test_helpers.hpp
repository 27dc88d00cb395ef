// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "pga/domain_objective.hpp"
#include "pga/gradcheck.hpp"
#include "pga/param_space.hpp"
#include "pga/testbeds/zdt1.hpp"

namespace pga_test {

// Shared-block-only layout with N zero-size source blocks and an empty
// target block: the degenerate shape both toy fixtures use.
inline pga::ParamLayout shared_only_layout(std::size_t shared_dim,
                                           std::size_t num_sources = 1) {
  pga::ParamLayout l;
  l.shared_dim = shared_dim;
  l.source_dims.assign(num_sources, 0);
  l.target_dim = 0;
  return l;
}

// Counts fused gradient evaluations passing through a DomainObjective.
class CountingObjective final : public pga::DomainObjective {
public:
  CountingObjective(const pga::DomainObjective &inner, std::size_t &counter)
      : inner_(inner), counter_(counter) {}

  pga::Domain owner() const override { return inner_.owner(); }

  pga::Evaluation eval(const pga::ParamVector &p,
                       pga::Batch batch) const override {
    ++counter_;
    return inner_.eval(p, batch);
  }

  double value(const pga::ParamVector &p, pga::Batch batch) const override {
    return inner_.value(p, batch);
  }

private:
  const pga::DomainObjective &inner_;
  std::size_t &counter_;
};

// Unique scratch directory under the system temp root, removed on scope exit.
class TempDir {
public:
  explicit TempDir(const std::string &tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("pga_test_" + tag + "_" + std::to_string(counter()++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path &path() const { return path_; }

private:
  static std::size_t &counter() {
    static std::size_t c = 0;
    return c;
  }
  std::filesystem::path path_;
};

} // namespace pga_test
