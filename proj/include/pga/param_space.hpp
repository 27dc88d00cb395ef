// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pga/vec.hpp"

namespace pga {

// Block order is fixed as [shared, sources in index order, target] so dumps
// and fixtures are reproducible. Any block may have dimension zero.
struct ParamLayout {
  std::size_t shared_dim = 0;
  std::vector<std::size_t> source_dims;
  std::size_t target_dim = 0;

  std::size_t num_sources() const { return source_dims.size(); }

  std::size_t total_dim() const {
    std::size_t n = shared_dim + target_dim;
    for (std::size_t d : source_dims)
      n += d;
    return n;
  }

  std::size_t shared_offset() const { return 0; }

  std::size_t source_offset(std::size_t i) const {
    if (i >= source_dims.size())
      throw std::invalid_argument("ParamLayout: source index out of range");
    std::size_t off = shared_dim;
    for (std::size_t j = 0; j < i; ++j)
      off += source_dims[j];
    return off;
  }

  std::size_t target_offset() const {
    std::size_t off = shared_dim;
    for (std::size_t d : source_dims)
      off += d;
    return off;
  }

  bool operator==(const ParamLayout &) const = default;
};

/// Identifies one block of the partitioned space.
struct Block {
  enum class Kind { shared, source, target };
  Kind kind = Kind::shared;
  std::size_t index = 0; // meaningful for Kind::source only

  static Block shared() { return {Kind::shared, 0}; }
  static Block source(std::size_t i) { return {Kind::source, i}; }
  static Block target() { return {Kind::target, 0}; }
};

/// Domain tag: which objective owns a gradient (source i or the target).
struct Domain {
  bool target = false;
  std::size_t index = 0; // source index when !target

  static Domain source(std::size_t i) { return {false, i}; }
  static Domain make_target() { return {true, 0}; }
  bool operator==(const Domain &) const = default;

  Block specific_block() const {
    return target ? Block::target() : Block::source(index);
  }
};

inline std::size_t block_offset(const ParamLayout &layout, Block b) {
  switch (b.kind) {
  case Block::Kind::shared:
    return layout.shared_offset();
  case Block::Kind::source:
    return layout.source_offset(b.index);
  case Block::Kind::target:
    return layout.target_offset();
  }
  throw std::invalid_argument("block_offset: unknown block id");
}

inline std::size_t block_dim(const ParamLayout &layout, Block b) {
  switch (b.kind) {
  case Block::Kind::shared:
    return layout.shared_dim;
  case Block::Kind::source:
    if (b.index >= layout.source_dims.size())
      throw std::invalid_argument("block_dim: source index out of range");
    return layout.source_dims[b.index];
  case Block::Kind::target:
    return layout.target_dim;
  }
  throw std::invalid_argument("block_dim: unknown block id");
}

/// Immutable-by-convention flat parameter vector P = [P_sh, {P_S,i}, P_T].
/// Updates produce new vectors; whole-vector copies dominate the access
/// pattern since objectives are evaluated at shifted full points.
struct ParamVector {
  ParamLayout layout;
  Vec values;

  ParamVector() = default;
  ParamVector(ParamLayout l, Vec v) : layout(std::move(l)), values(std::move(v)) {
    if (values.size() != layout.total_dim())
      throw std::invalid_argument("ParamVector: values length != total_dim");
  }

  static ParamVector zeros(ParamLayout l) {
    Vec v(l.total_dim(), 0.0);
    return ParamVector(std::move(l), std::move(v));
  }
};

/// A full-space gradient stored as its two non-zero slices: the shared block
/// and the owning domain's specific block. Embedding places zeros elsewhere.
struct GradSlices {
  ParamLayout layout;
  Vec g_shared;
  Vec g_specific;
  Domain owner;
};

inline void validate(const GradSlices &g) {
  if (g.g_shared.size() != g.layout.shared_dim)
    throw std::invalid_argument("GradSlices: shared slice length mismatch");
  if (g.g_specific.size() != block_dim(g.layout, g.owner.specific_block()))
    throw std::invalid_argument("GradSlices: specific slice length mismatch");
}

inline Vec slice(const ParamVector &p, Block b) {
  const std::size_t off = block_offset(p.layout, b);
  const std::size_t n = block_dim(p.layout, b);
  return Vec(p.values.begin() + static_cast<std::ptrdiff_t>(off),
             p.values.begin() + static_cast<std::ptrdiff_t>(off + n));
}

inline std::span<const double> slice_view(const ParamVector &p, Block b) {
  return std::span<const double>(p.values)
      .subspan(block_offset(p.layout, b), block_dim(p.layout, b));
}

inline Vec embed_full(const GradSlices &g) {
  validate(g);
  Vec full(g.layout.total_dim(), 0.0);
  const std::size_t sh_off = g.layout.shared_offset();
  for (std::size_t i = 0; i < g.g_shared.size(); ++i)
    full[sh_off + i] = g.g_shared[i];
  const std::size_t sp_off = block_offset(g.layout, g.owner.specific_block());
  for (std::size_t i = 0; i < g.g_specific.size(); ++i)
    full[sp_off + i] = g.g_specific[i];
  return full;
}

/// Returns a copy of p with delta added to the named block; p is unchanged.
inline ParamVector block_perturb(const ParamVector &p, Block b,
                                 std::span<const double> delta) {
  if (delta.size() != block_dim(p.layout, b))
    throw std::invalid_argument("block_perturb: delta length mismatch");
  ParamVector out = p;
  const std::size_t off = block_offset(p.layout, b);
  for (std::size_t i = 0; i < delta.size(); ++i)
    out.values[off + i] += delta[i];
  return out;
}

// --- checkpoint text format -------------------------------------------------
// header line:  layout sh=<n> src=<n1,n2,...> tgt=<n>
// then one value per line, 17 significant digits.

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void save_params(const ParamVector &p, std::ostream &out) {
  out << "layout sh=" << p.layout.shared_dim << " src=";
  for (std::size_t i = 0; i < p.layout.source_dims.size(); ++i) {
    if (i)
      out << ',';
    out << p.layout.source_dims[i];
  }
  out << " tgt=" << p.layout.target_dim << "\n";
  for (double v : p.values)
    out << format_g17(v) << "\n";
}

inline ParamVector load_params(std::istream &in) {
  std::string header;
  if (!std::getline(in, header))
    throw std::runtime_error("load_params: missing header");
  ParamLayout layout;
  std::istringstream hs(header);
  std::string tag, field;
  hs >> tag;
  if (tag != "layout")
    throw std::runtime_error("load_params: bad header tag");
  while (hs >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("load_params: malformed header field");
    const std::string key = field.substr(0, eq);
    const std::string val = field.substr(eq + 1);
    if (key == "sh") {
      layout.shared_dim = std::stoull(val);
    } else if (key == "tgt") {
      layout.target_dim = std::stoull(val);
    } else if (key == "src") {
      if (!val.empty()) {
        std::istringstream ls(val);
        std::string item;
        while (std::getline(ls, item, ','))
          layout.source_dims.push_back(std::stoull(item));
      }
    } else {
      throw std::runtime_error("load_params: unknown header field " + key);
    }
  }
  Vec values;
  values.reserve(layout.total_dim());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    values.push_back(std::stod(line));
  }
  return ParamVector(std::move(layout), std::move(values));
}

} // namespace pga
