// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pga/domain_objective.hpp"
#include "pga/param_space.hpp"
#include "pga/rng.hpp"
#include "pga/vec.hpp"

namespace pga {

// --- data --------------------------------------------------------------

struct SpuriousConfig {
  double p = 0.9;        // environment-label correlation, in (0,1)
  double c = 3.0;        // spurious feature scale, > 1
  std::size_t noise_dim = 298;
  std::size_t n_samples = 2000;
  std::uint64_t seed = 0;

  std::size_t feature_dim() const { return noise_dim + 2; }

  void validate() const {
    if (!(p > 0.0 && p < 1.0))
      throw std::invalid_argument("SpuriousConfig: p must lie in (0,1)");
    if (!(c > 1.0))
      throw std::invalid_argument("SpuriousConfig: c must exceed 1");
    if (noise_dim == 0 || n_samples == 0)
      throw std::invalid_argument("SpuriousConfig: empty dimensions");
  }
};

struct LabeledSet {
  std::vector<Vec> features;
  std::vector<std::size_t> labels; // class ids in {0, 1}
};

struct UnlabeledSet {
  std::vector<Vec> features;
};

/// Draws the spurious-correlation data: y uniform on {-1,+1}, environmental
/// feature e = y with probability p (else -y), noise ~ N(0, I), and
/// x = [c*e, y, noise]. Labels are remapped {-1 -> 0, +1 -> 1}.
inline LabeledSet gen_spurious(const SpuriousConfig &cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  LabeledSet out;
  out.features.reserve(cfg.n_samples);
  out.labels.reserve(cfg.n_samples);
  for (std::size_t j = 0; j < cfg.n_samples; ++j) {
    const double y_signed = rng.bernoulli(0.5) ? 1.0 : -1.0;
    const double e = rng.bernoulli(cfg.p) ? y_signed : -y_signed;
    Vec x(cfg.feature_dim());
    x[0] = cfg.c * e;
    x[1] = y_signed;
    for (std::size_t d = 0; d < cfg.noise_dim; ++d)
      x[2 + d] = rng.normal();
    out.features.push_back(std::move(x));
    out.labels.push_back(y_signed > 0.0 ? 1 : 0);
  }
  return out;
}

inline UnlabeledSet strip_labels(const LabeledSet &s) {
  return UnlabeledSet{s.features};
}

// Replay format: header "n=<n> dim=<d> labeled=<0|1>", one sample per row,
// label first when labeled, fields space-delimited.
inline void save_dataset(const LabeledSet &s, std::ostream &out) {
  const std::size_t d = s.features.empty() ? 0 : s.features[0].size();
  out << "n=" << s.features.size() << " dim=" << d << " labeled=1\n";
  for (std::size_t j = 0; j < s.features.size(); ++j) {
    out << s.labels[j];
    for (double v : s.features[j])
      out << ' ' << format_g17(v);
    out << '\n';
  }
}

inline void save_dataset(const UnlabeledSet &s, std::ostream &out) {
  const std::size_t d = s.features.empty() ? 0 : s.features[0].size();
  out << "n=" << s.features.size() << " dim=" << d << " labeled=0\n";
  for (const Vec &x : s.features) {
    bool first = true;
    for (double v : x) {
      if (!first)
        out << ' ';
      out << format_g17(v);
      first = false;
    }
    out << '\n';
  }
}

namespace detail {

struct DatasetHeader {
  std::size_t n = 0;
  std::size_t dim = 0;
  int labeled = -1;
};

inline DatasetHeader parse_dataset_header(std::istream &in) {
  std::string header;
  if (!std::getline(in, header))
    throw std::runtime_error("load_dataset: missing header");
  DatasetHeader h;
  std::istringstream hs(header);
  std::string field;
  while (hs >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("load_dataset: malformed header");
    const std::string key = field.substr(0, eq);
    const std::string val = field.substr(eq + 1);
    if (key == "n")
      h.n = std::stoull(val);
    else if (key == "dim")
      h.dim = std::stoull(val);
    else if (key == "labeled")
      h.labeled = std::stoi(val);
    else
      throw std::runtime_error("load_dataset: unknown header field " + key);
  }
  return h;
}

} // namespace detail

inline LabeledSet load_labeled_dataset(std::istream &in) {
  const detail::DatasetHeader h = detail::parse_dataset_header(in);
  if (h.labeled != 1)
    throw std::runtime_error("load_dataset: expected a labeled set");
  LabeledSet out;
  out.features.reserve(h.n);
  out.labels.reserve(h.n);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    std::istringstream ls(line);
    std::size_t label = 0;
    ls >> label;
    Vec x(h.dim);
    for (std::size_t k = 0; k < h.dim; ++k)
      ls >> x[k];
    if (!ls)
      throw std::runtime_error("load_dataset: short row");
    out.labels.push_back(label);
    out.features.push_back(std::move(x));
  }
  if (out.features.size() != h.n)
    throw std::runtime_error("load_dataset: row count mismatch");
  return out;
}

inline UnlabeledSet load_unlabeled_dataset(std::istream &in) {
  const detail::DatasetHeader h = detail::parse_dataset_header(in);
  if (h.labeled != 0)
    throw std::runtime_error("load_dataset: expected an unlabeled set");
  UnlabeledSet out;
  out.features.reserve(h.n);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    std::istringstream ls(line);
    Vec x(h.dim);
    for (std::size_t k = 0; k < h.dim; ++k)
      ls >> x[k];
    if (!ls)
      throw std::runtime_error("load_dataset: short row");
    out.features.push_back(std::move(x));
  }
  if (out.features.size() != h.n)
    throw std::runtime_error("load_dataset: row count mismatch");
  return out;
}

// --- softmax cross-entropy ----------------------------------------------

namespace detail {

// logits for one sample under flat row-major weights (K x D)
inline void logits_into(std::span<const double> w, std::size_t num_classes,
                        std::span<const double> x, Vec &z) {
  const std::size_t d = x.size();
  z.assign(num_classes, 0.0);
  for (std::size_t k = 0; k < num_classes; ++k) {
    double s = 0.0;
    const double *row = w.data() + k * d;
    for (std::size_t j = 0; j < d; ++j)
      s += row[j] * x[j];
    z[k] = s;
  }
}

inline void softmax_inplace(Vec &z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double &v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double &v : z)
    v /= sum;
}

// mean CE and weight gradient over the given (sample, label) pairs;
// accumulates grad[k*d + j] += (p_k - [k==y]) * x_j / denom.
struct CEAccum {
  double loss = 0.0;
  Vec grad;
};

inline void ce_accumulate(std::span<const double> w, std::size_t num_classes,
                          std::span<const double> x, std::size_t label,
                          double inv_denom, CEAccum &acc) {
  const std::size_t d = x.size();
  Vec z;
  logits_into(w, num_classes, x, z);
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z)
    sum += std::exp(v - m);
  const double log_sum = m + std::log(sum);
  acc.loss += (log_sum - z[label]) * inv_denom;
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double p_k = std::exp(z[k] - log_sum);
    const double coef = (p_k - (k == label ? 1.0 : 0.0)) * inv_denom;
    double *row = acc.grad.data() + k * d;
    for (std::size_t j = 0; j < d; ++j)
      row[j] += coef * x[j];
  }
}

} // namespace detail

// --- shared + specific classifier ----------------------------------------

/// Linear classifier whose per-domain weights compose additively,
/// logits(x) = (W_sh + W_d) x, with every block a flattened K x D matrix.
/// Specific blocks start at zero so the composition initially equals the
/// shared predictor.
struct ClassifierModel {
  std::size_t num_classes = 2;
  std::size_t feature_dim = 300;
  std::size_t num_sources = 1;

  std::size_t block_size() const { return num_classes * feature_dim; }

  ParamLayout layout() const {
    ParamLayout l;
    l.shared_dim = block_size();
    l.source_dims.assign(num_sources, block_size());
    l.target_dim = block_size();
    return l;
  }

  /// Composed weights W_sh + W_d for the given domain.
  Vec composed_weights(const ParamVector &params, Domain d) const {
    Vec w = slice(params, Block::shared());
    const std::span<const double> specific =
        slice_view(params, d.specific_block());
    for (std::size_t i = 0; i < w.size(); ++i)
      w[i] += specific[i];
    return w;
  }

  Vec probs(const ParamVector &params, Domain d,
            std::span<const double> x) const {
    const Vec w = composed_weights(params, d);
    Vec z;
    detail::logits_into(w, num_classes, x, z);
    detail::softmax_inplace(z);
    return z;
  }
};

inline ParamVector init_classifier_params(const ClassifierModel &model,
                                          Rng &rng, double shared_std = 0.01) {
  ParamVector p = ParamVector::zeros(model.layout());
  for (std::size_t i = 0; i < model.layout().shared_dim; ++i)
    p.values[i] = shared_std * rng.normal();
  return p;
}

/// Mean softmax cross-entropy of source domain i over the batch, with the
/// analytic gradient slices. The additive composition sends the same weight
/// gradient to the shared and the specific block.
class SourceCEObjective final : public DomainObjective {
public:
  SourceCEObjective(const ClassifierModel &model, const LabeledSet &data,
                    std::size_t source_index)
      : model_(model), data_(data), index_(source_index) {}

  Domain owner() const override { return Domain::source(index_); }

  Evaluation eval(const ParamVector &p, Batch batch) const override {
    if (batch.empty())
      throw std::invalid_argument("SourceCEObjective: empty batch");
    const Vec w = model_.composed_weights(p, owner());
    detail::CEAccum acc;
    acc.grad.assign(w.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t idx : batch)
      detail::ce_accumulate(w, model_.num_classes, data_.features.at(idx),
                            data_.labels.at(idx), inv, acc);
    Evaluation e;
    e.value = acc.loss;
    e.grads = GradSlices{p.layout, acc.grad, acc.grad, owner()};
    return e;
  }

  double value(const ParamVector &p, Batch batch) const override {
    if (batch.empty())
      throw std::invalid_argument("SourceCEObjective: empty batch");
    const Vec w = model_.composed_weights(p, owner());
    double loss = 0.0;
    Vec z;
    for (std::size_t idx : batch) {
      detail::logits_into(w, model_.num_classes, data_.features.at(idx), z);
      const double m = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (double v : z)
        sum += std::exp(v - m);
      loss += m + std::log(sum) - z[data_.labels.at(idx)];
    }
    return loss / static_cast<double>(batch.size());
  }

private:
  const ClassifierModel &model_;
  const LabeledSet &data_;
  std::size_t index_;
};

// --- anchor predictor and pseudo-labels -----------------------------------

/// Frozen stand-in for the zero-shot scorer: a plain linear softmax
/// classifier trained on source data only, immutable afterwards.
class AnchorPredictor {
public:
  AnchorPredictor(std::size_t num_classes, std::size_t feature_dim, Vec weights)
      : num_classes_(num_classes), feature_dim_(feature_dim),
        weights_(std::move(weights)) {
    if (weights_.size() != num_classes_ * feature_dim_)
      throw std::invalid_argument("AnchorPredictor: weight size mismatch");
  }

  Vec probs(std::span<const double> x) const {
    Vec z;
    detail::logits_into(weights_, num_classes_, x, z);
    detail::softmax_inplace(z);
    return z;
  }

  std::size_t num_classes() const { return num_classes_; }

private:
  std::size_t num_classes_;
  std::size_t feature_dim_;
  Vec weights_;
};

/// Trains the anchor with full-batch gradient steps on the source set.
inline AnchorPredictor train_anchor(const LabeledSet &data,
                                    std::size_t warmup_iters, double eta,
                                    std::size_t num_classes = 2) {
  if (warmup_iters == 0)
    throw std::invalid_argument("train_anchor: warmup_iters must be >= 1");
  if (data.features.empty())
    throw std::invalid_argument("train_anchor: empty data");
  const std::size_t d = data.features[0].size();
  Vec w(num_classes * d, 0.0);
  const double inv = 1.0 / static_cast<double>(data.features.size());
  for (std::size_t it = 0; it < warmup_iters; ++it) {
    detail::CEAccum acc;
    acc.grad.assign(w.size(), 0.0);
    for (std::size_t j = 0; j < data.features.size(); ++j)
      detail::ce_accumulate(w, num_classes, data.features[j], data.labels[j],
                            inv, acc);
    if (!std::isfinite(acc.loss))
      throw std::runtime_error("train_anchor: diverged (non-finite loss)");
    for (std::size_t i = 0; i < w.size(); ++i)
      w[i] -= eta * acc.grad[i];
  }
  return AnchorPredictor(num_classes, d, std::move(w));
}

struct PseudoLabelSet {
  std::vector<std::uint8_t> include;
  std::vector<std::size_t> label;
  Vec confidence;

  std::size_t count_included() const {
    std::size_t n = 0;
    for (std::uint8_t b : include)
      n += b;
    return n;
  }
};

/// Labels each unlabeled sample with the anchor's argmax class (ties to the
/// lowest class id); the sample is included iff its confidence clears tau.
inline PseudoLabelSet pseudo_label(const AnchorPredictor &anchor,
                                   const UnlabeledSet &data, double tau) {
  PseudoLabelSet out;
  out.include.reserve(data.features.size());
  out.label.reserve(data.features.size());
  out.confidence.reserve(data.features.size());
  for (const Vec &x : data.features) {
    const Vec p = anchor.probs(x);
    double sum = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) // also rejects NaN
        throw std::invalid_argument("pseudo_label: invalid probability");
      sum += v;
    }
    if (!(std::abs(sum - 1.0) <= 1e-9))
      throw std::invalid_argument("pseudo_label: probabilities must sum to 1");
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.size(); ++k)
      if (p[k] > p[best])
        best = k;
    out.label.push_back(best);
    out.confidence.push_back(p[best]);
    out.include.push_back(p[best] >= tau ? 1 : 0);
  }
  return out;
}

/// Thresholded cross-entropy on pseudo-labeled target samples, normalized by
/// the batch size; excluded samples contribute nothing. A batch with no
/// included sample yields zero loss and zero gradients.
class TargetCEObjective final : public DomainObjective {
public:
  TargetCEObjective(const ClassifierModel &model, const UnlabeledSet &data,
                    const PseudoLabelSet &pseudo)
      : model_(model), data_(data), pseudo_(pseudo) {
    if (pseudo_.include.size() != data_.features.size())
      throw std::invalid_argument("TargetCEObjective: pseudo-label size mismatch");
  }

  Domain owner() const override { return Domain::make_target(); }

  Evaluation eval(const ParamVector &p, Batch batch) const override {
    const Vec w = model_.composed_weights(p, owner());
    detail::CEAccum acc;
    acc.grad.assign(w.size(), 0.0);
    const double inv =
        batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());
    for (std::size_t idx : batch) {
      if (!pseudo_.include.at(idx))
        continue;
      detail::ce_accumulate(w, model_.num_classes, data_.features.at(idx),
                            pseudo_.label.at(idx), inv, acc);
    }
    Evaluation e;
    e.value = acc.loss;
    e.grads = GradSlices{p.layout, acc.grad, acc.grad, owner()};
    return e;
  }

  double value(const ParamVector &p, Batch batch) const override {
    const Vec w = model_.composed_weights(p, owner());
    double loss = 0.0;
    Vec z;
    for (std::size_t idx : batch) {
      if (!pseudo_.include.at(idx))
        continue;
      detail::logits_into(w, model_.num_classes, data_.features.at(idx), z);
      const double m = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (double v : z)
        sum += std::exp(v - m);
      loss += m + std::log(sum) - z[pseudo_.label.at(idx)];
    }
    return batch.empty() ? 0.0 : loss / static_cast<double>(batch.size());
  }

private:
  const ClassifierModel &model_;
  const UnlabeledSet &data_;
  const PseudoLabelSet &pseudo_;
};

// --- inference -------------------------------------------------------------

/// Arithmetic mean of the softmax probabilities under every domain
/// composition (each source and the target).
inline Vec avg_inference(const ClassifierModel &model, const ParamVector &params,
                         std::span<const double> x) {
  Vec mean(model.num_classes, 0.0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < model.num_sources; ++i) {
    const Vec p = model.probs(params, Domain::source(i), x);
    axpy(1.0, p, mean);
    ++count;
  }
  const Vec p = model.probs(params, Domain::make_target(), x);
  axpy(1.0, p, mean);
  ++count;
  for (double &v : mean)
    v /= static_cast<double>(count);
  return mean;
}

inline double accuracy(const ClassifierModel &model, const ParamVector &params,
                       const LabeledSet &data) {
  if (data.features.empty())
    return 0.0;
  std::size_t correct = 0;
  for (std::size_t j = 0; j < data.features.size(); ++j) {
    const Vec p = avg_inference(model, params, data.features[j]);
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.size(); ++k)
      if (p[k] > p[best])
        best = k;
    if (best == data.labels[j])
      ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.features.size());
}

} // namespace pga
