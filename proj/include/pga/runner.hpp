// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pga/diagnostics.hpp"
#include "pga/optimizer.hpp"
#include "pga/rng.hpp"
#include "pga/testbeds/spurious.hpp"
#include "pga/testbeds/zdt1.hpp"

namespace pga {

class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string &msg) : std::runtime_error(msg) {}
};

class RunAbort : public std::runtime_error {
public:
  explicit RunAbort(const std::string &msg) : std::runtime_error(msg) {}
};

enum class Experiment { zdt1, spurious };
enum class Method { erm, align_only, pga };

struct SpuriousRunConfig {
  double p_src = 0.9;
  double p_tgt = 0.1;
  double c = 3.0;
  std::size_t noise_dim = 298;
  std::size_t n_samples = 2000; // per split
  // Batch 256 keeps the minibatch shared-gradients clean enough for the
  // alignment direction to carry signal rather than sampling noise; the
  // 40-step anchor sits in the partially-spurious band the task needs.
  std::size_t batch_size = 256;
  std::size_t anchor_iters = 40;
  double anchor_eta = 0.2;
  bool refresh_pseudo = false;
};

struct RunSpec {
  Experiment experiment = Experiment::zdt1;
  Method method = Method::pga;
  std::vector<std::uint64_t> seeds{0};
  PGAConfig cfg;
  SpuriousRunConfig spurious;
  std::string output_dir = "out";
};

// fixed sub-seed streams; spawn order is part of the determinism contract
inline constexpr std::uint64_t kStreamSourceData = 0;
inline constexpr std::uint64_t kStreamTargetData = 1;
inline constexpr std::uint64_t kStreamIdTest = 2;
inline constexpr std::uint64_t kStreamOodTest = 3;
inline constexpr std::uint64_t kStreamInit = 4;
inline constexpr std::uint64_t kStreamBatches = 5;

// --- config parsing ---------------------------------------------------------

namespace detail {

inline double parse_double(const std::string &key, const std::string &val) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(val, &pos);
    if (pos != val.size())
      throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception &) {
    throw ConfigError("invalid numeric value for key '" + key + "': " + val);
  }
}

inline std::uint64_t parse_uint(const std::string &key, const std::string &val) {
  try {
    std::size_t pos = 0;
    if (!val.empty() && val[0] == '-')
      throw std::invalid_argument("negative");
    const unsigned long long v = std::stoull(val, &pos);
    if (pos != val.size())
      throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception &) {
    throw ConfigError("invalid unsigned value for key '" + key + "': " + val);
  }
}

inline bool parse_bool(const std::string &key, const std::string &val) {
  if (val == "true" || val == "1")
    return true;
  if (val == "false" || val == "0")
    return false;
  throw ConfigError("invalid boolean value for key '" + key + "': " + val);
}

inline std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos)
    return "";
  return s.substr(b, e - b + 1);
}

inline const std::vector<std::string> &known_keys() {
  static const std::vector<std::string> keys = {
      "experiment", "method",       "seeds",       "output_dir",
      "rho_ga",     "rho_gn",       "lambda",      "eta0",
      "total_iters", "tau",         "eps_guard",   "schedule",
      "p_src",      "p_tgt",        "c",           "noise_dim",
      "n_samples",  "batch_size",   "anchor_iters", "anchor_eta",
      "refresh_pseudo"};
  return keys;
}

} // namespace detail

/// Parses the flat key=value config (file plus overrides; an override wins
/// over the file). Unknown keys are errors, all defaults are filled in, and
/// the method's structural rho forcing is enforced here so the ERM reduction
/// holds by construction.
inline RunSpec parse_config(const std::optional<std::string> &config_path,
                            const std::vector<std::string> &overrides) {
  std::map<std::string, std::string> kv;
  auto put = [&](const std::string &line, const std::string &where) {
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("malformed entry (expected key=value) in " + where +
                        ": " + line);
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    const auto &keys = detail::known_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
      throw ConfigError("unknown key '" + key + "' in " + where);
    kv[key] = val; // later entries win; overrides are applied after the file
  };

  if (config_path) {
    std::ifstream in(*config_path);
    if (!in)
      throw ConfigError("cannot open config file: " + *config_path);
    std::string line;
    while (std::getline(in, line)) {
      const std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#')
        continue;
      put(t, *config_path);
    }
  }
  for (const std::string &ov : overrides)
    put(ov, "--set override");

  auto has = [&](const char *k) { return kv.count(k) != 0; };
  auto get = [&](const char *k) { return kv.at(k); };

  if (!has("experiment"))
    throw ConfigError("missing required key 'experiment'");
  if (!has("method"))
    throw ConfigError("missing required key 'method'");

  RunSpec spec;
  const std::string exp = get("experiment");
  if (exp == "zdt1")
    spec.experiment = Experiment::zdt1;
  else if (exp == "spurious")
    spec.experiment = Experiment::spurious;
  else
    throw ConfigError("experiment must be 'zdt1' or 'spurious', got " + exp);

  const std::string method = get("method");
  if (method == "erm")
    spec.method = Method::erm;
  else if (method == "align_only")
    spec.method = Method::align_only;
  else if (method == "pga")
    spec.method = Method::pga;
  else
    throw ConfigError("method must be erm, align_only or pga, got " + method);

  // experiment-dependent defaults
  spec.cfg = PGAConfig{};
  if (spec.experiment == Experiment::zdt1) {
    spec.cfg.total_iters = 2000;
    spec.cfg.eta0 = 0.05;
  } else {
    spec.cfg.total_iters = 1000;
    spec.cfg.eta0 = 0.1;
  }

  if (has("seeds")) {
    spec.seeds.clear();
    std::istringstream ss(get("seeds"));
    std::string item;
    while (std::getline(ss, item, ','))
      spec.seeds.push_back(detail::parse_uint("seeds", detail::trim(item)));
    if (spec.seeds.empty())
      throw ConfigError("seeds must contain at least one value");
  }
  if (has("output_dir")) {
    spec.output_dir = get("output_dir");
    if (spec.output_dir.empty())
      throw ConfigError("output_dir must not be empty");
  }

  if (has("rho_ga"))
    spec.cfg.rho_ga = detail::parse_double("rho_ga", get("rho_ga"));
  if (has("rho_gn"))
    spec.cfg.rho_gn = detail::parse_double("rho_gn", get("rho_gn"));
  if (has("lambda"))
    spec.cfg.lambda = detail::parse_double("lambda", get("lambda"));
  if (has("eta0"))
    spec.cfg.eta0 = detail::parse_double("eta0", get("eta0"));
  if (has("total_iters"))
    spec.cfg.total_iters = detail::parse_uint("total_iters", get("total_iters"));
  if (has("tau"))
    spec.cfg.tau = detail::parse_double("tau", get("tau"));
  if (has("eps_guard"))
    spec.cfg.eps_guard = detail::parse_double("eps_guard", get("eps_guard"));
  if (has("schedule")) {
    const std::string s = get("schedule");
    if (s == "constant")
      spec.cfg.schedule = Schedule::constant;
    else if (s == "cosine")
      spec.cfg.schedule = Schedule::cosine;
    else
      throw ConfigError("schedule must be 'constant' or 'cosine', got " + s);
  }

  // structural reduction: align_only forces rho_gn=0; erm forces both rho=0.
  // Explicit contradicting values are configuration errors.
  if (spec.method == Method::erm) {
    if (has("rho_ga") && spec.cfg.rho_ga != 0.0)
      throw ConfigError("method=erm forces rho_ga=0; remove the explicit value");
    if (has("rho_gn") && spec.cfg.rho_gn != 0.0)
      throw ConfigError("method=erm forces rho_gn=0; remove the explicit value");
    spec.cfg.rho_ga = 0.0;
    spec.cfg.rho_gn = 0.0;
  } else if (spec.method == Method::align_only) {
    if (has("rho_gn") && spec.cfg.rho_gn != 0.0)
      throw ConfigError(
          "method=align_only forces rho_gn=0; remove the explicit value");
    spec.cfg.rho_gn = 0.0;
  }

  if (has("p_src"))
    spec.spurious.p_src = detail::parse_double("p_src", get("p_src"));
  if (has("p_tgt"))
    spec.spurious.p_tgt = detail::parse_double("p_tgt", get("p_tgt"));
  if (has("c"))
    spec.spurious.c = detail::parse_double("c", get("c"));
  if (has("noise_dim"))
    spec.spurious.noise_dim =
        detail::parse_uint("noise_dim", get("noise_dim"));
  if (has("n_samples"))
    spec.spurious.n_samples =
        detail::parse_uint("n_samples", get("n_samples"));
  if (has("batch_size"))
    spec.spurious.batch_size =
        detail::parse_uint("batch_size", get("batch_size"));
  if (has("anchor_iters"))
    spec.spurious.anchor_iters =
        detail::parse_uint("anchor_iters", get("anchor_iters"));
  if (has("anchor_eta"))
    spec.spurious.anchor_eta =
        detail::parse_double("anchor_eta", get("anchor_eta"));
  if (has("refresh_pseudo"))
    spec.spurious.refresh_pseudo =
        detail::parse_bool("refresh_pseudo", get("refresh_pseudo"));

  // range validation (fail closed)
  try {
    spec.cfg.validate();
  } catch (const std::exception &e) {
    throw ConfigError(e.what());
  }
  if (spec.experiment == Experiment::spurious) {
    if (!(spec.spurious.p_src > 0.0 && spec.spurious.p_src < 1.0) ||
        !(spec.spurious.p_tgt > 0.0 && spec.spurious.p_tgt < 1.0))
      throw ConfigError("p_src and p_tgt must lie in (0,1)");
    if (!(spec.spurious.c > 1.0))
      throw ConfigError("c must exceed 1");
    if (spec.spurious.noise_dim == 0 || spec.spurious.n_samples == 0 ||
        spec.spurious.batch_size == 0 || spec.spurious.anchor_iters == 0)
      throw ConfigError("spurious sizes must be positive");
    if (!(spec.spurious.anchor_eta > 0.0))
      throw ConfigError("anchor_eta must be positive");
  }
  return spec;
}

inline void dump_defaults(std::ostream &out) {
  out << "# common defaults\n"
      << "method=pga\n"
      << "seeds=0\n"
      << "output_dir=out\n"
      << "rho_ga=0.5\n"
      << "rho_gn=0.05\n"
      << "lambda=1\n"
      << "tau=0.4\n"
      << "eps_guard=1e-12\n"
      << "schedule=cosine\n"
      << "# experiment=zdt1 defaults\n"
      << "total_iters=2000\n"
      << "eta0=0.05\n"
      << "# experiment=spurious defaults\n"
      << "total_iters=1000\n"
      << "eta0=0.1\n"
      << "p_src=0.9\n"
      << "p_tgt=0.1\n"
      << "c=3\n"
      << "noise_dim=298\n"
      << "n_samples=2000\n"
      << "batch_size=256\n"
      << "anchor_iters=40\n"
      << "anchor_eta=0.2\n"
      << "refresh_pseudo=false\n";
}

// --- per-seed experiment drivers ---------------------------------------------

struct ZdtSeedResult {
  std::uint64_t seed = 0;
  double f1 = 0.0;
  double f2 = 0.0;
  double convergence = 0.0;
  bool rise = false;
  bool fall = false;
  std::size_t peak_iter = 0;
};

struct SpuriousSeedResult {
  std::uint64_t seed = 0;
  double id_acc = 0.0;
  double ood_acc = 0.0;
};

struct ZdtRunResult {
  ParamVector final_params;
  TrainTrace trace{1};
  ZdtSeedResult metrics;
};

struct SpuriousRunResult {
  ParamVector final_params;
  TrainTrace trace{1};
  SpuriousSeedResult metrics;
};

inline ZdtRunResult run_zdt1_seed(const RunSpec &spec, std::uint64_t seed) {
  ParamLayout layout;
  layout.shared_dim = kZdt1Dim;
  layout.source_dims = {0};
  layout.target_dim = 0;

  const Zdt1Objectives zdt = zdt1_objectives();
  const SharedOnlyObjective f1_obj(zdt.f1, Domain::source(0), layout);
  const SharedOnlyObjective f2_obj(zdt.f2, Domain::make_target(), layout);
  ObjectiveSet objectives;
  objectives.sources = {&f1_obj};
  objectives.target = &f2_obj;
  BatchSet batches;
  batches.source.resize(1);

  Rng rng_init(mix_seed(seed, kStreamInit));
  Vec x0(kZdt1Dim);
  for (double &v : x0)
    v = rng_init.uniform01();
  ParamVector params(layout, std::move(x0));

  ZdtRunResult res;
  res.trace = TrainTrace(1);
  for (std::size_t t = 0; t < spec.cfg.total_iters; ++t) {
    StepResult step = pga_step(params, objectives, batches, spec.cfg, t);
    res.trace.record(t, lr_at(spec.cfg, t), step.report);
    params = std::move(step.params);
    for (double &v : params.values) // box constraint
      v = std::clamp(v, 0.0, 1.0);
  }

  const Vec x = slice(params, Block::shared());
  res.metrics.seed = seed;
  res.metrics.f1 = zdt.f1.value(x);
  res.metrics.f2 = zdt.f2.value(x);
  res.metrics.convergence = zdt1_convergence(x);
  const SimilarityProfile prof = similarity_profile(res.trace);
  res.metrics.rise = prof.rise;
  res.metrics.fall = prof.fall;
  res.metrics.peak_iter = prof.peak_iter;
  res.final_params = std::move(params);
  return res;
}

inline SpuriousRunResult run_spurious_seed(const RunSpec &spec,
                                           std::uint64_t seed) {
  const SpuriousRunConfig &sc = spec.spurious;
  SpuriousConfig dc;
  dc.c = sc.c;
  dc.noise_dim = sc.noise_dim;
  dc.n_samples = sc.n_samples;

  dc.p = sc.p_src;
  dc.seed = mix_seed(seed, kStreamSourceData);
  const LabeledSet src = gen_spurious(dc);
  dc.p = sc.p_tgt;
  dc.seed = mix_seed(seed, kStreamTargetData);
  const UnlabeledSet tgt = strip_labels(gen_spurious(dc));
  dc.p = sc.p_src;
  dc.seed = mix_seed(seed, kStreamIdTest);
  const LabeledSet id_test = gen_spurious(dc);
  dc.p = sc.p_tgt;
  dc.seed = mix_seed(seed, kStreamOodTest);
  const LabeledSet ood_test = gen_spurious(dc);

  ClassifierModel model;
  model.num_classes = 2;
  model.feature_dim = dc.feature_dim();
  model.num_sources = 1;

  Rng rng_init(mix_seed(seed, kStreamInit));
  ParamVector params = init_classifier_params(model, rng_init);

  const AnchorPredictor anchor = train_anchor(src, sc.anchor_iters, sc.anchor_eta);
  PseudoLabelSet pseudo = pseudo_label(anchor, tgt, spec.cfg.tau);

  const SourceCEObjective src_obj(model, src, 0);
  const TargetCEObjective tgt_obj(model, tgt, pseudo);
  ObjectiveSet objectives;
  objectives.sources = {&src_obj};
  objectives.target = &tgt_obj;

  Rng rng_batch(mix_seed(seed, kStreamBatches));
  const std::size_t epoch_len =
      (tgt.features.size() + sc.batch_size - 1) / sc.batch_size;

  SpuriousRunResult res;
  res.trace = TrainTrace(1);
  for (std::size_t t = 0; t < spec.cfg.total_iters; ++t) {
    if (sc.refresh_pseudo && t > 0 && epoch_len > 0 && t % epoch_len == 0)
      pseudo = pseudo_label(anchor, tgt, spec.cfg.tau); // anchor is frozen
    BatchSet batches;
    batches.source.resize(1);
    batches.source[0].reserve(sc.batch_size);
    for (std::size_t j = 0; j < sc.batch_size; ++j)
      batches.source[0].push_back(rng_batch.bounded(src.features.size()));
    batches.target.reserve(sc.batch_size);
    for (std::size_t j = 0; j < sc.batch_size; ++j)
      batches.target.push_back(rng_batch.bounded(tgt.features.size()));
    StepResult step = pga_step(params, objectives, batches, spec.cfg, t);
    res.trace.record(t, lr_at(spec.cfg, t), step.report);
    params = std::move(step.params);
  }

  res.metrics.seed = seed;
  res.metrics.id_acc = accuracy(model, params, id_test);
  res.metrics.ood_acc = accuracy(model, params, ood_test);
  res.final_params = std::move(params);
  return res;
}

// --- seed sweep + summary ----------------------------------------------------

struct RunSummary {
  Experiment experiment = Experiment::zdt1;
  Method method = Method::pga;
  std::vector<ZdtSeedResult> zdt_seeds;
  std::vector<SpuriousSeedResult> spurious_seeds;
  double id_acc_mean = 0.0, id_acc_stderr = 0.0;
  double ood_acc_mean = 0.0, ood_acc_stderr = 0.0;
  double f1_mean = 0.0, f2_mean = 0.0;
  double convergence_mean = 0.0, convergence_stderr = 0.0;
};

namespace detail {

inline double mean_of(const std::vector<double> &v) {
  double s = 0.0;
  for (double x : v)
    s += x;
  return s / static_cast<double>(v.size());
}

inline double stderr_of(const std::vector<double> &v, double mean) {
  if (v.size() < 2)
    return 0.0;
  double ss = 0.0;
  for (double x : v)
    ss += (x - mean) * (x - mean);
  const double var = ss / static_cast<double>(v.size() - 1);
  return std::sqrt(var / static_cast<double>(v.size()));
}

inline std::string method_name(Method m) {
  switch (m) {
  case Method::erm:
    return "erm";
  case Method::align_only:
    return "align_only";
  case Method::pga:
    return "pga";
  }
  return "?";
}

inline std::string experiment_name(Experiment e) {
  return e == Experiment::zdt1 ? "zdt1" : "spurious";
}

inline std::ofstream open_out(const std::filesystem::path &p) {
  std::ofstream out(p, std::ios::binary);
  if (!out)
    throw RunAbort("cannot open output file: " + p.string());
  return out;
}

} // namespace detail

/// Executes the seed sweep, writing one trace CSV and one final-params dump
/// per seed plus a summary file; returns the aggregated metrics.
inline RunSummary run(const RunSpec &spec) {
  namespace fs = std::filesystem;
  fs::create_directories(spec.output_dir);

  RunSummary summary;
  summary.experiment = spec.experiment;
  summary.method = spec.method;

  for (std::uint64_t seed : spec.seeds) {
    try {
      const fs::path dir(spec.output_dir);
      if (spec.experiment == Experiment::zdt1) {
        ZdtRunResult r = run_zdt1_seed(spec, seed);
        auto trace_out =
            detail::open_out(dir / ("trace_seed" + std::to_string(seed) + ".csv"));
        r.trace.write_csv(trace_out);
        auto params_out = detail::open_out(
            dir / ("params_seed" + std::to_string(seed) + ".txt"));
        save_params(r.final_params, params_out);
        summary.zdt_seeds.push_back(r.metrics);
      } else {
        SpuriousRunResult r = run_spurious_seed(spec, seed);
        auto trace_out =
            detail::open_out(dir / ("trace_seed" + std::to_string(seed) + ".csv"));
        r.trace.write_csv(trace_out);
        auto params_out = detail::open_out(
            dir / ("params_seed" + std::to_string(seed) + ".txt"));
        save_params(r.final_params, params_out);
        summary.spurious_seeds.push_back(r.metrics);
      }
    } catch (const StepAbort &e) {
      throw RunAbort("seed=" + std::to_string(seed) + " " + e.what());
    }
  }

  std::ostringstream body;
  body << "experiment=" << detail::experiment_name(spec.experiment) << "\n";
  body << "method=" << detail::method_name(spec.method) << "\n";
  body << "seeds=";
  for (std::size_t i = 0; i < spec.seeds.size(); ++i) {
    if (i)
      body << ',';
    body << spec.seeds[i];
  }
  body << "\n";

  if (spec.experiment == Experiment::zdt1) {
    std::vector<double> f1s, f2s, convs;
    for (const ZdtSeedResult &r : summary.zdt_seeds) {
      body << "seed=" << r.seed << " f1=" << format_g17(r.f1)
           << " f2=" << format_g17(r.f2)
           << " convergence=" << format_g17(r.convergence)
           << " rise=" << (r.rise ? 1 : 0) << " fall=" << (r.fall ? 1 : 0)
           << " peak_iter=" << r.peak_iter << "\n";
      f1s.push_back(r.f1);
      f2s.push_back(r.f2);
      convs.push_back(r.convergence);
    }
    summary.f1_mean = detail::mean_of(f1s);
    summary.f2_mean = detail::mean_of(f2s);
    summary.convergence_mean = detail::mean_of(convs);
    summary.convergence_stderr =
        detail::stderr_of(convs, summary.convergence_mean);
    body << "f1_mean=" << format_g17(summary.f1_mean) << "\n";
    body << "f2_mean=" << format_g17(summary.f2_mean) << "\n";
    body << "convergence_mean=" << format_g17(summary.convergence_mean) << "\n";
    body << "convergence_stderr=" << format_g17(summary.convergence_stderr)
         << "\n";
  } else {
    std::vector<double> id_accs, ood_accs;
    for (const SpuriousSeedResult &r : summary.spurious_seeds) {
      body << "seed=" << r.seed << " id_acc=" << format_g17(r.id_acc)
           << " ood_acc=" << format_g17(r.ood_acc) << "\n";
      id_accs.push_back(r.id_acc);
      ood_accs.push_back(r.ood_acc);
    }
    summary.id_acc_mean = detail::mean_of(id_accs);
    summary.id_acc_stderr = detail::stderr_of(id_accs, summary.id_acc_mean);
    summary.ood_acc_mean = detail::mean_of(ood_accs);
    summary.ood_acc_stderr = detail::stderr_of(ood_accs, summary.ood_acc_mean);
    body << "id_acc_mean=" << format_g17(summary.id_acc_mean) << "\n";
    body << "id_acc_stderr=" << format_g17(summary.id_acc_stderr) << "\n";
    body << "ood_acc_mean=" << format_g17(summary.ood_acc_mean) << "\n";
    body << "ood_acc_stderr=" << format_g17(summary.ood_acc_stderr) << "\n";
  }

  auto out = detail::open_out(std::filesystem::path(spec.output_dir) /
                              "summary.txt");
  out << body.str();
  return summary;
}

} // namespace pga
