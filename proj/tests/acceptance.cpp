// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance suite. Each test case checks one shipping criterion
// at its pinned tolerance and prints a single PASS/FAIL line.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "pga/diagnostics.hpp"
#include "pga/gradcheck.hpp"
#include "pga/optimizer.hpp"
#include "pga/rng.hpp"
#include "pga/runner.hpp"
#include "pga/testbeds/spurious.hpp"
#include "pga/testbeds/zdt1.hpp"
#include "test_helpers.hpp"

using namespace pga;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

void report(const char *id, const char *what, bool pass, const std::string &detail) {
  std::printf("[acceptance] %s %s: %s (%s)\n", id, what,
              pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::vector<std::string> kv(std::initializer_list<std::string> items) {
  return std::vector<std::string>(items);
}

} // namespace

TEST_CASE("A1 zdt1 convergence") {
  const auto start = std::chrono::steady_clock::now();
  const RunSpec spec =
      parse_config(std::nullopt, kv({"experiment=zdt1", "method=pga"}));
  REQUIRE(spec.cfg.total_iters == 2000);

  std::size_t good = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ZdtRunResult r = run_zdt1_seed(spec, seed);
    const Vec x = slice(r.final_params, Block::shared());
    const bool in_range = x[0] >= 0.0 && x[0] <= 1.0;
    if (r.metrics.convergence < 0.1 && in_range)
      ++good;
    worst = std::max(worst, r.metrics.convergence);
  }
  const double elapsed = seconds_since(start);
  const bool pass = good >= 9 && elapsed < 10.0;
  std::ostringstream detail;
  detail << good << "/10 seeds converged, worst=" << worst << ", "
         << elapsed << "s";
  report("A1", "zdt1 convergence < 0.1", pass, detail.str());
  CHECK(pass);
}

TEST_CASE("A2 spurious ood ordering") {
  const auto start = std::chrono::steady_clock::now();
  auto mean_ood = [&](const char *method) {
    const RunSpec spec = parse_config(
        std::nullopt,
        kv({"experiment=spurious", std::string("method=") + method}));
    double sum = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed)
      sum += run_spurious_seed(spec, seed).metrics.ood_acc;
    return sum / 10.0;
  };
  const double erm = mean_ood("erm");
  const double align = mean_ood("align_only");
  const double pga = mean_ood("pga");
  const double elapsed = seconds_since(start);
  const bool pass =
      pga >= align && align >= erm && (pga - erm) >= 0.05 && elapsed < 60.0;
  std::ostringstream detail;
  detail << "ood erm=" << erm << " align=" << align << " pga=" << pga << ", "
         << elapsed << "s";
  report("A2", "ood ordering pga>=align>=erm with 5pp margin", pass,
         detail.str());
  CHECK(pass);
}

TEST_CASE("A3 similarity rise then fall") {
  auto trace_for = [&](double rho_ga) {
    const RunSpec spec = parse_config(
        std::nullopt, kv({"experiment=spurious", "method=pga",
                          "rho_ga=" + format_g17(rho_ga)}));
    return run_spurious_seed(spec, 0).trace;
  };
  const TrainTrace t01 = trace_for(0.1);
  const TrainTrace t05 = trace_for(0.5);
  const TrainTrace t00 = trace_for(0.0);

  const SimilarityProfile p01 = similarity_profile(t01);
  const SimilarityProfile p05 = similarity_profile(t05);
  const double peak00 = smoothed_cosine_peak(t00);
  const double peak05 = smoothed_cosine_peak(t05);

  const bool pass =
      p01.rise && p01.fall && p05.rise && p05.fall && peak00 < peak05;
  std::ostringstream detail;
  detail << "rho=0.1 rise=" << p01.rise << " fall=" << p01.fall
         << "; rho=0.5 rise=" << p05.rise << " fall=" << p05.fall
         << "; peak(0)=" << peak00 << " < peak(0.5)=" << peak05;
  report("A3", "gradient-similarity profile", pass, detail.str());
  CHECK(pass);
}

namespace {

struct CETaylorFixture {
  SpuriousConfig dc;
  LabeledSet src_data;
  UnlabeledSet tgt_data;
  ClassifierModel model;
  AnchorPredictor anchor;
  PseudoLabelSet pseudo;
  SourceCEObjective src_obj;
  TargetCEObjective tgt_obj;
  std::vector<std::size_t> full_batch;

  static SpuriousConfig make_cfg(double p, std::uint64_t seed) {
    SpuriousConfig c;
    c.p = p;
    c.c = 1.5;
    c.noise_dim = 8;
    c.n_samples = 60;
    c.seed = seed;
    return c;
  }

  CETaylorFixture()
      : dc(make_cfg(0.7, 91)), src_data(gen_spurious(dc)),
        tgt_data(strip_labels(gen_spurious(make_cfg(0.3, 92)))),
        model{2, dc.feature_dim(), 1},
        anchor(train_anchor(src_data, 40, 0.1)),
        pseudo(pseudo_label(anchor, tgt_data, 0.4)),
        src_obj(model, src_data, 0), tgt_obj(model, tgt_data, pseudo) {
    for (std::size_t j = 0; j < src_data.features.size(); ++j)
      full_batch.push_back(j);
  }
};

} // namespace

TEST_CASE("A4 taylor slope of the alignment loss") {
  CETaylorFixture fix;
  Rng rng(2718);
  bool pass = true;
  double worst_res = 0.0;
  double worst_ratio = 0.0;
  for (int point = 0; point < 20; ++point) {
    ParamVector p = ParamVector::zeros(fix.model.layout());
    for (double &v : p.values)
      v = 0.2 * rng.normal();
    const Evaluation es = fix.src_obj.eval(p, fix.full_batch);
    const Evaluation et = fix.tgt_obj.eval(p, fix.full_batch);
    const Vec a_unit =
        align_vector(es.grads.g_shared, et.grads.g_shared, 1.0, 1e-12);
    const double cos = cos_sim(es.grads.g_shared, et.grads.g_shared, 1e-12);
    auto quotient = [&](double rho) {
      const ParamVector shifted =
          block_perturb(p, Block::shared(), scaled(a_unit, -rho));
      return (et.value - fix.tgt_obj.value(shifted, fix.full_batch)) / rho;
    };
    const double r1 = std::abs(quotient(1e-4) - cos);
    const double r2 = std::abs(quotient(5e-5) - cos);
    pass = pass && r1 <= 1e-3 && r2 <= 0.6 * r1;
    worst_res = std::max(worst_res, r1);
    if (r1 > 0.0)
      worst_ratio = std::max(worst_ratio, r2 / r1);
  }
  std::ostringstream detail;
  detail << "20 points, worst residual=" << worst_res
         << ", worst halving ratio=" << worst_ratio;
  report("A4", "taylor slope matches cos similarity", pass, detail.str());
  CHECK(pass);
}

TEST_CASE("A5 zero-rho reduction is bit identical to erm") {
  SpuriousConfig dc;
  dc.p = 0.8;
  dc.c = 2.0;
  dc.noise_dim = 10;
  dc.n_samples = 200;
  dc.seed = 11;
  const LabeledSet src_data = gen_spurious(dc);
  dc.p = 0.2;
  dc.seed = 12;
  const UnlabeledSet tgt_data = strip_labels(gen_spurious(dc));
  ClassifierModel model{2, dc.feature_dim(), 1};
  const AnchorPredictor anchor = train_anchor(src_data, 40, 0.1);
  const PseudoLabelSet pseudo = pseudo_label(anchor, tgt_data, 0.4);
  const SourceCEObjective src_obj(model, src_data, 0);
  const TargetCEObjective tgt_obj(model, tgt_data, pseudo);
  ObjectiveSet o;
  o.sources = {&src_obj};
  o.target = &tgt_obj;

  PGAConfig cfg;
  cfg.rho_ga = 0.0;
  cfg.rho_gn = 0.0;
  cfg.eta0 = 0.05;
  cfg.total_iters = 500;

  Rng rng_init(3);
  ParamVector p_erm = init_classifier_params(model, rng_init);
  ParamVector p_pga = p_erm;
  Rng batches_a(17);
  Rng batches_b(17);
  bool identical = true;
  for (std::size_t t = 0; t < cfg.total_iters && identical; ++t) {
    auto draw = [&](Rng &r) {
      BatchSet b;
      b.source.resize(1);
      for (int j = 0; j < 16; ++j)
        b.source[0].push_back(r.bounded(src_data.features.size()));
      for (int j = 0; j < 16; ++j)
        b.target.push_back(r.bounded(tgt_data.features.size()));
      return b;
    };
    p_erm = erm_step(p_erm, o, draw(batches_a), cfg, t).params;
    p_pga = pga_step(p_pga, o, draw(batches_b), cfg, t).params;
    identical = std::memcmp(p_erm.values.data(), p_pga.values.data(),
                            p_erm.values.size() * sizeof(double)) == 0;
  }
  report("A5", "500-step trajectory bitwise equal", identical,
         identical ? "memcmp clean over 500 steps" : "trajectories diverged");
  CHECK(identical);
}

TEST_CASE("A6 decomposition identity on random layouts") {
  Rng rng(424242);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    ParamLayout l;
    l.shared_dim = rng.bounded(10);
    const std::size_t n_src = 1 + rng.bounded(3);
    for (std::size_t i = 0; i < n_src; ++i)
      l.source_dims.push_back(rng.bounded(8));
    l.target_dim = rng.bounded(8);
    auto rand_vec = [&](std::size_t n) {
      Vec v(n);
      for (double &x : v)
        x = rng.uniform(-3.0, 3.0);
      return v;
    };
    const std::size_t si = rng.bounded(n_src);
    const GradSlices u{l, rand_vec(l.shared_dim), rand_vec(l.source_dims[si]),
                       Domain::source(si)};
    const GradSlices v{l, rand_vec(l.shared_dim), rand_vec(l.target_dim),
                       Domain::make_target()};
    const Vec fu = embed_full(u);
    const Vec fv = embed_full(v);
    Vec diff(fu.size());
    for (std::size_t i = 0; i < fu.size(); ++i)
      diff[i] = fu[i] - fv[i];
    const double lhs = norm_sq(diff);
    const double rhs =
        norm_sq(fu) + norm_sq(fv) - 2.0 * dot(u.g_shared, v.g_shared);
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  const bool pass = worst <= 1e-10;
  std::ostringstream detail;
  detail << "1000 draws, worst |lhs-rhs|=" << worst;
  report("A6", "||g_src - g_tgt||^2 decomposition", pass, detail.str());
  CHECK(pass);
}

TEST_CASE("A7 gradcheck for every shipped objective") {
  const auto start = std::chrono::steady_clock::now();
  std::ostringstream sink;
  const bool ok = run_gradcheck_suite(sink, 100, 1e-5, 1e-7);
  const double elapsed = seconds_since(start);
  const bool pass = ok && elapsed < 5.0;
  std::ostringstream detail;
  detail << (ok ? "all objectives pass rel 1e-5" : "FAILURES:\n" + sink.str())
         << ", " << elapsed << "s";
  report("A7", "gradcheck 100 points/objective", pass, detail.str());
  CHECK(pass);
}

TEST_CASE("A8 bound proxy sanity") {
  // hand-arithmetic fixture reproduced exactly
  StepReport rep;
  rep.loss_src = {0.0};
  rep.cos = {0.0};
  rep.gnorm_sh_src = {1.0};   // g_sh,src = (1,0)
  rep.gnorm_spec_src = {2.0}; // g_S = (2)
  rep.gnorm_sh_tgt = 1.0;     // g_sh,tgt = (0,1)
  rep.gnorm_tgt = 3.0;        // g_T = (3)
  rep.shared_dot = {0.0};
  const bool exact = bound_increment(rep, 1.0).increment == 30.0;

  // monotone nondecreasing on real runs of both testbeds
  bool monotone = true;
  auto check_monotone = [&](const TrainTrace &trace) {
    double prev = 0.0;
    for (const TraceRow &row : trace.rows()) {
      if (row.bound_cum < prev)
        monotone = false;
      prev = row.bound_cum;
    }
  };
  const RunSpec zdt_spec = parse_config(
      std::nullopt, kv({"experiment=zdt1", "method=pga", "total_iters=300"}));
  check_monotone(run_zdt1_seed(zdt_spec, 0).trace);
  const RunSpec sp_spec = parse_config(
      std::nullopt,
      kv({"experiment=spurious", "method=pga", "total_iters=200",
          "n_samples=300", "noise_dim=16", "anchor_iters=50"}));
  check_monotone(run_spurious_seed(sp_spec, 0).trace);

  const bool pass = exact && monotone;
  std::ostringstream detail;
  detail << "fixture increment " << (exact ? "== 30" : "!= 30")
         << ", cumulative " << (monotone ? "monotone" : "NOT monotone");
  report("A8", "bound proxy", pass, detail.str());
  CHECK(pass);
}

TEST_CASE("A9 evaluation budget 2(N+1)") {
  bool pass = true;
  std::ostringstream detail;
  for (std::size_t n_sources : {1u, 2u, 3u}) {
    ParamLayout layout = pga_test::shared_only_layout(2, n_sources);
    QuadraticObjective tgt_fn{{1.0, 1.0}, {-1.0, 0.5}};
    SharedOnlyObjective tgt(tgt_fn, Domain::make_target(), layout);
    std::vector<QuadraticObjective> src_fns;
    std::vector<SharedOnlyObjective> srcs;
    src_fns.reserve(n_sources);
    srcs.reserve(n_sources);
    for (std::size_t i = 0; i < n_sources; ++i) {
      src_fns.emplace_back(Vec{1.0, 2.0}, Vec{1.0, 0.1 * (double)i});
      srcs.emplace_back(src_fns.back(), Domain::source(i), layout);
    }
    std::vector<std::size_t> counts(n_sources + 1, 0);
    pga_test::CountingObjective counted_tgt(tgt, counts[n_sources]);
    std::vector<pga_test::CountingObjective> counted_srcs;
    counted_srcs.reserve(n_sources);
    for (std::size_t i = 0; i < n_sources; ++i)
      counted_srcs.emplace_back(srcs[i], counts[i]);
    ObjectiveSet o;
    for (auto &c : counted_srcs)
      o.sources.push_back(&c);
    o.target = &counted_tgt;
    BatchSet b;
    b.source.resize(n_sources);

    PGAConfig cfg;
    cfg.eta0 = 0.1;
    cfg.total_iters = 10;
    pga_step(ParamVector(layout, Vec{0.2, -0.1}), o, b, cfg, 0);

    std::size_t total = 0;
    for (std::size_t c : counts)
      total += c;
    const bool this_ok = total == 2 * (n_sources + 1);
    pass = pass && this_ok;
    detail << "N=" << n_sources << ":" << total << " ";
  }
  detail << "(expected 4/6/8)";
  report("A9", "gradient evaluations per step", pass, detail.str());
  CHECK(pass);
}
