#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "memflow/cnf.hpp"
#include "memflow/correlation.hpp"
#include "memflow/ensemble.hpp"
#include "memflow/netlist.hpp"

using namespace memflow;

namespace {

// Three variables in a path a - b - c (two clauses), no units.
ClauseSystem path3() {
  ClauseSystem cs;
  cs.num_vars = 3;
  cs.node_map = {"a", "b", "c"};
  cs.clauses = {{{0, 1}, {1, 1}}, {{1, 1}, {2, 1}}};
  return cs;
}

// Trajectory sampled at t = 0, 1, ..., with rows given explicitly.
Trajectory synthetic(const std::vector<std::vector<double>>& rows) {
  Trajectory tr;
  tr.num_vars = rows.front().size();
  tr.sample_interval = 1.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    tr.times.push_back(static_cast<double>(i));
    tr.voltages.insert(tr.voltages.end(), rows[i].begin(), rows[i].end());
  }
  tr.termination = Termination::Solved;
  return tr;
}

void add_run(Ensemble& ens, Trajectory tr, std::optional<InstantonPhase> phase) {
  ens.seeds.push_back(ens.seeds.size());
  ens.runs.push_back(std::move(tr));
  ens.phases.push_back(phase);
}

std::shared_ptr<const ClauseSystem> shared_instance(std::uint64_t n, unsigned a, unsigned b) {
  return std::make_shared<const ClauseSystem>(encode_cnf(build_multiplier(a, b), n));
}

}  // namespace

// --- covariance ---------------------------------------------------------------

TEST(Covariance, WorkedExamples) {
  const std::vector<double> a{0, 1}, b{0, 1}, c{1, 0}, d{1, 1};
  EXPECT_DOUBLE_EQ(covariance_e2(a, b), 0.25);
  EXPECT_DOUBLE_EQ(covariance_e2(a, c), -0.25);
  EXPECT_DOUBLE_EQ(covariance_e2(d, a), 0.0);
  EXPECT_DOUBLE_EQ(variance_e2(std::vector<double>{1, 2, 3, 4}), 1.25);
  EXPECT_THROW(covariance_e2(a, std::vector<double>{1}), Error);
  EXPECT_THROW(variance_e2(std::vector<double>{1}), Error);
}

TEST(Covariance, MergeIsOrderIndependent) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0.3, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<double, double>> xs(1000);
    for (auto& [x, y] : xs) {
      x = g(rng);
      y = 0.5 * x + g(rng);
    }
    CovarianceAccumulator whole;
    for (auto [x, y] : xs) whole.add(x, y);
    // Random partition, merged left-to-right and right-to-left.
    std::uniform_int_distribution<std::size_t> cut(1, xs.size() - 1);
    std::vector<std::size_t> cuts{0, cut(rng), cut(rng), cut(rng), xs.size()};
    std::sort(cuts.begin(), cuts.end());
    std::vector<CovarianceAccumulator> parts(cuts.size() - 1);
    for (std::size_t p = 0; p + 1 < cuts.size(); ++p)
      for (std::size_t i = cuts[p]; i < cuts[p + 1]; ++i) parts[p].add(xs[i].first, xs[i].second);
    CovarianceAccumulator left, right;
    for (const auto& p : parts) left.merge(p);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) right.merge(*it);
    CovarianceAccumulator nested = parts[0];
    CovarianceAccumulator tail = parts[2];
    tail.merge(parts[3]);
    nested.merge(CovarianceAccumulator(parts[1]).merge(tail));
    EXPECT_EQ(left.count(), xs.size());
    EXPECT_NEAR(left.value(), whole.value(), 1e-12);
    EXPECT_NEAR(right.value(), whole.value(), 1e-12);
    EXPECT_NEAR(nested.value(), whole.value(), 1e-12);
  }
}

TEST(Covariance, CompensatedSumRecoversSmallTerms) {
  CompensatedSum s;
  s.add(1e16);
  for (int i = 0; i < 1000; ++i) s.add(1.0);
  s.add(-1e16);
  EXPECT_EQ(s.value(), 1000.0);
}

// --- scales ----------------------------------------------------------------------

TEST(Scales, CorrelationLengthExamples) {
  EXPECT_EQ(correlation_length({{1, 1.0}, {2, 1.0}, {3, 0.05}}), 3u);
  EXPECT_EQ(correlation_length({{1, 0.5}, {2, 0.5}, {3, 0.5}}), std::nullopt);
  EXPECT_EQ(correlation_length({{1, 0.8}, {2, 0.07}, {3, 0.5}}), 2u);
  EXPECT_EQ(correlation_length({}), std::nullopt);
}

TEST(Scales, CorrelationTimeExamples) {
  EXPECT_EQ(correlation_time({1.0, 0.5, 0.2, 0.05}, 0.5), 1.5);
  EXPECT_EQ(correlation_time({1.0, 1.0, 1.0}, 0.5), std::nullopt);
  EXPECT_EQ(correlation_time({}, 0.5), std::nullopt);
  CorrelationResult r;
  r.spatial.by_distance = {{1, 1.0}, {2, 1.0}, {3, 0.05}};
  r.mean_temporal = {1.0, 0.09};
  r.lag_step = 2.0;
  correlation_scales(r);
  EXPECT_EQ(r.correlation_length, 3u);
  EXPECT_EQ(r.correlation_time, 2.0);
}

// --- synthetic ensembles ---------------------------------------------------------

TEST(Correlation, PerfectAndAntiCorrelatedPairs) {
  // a and b move together across runs; c mirrors a.
  Ensemble ens;
  const double xs[] = {-0.8, -0.1, 0.4, 0.9};
  for (double x : xs) add_run(ens, synthetic({{x, x, -x}, {x, x, -x}, {x, x, -x}}), InstantonPhase{0.0, 2.0, 3});
  const LiteralGraph g(path3());
  const auto sc = spatial_correlation(ens, g);
  ASSERT_EQ(sc.by_distance.size(), 2u);
  EXPECT_NEAR(sc.by_distance.at(1), 1.0, 1e-12);  // max over (a,b) = 1 and (b,c) = -1
  EXPECT_NEAR(sc.by_distance.at(2), -1.0, 1e-12);
  const auto mean = spatial_correlation(ens, g, {}, PairAggregate::Mean);
  EXPECT_NEAR(mean.by_distance.at(1), 0.0, 1e-12);
  EXPECT_EQ(sc.used_runs, 4u);
  EXPECT_EQ(sc.excluded_runs, 0u);
}

TEST(Correlation, DegenerateVarianceIsSkippedAndCounted) {
  Ensemble ens;
  for (double x : {-0.5, 0.5, 0.7}) add_run(ens, synthetic({{x, 0.3, x}}), InstantonPhase{0.0, 0.0, 1});
  const LiteralGraph g(path3());
  const auto sc = spatial_correlation(ens, g);
  EXPECT_EQ(sc.skipped_pairs, 2u);  // both pairs with the constant b
  EXPECT_NEAR(sc.by_distance.at(2), 1.0, 1e-12);
  EXPECT_FALSE(sc.by_distance.count(1));
  EXPECT_THROW(temporal_correlation(ens, 1, {}, 0.0), Error);
}

TEST(Correlation, RunsWithoutPhaseAreExcluded) {
  Ensemble ens;
  for (double x : {-0.5, 0.5, 0.7}) add_run(ens, synthetic({{x, x, x}}), InstantonPhase{0.0, 0.0, 1});
  add_run(ens, synthetic({{9.0, -9.0, 9.0}}), std::nullopt);
  const auto sc = spatial_correlation(ens, LiteralGraph(path3()));
  EXPECT_EQ(sc.excluded_runs, 1u);
  EXPECT_EQ(sc.used_runs, 3u);
  EXPECT_NEAR(sc.by_distance.at(1), 1.0, 1e-12);

  Ensemble lonely;
  add_run(lonely, synthetic({{1.0, 1.0, 1.0}}), InstantonPhase{0.0, 0.0, 1});
  add_run(lonely, synthetic({{1.0, 1.0, 1.0}}), std::nullopt);
  EXPECT_THROW(spatial_correlation(lonely, LiteralGraph(path3())), Error);
}

TEST(Correlation, TemporalAlignmentAndHold) {
  // Run k: variable a = (k+1) * s at sample s; phase mid-time differs per run.
  Ensemble ens;
  add_run(ens, synthetic({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}}), InstantonPhase{0.0, 2.0, 2});  // mid 1
  add_run(ens, synthetic({{0, 0, 0}, {-2, 0, 0}, {-4, 0, 0}}), InstantonPhase{0.0, 2.0, 2});          // mid 1
  add_run(ens, synthetic({{5, 0, 0}, {5, 0, 0}, {3, 0, 0}, {7, 0, 0}}), InstantonPhase{2.0, 2.0, 1});   // mid 2
  const auto tc = temporal_correlation(ens, 0, TimeRule::per_trajectory(), 2.0);
  ASSERT_EQ(tc.values.size(), 3u);
  EXPECT_EQ(tc.values[0], 1.0);
  // Hand values: base = (1, -2, 3); lag 1 = (2, -4, 7); lag 2 = (3, -4 (held), 7 (held)).
  auto ratio = [](std::vector<double> a, std::vector<double> b) { return covariance_e2(a, b) / variance_e2(a); };
  EXPECT_NEAR(tc.values[1], ratio({1, -2, 3}, {2, -4, 7}), 1e-12);
  EXPECT_NEAR(tc.values[2], ratio({1, -2, 3}, {3, -4, 7}), 1e-12);

  // Global rule at t = 0: base = (0, 0, 5).
  const auto gc = temporal_correlation(ens, 0, TimeRule::global(0.0), 1.0);
  EXPECT_EQ(gc.values[0], 1.0);
  EXPECT_NEAR(gc.values[1], ratio({0, 0, 5}, {1, -2, 5}), 1e-12);
}

TEST(Correlation, GlobalRuleDefaultsToMedianMidTime) {
  Ensemble ens;
  for (double mid : {1.0, 5.0, 3.0}) add_run(ens, synthetic({{0, 0, 0}}), InstantonPhase{mid, mid, 1});
  EXPECT_EQ(observe(ens, TimeRule::global()).time, 3.0);
  EXPECT_EQ(observe(ens, TimeRule::global(4.5)).time, 4.5);
}

// --- real ensembles -----------------------------------------------------------

TEST(Ensemble, IndependentOfThreadCount) {
  EnsembleConfig cfg;
  cfg.system = shared_instance(143, 4, 4);
  cfg.run_count = 12;
  cfg.base_seed = 5;
  cfg.threads = 1;
  const auto a = run_ensemble(cfg);
  cfg.threads = 3;
  const auto b = run_ensemble(cfg);
  ASSERT_EQ(a.runs.size(), 12u);
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    EXPECT_EQ(a.seeds[i], cfg.seed(i));
    EXPECT_EQ(a.runs[i].voltages, b.runs[i].voltages);
    EXPECT_EQ(a.runs[i].crossings, b.runs[i].crossings);
  }
  EXPECT_FALSE(a.partial());
  cfg.run_count = 1;
  EXPECT_THROW(run_ensemble(cfg), Error);
  cfg.run_count = 4;
  cfg.system = nullptr;
  EXPECT_THROW(run_ensemble(cfg), Error);
}

TEST(Ensemble, PartialEnsembleIsFlagged) {
  EnsembleConfig cfg;
  cfg.system = shared_instance(143, 4, 4);
  cfg.run_count = 4;
  cfg.integrate.max_time = 0.1;
  const auto ens = run_ensemble(cfg);
  EXPECT_TRUE(ens.partial());
  EXPECT_EQ(ens.count(Termination::MaxTime) + ens.count(Termination::Solved), 4u);
}

TEST(Ensemble, WorkerErrorsPropagate) {
  EnsembleConfig cfg;
  cfg.system = shared_instance(143, 4, 4);
  cfg.run_count = 4;
  cfg.threads = 2;
  cfg.integrate.record_stride = 0;
  EXPECT_THROW(run_ensemble(cfg), Error);
}

TEST(Analysis, NormalizationOnRealEnsemble) {
  EnsembleConfig cfg;
  cfg.system = shared_instance(143, 4, 4);
  cfg.run_count = 40;
  const auto ens = run_ensemble(cfg);
  const LiteralGraph g(*cfg.system);
  for (auto rule : {TimeRule::per_trajectory(), TimeRule::global()}) {
    AnalysisOptions opt;
    opt.rule = rule;
    opt.max_lag = 20.0;
    const auto r = analyze(ens, g, opt);
    EXPECT_EQ(r.diameter, g.diameter());
    EXPECT_EQ(r.temporal.size() + r.degenerate_literals.size(), g.vertex_count());
    for (const auto& tc : r.temporal) {
      ASSERT_FALSE(tc.values.empty());
      EXPECT_EQ(tc.values[0], 1.0);
    }
    EXPECT_EQ(r.mean_temporal.front(), 1.0);
    for (const auto& [d, c] : r.spatial.by_distance) {
      EXPECT_GE(d, 1u);
      EXPECT_LE(std::abs(c), 1.0);
    }
    EXPECT_EQ(r.spatial.used_runs + r.spatial.excluded_runs, ens.runs.size());
    EXPECT_EQ(r.spatial.excluded_runs, ens.without_phase());
  }
}
