#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <sstream>

#include "memflow/instanton_toy.hpp"

using namespace memflow;
using namespace memflow::toy;

namespace {

// Closed-form logistic solution from x0.
double logistic_at(double x0, double t) { return 1.0 / (1.0 + (1.0 / x0 - 1.0) * std::exp(-t)); }

// Moduli value at which the 1D logistic member crosses 1/2 at time t.
double logistic_crossing_sigma(double t, double r) { return -std::log(r * (1.0 + std::exp(t))); }

std::vector<std::vector<double>> scan_times(double a, double b, unsigned n, std::vector<double> rest = {}) {
  std::vector<std::vector<double>> out;
  for (unsigned k = 0; k < n; ++k) {
    std::vector<double> t{a + (b - a) * k / (n - 1)};
    t.insert(t.end(), rest.begin(), rest.end());
    out.push_back(t);
  }
  return out;
}

}  // namespace

TEST(ToyFlow, LogisticCriticalPoints) {
  const auto f = ToyFlow::logistic(2);
  ASSERT_EQ(f.critical_points().size(), 4u);
  for (const auto& c : f.critical_points()) {
    EXPECT_LT(f(c.x).norm(), 1e-10);
    const int ones = static_cast<int>(c.x.sum());
    const Stability expected = ones == 0 ? Stability::Source : ones == 2 ? Stability::Sink : Stability::Saddle;
    EXPECT_EQ(c.stability, expected);
    EXPECT_EQ(c.unstable_dims, static_cast<unsigned>(2 - ones));
  }
  const auto [start, sink] = f.endpoints();
  EXPECT_EQ(start->x, (Vec{{0.0, 0.0}}));
  EXPECT_EQ(sink->x, (Vec{{1.0, 1.0}}));
  EXPECT_THROW(ToyFlow::logistic(4), Error);
}

TEST(ToyFlow, SpiralSinkHasComplexEigenvalues) {
  const auto f = ToyFlow::spiral(20.0);
  const auto [start, sink] = f.endpoints();
  EXPECT_EQ(start->stability, Stability::Source);
  EXPECT_EQ(sink->stability, Stability::Sink);
  ASSERT_EQ(sink->eigenvalues.size(), 2);
  for (Eigen::Index i = 0; i < 2; ++i) {
    EXPECT_NEAR(sink->eigenvalues[i].real(), -1.0, 1e-12);
    EXPECT_NEAR(std::abs(sink->eigenvalues[i].imag()), 20.0, 1e-12);
  }
  const Mat J = f.jacobian(Vec{{1.0, 1.0}});
  EXPECT_DOUBLE_EQ(J(0, 1), -20.0);
  EXPECT_DOUBLE_EQ(J(1, 0), 20.0);
  EXPECT_THROW(ToyFlow::spiral(-1.0), Error);
}

TEST(ToyFlow, AnalyticJacobianMatchesDifferences) {
  for (const auto& f : {ToyFlow::logistic(3), ToyFlow::spiral(30.0)}) {
    const unsigned d = f.dim();
    for (const Vec x : {Vec::Constant(d, 0.3), Vec::Constant(d, 0.8), Vec::Constant(d, 0.95)}) {
      const Mat J = f.jacobian(x);
      for (unsigned k = 0; k < d; ++k) {
        Vec p = x, m = x;
        p[k] += 1e-6;
        m[k] -= 1e-6;
        const Vec col = (f(p) - f(m)) / 2e-6;
        for (unsigned i = 0; i < d; ++i) EXPECT_NEAR(J(i, k), col[i], 1e-6);
      }
    }
  }
}

TEST(ToyFlow, PolynomialFlow) {
  // dx/dt = x - x^2, listed with its two zeros.
  const auto f = ToyFlow::polynomial(1, {{{1.0, {1}}, {-1.0, {2}}}}, {Vec{{0.0}}, Vec{{1.0}}});
  EXPECT_NEAR(f(Vec{{0.25}})[0], 0.1875, 1e-15);
  EXPECT_EQ(f.critical_points()[0].stability, Stability::Source);
  EXPECT_EQ(f.critical_points()[1].stability, Stability::Sink);
  EXPECT_THROW(ToyFlow::polynomial(1, {{{1.0, {1}}, {-1.0, {2}}}}, {Vec{{0.5}}}), Error);
  EXPECT_THROW(ToyFlow::polynomial(1, {{{1.0, {1, 0}}}}, {}), Error);
  const auto fam = build_instanton_family(f);
  const auto r = intersection_number(fam, {{0, 12.0}});
  EXPECT_EQ(r.signed_sum, 1);
}

TEST(Rk4, MatchesClosedFormLogistic) {
  const auto f = ToyFlow::logistic(1);
  const auto xs = rk4_at(f, Vec{{1e-3}}, {1.0, 5.0, 10.0}, 0.01);
  EXPECT_NEAR(xs[0][0], logistic_at(1e-3, 1.0), 1e-10);
  EXPECT_NEAR(xs[1][0], logistic_at(1e-3, 5.0), 1e-10);
  EXPECT_NEAR(xs[2][0], logistic_at(1e-3, 10.0), 1e-10);
  EXPECT_THROW(rk4_at(f, Vec{{0.1}}, {2.0, 1.0}, 0.01), Error);
}

TEST(Family, SeedsAlongUnstableDirections) {
  const auto fam = build_instanton_family(ToyFlow::logistic(2));
  EXPECT_EQ(fam.moduli_dim(), 2u);
  const Vec s = fam.seed(Vec{{0.0, std::log(2.0)}});
  EXPECT_NEAR(s[0], 1e-4, 1e-18);
  EXPECT_NEAR(s[1], 2e-4, 1e-18);
  EXPECT_EQ(fam.grid_size(), 61u * 61u);
  EXPECT_TRUE(fam.convergence_time(Vec{{-6.0, -6.0}}));
}

TEST(Family, NonConvergingBoxIsRejected) {
  FamilyOptions opt;
  opt.horizon = 5.0;
  EXPECT_THROW(build_instanton_family(ToyFlow::logistic(1), opt), Error);
}

TEST(Intersection, LogisticCrossingMatchesClosedForm) {
  const auto fam = build_instanton_family(ToyFlow::logistic(1));
  for (double t : {10.0, 12.0, 14.5}) {
    const auto r = intersection_number(fam, {{0, t}});
    ASSERT_EQ(r.raw_count(), 1u) << t;
    EXPECT_EQ(r.signed_sum, 1);
    EXPECT_NEAR(r.crossings[0].sigma[0], logistic_crossing_sigma(t, 1e-4), 1e-6);
    // d x / d sigma at the crossing: x (1 - x) * d log(x0/(1-x0)) / d sigma ~ 1/4 / (1 - x0).
    const double x0 = 1e-4 * std::exp(r.crossings[0].sigma[0]);
    EXPECT_NEAR(r.crossings[0].det, 0.25 / (1.0 - x0), 1e-6);
  }
}

TEST(Intersection, FiniteDifferenceSignMatchesAnalytic) {
  const auto fam = build_instanton_family(ToyFlow::logistic(1));
  for (double sigma : {-5.0, -3.0, -1.0}) {
    const Mat J = detail::fd_jacobian(fam, {{0, 11.0}}, Vec{{sigma}}, 0.001);
    const double h = 1e-6;
    const double analytic = (logistic_at(1e-4 * std::exp(sigma + h), 11.0) - logistic_at(1e-4 * std::exp(sigma - h), 11.0)) / (2 * h);
    EXPECT_GT(J(0, 0), 0.0);
    EXPECT_NEAR(J(0, 0), analytic, 1e-6);
  }
}

TEST(Intersection, LogisticProductCountsOne) {
  const auto fam = build_instanton_family(ToyFlow::logistic(2));
  for (auto [t1, t2] : {std::pair{11.0, 12.0}, {13.0, 10.5}, {12.0, 12.0}}) {
    const auto r = intersection_number(fam, {{0, t1}, {1, t2}});
    EXPECT_EQ(r.signed_sum, 1);
    EXPECT_EQ(r.raw_count(), 1u);
    EXPECT_NEAR(r.crossings[0].sigma[0], logistic_crossing_sigma(t1, 1e-4), 1e-5);
    EXPECT_NEAR(r.crossings[0].sigma[1], logistic_crossing_sigma(t2, 1e-4), 1e-5);
  }
}

TEST(Intersection, ThreeDimensionalLogistic) {
  FamilyOptions opt;
  opt.grid.points = 13;
  const auto fam = build_instanton_family(ToyFlow::logistic(3), opt);
  const auto r = intersection_number(fam, {{0, 12.0}, {1, 11.0}, {2, 13.0}});
  EXPECT_EQ(r.signed_sum, 1);
  EXPECT_EQ(r.raw_count(), 1u);
}

TEST(Intersection, OutsideWindowIsZeroWithWarning) {
  const auto fam = build_instanton_family(ToyFlow::logistic(1));
  const auto report = invariance_scan(fam, {0}, {{2.0}, {40.0}});
  for (const auto& e : report.entries) {
    ASSERT_TRUE(e.result);
    EXPECT_EQ(e.result->signed_sum, 0);
    EXPECT_FALSE(e.warning.empty());
  }
  EXPECT_EQ(report.values, std::set<int>{0});
}

TEST(Intersection, InputValidation) {
  const auto fam = build_instanton_family(ToyFlow::logistic(2));
  EXPECT_THROW(intersection_number(fam, {{0, 12.0}}), Error);
  EXPECT_THROW(intersection_number(fam, {{0, 12.0}, {5, 12.0}}), Error);
  EXPECT_THROW(intersection_number(fam, {{0, -1.0}, {1, 12.0}}), Error);
  const auto report = invariance_scan(fam, {0, 1}, {{12.0}});
  EXPECT_EQ(report.errors, 1u);
  EXPECT_FALSE(report.invariant());
}

TEST(Intersection, CacheDoesNotChangeResults) {
  FamilyOptions opt;
  opt.grid = {-12.0, 0.0, 41};
  const auto fam = build_instanton_family(ToyFlow::spiral(), opt);
  const GridCache cache(fam, {12.0, 14.0, 15.0});
  for (double t1 : {14.0, 15.0}) {
    const auto a = intersection_number(fam, {{0, t1}, {1, 12.0}});
    const auto b = intersection_number(fam, {{0, t1}, {1, 12.0}}, &cache);
    EXPECT_EQ(a.signed_sum, b.signed_sum);
    ASSERT_EQ(a.raw_count(), b.raw_count());
    for (std::size_t i = 0; i < a.raw_count(); ++i) EXPECT_EQ(a.crossings[i].sigma, b.crossings[i].sigma);
  }
}

TEST(Invariance, LogisticScan) {
  const auto fam = build_instanton_family(ToyFlow::logistic(1));
  const auto report = invariance_scan(fam, {0}, scan_times(9.5, 14.9, 20));
  EXPECT_TRUE(report.invariant());
  EXPECT_EQ(report.values, std::set<int>{1});
  EXPECT_EQ(report.raw_counts, std::set<std::size_t>{1});
}

TEST(Invariance, SpiralScanCancelsPairs) {
  FamilyOptions opt;
  opt.grid = {-12.0, 0.0, 121};
  const auto start = std::chrono::steady_clock::now();
  const auto fam = build_instanton_family(ToyFlow::spiral(), opt);
  const auto report = invariance_scan(fam, {0, 1}, scan_times(12.5, 19.5, 20, {12.0}));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_TRUE(report.invariant());
  EXPECT_EQ(report.values, std::set<int>{1});
  EXPECT_GE(report.raw_counts.size(), 2u);
  // Extra crossings come in opposite-sign pairs.
  for (const auto& e : report.entries) {
    ASSERT_TRUE(e.result);
    int plus = 0, minus = 0;
    for (const auto& c : e.result->crossings) (c.sign > 0 ? plus : minus)++;
    EXPECT_EQ(plus - minus, 1);
  }
  EXPECT_LT(seconds, 10.0);
}

TEST(Report, StructuredTextAndCsv) {
  const auto fam = build_instanton_family(ToyFlow::logistic(1));
  const auto report = invariance_scan(fam, {0}, {{12.0}});
  std::ostringstream os, csv;
  write_report(os, report);
  EXPECT_NE(os.str().find("signed_sum 1"), std::string::npos);
  EXPECT_NE(os.str().find("values 1"), std::string::npos);
  write_family_csv(csv, fam, {Vec{{-3.0}}}, 1.0, 0.5);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "sigma_1,t,x_1");
  std::size_t lines = 0;
  for (char c : csv.str()) lines += c == '\n';
  EXPECT_EQ(lines, 4u);
}
