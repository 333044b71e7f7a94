#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "memflow/ensemble.hpp"
#include "memflow/literal_graph.hpp"

namespace memflow {

/// Neumaier-compensated sum. Merging two sums adds both the running value and
/// the compensation.
class CompensatedSum {
public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }

  void merge(const CompensatedSum& o) noexcept {
    add(o.sum_);
    add(o.comp_);
  }

  double value() const noexcept { return sum_ + comp_; }

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Mergeable accumulator for E{ab} - E{a}E{b} over ensemble samples.
class CovarianceAccumulator {
public:
  void add(double a, double b) noexcept {
    ++n_;
    a_.add(a);
    b_.add(b);
    ab_.add(a * b);
  }

  CovarianceAccumulator& merge(const CovarianceAccumulator& o) noexcept {
    n_ += o.n_;
    a_.merge(o.a_);
    b_.merge(o.b_);
    ab_.merge(o.ab_);
    return *this;
  }

  std::size_t count() const noexcept { return n_; }

  double value() const {
    if (n_ < 2) throw Error("covariance needs at least 2 samples");
    const double inv = 1.0 / static_cast<double>(n_);
    return ab_.value() * inv - (a_.value() * inv) * (b_.value() * inv);
  }

private:
  std::size_t n_ = 0;
  CompensatedSum a_, b_, ab_;
};

inline double covariance_e2(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("covariance inputs differ in length");
  if (a.size() < 2) throw Error("covariance needs at least 2 samples");
  CovarianceAccumulator acc;
  for (std::size_t i = 0; i < a.size(); ++i) acc.add(a[i], b[i]);
  return acc.value();
}

inline double variance_e2(std::span<const double> a) { return covariance_e2(a, a); }

inline constexpr double kMinVariance = 1e-12;

// ---------------------------------------------------------------------------

/// Which time each trajectory is observed at.
struct TimeRule {
  enum class Kind { PerTrajectory, Global } kind = Kind::PerTrajectory;
  std::optional<double> global_time;  // Global: defaults to the median mid-phase time

  static TimeRule per_trajectory() { return {}; }
  static TimeRule global(std::optional<double> t = std::nullopt) { return {Kind::Global, t}; }
};

enum class PairAggregate { Max, Mean };

/// Sample index each usable trajectory is observed at.
struct Observation {
  std::vector<std::size_t> runs;
  std::vector<std::size_t> sample;
  std::size_t excluded = 0;  // trajectories without an instanton phase
  double time = 0.0;         // global time, or median mid time for per-trajectory
};

inline Observation observe(const Ensemble& ens, const TimeRule& rule) {
  Observation obs;
  std::vector<double> mids;
  for (std::size_t i = 0; i < ens.runs.size(); ++i) {
    if (!ens.phases[i]) {
      ++obs.excluded;
      continue;
    }
    obs.runs.push_back(i);
    mids.push_back(ens.phases[i]->mid_time());
  }
  if (obs.runs.size() < 2) throw Error("fewer than 2 trajectories with an instanton phase");
  auto sorted = mids;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  obs.time = sorted[sorted.size() / 2];
  if (rule.kind == TimeRule::Kind::Global && rule.global_time) obs.time = *rule.global_time;
  for (std::size_t k = 0; k < obs.runs.size(); ++k) {
    const auto& tr = ens.runs[obs.runs[k]];
    const double t = rule.kind == TimeRule::Kind::Global ? obs.time : mids[k];
    obs.sample.push_back(tr.nearest_sample(t));
  }
  return obs;
}

struct SpatialCorrelation {
  std::map<std::uint32_t, double> by_distance;  // d >= 1
  std::size_t skipped_pairs = 0;                // degenerate variance
  std::size_t excluded_runs = 0;
  std::size_t used_runs = 0;
};

/// C(d) over vertex pairs at graph distance d, aggregated by max (default) or mean.
inline SpatialCorrelation spatial_correlation(const Ensemble& ens, const LiteralGraph& graph,
                                              const TimeRule& rule = {},
                                              PairAggregate agg = PairAggregate::Max) {
  const auto obs = observe(ens, rule);
  const auto& verts = graph.vertices();
  const std::size_t nv = verts.size(), nr = obs.runs.size();

  std::vector<double> snap(nv * nr);  // vertex-major
  for (std::size_t k = 0; k < nr; ++k) {
    const auto row = ens.runs[obs.runs[k]].sample(obs.sample[k]);
    for (std::size_t j = 0; j < nv; ++j) snap[j * nr + k] = row[verts[j]];
  }
  auto column = [&](std::size_t j) { return std::span<const double>(snap.data() + j * nr, nr); };
  std::vector<double> var(nv);
  for (std::size_t j = 0; j < nv; ++j) var[j] = variance_e2(column(j));

  SpatialCorrelation out;
  out.excluded_runs = obs.excluded;
  out.used_runs = nr;
  std::map<std::uint32_t, std::pair<double, std::size_t>> acc;
  for (std::size_t a = 0; a < nv; ++a) {
    for (std::size_t b = a + 1; b < nv; ++b) {
      const auto d = graph.distance(verts[a], verts[b]);
      if (d == kUnreachable) continue;
      if (var[a] < kMinVariance || var[b] < kMinVariance) {
        ++out.skipped_pairs;
        continue;
      }
      double c = covariance_e2(column(a), column(b)) / std::sqrt(var[a] * var[b]);
      c = std::clamp(c, -1.0, 1.0);  // rounding only; the ratio is bounded by Cauchy-Schwarz
      auto [it, fresh] = acc.try_emplace(d, c, 1);
      if (fresh) continue;
      if (agg == PairAggregate::Max)
        it->second.first = std::max(it->second.first, c);
      else
        it->second.first += c;
      ++it->second.second;
    }
  }
  for (const auto& [d, v] : acc)
    out.by_distance[d] = agg == PairAggregate::Max ? v.first : v.first / static_cast<double>(v.second);
  return out;
}

struct TemporalCorrelation {
  Var var = 0;
  double lag_step = 0.0;
  std::vector<double> values;  // values[k] = C(k * lag_step)
};

/// C(tau) = E2{v(t), v(t+tau)} / E2{v(t)} on the recording grid. Lags past a
/// trajectory's end read its final sample.
inline TemporalCorrelation temporal_correlation(const Ensemble& ens, Var var, const TimeRule& rule,
                                                double max_lag) {
  const auto obs = observe(ens, rule);
  const auto& first = ens.runs[obs.runs.front()];
  if (var >= first.num_vars) throw Error("unknown variable");
  const double step = first.sample_interval;
  for (auto r : obs.runs)
    if (ens.runs[r].sample_interval != step) throw Error("trajectories use different recording grids");
  const auto lags = static_cast<std::size_t>(std::floor(max_lag / step + 1e-9));

  const std::size_t nr = obs.runs.size();
  std::vector<double> base(nr), shifted(nr);
  for (std::size_t k = 0; k < nr; ++k) base[k] = ens.runs[obs.runs[k]].sample(obs.sample[k])[var];
  const double denom = covariance_e2(base, base);
  if (denom < kMinVariance) throw Error("variable " + std::to_string(var) + " has degenerate variance");

  TemporalCorrelation out{var, step, {}};
  for (std::size_t lag = 0; lag <= lags; ++lag) {
    for (std::size_t k = 0; k < nr; ++k) {
      const auto& tr = ens.runs[obs.runs[k]];
      const auto idx = std::min(obs.sample[k] + lag, tr.sample_count() - 1);
      shifted[k] = tr.sample(idx)[var];
    }
    out.values.push_back(covariance_e2(base, shifted) / denom);
  }
  return out;
}

/// First key whose value falls below plateau / 10.
inline std::optional<std::uint32_t> correlation_length(const std::map<std::uint32_t, double>& c_d) {
  auto plateau_it = c_d.find(1);
  if (plateau_it == c_d.end()) {
    if (c_d.empty()) return std::nullopt;
    plateau_it = c_d.begin();
  }
  const double threshold = plateau_it->second / 10.0;
  for (const auto& [d, v] : c_d)
    if (d > plateau_it->first && v < threshold) return d;
  return std::nullopt;
}

inline std::optional<double> correlation_time(const std::vector<double>& c_tau, double lag_step) {
  if (c_tau.empty()) return std::nullopt;
  const double threshold = c_tau.front() / 10.0;
  for (std::size_t k = 1; k < c_tau.size(); ++k)
    if (c_tau[k] < threshold) return static_cast<double>(k) * lag_step;
  return std::nullopt;
}

struct CorrelationResult {
  SpatialCorrelation spatial;
  std::vector<TemporalCorrelation> temporal;
  std::vector<Var> degenerate_literals;  // skipped for temporal analysis
  std::vector<double> mean_temporal;     // C(tau) averaged over analyzed literals
  double lag_step = 0.0;
  std::optional<std::uint32_t> correlation_length;
  std::optional<double> correlation_time;
  std::uint32_t diameter = 0;
};

/// Fills the scale fields of `result` from its curves.
inline void correlation_scales(CorrelationResult& result) {
  result.correlation_length = correlation_length(result.spatial.by_distance);
  result.correlation_time = correlation_time(result.mean_temporal, result.lag_step);
}

struct AnalysisOptions {
  TimeRule rule;
  PairAggregate aggregate = PairAggregate::Max;
  std::vector<Var> literals;  // empty: every graph vertex
  double max_lag = 0.0;
};

inline CorrelationResult analyze(const Ensemble& ens, const LiteralGraph& graph, const AnalysisOptions& opt) {
  CorrelationResult res;
  res.diameter = graph.diameter();
  res.spatial = spatial_correlation(ens, graph, opt.rule, opt.aggregate);
  const auto& lits = opt.literals.empty() ? graph.vertices() : opt.literals;
  for (auto v : lits) {
    try {
      res.temporal.push_back(temporal_correlation(ens, v, opt.rule, opt.max_lag));
    } catch (const Error&) {
      res.degenerate_literals.push_back(v);
    }
  }
  if (!res.temporal.empty()) {
    res.lag_step = res.temporal.front().lag_step;
    res.mean_temporal.assign(res.temporal.front().values.size(), 0.0);
    for (const auto& tc : res.temporal)
      for (std::size_t k = 0; k < tc.values.size(); ++k) res.mean_temporal[k] += tc.values[k];
    for (auto& x : res.mean_temporal) x /= static_cast<double>(res.temporal.size());
  }
  correlation_scales(res);
  return res;
}

}  // namespace memflow
