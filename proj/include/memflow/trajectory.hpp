#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "memflow/dynamics.hpp"

namespace memflow {

enum class Termination { Solved, MaxTime, FixedPointNonSolution };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::Solved: return "solved";
    case Termination::MaxTime: return "max_time";
    case Termination::FixedPointNonSolution: return "fixed_point_non_solution";
  }
  return "?";
}

struct CrossingEvent {
  double t;
  Var var;
  int direction;   // +1 upward through v = 0, -1 downward
  int slope_sign;  // sign of dv/dt over the step

  bool operator==(const CrossingEvent&) const = default;
};

struct InstantonPhase {
  double t_start;
  double t_end;
  std::size_t crossing_count;

  double mid_time() const noexcept { return 0.5 * (t_start + t_end); }
  double duration() const noexcept { return t_end - t_start; }
};

/// Voltage snapshots every `record_stride` steps, plus the final state.
struct Trajectory {
  std::size_t num_vars = 0;
  double sample_interval = 0.0;
  std::vector<double> times;
  std::vector<double> voltages;  // times.size() x num_vars, row-major
  std::vector<CrossingEvent> crossings;
  Termination termination = Termination::MaxTime;
  std::optional<std::vector<bool>> assignment;
  SystemState final_state;
  std::uint64_t steps = 0;

  std::size_t sample_count() const noexcept { return times.size(); }

  std::span<const double> sample(std::size_t i) const {
    return {voltages.data() + i * num_vars, num_vars};
  }

  /// Index of the sample nearest to time t (clamped to the recorded range).
  std::size_t nearest_sample(double t) const {
    if (times.empty()) throw Error("empty trajectory");
    auto it = std::lower_bound(times.begin(), times.end(), t);
    if (it == times.end()) return times.size() - 1;
    std::size_t i = static_cast<std::size_t>(it - times.begin());
    if (i > 0 && (t - times[i - 1]) <= (times[i] - t)) --i;
    return i;
  }

  /// Voltage of `var` at time t; past the end the final sample is held.
  double voltage_at(Var var, double t) const { return sample(nearest_sample(t))[var]; }
};

struct IntegrateOptions {
  double max_time = 1000.0;
  std::size_t record_stride = 10;
  double fixed_point_tol = 1e-6;
};

inline std::mt19937_64 make_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x6d656d66u};
  return std::mt19937_64(seq);
}

/// splitmix64, used to derive per-run seeds from a base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

template <class Rng>
Trajectory integrate(SystemState state, const FlowModel& model, const IntegrateOptions& opt, Rng& rng) {
  if (opt.max_time < 0.0) throw Error("max_time must be non-negative");
  if (opt.record_stride == 0) throw Error("record_stride must be positive");
  model.check_dimensions(state);
  model.clamp(state);

  const std::size_t nv = model.num_vars();
  const double dt = model.params().dt;
  const double t0 = state.t;
  Trajectory traj;
  traj.num_vars = nv;
  traj.sample_interval = dt * static_cast<double>(opt.record_stride);
  auto record = [&](const SystemState& s) {
    if (!traj.times.empty() && traj.times.back() >= s.t) return;
    traj.times.push_back(s.t);
    traj.voltages.insert(traj.voltages.end(), s.v.begin(), s.v.end());
  };
  record(state);

  auto finish = [&](Termination term) {
    record(state);
    traj.termination = term;
    if (term == Termination::Solved) traj.assignment = model.check_solution(state);
    traj.final_state = state;
    return traj;
  };

  if (model.rounded_satisfied(state.v)) return finish(Termination::Solved);
  const auto max_steps = static_cast<std::uint64_t>(std::floor(opt.max_time / dt + 1e-9));

  StateDerivative scratch;
  std::vector<double> prev(nv);
  while (traj.steps < max_steps) {
    prev = state.v;
    model.step(state, rng, scratch);
    ++traj.steps;
    state.t = t0 + static_cast<double>(traj.steps) * dt;

    const auto first_new = traj.crossings.size();
    for (Var n = 0; n < nv; ++n) {
      const bool before = logical_value(prev[n]), after = logical_value(state.v[n]);
      if (before == after) continue;
      const double dv = state.v[n] - prev[n];
      const double frac = dv != 0.0 ? std::clamp(-prev[n] / dv, 0.0, 1.0) : 1.0;
      const int dir = after ? 1 : -1;
      traj.crossings.push_back({state.t - dt + frac * dt, n, dir, dv > 0.0 ? 1 : (dv < 0.0 ? -1 : 0)});
    }
    std::stable_sort(traj.crossings.begin() + static_cast<std::ptrdiff_t>(first_new), traj.crossings.end(),
                     [](const CrossingEvent& a, const CrossingEvent& b) { return a.t < b.t; });
    if (traj.steps % opt.record_stride == 0) record(state);

    if (model.rounded_satisfied(state.v)) return finish(Termination::Solved);
    if (model.effective_speed(state, scratch) < opt.fixed_point_tol)
      return finish(Termination::FixedPointNonSolution);
  }
  return finish(Termination::MaxTime);
}

inline Trajectory integrate(const SystemState& initial, const ClauseSystem& cs, const FlowParams& p,
                            double max_time, std::size_t record_stride, std::uint64_t noise_seed = 0) {
  const FlowModel model(cs, p);
  auto rng = make_rng(noise_seed);
  return integrate(initial, model, IntegrateOptions{max_time, record_stride}, rng);
}

/// Initial state and noise stream both drawn from one seed.
inline Trajectory run_seeded(const FlowModel& model, const IntegrateOptions& opt, std::uint64_t seed) {
  auto rng = make_rng(seed);
  auto init = model.random_state(rng);
  return integrate(std::move(init), model, opt, rng);
}

/// Phase spanning the first to the last voltage zero crossing.
inline std::optional<InstantonPhase> detect_instanton_phase(const Trajectory& traj) {
  if (traj.times.empty()) throw Error("trajectory has no samples");
  if (traj.crossings.empty()) return std::nullopt;
  return InstantonPhase{traj.crossings.front().t, traj.crossings.back().t, traj.crossings.size()};
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

/// Header `t,<name>...`; values are normalized voltages u = (v + 1) / 2.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj, const std::vector<Var>& vars,
                                 const std::vector<std::string>& names, double v_clamp = 1.0) {
  os << 't';
  for (auto v : vars) os << ',' << names.at(v);
  os << '\n';
  for (std::size_t i = 0; i < traj.sample_count(); ++i) {
    os << format_double(traj.times[i]);
    const auto row = traj.sample(i);
    for (auto v : vars) os << ',' << format_double(normalized_voltage(row[v], v_clamp));
    os << '\n';
  }
}

inline void write_crossings_csv(std::ostream& os, const Trajectory& traj, const std::vector<std::string>& names) {
  os << "t,var,name,direction,slope_sign\n";
  for (const auto& e : traj.crossings)
    os << format_double(e.t) << ',' << e.var << ',' << names.at(e.var) << ',' << e.direction << ',' << e.slope_sign
       << '\n';
}

}  // namespace memflow
