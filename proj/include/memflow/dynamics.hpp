#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "memflow/cnf.hpp"
#include "memflow/error.hpp"

namespace memflow {

struct FlowParams {
  double alpha = 5.0;    // slow-memory rate
  double beta = 20.0;    // fast-memory rate
  double gamma = 0.25;   // fast-memory threshold
  double delta = 0.05;   // slow-memory threshold
  double epsilon = 1e-3; // fast-memory floor
  double zeta = 0.1;     // rigidity weight
  double theta = 0.0;    // noise intensity
  double dt = 0.05;
  double x_l_max = 0.0;  // <= 0 selects 1e4 * clause count
  double v_clamp = 1.0;

  /// Defaults, with the smaller step used for stochastic runs.
  static FlowParams defaults(double theta = 0.0) {
    FlowParams p;
    p.theta = theta;
    p.dt = theta > 0.0 ? 0.01 : 0.05;
    return p;
  }

  double slow_cap(std::size_t clause_count) const {
    return x_l_max > 0.0 ? x_l_max : 1e4 * static_cast<double>(std::max<std::size_t>(clause_count, 1));
  }

  void validate() const {
    auto positive = [](double x, const char* name) {
      if (!(x > 0.0) || !std::isfinite(x)) throw Error(std::string(name) + " must be positive");
    };
    positive(alpha, "alpha");
    positive(beta, "beta");
    positive(epsilon, "epsilon");
    positive(zeta, "zeta");
    positive(dt, "dt");
    positive(v_clamp, "v_clamp");
    if (!(gamma > 0.0 && gamma < 1.0)) throw Error("gamma must lie in (0, 1)");
    if (!(delta > 0.0 && delta < 1.0)) throw Error("delta must lie in (0, 1)");
    if (!(theta >= 0.0) || !std::isfinite(theta)) throw Error("theta must be non-negative");
    if (x_l_max > 0.0 && x_l_max < 1.0) throw Error("x_l_max must be at least 1");
  }

  bool operator==(const FlowParams&) const = default;
};

/// Voltages live in [-v_clamp, v_clamp]; logical 1 is v >= 0.
struct SystemState {
  std::vector<double> v;    // per variable
  std::vector<double> x_s;  // per clause, fast memory in [0, 1]
  std::vector<double> x_l;  // per clause, slow memory in [1, x_l_max]
  double t = 0.0;

  bool operator==(const SystemState&) const = default;
};

struct StateDerivative {
  std::vector<double> v;
  std::vector<double> x_s;
  std::vector<double> x_l;
};

/// Displayed voltage, threshold 1/2 at v = 0.
inline double normalized_voltage(double v, double v_clamp = 1.0) { return 0.5 * (v / v_clamp + 1.0); }

inline bool logical_value(double v) noexcept { return v >= 0.0; }

/// Flattened clause system for the inner loop.
class FlowModel {
public:
  FlowModel(const ClauseSystem& cs, const FlowParams& params) : cs_(&cs), params_(params) {
    params_.validate();
    offsets_.reserve(cs.clauses.size() + 1);
    offsets_.push_back(0);
    for (const auto& c : cs.clauses) {
      for (const auto& l : c) {
        vars_.push_back(l.var);
        pol_.push_back(static_cast<double>(l.polarity));
      }
      offsets_.push_back(static_cast<std::uint32_t>(vars_.size()));
    }
    fixed_ = cs.unit_values();
    x_l_cap_ = params_.slow_cap(cs.clauses.size());
  }

  const ClauseSystem& system() const noexcept { return *cs_; }
  const FlowParams& params() const noexcept { return params_; }
  std::size_t num_vars() const noexcept { return cs_->num_vars; }
  std::size_t num_clauses() const noexcept { return offsets_.size() - 1; }
  double slow_cap() const noexcept { return x_l_cap_; }
  bool is_fixed(Var v) const noexcept { return fixed_[v] >= 0; }
  double fixed_voltage(Var v) const noexcept { return fixed_[v] > 0 ? params_.v_clamp : -params_.v_clamp; }

  /// Clause mismatch 0.5 * min_i (1 - q_i v_i / v_clamp), in [0, 1].
  double clause_mismatch(std::span<const double> v, std::size_t m) const {
    double lo = std::numeric_limits<double>::infinity();
    for (auto k = offsets_[m]; k < offsets_[m + 1]; ++k) lo = std::min(lo, 1.0 - pol_[k] * v[vars_[k]] / params_.v_clamp);
    return 0.5 * lo;
  }

  void check_dimensions(const SystemState& s) const {
    if (s.v.size() != num_vars() || s.x_s.size() != num_clauses() || s.x_l.size() != num_clauses())
      throw Error("state dimensions do not match the clause system");
  }

  /// Flow field. Derivatives of unit-fixed voltages are zero.
  void derivative(const SystemState& s, StateDerivative& out) const {
    check_dimensions(s);
    const double vc = params_.v_clamp;
    out.v.assign(num_vars(), 0.0);
    out.x_s.resize(num_clauses());
    out.x_l.resize(num_clauses());
    for (std::size_t m = 0; m < num_clauses(); ++m) {
      const auto begin = offsets_[m], end = offsets_[m + 1];
      double min1 = std::numeric_limits<double>::infinity();
      double min2 = min1;
      std::uint32_t arg = begin;
      for (auto k = begin; k < end; ++k) {
        const double term = 1.0 - pol_[k] * s.v[vars_[k]] / vc;
        if (term < min1) {
          min2 = min1;
          min1 = term;
          arg = k;
        } else if (term < min2) {
          min2 = term;
        }
      }
      const double mismatch = 0.5 * min1;
      const double xs = s.x_s[m], xl = s.x_l[m];
      const double grad_w = xl * xs;
      const double rigid_w = (1.0 + params_.zeta * xl) * (1.0 - xs);
      for (auto k = begin; k < end; ++k) {
        const auto n = vars_[k];
        const double q = pol_[k];
        const double others = k == arg ? min2 : min1;
        double dv = grad_w * 0.5 * q * others * vc;
        const double term = 1.0 - q * s.v[n] / vc;
        if (term == min1) dv += rigid_w * 0.5 * (q * vc - s.v[n]);
        out.v[n] += dv;
      }
      out.x_s[m] = params_.beta * (xs + params_.epsilon) * (mismatch - params_.gamma);
      out.x_l[m] = params_.alpha * (mismatch - params_.delta);
    }
    for (Var n = 0; n < num_vars(); ++n)
      if (fixed_[n] >= 0) out.v[n] = 0.0;
  }

  StateDerivative derivative(const SystemState& s) const {
    StateDerivative d;
    derivative(s, d);
    return d;
  }

  void clamp(SystemState& s) const {
    const double vc = params_.v_clamp;
    for (Var n = 0; n < num_vars(); ++n)
      s.v[n] = fixed_[n] >= 0 ? fixed_voltage(n) : std::clamp(s.v[n], -vc, vc);
    for (auto& x : s.x_s) x = std::clamp(x, 0.0, 1.0);
    for (auto& x : s.x_l) x = std::clamp(x, 1.0, x_l_cap_);
  }

  /// Sup norm of the derivative restricted to directions not blocked by a bound.
  double effective_speed(const SystemState& s, const StateDerivative& d) const {
    const double vc = params_.v_clamp;
    auto blocked = [](double x, double dx, double lo, double hi) {
      return (x <= lo && dx < 0.0) || (x >= hi && dx > 0.0);
    };
    double sup = 0.0;
    for (Var n = 0; n < num_vars(); ++n)
      if (fixed_[n] < 0 && !blocked(s.v[n], d.v[n], -vc, vc)) sup = std::max(sup, std::abs(d.v[n]));
    for (std::size_t m = 0; m < num_clauses(); ++m) {
      if (!blocked(s.x_s[m], d.x_s[m], 0.0, 1.0)) sup = std::max(sup, std::abs(d.x_s[m]));
      if (!blocked(s.x_l[m], d.x_l[m], 1.0, x_l_cap_)) sup = std::max(sup, std::abs(d.x_l[m]));
    }
    return sup;
  }

  /// Uniform voltages in (-v_clamp, v_clamp), x_s = 0.5, x_l = 1.
  template <class Rng>
  SystemState random_state(Rng& rng) const {
    SystemState s;
    s.v.resize(num_vars());
    std::uniform_real_distribution<double> uni(-params_.v_clamp, params_.v_clamp);
    for (Var n = 0; n < num_vars(); ++n) s.v[n] = fixed_[n] >= 0 ? fixed_voltage(n) : uni(rng);
    s.x_s.assign(num_clauses(), 0.5);
    s.x_l.assign(num_clauses(), 1.0);
    return s;
  }

  /// Euler-Maruyama step: additive noise sqrt(2 theta dt) per free voltage,
  /// forward Euler on the memories, then clamping.
  template <class Rng>
  void step(SystemState& s, Rng& rng, StateDerivative& scratch) const {
    derivative(s, scratch);
    const double dt = params_.dt;
    for (Var n = 0; n < num_vars(); ++n)
      if (!std::isfinite(scratch.v[n])) throw Error("non-finite voltage derivative at t=" + std::to_string(s.t));
    for (std::size_t m = 0; m < num_clauses(); ++m)
      if (!std::isfinite(scratch.x_s[m]) || !std::isfinite(scratch.x_l[m]))
        throw Error("non-finite memory derivative at t=" + std::to_string(s.t));

    for (Var n = 0; n < num_vars(); ++n) s.v[n] += scratch.v[n] * dt;
    if (params_.theta > 0.0) {
      const double amp = std::sqrt(2.0 * params_.theta * dt);
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (Var n = 0; n < num_vars(); ++n)
        if (fixed_[n] < 0) s.v[n] += amp * gauss(rng);
    }
    for (std::size_t m = 0; m < num_clauses(); ++m) {
      s.x_s[m] += scratch.x_s[m] * dt;
      s.x_l[m] += scratch.x_l[m] * dt;
    }
    clamp(s);
    s.t += dt;
  }

  /// Rounded assignment (v = 0 rounds to 1) with units merged in; returned
  /// only when it satisfies every clause and unit.
  std::optional<std::vector<bool>> check_solution(const SystemState& s) const {
    if (s.v.size() != num_vars()) return std::nullopt;
    std::vector<bool> a(num_vars());
    for (Var n = 0; n < num_vars(); ++n) a[n] = fixed_[n] >= 0 ? fixed_[n] > 0 : logical_value(s.v[n]);
    if (!cs_->satisfied_by(a)) return std::nullopt;
    return a;
  }

  /// Cheaper rounded-satisfaction test used inside the integration loop.
  bool rounded_satisfied(std::span<const double> v) const {
    for (std::size_t m = 0; m < num_clauses(); ++m) {
      bool ok = false;
      for (auto k = offsets_[m]; k < offsets_[m + 1]; ++k) {
        const auto n = vars_[k];
        const bool val = fixed_[n] >= 0 ? fixed_[n] > 0 : logical_value(v[n]);
        if (val == (pol_[k] > 0)) {
          ok = true;
          break;
        }
      }
      if (!ok) return false;
    }
    return true;
  }

private:
  const ClauseSystem* cs_;
  FlowParams params_;
  std::vector<std::uint32_t> offsets_;
  std::vector<Var> vars_;
  std::vector<double> pol_;
  std::vector<int> fixed_;
  double x_l_cap_ = 1.0;
};

inline StateDerivative flow_field(const SystemState& state, const ClauseSystem& cs, const FlowParams& p) {
  return FlowModel(cs, p).derivative(state);
}

template <class Rng>
SystemState step(SystemState state, const ClauseSystem& cs, const FlowParams& p, Rng& rng) {
  const FlowModel model(cs, p);
  model.check_dimensions(state);
  StateDerivative scratch;
  model.step(state, rng, scratch);
  return state;
}

inline std::optional<std::vector<bool>> check_solution(const SystemState& state, const ClauseSystem& cs) {
  std::vector<bool> a(cs.num_vars);
  if (state.v.size() != cs.num_vars) return std::nullopt;
  for (Var n = 0; n < cs.num_vars; ++n) a[n] = logical_value(state.v[n]);
  for (const auto& u : cs.units) a[u.var] = u.polarity > 0;
  if (!cs.satisfied_by(a)) return std::nullopt;
  return a;
}

}  // namespace memflow
