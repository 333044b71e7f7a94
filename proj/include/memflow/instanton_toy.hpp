#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "memflow/error.hpp"

namespace memflow::toy {

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 3, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3>;

enum class FlowKind { LogisticProduct, SpiralSink, Polynomial };
enum class Stability { Sink, Source, Saddle, Degenerate };

inline const char* to_string(Stability s) {
  switch (s) {
    case Stability::Sink: return "sink";
    case Stability::Source: return "source";
    case Stability::Saddle: return "saddle";
    case Stability::Degenerate: return "degenerate";
  }
  return "?";
}

struct CriticalPoint {
  Vec x;
  Stability stability;
  Eigen::VectorXcd eigenvalues;
  unsigned unstable_dims;
};

/// c * prod_k x_k^powers[k]
struct Monomial {
  double coeff;
  std::vector<unsigned> powers;
};

/// Low-dimensional vector field with its classified critical points.
///
///   LogisticProduct: dx_i/dt = x_i (1 - x_i), repeller at 0, sink at 1.
///   SpiralSink:      2D logistic part plus w * b(|x - 1|^2) * J (x - 1) with
///                    J = [[0,-1],[1,0]] and the bump b(s) = (1 - s/R^2)^2 for
///                    s < R^2, else 0. Outside the disk of radius R < 1 around
///                    the sink the flow is the logistic product. The rotation is
///                    orthogonal to x - 1, so |x - 1| never grows in the positive
///                    quadrant. Sink Jacobian [[-1, -w], [w, -1]], eigenvalues
///                    -1 +- i w.
///   Polynomial:      user-supplied monomials per component.
class ToyFlow {
public:
  static ToyFlow logistic(unsigned dim) {
    if (dim < 1 || dim > 3) throw Error("logistic toy flow supports 1 to 3 dimensions");
    ToyFlow f(FlowKind::LogisticProduct, dim);
    for (unsigned mask = 0; mask < (1u << dim); ++mask) {
      Vec x(dim);
      for (unsigned i = 0; i < dim; ++i) x[i] = (mask >> i) & 1u;
      f.add_critical_point(x);
    }
    return f;
  }

  static ToyFlow spiral(double omega = 60.0, double radius = 0.9) {
    if (!(omega > 0.0)) throw Error("spiral rotation rate must be positive");
    if (!(radius > 0.0 && radius < 1.0)) throw Error("spiral radius must lie in (0, 1)");
    ToyFlow f(FlowKind::SpiralSink, 2);
    f.omega_ = omega;
    f.radius_ = radius;
    for (auto [a, b] : {std::pair{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}}) f.add_critical_point(Vec{{a, b}});
    return f;
  }

  /// Candidate critical points are verified (|F| < 1e-10) and classified.
  static ToyFlow polynomial(unsigned dim, std::vector<std::vector<Monomial>> components,
                            const std::vector<Vec>& critical_points) {
    if (dim < 1 || dim > 3) throw Error("toy flows support 1 to 3 dimensions");
    if (components.size() != dim) throw Error("need one monomial list per component");
    for (const auto& comp : components)
      for (const auto& m : comp)
        if (m.powers.size() != dim) throw Error("monomial power vector has wrong length");
    ToyFlow f(FlowKind::Polynomial, dim);
    f.poly_ = std::move(components);
    for (const auto& x : critical_points) f.add_critical_point(x);
    return f;
  }

  FlowKind kind() const noexcept { return kind_; }
  unsigned dim() const noexcept { return dim_; }
  double omega() const noexcept { return omega_; }
  double radius() const noexcept { return radius_; }
  const std::vector<CriticalPoint>& critical_points() const noexcept { return crit_; }

  Vec operator()(const Vec& x) const {
    Vec out(dim_);
    switch (kind_) {
      case FlowKind::LogisticProduct:
        for (unsigned i = 0; i < dim_; ++i) out[i] = x[i] * (1.0 - x[i]);
        break;
      case FlowKind::SpiralSink: {
        const double y0 = x[0] - 1.0, y1 = x[1] - 1.0;
        const double w = omega_ * bump(y0 * y0 + y1 * y1);
        out[0] = x[0] * (1.0 - x[0]) - w * y1;
        out[1] = x[1] * (1.0 - x[1]) + w * y0;
        break;
      }
      case FlowKind::Polynomial:
        for (unsigned i = 0; i < dim_; ++i) {
          double s = 0.0;
          for (const auto& m : poly_[i]) s += m.coeff * monomial(m.powers, x, dim_);
          out[i] = s;
        }
        break;
    }
    return out;
  }

  Mat jacobian(const Vec& x) const {
    Mat J = Mat::Zero(dim_, dim_);
    switch (kind_) {
      case FlowKind::LogisticProduct:
        for (unsigned i = 0; i < dim_; ++i) J(i, i) = 1.0 - 2.0 * x[i];
        break;
      case FlowKind::SpiralSink: {
        const double y0 = x[0] - 1.0, y1 = x[1] - 1.0;
        const double s = y0 * y0 + y1 * y1;
        const double b = bump(s);
        const double db = bump_slope(s);  // d b / d s
        // d/dx [w b(s) J y] = w (b J + (J y)(2 db y)^T)
        J(0, 0) = 1.0 - 2.0 * x[0] + omega_ * (-y1) * 2.0 * db * y0;
        J(0, 1) = -omega_ * b + omega_ * (-y1) * 2.0 * db * y1;
        J(1, 0) = omega_ * b + omega_ * y0 * 2.0 * db * y0;
        J(1, 1) = 1.0 - 2.0 * x[1] + omega_ * y0 * 2.0 * db * y1;
        break;
      }
      case FlowKind::Polynomial:
        for (unsigned i = 0; i < dim_; ++i)
          for (const auto& m : poly_[i])
            for (unsigned k = 0; k < dim_; ++k) {
              if (m.powers[k] == 0) continue;
              auto p = m.powers;
              --p[k];
              J(i, k) += m.coeff * m.powers[k] * monomial(p, x, dim_);
            }
        break;
    }
    return J;
  }

  /// The unique sink, and the unique critical point with the most unstable
  /// directions. Throws if either is ambiguous.
  std::pair<const CriticalPoint*, const CriticalPoint*> endpoints() const {
    const CriticalPoint* sink = nullptr;
    const CriticalPoint* start = nullptr;
    bool start_tied = false;
    for (const auto& c : crit_) {
      if (c.stability == Stability::Sink) {
        if (sink) throw Error("toy flow has more than one sink");
        sink = &c;
      }
      if (c.stability == Stability::Degenerate || c.unstable_dims == 0) continue;
      if (!start || c.unstable_dims > start->unstable_dims) {
        start = &c;
        start_tied = false;
      } else if (c.unstable_dims == start->unstable_dims) {
        start_tied = true;
      }
    }
    if (!sink) throw Error("toy flow has no sink");
    if (!start || start_tied) throw Error("toy flow has no unique repeller/saddle start");
    return {start, sink};
  }

private:
  ToyFlow(FlowKind kind, unsigned dim) : kind_(kind), dim_(dim) {}

  double bump(double s) const {
    const double u = 1.0 - s / (radius_ * radius_);
    return u > 0.0 ? u * u : 0.0;
  }

  double bump_slope(double s) const {
    const double r2 = radius_ * radius_;
    const double u = 1.0 - s / r2;
    return u > 0.0 ? -2.0 * u / r2 : 0.0;
  }

  static double monomial(const std::vector<unsigned>& powers, const Vec& x, unsigned dim) {
    double v = 1.0;
    for (unsigned k = 0; k < dim; ++k)
      for (unsigned p = 0; p < powers[k]; ++p) v *= x[k];
    return v;
  }

  void add_critical_point(const Vec& x) {
    if (x.size() != dim_) throw Error("critical point has wrong dimension");
    if ((*this)(x).norm() >= 1e-10) throw Error("listed critical point is not a zero of the flow");
    Eigen::EigenSolver<Mat> es(jacobian(x), false);
    CriticalPoint c{x, Stability::Degenerate, es.eigenvalues(), 0};
    unsigned stable = 0;
    for (Eigen::Index i = 0; i < c.eigenvalues.size(); ++i) {
      const double re = c.eigenvalues[i].real();
      if (re > 1e-12) ++c.unstable_dims;
      else if (re < -1e-12) ++stable;
    }
    if (stable + c.unstable_dims == dim_) {
      c.stability = c.unstable_dims == 0 ? Stability::Sink
                    : stable == 0        ? Stability::Source
                                         : Stability::Saddle;
    }
    crit_.push_back(std::move(c));
  }

  FlowKind kind_;
  unsigned dim_;
  double omega_ = 0.0;
  double radius_ = 0.9;
  std::vector<std::vector<Monomial>> poly_;
  std::vector<CriticalPoint> crit_;
};

/// Fourth-order Runge-Kutta from t=0, stopping exactly at each requested
/// time (ascending). Returns one state per requested time.
inline std::vector<Vec> rk4_at(const ToyFlow& f, Vec x, const std::vector<double>& times, double h) {
  std::vector<Vec> out;
  out.reserve(times.size());
  double t = 0.0;
  for (double target : times) {
    if (target < t) throw Error("rk4_at expects ascending times");
    const double span = target - t;
    const auto n = static_cast<long>(std::ceil(span / h - 1e-9));
    const double step = n > 0 ? span / static_cast<double>(n) : 0.0;
    for (long i = 0; i < n; ++i) {
      const Vec k1 = f(x);
      const Vec k2 = f(x + 0.5 * step * k1);
      const Vec k3 = f(x + 0.5 * step * k2);
      const Vec k4 = f(x + step * k3);
      x += (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    t = target;
    out.push_back(x);
  }
  return out;
}

struct ModuliGrid {
  double lo = -6.0;
  double hi = 0.0;
  unsigned points = 61;  // per moduli dimension

  double spacing() const { return (hi - lo) / static_cast<double>(points - 1); }
  double at(unsigned i) const { return lo + spacing() * static_cast<double>(i); }
};

struct FamilyOptions {
  ModuliGrid grid;
  double seed_radius = 1e-4;
  double step = 0.01;
  double horizon = 80.0;
  double converge_tol = 1e-6;
};

/// Trajectories leaving the start point along its unstable eigendirections:
/// x(0; sigma) = x_b + r * sum_j exp(sigma_j) u_j. Shifting every sigma_j by
/// s is, to leading order, a time shift of s for a node-like repeller.
class InstantonFamily {
public:
  InstantonFamily(ToyFlow flow, const FamilyOptions& opt) : flow_(std::move(flow)), opt_(opt) {
    if (opt_.grid.points < 2 || !(opt_.grid.hi > opt_.grid.lo)) throw Error("moduli grid needs >= 2 points");
    const auto [start, end] = flow_.endpoints();
    start_ = start->x;
    end_ = end->x;
    Eigen::EigenSolver<Mat> es(flow_.jacobian(start_));
    std::vector<std::pair<Eigen::Index, Vec>> dirs;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
      const auto lambda = es.eigenvalues()[i];
      if (lambda.real() <= 1e-12) continue;
      if (std::abs(lambda.imag()) > 1e-12) throw Error("complex unstable eigenvalues are not supported");
      Vec u = es.eigenvectors().col(i).real().normalized();
      Eigen::Index arg = 0;
      u.cwiseAbs().maxCoeff(&arg);
      if (u[arg] < 0) u = -u;
      dirs.emplace_back(arg, u);
    }
    std::stable_sort(dirs.begin(), dirs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    unstable_ = Mat(flow_.dim(), static_cast<Eigen::Index>(dirs.size()));
    for (std::size_t j = 0; j < dirs.size(); ++j) unstable_.col(static_cast<Eigen::Index>(j)) = dirs[j].second;
    verify_convergence();
  }

  const ToyFlow& flow() const noexcept { return flow_; }
  const FamilyOptions& options() const noexcept { return opt_; }
  unsigned moduli_dim() const noexcept { return static_cast<unsigned>(unstable_.cols()); }
  const Vec& start() const noexcept { return start_; }
  const Vec& end() const noexcept { return end_; }
  const Mat& unstable_directions() const noexcept { return unstable_; }

  Vec seed(const Vec& sigma) const {
    Vec x = start_;
    for (Eigen::Index j = 0; j < unstable_.cols(); ++j) x += opt_.seed_radius * std::exp(sigma[j]) * unstable_.col(j);
    return x;
  }

  /// x_cl at each of the given (ascending) times.
  std::vector<Vec> states(const Vec& sigma, const std::vector<double>& times) const {
    return rk4_at(flow_, seed(sigma), times, opt_.step);
  }

  Vec state(const Vec& sigma, double t) const { return states(sigma, {t}).front(); }

  /// Grid point index -> sigma.
  Vec grid_sigma(std::uint64_t flat) const {
    Vec s(moduli_dim());
    for (unsigned j = 0; j < moduli_dim(); ++j) {
      s[j] = opt_.grid.at(static_cast<unsigned>(flat % opt_.grid.points));
      flat /= opt_.grid.points;
    }
    return s;
  }

  std::uint64_t grid_size() const {
    std::uint64_t n = 1;
    for (unsigned j = 0; j < moduli_dim(); ++j) n *= opt_.grid.points;
    return n;
  }

  /// Time at which the trajectory first enters the converge_tol ball around
  /// the end point; nullopt if not within the horizon.
  std::optional<double> convergence_time(const Vec& sigma) const {
    Vec x = seed(sigma);
    const double h = opt_.step;
    const auto n = static_cast<long>(std::ceil(opt_.horizon / h));
    for (long i = 1; i <= n; ++i) {
      x = rk4_at(flow_, x, {h}, h).front();
      if ((x - end_).norm() < opt_.converge_tol) return h * static_cast<double>(i);
    }
    return std::nullopt;
  }

private:
  void verify_convergence() const {
    // Corners of the moduli box are the extreme members of the family.
    const unsigned m = moduli_dim();
    for (unsigned mask = 0; mask < (1u << m); ++mask) {
      Vec s(m);
      for (unsigned j = 0; j < m; ++j) s[j] = (mask >> j) & 1u ? opt_.grid.hi : opt_.grid.lo;
      if (!convergence_time(s))
        throw Error("family member does not converge to the sink within the horizon; increase horizon");
    }
  }

  ToyFlow flow_;
  FamilyOptions opt_;
  Vec start_, end_;
  Mat unstable_;
};

inline InstantonFamily build_instanton_family(ToyFlow flow, const FamilyOptions& opt = {}) {
  return InstantonFamily(std::move(flow), opt);
}

// ---------------------------------------------------------------------------
// Intersection number

struct Observable {
  unsigned coordinate;
  double time;
};

struct ModuliCrossing {
  Vec sigma;
  double det;
  int sign;
};

struct IntersectionResult {
  std::vector<ModuliCrossing> crossings;
  int signed_sum = 0;
  bool near_boundary = false;  // a crossing lies within one grid cell of the moduli box edge

  std::size_t raw_count() const noexcept { return crossings.size(); }
};

class TangencyError : public Error {
public:
  using Error::Error;
};

inline constexpr double kThreshold = 0.5;

/// States of every moduli grid point at a fixed set of times, integrated once.
class GridCache {
public:
  GridCache(const InstantonFamily& fam, std::vector<double> times) : times_(std::move(times)) {
    std::sort(times_.begin(), times_.end());
    times_.erase(std::unique(times_.begin(), times_.end()), times_.end());
    const auto n = fam.grid_size();
    states_.reserve(n * times_.size());
    for (std::uint64_t g = 0; g < n; ++g)
      for (auto& x : fam.states(fam.grid_sigma(g), times_)) states_.push_back(std::move(x));
  }

  bool has(double t) const { return std::binary_search(times_.begin(), times_.end(), t); }

  const Vec& at(std::uint64_t grid_point, double t) const {
    const auto it = std::lower_bound(times_.begin(), times_.end(), t);
    if (it == times_.end() || *it != t) throw Error("time not cached");
    return states_[grid_point * times_.size() + static_cast<std::size_t>(it - times_.begin())];
  }

private:
  std::vector<double> times_;
  std::vector<Vec> states_;
};

namespace detail {

/// Residual x^{alpha_i}(t_i, sigma) - 1/2 for every observable.
inline Vec residual(const InstantonFamily& fam, const std::vector<Observable>& obs, const Vec& sigma) {
  std::vector<std::size_t> order(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return obs[a].time < obs[b].time; });
  std::vector<double> times;
  for (auto i : order) times.push_back(obs[i].time);
  const auto xs = fam.states(sigma, times);
  Vec r(static_cast<Eigen::Index>(obs.size()));
  for (std::size_t k = 0; k < order.size(); ++k) r[order[k]] = xs[k][obs[order[k]].coordinate] - kThreshold;
  return r;
}

inline Mat fd_jacobian(const InstantonFamily& fam, const std::vector<Observable>& obs, const Vec& sigma, double h) {
  const auto m = sigma.size();
  Mat J(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    Vec plus = sigma, minus = sigma;
    plus[j] += h;
    minus[j] -= h;
    J.col(j) = (residual(fam, obs, plus) - residual(fam, obs, minus)) / (2.0 * h);
  }
  return J;
}

inline std::vector<Vec> grid_residuals(const InstantonFamily& fam, const std::vector<Observable>& obs,
                                       const GridCache* cache) {
  const auto total = fam.grid_size();
  std::vector<Vec> values(total);
  bool cached = cache != nullptr;
  for (const auto& o : obs) cached = cached && cache->has(o.time);
  for (std::uint64_t g = 0; g < total; ++g) {
    if (!cached) {
      values[g] = residual(fam, obs, fam.grid_sigma(g));
      continue;
    }
    Vec r(static_cast<Eigen::Index>(obs.size()));
    for (std::size_t i = 0; i < obs.size(); ++i) r[static_cast<Eigen::Index>(i)] = cache->at(g, obs[i].time)[obs[i].coordinate] - kThreshold;
    values[g] = std::move(r);
  }
  return values;
}

/// Newton iteration; nullopt if it leaves `box_lo..box_hi` or stalls.
inline std::optional<Vec> newton(const InstantonFamily& fam, const std::vector<Observable>& obs, Vec s,
                                 const Vec& box_lo, const Vec& box_hi, double fd_step) {
  for (int it = 0; it < 50; ++it) {
    const Vec r = residual(fam, obs, s);
    if (r.lpNorm<Eigen::Infinity>() < 1e-13) return s;
    const Vec delta = fd_jacobian(fam, obs, s, fd_step).fullPivLu().solve(r);
    if (!delta.allFinite()) return std::nullopt;
    s -= delta;
    if ((s.array() < box_lo.array()).any() || (s.array() > box_hi.array()).any()) return std::nullopt;
    if (delta.lpNorm<Eigen::Infinity>() < 1e-12) return s;
  }
  return std::nullopt;
}

inline std::vector<Vec> roots_1d(const InstantonFamily& fam, const std::vector<Observable>& obs,
                                 const std::vector<Vec>& values) {
  const auto& grid = fam.options().grid;
  const unsigned P = grid.points;
  std::vector<Vec> roots;
  for (unsigned i = 0; i < P; ++i) {
    if (values[i][0] == 0.0) roots.push_back(Vec::Constant(1, grid.at(i)));
    if (i + 1 == P) break;
    double a = grid.at(i), b = grid.at(i + 1);
    double fa = values[i][0];
    const double fb = values[i + 1][0];
    if (fa == 0.0 || fb == 0.0 || (fa < 0.0) == (fb < 0.0)) continue;
    while (b - a > 1e-10) {
      const double mid = 0.5 * (a + b);
      const double fm = residual(fam, obs, Vec::Constant(1, mid))[0];
      if (fm == 0.0) {
        a = b = mid;
        break;
      }
      if ((fm < 0.0) == (fa < 0.0)) {
        a = mid;
        fa = fm;
      } else {
        b = mid;
      }
    }
    roots.push_back(Vec::Constant(1, 0.5 * (a + b)));
  }
  return roots;
}

/// Two moduli: trace the zero contour of the second residual through the grid
/// cells (marching squares), then bisect sign changes of the first residual
/// along each contour segment. Points on the segment are projected back onto
/// the contour along the segment normal before evaluating.
inline std::vector<Vec> roots_2d(const InstantonFamily& fam, const std::vector<Observable>& obs,
                                 const std::vector<Vec>& values, double fd_step) {
  const auto& grid = fam.options().grid;
  const unsigned P = grid.points;
  const double h = grid.spacing();
  auto idx = [P](unsigned i, unsigned j) { return static_cast<std::uint64_t>(i) + static_cast<std::uint64_t>(j) * P; };
  auto positive = [](double x) { return x >= 0.0; };

  // Contour point on a grid edge by linear interpolation of the second residual.
  struct EdgePoint {
    Vec sigma;
    double f1;
  };
  auto edge_point = [&](std::uint64_t a, std::uint64_t b, const Vec& sa, const Vec& sb) {
    const double ga = values[a][1], gb = values[b][1];
    const double u = ga / (ga - gb);
    return EdgePoint{sa + u * (sb - sa), values[a][0] + u * (values[b][0] - values[a][0])};
  };

  auto project = [&](const Vec& p, const Vec& normal) -> std::optional<Vec> {
    // Solve f2(p + lambda * normal) = 0 by secant iteration.
    double l0 = 0.0, l1 = 0.05 * h;
    double g0 = residual(fam, obs, p)[1];
    double g1 = residual(fam, obs, p + l1 * normal)[1];
    for (int it = 0; it < 60; ++it) {
      if (std::abs(g0) < 1e-14) return p + l0 * normal;
      if (g1 == g0) return std::nullopt;
      const double l2 = l1 - g1 * (l1 - l0) / (g1 - g0);
      if (std::abs(l2) > 2.0 * h) return std::nullopt;
      l0 = l1;
      g0 = g1;
      l1 = l2;
      g1 = residual(fam, obs, p + l1 * normal)[1];
      if (std::abs(l1 - l0) < 1e-13) return p + l1 * normal;
    }
    return std::nullopt;
  };

  std::vector<Vec> roots;
  auto refine = [&](const EdgePoint& a, const EdgePoint& b, const Vec& cell_lo, const Vec& cell_hi) {
    const Vec dir = b.sigma - a.sigma;
    Vec normal(2);
    normal << -dir[1], dir[0];
    if (normal.norm() == 0.0) return;
    normal.normalize();
    auto f1_at = [&](double u) -> std::optional<std::pair<double, Vec>> {
      auto p = project(a.sigma + u * dir, normal);
      if (!p) return std::nullopt;
      return std::pair{residual(fam, obs, *p)[0], *p};
    };
    double lo = 0.0, hi = 1.0;
    auto flo = f1_at(lo);
    auto fhi = f1_at(hi);
    std::optional<Vec> found;
    if (flo && fhi && (flo->first < 0.0) != (fhi->first < 0.0)) {
      Vec best = flo->second;
      while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        auto fm = f1_at(mid);
        if (!fm) break;
        best = fm->second;
        if ((fm->first < 0.0) == (flo->first < 0.0)) {
          lo = mid;
          flo = fm;
        } else {
          hi = mid;
        }
      }
      found = best;
    }
    // Polish (or recover when projection failed) with Newton inside a padded cell.
    const Vec start = found ? *found : Vec(0.5 * (a.sigma + b.sigma));
    const Vec pad = Vec::Constant(2, 0.5 * h);
    if (auto s = newton(fam, obs, start, cell_lo - pad, cell_hi + pad, fd_step)) found = *s;
    if (!found) return;
    if ((found->array() < cell_lo.array() - 1e-9).any() || (found->array() > cell_hi.array() + 1e-9).any()) return;
    roots.push_back(*found);
  };

  for (unsigned j = 0; j + 1 < P; ++j) {
    for (unsigned i = 0; i + 1 < P; ++i) {
      const std::uint64_t c[4] = {idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)};
      Vec s[4];
      for (int k = 0; k < 4; ++k) s[k] = fam.grid_sigma(c[k]);
      std::vector<EdgePoint> pts;
      for (int k = 0; k < 4; ++k) {
        const int n = (k + 1) % 4;
        if (positive(values[c[k]][1]) != positive(values[c[n]][1])) pts.push_back(edge_point(c[k], c[n], s[k], s[n]));
      }
      if (pts.size() < 2) continue;
      const Vec cell_lo = s[0], cell_hi = s[2];
      if (pts.size() == 2) {
        if (positive(pts[0].f1) != positive(pts[1].f1)) refine(pts[0], pts[1], cell_lo, cell_hi);
        continue;
      }
      // Saddle cell: pair edges by the sign of the cell-centre average.
      double centre = 0.0;
      for (auto k : c) centre += values[k][1];
      const bool centre_pos = positive(centre);
      const bool c0_pos = positive(values[c[0]][1]);
      const int pair_a[2][2] = {{0, 3}, {1, 2}};
      const int pair_b[2][2] = {{0, 1}, {2, 3}};
      const auto& pairing = (centre_pos == c0_pos) ? pair_a : pair_b;
      for (const auto& pr : pairing)
        if (positive(pts[pr[0]].f1) != positive(pts[pr[1]].f1)) refine(pts[pr[0]], pts[pr[1]], cell_lo, cell_hi);
    }
  }
  return roots;
}

/// Three or more moduli: cells whose corners straddle zero in every component,
/// refined by Newton iteration kept inside the cell.
inline std::vector<Vec> roots_nd(const InstantonFamily& fam, const std::vector<Observable>& obs,
                                 const std::vector<Vec>& values, double fd_step) {
  const auto& grid = fam.options().grid;
  const unsigned P = grid.points;
  const unsigned m = fam.moduli_dim();
  std::uint64_t cells = 1;
  for (unsigned j = 0; j < m; ++j) cells *= (P - 1);
  std::vector<Vec> roots;
  for (std::uint64_t c = 0; c < cells; ++c) {
    std::vector<unsigned> base(m);
    auto rem = c;
    for (unsigned j = 0; j < m; ++j) {
      base[j] = static_cast<unsigned>(rem % (P - 1));
      rem /= (P - 1);
    }
    Vec lo_v = Vec::Constant(m, std::numeric_limits<double>::infinity());
    Vec hi_v = -lo_v;
    for (unsigned corner = 0; corner < (1u << m); ++corner) {
      std::uint64_t flat = 0, mul = 1;
      for (unsigned j = 0; j < m; ++j) {
        flat += (base[j] + ((corner >> j) & 1u)) * mul;
        mul *= P;
      }
      lo_v = lo_v.cwiseMin(values[flat]);
      hi_v = hi_v.cwiseMax(values[flat]);
    }
    if ((lo_v.array() > 0.0).any() || (hi_v.array() < 0.0).any()) continue;
    Vec cell_lo(m), cell_hi(m);
    for (unsigned j = 0; j < m; ++j) {
      cell_lo[j] = grid.at(base[j]);
      cell_hi[j] = grid.at(base[j] + 1);
    }
    const Vec pad = Vec::Constant(m, grid.spacing());
    auto s = newton(fam, obs, 0.5 * (cell_lo + cell_hi), cell_lo - pad, cell_hi + pad, fd_step);
    if (!s) continue;
    if ((s->array() < cell_lo.array() - 1e-9).any() || (s->array() > cell_hi.array() + 1e-9).any()) continue;
    roots.push_back(*s);
  }
  return roots;
}

}  // namespace detail

/// Signed count of moduli points where every observed coordinate sits on the
/// threshold at its observation time. Each crossing contributes
/// sign det d x^{alpha_i}(t_i) / d sigma^j (central differences, step =
/// grid spacing / 100). Throws TangencyError when |det| < 1e-8.
inline IntersectionResult intersection_number(const InstantonFamily& fam, const std::vector<Observable>& obs,
                                              const GridCache* cache = nullptr) {
  const unsigned m = fam.moduli_dim();
  if (obs.size() != m) throw Error("need exactly one observable per moduli dimension");
  for (const auto& o : obs) {
    if (o.coordinate >= fam.flow().dim()) throw Error("observable coordinate out of range");
    if (o.time < 0.0) throw Error("observation times must be non-negative");
  }
  const auto& grid = fam.options().grid;
  const double spacing = grid.spacing();
  const double fd_step = spacing / 100.0;

  const auto values = detail::grid_residuals(fam, obs, cache);
  std::vector<Vec> candidates = m == 1   ? detail::roots_1d(fam, obs, values)
                                : m == 2 ? detail::roots_2d(fam, obs, values, fd_step)
                                         : detail::roots_nd(fam, obs, values, fd_step);
  std::vector<Vec> roots;
  for (const auto& s : candidates) {
    bool dup = false;
    for (const auto& r : roots) dup = dup || (r - s).lpNorm<Eigen::Infinity>() < 1e-7;
    if (!dup) roots.push_back(s);
  }

  IntersectionResult out;
  for (const auto& s : roots) {
    const double det = detail::fd_jacobian(fam, obs, s, fd_step).determinant();
    if (std::abs(det) < 1e-8)
      throw TangencyError("crossing tangent to the threshold (|det| = " + std::to_string(std::abs(det)) +
                          "); refine the moduli grid or move the observation time");
    const int sign = det > 0.0 ? 1 : -1;
    out.crossings.push_back({s, det, sign});
    out.signed_sum += sign;
    for (Eigen::Index j = 0; j < s.size(); ++j)
      if (s[j] - grid.lo < spacing || grid.hi - s[j] < spacing) out.near_boundary = true;
  }
  std::sort(out.crossings.begin(), out.crossings.end(), [](const auto& a, const auto& b) {
    return std::lexicographical_compare(a.sigma.data(), a.sigma.data() + a.sigma.size(), b.sigma.data(),
                                        b.sigma.data() + b.sigma.size());
  });
  return out;
}

// ---------------------------------------------------------------------------
// Invariance scan

struct ScanEntry {
  std::vector<Observable> observables;
  std::optional<IntersectionResult> result;
  std::string error;    // tangency or other failure
  std::string warning;  // window-boundary notes
};

struct ScanReport {
  std::vector<ScanEntry> entries;
  std::set<int> values;
  std::set<std::size_t> raw_counts;
  std::size_t errors = 0;

  bool invariant() const { return values.size() == 1 && errors == 0; }
};

inline ScanReport invariance_scan(const InstantonFamily& fam, const std::vector<unsigned>& coordinates,
                                  const std::vector<std::vector<double>>& time_tuples) {
  ScanReport report;
  std::vector<double> all_times;
  for (const auto& times : time_tuples) all_times.insert(all_times.end(), times.begin(), times.end());
  const GridCache cache(fam, all_times);
  for (const auto& times : time_tuples) {
    ScanEntry e;
    if (times.size() != coordinates.size()) {
      e.error = "time tuple size does not match the number of observed coordinates";
      ++report.errors;
      report.entries.push_back(std::move(e));
      continue;
    }
    for (std::size_t i = 0; i < times.size(); ++i) e.observables.push_back({coordinates[i], times[i]});
    try {
      auto r = intersection_number(fam, e.observables, &cache);
      if (r.raw_count() == 0)
        e.warning = "no threshold crossings: observation time outside the family's convergence window";
      else if (r.near_boundary)
        e.warning = "crossing within one grid cell of the moduli boundary: observation time near the window edge";
      report.values.insert(r.signed_sum);
      report.raw_counts.insert(r.raw_count());
      e.result = std::move(r);
    } catch (const Error& err) {
      e.error = err.what();
      ++report.errors;
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

/// Structured text: one block per time tuple.
inline void write_report(std::ostream& os, const ScanReport& report) {
  os << "# intersection-number scan\n";
  for (const auto& e : report.entries) {
    os << "times";
    for (const auto& o : e.observables) os << ' ' << o.time;
    os << '\n';
    if (e.result) {
      for (const auto& c : e.result->crossings) {
        os << "  crossing sigma";
        for (Eigen::Index j = 0; j < c.sigma.size(); ++j) os << ' ' << c.sigma[j];
        os << " sign " << (c.sign > 0 ? "+1" : "-1") << '\n';
      }
      os << "  raw_count " << e.result->raw_count() << '\n';
      os << "  signed_sum " << e.result->signed_sum << '\n';
    }
    if (!e.warning.empty()) os << "  warning " << e.warning << '\n';
    if (!e.error.empty()) os << "  error " << e.error << '\n';
  }
  os << "values";
  for (int v : report.values) os << ' ' << v;
  os << "\nraw_counts";
  for (auto c : report.raw_counts) os << ' ' << c;
  os << "\nerrors " << report.errors << '\n';
}

/// CSV `sigma_1..sigma_m,t,x_1..x_D` for each listed moduli point.
inline void write_family_csv(std::ostream& os, const InstantonFamily& fam, const std::vector<Vec>& sigmas,
                             double t_end, double sample_dt) {
  const unsigned m = fam.moduli_dim(), D = fam.flow().dim();
  for (unsigned j = 0; j < m; ++j) os << "sigma_" << (j + 1) << ',';
  os << 't';
  for (unsigned i = 0; i < D; ++i) os << ",x_" << (i + 1);
  os << '\n';
  std::vector<double> times;
  for (double t = 0.0; t <= t_end + 1e-9; t += sample_dt) times.push_back(t);
  char buf[32];
  for (const auto& s : sigmas) {
    const auto xs = fam.states(s, times);
    for (std::size_t k = 0; k < times.size(); ++k) {
      for (unsigned j = 0; j < m; ++j) {
        std::snprintf(buf, sizeof buf, "%.10g", s[j]);
        os << buf << ',';
      }
      std::snprintf(buf, sizeof buf, "%.10g", times[k]);
      os << buf;
      for (unsigned i = 0; i < D; ++i) {
        std::snprintf(buf, sizeof buf, "%.10g", xs[k][i]);
        os << ',' << buf;
      }
      os << '\n';
    }
  }
}

}  // namespace memflow::toy
