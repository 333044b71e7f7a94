#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "memflow/cnf.hpp"
#include "memflow/config.hpp"
#include "memflow/correlation.hpp"
#include "memflow/ensemble.hpp"
#include "memflow/instanton_toy.hpp"
#include "memflow/literal_graph.hpp"
#include "memflow/netlist.hpp"
#include "memflow/trajectory.hpp"

namespace memflow {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,     // unexpected error or failed verification
  kExitConfig = 2,      // invalid configuration or input file
  kExitTimeout = 3,     // max_time reached without a solution
  kExitFixedPoint = 4,  // converged to a point that is not a solution
  kExitTangency = 5,    // toy scan hit a tangential crossing
};

/// FNV-1a 64 of the instance's DIMACS text, as 16 hex digits.
inline std::string instance_hash(const ClauseSystem& cs) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : export_dimacs(cs)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// Worker count: MEMFLOW_THREADS if set, else `requested`, else the core count.
inline unsigned resolve_threads(unsigned requested = 0) {
  if (const char* env = std::getenv("MEMFLOW_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError(std::string("MEMFLOW_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<unsigned>(v);
  }
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Clause system named by the config: a DIMACS file or a multiplier for n.
inline ClauseSystem load_instance(const RunConfig& cfg) {
  if (!cfg.cnf_path.empty()) {
    std::ifstream in(cfg.cnf_path);
    if (!in) throw ConfigError("cannot open CNF file '" + cfg.cnf_path + "'");
    try {
      return parse_dimacs(in);
    } catch (const ParseError& e) {
      throw ConfigError(cfg.cnf_path + ": " + e.what());
    }
  }
  return encode_cnf(build_multiplier(cfg.p_width, cfg.q_width), cfg.n);
}

inline IntegrateOptions integrate_options(const RunConfig& cfg) {
  return IntegrateOptions{cfg.max_time, cfg.record_stride, cfg.fixed_point_tol};
}

namespace detail {

inline std::filesystem::path prepare_out_dir(const RunConfig& cfg) {
  std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write '" + path.string() + "'");
  os << text;
}

inline std::string manifest_text(const RunConfig& cfg, const std::string& extra = {}) {
  return "# memflow run manifest\n" + cfg.to_manifest() + extra;
}

inline std::vector<std::string> var_names(const ClauseSystem& cs) {
  if (cs.node_map.size() == cs.num_vars) return cs.node_map;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < cs.num_vars; ++i) names.push_back("x" + std::to_string(i + 1));
  return names;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// factorize

struct FactorizeOutcome {
  Trajectory trajectory;
  std::optional<Factors> factors;
  std::string instance_hash;
};

inline FactorizeOutcome run_factorize(const RunConfig& cfg, const ClauseSystem& cs) {
  const FlowModel model(cs, cfg.flow);
  FactorizeOutcome out;
  out.instance_hash = instance_hash(cs);
  out.trajectory = run_seeded(model, integrate_options(cfg), cfg.seed);
  if (out.trajectory.termination == Termination::Solved && cs.layout)
    out.factors = decode_factors(cs, *out.trajectory.assignment);
  return out;
}

/// Integrates one trajectory and prints "p q" after checking p * q = n.
/// Artifacts (when out_dir is set): manifest.txt, trajectory.csv,
/// crossings.csv, result.txt.
inline int cmd_factorize(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  ClauseSystem cs;
  try {
    cfg.validate();
    cs = load_instance(cfg);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  const auto res = run_factorize(cfg, cs);
  const auto& tr = res.trajectory;
  const auto names = detail::var_names(cs);

  std::ostringstream result;
  result << "status=" << to_string(tr.termination) << '\n'
         << "t_final=" << format_double(tr.final_state.t) << '\n'
         << "steps=" << tr.steps << '\n'
         << "crossings=" << tr.crossings.size() << '\n';

  int code = kExitOk;
  std::string printed;
  if (tr.termination == Termination::Solved) {
    if (res.factors) {
      const auto product = decode_bits(*tr.assignment, cs.layout->product_vars);
      const std::uint64_t target = cfg.cnf_path.empty() ? cfg.n : product;
      if (res.factors->p * res.factors->q != target) {
        err << "verification failed: " << res.factors->p << " * " << res.factors->q << " != " << target << '\n';
        result << "verified=false\n";
        code = kExitFailure;
      } else {
        result << "p=" << res.factors->p << "\nq=" << res.factors->q << "\nverified=true\n";
        printed = std::to_string(res.factors->p) + ' ' + std::to_string(res.factors->q) + '\n';
      }
    } else {
      printed = "SAT\nv";
      for (std::size_t i = 0; i < cs.num_vars; ++i)
        printed += ' ' + std::string((*tr.assignment)[i] ? "" : "-") + std::to_string(i + 1);
      printed += " 0\n";
      result << "verified=" << (cs.satisfied_by(*tr.assignment) ? "true" : "false") << '\n';
    }
  } else if (tr.termination == Termination::MaxTime) {
    err << "timeout: no solution within max_time=" << format_double(cfg.max_time) << '\n';
    code = kExitTimeout;
  } else {
    err << "converged to a fixed point that is not a solution at t=" << format_double(tr.final_state.t) << '\n';
    code = kExitFixedPoint;
  }

  if (!cfg.out_dir.empty()) {
    const auto dir = detail::prepare_out_dir(cfg);
    detail::write_file(dir / "manifest.txt", detail::manifest_text(cfg, "instance_hash=" + res.instance_hash + '\n'));
    std::vector<Var> vars(cs.num_vars);
    for (std::size_t i = 0; i < vars.size(); ++i) vars[i] = static_cast<Var>(i);
    std::ostringstream traj_csv, cross_csv;
    write_trajectory_csv(traj_csv, tr, vars, names, cfg.flow.v_clamp);
    write_crossings_csv(cross_csv, tr, names);
    detail::write_file(dir / "trajectory.csv", traj_csv.str());
    detail::write_file(dir / "crossings.csv", cross_csv.str());
    detail::write_file(dir / "result.txt", result.str());
  }
  out << printed;
  return code;
}

// ---------------------------------------------------------------------------
// analyze

struct LabeledAnalysis {
  std::string label;  // per-trajectory | global
  CorrelationResult result;
};

struct AnalyzeOutcome {
  Ensemble ensemble;
  std::size_t vertex_count = 0;
  std::uint32_t diameter = 0;
  double median_phase_duration = 0.0;
  double max_lag = 0.0;
  std::vector<LabeledAnalysis> analyses;
  std::string instance_hash;
};

inline double median_phase_duration(const Ensemble& ens) {
  std::vector<double> d;
  for (const auto& p : ens.phases)
    if (p) d.push_back(p->duration());
  if (d.empty()) throw Error("no trajectory has an instanton phase");
  std::sort(d.begin(), d.end());
  return d.size() % 2 ? d[d.size() / 2] : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
}

inline AnalyzeOutcome run_analyze(const RunConfig& cfg, std::shared_ptr<const ClauseSystem> cs) {
  const LiteralGraph graph(*cs);
  EnsembleConfig ec;
  ec.system = cs;
  ec.params = cfg.flow;
  ec.run_count = cfg.runs;
  ec.base_seed = cfg.seed;
  ec.integrate = integrate_options(cfg);
  ec.threads = cfg.threads;

  AnalyzeOutcome out;
  out.instance_hash = instance_hash(*cs);
  out.ensemble = run_ensemble(ec);
  out.vertex_count = graph.vertex_count();
  out.diameter = graph.diameter();
  out.median_phase_duration = median_phase_duration(out.ensemble);
  out.max_lag = cfg.max_lag > 0.0 ? cfg.max_lag : 3.0 * out.median_phase_duration;

  std::vector<std::pair<std::string, TimeRule>> rules;
  if (cfg.t_rule != "global") rules.emplace_back("per-trajectory", TimeRule::per_trajectory());
  if (cfg.t_rule != "per-trajectory") rules.emplace_back("global", TimeRule::global(cfg.global_time));
  for (const auto& [label, rule] : rules) {
    AnalysisOptions opt;
    opt.rule = rule;
    opt.aggregate = cfg.aggregate == "mean" ? PairAggregate::Mean : PairAggregate::Max;
    opt.max_lag = out.max_lag;
    out.analyses.push_back({label, analyze(out.ensemble, graph, opt)});
  }
  return out;
}

/// Runs the ensemble and writes, per time rule, C(d) and C(tau) tables and a
/// summary. Prints the summary of each rule to `out`.
inline int cmd_analyze(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  std::shared_ptr<const ClauseSystem> cs;
  try {
    cfg.validate();
    cs = std::make_shared<const ClauseSystem>(load_instance(cfg));
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  const auto res = run_analyze(cfg, cs);
  const auto& ens = res.ensemble;
  const auto names = detail::var_names(*cs);
  if (ens.partial())
    err << "warning: partial ensemble, " << ens.count(Termination::Solved) << " of " << ens.runs.size()
        << " runs solved\n";

  std::ostringstream runs_csv;
  runs_csv << "run,seed,termination,t_final,phase_start,phase_end,crossings\n";
  for (std::size_t i = 0; i < ens.runs.size(); ++i) {
    const auto& p = ens.phases[i];
    runs_csv << i << ',' << ens.seeds[i] << ',' << to_string(ens.runs[i].termination) << ','
             << format_double(ens.runs[i].final_state.t) << ',' << (p ? format_double(p->t_start) : "") << ','
             << (p ? format_double(p->t_end) : "") << ',' << ens.runs[i].crossings.size() << '\n';
  }

  std::filesystem::path dir;
  if (!cfg.out_dir.empty()) {
    dir = detail::prepare_out_dir(cfg);
    detail::write_file(dir / "manifest.txt", detail::manifest_text(cfg, "instance_hash=" + res.instance_hash + '\n'));
    detail::write_file(dir / "runs.csv", runs_csv.str());
  }

  for (const auto& [label, r] : res.analyses) {
    std::ostringstream c_d, c_tau, c_tau_lit, summary;
    c_d << "d,C\n";
    for (const auto& [d, c] : r.spatial.by_distance) c_d << d << ',' << format_double(c) << '\n';
    c_tau << "tau,C\n";
    for (std::size_t k = 0; k < r.mean_temporal.size(); ++k)
      c_tau << format_double(static_cast<double>(k) * r.lag_step) << ',' << format_double(r.mean_temporal[k]) << '\n';
    c_tau_lit << "tau";
    for (const auto& tc : r.temporal) c_tau_lit << ',' << names[tc.var];
    c_tau_lit << '\n';
    for (std::size_t k = 0; k < r.mean_temporal.size(); ++k) {
      c_tau_lit << format_double(static_cast<double>(k) * r.lag_step);
      for (const auto& tc : r.temporal) c_tau_lit << ',' << format_double(tc.values[k]);
      c_tau_lit << '\n';
    }

    summary << "t_rule=" << label << '\n'
            << "runs=" << ens.runs.size() << '\n'
            << "solved=" << ens.count(Termination::Solved) << '\n'
            << "max_time_runs=" << ens.count(Termination::MaxTime) << '\n'
            << "fixed_point_runs=" << ens.count(Termination::FixedPointNonSolution) << '\n'
            << "partial=" << (ens.partial() ? "true" : "false") << '\n'
            << "used_runs=" << r.spatial.used_runs << '\n'
            << "excluded_runs=" << r.spatial.excluded_runs << '\n'
            << "skipped_pairs=" << r.spatial.skipped_pairs << '\n'
            << "degenerate_literals=" << r.degenerate_literals.size() << '\n'
            << "vertices=" << res.vertex_count << '\n'
            << "diameter=" << r.diameter << '\n'
            << "median_phase_duration=" << format_double(res.median_phase_duration) << '\n'
            << "max_lag=" << format_double(res.max_lag) << '\n'
            << "correlation_length=" << (r.correlation_length ? std::to_string(*r.correlation_length) : "none")
            << '\n'
            << "correlation_time=" << (r.correlation_time ? format_double(*r.correlation_time) : "none") << '\n';
    out << summary.str();
    if (!dir.empty()) {
      detail::write_file(dir / ("c_d_" + label + ".csv"), c_d.str());
      detail::write_file(dir / ("c_tau_" + label + ".csv"), c_tau.str());
      detail::write_file(dir / ("c_tau_literals_" + label + ".csv"), c_tau_lit.str());
      detail::write_file(dir / ("summary_" + label + ".txt"), summary.str());
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// toy

inline toy::InstantonFamily toy_family(const RunConfig& cfg) {
  auto flow = cfg.toy_flow == "spiral" ? toy::ToyFlow::spiral(cfg.omega) : toy::ToyFlow::logistic(cfg.toy_dim);
  toy::FamilyOptions opt;
  opt.grid = {cfg.grid_lo, cfg.grid_hi, cfg.grid_points};
  return toy::build_instanton_family(std::move(flow), opt);
}

inline toy::ScanReport run_toy(const RunConfig& cfg, const toy::InstantonFamily& fam) {
  const unsigned m = fam.moduli_dim();
  std::vector<unsigned> coords(m);
  for (unsigned j = 0; j < m; ++j) coords[j] = j;
  std::vector<std::vector<double>> tuples;
  for (double t : cfg.times) {
    std::vector<double> tuple(m, cfg.fixed_time);
    tuple[0] = t;
    tuples.push_back(std::move(tuple));
  }
  return toy::invariance_scan(fam, coords, tuples);
}

/// Intersection-number scan over the configured observation times. Writes
/// manifest.txt, report.txt, scan.csv and family.csv.
inline int cmd_toy(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  const auto fam = toy_family(cfg);
  const auto report = run_toy(cfg, fam);

  std::ostringstream scan_csv;
  const unsigned m = fam.moduli_dim();
  for (unsigned j = 0; j < m; ++j) scan_csv << "t_" << (j + 1) << ',';
  scan_csv << "signed_sum,raw_count,warning,error\n";
  for (const auto& e : report.entries) {
    for (const auto& o : e.observables) scan_csv << format_double(o.time) << ',';
    if (e.result)
      scan_csv << e.result->signed_sum << ',' << e.result->raw_count();
    else
      scan_csv << ',';
    scan_csv << ",\"" << e.warning << "\",\"" << e.error << "\"\n";
    if (!e.warning.empty()) err << "warning at t=" << format_double(e.observables.front().time) << ": " << e.warning << '\n';
  }

  if (!cfg.out_dir.empty()) {
    const auto dir = detail::prepare_out_dir(cfg);
    detail::write_file(dir / "manifest.txt", detail::manifest_text(cfg));
    std::ostringstream rep, fam_csv;
    toy::write_report(rep, report);
    detail::write_file(dir / "report.txt", rep.str());
    detail::write_file(dir / "scan.csv", scan_csv.str());
    // Family members at the moduli-box corners and centre.
    std::vector<toy::Vec> sigmas;
    for (unsigned mask = 0; mask < (1u << m); ++mask) {
      toy::Vec s(m);
      for (unsigned j = 0; j < m; ++j) s[j] = (mask >> j) & 1u ? cfg.grid_hi : cfg.grid_lo;
      sigmas.push_back(s);
    }
    sigmas.push_back(toy::Vec::Constant(m, 0.5 * (cfg.grid_lo + cfg.grid_hi)));
    const double t_end = std::max(*std::max_element(cfg.times.begin(), cfg.times.end()), cfg.fixed_time) + 5.0;
    toy::write_family_csv(fam_csv, fam, sigmas, t_end, 0.1);
    detail::write_file(dir / "family.csv", fam_csv.str());
  }

  out << "value_set";
  for (int v : report.values) out << ' ' << v;
  out << "\nraw_counts";
  for (auto c : report.raw_counts) out << ' ' << c;
  out << '\n';
  if (report.errors > 0) {
    for (const auto& e : report.entries)
      if (!e.error.empty()) err << "error: " << e.error << '\n';
    err << "hint: refine the moduli grid (--grid-points) or shift the observation times\n";
    return kExitTangency;
  }
  return kExitOk;
}

inline int run_command(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  switch (cfg.command) {
    case Command::Factorize: return cmd_factorize(cfg, out, err);
    case Command::Analyze: return cmd_analyze(cfg, out, err);
    case Command::Toy: return cmd_toy(cfg, out, err);
  }
  return kExitFailure;
}

}  // namespace memflow
