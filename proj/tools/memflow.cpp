#include <algorithm>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "memflow/commands.hpp"

namespace {

/// Options are collected as text keyed by their RunConfig key and applied with
/// RunConfig::set, so the command line and manifest files share one parser.
class OptionTable {
public:
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto* opt = app->add_option(flag, values_[key], help);
    options_.emplace_back(key, opt);
  }

  bool given(const std::string& key) const {
    for (const auto& [k, opt] : options_)
      if (k == key && opt->count() > 0) return true;
    return false;
  }

  const std::string& value(const std::string& key) const { return values_.at(key); }

  void apply(memflow::RunConfig& cfg, const std::vector<std::string>& skip = {}) const {
    for (const auto& [key, opt] : options_) {
      if (opt->count() == 0) continue;
      if (std::find(skip.begin(), skip.end(), key) != skip.end()) continue;
      cfg.set(key, values_.at(key));
    }
  }

private:
  std::map<std::string, std::string> values_;
  std::vector<std::pair<std::string, CLI::Option*>> options_;
};

void add_flow_options(CLI::App* app, OptionTable& t) {
  t.add(app, "--seed", "seed", "Random seed (initial state and noise)");
  t.add(app, "--alpha", "alpha", "Slow-memory rate");
  t.add(app, "--beta", "beta", "Fast-memory rate");
  t.add(app, "--gamma", "gamma", "Fast-memory threshold");
  t.add(app, "--delta", "delta", "Slow-memory threshold");
  t.add(app, "--epsilon", "epsilon", "Fast-memory floor");
  t.add(app, "--zeta", "zeta", "Rigidity weight");
  t.add(app, "--theta", "theta", "Noise intensity (selects dt=0.01 unless --dt is given)");
  t.add(app, "--dt", "dt", "Integration step");
  t.add(app, "--x-l-max", "x_l_max", "Slow-memory cap (<=0: 1e4 x clause count)");
  t.add(app, "--max-time", "max_time", "Integration horizon");
  t.add(app, "--record-stride", "record_stride", "Steps between recorded samples");
  t.add(app, "--fixed-point-tol", "fixed_point_tol", "Speed below which a non-solution state counts as a fixed point");
  t.add(app, "--cnf", "cnf", "DIMACS instance (bypasses the multiplier builder)");
  t.add(app, "--p-bits", "p_bits", "Width of the first factor");
  t.add(app, "--q-bits", "q_bits", "Width of the second factor");
}

memflow::RunConfig base_config(const std::string& config_path, memflow::Command command) {
  memflow::RunConfig cfg = config_path.empty() ? memflow::RunConfig{} : memflow::RunConfig::from_file(config_path);
  cfg.command = command;
  return cfg;
}

void apply_flow(memflow::RunConfig& cfg, const OptionTable& t, bool from_file) {
  t.apply(cfg);
  if (!from_file && t.given("theta") && !t.given("dt"))
    cfg.flow.dt = memflow::FlowParams::defaults(cfg.flow.theta).dt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memflow: digital memcomputing simulator for factorization circuits"};
  app.require_subcommand(1);
  app.set_version_flag("--version", memflow::kVersion);

  std::string config_path, out_dir;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Load settings from a key=value manifest (flags override)");
    sub->add_option("--out", out_dir, "Artifact directory");
  };

  auto* fact = app.add_subcommand("factorize", "Factor n with one trajectory");
  OptionTable ft;
  common(fact);
  ft.add(fact, "n", "n", "Number to factor");
  add_flow_options(fact, ft);

  auto* ana = app.add_subcommand("analyze", "Ensemble correlation analysis");
  OptionTable at;
  common(ana);
  at.add(ana, "n", "n", "Product instance");
  add_flow_options(ana, at);
  at.add(ana, "--runs", "runs", "Ensemble size M");
  at.add(ana, "--max-lag", "max_lag", "Largest C(tau) lag (<=0: 3x median instanton duration)");
  at.add(ana, "--t-rule", "t_rule", "per-trajectory | global | both");
  at.add(ana, "--global-t", "global_t", "Observation time for the global rule (default: median mid-phase)");
  at.add(ana, "--aggregate", "aggregate", "C(d) pair aggregate: max | mean");
  unsigned threads_flag = 0;
  ana->add_option("--threads", threads_flag, "Worker threads (default: cores; MEMFLOW_THREADS overrides)");

  auto* toy = app.add_subcommand("toy", "Intersection-number scan on a toy flow");
  OptionTable tt;
  common(toy);
  tt.add(toy, "--flow", "toy_flow", "logistic | spiral");
  tt.add(toy, "--dim", "toy_dim", "Logistic dimension (1-3)");
  tt.add(toy, "--omega", "omega", "Spiral rotation rate");
  tt.add(toy, "--grid-lo", "grid_lo", "Moduli box lower bound");
  tt.add(toy, "--grid-hi", "grid_hi", "Moduli box upper bound");
  tt.add(toy, "--grid-points", "grid_points", "Grid points per moduli dimension");
  tt.add(toy, "--times", "times", "Comma-separated observation times of the first coordinate");
  tt.add(toy, "--fixed-time", "fixed_time", "Observation time of the other coordinates");
  std::string scan;
  toy->add_option("--scan", scan, "Scan grid lo,hi,count for the first coordinate's time");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : memflow::kExitConfig;
  }

  try {
    memflow::RunConfig cfg;
    const bool from_file = !config_path.empty();
    if (fact->parsed()) {
      cfg = base_config(config_path, memflow::Command::Factorize);
      apply_flow(cfg, ft, from_file);
    } else if (ana->parsed()) {
      cfg = base_config(config_path, memflow::Command::Analyze);
      apply_flow(cfg, at, from_file);
      cfg.threads = memflow::resolve_threads(threads_flag);
    } else {
      cfg = base_config(config_path, memflow::Command::Toy);
      if (tt.given("toy_flow")) cfg.set("toy_flow", tt.value("toy_flow"));
      if (!from_file) cfg.apply_toy_defaults();
      tt.apply(cfg, {"toy_flow"});
      if (!scan.empty()) {
        std::stringstream ss(scan);
        std::string a, b, c;
        if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c))
          throw memflow::ConfigError("--scan expects lo,hi,count");
        memflow::RunConfig tmp;
        tmp.set("grid_lo", a);
        tmp.set("grid_hi", b);
        tmp.set("grid_points", c);
        cfg.times = memflow::RunConfig::linspace(tmp.grid_lo, tmp.grid_hi, tmp.grid_points);
      }
    }
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    return memflow::run_command(cfg, std::cout, std::cerr);
  } catch (const memflow::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return memflow::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return memflow::kExitFailure;
  }
}
