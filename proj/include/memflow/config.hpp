#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "memflow/correlation.hpp"
#include "memflow/dynamics.hpp"
#include "memflow/error.hpp"

namespace memflow {

inline constexpr const char* kVersion = "memflow 0.1.0";

/// Invalid or inconsistent run configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

enum class Command { Factorize, Analyze, Toy };

inline const char* to_string(Command c) {
  switch (c) {
    case Command::Factorize: return "factorize";
    case Command::Analyze: return "analyze";
    case Command::Toy: return "toy";
  }
  return "?";
}

/// Every parameter of a run. `to_manifest` / `from_manifest` round-trip it
/// through key=value text, so a stored manifest reproduces the run.
struct RunConfig {
  Command command = Command::Factorize;
  std::string out_dir;
  std::uint64_t seed = 1;
  FlowParams flow = FlowParams::defaults();

  // instance
  std::uint64_t n = 0;
  unsigned p_width = 0;
  unsigned q_width = 0;
  std::string cnf_path;  // non-empty: read DIMACS instead of building a multiplier

  // integration
  double max_time = 1000.0;
  std::size_t record_stride = 10;
  double fixed_point_tol = 1e-6;

  // ensemble analysis
  std::size_t runs = 200;
  double max_lag = 0.0;  // <= 0: three times the median instanton-phase duration
  std::string t_rule = "per-trajectory";  // per-trajectory | global | both
  std::optional<double> global_time;
  std::string aggregate = "max";  // max | mean
  unsigned threads = 1;           // does not affect results

  // toy
  std::string toy_flow = "logistic";  // logistic | spiral
  unsigned toy_dim = 1;
  double omega = 60.0;
  double grid_lo = -6.0;
  double grid_hi = 0.0;
  unsigned grid_points = 61;
  std::vector<double> times;  // scanned time of the first observed coordinate
  double fixed_time = 12.0;   // time of the remaining coordinates

  /// Toy defaults that keep the scan inside the family's convergence window.
  void apply_toy_defaults() {
    if (toy_flow == "spiral") {
      toy_dim = 2;
      grid_lo = -12.0;
      grid_points = 121;
      fixed_time = 12.0;
      if (times.empty()) times = linspace(12.5, 19.5, 20);
    } else if (times.empty()) {
      times = linspace(9.5, 14.9, 20);
    }
  }

  static std::vector<double> linspace(double a, double b, unsigned count) {
    std::vector<double> out;
    for (unsigned k = 0; k < count; ++k)
      out.push_back(count == 1 ? a : a + (b - a) * static_cast<double>(k) / static_cast<double>(count - 1));
    return out;
  }

  void validate() const {
    try {
      flow.validate();
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    if (max_time < 0.0) throw ConfigError("max_time must be non-negative");
    if (record_stride == 0) throw ConfigError("record_stride must be positive");
    switch (command) {
      case Command::Factorize:
      case Command::Analyze:
        if (cnf_path.empty()) {
          if (command == Command::Factorize && n < 4) throw ConfigError("n must be at least 4");
          if (p_width < 2 || q_width < 2) throw ConfigError("--p-bits and --q-bits must be at least 2");
          if (p_width + q_width > 62) throw ConfigError("product width above 62 bits is not supported");
          if ((n >> (p_width + q_width)) != 0) throw ConfigError("n does not fit in p_bits + q_bits bits");
        }
        if (command == Command::Analyze) {
          if (runs < 2) throw ConfigError("analysis needs at least 2 runs");
          if (t_rule != "per-trajectory" && t_rule != "global" && t_rule != "both")
            throw ConfigError("t_rule must be per-trajectory, global or both");
          if (aggregate != "max" && aggregate != "mean") throw ConfigError("aggregate must be max or mean");
          if (threads == 0) throw ConfigError("threads must be positive");
        }
        break;
      case Command::Toy:
        if (toy_flow != "logistic" && toy_flow != "spiral") throw ConfigError("toy flow must be logistic or spiral");
        if (toy_dim < 1 || toy_dim > 3) throw ConfigError("toy dimension must be 1 to 3");
        if (toy_flow == "spiral" && toy_dim != 2) throw ConfigError("spiral flow is two-dimensional");
        if (!(omega > 0.0)) throw ConfigError("omega must be positive");
        if (!(grid_hi > grid_lo) || grid_points < 2) throw ConfigError("invalid moduli grid");
        if (times.empty()) throw ConfigError("no observation times");
        for (double t : times)
          if (t < 0.0) throw ConfigError("observation times must be non-negative");
        break;
    }
  }

  std::string to_manifest() const {
    std::ostringstream os;
    auto kv = [&](const char* k, const auto& v) { os << k << '=' << v << '\n'; };
    auto num = [&](const char* k, double v) { kv(k, format_double17(v)); };
    kv("version", kVersion);
    kv("command", to_string(command));
    kv("seed", seed);
    num("alpha", flow.alpha);
    num("beta", flow.beta);
    num("gamma", flow.gamma);
    num("delta", flow.delta);
    num("epsilon", flow.epsilon);
    num("zeta", flow.zeta);
    num("theta", flow.theta);
    num("dt", flow.dt);
    num("x_l_max", flow.x_l_max);
    num("v_clamp", flow.v_clamp);
    kv("n", n);
    kv("p_bits", p_width);
    kv("q_bits", q_width);
    kv("cnf", cnf_path);
    num("max_time", max_time);
    kv("record_stride", record_stride);
    num("fixed_point_tol", fixed_point_tol);
    kv("runs", runs);
    num("max_lag", max_lag);
    kv("t_rule", t_rule);
    kv("global_t", global_time ? format_double17(*global_time) : std::string());
    kv("aggregate", aggregate);
    kv("threads", threads);
    kv("toy_flow", toy_flow);
    kv("toy_dim", toy_dim);
    num("omega", omega);
    num("grid_lo", grid_lo);
    num("grid_hi", grid_hi);
    kv("grid_points", grid_points);
    std::string ts;
    for (std::size_t i = 0; i < times.size(); ++i) ts += (i ? "," : "") + format_double17(times[i]);
    kv("times", ts);
    num("fixed_time", fixed_time);
    return os.str();
  }

  /// Applies one key=value setting.
  void set(const std::string& key, const std::string& value) {
    auto as_double = [&] {
      std::size_t pos = 0;
      double x = 0.0;
      try {
        x = std::stod(value, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != value.size()) throw ConfigError("invalid number for " + key + ": '" + value + "'");
      return x;
    };
    auto as_uint = [&] {
      if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("invalid integer for " + key + ": '" + value + "'");
      try {
        return static_cast<std::uint64_t>(std::stoull(value));
      } catch (const std::exception&) {
        throw ConfigError("integer out of range for " + key + ": '" + value + "'");
      }
    };
    static const std::map<std::string, double FlowParams::*> flow_keys = {
        {"alpha", &FlowParams::alpha}, {"beta", &FlowParams::beta},       {"gamma", &FlowParams::gamma},
        {"delta", &FlowParams::delta}, {"epsilon", &FlowParams::epsilon}, {"zeta", &FlowParams::zeta},
        {"theta", &FlowParams::theta}, {"dt", &FlowParams::dt},           {"x_l_max", &FlowParams::x_l_max},
        {"v_clamp", &FlowParams::v_clamp}};
    if (auto it = flow_keys.find(key); it != flow_keys.end()) {
      flow.*(it->second) = as_double();
    } else if (key == "version" || key == "instance_hash") {
      // informational
    } else if (key == "command") {
      if (value == "factorize") command = Command::Factorize;
      else if (value == "analyze") command = Command::Analyze;
      else if (value == "toy") command = Command::Toy;
      else throw ConfigError("unknown command '" + value + "'");
    } else if (key == "seed") {
      seed = as_uint();
    } else if (key == "n") {
      n = as_uint();
    } else if (key == "p_bits") {
      p_width = static_cast<unsigned>(as_uint());
    } else if (key == "q_bits") {
      q_width = static_cast<unsigned>(as_uint());
    } else if (key == "cnf") {
      cnf_path = value;
    } else if (key == "max_time") {
      max_time = as_double();
    } else if (key == "record_stride") {
      record_stride = as_uint();
    } else if (key == "fixed_point_tol") {
      fixed_point_tol = as_double();
    } else if (key == "runs") {
      runs = as_uint();
    } else if (key == "max_lag") {
      max_lag = as_double();
    } else if (key == "t_rule") {
      t_rule = value;
    } else if (key == "global_t") {
      if (value.empty()) global_time.reset();
      else global_time = as_double();
    } else if (key == "aggregate") {
      aggregate = value;
    } else if (key == "threads") {
      threads = static_cast<unsigned>(as_uint());
    } else if (key == "toy_flow") {
      toy_flow = value;
    } else if (key == "toy_dim") {
      toy_dim = static_cast<unsigned>(as_uint());
    } else if (key == "omega") {
      omega = as_double();
    } else if (key == "grid_lo") {
      grid_lo = as_double();
    } else if (key == "grid_hi") {
      grid_hi = as_double();
    } else if (key == "grid_points") {
      grid_points = static_cast<unsigned>(as_uint());
    } else if (key == "times") {
      times.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        RunConfig tmp;
        tmp.set("fixed_time", item);
        times.push_back(tmp.fixed_time);
      }
    } else if (key == "fixed_time") {
      fixed_time = as_double();
    } else {
      throw ConfigError("unknown configuration key '" + key + "'");
    }
  }

  /// Reads key=value lines; blank lines and lines starting with '#' are ignored.
  void load(std::istream& in) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
      set(line.substr(0, eq), line.substr(eq + 1));
    }
  }

  static RunConfig from_manifest(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    cfg.load(in);
    return cfg;
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    RunConfig cfg;
    cfg.load(in);
    return cfg;
  }

  /// Shortest decimal text that parses back to the same double.
  static std::string format_double17(double x) {
    char buf[40];
    for (int prec = 6; prec <= 17; ++prec) {
      std::snprintf(buf, sizeof buf, "%.*g", prec, x);
      if (std::strtod(buf, nullptr) == x) break;
    }
    return buf;
  }
};

}  // namespace memflow
