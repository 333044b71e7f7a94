#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "memflow/error.hpp"
#include "memflow/netlist.hpp"

namespace memflow {

using Var = std::uint32_t;

struct Literal {
  Var var;
  int polarity;  // +1 or -1

  bool operator==(const Literal&) const = default;
  bool satisfied_by(bool value) const noexcept { return value == (polarity > 0); }
};

using Clause = std::vector<Literal>;

// Variables carrying the factors and the product, least significant bit first.
struct FactorLayout {
  std::vector<Var> p_vars;
  std::vector<Var> q_vars;
  std::vector<Var> product_vars;

  bool operator==(const FactorLayout&) const = default;
};

/// Boolean constraint system. Multi-literal constraints live in `clauses`;
/// single-literal constraints live in `units` (a unit's polarity is the value
/// it fixes).
struct ClauseSystem {
  std::size_t num_vars = 0;
  std::vector<Clause> clauses;
  std::vector<Literal> units;
  std::vector<std::string> node_map;
  std::optional<FactorLayout> layout;

  bool operator==(const ClauseSystem&) const = default;

  /// Value fixed by the units (0/1), or -1 for free variables.
  std::vector<int> unit_values() const {
    std::vector<int> fixed(num_vars, -1);
    for (const auto& u : units) fixed[u.var] = u.polarity > 0 ? 1 : 0;
    return fixed;
  }

  std::vector<Var> free_vars() const {
    const auto fixed = unit_values();
    std::vector<Var> out;
    for (Var v = 0; v < num_vars; ++v)
      if (fixed[v] < 0) out.push_back(v);
    return out;
  }

  bool satisfied_by(const std::vector<bool>& assignment) const {
    if (assignment.size() != num_vars) return false;
    for (const auto& u : units)
      if (!u.satisfied_by(assignment[u.var])) return false;
    for (const auto& c : clauses) {
      bool ok = false;
      for (const auto& l : c) {
        if (l.satisfied_by(assignment[l.var])) {
          ok = true;
          break;
        }
      }
      if (!ok) return false;
    }
    return true;
  }

  /// Throws Error when any structural invariant is broken.
  void validate() const {
    if (node_map.size() != num_vars) throw Error("node_map size does not match variable count");
    std::vector<bool> seen(num_vars, false);
    std::vector<int> fixed(num_vars, -1);
    for (const auto& u : units) {
      if (u.var >= num_vars) throw Error("unit references unknown variable");
      if (u.polarity != 1 && u.polarity != -1) throw Error("bad literal polarity");
      const int val = u.polarity > 0;
      if (fixed[u.var] >= 0 && fixed[u.var] != val)
        throw Error("inconsistent units for variable " + std::to_string(u.var + 1));
      fixed[u.var] = val;
      seen[u.var] = true;
    }
    for (std::size_t ci = 0; ci < clauses.size(); ++ci) {
      const auto& c = clauses[ci];
      if (c.empty()) throw Error("empty clause at index " + std::to_string(ci));
      if (c.size() == 1) throw Error("single-literal clause must be stored as a unit");
      for (const auto& l : c) {
        if (l.var >= num_vars) throw Error("literal references unknown variable");
        if (l.polarity != 1 && l.polarity != -1) throw Error("bad literal polarity");
        for (const auto& o : c)
          if (o.var == l.var && o.polarity != l.polarity)
            throw Error("clause " + std::to_string(ci) + " contains both polarities of a variable");
        seen[l.var] = true;
      }
    }
    for (Var v = 0; v < num_vars; ++v)
      if (!seen[v]) throw Error("variable " + std::to_string(v + 1) + " appears in no clause or unit");
  }
};

namespace detail {

inline void add_and(ClauseSystem& cs, Var a, Var b, Var z) {
  cs.clauses.push_back({{z, -1}, {a, 1}});
  cs.clauses.push_back({{z, -1}, {b, 1}});
  cs.clauses.push_back({{z, 1}, {a, -1}, {b, -1}});
}

inline void add_xor3(ClauseSystem& cs, Var a, Var b, Var c, Var s) {
  // Forbid each of the 8 input patterns paired with the wrong sum.
  for (int m = 0; m < 8; ++m) {
    const int va = m & 1, vb = (m >> 1) & 1, vc = (m >> 2) & 1;
    const int parity = va ^ vb ^ vc;
    cs.clauses.push_back({{a, va ? -1 : 1}, {b, vb ? -1 : 1}, {c, vc ? -1 : 1}, {s, parity ? 1 : -1}});
  }
}

inline void add_maj3(ClauseSystem& cs, Var a, Var b, Var c, Var z) {
  cs.clauses.push_back({{a, -1}, {b, -1}, {z, 1}});
  cs.clauses.push_back({{a, -1}, {c, -1}, {z, 1}});
  cs.clauses.push_back({{b, -1}, {c, -1}, {z, 1}});
  cs.clauses.push_back({{a, 1}, {b, 1}, {z, -1}});
  cs.clauses.push_back({{a, 1}, {c, 1}, {z, -1}});
  cs.clauses.push_back({{b, 1}, {c, 1}, {z, -1}});
}

}  // namespace detail

/// Encodes the multiplier with product bits fixed to `n`. Variable i is
/// netlist node i. Leading factor bits are forced to 1; for odd `n` both
/// factor LSBs are forced to 1 as well.
inline ClauseSystem encode_cnf(const GateNetlist& net, std::uint64_t n) {
  const unsigned width = net.product_width();
  if (width < 64 && (n >> width) != 0)
    throw Error("n=" + std::to_string(n) + " does not fit in " + std::to_string(width) + " product bits");

  ClauseSystem cs;
  cs.num_vars = net.node_count();
  cs.node_map = net.nodes();
  for (const auto& g : net.gates()) {
    const auto& t = g.terminals;
    if (g.kind == GateKind::And) {
      detail::add_and(cs, t[0], t[1], t[2]);
    } else {
      detail::add_xor3(cs, t[0], t[1], t[2], t[3]);
      detail::add_maj3(cs, t[0], t[1], t[2], t[4]);
    }
  }

  cs.units.push_back({net.ground(), -1});
  for (unsigned k = 0; k < width; ++k) cs.units.push_back({net.product_bits()[k], ((n >> k) & 1u) ? 1 : -1});
  cs.units.push_back({net.p_bits().back(), 1});
  cs.units.push_back({net.q_bits().back(), 1});
  if (n & 1u) {
    cs.units.push_back({net.p_bits().front(), 1});
    cs.units.push_back({net.q_bits().front(), 1});
  }

  FactorLayout layout;
  layout.p_vars.assign(net.p_bits().begin(), net.p_bits().end());
  layout.q_vars.assign(net.q_bits().begin(), net.q_bits().end());
  layout.product_vars.assign(net.product_bits().begin(), net.product_bits().end());
  cs.layout = std::move(layout);
  cs.validate();
  return cs;
}

inline std::uint64_t decode_bits(const std::vector<bool>& assignment, const std::vector<Var>& vars) {
  std::uint64_t x = 0;
  for (std::size_t i = 0; i < vars.size(); ++i)
    if (assignment.at(vars[i])) x |= std::uint64_t{1} << i;
  return x;
}

struct Factors {
  std::uint64_t p;
  std::uint64_t q;
};

inline Factors decode_factors(const ClauseSystem& cs, const std::vector<bool>& assignment) {
  if (!cs.layout) throw Error("clause system carries no factor layout");
  return {decode_bits(assignment, cs.layout->p_vars), decode_bits(assignment, cs.layout->q_vars)};
}

// ---------------------------------------------------------------------------
// DIMACS

/// Standard DIMACS CNF. Units are written as single-literal clauses after the
/// multi-literal clauses; node names and factor layout travel in comment lines
/// so that parse_dimacs(export_dimacs(cs)) == cs.
inline std::string export_dimacs(const ClauseSystem& cs) {
  std::ostringstream os;
  os << "c memflow clause system\n";
  for (Var v = 0; v < cs.num_vars; ++v) os << "c node " << (v + 1) << ' ' << cs.node_map[v] << '\n';
  if (cs.layout) {
    auto row = [&os](const char* tag, const std::vector<Var>& vars) {
      os << "c layout " << tag;
      for (auto v : vars) os << ' ' << (v + 1);
      os << '\n';
    };
    row("p", cs.layout->p_vars);
    row("q", cs.layout->q_vars);
    row("n", cs.layout->product_vars);
  }
  os << "p cnf " << cs.num_vars << ' ' << (cs.clauses.size() + cs.units.size()) << '\n';
  auto lit = [](const Literal& l) { return l.polarity > 0 ? long(l.var) + 1 : -(long(l.var) + 1); };
  for (const auto& c : cs.clauses) {
    for (const auto& l : c) os << lit(l) << ' ';
    os << "0\n";
  }
  for (const auto& u : cs.units) os << lit(u) << " 0\n";
  return os.str();
}

inline ClauseSystem parse_dimacs(std::istream& in) {
  ClauseSystem cs;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::size_t declared_clauses = 0;
  std::size_t counted = 0;
  std::vector<std::pair<Var, std::string>> names;
  FactorLayout layout;
  bool have_layout = false;
  Clause current;
  std::size_t current_line = 0;

  auto finish_clause = [&](std::size_t at) {
    if (current.empty()) throw ParseError(at, "empty clause");
    for (const auto& l : current)
      for (const auto& o : current)
        if (o.var == l.var && o.polarity != l.polarity)
          throw ParseError(at, "clause contains both polarities of variable " + std::to_string(l.var + 1));
    if (current.size() == 1)
      cs.units.push_back(current.front());
    else
      cs.clauses.push_back(current);
    current.clear();
    ++counted;
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    if (tok == "c") {
      std::string kind;
      ls >> kind;
      if (kind == "node") {
        long idx = 0;
        std::string name;
        if (!(ls >> idx >> name) || idx < 1) throw ParseError(lineno, "malformed node comment");
        names.emplace_back(static_cast<Var>(idx - 1), name);
      } else if (kind == "layout") {
        std::string tag;
        ls >> tag;
        std::vector<Var>* dst = tag == "p" ? &layout.p_vars : tag == "q" ? &layout.q_vars
                                : tag == "n" ? &layout.product_vars : nullptr;
        if (!dst) throw ParseError(lineno, "unknown layout tag '" + tag + "'");
        long v = 0;
        while (ls >> v) {
          if (v < 1) throw ParseError(lineno, "bad layout variable");
          dst->push_back(static_cast<Var>(v - 1));
        }
        have_layout = true;
      }
      continue;
    }
    if (tok == "p") {
      if (have_header) throw ParseError(lineno, "duplicate header");
      std::string fmt;
      long nv = -1, nc = -1;
      if (!(ls >> fmt >> nv >> nc) || fmt != "cnf" || nv < 0 || nc < 0)
        throw ParseError(lineno, "malformed header, expected 'p cnf <vars> <clauses>'");
      std::string extra;
      if (ls >> extra) throw ParseError(lineno, "trailing tokens after header");
      cs.num_vars = static_cast<std::size_t>(nv);
      declared_clauses = static_cast<std::size_t>(nc);
      have_header = true;
      continue;
    }
    if (!have_header) throw ParseError(lineno, "clause before 'p cnf' header");
    ls.clear();
    ls.str(line);
    long v = 0;
    while (true) {
      std::string t;
      if (!(ls >> t)) break;
      std::size_t pos = 0;
      try {
        v = std::stol(t, &pos);
      } catch (const std::exception&) {
        throw ParseError(lineno, "bad literal '" + t + "'");
      }
      if (pos != t.size()) throw ParseError(lineno, "bad literal '" + t + "'");
      if (v == 0) {
        finish_clause(lineno);
        continue;
      }
      const long mag = v < 0 ? -v : v;
      if (static_cast<std::size_t>(mag) > cs.num_vars)
        throw ParseError(lineno, "literal " + t + " out of range");
      if (current.empty()) current_line = lineno;
      current.push_back({static_cast<Var>(mag - 1), v > 0 ? 1 : -1});
    }
  }
  if (!have_header) throw ParseError(lineno, "missing 'p cnf' header");
  if (!current.empty()) throw ParseError(current_line, "clause not terminated by 0");
  if (counted != declared_clauses)
    throw ParseError(lineno, "header declares " + std::to_string(declared_clauses) + " clauses, found " +
                                 std::to_string(counted));

  cs.node_map.resize(cs.num_vars);
  for (Var i = 0; i < cs.num_vars; ++i) cs.node_map[i] = "x" + std::to_string(i + 1);
  for (const auto& [v, name] : names) {
    if (v >= cs.num_vars) throw ParseError(lineno, "node comment references unknown variable");
    cs.node_map[v] = name;
  }
  if (have_layout) {
    for (const auto* vec : {&layout.p_vars, &layout.q_vars, &layout.product_vars})
      for (auto v : *vec)
        if (v >= cs.num_vars) throw ParseError(lineno, "layout references unknown variable");
    cs.layout = std::move(layout);
  }
  try {
    cs.validate();
  } catch (const Error& e) {
    throw ParseError(lineno, e.what());
  }
  return cs;
}

inline ClauseSystem parse_dimacs(const std::string& text) {
  std::istringstream in(text);
  return parse_dimacs(in);
}

}  // namespace memflow
