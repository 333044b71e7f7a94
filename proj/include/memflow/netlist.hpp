#pragma once

#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "memflow/error.hpp"

namespace memflow {

using NodeId = std::uint32_t;

enum class GateKind { And, FullAdder };

inline const char* to_string(GateKind kind) {
  return kind == GateKind::And ? "AND" : "FULL_ADDER";
}

// Terminal order:
//   And       -> (a, b, out)
//   FullAdder -> (a, b, carry_in, sum, carry_out)
struct Gate {
  GateKind kind;
  std::vector<NodeId> terminals;
};

/// Array multiplier built from AND gates and full adders.
///
/// Partial products p_i & q_j feed q_width - 1 ripple rows of p_width full
/// adders each. Unused adder inputs are tied to the single constant node
/// `gnd`. Product bit k is the node named `n<k>`.
class GateNetlist {
public:
  GateNetlist(unsigned p_width, unsigned q_width) : p_width_(p_width), q_width_(q_width) {}

  unsigned p_width() const noexcept { return p_width_; }
  unsigned q_width() const noexcept { return q_width_; }
  unsigned product_width() const noexcept { return p_width_ + q_width_; }

  const std::vector<std::string>& nodes() const noexcept { return names_; }
  const std::vector<Gate>& gates() const noexcept { return gates_; }
  std::size_t node_count() const noexcept { return names_.size(); }

  const std::vector<NodeId>& p_bits() const noexcept { return p_bits_; }
  const std::vector<NodeId>& q_bits() const noexcept { return q_bits_; }
  const std::vector<NodeId>& product_bits() const noexcept { return product_bits_; }
  NodeId ground() const noexcept { return ground_; }

  const std::string& name(NodeId id) const { return names_.at(id); }

  NodeId node_id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown netlist node '" + name + "'");
    return it->second;
  }

  std::size_t count(GateKind kind) const {
    std::size_t c = 0;
    for (const auto& g : gates_) c += (g.kind == kind);
    return c;
  }

  NodeId add_node(const std::string& name) {
    if (index_.count(name)) throw Error("duplicate netlist node '" + name + "'");
    const auto id = static_cast<NodeId>(names_.size());
    names_.push_back(name);
    index_.emplace(name, id);
    return id;
  }

  void add_gate(GateKind kind, std::vector<NodeId> terminals) {
    const std::size_t expected = kind == GateKind::And ? 3 : 5;
    if (terminals.size() != expected) throw Error("wrong terminal count for gate");
    for (auto t : terminals)
      if (t >= names_.size()) throw Error("gate terminal references unknown node");
    gates_.push_back(Gate{kind, std::move(terminals)});
  }

  /// Forward simulation: value of every node for inputs (p, q).
  std::vector<bool> simulate(std::uint64_t p, std::uint64_t q) const {
    std::vector<bool> value(names_.size(), false);
    for (unsigned i = 0; i < p_width_; ++i) value[p_bits_[i]] = (p >> i) & 1u;
    for (unsigned j = 0; j < q_width_; ++j) value[q_bits_[j]] = (q >> j) & 1u;
    value[ground_] = false;
    // Gates are stored in dependency order.
    for (const auto& g : gates_) {
      const auto& t = g.terminals;
      if (g.kind == GateKind::And) {
        value[t[2]] = value[t[0]] && value[t[1]];
      } else {
        const int s = int(value[t[0]]) + int(value[t[1]]) + int(value[t[2]]);
        value[t[3]] = (s & 1) != 0;
        value[t[4]] = s >= 2;
      }
    }
    return value;
  }

  std::uint64_t product_of(const std::vector<bool>& value) const { return decode(value, product_bits_); }
  std::uint64_t p_of(const std::vector<bool>& value) const { return decode(value, p_bits_); }
  std::uint64_t q_of(const std::vector<bool>& value) const { return decode(value, q_bits_); }

  /// One gate per line: kind followed by terminal names.
  void dump(std::ostream& os) const {
    os << "# multiplier p_width=" << p_width_ << " q_width=" << q_width_ << '\n';
    for (const auto& g : gates_) {
      os << to_string(g.kind);
      for (auto t : g.terminals) os << ' ' << names_[t];
      os << '\n';
    }
  }

  std::string dump() const {
    std::ostringstream os;
    dump(os);
    return os.str();
  }

private:
  friend GateNetlist build_multiplier(unsigned, unsigned);

  static std::uint64_t decode(const std::vector<bool>& value, const std::vector<NodeId>& bits) {
    std::uint64_t x = 0;
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (value.at(bits[i])) x |= std::uint64_t{1} << i;
    return x;
  }

  unsigned p_width_;
  unsigned q_width_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, NodeId> index_;
  std::vector<Gate> gates_;
  std::vector<NodeId> p_bits_;
  std::vector<NodeId> q_bits_;
  std::vector<NodeId> product_bits_;
  NodeId ground_ = 0;
};

/// Schoolbook multiplier: p_width*q_width AND gates and
/// (q_width-1)*p_width full adders.
inline GateNetlist build_multiplier(unsigned p_width, unsigned q_width) {
  if (p_width < 2 || q_width < 2) throw Error("factor widths must be at least 2 bits");
  if (p_width + q_width > 62) throw Error("product wider than 62 bits is not supported");

  const unsigned a = p_width;
  const unsigned b = q_width;
  GateNetlist net(a, b);
  auto nm = [](const char* prefix, unsigned x) { return prefix + std::to_string(x); };
  auto nm2 = [](const char* prefix, unsigned x, unsigned y) {
    return prefix + std::to_string(x) + "_" + std::to_string(y);
  };

  for (unsigned i = 0; i < a; ++i) net.p_bits_.push_back(net.add_node(nm("p", i)));
  for (unsigned j = 0; j < b; ++j) net.q_bits_.push_back(net.add_node(nm("q", j)));
  net.ground_ = net.add_node("gnd");
  net.product_bits_.assign(a + b, 0);

  std::vector<std::vector<NodeId>> pp(a, std::vector<NodeId>(b));
  for (unsigned j = 0; j < b; ++j) {
    for (unsigned i = 0; i < a; ++i) {
      pp[i][j] = net.add_node(i == 0 && j == 0 ? std::string("n0") : nm2("pp", i, j));
      net.add_gate(GateKind::And, {net.p_bits_[i], net.q_bits_[j], pp[i][j]});
    }
  }
  net.product_bits_[0] = pp[0][0];

  std::vector<NodeId> acc(a);
  for (unsigned i = 0; i < a; ++i) acc[i] = pp[i][0];
  NodeId carry_top = net.ground_;

  for (unsigned j = 1; j < b; ++j) {
    const bool last_row = j == b - 1;
    NodeId carry = net.ground_;
    std::vector<NodeId> next(a);
    for (unsigned i = 0; i < a; ++i) {
      const NodeId x = i + 1 < a ? acc[i + 1] : carry_top;
      std::string sum_name = i == 0 ? nm("n", j) : last_row ? nm("n", j + i) : nm2("s", j, i);
      std::string carry_name = (last_row && i + 1 == a) ? nm("n", a + b - 1) : nm2("c", j, i);
      const NodeId sum = net.add_node(sum_name);
      const NodeId cout = net.add_node(carry_name);
      net.add_gate(GateKind::FullAdder, {x, pp[i][j], carry, sum, cout});
      carry = cout;
      next[i] = sum;
      if (i == 0) net.product_bits_[j] = sum;
      if (last_row) net.product_bits_[j + i] = sum;
    }
    carry_top = carry;
    acc = std::move(next);
  }
  net.product_bits_[a + b - 1] = carry_top;
  return net;
}

}  // namespace memflow
