#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <limits>
#include <vector>

#include "memflow/cnf.hpp"
#include "memflow/error.hpp"

namespace memflow {

inline constexpr std::uint32_t kUnreachable = std::numeric_limits<std::uint32_t>::max();

/// Undirected graph over the free (non-unit) variables of a clause system;
/// two variables are adjacent iff they share a clause. All-pairs BFS
/// distances are computed once at construction.
class LiteralGraph {
public:
  explicit LiteralGraph(const ClauseSystem& cs) : num_vars_(cs.num_vars), slot_(cs.num_vars, kNone) {
    const auto fixed = cs.unit_values();
    for (Var v = 0; v < cs.num_vars; ++v) {
      if (fixed[v] >= 0) continue;
      slot_[v] = static_cast<std::uint32_t>(vertices_.size());
      vertices_.push_back(v);
    }
    adj_.resize(vertices_.size());
    for (const auto& c : cs.clauses) {
      for (std::size_t i = 0; i < c.size(); ++i) {
        for (std::size_t j = i + 1; j < c.size(); ++j) {
          const auto a = slot_[c[i].var], b = slot_[c[j].var];
          if (a == kNone || b == kNone || a == b) continue;
          adj_[a].push_back(b);
          adj_[b].push_back(a);
        }
      }
    }
    for (auto& row : adj_) {
      std::sort(row.begin(), row.end());
      row.erase(std::unique(row.begin(), row.end()), row.end());
    }
    compute_distances();
  }

  std::size_t vertex_count() const noexcept { return vertices_.size(); }
  const std::vector<Var>& vertices() const noexcept { return vertices_; }
  bool contains(Var v) const noexcept { return v < num_vars_ && slot_[v] != kNone; }

  std::vector<Var> neighbors(Var v) const {
    std::vector<Var> out;
    for (auto s : adj_[slot(v)]) out.push_back(vertices_[s]);
    return out;
  }

  bool adjacent(Var a, Var b) const {
    const auto& row = adj_[slot(a)];
    return std::binary_search(row.begin(), row.end(), slot(b));
  }

  /// Shortest-path length, kUnreachable when disconnected.
  std::uint32_t distance(Var a, Var b) const { return dist_[slot(a) * vertices_.size() + slot(b)]; }

  std::uint32_t diameter() const noexcept { return diameter_; }

  /// One shortest path a -> b (inclusive), empty when unreachable.
  std::vector<Var> shortest_path(Var a, Var b) const {
    const auto sa = slot(a), sb = slot(b);
    if (distance(a, b) == kUnreachable) return {};
    std::vector<Var> path{a};
    auto cur = sa;
    while (cur != sb) {
      for (auto n : adj_[cur]) {
        if (dist_[n * vertices_.size() + sb] + 1 == dist_[cur * vertices_.size() + sb]) {
          cur = n;
          break;
        }
      }
      path.push_back(vertices_[cur]);
    }
    return path;
  }

private:
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

  std::uint32_t slot(Var v) const {
    if (!contains(v)) throw Error("variable " + std::to_string(v) + " is not a graph vertex");
    return slot_[v];
  }

  void compute_distances() {
    const std::size_t n = vertices_.size();
    dist_.assign(n * n, kUnreachable);
    std::deque<std::uint32_t> queue;
    for (std::uint32_t s = 0; s < n; ++s) {
      auto* row = &dist_[s * n];
      row[s] = 0;
      queue.assign(1, s);
      while (!queue.empty()) {
        const auto u = queue.front();
        queue.pop_front();
        for (auto w : adj_[u]) {
          if (row[w] != kUnreachable) continue;
          row[w] = row[u] + 1;
          queue.push_back(w);
        }
      }
      for (std::size_t t = 0; t < n; ++t)
        if (row[t] != kUnreachable) diameter_ = std::max(diameter_, row[t]);
    }
  }

  std::size_t num_vars_;
  std::vector<std::uint32_t> slot_;
  std::vector<Var> vertices_;
  std::vector<std::vector<std::uint32_t>> adj_;
  std::vector<std::uint32_t> dist_;
  std::uint32_t diameter_ = 0;
};

inline LiteralGraph literal_graph(const ClauseSystem& cs) { return LiteralGraph(cs); }

inline std::uint32_t graph_distance(const LiteralGraph& g, Var a, Var b) { return g.distance(a, b); }

}  // namespace memflow
