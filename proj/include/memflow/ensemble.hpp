#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

#include "memflow/cnf.hpp"
#include "memflow/dynamics.hpp"
#include "memflow/trajectory.hpp"

namespace memflow {

struct EnsembleConfig {
  std::shared_ptr<const ClauseSystem> system;
  FlowParams params;
  std::size_t run_count = 2;
  std::uint64_t base_seed = 1;
  IntegrateOptions integrate;
  unsigned threads = 1;

  std::uint64_t seed(std::size_t run) const { return derive_seed(base_seed, run); }
};

struct Ensemble {
  std::vector<std::uint64_t> seeds;
  std::vector<Trajectory> runs;
  std::vector<std::optional<InstantonPhase>> phases;

  std::size_t count(Termination t) const {
    return static_cast<std::size_t>(
        std::count_if(runs.begin(), runs.end(), [t](const Trajectory& r) { return r.termination == t; }));
  }

  std::size_t without_phase() const {
    return static_cast<std::size_t>(std::count(phases.begin(), phases.end(), std::nullopt));
  }

  bool partial() const { return count(Termination::Solved) != runs.size(); }
};

/// Runs `run_count` independent trajectories. Run i uses seed
/// derive_seed(base_seed, i) regardless of the thread layout, so results do not
/// depend on `threads`.
inline Ensemble run_ensemble(const EnsembleConfig& cfg) {
  if (!cfg.system) throw Error("ensemble has no clause system");
  if (cfg.run_count < 2) throw Error("ensemble needs at least 2 runs");
  const FlowModel model(*cfg.system, cfg.params);

  Ensemble ens;
  ens.seeds.resize(cfg.run_count);
  ens.runs.resize(cfg.run_count);
  ens.phases.resize(cfg.run_count);
  for (std::size_t i = 0; i < cfg.run_count; ++i) ens.seeds[i] = cfg.seed(i);

  const unsigned workers = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(cfg.run_count)));
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](unsigned w) {
    try {
      for (std::size_t i = w; i < cfg.run_count; i += workers) {
        ens.runs[i] = run_seeded(model, cfg.integrate, ens.seeds[i]);
        ens.phases[i] = detect_instanton_phase(ens.runs[i]);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return ens;
}

}  // namespace memflow
