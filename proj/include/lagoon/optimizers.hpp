#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lagoon/model.hpp"
#include "lagoon/rng.hpp"
#include "lagoon/simulator.hpp"

namespace lagoon {

enum class Algorithm { MC, RDS, PSO, CC, BRUTE };

std::string algorithm_name(Algorithm a);
std::optional<Algorithm> parse_algorithm(const std::string& name);

// Algorithm-specific knobs; keys are the exact names used on the wire.
using Params = std::map<std::string, double>;

struct HistoryPoint {
  std::int64_t evaluation;  // 1-based index of the simulate call
  double best;              // best makespan after that call
};

struct OptRun {
  Algorithm algorithm = Algorithm::MC;
  std::int64_t budget = 0;
  std::uint64_t seed = 0;
  Params params;
  Schedule best_schedule;
  double best_makespan = 0.0;
  std::vector<HistoryPoint> history;  // improvement points; non-increasing
  std::int64_t evals_used = 0;
  int reinitializations = 0;
};

// Meters simulate calls against a budget and tracks best-so-far. Every
// candidate an optimizer evaluates goes through here, which is what the
// budget-law and validity tests instrument.
class Evaluator {
public:
  Evaluator(const Instance& instance, std::int64_t budget);

  double evaluate(const Schedule& candidate);

  bool exhausted() const;
  std::int64_t remaining() const { return budget_ - used_; }
  std::int64_t used() const { return used_; }
  double best() const { return best_; }
  const Schedule& best_schedule() const { return best_schedule_; }
  const std::vector<HistoryPoint>& history() const { return history_; }
  // Per-machine makespans of the most recent evaluate() call.
  const std::vector<double>& last_machine_makespans() const { return last_machine_makespans_; }

  // When set, every candidate is validated before simulation (test harness).
  void set_validate_candidates(bool v) { validate_candidates_ = v; }
  // Cooperative cancellation; exhausted() turns true once the flag is set.
  void set_cancel_flag(const std::atomic<bool>* flag) { cancel_ = flag; }

private:
  const Instance& instance_;
  std::int64_t budget_;
  std::int64_t used_ = 0;
  double best_;
  Schedule best_schedule_;
  std::vector<HistoryPoint> history_;
  std::vector<double> last_machine_makespans_;
  bool validate_candidates_ = false;
  const std::atomic<bool>* cancel_ = nullptr;
};

// Uniformly shuffled overall sequence, cut into equisized chunks with
// qualification repair. Always a valid schedule.
Schedule random_schedule(const Instance& instance, Rng& rng);

// Positions i and j exchanged. Throws Error("index-out-of-range").
Sequence swap_move(const Sequence& seq, std::size_t i, std::size_t j);

// Position-mismatch count across the concatenated machine sequences plus the
// number of jobs assigned to different machines. 0 iff identical; symmetric.
// Throws Error("job-sets-differ") if the job multisets disagree.
int transposition_distance(const Schedule& a, const Schedule& b);

// One swarm "toward" step: a qualification-valid swap that places one job
// into the position it holds in `target`, shrinking transposition_distance
// by at least 1. nullopt when no such swap exists (e.g. already at the
// target); callers fall back to a random swap.
std::optional<Schedule> toward_swap(const Instance& instance, const Schedule& current,
                                    const Schedule& target, Rng& rng);

struct OptOptions {
  const std::atomic<bool>* cancel = nullptr;
  bool validate_candidates = false;
};

OptRun monte_carlo(const Instance& instance, std::int64_t budget, std::uint64_t seed,
                   const OptOptions& opts = {});

// Stochastic hill climbing over job swaps with reinitialization after
// reinit_limit consecutive non-improving evaluations.
OptRun rds(const Instance& instance, std::int64_t budget, std::uint64_t seed,
           const Params& params = {}, const OptOptions& opts = {});

// Discrete particle swarm; params: swarm_size, w_random, w_local, w_global,
// pseudo_count, pseudo_local_budget. Pseudo particles run an embedded
// hill-climbing burst seeded from the current global best.
OptRun pso(const Instance& instance, std::int64_t budget, std::uint64_t seed,
           const Params& params = {}, const OptOptions& opts = {});

// Alternates per-machine sequencing (intra-machine RDS) with shifting a job
// from the highest-makespan machine to the lowest-makespan one; outer
// reinitializations restart from fresh random partitions.
// params: reinits, rds_iters.
OptRun central_complex(const Instance& instance, std::int64_t budget, std::uint64_t seed,
                       const Params& params = {}, const OptOptions& opts = {});

// Deterministic parameter rule for central_complex at a given budget.
Params meta_params(const Instance& instance, std::int64_t budget);

// Exhaustive search over every distinct (partition, per-machine recipe
// sequence) combination that respects qualifications. Jobs of the same recipe
// are interchangeable, so enumeration is by recipe pattern.
// Throws Error("space-too-large") if the predicted candidate count exceeds
// the limit.
OptRun brute_force(const Instance& instance, std::int64_t space_limit = 10'000'000);

// Predicted brute-force candidate count (sum over feasible partitions of the
// per-machine distinct-sequence products).
BigInt brute_force_space(const Instance& instance);

// Unified entry point used by workers and the CLI.
OptRun run_algorithm(Algorithm algo, const Instance& instance, std::int64_t budget,
                     std::uint64_t seed, const Params& params = {}, const OptOptions& opts = {});

}  // namespace lagoon
