#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "lagoon/error.hpp"
#include "lagoon/rng.hpp"

namespace lagoon {

using BigInt = boost::multiprecision::cpp_int;

// A recipe is a job type: it fixes the base processing work and, through the
// interference matrix, how the job degrades co-resident jobs.
struct Recipe {
  int id = 0;
  double base_work = 0.0;  // > 0, in work units
  std::string label;
};

struct Job {
  int id = 0;
  int recipe_id = 0;
};

struct Machine {
  int id = 0;
  double speed = 1.0;  // work units per time unit, > 0
  int capacity = 1;    // max concurrent jobs, >= 1
  std::set<int> qualified;  // recipe ids this machine may process
};

// One scheduling problem. Immutable once finalized; finalize() checks every
// invariant and builds the lookup tables the simulator needs.
struct Instance {
  std::vector<Recipe> recipes;
  std::vector<Job> jobs;
  std::vector<Machine> machines;
  // interference[a][b]: slowdown a co-resident job of recipe b adds to a job
  // of recipe a. The effective rate of a job of recipe a is
  // speed / (1 + sum of interference[a][b_j] over the other residents j).
  std::vector<std::vector<double>> interference;

  // Throws Error("invalid-instance") if any invariant is violated.
  void finalize();
  bool finalized() const { return finalized_; }

  int recipe_of(int job_id) const { return job_recipe_[job_index(job_id)]; }
  double work_of(int job_id) const { return recipes[recipe_of(job_id)].base_work; }
  std::size_t job_index(int job_id) const;
  bool qualified(int machine_id, int recipe_id) const {
    return qual_[static_cast<std::size_t>(machine_id) * recipes.size() + recipe_id];
  }

  std::size_t job_count() const { return jobs.size(); }
  std::size_t machine_count() const { return machines.size(); }
  std::size_t recipe_count() const { return recipes.size(); }

  // Number of jobs per recipe, derived from the job list.
  std::vector<int> recipe_counts() const;

  std::string to_json() const;
  static Instance from_json(const std::string& text);
  static Instance load(const std::string& path);

private:
  bool finalized_ = false;
  std::vector<int> job_recipe_;   // by job index
  std::vector<int> job_id_at_;    // index -> id
  bool dense_ids_ = false;
  std::vector<char> qual_;        // machine x recipe
};

// Processing order of jobs on one machine; entries are job ids.
using Sequence = std::vector<int>;

// A full solution: one sequence per machine, indexed by machine id.
struct Schedule {
  std::vector<Sequence> sequences;

  bool operator==(const Schedule& other) const = default;
  std::size_t total_jobs() const;
  // Sequences concatenated in machine-id order.
  Sequence concatenated() const;
};

struct ScheduleViolation {
  std::string kind;  // "duplicate-job", "missing-job", "unknown-job", "unqualified", "shape-mismatch"
  int job_id = -1;
  int machine_id = -1;
  std::string message;
};

// Eq-style exact count of distinct sequences of L jobs grouped by recipe:
// L! / prod(recipe_counts[i]!). Throws Error("counts-do-not-sum-to-L").
BigInt count_permutations(int total_jobs, const std::vector<int>& recipe_counts);

// sqrt(2*pi*L) * (L/e)^L, the classic factorial approximation.
double stirling_factorial(int total_jobs);

// Empty result means the schedule is valid.
std::vector<ScheduleViolation> validate_schedule(const Instance& instance, const Schedule& schedule);

// Splits an overall sequence into contiguous chunks, one per machine in id
// order; sizes differ by at most one and earlier machines take the remainder.
// Throws Error("qualification-violation") if the cut would put a job on a
// machine not qualified for its recipe; callers fall back to repair or
// dynamic partitioning.
Schedule cut_into_chunks(const Instance& instance, const Sequence& overall);

// Like cut_into_chunks but moves every unqualified placement to a uniformly
// chosen qualified machine (appended to its sequence). Always succeeds.
Schedule cut_with_repair(const Instance& instance, const Sequence& overall, Rng& rng);

}  // namespace lagoon
