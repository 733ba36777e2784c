#pragma once
// Builders, fixture instances, and little oracles shared by the test binaries.

#include <string>
#include <vector>

#include "lagoon/model.hpp"
#include "lagoon/rng.hpp"

namespace testutil {

struct MachineSpec {
  double speed = 1.0;
  int capacity = 1;
  std::vector<int> qualified;  // empty means qualified for every recipe
};

inline lagoon::Instance make_instance(const std::vector<double>& recipe_works,
                                      const std::vector<int>& job_recipes,
                                      const std::vector<MachineSpec>& machines,
                                      std::vector<std::vector<double>> interference = {}) {
  lagoon::Instance inst;
  for (std::size_t r = 0; r < recipe_works.size(); ++r) {
    inst.recipes.push_back({static_cast<int>(r), recipe_works[r], "R" + std::to_string(r)});
  }
  for (std::size_t j = 0; j < job_recipes.size(); ++j) {
    inst.jobs.push_back({static_cast<int>(j), job_recipes[j]});
  }
  for (std::size_t m = 0; m < machines.size(); ++m) {
    lagoon::Machine mach;
    mach.id = static_cast<int>(m);
    mach.speed = machines[m].speed;
    mach.capacity = machines[m].capacity;
    if (machines[m].qualified.empty()) {
      for (std::size_t r = 0; r < recipe_works.size(); ++r) mach.qualified.insert(static_cast<int>(r));
    } else {
      mach.qualified.insert(machines[m].qualified.begin(), machines[m].qualified.end());
    }
    inst.machines.push_back(std::move(mach));
  }
  if (interference.empty()) {
    interference.assign(recipe_works.size(), std::vector<double>(recipe_works.size(), 0.0));
  }
  inst.interference = std::move(interference);
  inst.finalize();
  return inst;
}

// One job of work 10 on one unit machine: makespan 10.
inline lagoon::Instance single_job() {
  return make_instance({10.0}, {0}, {{1.0, 1, {}}});
}

// Two jobs of the same recipe, capacity 2, self-interference 0.5: running
// both concurrently gives makespan 15 versus 20 sequentially.
inline lagoon::Instance two_concurrent() {
  return make_instance({10.0}, {0, 0}, {{1.0, 2, {}}}, {{0.5}});
}

// The three-job fixture: A(10), A(10), B(4) on one capacity-2 machine with
// strong A-A interference. Sequence [A,A,B] gives 24, [A,B,A] gives 20.
inline lagoon::Instance aab() {
  return make_instance({10.0, 4.0}, {0, 0, 1}, {{1.0, 2, {}}},
                       {{1.0, 0.0}, {0.0, 0.0}});
}

// Randomized instance for property tests. With restrict_quals each recipe is
// dropped from a few machines while keeping at least one qualified machine.
inline lagoon::Instance random_instance(lagoon::Rng& rng, int machines, int jobs, int recipes,
                                        bool restrict_quals = false) {
  std::vector<double> works;
  for (int r = 0; r < recipes; ++r) works.push_back(rng.uniform(5.0, 50.0));

  std::vector<int> job_recipes;
  for (int j = 0; j < jobs; ++j) job_recipes.push_back(static_cast<int>(rng.index(recipes)));

  std::vector<MachineSpec> specs;
  for (int m = 0; m < machines; ++m) {
    MachineSpec s;
    s.speed = 0.5 + rng.index(3) * 0.75;  // 0.5, 1.25 or 2.0
    s.capacity = 1 + static_cast<int>(rng.index(3));
    for (int r = 0; r < recipes; ++r) s.qualified.push_back(r);
    specs.push_back(std::move(s));
  }
  if (restrict_quals && machines > 1) {
    for (int r = 0; r < recipes; ++r) {
      const int drop = static_cast<int>(rng.index(machines / 2 + 1));
      for (int d = 0; d < drop; ++d) {
        const int m = static_cast<int>(rng.index(machines));
        // keep the recipe runnable somewhere
        int holders = 0;
        for (const auto& s : specs) {
          for (int q : s.qualified) {
            if (q == r) ++holders;
          }
        }
        if (holders <= 1) break;
        auto& qual = specs[m].qualified;
        std::erase(qual, r);
      }
    }
    for (auto& s : specs) {
      if (s.qualified.empty()) s.qualified.push_back(0);
    }
  }

  std::vector<std::vector<double>> beta(recipes, std::vector<double>(recipes, 0.0));
  for (int a = 0; a < recipes; ++a) {
    for (int b = 0; b < recipes; ++b) beta[a][b] = rng.uniform(0.0, 1.0);
  }
  return make_instance(works, job_recipes, specs, beta);
}

// Independent oracle: number of distinct sequences of a multiset, counted by
// walking every sequence recursively. Exponential; only for small totals.
inline long long count_multiset_perms(std::vector<int>& counts) {
  bool done = true;
  for (int c : counts) {
    if (c > 0) {
      done = false;
      break;
    }
  }
  if (done) return 1;
  long long total = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) continue;
    counts[i]--;
    total += count_multiset_perms(counts);
    counts[i]++;
  }
  return total;
}

// All integer partitions of n as non-increasing count lists.
inline void partitions_of(int n, int max_part, std::vector<int>& cur,
                          std::vector<std::vector<int>>& out) {
  if (n == 0) {
    out.push_back(cur);
    return;
  }
  for (int p = std::min(n, max_part); p >= 1; --p) {
    cur.push_back(p);
    partitions_of(n - p, p, cur, out);
    cur.pop_back();
  }
}

inline std::vector<std::vector<int>> partitions_of(int n) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  partitions_of(n, n, cur, out);
  return out;
}

// Runs f and returns the lagoon::Error code it throws, or "" if it doesn't.
template <typename F>
std::string error_code_of(F&& f) {
  try {
    f();
  } catch (const lagoon::Error& e) {
    return e.code();
  }
  return "";
}

}  // namespace testutil
