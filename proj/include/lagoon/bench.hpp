#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lagoon/model.hpp"
#include "lagoon/optimizers.hpp"

namespace lagoon {

class Node;

// One experiment configuration: the shape of the instances to generate and
// how hard to push the optimizers on them.
struct TestSetup {
  std::string name;                     // labels CSV rows and table lines
  int machines = 1;                     // 1..4
  std::string machine_mix = "uniform";  // "uniform" | "mixed"
  int job_count = 16;                   // 16..60
  int recipe_count = 3;                 // 3..10
  std::uint64_t instance_seed = 1;      // work/interference profile
  std::int64_t budget = 10'000;         // 1000, 10000 or 100000
  int repetitions = 100;

  // Throws Error("spec-out-of-range") naming the offending field.
  void validate() const;

  std::string to_json() const;
  static TestSetup from_json(const std::string& text);
  static TestSetup load(const std::string& path);
};

// Deterministic instance for a validated setup. Base work is uniform in
// [5, 50]; uniform machines are speed 1, capacity 2, fully qualified; mixed
// machines draw speed from {0.5, 1.0, 2.0} and capacity from {1, 2, 3}, and
// each recipe loses qualification on at most floor(machines/2) machines while
// staying runnable somewhere. Interference entries are uniform in [0, 1].
Instance generate_setup(const TestSetup& spec, std::uint64_t seed);

// Like generate_setup but without the Table-style range checks and with
// balanced recipe assignment (job j gets recipe j mod recipes), so tiny
// instances with exact recipe counts can be built for oracle studies.
Instance small_instance(int machines, int job_count, int recipe_count,
                        std::uint64_t seed);

// The six shipped setups, spanning the corner cases of the supported ranges.
// Exactly one ("s5-mixed-unequal") uses mixed machines. Seeds are pinned so
// every run of the suite speaks about the same instances.
std::vector<TestSetup> canonical_setups();
TestSetup canonical_setup(const std::string& name);  // Error("unknown-setup")

// One summary line of a grid: best-makespan aggregate over the repetitions
// of a (setup, algorithm) cell, plus the summed optimization wall time.
struct ResultRow {
  std::string setup;
  std::string algorithm;
  double max = 0.0;
  double mean = 0.0;
  double min = 0.0;
  double wall_ms = 0.0;
};

struct GridResult {
  // Long format: "setup,algorithm,seed,best,evals,wall_ms", one line per
  // repetition, ordered by setup, then algorithm, then seed.
  std::string csv;
  std::vector<ResultRow> summary;
};

// Renders the summary in the Max | Mean | Min | Time layout.
std::string summary_table(const std::vector<ResultRow>& rows);

// Runs every (setup, algorithm) cell as one task through the node's
// management pipeline: the splitter fans the repetitions out over whatever
// workers are registered, local or connected. Repetition seeds are
// seed0..seed0+reps-1 in every cell, which is what makes distributed runs
// reproduce the single-process numbers. Throws Error("runtime-unreachable")
// when the node has no management chain or a cell never reports back.
GridResult run_grid(Node& node, const std::vector<TestSetup>& setups,
                    const std::vector<Algorithm>& algorithms,
                    std::uint64_t seed0, int timeout_seconds = 600);

// Brute-force-versus-heuristics study on one small setup.
struct OracleStat {
  std::string algorithm;
  int hits = 0;       // runs landing exactly on the optimum
  int runs = 0;
  double mean_gap = 0.0;  // relative excess over the optimum
  double max_gap = 0.0;
};

struct OracleReport {
  BigInt space;      // brute-force candidate count
  double optimum = 0.0;
  std::vector<OracleStat> stats;  // mc, rds, pso, cc
  std::string render() const;
};

// Enumerates the setup's instance exactly (Error("space-too-large") applies),
// then measures each heuristic's hit rate and gap over `seeds` seeded runs.
OracleReport oracle_check(const TestSetup& spec, std::int64_t budget = 10'000,
                          int seeds = 100);

}  // namespace lagoon
