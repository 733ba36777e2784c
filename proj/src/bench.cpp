#include "lagoon/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "lagoon/error.hpp"
#include "lagoon/runtime.hpp"

namespace lagoon {

using nlohmann::json;

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error("spec-out-of-range", what);
}

// Shared construction behind generate_setup and small_instance. The draw
// order (works, job recipes, machines, qualification, interference) is part
// of the reproducibility contract: reordering it would silently change every
// pinned instance.
Instance build_instance(int machines, const std::string& mix, int jobs,
                        int recipes, std::uint64_t seed, bool balanced) {
  Rng rng(seed);
  Instance inst;
  for (int r = 0; r < recipes; ++r)
    inst.recipes.push_back({r, rng.uniform(5.0, 50.0), "R" + std::to_string(r)});

  for (int j = 0; j < jobs; ++j) {
    const int recipe =
        balanced ? j % recipes : static_cast<int>(rng.index(recipes));
    inst.jobs.push_back({j, recipe});
  }

  const bool mixed = (mix == "mixed");
  static constexpr double kSpeeds[] = {0.5, 1.0, 2.0};
  for (int m = 0; m < machines; ++m) {
    Machine mach;
    mach.id = m;
    mach.speed = mixed ? kSpeeds[rng.index(3)] : 1.0;
    mach.capacity = mixed ? 1 + static_cast<int>(rng.index(3)) : 2;
    for (int r = 0; r < recipes; ++r) mach.qualified.insert(r);
    inst.machines.push_back(std::move(mach));
  }

  if (mixed && machines > 1) {
    // Strip each recipe from a few machines, but never from its last holder
    // and never a machine's last recipe: every job must stay runnable and
    // every machine useful.
    const int max_drop = machines / 2;
    for (int r = 0; r < recipes; ++r) {
      const int drops = static_cast<int>(rng.index(max_drop + 1));
      for (int d = 0; d < drops; ++d) {
        const int m = static_cast<int>(rng.index(machines));
        int holders = 0;
        for (const auto& mm : inst.machines)
          holders += static_cast<int>(mm.qualified.count(r));
        if (holders <= 1) break;
        if (inst.machines[m].qualified.size() > 1)
          inst.machines[m].qualified.erase(r);
      }
    }
  }

  inst.interference.assign(recipes, std::vector<double>(recipes, 0.0));
  for (auto& row : inst.interference)
    for (auto& beta : row) beta = rng.uniform(0.0, 1.0);

  inst.finalize();
  return inst;
}

}  // namespace

void TestSetup::validate() const {
  require(machines >= 1 && machines <= 4,
          "machines is " + std::to_string(machines) + ", supported range is 1..4");
  require(machine_mix == "uniform" || machine_mix == "mixed",
          "machine_mix '" + machine_mix + "' is neither 'uniform' nor 'mixed'");
  require(job_count >= 16 && job_count <= 60,
          "job_count is " + std::to_string(job_count) + ", supported range is 16..60");
  require(recipe_count >= 3 && recipe_count <= 10,
          "recipe_count is " + std::to_string(recipe_count) +
              ", supported range is 3..10");
  require(budget == 1'000 || budget == 10'000 || budget == 100'000,
          "budget is " + std::to_string(budget) + ", pick 1000, 10000 or 100000");
  require(repetitions >= 1 && repetitions <= 10'000,
          "repetitions is " + std::to_string(repetitions) +
              ", supported range is 1..10000");
}

std::string TestSetup::to_json() const {
  const json j{{"name", name},
               {"machines", machines},
               {"machine_mix", machine_mix},
               {"job_count", job_count},
               {"recipe_count", recipe_count},
               {"instance_seed", instance_seed},
               {"budget", budget},
               {"repetitions", repetitions}};
  return j.dump(2);
}

TestSetup TestSetup::from_json(const std::string& text) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw Error("invalid-setup", "setup is not a JSON object");
  TestSetup s;
  try {
    s.name = j.value("name", std::string{});
    s.machines = j.value("machines", s.machines);
    s.machine_mix = j.value("machine_mix", s.machine_mix);
    s.job_count = j.value("job_count", s.job_count);
    s.recipe_count = j.value("recipe_count", s.recipe_count);
    s.instance_seed = j.value("instance_seed", s.instance_seed);
    s.budget = j.value("budget", s.budget);
    s.repetitions = j.value("repetitions", s.repetitions);
  } catch (const json::exception& e) {
    throw Error("invalid-setup", e.what());
  }
  return s;
}

TestSetup TestSetup::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io-error", "cannot read setup file '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

Instance generate_setup(const TestSetup& spec, std::uint64_t seed) {
  spec.validate();
  return build_instance(spec.machines, spec.machine_mix, spec.job_count,
                        spec.recipe_count, seed, /*balanced=*/false);
}

Instance small_instance(int machines, int job_count, int recipe_count,
                        std::uint64_t seed) {
  require(machines >= 1 && job_count >= 1 && recipe_count >= 1 &&
              recipe_count <= job_count,
          "a small instance needs at least one machine and one job per recipe");
  return build_instance(machines, "uniform", job_count, recipe_count, seed,
                        /*balanced=*/true);
}

std::vector<TestSetup> canonical_setups() {
  const auto make = [](const char* name, int machines, const char* mix,
                       int jobs, int recipes, std::uint64_t instance_seed) {
    TestSetup s;
    s.name = name;
    s.machines = machines;
    s.machine_mix = mix;
    s.job_count = jobs;
    s.recipe_count = recipes;
    s.instance_seed = instance_seed;
    return s;
  };
  // Seeds are pinned: the suite's directional claims are statements about
  // these exact instances. s5 is the one mixed-machine member of the family.
  return {
      make("s1-single-narrow", 1, "uniform", 20, 4, 1),
      make("s2-single-wide", 1, "uniform", 32, 6, 1),
      make("s3-dual-compact", 2, "uniform", 24, 6, 6),
      make("s4-quad-broad", 4, "uniform", 60, 10, 104),
      make("s5-mixed-pair", 2, "mixed", 60, 3, 6),
      make("s6-triple-mid", 3, "uniform", 40, 5, 103),
  };
}

TestSetup canonical_setup(const std::string& name) {
  for (auto& s : canonical_setups())
    if (s.name == name) return s;
  std::string known;
  for (const auto& s : canonical_setups())
    known += (known.empty() ? "" : ", ") + s.name;
  throw Error("unknown-setup", "no canonical setup '" + name + "' (have: " + known + ")");
}

std::string summary_table(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-18s %-6s %10s %10s %10s %10s\n", "Setup",
                "Algo", "Max", "Mean", "Min", "Time [s]");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-18s %-6s %10.2f %10.2f %10.2f %10.2f\n",
                  r.setup.c_str(), r.algorithm.c_str(), r.max, r.mean, r.min,
                  r.wall_ms / 1000.0);
    out << line;
  }
  return out.str();
}

GridResult run_grid(Node& node, const std::vector<TestSetup>& setups,
                    const std::vector<Algorithm>& algorithms,
                    std::uint64_t seed0, int timeout_seconds) {
  GridResult grid;
  grid.csv = "setup,algorithm,seed,best,evals,wall_ms\n";
  if (setups.empty() || algorithms.empty()) return grid;
  for (const auto& s : setups) s.validate();

  const auto collectors = node.lookup(Role::Collector);
  const bool chain_ready = !collectors.empty() &&
                           !node.lookup(Role::Controller).empty() &&
                           !node.lookup(Role::Splitter).empty() &&
                           !node.lookup(Role::Answer).empty() &&
                           !node.lookup(Role::LoadBalancer).empty();
  if (!chain_ready)
    throw Error("runtime-unreachable",
                "the runtime is missing management agents or workers");

  static std::atomic<int> grid_counter{0};
  const std::string sink_name =
      node.name() + "/grid-" + std::to_string(++grid_counter);
  auto& sink = dynamic_cast<ResultSinkAgent&>(
      node.add_agent(std::make_unique<ResultSinkAgent>(node, sink_name)));

  struct Cell {
    const TestSetup* setup;
    Algorithm algo;
    EnvelopeId id;
  };
  std::vector<Cell> cells;
  for (const auto& setup : setups) {
    const Instance instance = generate_setup(setup, setup.instance_seed);
    for (const Algorithm algo : algorithms) {
      TaskPackage task;
      task.instance_ref = setup.name;
      task.instance = instance;
      task.algorithm = algo;
      task.budget = setup.budget;
      task.seed = seed0;
      task.repetitions = setup.repetitions;
      Envelope env = make_task_envelope(std::move(task), 5,
                                        {ChannelKind::Callback, sink_name});
      cells.push_back({&setup, algo, env.id});
      node.enqueue(collectors.front().name, std::move(env));
    }
  }

  if (!sink.wait_for(cells.size(),
                     std::chrono::milliseconds(1000LL * timeout_seconds))) {
    throw Error("runtime-unreachable",
                "grid timed out: " + std::to_string(sink.results().size()) +
                    " of " + std::to_string(cells.size()) + " cells reported");
  }

  const std::vector<ResultPackage> results = sink.results();
  for (const Cell& cell : cells) {
    const ResultPackage* r = nullptr;
    for (const auto& candidate : results)
      if (candidate.task_id == cell.id) r = &candidate;
    const std::string label =
        cell.setup->name + "/" + algorithm_name(cell.algo);
    if (!r) throw Error("runtime-unreachable", "no result for cell " + label);
    if (r->status != "done")
      throw Error("grid-failed", "cell " + label + ": " + r->error);
    std::vector<ResultDetail> details = r->details;
    if (static_cast<int>(details.size()) != cell.setup->repetitions)
      throw Error("grid-failed",
                  "cell " + label + ": " + std::to_string(details.size()) +
                      " of " + std::to_string(cell.setup->repetitions) +
                      " repetitions reported");
    std::sort(details.begin(), details.end(),
              [](const ResultDetail& a, const ResultDetail& b) {
                return a.seed < b.seed;
              });

    ResultRow row;
    row.setup = cell.setup->name;
    row.algorithm = algorithm_name(cell.algo);
    row.min = details.front().makespan;
    row.max = row.min;
    double sum = 0.0;
    for (const auto& d : details) {
      char line[256];
      std::snprintf(line, sizeof line, "%s,%s,%llu,%.17g,%lld,%.3f\n",
                    row.setup.c_str(), row.algorithm.c_str(),
                    static_cast<unsigned long long>(d.seed), d.makespan,
                    static_cast<long long>(d.evals), d.wall_ms);
      grid.csv += line;
      row.min = std::min(row.min, d.makespan);
      row.max = std::max(row.max, d.makespan);
      sum += d.makespan;
      row.wall_ms += d.wall_ms;
    }
    row.mean = sum / static_cast<double>(details.size());
    grid.summary.push_back(std::move(row));
  }
  return grid;
}

std::string OracleReport::render() const {
  std::ostringstream out;
  out << "search space: " << space.str() << " candidates\n";
  char line[256];
  std::snprintf(line, sizeof line, "optimum makespan: %.6f\n", optimum);
  out << line;
  std::snprintf(line, sizeof line, "%-6s %8s %12s %12s\n", "algo", "hits",
                "mean gap", "max gap");
  out << line;
  for (const auto& s : stats) {
    std::snprintf(line, sizeof line, "%-6s %4d/%-4d %11.2f%% %11.2f%%\n",
                  s.algorithm.c_str(), s.hits, s.runs, 100.0 * s.mean_gap,
                  100.0 * s.max_gap);
    out << line;
  }
  return out.str();
}

OracleReport oracle_check(const TestSetup& spec, std::int64_t budget,
                          int seeds) {
  const Instance instance = small_instance(spec.machines, spec.job_count,
                                           spec.recipe_count, spec.instance_seed);
  OracleReport report;
  report.space = brute_force_space(instance);
  const OptRun exact = brute_force(instance);
  report.optimum = exact.best_makespan;

  for (const Algorithm algo :
       {Algorithm::MC, Algorithm::RDS, Algorithm::PSO, Algorithm::CC}) {
    OracleStat stat;
    stat.algorithm = algorithm_name(algo);
    stat.runs = seeds;
    double gap_sum = 0.0;
    for (int s = 0; s < seeds; ++s) {
      const OptRun run = run_algorithm(algo, instance, budget,
                                       static_cast<std::uint64_t>(s) + 1);
      const double gap =
          (run.best_makespan - report.optimum) / report.optimum;
      if (run.best_makespan <= report.optimum + 1e-9) ++stat.hits;
      gap_sum += std::max(0.0, gap);
      stat.max_gap = std::max(stat.max_gap, gap);
    }
    stat.mean_gap = seeds > 0 ? gap_sum / seeds : 0.0;
    report.stats.push_back(std::move(stat));
  }
  return report;
}

}  // namespace lagoon
