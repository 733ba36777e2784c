#pragma once

#include <map>
#include <string>
#include <vector>

#include "lagoon/model.hpp"

namespace lagoon {

struct SimEvent {
  double time = 0.0;
  int machine = 0;
  int job = 0;
  enum class Kind { Admit, Finish } kind = Kind::Admit;
};

struct SimResult {
  double makespan = 0.0;
  std::map<int, double> completion;        // job id -> completion time
  std::vector<SimEvent> trace;             // ordered, non-decreasing in time
  std::vector<double> machine_makespans;   // last finish per machine, 0 if idle
  int evaluations_consumed = 1;

  // CSV lines "time,machine,job,event", one event per line.
  std::string trace_csv() const;
};

// Deterministic discrete-event evaluation of a schedule. Jobs are admitted
// per machine strictly in sequence order whenever a capacity slot is free;
// between events every resident job of recipe a runs at
// speed / (1 + sum interference[a][b] over the other residents). Rates are
// recomputed at every admit and finish. Throws Error("invalid-schedule") if
// the schedule fails validation.
SimResult simulate(const Instance& instance, const Schedule& schedule);

// Same event arithmetic as simulate() but without trace or completion-map
// bookkeeping; the optimizers call this millions of times and only need the
// scalar objective. Optionally reports per-machine makespans.
double simulate_makespan(const Instance& instance, const Schedule& schedule,
                         std::vector<double>* machine_makespans = nullptr);

double makespan(const Instance& instance, const Schedule& schedule);

}  // namespace lagoon
