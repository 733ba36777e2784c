#include "lagoon/simulator.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>

namespace lagoon {

namespace {

struct Resident {
  int job_id;
  int recipe;
  double remaining;
};

// Simulates one machine in isolation; machines never interact. The recording
// variant fills the event trace and completion map, the light variant only
// tracks the last finish time. Both share the identical event arithmetic.
template <bool Record>
double simulate_machine(const Instance& inst, int machine_id, const Sequence& seq, SimResult* out) {
  const Machine& mach = inst.machines[machine_id];
  const std::size_t cap = static_cast<std::size_t>(mach.capacity);

  thread_local std::vector<Resident> residents;
  thread_local std::vector<double> rates;
  residents.clear();
  rates.assign(cap, 0.0);

  std::size_t next = 0;
  double now = 0.0;
  double last_finish = 0.0;

  while (next < seq.size() || !residents.empty()) {
    while (residents.size() < cap && next < seq.size()) {
      const int job_id = seq[next++];
      residents.push_back({job_id, inst.recipe_of(job_id), inst.work_of(job_id)});
      if constexpr (Record) {
        out->trace.push_back({now, machine_id, job_id, SimEvent::Kind::Admit});
      }
    }

    // Piecewise-constant rates until the next finish.
    for (std::size_t i = 0; i < residents.size(); ++i) {
      double slowdown = 1.0;
      for (std::size_t j = 0; j < residents.size(); ++j) {
        if (j == i) continue;
        slowdown += inst.interference[residents[i].recipe][residents[j].recipe];
      }
      rates[i] = mach.speed / slowdown;
    }

    double dt = std::numeric_limits<double>::infinity();
    std::size_t argmin = 0;
    for (std::size_t i = 0; i < residents.size(); ++i) {
      const double t = residents[i].remaining / rates[i];
      if (t < dt) {
        dt = t;
        argmin = i;
      }
    }

    now += dt;
    for (std::size_t i = 0; i < residents.size(); ++i) {
      residents[i].remaining -= rates[i] * dt;
    }
    residents[argmin].remaining = 0.0;  // exact for the event owner

    if constexpr (Record) {
      // Ties finish in job-id order so identical inputs give identical traces.
      std::vector<int> finished;
      for (const Resident& r : residents) {
        if (r.remaining <= 0.0) finished.push_back(r.job_id);
      }
      std::sort(finished.begin(), finished.end());
      for (int job_id : finished) {
        out->trace.push_back({now, machine_id, job_id, SimEvent::Kind::Finish});
        out->completion[job_id] = now;
      }
    }
    bool any_finished = false;
    for (const Resident& r : residents) {
      if (r.remaining <= 0.0) {
        any_finished = true;
        break;
      }
    }
    if (any_finished) last_finish = now;
    residents.erase(std::remove_if(residents.begin(), residents.end(),
                                   [](const Resident& r) { return r.remaining <= 0.0; }),
                    residents.end());
  }

  return last_finish;
}

// Cheap validity check for the hot path; falls back to validate_schedule for
// a descriptive error when it fails.
bool quick_valid(const Instance& inst, const Schedule& s) {
  if (s.sequences.size() != inst.machine_count()) return false;
  thread_local std::vector<char> seen;
  seen.assign(inst.job_count(), 0);
  std::size_t total = 0;
  for (std::size_t m = 0; m < s.sequences.size(); ++m) {
    for (int job_id : s.sequences[m]) {
      std::size_t idx;
      try {
        idx = inst.job_index(job_id);
      } catch (const Error&) {
        return false;
      }
      if (seen[idx]) return false;
      seen[idx] = 1;
      total++;
      if (!inst.qualified(static_cast<int>(m), inst.recipe_of(job_id))) return false;
    }
  }
  return total == inst.job_count();
}

void throw_invalid(const Instance& inst, const Schedule& s) {
  const auto violations = validate_schedule(inst, s);
  std::string what = "schedule invalid:";
  for (const auto& v : violations) what += " [" + v.message + "]";
  throw Error("invalid-schedule", what);
}

}  // namespace

SimResult simulate(const Instance& instance, const Schedule& schedule) {
  if (!quick_valid(instance, schedule)) throw_invalid(instance, schedule);

  SimResult out;
  out.machine_makespans.assign(instance.machine_count(), 0.0);
  for (std::size_t m = 0; m < instance.machine_count(); ++m) {
    out.machine_makespans[m] =
        simulate_machine<true>(instance, static_cast<int>(m), schedule.sequences[m], &out);
  }

  std::stable_sort(out.trace.begin(), out.trace.end(), [](const SimEvent& a, const SimEvent& b) {
    return a.time < b.time;
  });

  for (const auto& [job, t] : out.completion) {
    out.makespan = std::max(out.makespan, t);
  }
  return out;
}

double simulate_makespan(const Instance& instance, const Schedule& schedule,
                         std::vector<double>* machine_makespans) {
  if (!quick_valid(instance, schedule)) throw_invalid(instance, schedule);
  double best = 0.0;
  if (machine_makespans) machine_makespans->assign(instance.machine_count(), 0.0);
  for (std::size_t m = 0; m < instance.machine_count(); ++m) {
    const double mk = simulate_machine<false>(instance, static_cast<int>(m), schedule.sequences[m], nullptr);
    if (machine_makespans) (*machine_makespans)[m] = mk;
    best = std::max(best, mk);
  }
  return best;
}

double makespan(const Instance& instance, const Schedule& schedule) {
  return simulate(instance, schedule).makespan;
}

std::string SimResult::trace_csv() const {
  std::string out = "time,machine,job,event\n";
  char line[128];
  for (const SimEvent& e : trace) {
    std::snprintf(line, sizeof(line), "%.9g,%d,%d,%s\n", e.time, e.machine, e.job,
                  e.kind == SimEvent::Kind::Admit ? "admit" : "finish");
    out += line;
  }
  return out;
}

}  // namespace lagoon
