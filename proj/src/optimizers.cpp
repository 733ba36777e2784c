#include "lagoon/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <utility>

namespace lagoon {

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::MC: return "mc";
    case Algorithm::RDS: return "rds";
    case Algorithm::PSO: return "pso";
    case Algorithm::CC: return "cc";
    case Algorithm::BRUTE: return "brute";
  }
  return "mc";
}

std::optional<Algorithm> parse_algorithm(const std::string& name) {
  if (name == "mc") return Algorithm::MC;
  if (name == "rds") return Algorithm::RDS;
  if (name == "pso") return Algorithm::PSO;
  if (name == "cc") return Algorithm::CC;
  if (name == "brute") return Algorithm::BRUTE;
  return std::nullopt;
}

namespace {

double param(const Params& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

}  // namespace

Evaluator::Evaluator(const Instance& instance, std::int64_t budget)
    : instance_(instance), budget_(budget), best_(std::numeric_limits<double>::infinity()) {
  if (!instance.finalized()) throw Error("invalid-instance", "instance not finalized");
  if (budget < 0) throw Error("negative-budget", "budget must be >= 0");
}

double Evaluator::evaluate(const Schedule& candidate) {
  if (used_ >= budget_) throw Error("budget-exhausted", "no simulate calls left");
  if (validate_candidates_) {
    const auto violations = validate_schedule(instance_, candidate);
    if (!violations.empty()) throw Error("invalid-schedule", violations.front().message);
  }
  const double mk = simulate_makespan(instance_, candidate, &last_machine_makespans_);
  ++used_;
  if (mk < best_) {
    best_ = mk;
    best_schedule_ = candidate;
    history_.push_back({used_, mk});
  }
  return mk;
}

bool Evaluator::exhausted() const {
  if (used_ >= budget_) return true;
  return cancel_ && cancel_->load(std::memory_order_relaxed);
}

Schedule random_schedule(const Instance& instance, Rng& rng) {
  Sequence overall;
  overall.reserve(instance.job_count());
  for (const Job& j : instance.jobs) overall.push_back(j.id);
  rng.shuffle(overall);
  return cut_with_repair(instance, overall, rng);
}

Sequence swap_move(const Sequence& seq, std::size_t i, std::size_t j) {
  if (i >= seq.size() || j >= seq.size()) {
    throw Error("index-out-of-range", "swap positions must lie inside the sequence");
  }
  Sequence out = seq;
  std::swap(out[i], out[j]);
  return out;
}

int transposition_distance(const Schedule& a, const Schedule& b) {
  Sequence ca = a.concatenated();
  Sequence cb = b.concatenated();
  {
    Sequence sa = ca, sb = cb;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    if (sa != sb) throw Error("job-sets-differ", "schedules cover different job multisets");
  }

  int mismatches = 0;
  for (std::size_t k = 0; k < ca.size(); ++k) {
    if (ca[k] != cb[k]) ++mismatches;
  }

  std::map<int, int> machine_a, machine_b;
  for (std::size_t m = 0; m < a.sequences.size(); ++m) {
    for (int job : a.sequences[m]) machine_a[job] = static_cast<int>(m);
  }
  for (std::size_t m = 0; m < b.sequences.size(); ++m) {
    for (int job : b.sequences[m]) machine_b[job] = static_cast<int>(m);
  }
  for (const auto& [job, m] : machine_a) {
    if (machine_b.at(job) != m) ++mismatches;
  }
  return mismatches;
}

namespace {

// ---------------------------------------------------------------------------
// Shared hill-climbing machinery

struct FlatPos {
  int machine;
  int index;
};

std::vector<FlatPos> flatten(const Schedule& s) {
  std::vector<FlatPos> flat;
  flat.reserve(s.total_jobs());
  for (std::size_t m = 0; m < s.sequences.size(); ++m) {
    for (std::size_t i = 0; i < s.sequences[m].size(); ++i) {
      flat.push_back({static_cast<int>(m), static_cast<int>(i)});
    }
  }
  return flat;
}

int job_at(const Schedule& s, const FlatPos& p) { return s.sequences[p.machine][p.index]; }

enum class MoveMode { Any, IntraMachine };

bool swap_is_valid(const Instance& inst, const Schedule& s, const std::vector<FlatPos>& flat,
                   int p, int q, MoveMode mode) {
  const FlatPos& fp = flat[p];
  const FlatPos& fq = flat[q];
  if (fp.machine == fq.machine) return true;
  if (mode == MoveMode::IntraMachine) return false;
  const int rp = inst.recipe_of(job_at(s, fp));
  const int rq = inst.recipe_of(job_at(s, fq));
  return inst.qualified(fq.machine, rp) && inst.qualified(fp.machine, rq);
}

// Two distinct uniform positions in the concatenated order; cross-machine
// pairs must be qualification-valid, otherwise the draw is resampled without
// consuming budget. Gives up after a fixed number of tries (tiny instances or
// all-unqualified cross pairs).
std::optional<std::pair<int, int>> sample_swap_positions(const Instance& inst, const Schedule& s,
                                                         const std::vector<FlatPos>& flat, Rng& rng,
                                                         MoveMode mode, int max_tries = 256) {
  const std::size_t n = flat.size();
  if (n < 2) return std::nullopt;
  for (int t = 0; t < max_tries; ++t) {
    const int p = static_cast<int>(rng.index(n));
    const int q = static_cast<int>(rng.index(n));
    if (p == q) continue;
    if (swap_is_valid(inst, s, flat, p, q, mode)) return std::make_pair(p, q);
  }
  return std::nullopt;
}

void apply_position_swap(Schedule& s, const std::vector<FlatPos>& flat, int p, int q) {
  std::swap(s.sequences[flat[p].machine][flat[p].index],
            s.sequences[flat[q].machine][flat[q].index]);
}

struct Current {
  Schedule schedule;
  double makespan = std::numeric_limits<double>::infinity();
  std::vector<double> machine_makespans;
};

struct ClimbStats {
  int reinits = 0;
};

// Strict-improvement hill climbing over position swaps, metered by `ev` and
// additionally capped at max_evals. With allow_reinit the search restarts
// from random_schedule after reinit_limit consecutive non-improving
// evaluations (the restart evaluation itself consumes budget); without it,
// hitting the limit ends the climb. Returns the current (not global-best)
// schedule so callers can keep working on it.
Current climb(Evaluator& ev, const Instance& inst, Rng& rng, Current cur, bool start_evaluated,
              std::int64_t max_evals, int reinit_limit, MoveMode mode, bool allow_reinit,
              ClimbStats* stats) {
  const std::int64_t used0 = ev.used();
  auto left = [&] { return max_evals - (ev.used() - used0); };

  if (!start_evaluated) {
    if (left() <= 0 || ev.exhausted()) return cur;
    cur.makespan = ev.evaluate(cur.schedule);
    cur.machine_makespans = ev.last_machine_makespans();
  }

  std::vector<FlatPos> flat = flatten(cur.schedule);
  int fails = 0;

  while (left() > 0 && !ev.exhausted()) {
    const auto mv = sample_swap_positions(inst, cur.schedule, flat, rng, mode);
    if (!mv) {
      // No legal move exists (or none was found); only a restart can make
      // progress here.
      if (!allow_reinit) break;
      if (stats) stats->reinits++;
      cur.schedule = random_schedule(inst, rng);
      cur.makespan = ev.evaluate(cur.schedule);
      cur.machine_makespans = ev.last_machine_makespans();
      flat = flatten(cur.schedule);
      fails = 0;
      continue;
    }

    apply_position_swap(cur.schedule, flat, mv->first, mv->second);
    const double mk = ev.evaluate(cur.schedule);
    if (mk < cur.makespan) {
      cur.makespan = mk;
      cur.machine_makespans = ev.last_machine_makespans();
      fails = 0;
    } else {
      apply_position_swap(cur.schedule, flat, mv->first, mv->second);  // revert
      if (++fails >= reinit_limit) {
        if (!allow_reinit) break;
        // The reinitialization is triggered now even if the remaining budget
        // cannot fund its restart evaluation.
        if (stats) stats->reinits++;
        fails = 0;
        if (left() <= 0 || ev.exhausted()) break;
        cur.schedule = random_schedule(inst, rng);
        cur.makespan = ev.evaluate(cur.schedule);
        cur.machine_makespans = ev.last_machine_makespans();
        flat = flatten(cur.schedule);
      }
    }
  }
  return cur;
}

OptRun finish_run(Algorithm algo, std::int64_t budget, std::uint64_t seed, Params params,
                  const Evaluator& ev, int reinits) {
  OptRun run;
  run.algorithm = algo;
  run.budget = budget;
  run.seed = seed;
  run.params = std::move(params);
  run.best_schedule = ev.best_schedule();
  run.best_makespan = ev.best();
  run.history = ev.history();
  run.evals_used = ev.used();
  run.reinitializations = reinits;
  return run;
}

}  // namespace

OptRun monte_carlo(const Instance& instance, std::int64_t budget, std::uint64_t seed,
                   const OptOptions& opts) {
  if (budget < 1) throw Error("budget-too-small", "budget must be >= 1");
  Evaluator ev(instance, budget);
  ev.set_validate_candidates(opts.validate_candidates);
  ev.set_cancel_flag(opts.cancel);
  Rng rng(seed);
  while (!ev.exhausted()) {
    ev.evaluate(random_schedule(instance, rng));
  }
  return finish_run(Algorithm::MC, budget, seed, {}, ev, 0);
}

OptRun rds(const Instance& instance, std::int64_t budget, std::uint64_t seed,
           const Params& params, const OptOptions& opts) {
  if (budget < 1) throw Error("budget-too-small", "budget must be >= 1");
  const int reinit_limit = static_cast<int>(param(params, "reinit_limit", 700));
  if (reinit_limit < 1) throw Error("invalid-params", "reinit_limit must be >= 1");

  Evaluator ev(instance, budget);
  ev.set_validate_candidates(opts.validate_candidates);
  ev.set_cancel_flag(opts.cancel);
  Rng rng(seed);

  Current start;
  start.schedule = random_schedule(instance, rng);
  ClimbStats stats;
  climb(ev, instance, rng, std::move(start), false, budget, reinit_limit, MoveMode::Any, true,
        &stats);

  return finish_run(Algorithm::RDS, budget, seed, {{"reinit_limit", double(reinit_limit)}}, ev,
                    stats.reinits);
}

namespace {

// One swap that places some job into the position it holds in `target`,
// chosen uniformly among the mismatched positions whose induced swap is
// qualification-valid and shrinks the distance to the target. Partition
// shapes may differ between the two schedules, so the shrink is checked, not
// assumed.
std::optional<std::pair<int, int>> toward_positions(const Instance& inst, const Schedule& cur,
                                                    const std::vector<FlatPos>& flat,
                                                    const Schedule& target, Rng& rng) {
  const Sequence cc = cur.concatenated();
  const Sequence tc = target.concatenated();
  const std::size_t n = cc.size();
  if (tc.size() != n) return std::nullopt;

  std::vector<int> pos_of(inst.job_count(), -1);       // job index -> position in cur
  std::vector<int> tgt_machine(inst.job_count(), -1);  // job index -> machine in target
  for (std::size_t k = 0; k < n; ++k) pos_of[inst.job_index(cc[k])] = static_cast<int>(k);
  for (std::size_t m = 0; m < target.sequences.size(); ++m) {
    for (int job : target.sequences[m]) tgt_machine[inst.job_index(job)] = static_cast<int>(m);
  }

  std::vector<int> mismatched;
  for (std::size_t k = 0; k < n; ++k) {
    if (cc[k] != tc[k]) mismatched.push_back(static_cast<int>(k));
  }
  rng.shuffle(mismatched);

  for (int p : mismatched) {
    const int wanted = tc[p];                      // job that should sit at p
    const int q = pos_of[inst.job_index(wanted)];  // where it currently sits
    if (!swap_is_valid(inst, cur, flat, p, q, MoveMode::Any)) continue;

    // Concatenated part: p becomes a match; q stays a mismatch unless the
    // displaced job happens to belong there.
    const int displaced = cc[p];
    int delta = -1;
    if (displaced == tc[q]) delta -= 1;
    // Machine-assignment part (only cross-machine swaps change it).
    const int mp = flat[p].machine;
    const int mq = flat[q].machine;
    if (mp != mq) {
      const int tw = tgt_machine[inst.job_index(wanted)];
      const int td = tgt_machine[inst.job_index(displaced)];
      delta += ((mp != tw) ? 0 : -1) + ((mq != tw) ? 0 : 1);
      delta += ((mq != td) ? 0 : -1) + ((mp != td) ? 0 : 1);
    }
    if (delta <= -1) return std::make_pair(p, q);
  }
  return std::nullopt;
}

}  // namespace

std::optional<Schedule> toward_swap(const Instance& instance, const Schedule& current,
                                    const Schedule& target, Rng& rng) {
  const std::vector<FlatPos> flat = flatten(current);
  const auto mv = toward_positions(instance, current, flat, target, rng);
  if (!mv) return std::nullopt;
  Schedule out = current;
  apply_position_swap(out, flat, mv->first, mv->second);
  return out;
}

OptRun pso(const Instance& instance, std::int64_t budget, std::uint64_t seed, const Params& params,
           const OptOptions& opts) {
  const int swarm_size = static_cast<int>(param(params, "swarm_size", 20));
  const double w_random = param(params, "w_random", 0.2);
  const double w_local = param(params, "w_local", 0.4);
  const double w_global = param(params, "w_global", 0.4);
  const int pseudo_count = static_cast<int>(param(params, "pseudo_count", 2));
  const auto pseudo_local_budget = static_cast<std::int64_t>(param(params, "pseudo_local_budget", 50));
  if (swarm_size < 1 || w_random < 0 || w_local < 0 || w_global < 0 ||
      w_random + w_local + w_global <= 0 || pseudo_count < 0 || pseudo_local_budget < 1) {
    throw Error("invalid-params", "pso parameters out of range");
  }
  if (budget < swarm_size) {
    throw Error("budget-too-small", "budget must cover one evaluation per particle");
  }

  Evaluator ev(instance, budget);
  ev.set_validate_candidates(opts.validate_candidates);
  ev.set_cancel_flag(opts.cancel);
  Rng base(seed);

  struct Particle {
    Rng rng;
    Schedule position;
    std::vector<FlatPos> flat;
    Schedule best_schedule;
    double best = std::numeric_limits<double>::infinity();
  };

  std::vector<Particle> swarm;
  swarm.reserve(swarm_size);
  for (int i = 0; i < swarm_size; ++i) {
    Particle p{base.split(static_cast<std::uint64_t>(i)), {}, {}, {}, {}};
    p.position = random_schedule(instance, p.rng);
    p.flat = flatten(p.position);
    swarm.push_back(std::move(p));
    if (ev.exhausted()) break;
    Particle& q = swarm.back();
    q.best = ev.evaluate(q.position);
    q.best_schedule = q.position;
  }

  std::vector<Rng> pseudo_rngs;
  pseudo_rngs.reserve(pseudo_count);
  for (int p = 0; p < pseudo_count; ++p) {
    pseudo_rngs.push_back(base.split((std::uint64_t(1) << 32) + static_cast<std::uint64_t>(p)));
  }

  const double w_sum = w_random + w_local + w_global;
  while (!ev.exhausted()) {
    const std::int64_t used_at_start = ev.used();

    for (Particle& p : swarm) {
      if (ev.exhausted()) break;
      const double draw = p.rng.real01() * w_sum;
      std::optional<std::pair<int, int>> mv;
      if (draw >= w_random) {
        const Schedule& target = (draw < w_random + w_local) ? p.best_schedule : ev.best_schedule();
        mv = toward_positions(instance, p.position, p.flat, target, p.rng);
      }
      if (!mv) {
        // random rule, or a degenerate toward-move (e.g. already at the
        // target) falling back to a random swap
        mv = sample_swap_positions(instance, p.position, p.flat, p.rng, MoveMode::Any);
      }
      if (!mv) continue;
      apply_position_swap(p.position, p.flat, mv->first, mv->second);
      const double mk = ev.evaluate(p.position);
      if (mk < p.best) {
        p.best = mk;
        p.best_schedule = p.position;
      }
    }

    for (int i = 0; i < pseudo_count; ++i) {
      if (ev.exhausted()) break;
      Current start;
      start.schedule = ev.best_schedule();
      start.makespan = ev.best();
      const std::int64_t sub = std::min<std::int64_t>(pseudo_local_budget, ev.remaining());
      climb(ev, instance, pseudo_rngs[i], std::move(start), true, sub, 700, MoveMode::Any, true,
            nullptr);
    }

    if (ev.used() == used_at_start) break;  // nothing can move; avoid spinning
  }

  Params effective{{"swarm_size", double(swarm_size)},
                   {"w_random", w_random},
                   {"w_local", w_local},
                   {"w_global", w_global},
                   {"pseudo_count", double(pseudo_count)},
                   {"pseudo_local_budget", double(pseudo_local_budget)}};
  return finish_run(Algorithm::PSO, budget, seed, std::move(effective), ev, 0);
}

OptRun central_complex(const Instance& instance, std::int64_t budget, std::uint64_t seed,
                       const Params& params, const OptOptions& opts) {
  if (instance.machine_count() < 2) {
    throw Error("single-machine-instance", "central complex needs >= 2 machines; use rds");
  }
  Params effective = params;
  if (!effective.count("reinits") || !effective.count("rds_iters")) {
    effective = meta_params(instance, budget);
  }
  const int reinits = static_cast<int>(effective.at("reinits"));
  const auto rds_iters = static_cast<std::int64_t>(effective.at("rds_iters"));
  if (reinits < 1 || rds_iters < 1) throw Error("invalid-params", "reinits and rds_iters must be >= 1");
  if (budget < std::int64_t(reinits) * (rds_iters + 1)) {
    throw Error("budget-too-small", "budget must be >= reinits * (rds_iters + 1)");
  }

  Evaluator ev(instance, budget);
  ev.set_validate_candidates(opts.validate_candidates);
  ev.set_cancel_flag(opts.cancel);
  Rng rng(seed);

  const std::int64_t share = budget / reinits;
  int restarts_done = 0;

  for (int r = 0; r < reinits && !ev.exhausted(); ++r) {
    ++restarts_done;
    const std::int64_t used0 = ev.used();
    auto share_left = [&] { return share - (ev.used() - used0); };

    Current cur;
    cur.schedule = random_schedule(instance, rng);
    bool evaluated = false;

    while (share_left() > 0 && !ev.exhausted()) {
      // Sequencing phase: intra-machine swaps only, so the partition can
      // change solely through the shift below.
      const std::int64_t cap = std::min<std::int64_t>(rds_iters + (evaluated ? 0 : 1), share_left());
      cur = climb(ev, instance, rng, std::move(cur), evaluated, cap, 700, MoveMode::IntraMachine,
                  false, nullptr);
      evaluated = true;
      if (share_left() <= 0 || ev.exhausted()) break;

      // Shift phase: move a random qualified job from the highest-makespan
      // machine to the lowest-makespan one (ties: lowest machine id).
      const auto& mks = cur.machine_makespans;
      const int donor = static_cast<int>(std::max_element(mks.begin(), mks.end()) - mks.begin());
      const int receiver = static_cast<int>(std::min_element(mks.begin(), mks.end()) - mks.begin());
      if (donor == receiver) break;
      Sequence& donor_seq = cur.schedule.sequences[donor];
      if (donor_seq.empty()) break;

      bool shifted = false;
      const std::size_t attempts = donor_seq.size();
      for (std::size_t t = 0; t < attempts; ++t) {
        const std::size_t pick = rng.index(donor_seq.size());
        const int job = donor_seq[pick];
        if (!instance.qualified(receiver, instance.recipe_of(job))) continue;
        donor_seq.erase(donor_seq.begin() + static_cast<std::ptrdiff_t>(pick));
        cur.schedule.sequences[receiver].push_back(job);
        shifted = true;
        break;
      }
      if (!shifted) break;
      evaluated = false;  // next climb must re-evaluate the shifted schedule
    }
  }

  return finish_run(Algorithm::CC, budget, seed, std::move(effective), ev, restarts_done);
}

Params meta_params(const Instance&, std::int64_t budget) {
  if (budget < 100) throw Error("budget-too-small", "meta rule needs budget >= 100");
  const auto reinits = std::clamp<std::int64_t>(std::llround(std::sqrt(double(budget)) / 10.0), 2, 10);
  const std::int64_t rds_iters = budget / reinits - 1;
  return {{"reinits", double(reinits)}, {"rds_iters", double(rds_iters)}};
}

namespace {

// ---------------------------------------------------------------------------
// Brute force: jobs of the same recipe are interchangeable, so candidates are
// enumerated as (per-recipe counts per machine) x (per-machine distinct
// recipe sequences), and concrete job ids are filled in per recipe in
// ascending id order.

struct BruteState {
  const Instance& inst;
  Evaluator& ev;
  std::vector<std::vector<int>> jobs_by_recipe;
  std::vector<std::vector<int>> qualified_machines;  // per recipe
  std::vector<std::vector<int>> alloc;               // [recipe][machine] counts
  std::vector<std::vector<int>> recipe_seqs;         // per machine, recipe ids
  std::vector<std::vector<int>> rem;                 // per machine, counts left to place
  std::vector<int> cursor;                           // per recipe, for id fill-in
};

void emit_candidate(BruteState& st) {
  const std::size_t machines = st.inst.machine_count();
  Schedule s;
  s.sequences.resize(machines);
  std::fill(st.cursor.begin(), st.cursor.end(), 0);
  for (std::size_t m = 0; m < machines; ++m) {
    s.sequences[m].reserve(st.recipe_seqs[m].size());
    for (int r : st.recipe_seqs[m]) {
      s.sequences[m].push_back(st.jobs_by_recipe[r][st.cursor[r]++]);
    }
  }
  st.ev.evaluate(s);
}

void enum_machine_sequences(BruteState& st, std::size_t m);

void enum_one_sequence(BruteState& st, std::size_t m, int remaining) {
  if (remaining == 0) {
    enum_machine_sequences(st, m + 1);
    return;
  }
  std::vector<int>& rem = st.rem[m];
  for (std::size_t r = 0; r < rem.size(); ++r) {
    if (rem[r] == 0) continue;
    rem[r]--;
    st.recipe_seqs[m].push_back(static_cast<int>(r));
    enum_one_sequence(st, m, remaining - 1);
    st.recipe_seqs[m].pop_back();
    rem[r]++;
  }
}

void enum_machine_sequences(BruteState& st, std::size_t m) {
  if (m == st.inst.machine_count()) {
    emit_candidate(st);
    return;
  }
  int total = 0;
  st.rem[m].assign(st.inst.recipe_count(), 0);
  for (std::size_t r = 0; r < st.inst.recipe_count(); ++r) {
    st.rem[m][r] = st.alloc[r][m];
    total += st.alloc[r][m];
  }
  st.recipe_seqs[m].clear();
  enum_one_sequence(st, m, total);
}

void enum_allocations(BruteState& st, std::size_t r, std::size_t qi, int remaining) {
  if (r == st.inst.recipe_count()) {
    enum_machine_sequences(st, 0);
    return;
  }
  const auto& quals = st.qualified_machines[r];
  if (qi + 1 == quals.size()) {
    st.alloc[r][quals[qi]] = remaining;
    enum_allocations(st, r + 1, 0,
                     r + 1 < st.inst.recipe_count()
                         ? static_cast<int>(st.jobs_by_recipe[r + 1].size())
                         : 0);
    st.alloc[r][quals[qi]] = 0;
    return;
  }
  for (int take = 0; take <= remaining; ++take) {
    st.alloc[r][quals[qi]] = take;
    enum_allocations(st, r, qi + 1, remaining - take);
  }
  st.alloc[r][quals[qi]] = 0;
}

}  // namespace

BigInt brute_force_space(const Instance& instance) {
  if (!instance.finalized()) throw Error("invalid-instance", "instance not finalized");
  const std::size_t machines = instance.machine_count();
  const std::size_t recipes = instance.recipe_count();
  const std::vector<int> counts = instance.recipe_counts();
  const int total = static_cast<int>(instance.job_count());

  // Pascal's triangle up to the job count, for C(load + a, a) factors.
  std::vector<std::vector<BigInt>> binom(total + 1);
  for (int n = 0; n <= total; ++n) {
    binom[n].assign(n + 1, 1);
    for (int k = 1; k < n; ++k) binom[n][k] = binom[n - 1][k - 1] + binom[n - 1][k];
  }

  // DP over recipes: state = per-machine loads so far, value = number of
  // distinct per-machine sequences. Placing a identical jobs onto a machine
  // already holding l multiplies the count by C(l + a, a).
  std::map<std::vector<int>, BigInt> states;
  states[std::vector<int>(machines, 0)] = 1;

  std::vector<int> allocation(machines, 0);
  for (std::size_t r = 0; r < recipes; ++r) {
    std::vector<int> quals;
    for (std::size_t m = 0; m < machines; ++m) {
      if (instance.qualified(static_cast<int>(m), static_cast<int>(r))) {
        quals.push_back(static_cast<int>(m));
      }
    }
    std::map<std::vector<int>, BigInt> next;
    for (const auto& [load, ways] : states) {
      // enumerate compositions of counts[r] over the qualified machines
      std::function<void(std::size_t, int, const BigInt&)> place =
          [&](std::size_t qi, int remaining, const BigInt& factor) {
            if (qi + 1 == quals.size()) {
              allocation[quals[qi]] = remaining;
              BigInt f = factor * binom[load[quals[qi]] + remaining][remaining];
              std::vector<int> new_load = load;
              for (std::size_t m = 0; m < machines; ++m) new_load[m] += allocation[m];
              next[new_load] += ways * f;
              allocation[quals[qi]] = 0;
              return;
            }
            for (int take = 0; take <= remaining; ++take) {
              allocation[quals[qi]] = take;
              place(qi + 1, remaining - take, factor * binom[load[quals[qi]] + take][take]);
            }
            allocation[quals[qi]] = 0;
          };
      place(0, counts[r], 1);
    }
    states = std::move(next);
  }

  BigInt space = 0;
  for (const auto& [load, ways] : states) space += ways;
  return space;
}

OptRun brute_force(const Instance& instance, std::int64_t space_limit) {
  const BigInt space = brute_force_space(instance);
  if (space > space_limit) {
    throw Error("space-too-large", "predicted " + space.str() + " candidates exceeds limit " +
                                       std::to_string(space_limit));
  }
  const auto budget = static_cast<std::int64_t>(space);

  Evaluator ev(instance, budget);
  BruteState st{instance,
                ev,
                std::vector<std::vector<int>>(instance.recipe_count()),
                std::vector<std::vector<int>>(instance.recipe_count()),
                std::vector<std::vector<int>>(instance.recipe_count(),
                                              std::vector<int>(instance.machine_count(), 0)),
                std::vector<std::vector<int>>(instance.machine_count()),
                std::vector<std::vector<int>>(instance.machine_count()),
                std::vector<int>(instance.recipe_count(), 0)};
  for (const Job& j : instance.jobs) st.jobs_by_recipe[j.recipe_id].push_back(j.id);
  for (auto& ids : st.jobs_by_recipe) std::sort(ids.begin(), ids.end());
  for (std::size_t r = 0; r < instance.recipe_count(); ++r) {
    for (std::size_t m = 0; m < instance.machine_count(); ++m) {
      if (instance.qualified(static_cast<int>(m), static_cast<int>(r))) {
        st.qualified_machines[r].push_back(static_cast<int>(m));
      }
    }
  }

  if (budget > 0) {
    enum_allocations(st, 0, 0,
                     instance.recipe_count() > 0 ? static_cast<int>(st.jobs_by_recipe[0].size()) : 0);
  }
  if (ev.used() != budget) {
    throw Error("enumeration-mismatch", "visited " + std::to_string(ev.used()) +
                                            " candidates, predicted " + space.str());
  }

  OptRun run = finish_run(Algorithm::BRUTE, budget, 0, {}, ev, 0);
  return run;
}

OptRun run_algorithm(Algorithm algo, const Instance& instance, std::int64_t budget,
                     std::uint64_t seed, const Params& params, const OptOptions& opts) {
  switch (algo) {
    case Algorithm::MC: return monte_carlo(instance, budget, seed, opts);
    case Algorithm::RDS: return rds(instance, budget, seed, params, opts);
    case Algorithm::PSO: return pso(instance, budget, seed, params, opts);
    case Algorithm::CC: return central_complex(instance, budget, seed, params, opts);
    case Algorithm::BRUTE: return brute_force(instance);
  }
  throw Error("unknown-algorithm", "unhandled algorithm enum value");
}

}  // namespace lagoon
