#include "lagoon/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace lagoon {

namespace {

// Numbers come out of nlohmann as double or int depending on the literal;
// normalize through this when reading.
double as_number(const nlohmann::json& j, const char* field) {
  if (!j.contains(field) || !j[field].is_number()) {
    throw Error("invalid-instance", std::string("missing or non-numeric field '") + field + "'");
  }
  return j[field].get<double>();
}

}  // namespace

void Instance::finalize() {
  const std::size_t r = recipes.size();
  auto fail = [](const std::string& msg) { throw Error("invalid-instance", msg); };

  if (jobs.empty()) fail("instance has no jobs");
  if (machines.empty()) fail("instance has no machines");
  if (recipes.empty()) fail("instance has no recipes");

  for (std::size_t i = 0; i < r; ++i) {
    if (recipes[i].id != static_cast<int>(i)) fail("recipe ids must be dense 0..r-1");
    if (!(recipes[i].base_work > 0.0)) fail("recipe base_work must be > 0");
  }
  for (std::size_t m = 0; m < machines.size(); ++m) {
    const Machine& mach = machines[m];
    if (mach.id != static_cast<int>(m)) fail("machine ids must be dense 0..M-1");
    if (!(mach.speed > 0.0)) fail("machine speed must be > 0");
    if (mach.capacity < 1) fail("machine capacity must be >= 1");
    if (mach.qualified.empty()) fail("machine qualification set must be nonempty");
    for (int q : mach.qualified) {
      if (q < 0 || q >= static_cast<int>(r)) fail("machine qualified for unknown recipe");
    }
  }
  if (interference.size() != r) fail("interference matrix must be r x r");
  for (const auto& row : interference) {
    if (row.size() != r) fail("interference matrix must be r x r");
    for (double b : row) {
      if (!(b >= 0.0)) fail("interference entries must be >= 0");
    }
  }

  job_recipe_.clear();
  job_id_at_.clear();
  std::unordered_set<int> seen_ids;
  for (const Job& j : jobs) {
    if (j.recipe_id < 0 || j.recipe_id >= static_cast<int>(r)) fail("job references unknown recipe");
    if (!seen_ids.insert(j.id).second) fail("duplicate job id");
    job_recipe_.push_back(j.recipe_id);
    job_id_at_.push_back(j.id);
  }

  dense_ids_ = true;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (jobs[i].id != static_cast<int>(i)) {
      dense_ids_ = false;
      break;
    }
  }

  qual_.assign(machines.size() * r, 0);
  for (const Machine& m : machines) {
    for (int q : m.qualified) {
      qual_[static_cast<std::size_t>(m.id) * r + q] = 1;
    }
  }
  for (std::size_t rec = 0; rec < r; ++rec) {
    bool any = false;
    for (const Machine& m : machines) {
      if (m.qualified.count(static_cast<int>(rec))) {
        any = true;
        break;
      }
    }
    if (!any) fail("recipe " + std::to_string(rec) + " has no qualified machine");
  }

  finalized_ = true;
}

std::size_t Instance::job_index(int job_id) const {
  if (dense_ids_) return static_cast<std::size_t>(job_id);
  for (std::size_t i = 0; i < job_id_at_.size(); ++i) {
    if (job_id_at_[i] == job_id) return i;
  }
  throw Error("invalid-instance", "unknown job id " + std::to_string(job_id));
}

std::vector<int> Instance::recipe_counts() const {
  std::vector<int> counts(recipes.size(), 0);
  for (const Job& j : jobs) counts[j.recipe_id]++;
  return counts;
}

std::string Instance::to_json() const {
  nlohmann::json j;
  j["recipes"] = nlohmann::json::array();
  for (const Recipe& r : recipes) {
    j["recipes"].push_back({{"id", r.id}, {"base_work", r.base_work}, {"label", r.label}});
  }
  j["jobs"] = nlohmann::json::array();
  for (const Job& jb : jobs) {
    j["jobs"].push_back({{"id", jb.id}, {"recipe", jb.recipe_id}});
  }
  j["machines"] = nlohmann::json::array();
  for (const Machine& m : machines) {
    j["machines"].push_back({{"id", m.id},
                             {"speed", m.speed},
                             {"capacity", m.capacity},
                             {"qualified", std::vector<int>(m.qualified.begin(), m.qualified.end())}});
  }
  j["interference"] = interference;
  return j.dump();
}

Instance Instance::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("invalid-instance", std::string("instance JSON parse failed: ") + e.what());
  }
  Instance inst;
  for (const auto& r : j.value("recipes", nlohmann::json::array())) {
    Recipe rec;
    rec.id = static_cast<int>(as_number(r, "id"));
    rec.base_work = as_number(r, "base_work");
    rec.label = r.value("label", std::string());
    inst.recipes.push_back(std::move(rec));
  }
  for (const auto& jb : j.value("jobs", nlohmann::json::array())) {
    Job job;
    job.id = static_cast<int>(as_number(jb, "id"));
    job.recipe_id = static_cast<int>(as_number(jb, "recipe"));
    inst.jobs.push_back(job);
  }
  for (const auto& m : j.value("machines", nlohmann::json::array())) {
    Machine mach;
    mach.id = static_cast<int>(as_number(m, "id"));
    mach.speed = as_number(m, "speed");
    mach.capacity = static_cast<int>(as_number(m, "capacity"));
    for (const auto& q : m.value("qualified", nlohmann::json::array())) {
      mach.qualified.insert(q.get<int>());
    }
    inst.machines.push_back(std::move(mach));
  }
  for (const auto& row : j.value("interference", nlohmann::json::array())) {
    inst.interference.push_back(row.get<std::vector<double>>());
  }
  inst.finalize();
  return inst;
}

Instance Instance::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io-error", "cannot open instance file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::size_t Schedule::total_jobs() const {
  std::size_t n = 0;
  for (const Sequence& s : sequences) n += s.size();
  return n;
}

Sequence Schedule::concatenated() const {
  Sequence all;
  all.reserve(total_jobs());
  for (const Sequence& s : sequences) all.insert(all.end(), s.begin(), s.end());
  return all;
}

BigInt count_permutations(int total_jobs, const std::vector<int>& recipe_counts) {
  long long sum = 0;
  for (int c : recipe_counts) {
    if (c < 0) throw Error("counts-do-not-sum-to-L", "negative recipe count");
    sum += c;
  }
  if (sum != total_jobs) {
    throw Error("counts-do-not-sum-to-L",
                "recipe counts sum to " + std::to_string(sum) + ", expected " + std::to_string(total_jobs));
  }
  BigInt result = 1;
  for (int i = 2; i <= total_jobs; ++i) result *= i;
  for (int c : recipe_counts) {
    for (int i = 2; i <= c; ++i) result /= i;
  }
  return result;
}

double stirling_factorial(int total_jobs) {
  const double n = static_cast<double>(total_jobs);
  return std::sqrt(2.0 * M_PI * n) * std::pow(n / M_E, n);
}

std::vector<ScheduleViolation> validate_schedule(const Instance& instance, const Schedule& schedule) {
  std::vector<ScheduleViolation> out;
  if (schedule.sequences.size() != instance.machine_count()) {
    out.push_back({"shape-mismatch", -1, -1,
                   "schedule has " + std::to_string(schedule.sequences.size()) + " sequences for " +
                       std::to_string(instance.machine_count()) + " machines"});
    return out;
  }

  std::unordered_map<int, int> wanted;  // job id -> times still expected
  for (const Job& j : instance.jobs) wanted[j.id]++;

  for (std::size_t m = 0; m < schedule.sequences.size(); ++m) {
    for (int job_id : schedule.sequences[m]) {
      auto it = wanted.find(job_id);
      if (it == wanted.end()) {
        out.push_back({"unknown-job", job_id, static_cast<int>(m),
                       "unknown job " + std::to_string(job_id)});
        continue;
      }
      if (it->second == 0) {
        out.push_back({"duplicate-job", job_id, static_cast<int>(m),
                       "duplicate job " + std::to_string(job_id)});
        continue;
      }
      it->second--;
      const int recipe = instance.recipe_of(job_id);
      if (!instance.qualified(static_cast<int>(m), recipe)) {
        out.push_back({"unqualified", job_id, static_cast<int>(m),
                       "job " + std::to_string(job_id) + " (recipe " + std::to_string(recipe) +
                           ") on unqualified machine " + std::to_string(m)});
      }
    }
  }
  for (const auto& [job_id, remaining] : wanted) {
    if (remaining > 0) {
      out.push_back({"missing-job", job_id, -1, "job " + std::to_string(job_id) + " not scheduled"});
    }
  }
  std::sort(out.begin(), out.end(), [](const ScheduleViolation& a, const ScheduleViolation& b) {
    return std::tie(a.kind, a.job_id, a.machine_id) < std::tie(b.kind, b.job_id, b.machine_id);
  });
  return out;
}

namespace {

// Chunk sizes for the equisized cut: first chunks absorb the remainder.
std::vector<std::size_t> chunk_sizes(std::size_t total, std::size_t machines) {
  std::vector<std::size_t> sizes(machines, total / machines);
  for (std::size_t i = 0; i < total % machines; ++i) sizes[i]++;
  return sizes;
}

Schedule cut_raw(const Instance& instance, const Sequence& overall) {
  Schedule s;
  s.sequences.resize(instance.machine_count());
  const auto sizes = chunk_sizes(overall.size(), instance.machine_count());
  std::size_t pos = 0;
  for (std::size_t m = 0; m < sizes.size(); ++m) {
    s.sequences[m].assign(overall.begin() + pos, overall.begin() + pos + sizes[m]);
    pos += sizes[m];
  }
  return s;
}

}  // namespace

Schedule cut_into_chunks(const Instance& instance, const Sequence& overall) {
  Schedule s = cut_raw(instance, overall);
  for (std::size_t m = 0; m < s.sequences.size(); ++m) {
    for (int job_id : s.sequences[m]) {
      if (!instance.qualified(static_cast<int>(m), instance.recipe_of(job_id))) {
        throw Error("qualification-violation",
                    "equisized cut places job " + std::to_string(job_id) + " on unqualified machine " +
                        std::to_string(m));
      }
    }
  }
  return s;
}

Schedule cut_with_repair(const Instance& instance, const Sequence& overall, Rng& rng) {
  Schedule s = cut_raw(instance, overall);
  for (std::size_t m = 0; m < s.sequences.size(); ++m) {
    Sequence kept;
    kept.reserve(s.sequences[m].size());
    for (int job_id : s.sequences[m]) {
      const int recipe = instance.recipe_of(job_id);
      if (instance.qualified(static_cast<int>(m), recipe)) {
        kept.push_back(job_id);
        continue;
      }
      std::vector<int> options;
      for (const Machine& cand : instance.machines) {
        if (cand.qualified.count(recipe)) options.push_back(cand.id);
      }
      const int target = options[rng.index(options.size())];
      s.sequences[target].push_back(job_id);  // appended; dropped from m via kept
    }
    s.sequences[m] = std::move(kept);
  }
  return s;
}

}  // namespace lagoon
