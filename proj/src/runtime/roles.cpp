#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lagoon/error.hpp"
#include "lagoon/runtime.hpp"

namespace lagoon {

using nlohmann::json;

namespace {

double wall_now() {
  return std::chrono::duration<double>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// Gathers per-seed rows from a member, falling back to a summary row for
// results that carry none.
void append_details(std::vector<ResultDetail>& out, const ResultPackage& r) {
  if (!r.details.empty()) {
    out.insert(out.end(), r.details.begin(), r.details.end());
    return;
  }
  out.push_back({r.seed, r.makespan, r.evals, r.wall_ms, r.node});
}

}  // namespace

// ---------------------------------------------------------------------------
// Decision logic

std::pair<Algorithm, Params> controller_select(const TaskPackage& task) {
  if (task.algorithm) return {*task.algorithm, task.params};
  if (!task.instance)
    throw Error("invalid-task", "cannot choose an algorithm without the instance");
  const bool several_machines = task.instance->machine_count() >= 2;
  if (several_machines && task.budget < 5000)
    return {Algorithm::CC, task.params};  // meta parameters fill in the rest
  Params params = task.params;
  if (!params.count("reinit_limit")) params["reinit_limit"] = 700;
  return {Algorithm::RDS, params};
}

ResultPackage collect(Evaluation mode, const std::vector<ResultPackage>& members) {
  if (members.empty())
    throw Error("invalid-collection", "nothing to collect");
  const ResultPackage* best = nullptr;
  int failed = 0;
  std::vector<ResultDetail> details;
  for (const auto& m : members) {
    if (m.status != "done") {
      ++failed;
      continue;
    }
    append_details(details, m);
    if (!best || m.makespan < best->makespan) best = &m;
  }
  if (!best) {
    ResultPackage out;
    out.status = "failed";
    out.error = "all " + std::to_string(failed) + " member(s) failed";
    return out;
  }
  ResultPackage out = *best;  // provenance: the winning member's task_id
  out.details = std::move(details);
  if (failed > 0)
    out.error = std::to_string(failed) + " member(s) failed";
  (void)mode;  // BestOf and All differ in intent, not in carried data
  return out;
}

std::vector<TaskPackage> split_task(const TaskPackage& task) {
  std::vector<TaskPackage> parts;
  parts.reserve(static_cast<std::size_t>(task.repetitions));
  for (int i = 0; i < task.repetitions; ++i) {
    TaskPackage part = task;
    part.seed = task.seed + static_cast<std::uint64_t>(i);
    part.repetitions = 1;
    parts.push_back(std::move(part));
  }
  return parts;
}

ResultPackage reassemble(const EnvelopeId& parent,
                         const std::vector<ResultPackage>& parts) {
  ResultPackage out = collect(Evaluation::BestOf, parts);
  out.task_id = parent;
  return out;
}

BalanceDecision balance(int my_queued, int my_capacity,
                        const std::vector<LoadReport>& peers, double now,
                        double heartbeat_seconds) {
  BalanceDecision d;
  d.pool_size = std::min(my_capacity, my_queued);
  if (my_capacity <= 0) return d;
  const int threshold = 2 * my_capacity;
  if (my_queued <= threshold) return d;
  const LoadReport* target = nullptr;
  for (const auto& p : peers) {
    if (now - p.timestamp > 3.0 * heartbeat_seconds) continue;  // stale
    if (2 * p.queued_tasks >= my_capacity) continue;  // at least half busy
    if (!target || p.queued_tasks < target->queued_tasks ||
        (p.queued_tasks == target->queued_tasks && p.node < target->node))
      target = &p;
  }
  if (target) {
    d.delegate_count = my_queued - threshold;
    d.to_node = target->node;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Ledger

void Ledger::track(const Envelope& subtask, const std::string& node) {
  std::lock_guard lock(mutex_);
  auto& entry = open_[subtask.id];
  entry.envelope = subtask;
  entry.node = node;
  entry.accepted = false;
}

void Ledger::accepted(const EnvelopeId& id, const std::string& node) {
  std::lock_guard lock(mutex_);
  auto it = open_.find(id);
  if (it == open_.end()) return;  // already completed
  it->second.node = node;
  it->second.accepted = true;
}

bool Ledger::complete(const EnvelopeId& id) {
  std::lock_guard lock(mutex_);
  return open_.erase(id) != 0;
}

std::vector<Envelope> Ledger::on_node_down(const std::string& node) {
  std::lock_guard lock(mutex_);
  std::vector<Envelope> lost;
  for (const auto& [id, entry] : open_)
    if (entry.node == node) lost.push_back(entry.envelope);
  return lost;
}

bool Ledger::tracked(const EnvelopeId& id) const {
  std::lock_guard lock(mutex_);
  return open_.count(id) != 0;
}

std::size_t Ledger::outstanding() const {
  std::lock_guard lock(mutex_);
  return open_.size();
}

// ---------------------------------------------------------------------------
// Task list files

std::vector<Envelope> parse_task_file(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = e.byte > 0 ? std::min(text.size(), e.byte - 1)
                                        : std::size_t{0};
    const std::size_t line =
        1 + static_cast<std::size_t>(
                std::count(text.begin(), text.begin() + upto, '\n'));
    throw Error("parse-error", "line " + std::to_string(line) + ": " + e.what());
  }
  if (!doc.is_array())
    throw Error("parse-error", "the task file must be a JSON array of tasks");
  std::vector<Envelope> envelopes;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    try {
      const json& entry = doc[i];
      TaskPackage task = TaskPackage::from_json(entry);
      const int priority = entry.value("priority", 5);
      if (priority < 0 || priority > 9)
        throw Error("invalid-task",
                    "priority " + std::to_string(priority) + " out of range 0..9");
      OutputChannel channel{ChannelKind::Stdout, ""};
      if (entry.contains("output")) {
        channel.kind =
            parse_channel_kind(entry.at("output").at("kind").get<std::string>());
        channel.target = entry.at("output").value("target", std::string{});
      }
      envelopes.push_back(make_task_envelope(std::move(task), priority, channel));
    } catch (const Error& e) {
      throw Error("parse-error",
                  "task " + std::to_string(i + 1) + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error("parse-error",
                  "task " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return envelopes;
}

// ---------------------------------------------------------------------------
// Markers

ServerMarkerAgent::ServerMarkerAgent(Node& node, std::string name)
    : Agent(node, {std::move(name), Role::Server, "", node.name()}) {}

void ServerMarkerAgent::on_envelope(Envelope) {}

ClientMarkerAgent::ClientMarkerAgent(Node& node, std::string name)
    : Agent(node, {std::move(name), Role::Client, "", node.name()}) {}

void ClientMarkerAgent::on_envelope(Envelope) {}

// ---------------------------------------------------------------------------
// Contractor

ContractorAgent::ContractorAgent(Node& node, std::string name,
                                 std::vector<Envelope> envelopes)
    : Agent(node, {std::move(name), Role::TaskContractor, "", node.name()}),
      pending_(std::move(envelopes)) {}

void ContractorAgent::on_start() { try_submit(); }

void ContractorAgent::on_tick() { try_submit(); }

void ContractorAgent::on_envelope(Envelope) {}

void ContractorAgent::try_submit() {
  if (sent_) return;
  const auto collectors = node_.lookup(Role::Collector);
  if (collectors.empty()) return;  // retried on the next tick
  for (auto& env : pending_) {
    env.stamp(id().name, "contracted");
    send(collectors.front().name, std::move(env));
  }
  pending_.clear();
  sent_ = true;
  node_.deregister_name(id().name);  // a contractor's job ends with the handover
  request_stop();
}

// ---------------------------------------------------------------------------
// Collector

CollectorAgent::CollectorAgent(Node& node, std::string name)
    : Agent(node, {std::move(name), Role::Collector, "", node.name()}) {}

void CollectorAgent::on_envelope(Envelope env) {
  if (env.kind == PackageKind::Task) {
    const auto controllers = node_.lookup(Role::Controller);
    Entry entry;
    entry.original = env;
    entry.trace_base = env.trace.size();
    entry.evaluation = Evaluation::BestOf;
    entry.waiting = {env.id};
    {
      std::lock_guard lock(entries_mutex_);
      entries_[env.id] = std::move(entry);
    }
    if (controllers.empty()) {
      ResultPackage failed;
      failed.task_id = env.id;
      failed.status = "failed";
      failed.error = "no controller registered";
      on_envelope(make_result_envelope(failed));
      return;
    }
    env.reply_to = id().name;
    send(controllers.front().name, std::move(env));
    return;
  }

  if (env.kind == PackageKind::Collection) {
    const auto controllers = node_.lookup(Role::Controller);
    Entry entry;
    entry.original = env;
    entry.trace_base = env.trace.size();
    entry.evaluation = env.collection->evaluation;
    std::vector<Envelope> members;
    for (const auto& task : env.collection->tasks) {
      Envelope member = make_task_envelope(task, env.priority, env.channel);
      member.trace = env.trace;
      member.reply_to = id().name;
      entry.waiting.push_back(member.id);
      members.push_back(std::move(member));
    }
    {
      std::lock_guard lock(entries_mutex_);
      entries_[env.id] = std::move(entry);
    }
    for (auto& member : members) {
      if (controllers.empty()) {
        ResultPackage failed;
        failed.task_id = member.id;
        failed.status = "failed";
        failed.error = "no controller registered";
        on_envelope(make_result_envelope(failed));
      } else {
        send(controllers.front().name, std::move(member));
      }
    }
    return;
  }

  if (env.kind == PackageKind::Result) {
    const ResultPackage r = *env.result;
    if (r.status == "accepted" || r.status == "idle" || r.status == "status")
      return;  // bookkeeping notices are not member results
    EnvelopeId parent;
    Entry finished;
    bool complete = false;
    {
      std::lock_guard lock(entries_mutex_);
      for (auto& [pid, entry] : entries_) {
        auto it = std::find(entry.waiting.begin(), entry.waiting.end(), r.task_id);
        if (it == entry.waiting.end()) continue;
        entry.waiting.erase(it);
        entry.done.push_back(r);
        // A member envelope starts from the submitted trace and accumulates
        // its own story downstream; fold that tail into the final narrative.
        for (std::size_t i = entry.trace_base; i < env.trace.size(); ++i)
          entry.original.trace.push_back(env.trace[i]);
        if (r.status != "done")
          entry.original.stamp(id().name,
                               "member " + r.task_id.str() + " failed: " + r.error);
        if (entry.waiting.empty()) {
          parent = pid;
          finished = std::move(entry);
          complete = true;
        }
        break;
      }
      if (complete) entries_.erase(parent);
    }
    if (!complete) return;
    finish_entry(parent, std::move(finished));
  }
}

void CollectorAgent::finish_entry(const EnvelopeId& parent, Entry entry) {
  ResultPackage final_result;
  try {
    final_result = collect(entry.evaluation, entry.done);
  } catch (const Error& e) {
    final_result.status = "failed";
    final_result.error = e.code();
  }
  final_result.task_id = parent;
  Envelope out = make_result_envelope(final_result);
  out.priority = entry.original.priority;
  out.channel = entry.original.channel;
  out.trace = entry.original.trace;
  out.stamp(id().name, entry.evaluation == Evaluation::BestOf
                           ? "best-of complete"
                           : "all members complete");
  const auto answers = node_.lookup(Role::Answer);
  if (answers.empty()) {
    log("no answer agent; result for " + parent.str() + " dropped");
    return;
  }
  send(answers.front().name, std::move(out));
}

void CollectorAgent::on_cancel(const EnvelopeId& id_cancelled) {
  std::vector<EnvelopeId> members;
  {
    std::lock_guard lock(entries_mutex_);
    auto it = entries_.find(id_cancelled);
    if (it == entries_.end()) return;
    members.assign(it->second.waiting.begin(), it->second.waiting.end());
    entries_.erase(it);
  }
  // A cancelled collection takes its remaining members down with it.
  for (const auto& member : members) {
    ControlPackage cancel;
    cancel.command = Command::CancelTask;
    cancel.argument = member.str();
    cancel.target = {TargetKind::Package, member.str()};
    node_.submit_control(make_control_envelope(cancel));
  }
}

// ---------------------------------------------------------------------------
// Controller

ControllerAgent::ControllerAgent(Node& node, std::string name)
    : Agent(node, {std::move(name), Role::Controller, "", node.name()}) {}

void ControllerAgent::on_envelope(Envelope env) {
  if (env.kind != PackageKind::Task) return;
  try {
    auto [algorithm, params] = controller_select(*env.task);
    env.task->algorithm = algorithm;
    env.task->params = std::move(params);
    env.stamp(id().name, std::string{"algorithm "} + algorithm_name(algorithm));
  } catch (const Error& e) {
    if (!env.reply_to.empty()) {
      ResultPackage failed;
      failed.task_id = env.id;
      failed.status = "failed";
      failed.error = e.code();
      failed.node = node_.name();
      send(env.reply_to, make_result_envelope(failed));
    }
    return;
  }
  const auto splitters = node_.lookup(Role::Splitter);
  if (splitters.empty()) {
    if (!env.reply_to.empty()) {
      ResultPackage failed;
      failed.task_id = env.id;
      failed.status = "failed";
      failed.error = "no splitter registered";
      failed.node = node_.name();
      send(env.reply_to, make_result_envelope(failed));
    }
    return;
  }
  send(splitters.front().name, std::move(env));
}

// ---------------------------------------------------------------------------
// Splitter

SplitterAgent::SplitterAgent(Node& node, std::string name)
    : Agent(node, {std::move(name), Role::Splitter, "", node.name()}) {
  node_.subscribe_node_down([this](const std::string& down) {
    if (!stopping()) resubmit_lost(down);
  });
}

std::size_t SplitterAgent::outstanding() { return ledger_.outstanding(); }

void SplitterAgent::on_envelope(Envelope env) {
  if (env.kind == PackageKind::Task) {
    std::vector<Envelope> subtasks;
    {
      Group group;
      group.parent = env;
      for (auto& part : split_task(*env.task)) {
        Envelope sub = make_task_envelope(std::move(part), env.priority);
        sub.trace = env.trace;
        sub.reply_to = id().name;
        group.waiting.insert(sub.id);
        subtasks.push_back(std::move(sub));
      }
      std::lock_guard lock(groups_mutex_);
      for (const auto& sub : subtasks) part_of_[sub.id] = env.id;
      groups_[env.id] = std::move(group);
    }
    for (auto& sub : subtasks) dispatch(std::move(sub));
    return;
  }
  if (env.kind == PackageKind::Result) handle_result(*env.result);
}

void SplitterAgent::dispatch(Envelope subtask) {
  std::vector<AgentId> balancers;
  try {
    balancers = node_.lookup(Role::LoadBalancer);
  } catch (const Error&) {
    balancers.clear();
  }
  if (balancers.empty()) {
    ledger_.track(subtask, "");
    std::lock_guard lock(groups_mutex_);
    parked_.push_back(std::move(subtask));
    return;
  }
  std::size_t pick;
  {
    std::lock_guard lock(groups_mutex_);
    pick = round_robin_++ % balancers.size();
  }
  const AgentId& target = balancers[pick];
  ledger_.track(subtask, target.node);
  send(target.name, std::move(subtask));
}

void SplitterAgent::handle_result(const ResultPackage& r) {
  if (r.status == "accepted") {
    ledger_.accepted(r.task_id, r.node);
    return;
  }
  if (r.status == "idle" || r.status == "status") return;
  if (!ledger_.complete(r.task_id)) return;  // duplicate: first result won

  EnvelopeId parent;
  Group finished;
  bool complete = false;
  {
    std::lock_guard lock(groups_mutex_);
    auto at = part_of_.find(r.task_id);
    if (at == part_of_.end()) return;
    parent = at->second;
    part_of_.erase(at);
    auto git = groups_.find(parent);
    if (git == groups_.end()) return;
    Group& group = git->second;
    group.waiting.erase(r.task_id);
    group.parts.push_back(r);
    if (group.waiting.empty()) {
      finished = std::move(group);
      groups_.erase(git);
      complete = true;
    }
  }
  if (!complete) return;
  if (finished.cancelled) return;  // results of a cancelled task go nowhere

  ResultPackage out = reassemble(parent, finished.parts);
  Envelope result_env = make_result_envelope(out);
  result_env.priority = finished.parent.priority;
  result_env.channel = finished.parent.channel;
  result_env.trace = finished.parent.trace;
  result_env.stamp(id().name,
                   "reassembled " + std::to_string(finished.parts.size()) +
                       " repetition(s)");
  if (!finished.parent.reply_to.empty())
    send(finished.parent.reply_to, std::move(result_env));
}

void SplitterAgent::resubmit_lost(const std::string& down) {
  const std::vector<Envelope> lost = ledger_.on_node_down(down);
  for (const auto& env : lost) {
    Envelope retry = env;  // same envelope id: duplicates stay detectable
    retry.stamp(id().name, "resubmitted after loss of " + down);
    dispatch(std::move(retry));
  }
}

void SplitterAgent::on_tick() {
  std::vector<Envelope> parked;
  {
    std::lock_guard lock(groups_mutex_);
    parked.swap(parked_);
  }
  if (parked.empty()) return;
  for (auto& env : parked) dispatch(std::move(env));
}

void SplitterAgent::on_cancel(const EnvelopeId& id_cancelled) {
  std::vector<EnvelopeId> subs;
  {
    std::lock_guard lock(groups_mutex_);
    auto it = groups_.find(id_cancelled);
    if (it == groups_.end()) return;  // not a parent we know
    it->second.cancelled = true;
    subs.assign(it->second.waiting.begin(), it->second.waiting.end());
  }
  for (const auto& sub : subs) {
    ControlPackage cancel;
    cancel.command = Command::CancelTask;
    cancel.argument = sub.str();
    cancel.target = {TargetKind::Package, sub.str()};
    node_.submit_control(make_control_envelope(cancel));
  }
}

// ---------------------------------------------------------------------------
// Answer

AnswerAgent::AnswerAgent(Node& node, std::string name)
    : Agent(node, {std::move(name), Role::Answer, "", node.name()}) {
  file_writer = [](const std::string& path, const std::string& line) {
    std::FILE* f = std::fopen(path.c_str(), "a");
    if (!f) return false;
    const bool ok = std::fputs(line.c_str(), f) >= 0 && std::fputc('\n', f) != EOF;
    return std::fclose(f) == 0 && ok;
  };
}

void AnswerAgent::on_envelope(Envelope env) {
  if (env.kind != PackageKind::Result) return;
  const ResultPackage& r = *env.result;
  if (r.status == "accepted" || r.status == "idle" || r.status == "status") return;
  const std::string line = result_line(r);
  switch (env.channel.kind) {
    case ChannelKind::Stdout: {
      std::fputs(line.c_str(), stdout);
      std::fputc('\n', stdout);
      std::fflush(stdout);
      env.stamp(id().name, "written to stdout");
      break;
    }
    case ChannelKind::File: {
      bool written = false;
      for (int attempt = 0; attempt < 4 && !written; ++attempt)
        written = file_writer(env.channel.target, line);
      if (written) {
        env.stamp(id().name, "appended to " + env.channel.target);
      } else {
        env.stamp(id().name, "undeliverable");
        log("result " + r.task_id.str() + " undeliverable to " +
            env.channel.target);
        std::lock_guard lock(undelivered_mutex_);
        undelivered_.push_back(std::move(env));
        return;
      }
      break;
    }
    case ChannelKind::Callback: {
      // Copy the target before handing the envelope off: send() takes it by
      // value, and the argument that moves env may be built before the one
      // that reads it.
      const std::string target = env.channel.target;
      env.stamp(id().name, "forwarded to " + target);
      send(target, std::move(env));
      return;
    }
  }
}

std::vector<Envelope> AnswerAgent::undelivered() {
  std::lock_guard lock(undelivered_mutex_);
  return undelivered_;
}

// ---------------------------------------------------------------------------
// Load balancer

LoadBalancerAgent::LoadBalancerAgent(Node& node, std::string name, int capacity)
    : Agent(node, {std::move(name), Role::LoadBalancer, "", node.name()}),
      capacity_(capacity) {}

LoadReport LoadBalancerAgent::current_load() {
  std::lock_guard lock(state_mutex_);
  LoadReport report;
  report.node = node_.name();
  report.active_workers = static_cast<int>(busy_.size());
  report.queued_tasks = static_cast<int>(backlog_.size());
  report.timestamp = wall_now();
  return report;
}

void LoadBalancerAgent::absorb_report(const LoadReport& report) {
  std::lock_guard lock(state_mutex_);
  LoadReport stamped = report;
  stamped.timestamp = wall_now();  // clock of record is the local one
  peer_reports_[report.node] = stamped;
}

void LoadBalancerAgent::on_envelope(Envelope env) {
  if (env.kind == PackageKind::Task) {
    if (!env.reply_to.empty()) {
      ResultPackage notice;
      notice.task_id = env.id;
      notice.status = "accepted";
      notice.node = node_.name();
      Envelope ack = make_result_envelope(notice);
      ack.reply_to = id().name;
      send(env.reply_to, std::move(ack));
    }
    {
      std::lock_guard lock(state_mutex_);
      backlog_.push_back(std::move(env));
    }
    pump();
    return;
  }
  if (env.kind == PackageKind::Result && env.result->status == "idle") {
    {
      std::lock_guard lock(state_mutex_);
      const std::string& worker = env.reply_to;
      if (busy_.erase(worker)) idle_.insert(worker);
    }
    pump();
  }
}

void LoadBalancerAgent::pump() {
  std::vector<std::pair<std::string, Envelope>> assignments;
  std::vector<std::string> retire;
  std::vector<Envelope> cancelled;
  {
    std::lock_guard lock(state_mutex_);
    while (!backlog_.empty()) {
      if (is_cancelled(backlog_.front().id)) {
        cancelled.push_back(std::move(backlog_.front()));
        backlog_.pop_front();
        continue;
      }
      if (idle_.empty() && spawned_ < capacity_) {
        const std::string worker_name =
            id().name + "/w" + std::to_string(++spawned_);
        try {
          node_.add_agent(std::make_unique<WorkerAgent>(node_, worker_name,
                                                        id().name));
        } catch (const Error&) {
          --spawned_;
          break;  // registry unreachable; keep the backlog for later
        }
        idle_.insert(worker_name);
      }
      if (idle_.empty()) break;  // at capacity
      const std::string worker = *idle_.begin();
      idle_.erase(idle_.begin());
      Envelope task = std::move(backlog_.front());
      backlog_.pop_front();
      busy_[worker] = task.id;
      assignments.emplace_back(worker, std::move(task));
    }
    if (backlog_.empty()) {
      // Nothing queued: idle workers are surplus and get retired.
      for (const auto& worker : idle_) {
        retire.push_back(worker);
        --spawned_;
      }
      idle_.clear();
    }
  }
  for (auto& [worker, task] : assignments) send(worker, std::move(task));
  for (auto& env : cancelled) {
    if (env.reply_to.empty()) continue;
    ResultPackage r;
    r.task_id = env.id;
    r.status = "failed";
    r.error = "cancelled";
    r.node = node_.name();
    send(env.reply_to, make_result_envelope(r));
  }
  for (const auto& worker : retire) {
    ControlPackage shutdown;
    shutdown.command = Command::Shutdown;
    shutdown.target = {TargetKind::Agent, worker};
    Envelope env = make_control_envelope(shutdown);
    node_.route(worker, std::move(env));
  }
}

void LoadBalancerAgent::on_tick() {
  node_.broadcast_load(current_load());

  int queued;
  std::vector<LoadReport> peers;
  {
    std::lock_guard lock(state_mutex_);
    queued = static_cast<int>(backlog_.size());
    for (const auto& [node, report] : peer_reports_) peers.push_back(report);
  }
  const double heartbeat_s =
      std::chrono::duration<double>(node_.timing().heartbeat).count();
  const BalanceDecision decision =
      balance(queued, capacity_, peers, wall_now(), heartbeat_s);
  if (decision.delegate_count > 0) {
    std::vector<AgentId> balancers;
    try {
      balancers = node_.lookup(Role::LoadBalancer);
    } catch (const Error&) {
      return;
    }
    const AgentId* peer_lb = nullptr;
    for (const auto& b : balancers)
      if (b.node == decision.to_node) peer_lb = &b;
    if (!peer_lb) return;
    std::vector<Envelope> moved;
    {
      std::lock_guard lock(state_mutex_);
      for (int i = 0; i < decision.delegate_count && !backlog_.empty(); ++i) {
        moved.push_back(std::move(backlog_.back()));
        backlog_.pop_back();
      }
    }
    for (auto& env : moved) {
      env.stamp(id().name, "delegated to " + decision.to_node);
      send(peer_lb->name, std::move(env));
    }
  }
  pump();
}

// ---------------------------------------------------------------------------
// Worker

WorkerAgent::WorkerAgent(Node& node, std::string name, std::string balancer)
    : Agent(node, {std::move(name), Role::Worker, "any", node.name()}),
      balancer_(std::move(balancer)) {}

void WorkerAgent::on_envelope(Envelope env) {
  if (env.kind != PackageKind::Task) return;
  auto flag = std::make_shared<std::atomic<bool>>(false);
  {
    std::lock_guard lock(current_mutex_);
    current_id_ = env.id;
    cancel_flag_ = flag;
  }
  if (is_cancelled(env.id)) flag->store(true);

  ResultPackage r;
  r.task_id = env.id;
  r.node = node_.name();
  const TaskPackage& task = *env.task;
  r.seed = task.seed;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (!task.instance)
      throw Error("invalid-task", "task reached a worker without an instance");
    if (!task.algorithm)
      throw Error("invalid-task", "task reached a worker without an algorithm");
    OptOptions options;
    options.cancel = flag.get();
    const OptRun run = run_algorithm(*task.algorithm, *task.instance,
                                     task.budget, task.seed, task.params,
                                     options);
    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                  t0)
            .count();
    if (flag->load()) {
      r.status = "failed";
      r.error = "cancelled";
    }
    r.algorithm = algorithm_name(run.algorithm);
    r.makespan = run.best_makespan;
    r.evals = run.evals_used;
    r.wall_ms = wall_ms;
    if (r.status == "done")
      r.details = {{task.seed, run.best_makespan, run.evals_used, wall_ms,
                    node_.name()}};
  } catch (const Error& e) {
    r.status = "failed";
    r.error = e.code();
    if (task.algorithm) r.algorithm = algorithm_name(*task.algorithm);
  }
  {
    std::lock_guard lock(current_mutex_);
    current_id_ = {};
    cancel_flag_.reset();
  }
  env.stamp(id().name, r.status == "done" ? "optimized" : "failed: " + r.error);
  Envelope result_env = make_result_envelope(r);
  result_env.trace = env.trace;
  send(env.reply_to, std::move(result_env));

  ResultPackage idle;
  idle.task_id = env.id;
  idle.status = "idle";
  idle.node = node_.name();
  Envelope ping = make_result_envelope(idle);
  ping.reply_to = id().name;
  send(balancer_, std::move(ping));
}

void WorkerAgent::on_cancel(const EnvelopeId& id_cancelled) {
  std::lock_guard lock(current_mutex_);
  if (cancel_flag_ && current_id_ == id_cancelled) cancel_flag_->store(true);
}

void WorkerAgent::on_dropped(Envelope env) {
  // The task was cancelled before it started; everyone waiting still hears.
  if (env.kind == PackageKind::Task && !env.reply_to.empty()) {
    ResultPackage r;
    r.task_id = env.id;
    r.status = "failed";
    r.error = "cancelled";
    r.node = node_.name();
    if (env.task && env.task->algorithm)
      r.algorithm = algorithm_name(*env.task->algorithm);
    send(env.reply_to, make_result_envelope(r));
  }
  ResultPackage idle;
  idle.task_id = env.id;
  idle.status = "idle";
  idle.node = node_.name();
  Envelope ping = make_result_envelope(idle);
  ping.reply_to = id().name;
  send(balancer_, std::move(ping));
}

void WorkerAgent::on_freeze() {
  std::lock_guard lock(current_mutex_);
  if (cancel_flag_) cancel_flag_->store(true);
}

// ---------------------------------------------------------------------------
// Result sink

ResultSinkAgent::ResultSinkAgent(Node& node, std::string name)
    : Agent(node, {std::move(name), Role::Client, "sink", node.name()}) {}

bool ResultSinkAgent::wait_for(std::size_t count,
                               std::chrono::milliseconds timeout) {
  std::unique_lock lock(results_mutex_);
  return got_.wait_for(lock, timeout,
                       [&] { return results_.size() >= count; });
}

std::vector<ResultPackage> ResultSinkAgent::results() {
  std::lock_guard lock(results_mutex_);
  return results_;
}

void ResultSinkAgent::on_envelope(Envelope env) {
  if (env.kind != PackageKind::Result) return;
  const ResultPackage& r = *env.result;
  if (r.status != "done" && r.status != "failed") return;
  std::lock_guard lock(results_mutex_);
  results_.push_back(r);
  got_.notify_all();
}

// ---------------------------------------------------------------------------
// Standard wiring

std::string install_management(Node& node) {
  const std::string base = node.name();
  node.add_agent(std::make_unique<ServerMarkerAgent>(node, base + "/server"));
  node.add_agent(std::make_unique<ControllerAgent>(node, base + "/controller"));
  node.add_agent(std::make_unique<CollectorAgent>(node, base + "/collector"));
  node.add_agent(std::make_unique<SplitterAgent>(node, base + "/splitter"));
  node.add_agent(std::make_unique<AnswerAgent>(node, base + "/answer"));
  return base + "/collector";
}

void install_worker_pool(Node& node) {
  const std::string base = node.name();
  if (node.connected())
    node.add_agent(std::make_unique<ClientMarkerAgent>(node, base + "/client"));
  node.add_agent(std::make_unique<LoadBalancerAgent>(node, base + "/balancer",
                                                     node.capacity()));
}

void submit_task_file(Node& node, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io-error", "cannot read task file '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  std::vector<Envelope> envelopes = parse_task_file(buffer.str());
  static std::atomic<int> counter{0};
  const std::string name =
      node.name() + "/contractor-" + std::to_string(++counter);
  node.add_agent(
      std::make_unique<ContractorAgent>(node, name, std::move(envelopes)));
}

ResultSinkAgent& install_sink(Node& node, const std::string& name) {
  auto sink = std::make_unique<ResultSinkAgent>(node, name);
  ResultSinkAgent& ref = *sink;
  node.add_agent(std::move(sink));
  return ref;
}

}  // namespace lagoon
