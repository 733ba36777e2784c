#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>
#include <vector>

#include <json.hpp>

#include "helpers.hpp"
#include "lagoon/error.hpp"
#include "lagoon/runtime.hpp"

using namespace lagoon;
using namespace std::chrono_literals;
using nlohmann::json;
using testutil::aab;
using testutil::error_code_of;
using testutil::make_instance;

namespace {

// Polls until the condition holds or the timeout passes.
template <typename Pred>
bool eventually(Pred&& pred, std::chrono::milliseconds timeout = 5000ms) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(10ms);
  }
  return pred();
}

// Grabs a currently free TCP port. The throwaway listener frees it again, so
// a concurrent process could snatch it; callers retry on listen-failed.
void listen_somewhere(Node& node) {
  for (int attempt = 0; attempt < 10; ++attempt) {
    TcpListener probe(0, [](std::unique_ptr<ByteChannel>) {});
    const std::uint16_t port = probe.port();
    probe.stop();
    try {
      node.listen(port);
      return;
    } catch (const Error&) {
      // taken in the meantime; pick another
    }
  }
  throw Error("listen-failed", "no free port after several attempts");
}

// Records everything it processes; an optional per-envelope delay simulates
// a busy working step.
class ProbeAgent : public Agent {
 public:
  ProbeAgent(Node& node, std::string name,
             std::chrono::milliseconds step_delay = 0ms)
      : Agent(node, {std::move(name), Role::Client, "probe", node.name()}),
        step_delay_(step_delay) {}

  std::vector<Envelope> seen() {
    std::lock_guard lock(seen_mutex_);
    return seen_;
  }
  std::vector<EnvelopeId> dropped() {
    std::lock_guard lock(seen_mutex_);
    return dropped_;
  }
  bool wait_seen(std::size_t count, std::chrono::milliseconds timeout) {
    std::unique_lock lock(seen_mutex_);
    return grew_.wait_for(lock, timeout, [&] { return seen_.size() >= count; });
  }

 protected:
  void on_envelope(Envelope env) override {
    if (step_delay_ > 0ms) std::this_thread::sleep_for(step_delay_);
    std::lock_guard lock(seen_mutex_);
    seen_.push_back(std::move(env));
    grew_.notify_all();
  }
  void on_dropped(Envelope env) override {
    std::lock_guard lock(seen_mutex_);
    dropped_.push_back(env.id);
    grew_.notify_all();
  }

 private:
  std::chrono::milliseconds step_delay_;
  std::mutex seen_mutex_;
  std::condition_variable grew_;
  std::vector<Envelope> seen_;
  std::vector<EnvelopeId> dropped_;
};

Instance two_machines() {
  return make_instance({10.0, 4.0}, {0, 0, 1, 1},
                       {{1.0, 1, {}}, {1.0, 1, {}}});
}

TaskPackage basic_task(Algorithm algo, std::int64_t budget, std::uint64_t seed,
                       int repetitions = 1) {
  TaskPackage t;
  t.instance = aab();
  t.algorithm = algo;
  t.budget = budget;
  t.seed = seed;
  t.repetitions = repetitions;
  return t;
}

bool trace_mentions(const std::vector<TraceEntry>& trace, const std::string& text) {
  for (const auto& entry : trace)
    if (entry.note.find(text) != std::string::npos) return true;
  return false;
}

std::filesystem::path fresh_path(const std::string& stem) {
  static std::atomic<int> counter{0};
  return std::filesystem::temp_directory_path() /
         (stem + "-" + std::to_string(::getpid()) + "-" +
          std::to_string(++counter));
}

}  // namespace

// ---------------------------------------------------------------------------
// Algorithm selection

TEST_CASE("an explicit algorithm choice passes through the selection rule") {
  TaskPackage t = basic_task(Algorithm::PSO, 10, 1);
  t.params = {{"swarm_size", 7}};
  auto [algo, params] = controller_select(t);
  CHECK(algo == Algorithm::PSO);
  CHECK(params == t.params);
}

TEST_CASE("several machines and a small budget select the partition search") {
  TaskPackage t;
  t.instance = two_machines();
  t.budget = 4999;
  auto [algo, params] = controller_select(t);
  CHECK(algo == Algorithm::CC);
  CHECK(params.empty());  // the meta rule fills parameters downstream
}

TEST_CASE("large budgets and single machines select the plain descent") {
  TaskPackage multi;
  multi.instance = two_machines();
  multi.budget = 5000;  // boundary: no longer a small budget
  auto [a1, p1] = controller_select(multi);
  CHECK(a1 == Algorithm::RDS);
  CHECK(p1.at("reinit_limit") == 700);

  TaskPackage single;
  single.instance = aab();
  single.budget = 100;
  auto [a2, p2] = controller_select(single);
  CHECK(a2 == Algorithm::RDS);
  CHECK(p2.at("reinit_limit") == 700);

  TaskPackage tuned;
  tuned.instance = aab();
  tuned.budget = 100;
  tuned.params = {{"reinit_limit", 50}};
  auto [a3, p3] = controller_select(tuned);
  CHECK(a3 == Algorithm::RDS);
  CHECK(p3.at("reinit_limit") == 50);  // explicit knobs win
}

TEST_CASE("selection without an instance is an error") {
  CHECK(error_code_of([] { controller_select(TaskPackage{}); }) ==
        "invalid-task");
}

// ---------------------------------------------------------------------------
// Collecting results

TEST_CASE("best-of collection keeps the winner and its provenance") {
  ResultPackage a, b, c;
  a.task_id = EnvelopeId::fresh();
  a.makespan = 12.0;
  b.task_id = EnvelopeId::fresh();
  b.makespan = 9.0;
  c.task_id = EnvelopeId::fresh();
  c.makespan = 15.0;
  const ResultPackage best = collect(Evaluation::BestOf, {a, b, c});
  CHECK(best.status == "done");
  CHECK(best.makespan == 9.0);
  CHECK(best.task_id == b.task_id);
  CHECK(best.details.size() == 3);  // every member stays visible
  CHECK(best.error.empty());
}

TEST_CASE("failed members are counted but do not poison the collection") {
  ResultPackage ok, bad;
  ok.makespan = 5.0;
  ok.task_id = EnvelopeId::fresh();
  bad.status = "failed";
  bad.error = "boom";
  const ResultPackage out = collect(Evaluation::All, {bad, ok});
  CHECK(out.status == "done");
  CHECK(out.makespan == 5.0);
  CHECK(out.details.size() == 1);
  CHECK(out.error == "1 member(s) failed");

  const ResultPackage none = collect(Evaluation::BestOf, {bad, bad});
  CHECK(none.status == "failed");
  CHECK(none.error == "all 2 member(s) failed");

  CHECK(error_code_of([] { collect(Evaluation::BestOf, {}); }) ==
        "invalid-collection");
}

// ---------------------------------------------------------------------------
// Splitting and reassembly

TEST_CASE("splitting fans one task into consecutively seeded repetitions") {
  TaskPackage t = basic_task(Algorithm::MC, 40, 100, 4);
  const auto parts = split_task(t);
  REQUIRE(parts.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(parts[static_cast<std::size_t>(i)].seed == 100 + static_cast<std::uint64_t>(i));
    CHECK(parts[static_cast<std::size_t>(i)].repetitions == 1);
    CHECK(parts[static_cast<std::size_t>(i)].budget == 40);
    CHECK(parts[static_cast<std::size_t>(i)].algorithm == Algorithm::MC);
  }

  const auto single = split_task(basic_task(Algorithm::MC, 40, 100, 1));
  REQUIRE(single.size() == 1);
  CHECK(single[0].seed == 100);
}

TEST_CASE("reassembly restores the parent id and keeps every repetition") {
  const EnvelopeId parent = EnvelopeId::fresh();
  ResultPackage r1, r2, r3;
  r1.makespan = 22.0;
  r1.seed = 1;
  r2.makespan = 20.0;
  r2.seed = 2;
  r3.makespan = 24.0;
  r3.seed = 3;
  const ResultPackage out = reassemble(parent, {r1, r2, r3});
  CHECK(out.task_id == parent);
  CHECK(out.makespan == 20.0);
  CHECK(out.seed == 2);
  REQUIRE(out.details.size() == 3);
}

// ---------------------------------------------------------------------------
// Work stealing

TEST_CASE("an overloaded balancer hands the excess to a nearly idle peer") {
  LoadReport idle{"peer-b", 0, 0, 100.0};
  const BalanceDecision d = balance(10, 4, {idle}, 100.5, 1.0);
  CHECK(d.pool_size == 4);
  CHECK(d.delegate_count == 2);  // everything beyond twice the capacity
  CHECK(d.to_node == "peer-b");
}

TEST_CASE("no delegation happens below the overload threshold") {
  LoadReport idle{"peer-b", 0, 0, 100.0};
  CHECK(balance(8, 4, {idle}, 100.5, 1.0).delegate_count == 0);  // 8 == 2*4
  CHECK(balance(0, 4, {idle}, 100.5, 1.0).pool_size == 0);
  CHECK(balance(3, 4, {idle}, 100.5, 1.0).pool_size == 3);
}

TEST_CASE("stale and busy peers are never delegation targets") {
  LoadReport stale{"peer-b", 0, 0, 90.0};  // 10.5s old, threshold 3s
  CHECK(balance(10, 4, {stale}, 100.5, 1.0).delegate_count == 0);

  LoadReport busy{"peer-b", 2, 2, 100.0};  // queued 2 >= capacity 4 / 2
  CHECK(balance(10, 4, {busy}, 100.5, 1.0).delegate_count == 0);

  LoadReport nearly{"peer-b", 2, 1, 100.0};  // queued 1 < capacity 4 / 2
  CHECK(balance(10, 4, {nearly}, 100.5, 1.0).delegate_count == 2);

  // Half of capacity is a real-valued bar: a capacity-1 balancer can still
  // delegate to a completely idle peer.
  LoadReport empty{"peer-b", 0, 0, 100.0};
  CHECK(balance(5, 1, {empty}, 100.5, 1.0).delegate_count == 3);
}

TEST_CASE("the least loaded peer wins, ties breaking by name") {
  LoadReport b{"peer-b", 0, 1, 100.0};
  LoadReport c{"peer-c", 0, 0, 100.0};
  LoadReport a{"peer-a", 0, 0, 100.0};
  const BalanceDecision d = balance(20, 4, {b, c, a}, 100.5, 1.0);
  CHECK(d.delegate_count == 12);
  CHECK(d.to_node == "peer-a");
}

// ---------------------------------------------------------------------------
// The outstanding-work ledger

TEST_CASE("the ledger answers a node failure with exactly the open envelopes") {
  Ledger ledger;
  Envelope e1 = make_task_envelope(basic_task(Algorithm::MC, 10, 1));
  Envelope e2 = make_task_envelope(basic_task(Algorithm::MC, 10, 2));
  Envelope e3 = make_task_envelope(basic_task(Algorithm::MC, 10, 3));
  ledger.track(e1, "node-a");
  ledger.track(e2, "node-a");
  ledger.track(e3, "node-b");
  CHECK(ledger.outstanding() == 3);
  CHECK(ledger.tracked(e1.id));

  CHECK(ledger.complete(e2.id));
  CHECK_FALSE(ledger.complete(e2.id));  // the second result is a duplicate
  CHECK(ledger.outstanding() == 2);

  auto lost = ledger.on_node_down("node-a");
  REQUIRE(lost.size() == 1);
  CHECK(lost[0].id == e1.id);
  CHECK(ledger.outstanding() == 2);  // entries stay open until resubmitted

  ledger.track(lost[0], "node-b");  // resubmission under the same id
  CHECK(ledger.on_node_down("node-a").empty());
  CHECK(ledger.on_node_down("node-b").size() == 2);
}

TEST_CASE("acceptance moves an entry to the accepting node") {
  Ledger ledger;
  Envelope e = make_task_envelope(basic_task(Algorithm::MC, 10, 1));
  ledger.track(e, "node-a");
  ledger.accepted(e.id, "node-b");  // a peer took the task over
  CHECK(ledger.on_node_down("node-a").empty());
  CHECK(ledger.on_node_down("node-b").size() == 1);

  CHECK(ledger.complete(e.id));
  ledger.accepted(e.id, "node-c");  // late notice; must not resurrect
  CHECK_FALSE(ledger.tracked(e.id));
}

// ---------------------------------------------------------------------------
// Registry

TEST_CASE("the registry enforces unique names and answers by role") {
  Registry reg;
  reg.add({"b/worker", Role::Worker, "any", "b"});
  reg.add({"a/worker", Role::Worker, "any", "a"});
  reg.add({"a/balancer", Role::LoadBalancer, "", "a"});
  CHECK(error_code_of([&] {
          reg.add({"a/worker", Role::Collector, "", "c"});
        }) == "duplicate-name");

  const auto workers = reg.lookup(Role::Worker);
  REQUIRE(workers.size() == 2);
  CHECK(workers[0].name == "a/worker");  // sorted by name
  CHECK(workers[1].name == "b/worker");
  CHECK(reg.lookup(Role::Splitter).empty());

  REQUIRE(reg.find("a/balancer").has_value());
  CHECK(reg.find("a/balancer")->role == Role::LoadBalancer);
  CHECK_FALSE(reg.find("ghost").has_value());

  CHECK(reg.remove("b/worker"));
  CHECK_FALSE(reg.remove("b/worker"));
  CHECK(reg.size() == 2);

  const auto removed = reg.remove_node("a");
  CHECK(removed.size() == 2);
  CHECK(reg.size() == 0);
}

TEST_CASE("role names round-trip and unknown ones are rejected") {
  for (Role r : {Role::Server, Role::TaskContractor, Role::Controller,
                 Role::Collector, Role::Splitter, Role::Answer, Role::Client,
                 Role::LoadBalancer, Role::Worker})
    CHECK(parse_role(role_name(r)) == r);
  CHECK(error_code_of([] { parse_role("janitor"); }) == "unknown-role");
}

// ---------------------------------------------------------------------------
// Envelopes on the wire

TEST_CASE("envelope identities print as 32 hex digits and parse back") {
  const EnvelopeId id = EnvelopeId::fresh();
  CHECK(id.str().size() == 32);
  CHECK(EnvelopeId::parse(id.str()) == id);
  CHECK(EnvelopeId::fresh() != EnvelopeId::fresh());
  CHECK(EnvelopeId::parse(std::string(32, '0')) == EnvelopeId{});
  CHECK(error_code_of([] { EnvelopeId::parse("abc"); }) == "invalid-envelope-id");
  CHECK(error_code_of([] { EnvelopeId::parse(std::string(32, 'g')); }) ==
        "invalid-envelope-id");
}

TEST_CASE("task envelopes survive the JSON round trip") {
  TaskPackage t = basic_task(Algorithm::RDS, 500, 42, 3);
  t.params = {{"reinit_limit", 10}};
  t.instance_ref = "fixtures/aab";
  Envelope env = make_task_envelope(t, 8, {ChannelKind::File, "/tmp/out.jsonl"});
  env.reply_to = "hub/collector";
  env.stamp("test", "packed");

  const Envelope back = Envelope::from_json(env.to_json());
  CHECK(back.id == env.id);
  CHECK(back.priority == 8);
  CHECK(back.kind == PackageKind::Task);
  CHECK(back.channel.kind == ChannelKind::File);
  CHECK(back.channel.target == "/tmp/out.jsonl");
  CHECK(back.reply_to == "hub/collector");
  REQUIRE(back.trace.size() == 1);
  CHECK(back.trace[0].note == "packed");
  REQUIRE(back.task.has_value());
  CHECK(back.task->algorithm == Algorithm::RDS);
  CHECK(back.task->budget == 500);
  CHECK(back.task->seed == 42);
  CHECK(back.task->repetitions == 3);
  CHECK(back.task->params == t.params);
  CHECK(back.task->instance_ref == "fixtures/aab");
  REQUIRE(back.task->instance.has_value());
  CHECK(back.task->instance->to_json() == t.instance->to_json());
}

TEST_CASE("collection, control, and result envelopes survive the round trip") {
  CollectionPackage coll;
  coll.evaluation = Evaluation::All;
  coll.tasks = {basic_task(Algorithm::MC, 10, 1), basic_task(Algorithm::MC, 10, 2)};
  const Envelope c = Envelope::from_json(make_collection_envelope(coll, 3).to_json());
  CHECK(c.kind == PackageKind::Collection);
  REQUIRE(c.collection.has_value());
  CHECK(c.collection->evaluation == Evaluation::All);
  REQUIRE(c.collection->tasks.size() == 2);
  CHECK(c.collection->tasks[1].seed == 2);

  ControlPackage ctl;
  ctl.command = Command::CancelTask;
  ctl.argument = EnvelopeId::fresh().str();
  ctl.target = {TargetKind::Package, ctl.argument};
  const Envelope k = Envelope::from_json(make_control_envelope(ctl).to_json());
  CHECK(k.kind == PackageKind::Control);
  REQUIRE(k.control.has_value());
  CHECK(k.control->command == Command::CancelTask);
  CHECK(k.control->argument == ctl.argument);
  CHECK(k.control->target.kind == TargetKind::Package);

  ResultPackage r;
  r.task_id = EnvelopeId::fresh();
  r.status = "done";
  r.algorithm = "rds";
  r.makespan = 19.5;
  r.details = {{7, 19.5, 100, 3.25, "edge"}};
  const Envelope res = Envelope::from_json(make_result_envelope(r).to_json());
  REQUIRE(res.result.has_value());
  CHECK(res.result->task_id == r.task_id);
  CHECK(res.result->makespan == 19.5);
  REQUIRE(res.result->details.size() == 1);
  CHECK(res.result->details[0].node == "edge");
}

TEST_CASE("malformed envelopes are rejected with a reason") {
  json good = make_task_envelope(basic_task(Algorithm::MC, 10, 1)).to_json();

  json bad_priority = good;
  bad_priority["priority"] = 12;
  CHECK(error_code_of([&] { Envelope::from_json(bad_priority); }) ==
        "invalid-envelope");

  json bad_kind = good;
  bad_kind["kind"] = "parcel";
  CHECK(error_code_of([&] { Envelope::from_json(bad_kind); }) ==
        "invalid-envelope");

  CHECK(error_code_of([] {
          TaskPackage t;
          t.budget = 0;
          TaskPackage::from_json(t.to_json());
        }) == "invalid-task");
  CHECK(error_code_of([] {
          TaskPackage::from_json(json{{"algorithm", "sorcery"}, {"budget", 1}});
        }) == "invalid-task");
}

TEST_CASE("the one-line result form carries the reporting fields") {
  ResultPackage r;
  r.task_id = EnvelopeId::fresh();
  r.algorithm = "cc";
  r.makespan = 31.25;
  r.seed = 9;
  r.evals = 1000;
  r.wall_ms = 12.5;
  r.node = "edge";
  const json j = json::parse(result_line(r));
  CHECK(j.at("id") == r.task_id.str());
  CHECK(j.at("algorithm") == "cc");
  CHECK(j.at("makespan") == 31.25);
  CHECK(j.at("seed") == 9);
  CHECK(j.at("evals") == 1000);
  CHECK(j.at("node") == "edge");
}

// ---------------------------------------------------------------------------
// Task files

TEST_CASE("a task file turns into ready envelopes with priority and output") {
  json file = json::array();
  json entry1 = basic_task(Algorithm::MC, 50, 1, 2).to_json();
  entry1["priority"] = 7;
  entry1["output"] = {{"kind", "file"}, {"target", "/tmp/results.jsonl"}};
  file.push_back(entry1);
  file.push_back(basic_task(Algorithm::RDS, 20, 5).to_json());

  const auto envelopes = parse_task_file(file.dump(2));
  REQUIRE(envelopes.size() == 2);
  CHECK(envelopes[0].priority == 7);
  CHECK(envelopes[0].channel.kind == ChannelKind::File);
  CHECK(envelopes[0].channel.target == "/tmp/results.jsonl");
  CHECK(envelopes[0].task->repetitions == 2);
  CHECK(envelopes[1].priority == 5);
  CHECK(envelopes[1].channel.kind == ChannelKind::Stdout);
  CHECK(envelopes[0].id != envelopes[1].id);
}

TEST_CASE("a syntax error is reported with its line number") {
  const std::string text = "[\n  {\"budget\": 5},\n  what\n]\n";
  try {
    parse_task_file(text);
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == "parse-error");
    CHECK(std::string{e.what()}.find("line 3") != std::string::npos);
  }
}

TEST_CASE("a semantic error names the offending task and submits nothing") {
  json file = json::array();
  file.push_back(basic_task(Algorithm::MC, 50, 1).to_json());
  json bad = basic_task(Algorithm::MC, 50, 1).to_json();
  bad["budget"] = 0;
  file.push_back(bad);
  try {
    parse_task_file(file.dump());
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == "parse-error");
    CHECK(std::string{e.what()}.find("task 2") != std::string::npos);
  }
  CHECK(error_code_of([] { parse_task_file("{}"); }) == "parse-error");

  json out_of_range = json::array({json{{"budget", 1}, {"priority", 11}}});
  CHECK(error_code_of([&] { parse_task_file(out_of_range.dump()); }) ==
        "parse-error");
}

// ---------------------------------------------------------------------------
// Agent mechanics

TEST_CASE("queued envelopes drain by priority, ties in arrival order") {
  Node node({"solo"});
  ProbeAgent probe(node, "solo/probe");
  const int priorities[] = {3, 9, 5, 0, 9};
  for (int i = 0; i < 5; ++i) {
    TaskPackage t;
    t.seed = static_cast<std::uint64_t>(i);  // marks the arrival order
    probe.deliver(make_task_envelope(t, priorities[i]));
  }
  probe.start();
  REQUIRE(probe.wait_seen(5, 5000ms));
  const auto seen = probe.seen();
  std::vector<int> order;
  for (const auto& env : seen) order.push_back(env.priority);
  CHECK(order == std::vector<int>{9, 9, 5, 3, 0});
  CHECK(seen[0].task->seed == 1);  // the first-arrived of the two nines
  CHECK(seen[1].task->seed == 4);
  probe.halt();
}

TEST_CASE("control packages act while the working thread is busy") {
  Node node({"solo"});
  auto& busy = dynamic_cast<ProbeAgent&>(
      node.add_agent(std::make_unique<ProbeAgent>(node, "solo/busy", 250ms)));
  auto& watcher = dynamic_cast<ProbeAgent&>(
      node.add_agent(std::make_unique<ProbeAgent>(node, "solo/watch")));

  busy.deliver(make_task_envelope(basic_task(Algorithm::MC, 1, 1)));
  busy.deliver(make_task_envelope(basic_task(Algorithm::MC, 1, 2)));
  std::this_thread::sleep_for(50ms);  // the first task is now in progress

  ControlPackage status;
  status.command = Command::ReportStatus;
  status.target = {TargetKind::Agent, "solo/busy"};
  Envelope control = make_control_envelope(status);
  control.reply_to = "solo/watch";
  node.submit_control(std::move(control));

  REQUIRE(watcher.wait_seen(1, 2000ms));
  const auto seen = watcher.seen();
  REQUIRE(seen.size() == 1);
  REQUIRE(seen[0].result.has_value());
  CHECK(seen[0].result->status == "status");
  CHECK(seen[0].result->algorithm == role_name(Role::Client));
  // One envelope still queued: the reply described the mid-work state, so the
  // control never waited behind the backlog.
  CHECK(seen[0].result->evals == 1);
}

TEST_CASE("cancelling a queued task drops it without processing") {
  Node node({"solo"});
  ProbeAgent probe(node, "solo/probe", 200ms);
  probe.start();

  Envelope first = make_task_envelope(basic_task(Algorithm::MC, 1, 1));
  Envelope victim = make_task_envelope(basic_task(Algorithm::MC, 1, 2));
  Envelope last = make_task_envelope(basic_task(Algorithm::MC, 1, 3));
  const EnvelopeId victim_id = victim.id;
  probe.deliver(std::move(first));
  probe.deliver(std::move(victim));
  probe.deliver(std::move(last));
  std::this_thread::sleep_for(50ms);  // the first task is now in progress

  ControlPackage cancel;
  cancel.command = Command::CancelTask;
  cancel.argument = victim_id.str();
  cancel.target = {TargetKind::Agent, "solo/probe"};
  probe.deliver(make_control_envelope(cancel));

  REQUIRE(probe.wait_seen(2, 5000ms));
  for (const auto& env : probe.seen()) CHECK(env.id != victim_id);
  const auto dropped = probe.dropped();
  REQUIRE(dropped.size() == 1);
  CHECK(dropped[0] == victim_id);

  // A cancelled id arriving later is dropped on sight as well.
  Envelope again = make_task_envelope(basic_task(Algorithm::MC, 1, 4));
  again.id = victim_id;
  probe.deliver(std::move(again));
  REQUIRE(eventually([&] { return probe.dropped().size() == 2; }));
  probe.halt();
}

TEST_CASE("debug switches flip per agent and shutdown leaves the registry") {
  Node node({"solo"});
  auto& probe = node.add_agent(std::make_unique<ProbeAgent>(node, "solo/probe"));
  CHECK_FALSE(probe.debug_enabled());

  ControlPackage on;
  on.command = Command::DebugOn;
  on.target = {TargetKind::Agent, "solo/probe"};
  node.submit_control(make_control_envelope(on));
  CHECK(probe.debug_enabled());

  ControlPackage off;
  off.command = Command::DebugOff;
  off.target = {TargetKind::Agent, "solo/probe"};
  node.submit_control(make_control_envelope(off));
  CHECK_FALSE(probe.debug_enabled());

  CHECK(node.registry_size() == 1);
  ControlPackage down;
  down.command = Command::Shutdown;
  down.target = {TargetKind::Agent, "solo/probe"};
  node.submit_control(make_control_envelope(down));
  CHECK(eventually([&] { return node.registry_size() == 0; }));
  CHECK(eventually([&] { return probe.stopping(); }));
}

TEST_CASE("sending to an unknown agent raises, routing merely drops") {
  Node node({"solo"});
  CHECK(error_code_of([&] {
          node.enqueue("solo/ghost",
                       make_task_envelope(basic_task(Algorithm::MC, 1, 1)));
        }) == "unknown-agent");
  // route() is the fire-and-forget variant
  node.route("solo/ghost", make_task_envelope(basic_task(Algorithm::MC, 1, 1)));
}

// ---------------------------------------------------------------------------
// The full pipeline on one node

TEST_CASE("a task travels contractor-free through the management pipeline") {
  Node node({"hub", Timing{100ms, 3}, 2});
  const std::string collector = install_management(node);
  install_worker_pool(node);
  auto& probe = dynamic_cast<ProbeAgent&>(
      node.add_agent(std::make_unique<ProbeAgent>(node, "hub/catch")));

  TaskPackage task = basic_task(Algorithm::RDS, 300, 7, 2);
  Envelope env = make_task_envelope(task, 6, {ChannelKind::Callback, "hub/catch"});
  node.enqueue(collector, std::move(env));

  REQUIRE(probe.wait_seen(1, 15000ms));
  const Envelope out = probe.seen().at(0);
  REQUIRE(out.result.has_value());
  const ResultPackage& r = *out.result;
  CHECK(r.status == "done");
  CHECK(r.algorithm == algorithm_name(Algorithm::RDS));

  const double best7 = run_algorithm(Algorithm::RDS, aab(), 300, 7).best_makespan;
  const double best8 = run_algorithm(Algorithm::RDS, aab(), 300, 8).best_makespan;
  CHECK(r.makespan == std::min(best7, best8));
  REQUIRE(r.details.size() == 2);
  std::set<std::uint64_t> seeds{r.details[0].seed, r.details[1].seed};
  CHECK(seeds == std::set<std::uint64_t>{7, 8});
  CHECK(r.details[0].node == "hub");
  CHECK(r.node == "hub");

  // The trace tells the whole story: selection, split, reassembly, delivery.
  CHECK(out.priority == 6);
  CHECK(trace_mentions(out.trace, "algorithm rds"));
  CHECK(trace_mentions(out.trace, "reassembled 2 repetition(s)"));
  CHECK(trace_mentions(out.trace, "best-of complete"));
  CHECK(trace_mentions(out.trace, "forwarded to hub/catch"));

  auto* splitter = dynamic_cast<SplitterAgent*>(node.find_agent("hub/splitter"));
  REQUIRE(splitter != nullptr);
  CHECK(eventually([&] { return splitter->outstanding() == 0; }));
}

TEST_CASE("a collection reports the best of its members") {
  Node node({"hub", Timing{100ms, 3}, 2});
  const std::string collector = install_management(node);
  install_worker_pool(node);
  auto& sink = install_sink(node, "hub/sink");

  CollectionPackage coll;
  coll.evaluation = Evaluation::BestOf;
  coll.tasks = {basic_task(Algorithm::MC, 80, 1), basic_task(Algorithm::MC, 80, 2)};
  node.enqueue(collector, make_collection_envelope(
                              coll, 5, {ChannelKind::Callback, "hub/sink"}));

  REQUIRE(sink.wait_for(1, 15000ms));
  const ResultPackage r = sink.results().at(0);
  CHECK(r.status == "done");
  const double m1 = run_algorithm(Algorithm::MC, aab(), 80, 1).best_makespan;
  const double m2 = run_algorithm(Algorithm::MC, aab(), 80, 2).best_makespan;
  CHECK(r.makespan == std::min(m1, m2));
  CHECK(r.details.size() == 2);
}

TEST_CASE("a broken member fails alone; a fully broken collection fails loudly") {
  Node node({"hub", Timing{100ms, 3}, 2});
  const std::string collector = install_management(node);
  install_worker_pool(node);
  auto& sink = install_sink(node, "hub/sink");

  TaskPackage broken;  // no instance, no algorithm: nothing to work with
  broken.budget = 10;
  CollectionPackage coll;
  coll.tasks = {basic_task(Algorithm::MC, 40, 1), broken};
  node.enqueue(collector, make_collection_envelope(
                              coll, 5, {ChannelKind::Callback, "hub/sink"}));
  REQUIRE(sink.wait_for(1, 15000ms));
  ResultPackage r = sink.results().at(0);
  CHECK(r.status == "done");
  CHECK(r.error == "1 member(s) failed");

  Envelope doomed = make_task_envelope(broken, 5, {ChannelKind::Callback, "hub/sink"});
  node.enqueue(collector, std::move(doomed));
  REQUIRE(sink.wait_for(2, 15000ms));
  r = sink.results().at(1);
  CHECK(r.status == "failed");
  CHECK(r.error == "all 1 member(s) failed");
}

TEST_CASE("task files are submitted whole via a short-lived contractor") {
  Node node({"hub", Timing{100ms, 3}, 2});
  install_management(node);
  install_worker_pool(node);
  auto& sink = install_sink(node, "hub/sink");

  json file = json::array();
  for (int i = 0; i < 2; ++i) {
    json entry = basic_task(Algorithm::MC, 60, static_cast<std::uint64_t>(i)).to_json();
    entry["output"] = {{"kind", "callback"}, {"target", "hub/sink"}};
    file.push_back(entry);
  }
  const auto path = fresh_path("tasks");
  std::ofstream(path) << file.dump(2);

  submit_task_file(node, path.string());
  REQUIRE(sink.wait_for(2, 15000ms));
  CHECK(sink.results().size() == 2);
  // The contractor has left the registry; only its stopped shell remains.
  CHECK(eventually([&] { return node.lookup(Role::TaskContractor).empty(); }));

  CHECK(error_code_of([&] { submit_task_file(node, "/no/such/file.json"); }) ==
        "io-error");
  const auto bad = fresh_path("tasks-bad");
  std::ofstream(bad) << "[{\"budget\": 0}]";
  CHECK(error_code_of([&] { submit_task_file(node, bad.string()); }) ==
        "parse-error");
  std::filesystem::remove(path);
  std::filesystem::remove(bad);
}

TEST_CASE("results reach files through the answer agent") {
  Node node({"hub", Timing{100ms, 3}, 2});
  const std::string collector = install_management(node);
  install_worker_pool(node);

  const auto path = fresh_path("results");
  Envelope env = make_task_envelope(basic_task(Algorithm::MC, 100, 3), 5,
                                    {ChannelKind::File, path.string()});
  node.enqueue(collector, std::move(env));

  REQUIRE(eventually([&] { return std::filesystem::exists(path); }, 15000ms));
  // Give the line a moment to be complete, then read it back.
  std::this_thread::sleep_for(50ms);
  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  const json j = json::parse(line);
  CHECK(j.at("algorithm") == algorithm_name(Algorithm::MC));
  CHECK(j.at("makespan") ==
        run_algorithm(Algorithm::MC, aab(), 100, 3).best_makespan);
  CHECK(j.at("node") == "hub");
  std::filesystem::remove(path);
}

TEST_CASE("a failing output channel is retried, then set aside") {
  Node node({"hub", Timing{100ms, 3}, 2});
  const std::string collector = install_management(node);
  install_worker_pool(node);

  auto* answer = dynamic_cast<AnswerAgent*>(node.find_agent("hub/answer"));
  REQUIRE(answer != nullptr);
  auto attempts = std::make_shared<std::atomic<int>>(0);
  answer->file_writer = [attempts](const std::string&, const std::string&) {
    attempts->fetch_add(1);
    return false;  // the disk never cooperates
  };

  node.enqueue(collector,
               make_task_envelope(basic_task(Algorithm::MC, 30, 1), 5,
                                  {ChannelKind::File, "/nowhere/results.jsonl"}));
  REQUIRE(eventually([&] { return answer->undelivered().size() == 1; }, 15000ms));
  CHECK(attempts->load() == 4);  // one try plus three retries
  const Envelope kept = answer->undelivered().at(0);
  CHECK(trace_mentions(kept.trace, "undeliverable"));
  REQUIRE(kept.result.has_value());
  CHECK(kept.result->status == "done");
}

TEST_CASE("cancelling a running task frees the worker and answers nobody") {
  Node node({"hub", Timing{100ms, 3}, 1});
  const std::string collector = install_management(node);
  install_worker_pool(node);
  auto& sink = install_sink(node, "hub/sink");

  // A budget this size runs for minutes if nothing intervenes.
  Envelope env = make_task_envelope(basic_task(Algorithm::RDS, 400'000'000, 1),
                                    5, {ChannelKind::Callback, "hub/sink"});
  const EnvelopeId task_id = env.id;
  node.enqueue(collector, std::move(env));

  auto* splitter = dynamic_cast<SplitterAgent*>(node.find_agent("hub/splitter"));
  REQUIRE(splitter != nullptr);
  REQUIRE(eventually([&] { return splitter->outstanding() == 1; }));
  std::this_thread::sleep_for(200ms);  // the worker is now grinding

  ControlPackage cancel;
  cancel.command = Command::CancelTask;
  cancel.argument = task_id.str();
  cancel.target = {TargetKind::Package, task_id.str()};
  node.submit_control(make_control_envelope(cancel));

  // The whole entry evaporates: no result reaches the sink, the ledger
  // closes, and the pool is free for the next task.
  CHECK(eventually([&] { return splitter->outstanding() == 0; }, 15000ms));
  CHECK_FALSE(sink.wait_for(1, 300ms));

  node.enqueue(collector,
               make_task_envelope(basic_task(Algorithm::MC, 50, 2), 5,
                                  {ChannelKind::Callback, "hub/sink"}));
  REQUIRE(sink.wait_for(1, 15000ms));
  CHECK(sink.results().at(0).status == "done");
}

TEST_CASE("a shutdown broadcast empties the registry") {
  Node node({"hub", Timing{100ms, 3}, 1});
  const std::string collector = install_management(node);
  install_worker_pool(node);
  auto& sink = install_sink(node, "hub/sink");
  node.enqueue(collector,
               make_task_envelope(basic_task(Algorithm::MC, 40, 1), 5,
                                  {ChannelKind::Callback, "hub/sink"}));
  REQUIRE(sink.wait_for(1, 15000ms));

  ControlPackage down;
  down.command = Command::Shutdown;
  down.target = {TargetKind::All, ""};
  node.submit_control(make_control_envelope(down));
  CHECK(eventually([&] { return node.registry_size() == 0; }));
}

// ---------------------------------------------------------------------------
// Two nodes over TCP

TEST_CASE("work submitted at the hub runs on a connected node") {
  Node hub({"hub", Timing{100ms, 3}, 0});
  const std::string collector = install_management(hub);
  auto& sink = install_sink(hub, "hub/sink");
  listen_somewhere(hub);

  {
    Node edge({"edge", Timing{100ms, 3}, 2});
    edge.connect("127.0.0.1", hub.port());
    CHECK(edge.connected());
    install_worker_pool(edge);
    REQUIRE(eventually([&] { return !hub.lookup(Role::LoadBalancer).empty(); }));

    // The registry looks the same from both sides of the wire.
    CHECK(edge.lookup(Role::Collector).size() == 1);
    CHECK(edge.lookup(Role::Collector).at(0).name == collector);
    CHECK(edge.registry_size() == hub.registry_size());

    Envelope env = make_task_envelope(basic_task(Algorithm::RDS, 500, 3, 2), 5,
                                      {ChannelKind::Callback, "hub/sink"});
    hub.enqueue(collector, std::move(env));
    REQUIRE(sink.wait_for(1, 20000ms));
    const ResultPackage r = sink.results().at(0);
    CHECK(r.status == "done");
    CHECK(r.node == "edge");
    for (const auto& d : r.details) CHECK(d.node == "edge");

    // Submission also works from the edge of the network.
    Envelope second = make_task_envelope(basic_task(Algorithm::MC, 60, 9), 5,
                                         {ChannelKind::Callback, "hub/sink"});
    edge.enqueue(collector, std::move(second));
    REQUIRE(sink.wait_for(2, 20000ms));
    CHECK(sink.results().at(1).makespan ==
          run_algorithm(Algorithm::MC, aab(), 60, 9).best_makespan);
  }  // edge disconnects here

  // The socket close is detected immediately; the registry forgets the node.
  CHECK(eventually([&] { return hub.lookup(Role::LoadBalancer).empty(); }));
  CHECK(eventually([&] {
    for (const auto& a : hub.lookup(Role::Client))
      if (a.node == "edge") return false;  // hub's own sink rightly stays
    return true;
  }));
}

TEST_CASE("an overloaded balancer delegates queued work to an idle peer") {
  Node hub({"hub", Timing{100ms, 3}, 2});
  install_management(hub);
  install_worker_pool(hub);
  auto& probe = dynamic_cast<ProbeAgent&>(
      hub.add_agent(std::make_unique<ProbeAgent>(hub, "hub/catch")));
  listen_somewhere(hub);

  Node edge({"edge", Timing{100ms, 3}, 2});
  edge.connect("127.0.0.1", hub.port());
  install_worker_pool(edge);
  REQUIRE(eventually([&] { return hub.lookup(Role::LoadBalancer).size() == 2; }));

  // Ten slow-ish tasks straight at the hub balancer: far beyond twice its
  // capacity, while the edge balancer idles.
  for (int i = 0; i < 10; ++i) {
    Envelope env = make_task_envelope(
        basic_task(Algorithm::RDS, 400'000, static_cast<std::uint64_t>(i)), 5);
    env.reply_to = "hub/catch";
    hub.enqueue("hub/balancer", std::move(env));
  }

  REQUIRE(eventually(
      [&] {
        int done = 0;
        for (const auto& env : probe.seen())
          if (env.result && env.result->status == "done") ++done;
        return done == 10;
      },
      60000ms));

  int ran_on_edge = 0;
  for (const auto& env : probe.seen()) {
    if (!env.result || env.result->status != "done") continue;
    if (env.result->node == "edge") {
      ++ran_on_edge;
      CHECK(trace_mentions(env.trace, "delegated to edge"));
    }
  }
  CHECK(ran_on_edge >= 1);
  edge.stop();
}

TEST_CASE("a reconnecting node name displaces the previous session") {
  Node hub({"hub", Timing{100ms, 3}, 0});
  install_management(hub);
  listen_somewhere(hub);

  Node first({"twin", Timing{100ms, 3}, 1});
  first.connect("127.0.0.1", hub.port());
  install_worker_pool(first);
  REQUIRE(eventually([&] { return hub.lookup(Role::LoadBalancer).size() == 1; }));

  Node second({"twin", Timing{100ms, 3}, 1});
  second.connect("127.0.0.1", hub.port());  // same name: the old session goes
  // The displaced node's registrations are gone the moment the new session
  // is accepted.
  REQUIRE(eventually([&] { return hub.lookup(Role::LoadBalancer).empty(); }));

  install_worker_pool(second);
  REQUIRE(eventually([&] { return hub.lookup(Role::LoadBalancer).size() == 1; }));

  // The first node's line is dead; its registry calls cannot get through.
  CHECK(eventually([&] {
    return error_code_of([&] {
             first.register_agent_id({"twin/extra", Role::Client, "", "twin"});
           }) == "runtime-unreachable";
  }));
  second.stop();
  first.stop();
}

TEST_CASE("the handshake rejects bad hellos with a reason") {
  Node hub({"hub", Timing{100ms, 3}, 0});
  listen_somewhere(hub);

  struct Reply {
    std::mutex mutex;
    std::condition_variable cv;
    std::optional<json> msg;
  };
  auto ask = [&](json hello) {
    auto reply = std::make_shared<Reply>();
    Session session(tcp_connect("127.0.0.1", hub.port()),
                    [reply](json msg) {
                      std::lock_guard lock(reply->mutex);
                      reply->msg = std::move(msg);
                      reply->cv.notify_all();
                    },
                    [](const std::string&) {});
    session.send(hello);
    std::unique_lock lock(reply->mutex);
    reply->cv.wait_for(lock, 5000ms, [&] { return reply->msg.has_value(); });
    REQUIRE(reply->msg.has_value());
    return *reply->msg;
  };

  json wrong_version = Hello{}.to_json();
  wrong_version["node"] = "x";
  wrong_version["protocol_version"] = kProtocolVersion + 7;
  json r = ask(wrong_version);
  CHECK(r.at("ok") == false);
  CHECK(r.at("reason") == "version-mismatch");

  json hub_name = Hello{}.to_json();
  hub_name["node"] = "hub";
  r = ask(hub_name);
  CHECK(r.at("ok") == false);
  CHECK(r.at("reason") == "duplicate-node-name");

  r = ask(json{{"type", "status-report"}});
  CHECK(r.at("ok") == false);
  CHECK(r.at("reason") == "invalid-hello");

  // And the client-side connect() surfaces the same reason as an error.
  Node pretender({"hub", Timing{100ms, 3}, 0});
  CHECK(error_code_of([&] { pretender.connect("127.0.0.1", hub.port()); }) ==
        "duplicate-node-name");
}

TEST_CASE("a silent node is detected and its work resubmitted exactly once") {
  Node hub({"hub", Timing{50ms, 3}, 2});
  const std::string collector = install_management(hub);
  auto& sink = install_sink(hub, "hub/sink");
  listen_somewhere(hub);

  Node edge({"edge", Timing{50ms, 3}, 2});
  edge.connect("127.0.0.1", hub.port());
  install_worker_pool(edge);
  REQUIRE(eventually([&] { return !hub.lookup(Role::LoadBalancer).empty(); }));

  // Three repetitions, each several seconds of work: all of it lands on the
  // edge node, none of it can finish before the lights go out there.
  Envelope env = make_task_envelope(basic_task(Algorithm::RDS, 2'000'000, 11, 3),
                                    5, {ChannelKind::Callback, "hub/sink"});
  hub.enqueue(collector, std::move(env));

  auto* splitter = dynamic_cast<SplitterAgent*>(hub.find_agent("hub/splitter"));
  REQUIRE(splitter != nullptr);
  REQUIRE(eventually([&] { return splitter->outstanding() == 3; }));
  std::this_thread::sleep_for(300ms);  // subtasks are accepted and running

  edge.crash();  // no goodbye: only missing heartbeats give it away

  // The hub notices within the failure threshold and clears the registry.
  REQUIRE(eventually([&] { return hub.lookup(Role::LoadBalancer).empty(); },
                     5000ms));
  // The lost envelopes are waiting for somewhere to go; give them a pool.
  install_worker_pool(hub);

  REQUIRE(sink.wait_for(1, 60000ms));
  std::this_thread::sleep_for(300ms);  // room for would-be duplicates
  const auto results = sink.results();
  REQUIRE(results.size() == 1);  // exactly once, despite the resubmission
  const ResultPackage& r = results.at(0);
  CHECK(r.status == "done");
  REQUIRE(r.details.size() == 3);
  std::set<std::uint64_t> seeds;
  for (const auto& d : r.details) {
    seeds.insert(d.seed);
    CHECK(d.node == "hub");  // the second life ran here
  }
  CHECK(seeds == std::set<std::uint64_t>{11, 12, 13});
  CHECK(splitter->outstanding() == 0);
  edge.stop();
}
