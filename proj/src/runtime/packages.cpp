#include "lagoon/packages.hpp"

#include <atomic>
#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <random>

#include "lagoon/error.hpp"

namespace lagoon {

using nlohmann::json;

namespace {

double wall_now() {
  return std::chrono::duration<double>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

const char* evaluation_name(Evaluation e) {
  return e == Evaluation::BestOf ? "best-of" : "all";
}

Evaluation parse_evaluation(const std::string& s) {
  if (s == "best-of") return Evaluation::BestOf;
  if (s == "all") return Evaluation::All;
  throw Error("invalid-envelope", "unknown evaluation mode '" + s + "'");
}

const char* target_kind_name(TargetKind k) {
  switch (k) {
    case TargetKind::Agent: return "agent";
    case TargetKind::Role: return "role";
    case TargetKind::All: return "all";
    case TargetKind::Package: return "package";
  }
  return "all";
}

TargetKind parse_target_kind(const std::string& s) {
  if (s == "agent") return TargetKind::Agent;
  if (s == "role") return TargetKind::Role;
  if (s == "all") return TargetKind::All;
  if (s == "package") return TargetKind::Package;
  throw Error("invalid-envelope", "unknown control target kind '" + s + "'");
}

Command parse_command(const std::string& s) {
  if (s == "shutdown") return Command::Shutdown;
  if (s == "debug-on") return Command::DebugOn;
  if (s == "debug-off") return Command::DebugOff;
  if (s == "report-status") return Command::ReportStatus;
  if (s == "cancel-task") return Command::CancelTask;
  throw Error("invalid-envelope", "unknown control command '" + s + "'");
}

json result_to_json(const ResultPackage& r) {
  json j;
  j["task_id"] = r.task_id.str();
  j["status"] = r.status;
  j["algorithm"] = r.algorithm;
  j["makespan"] = r.makespan;
  j["seed"] = r.seed;
  j["evals"] = r.evals;
  j["wall_ms"] = r.wall_ms;
  j["node"] = r.node;
  if (!r.error.empty()) j["error"] = r.error;
  if (!r.details.empty()) {
    json rows = json::array();
    for (const auto& d : r.details)
      rows.push_back({{"seed", d.seed},
                      {"makespan", d.makespan},
                      {"evals", d.evals},
                      {"wall_ms", d.wall_ms},
                      {"node", d.node}});
    j["details"] = rows;
  }
  return j;
}

ResultPackage result_from_json(const json& j) {
  ResultPackage r;
  r.task_id = EnvelopeId::parse(j.at("task_id").get<std::string>());
  r.status = j.value("status", std::string{"done"});
  r.algorithm = j.value("algorithm", std::string{});
  r.makespan = j.value("makespan", 0.0);
  r.seed = j.value("seed", std::uint64_t{0});
  r.evals = j.value("evals", std::int64_t{0});
  r.wall_ms = j.value("wall_ms", 0.0);
  r.node = j.value("node", std::string{});
  r.error = j.value("error", std::string{});
  if (j.contains("details")) {
    for (const auto& row : j.at("details")) {
      ResultDetail d;
      d.seed = row.at("seed").get<std::uint64_t>();
      d.makespan = row.at("makespan").get<double>();
      d.evals = row.value("evals", std::int64_t{0});
      d.wall_ms = row.value("wall_ms", 0.0);
      d.node = row.value("node", std::string{});
      r.details.push_back(std::move(d));
    }
  }
  return r;
}

}  // namespace

std::string EnvelopeId::str() const {
  char buf[33];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64 "%016" PRIx64, hi, lo);
  return buf;
}

EnvelopeId EnvelopeId::parse(const std::string& hex) {
  if (hex.size() != 32)
    throw Error("invalid-envelope-id", "expected 32 hex digits, got '" + hex + "'");
  EnvelopeId id;
  auto half = [&](std::size_t offset) {
    std::uint64_t v = 0;
    for (std::size_t i = offset; i < offset + 16; ++i) {
      char c = hex[i];
      int digit;
      if (c >= '0' && c <= '9') digit = c - '0';
      else if (c >= 'a' && c <= 'f') digit = c - 'a' + 10;
      else if (c >= 'A' && c <= 'F') digit = c - 'A' + 10;
      else
        throw Error("invalid-envelope-id", "non-hex digit in '" + hex + "'");
      v = (v << 4) | static_cast<std::uint64_t>(digit);
    }
    return v;
  };
  id.hi = half(0);
  id.lo = half(16);
  return id;
}

EnvelopeId EnvelopeId::fresh() {
  static const std::uint64_t process_half = [] {
    std::random_device rd;
    std::uint64_t v = (std::uint64_t{rd()} << 32) ^ rd();
    v ^= static_cast<std::uint64_t>(
        std::chrono::steady_clock::now().time_since_epoch().count());
    return v | 1;  // never zero
  }();
  static std::atomic<std::uint64_t> counter{0};
  return {process_half, counter.fetch_add(1, std::memory_order_relaxed) + 1};
}

const char* channel_kind_name(ChannelKind k) {
  switch (k) {
    case ChannelKind::File: return "file";
    case ChannelKind::Stdout: return "stdout";
    case ChannelKind::Callback: return "callback";
  }
  return "stdout";
}

ChannelKind parse_channel_kind(const std::string& s) {
  if (s == "file") return ChannelKind::File;
  if (s == "stdout") return ChannelKind::Stdout;
  if (s == "callback") return ChannelKind::Callback;
  throw Error("invalid-envelope", "unknown channel kind '" + s + "'");
}

json TaskPackage::to_json() const {
  json j;
  if (!instance_ref.empty()) j["instance_ref"] = instance_ref;
  if (instance) j["instance"] = json::parse(instance->to_json());
  if (algorithm) j["algorithm"] = algorithm_name(*algorithm);
  if (!params.empty()) j["params"] = params;
  j["budget"] = budget;
  j["seed"] = seed;
  j["repetitions"] = repetitions;
  j["processing_steps"] = processing_steps;
  return j;
}

TaskPackage TaskPackage::from_json(const json& j) {
  TaskPackage t;
  try {
    t.instance_ref = j.value("instance_ref", std::string{});
    if (j.contains("instance"))
      t.instance = Instance::from_json(j.at("instance").dump());
    if (j.contains("algorithm")) {
      const std::string name = j.at("algorithm").get<std::string>();
      t.algorithm = parse_algorithm(name);
      if (!t.algorithm)
        throw Error("invalid-task", "unknown algorithm '" + name + "'");
    }
    if (j.contains("params"))
      t.params = j.at("params").get<Params>();
    t.budget = j.value("budget", std::int64_t{1});
    t.seed = j.value("seed", std::uint64_t{0});
    t.repetitions = j.value("repetitions", 1);
    if (j.contains("processing_steps"))
      t.processing_steps = j.at("processing_steps").get<std::vector<std::string>>();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error("invalid-task", e.what());
  }
  if (t.budget < 1) throw Error("invalid-task", "budget must be at least 1");
  if (t.repetitions < 1)
    throw Error("invalid-task", "repetitions must be at least 1");
  return t;
}

json LoadReport::to_json() const {
  return {{"node", node},
          {"active_workers", active_workers},
          {"queued_tasks", queued_tasks},
          {"timestamp", timestamp}};
}

LoadReport LoadReport::from_json(const json& j) {
  LoadReport r;
  r.node = j.at("node").get<std::string>();
  r.active_workers = j.at("active_workers").get<int>();
  r.queued_tasks = j.at("queued_tasks").get<int>();
  r.timestamp = j.value("timestamp", 0.0);
  return r;
}

void Envelope::stamp(const std::string& agent, const std::string& note) {
  trace.push_back({wall_now(), agent, note});
}

json Envelope::to_json() const {
  json j;
  j["id"] = id.str();
  j["priority"] = priority;
  j["kind"] = package_kind_name(kind);
  j["channel"] = {{"kind", channel_kind_name(channel.kind)},
                  {"target", channel.target}};
  if (!reply_to.empty()) j["reply_to"] = reply_to;
  json tr = json::array();
  for (const auto& e : trace)
    tr.push_back({{"time", e.time}, {"agent", e.agent}, {"note", e.note}});
  j["trace"] = tr;
  switch (kind) {
    case PackageKind::Task:
      j["payload"] = task.value().to_json();
      break;
    case PackageKind::Collection: {
      json tasks = json::array();
      for (const auto& t : collection.value().tasks) tasks.push_back(t.to_json());
      j["payload"] = {{"tasks", tasks},
                      {"evaluation", evaluation_name(collection->evaluation)}};
      break;
    }
    case PackageKind::Control:
      j["payload"] = {{"command", command_name(control.value().command)},
                      {"argument", control->argument},
                      {"target",
                       {{"kind", target_kind_name(control->target.kind)},
                        {"name", control->target.name}}}};
      break;
    case PackageKind::Result:
      j["payload"] = result_to_json(result.value());
      break;
  }
  return j;
}

Envelope Envelope::from_json(const json& j) {
  Envelope e;
  try {
    e.id = EnvelopeId::parse(j.at("id").get<std::string>());
    e.priority = j.value("priority", 5);
    const std::string kind = j.at("kind").get<std::string>();
    e.channel.kind = parse_channel_kind(j.at("channel").at("kind").get<std::string>());
    e.channel.target = j.at("channel").value("target", std::string{});
    e.reply_to = j.value("reply_to", std::string{});
    if (j.contains("trace")) {
      for (const auto& row : j.at("trace"))
        e.trace.push_back({row.value("time", 0.0),
                           row.value("agent", std::string{}),
                           row.value("note", std::string{})});
    }
    const json& p = j.at("payload");
    if (kind == "task") {
      e.kind = PackageKind::Task;
      e.task = TaskPackage::from_json(p);
    } else if (kind == "collection") {
      e.kind = PackageKind::Collection;
      CollectionPackage c;
      for (const auto& t : p.at("tasks")) c.tasks.push_back(TaskPackage::from_json(t));
      if (c.tasks.empty())
        throw Error("invalid-envelope", "collection has no tasks");
      c.evaluation = parse_evaluation(p.at("evaluation").get<std::string>());
      e.collection = std::move(c);
    } else if (kind == "control") {
      e.kind = PackageKind::Control;
      ControlPackage c;
      c.command = parse_command(p.at("command").get<std::string>());
      c.argument = p.value("argument", std::string{});
      c.target.kind = parse_target_kind(p.at("target").at("kind").get<std::string>());
      c.target.name = p.at("target").value("name", std::string{});
      e.control = std::move(c);
    } else if (kind == "result") {
      e.kind = PackageKind::Result;
      e.result = result_from_json(p);
    } else {
      throw Error("invalid-envelope", "unknown package kind '" + kind + "'");
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& ex) {
    throw Error("invalid-envelope", ex.what());
  }
  if (e.priority < 0 || e.priority > 9)
    throw Error("invalid-envelope",
                "priority " + std::to_string(e.priority) + " out of range 0..9");
  return e;
}

Envelope make_task_envelope(TaskPackage task, int priority, OutputChannel channel) {
  Envelope e;
  e.id = EnvelopeId::fresh();
  e.priority = priority;
  e.kind = PackageKind::Task;
  e.channel = std::move(channel);
  e.task = std::move(task);
  return e;
}

Envelope make_collection_envelope(CollectionPackage collection, int priority,
                                  OutputChannel channel) {
  Envelope e;
  e.id = EnvelopeId::fresh();
  e.priority = priority;
  e.kind = PackageKind::Collection;
  e.channel = std::move(channel);
  e.collection = std::move(collection);
  return e;
}

Envelope make_control_envelope(ControlPackage control) {
  Envelope e;
  e.id = EnvelopeId::fresh();
  e.priority = 9;  // control is urgent by construction
  e.kind = PackageKind::Control;
  e.control = std::move(control);
  return e;
}

Envelope make_result_envelope(ResultPackage result) {
  Envelope e;
  e.id = EnvelopeId::fresh();
  e.kind = PackageKind::Result;
  e.result = std::move(result);
  return e;
}

std::string result_line(const ResultPackage& r) {
  json j;
  j["id"] = r.task_id.str();
  j["algorithm"] = r.algorithm;
  j["makespan"] = r.makespan;
  j["seed"] = r.seed;
  j["evals"] = r.evals;
  j["wall_ms"] = r.wall_ms;
  j["node"] = r.node;
  return j.dump();
}

const char* package_kind_name(PackageKind k) {
  switch (k) {
    case PackageKind::Task: return "task";
    case PackageKind::Collection: return "collection";
    case PackageKind::Control: return "control";
    case PackageKind::Result: return "result";
  }
  return "task";
}

const char* command_name(Command c) {
  switch (c) {
    case Command::Shutdown: return "shutdown";
    case Command::DebugOn: return "debug-on";
    case Command::DebugOff: return "debug-off";
    case Command::ReportStatus: return "report-status";
    case Command::CancelTask: return "cancel-task";
  }
  return "report-status";
}

}  // namespace lagoon
