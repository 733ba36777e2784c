#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lagoon/model.hpp"
#include "lagoon/optimizers.hpp"

namespace lagoon {

// 128-bit envelope identity, printed as 32 hex digits.
struct EnvelopeId {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;

  auto operator<=>(const EnvelopeId&) const = default;
  std::string str() const;
  static EnvelopeId parse(const std::string& hex);  // throws Error("invalid-envelope-id")
  // Unique within the process and, with overwhelming probability, across
  // nodes: a per-process random half plus a counter.
  static EnvelopeId fresh();
};

enum class PackageKind { Task, Collection, Control, Result };

enum class ChannelKind { File, Stdout, Callback };

// Where the final result of a task ends up once the pipeline finishes.
struct OutputChannel {
  ChannelKind kind = ChannelKind::Stdout;
  std::string target;  // file path or callback agent name

  bool operator==(const OutputChannel&) const = default;
};

struct TraceEntry {
  double time = 0.0;  // seconds since epoch
  std::string agent;
  std::string note;
};

// One unit of optimization work. Carries the problem inline so a task is
// self-contained on the wire.
struct TaskPackage {
  std::string instance_ref;  // provenance only (file name etc.)
  std::optional<Instance> instance;
  std::optional<Algorithm> algorithm;  // unset: the controller chooses
  Params params;
  std::int64_t budget = 1;
  std::uint64_t seed = 0;
  int repetitions = 1;
  std::vector<std::string> processing_steps{"initial-schedule", "optimize"};

  nlohmann::json to_json() const;
  static TaskPackage from_json(const nlohmann::json& j);  // throws Error("invalid-task")
};

enum class Evaluation { BestOf, All };

struct CollectionPackage {
  std::vector<TaskPackage> tasks;
  Evaluation evaluation = Evaluation::BestOf;
};

enum class Command { Shutdown, DebugOn, DebugOff, ReportStatus, CancelTask };

enum class TargetKind { Agent, Role, All, Package };

struct ControlTarget {
  TargetKind kind = TargetKind::All;
  std::string name;  // agent name, role name, or package id (hex)
};

struct ControlPackage {
  Command command = Command::ReportStatus;
  ControlTarget target;
  std::string argument;  // CancelTask: the task envelope id (hex)
};

// One repetition's outcome, kept when results are reassembled.
struct ResultDetail {
  std::uint64_t seed = 0;
  double makespan = 0.0;
  std::int64_t evals = 0;
  double wall_ms = 0.0;
  std::string node;
};

// Answer to a task envelope. status "accepted" is the managing agents'
// bookkeeping notice (who will process the task); "done"/"failed" are
// terminal.
struct ResultPackage {
  EnvelopeId task_id;
  std::string status = "done";  // done | failed | accepted
  std::string algorithm;
  double makespan = 0.0;
  std::uint64_t seed = 0;
  std::int64_t evals = 0;
  double wall_ms = 0.0;
  std::string node;
  std::string error;
  std::vector<ResultDetail> details;
};

// Load state a Load-Balancer advertises to its peers.
struct LoadReport {
  std::string node;
  int active_workers = 0;
  int queued_tasks = 0;
  double timestamp = 0.0;  // seconds since epoch

  nlohmann::json to_json() const;
  static LoadReport from_json(const nlohmann::json& j);
};

// The Coat-Package: uniform wrapper every agent sends and receives. Exactly
// one payload member is engaged, matching `kind`.
struct Envelope {
  EnvelopeId id;
  int priority = 5;  // 0..9, 9 highest
  PackageKind kind = PackageKind::Task;
  OutputChannel channel;
  std::string reply_to;  // agent name awaiting the result
  std::vector<TraceEntry> trace;

  std::optional<TaskPackage> task;
  std::optional<CollectionPackage> collection;
  std::optional<ControlPackage> control;
  std::optional<ResultPackage> result;

  // Appends a trace entry stamped with the current wall time.
  void stamp(const std::string& agent, const std::string& note);

  nlohmann::json to_json() const;
  static Envelope from_json(const nlohmann::json& j);  // throws Error("invalid-envelope")
};

Envelope make_task_envelope(TaskPackage task, int priority = 5,
                            OutputChannel channel = {ChannelKind::Stdout, ""});
Envelope make_collection_envelope(CollectionPackage collection, int priority = 5,
                                  OutputChannel channel = {ChannelKind::Stdout, ""});
Envelope make_control_envelope(ControlPackage control);
Envelope make_result_envelope(ResultPackage result);

// The one-line JSON form Answer writes to files and stdout.
std::string result_line(const ResultPackage& r);

const char* package_kind_name(PackageKind k);
const char* command_name(Command c);
const char* channel_kind_name(ChannelKind k);
ChannelKind parse_channel_kind(const std::string& s);  // throws Error("invalid-envelope")

}  // namespace lagoon
