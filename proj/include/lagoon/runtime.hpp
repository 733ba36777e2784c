#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "lagoon/packages.hpp"
#include "lagoon/registry.hpp"
#include "lagoon/transport.hpp"

namespace lagoon {

class Node;

// ---------------------------------------------------------------------------
// Decision logic, kept free of threads and I/O so it can be tested directly.

// Picks algorithm and parameters for a task that does not pin them: several
// machines and a small budget favour the partition-then-sequence search,
// everything else runs the plain descent. Tasks with an explicit algorithm
// pass through untouched.
std::pair<Algorithm, Params> controller_select(const TaskPackage& task);

// Folds finished member results into one. BestOf keeps the lowest makespan
// and its provenance (task_id of the winning member); All keeps everything in
// `details`. Failed members are skipped, or produce a failed result when
// nothing succeeded.
ResultPackage collect(Evaluation mode, const std::vector<ResultPackage>& members);

// One subtask per repetition, seeded seed, seed+1, ... seed+R-1.
std::vector<TaskPackage> split_task(const TaskPackage& task);

// Inverse of split_task on the result side: best over the parts plus the
// full per-seed list in `details`.
ResultPackage reassemble(const EnvelopeId& parent, const std::vector<ResultPackage>& parts);

struct BalanceDecision {
  int pool_size = 0;       // workers this balancer should keep busy
  int delegate_count = 0;  // tasks to hand to `to_node` (0 = keep everything)
  std::string to_node;
};

// Work-stealing rule: overloaded means more than twice the capacity queued;
// the excess beyond that threshold goes to the least-loaded peer that is
// nearly idle. Reports older than the failure threshold are disregarded.
BalanceDecision balance(int my_queued, int my_capacity,
                        const std::vector<LoadReport>& peers, double now,
                        double heartbeat_seconds);

// Outstanding-work ledger the splitter keeps: every subtask stays tracked
// until its first terminal result arrives, so a node failure can be answered
// by resubmitting exactly the envelopes that were lost.
class Ledger {
 public:
  // Tracks (or re-tracks, after resubmission) a subtask sent towards `node`.
  void track(const Envelope& subtask, const std::string& node);
  // A balancer accepted the task; resubmission targets follow the accepter.
  void accepted(const EnvelopeId& id, const std::string& node);
  // First terminal result for `id` returns true and closes the entry; any
  // later result for the same id is a duplicate and returns false.
  bool complete(const EnvelopeId& id);
  // Envelopes lost with `node`. Entries stay open; the caller re-tracks them
  // wherever it resubmits, so one failure event resubmits each entry once.
  std::vector<Envelope> on_node_down(const std::string& node);

  bool tracked(const EnvelopeId& id) const;
  std::size_t outstanding() const;

 private:
  struct Entry {
    Envelope envelope;
    std::string node;
    bool accepted = false;
  };
  mutable std::mutex mutex_;
  std::map<EnvelopeId, Entry> open_;
};

// Parses a task-list file (a JSON array; each element is a task, optionally
// with "priority" and "output" attached) into ready-to-send envelopes.
// Throws Error("parse-error") naming the offending line or entry; nothing is
// submitted from a file that fails anywhere.
std::vector<Envelope> parse_task_file(const std::string& text);

// ---------------------------------------------------------------------------
// Agent: one mailbox, one working thread. Delivery runs on the caller's
// thread (the messaging activity): control packages act immediately there,
// everything else is queued by priority for the working thread. A busy
// working step therefore never delays a control package.

class Agent {
 public:
  Agent(Node& node, AgentId id);
  virtual ~Agent();

  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  const AgentId& id() const { return id_; }

  void start();
  // Signals the working thread and joins it. Does not touch the registry.
  void halt();
  // Crash support: freeze without deregistering — the mailbox stops draining
  // and the current step is cancelled.
  void freeze();

  void deliver(Envelope env);

  bool stopping() const { return stopping_.load(); }
  bool debug_enabled() const { return debug_.load(); }
  std::size_t queued() const;

 protected:
  // Working thread, once, before the first envelope.
  virtual void on_start() {}
  // Working thread: one envelope at a time, highest priority first.
  virtual void on_envelope(Envelope env) = 0;
  // Messaging thread, after the base bookkeeping of a control package.
  virtual void on_control(const ControlPackage& control, const Envelope& env);
  // Working thread, when the mailbox stayed empty for a while.
  virtual void on_tick() {}
  // Messaging thread; `id` has just been cancelled.
  virtual void on_cancel(const EnvelopeId& id) {}
  // A queued envelope was discarded because its task had been cancelled.
  virtual void on_dropped(Envelope env) {}
  // Called by freeze(); interrupt any long-running step.
  virtual void on_freeze() {}

  void send(const std::string& to, Envelope env);
  bool is_cancelled(const EnvelopeId& id) const;
  void log(const std::string& note) const;  // stderr when debug is on
  void request_stop() { stopping_ = true; }

  Node& node_;

 private:
  void run();
  void handle_control(Envelope env);

  AgentId id_;
  mutable std::mutex mutex_;
  std::condition_variable wake_;
  struct QueueOrder {
    bool operator()(const std::pair<int, std::uint64_t>& a,
                    const std::pair<int, std::uint64_t>& b) const {
      if (a.first != b.first) return a.first > b.first;  // higher priority first
      return a.second < b.second;                        // then arrival order
    }
  };
  std::map<std::pair<int, std::uint64_t>, Envelope, QueueOrder> queue_;
  std::uint64_t arrival_ = 0;
  std::set<EnvelopeId> cancelled_;
  std::atomic<bool> stopping_{false};
  std::atomic<bool> frozen_{false};
  std::atomic<bool> debug_{false};
  std::thread worker_;
};

// ---------------------------------------------------------------------------
// Node: hosts agents, routes envelopes, and speaks the wire protocol. One
// node per process in production; tests run several in one process.

struct RuntimeConfig {
  std::string node = "node";
  Timing timing{};
  int capacity = 0;  // worker slots offered by this node
};

class Node {
 public:
  explicit Node(RuntimeConfig config);
  ~Node();

  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  const std::string& name() const { return config_.node; }
  const Timing& timing() const { return config_.timing; }
  int capacity() const { return config_.capacity; }
  bool crashed() const { return crashed_.load(); }
  bool connected() const { return remote_session_ != nullptr; }

  // Server side: accept clients on `port` (resolve_port rules apply).
  void listen(std::optional<int> port = std::nullopt);
  std::uint16_t port() const;

  // Client side: handshake with the server. Throws the server's rejection
  // reason ("version-mismatch", "duplicate-node-name") or "connect-failed".
  void connect(const std::string& host, std::uint16_t port);

  // Registry facade: authoritative on the server, cached RPC on clients.
  void register_agent_id(const AgentId& agent);
  void deregister_name(const std::string& name);
  std::vector<AgentId> lookup(Role role);
  std::vector<AgentId> registry_snapshot();
  std::size_t registry_size();

  Agent& add_agent(std::unique_ptr<Agent> agent);
  Agent* find_agent(const std::string& name);
  std::vector<std::string> local_agent_names();

  // Delivers locally or forwards towards the agent's node. Unknown targets
  // are dropped (the trace of the sender records the attempt).
  void route(const std::string& to, Envelope env);
  // Like route, but an unknown target is an error the caller hears about.
  void enqueue(const std::string& to, Envelope env);  // throws Error("unknown-agent")
  // Expands the control target (agent, role, all, package) and delivers one
  // copy per matched agent.
  void submit_control(Envelope control_env);
  void broadcast_load(const LoadReport& report);

  void subscribe_node_down(std::function<void(const std::string& node)> fn);
  void post(std::function<void()> chore);

  // Fault injection: fall silent immediately — no sends, no heartbeats, no
  // further work. The rest of the system must cope via failure detection.
  void crash();
  void stop();

 private:
  friend class Agent;

  struct PendingCall {
    std::mutex mutex;
    std::condition_variable ready;
    bool done = false;
    nlohmann::json reply;
  };

  bool is_server() const { return remote_session_ == nullptr; }
  void on_wire(const std::string& peer, nlohmann::json msg);
  void on_session_closed(const std::string& peer, const std::string& reason,
                         Session* self);
  void adopt_connection(std::unique_ptr<ByteChannel> channel);
  // `expect` guards against stale eviction evidence: when set, the eviction
  // only proceeds if that exact session still owns the name.
  void evict_node(const std::string& peer, const std::string& reason,
                  Session* expect = nullptr);
  void fire_node_down(const std::string& peer);
  nlohmann::json registry_call(nlohmann::json request);
  nlohmann::json apply_registry_op(const nlohmann::json& request,
                                   const std::string& peer);
  void heartbeat_loop();
  void housekeeping_loop();
  void deliver_load_report(const LoadReport& report);
  std::vector<std::string> control_targets(const ControlPackage& control);

  RuntimeConfig config_;
  std::atomic<bool> crashed_{false};
  std::atomic<bool> stopping_{false};

  mutable std::mutex agents_mutex_;
  std::map<std::string, std::unique_ptr<Agent>> agents_;

  Registry registry_;  // authoritative only on the server

  // client side
  std::unique_ptr<Session> remote_session_;
  std::mutex calls_mutex_;
  std::map<std::uint64_t, std::shared_ptr<PendingCall>> calls_;
  std::atomic<std::uint64_t> next_call_{1};
  std::mutex cache_mutex_;
  std::map<Role, std::pair<std::vector<AgentId>, std::chrono::steady_clock::time_point>>
      lookup_cache_;

  // server side
  std::unique_ptr<TcpListener> listener_;
  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::unique_ptr<Session>> sessions_;
  std::vector<std::unique_ptr<Session>> limbo_;  // handshake pending / retired

  std::mutex subs_mutex_;
  std::vector<std::function<void(const std::string&)>> node_down_subs_;

  std::mutex chores_mutex_;
  std::condition_variable chores_cv_;
  std::deque<std::function<void()>> chores_;
  std::thread housekeeper_;
  std::thread heartbeat_;
};

// ---------------------------------------------------------------------------
// The role agents.

// Presence marker for the serving node itself.
class ServerMarkerAgent : public Agent {
 public:
  ServerMarkerAgent(Node& node, std::string name);

 protected:
  void on_envelope(Envelope env) override;
};

// Presence marker for a connected requester node.
class ClientMarkerAgent : public Agent {
 public:
  ClientMarkerAgent(Node& node, std::string name);

 protected:
  void on_envelope(Envelope env) override;
};

// Reads a task list, wraps each entry, hands everything to the collector,
// then leaves the registry: a contractor lives for one submission.
class ContractorAgent : public Agent {
 public:
  ContractorAgent(Node& node, std::string name, std::vector<Envelope> envelopes);

 protected:
  void on_start() override;
  void on_envelope(Envelope env) override;
  void on_tick() override;

 private:
  void try_submit();
  std::vector<Envelope> pending_;
  bool sent_ = false;
};

// Tracks every submitted task or collection until its final result exists,
// then forwards that to an answer agent.
class CollectorAgent : public Agent {
 public:
  CollectorAgent(Node& node, std::string name);

 protected:
  void on_envelope(Envelope env) override;
  void on_cancel(const EnvelopeId& id) override;

 private:
  struct Entry {
    Envelope original;                  // as submitted (channel, priority, trace)
    std::size_t trace_base = 0;         // trace length at submission time
    Evaluation evaluation = Evaluation::BestOf;
    std::vector<EnvelopeId> waiting;    // member envelope ids still running
    std::vector<ResultPackage> done;
  };
  void finish_entry(const EnvelopeId& parent, Entry entry);
  std::mutex entries_mutex_;
  std::map<EnvelopeId, Entry> entries_;
};

// Fills in algorithm and parameters where the task left the choice open.
class ControllerAgent : public Agent {
 public:
  ControllerAgent(Node& node, std::string name);

 protected:
  void on_envelope(Envelope env) override;
};

// Turns one task into per-repetition subtasks, spreads them over the
// balancers, resubmits on node failure, and reassembles the results.
class SplitterAgent : public Agent {
 public:
  SplitterAgent(Node& node, std::string name);

  std::size_t outstanding();  // open subtasks (tests poke this)

 protected:
  void on_envelope(Envelope env) override;
  void on_tick() override;
  void on_cancel(const EnvelopeId& id) override;

 private:
  struct Group {
    Envelope parent;
    std::set<EnvelopeId> waiting;
    std::vector<ResultPackage> parts;
    bool cancelled = false;
  };
  void dispatch(Envelope subtask);
  void handle_result(const ResultPackage& r);
  void resubmit_lost(const std::string& node);

  Ledger ledger_;
  std::mutex groups_mutex_;
  std::map<EnvelopeId, Group> groups_;
  std::map<EnvelopeId, EnvelopeId> part_of_;  // subtask id -> parent id
  std::vector<Envelope> parked_;  // waiting for a balancer to register
  std::uint64_t round_robin_ = 0;
};

// Writes final results to their output channel.
class AnswerAgent : public Agent {
 public:
  AnswerAgent(Node& node, std::string name);

  // Appends one line to a file; replaceable so tests can count attempts and
  // inject failures. Returns false on an I/O error.
  std::function<bool(const std::string& path, const std::string& line)> file_writer;

  // Results whose channel failed even after retrying.
  std::vector<Envelope> undelivered();

 protected:
  void on_envelope(Envelope env) override;

 private:
  std::mutex undelivered_mutex_;
  std::vector<Envelope> undelivered_;
};

// Queues accepted tasks, keeps min(capacity, queued) workers on them, trades
// load with its peers, and retires idle workers.
class LoadBalancerAgent : public Agent {
 public:
  LoadBalancerAgent(Node& node, std::string name, int capacity);

  LoadReport current_load();
  void absorb_report(const LoadReport& report);  // called by the node

 protected:
  void on_envelope(Envelope env) override;
  void on_tick() override;

 private:
  void pump();

  int capacity_;
  std::mutex state_mutex_;
  std::deque<Envelope> backlog_;
  std::set<std::string> idle_;
  std::map<std::string, EnvelopeId> busy_;
  std::map<std::string, LoadReport> peer_reports_;
  std::map<std::string, std::chrono::steady_clock::time_point> peer_seen_;
  int spawned_ = 0;
};

// Runs one optimization per task envelope and reports to the splitter.
class WorkerAgent : public Agent {
 public:
  WorkerAgent(Node& node, std::string name, std::string balancer);

 protected:
  void on_envelope(Envelope env) override;
  void on_cancel(const EnvelopeId& id) override;
  void on_dropped(Envelope env) override;
  void on_freeze() override;

 private:
  std::string balancer_;
  std::mutex current_mutex_;
  EnvelopeId current_id_;
  std::shared_ptr<std::atomic<bool>> cancel_flag_;
};

// Collects final results for a caller inside this process (the callback
// channel target for bench runs and tests).
class ResultSinkAgent : public Agent {
 public:
  ResultSinkAgent(Node& node, std::string name);

  // Waits until `count` results arrived; false on timeout.
  bool wait_for(std::size_t count, std::chrono::milliseconds timeout);
  std::vector<ResultPackage> results();

 protected:
  void on_envelope(Envelope env) override;

 private:
  std::mutex results_mutex_;
  std::condition_variable got_;
  std::vector<ResultPackage> results_;
};

// ---------------------------------------------------------------------------
// Standard wiring.

// Management pipeline: server marker, controller, collector, splitter,
// answer. Returns the collector's name (the submission entry point).
std::string install_management(Node& node);

// Worker side: a load balancer (plus, on clients, the client marker).
// Workers are spawned on demand by the balancer, up to node.capacity().
void install_worker_pool(Node& node);

// Spawns a contractor for the given task-list file. Throws parse-error
// without submitting anything if the file is bad.
void submit_task_file(Node& node, const std::string& path);

// Creates a sink agent, named uniquely, for collecting final results.
ResultSinkAgent& install_sink(Node& node, const std::string& name);

}  // namespace lagoon
