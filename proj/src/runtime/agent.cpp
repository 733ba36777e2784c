#include <algorithm>
#include <chrono>
#include <cstdio>

#include "lagoon/error.hpp"
#include "lagoon/runtime.hpp"

namespace lagoon {

using nlohmann::json;

namespace {

json agent_to_json(const AgentId& a) {
  return {{"name", a.name},
          {"role", role_name(a.role)},
          {"kind", a.kind},
          {"node", a.node}};
}

AgentId agent_from_json(const json& j) {
  AgentId a;
  a.name = j.at("name").get<std::string>();
  a.role = parse_role(j.at("role").get<std::string>());
  a.kind = j.value("kind", std::string{});
  a.node = j.value("node", std::string{});
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------
// Agent

Agent::Agent(Node& node, AgentId id) : node_(node), id_(std::move(id)) {}

Agent::~Agent() { halt(); }

void Agent::start() {
  if (!worker_.joinable()) worker_ = std::thread([this] { run(); });
}

void Agent::halt() {
  stopping_ = true;
  {
    std::lock_guard lock(mutex_);
    wake_.notify_all();
  }
  if (worker_.joinable()) worker_.join();
}

void Agent::freeze() {
  frozen_ = true;
  stopping_ = true;
  on_freeze();
  std::lock_guard lock(mutex_);
  wake_.notify_all();
}

std::size_t Agent::queued() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

void Agent::deliver(Envelope env) {
  if (frozen_) return;
  env.stamp(id_.name, "received");
  if (env.kind == PackageKind::Control) {
    handle_control(std::move(env));
    return;
  }
  std::lock_guard lock(mutex_);
  queue_.emplace(std::make_pair(env.priority, arrival_++), std::move(env));
  wake_.notify_one();
}

void Agent::handle_control(Envelope env) {
  const ControlPackage control = *env.control;
  switch (control.command) {
    case Command::Shutdown: {
      stopping_ = true;
      {
        std::lock_guard lock(mutex_);
        wake_.notify_all();
      }
      node_.deregister_name(id_.name);
      break;
    }
    case Command::DebugOn:
      debug_ = true;
      break;
    case Command::DebugOff:
      debug_ = false;
      break;
    case Command::ReportStatus: {
      if (!env.reply_to.empty()) {
        ResultPackage status;
        status.task_id = env.id;
        status.status = "status";
        status.algorithm = role_name(id_.role);
        status.node = node_.name();
        status.evals = static_cast<std::int64_t>(queued());
        Envelope out = make_result_envelope(status);
        out.reply_to = id_.name;
        send(env.reply_to, std::move(out));
      }
      break;
    }
    case Command::CancelTask: {
      EnvelopeId target;
      try {
        target = EnvelopeId::parse(control.argument);
      } catch (const Error&) {
        log("cancel with unparsable task id ignored");
        break;
      }
      std::vector<Envelope> dropped;
      {
        std::lock_guard lock(mutex_);
        cancelled_.insert(target);
        for (auto it = queue_.begin(); it != queue_.end();) {
          if (it->second.id == target) {
            dropped.push_back(std::move(it->second));
            it = queue_.erase(it);
          } else {
            ++it;
          }
        }
      }
      for (auto& env_dropped : dropped) on_dropped(std::move(env_dropped));
      on_cancel(target);
      break;
    }
  }
  on_control(control, env);
}

void Agent::on_control(const ControlPackage&, const Envelope&) {}

void Agent::send(const std::string& to, Envelope env) {
  env.stamp(id_.name, "to " + to);
  node_.route(to, std::move(env));
}

bool Agent::is_cancelled(const EnvelopeId& id) const {
  std::lock_guard lock(mutex_);
  return cancelled_.count(id) != 0;
}

void Agent::log(const std::string& note) const {
  if (debug_)
    std::fprintf(stderr, "[%s] %s\n", id_.name.c_str(), note.c_str());
}

void Agent::run() {
  const auto tick = std::max<std::chrono::milliseconds>(
      node_.timing().heartbeat / 2, std::chrono::milliseconds(5));
  on_start();
  auto next_tick = std::chrono::steady_clock::now() + tick;
  while (!stopping_) {
    Envelope env;
    bool have = false;
    {
      std::unique_lock lock(mutex_);
      wake_.wait_until(lock, next_tick,
                       [&] { return stopping_.load() || !queue_.empty(); });
      if (stopping_) break;
      if (!queue_.empty()) {
        auto it = queue_.begin();
        env = std::move(it->second);
        queue_.erase(it);
        have = true;
      }
    }
    try {
      if (have) {
        if (is_cancelled(env.id))
          on_dropped(std::move(env));
        else
          on_envelope(std::move(env));
      }
      // Tick on a deadline rather than only when the mailbox goes quiet: a
      // steady stream of envelopes must not starve periodic work.
      if (std::chrono::steady_clock::now() >= next_tick) {
        next_tick = std::chrono::steady_clock::now() + tick;
        on_tick();
      }
    } catch (const std::exception& e) {
      log(std::string{"working step failed: "} + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Node

Node::Node(RuntimeConfig config) : config_(std::move(config)) {
  housekeeper_ = std::thread([this] { housekeeping_loop(); });
  heartbeat_ = std::thread([this] { heartbeat_loop(); });
}

Node::~Node() { stop(); }

void Node::listen(std::optional<int> port) {
  if (remote_session_)
    throw Error("invalid-config", "a connected client cannot also listen");
  const std::uint16_t p = resolve_port(port);
  listener_ = std::make_unique<TcpListener>(
      p, [this](std::unique_ptr<ByteChannel> channel) {
        adopt_connection(std::move(channel));
      });
}

std::uint16_t Node::port() const {
  return listener_ ? listener_->port() : 0;
}

void Node::adopt_connection(std::unique_ptr<ByteChannel> channel) {
  struct Pending {
    std::mutex mutex;
    Session* session = nullptr;
    bool greeted = false;
    std::string peer;
  };
  auto pending = std::make_shared<Pending>();

  auto on_message = [this, pending](json msg) {
    std::unique_lock lock(pending->mutex);
    if (pending->greeted) {
      const std::string peer = pending->peer;
      lock.unlock();
      on_wire(peer, std::move(msg));
      return;
    }
    Session* session = pending->session;
    if (msg.value("type", std::string{}) != "hello") {
      session->send({{"type", "hello-reply"},
                     {"ok", false},
                     {"reason", "invalid-hello"},
                     {"detail", "first frame must be a hello"}});
      session->close();
      return;
    }
    Hello hello;
    try {
      hello = Hello::from_json(msg);
    } catch (const Error& e) {
      session->send({{"type", "hello-reply"},
                     {"ok", false},
                     {"reason", e.code()},
                     {"detail", e.what()}});
      session->close();
      return;
    }
    std::vector<std::string> active;
    {
      std::lock_guard slock(sessions_mutex_);
      for (const auto& [name, s] : sessions_) active.push_back(name);
    }
    const HelloDecision decision = screen_hello(hello, name(), active);
    if (!decision.ok) {
      session->send({{"type", "hello-reply"},
                     {"ok", false},
                     {"reason", decision.reason},
                     {"detail", decision.detail}});
      session->close();
      return;
    }
    // Promote: move the session from limbo into the by-node table. A session
    // already holding that name is displaced first, so its close notice can
    // never be mistaken for this one's.
    std::unique_ptr<Session> displaced;
    {
      std::lock_guard slock(sessions_mutex_);
      auto old = sessions_.find(hello.node);
      if (old != sessions_.end()) {
        displaced = std::move(old->second);
        sessions_.erase(old);
      }
      for (auto it = limbo_.begin(); it != limbo_.end(); ++it) {
        if (it->get() == session) {
          session->peer = hello.node;
          sessions_[hello.node] = std::move(*it);
          limbo_.erase(it);
          break;
        }
      }
    }
    if (displaced) {
      // The old life of this node is over before the new one registers
      // anything: registry cleanup is synchronous, only the (thread-joining)
      // session teardown moves to the housekeeper.
      const std::vector<AgentId> lost = registry_.remove_node(hello.node);
      if (!lost.empty()) fire_node_down(hello.node);
      Session* raw = displaced.release();
      post([raw] {
        raw->close();
        delete raw;
      });
    }
    pending->greeted = true;
    pending->peer = hello.node;
    session->send({{"type", "hello-reply"}, {"ok", true}, {"server", name()}});
  };

  auto on_closed = [this, pending](const std::string& reason) {
    std::string peer;
    Session* self;
    {
      std::lock_guard lock(pending->mutex);
      peer = pending->peer;
      self = pending->session;
    }
    if (!peer.empty()) on_session_closed(peer, reason, self);
  };

  std::unique_lock lock(pending->mutex);
  std::lock_guard slock(sessions_mutex_);
  limbo_.push_back(
      std::make_unique<Session>(std::move(channel), on_message, on_closed));
  pending->session = limbo_.back().get();
}

void Node::connect(const std::string& host, std::uint16_t port) {
  if (listener_)
    throw Error("invalid-config", "a listening server cannot also connect");
  struct Greeting {
    std::mutex mutex;
    std::condition_variable ready;
    bool done = false;
    bool ok = false;
    std::string reason, detail;
  };
  auto greeting = std::make_shared<Greeting>();

  auto on_message = [this, greeting](json msg) {
    {
      std::lock_guard lock(greeting->mutex);
      if (!greeting->done) {
        greeting->ok = msg.value("ok", false);
        greeting->reason = msg.value("reason", std::string{"invalid-hello"});
        greeting->detail = msg.value("detail", std::string{});
        greeting->done = true;
        greeting->ready.notify_all();
        return;
      }
    }
    on_wire("server", std::move(msg));
  };
  auto on_closed = [this](const std::string& reason) {
    on_session_closed("server", reason, nullptr);
  };

  remote_session_ = std::make_unique<Session>(tcp_connect(host, port),
                                              on_message, on_closed);
  Hello hello;
  hello.node = name();
  hello.capacity = capacity();
  for (const auto& agent_name : local_agent_names())
    if (Agent* a = find_agent(agent_name))
      hello.roles.push_back(role_name(a->id().role));
  remote_session_->send(hello.to_json());

  std::unique_lock lock(greeting->mutex);
  if (!greeting->ready.wait_for(lock, std::chrono::seconds(5),
                                [&] { return greeting->done; })) {
    remote_session_.reset();
    throw Error("connect-failed", "no handshake reply from the server");
  }
  if (!greeting->ok) {
    const std::string reason = greeting->reason;
    const std::string detail = greeting->detail;
    lock.unlock();
    remote_session_.reset();
    throw Error(reason, detail.empty() ? "rejected by the server" : detail);
  }
}

void Node::register_agent_id(const AgentId& agent) {
  if (is_server()) {
    AgentId a = agent;
    a.node = name();
    registry_.add(a);
    return;
  }
  registry_call({{"op", "add"}, {"agent", agent_to_json(agent)}});
}

void Node::deregister_name(const std::string& agent_name) {
  if (is_server()) {
    registry_.remove(agent_name);
    return;
  }
  // Runs on arbitrary threads (often a session reader handling a shutdown);
  // the blocking acknowledgement round-trip happens on the housekeeper.
  post([this, agent_name] {
    try {
      registry_call({{"op", "remove"}, {"name", agent_name}});
    } catch (const Error&) {
      // server gone; its registry cleanup happens via session eviction
    }
  });
}

std::vector<AgentId> Node::lookup(Role role) {
  if (is_server()) return registry_.lookup(role);
  {
    std::lock_guard lock(cache_mutex_);
    auto it = lookup_cache_.find(role);
    if (it != lookup_cache_.end() &&
        std::chrono::steady_clock::now() - it->second.second <
            config_.timing.heartbeat)
      return it->second.first;
  }
  json reply = registry_call({{"op", "lookup"}, {"role", role_name(role)}});
  std::vector<AgentId> agents;
  for (const auto& a : reply.at("agents")) agents.push_back(agent_from_json(a));
  std::lock_guard lock(cache_mutex_);
  lookup_cache_[role] = {agents, std::chrono::steady_clock::now()};
  return agents;
}

std::vector<AgentId> Node::registry_snapshot() {
  if (is_server()) return registry_.all();
  json reply = registry_call({{"op", "all"}});
  std::vector<AgentId> agents;
  for (const auto& a : reply.at("agents")) agents.push_back(agent_from_json(a));
  return agents;
}

std::size_t Node::registry_size() {
  if (is_server()) return registry_.size();
  return registry_snapshot().size();
}

nlohmann::json Node::registry_call(json request) {
  if (is_server()) return apply_registry_op(request, name());
  auto call = std::make_shared<PendingCall>();
  const std::uint64_t id = next_call_.fetch_add(1);
  {
    std::lock_guard lock(calls_mutex_);
    calls_[id] = call;
  }
  request["type"] = "registry";
  request["req"] = id;
  const bool sent = !crashed_ && remote_session_ && remote_session_->send(request);
  if (!sent) {
    std::lock_guard lock(calls_mutex_);
    calls_.erase(id);
    throw Error("runtime-unreachable", "no live session to the server");
  }
  const auto deadline = std::max<std::chrono::milliseconds>(
      std::chrono::seconds(2), config_.timing.dead_after() * 2);
  std::unique_lock lock(call->mutex);
  const bool got = call->ready.wait_for(lock, deadline, [&] { return call->done; });
  {
    std::lock_guard clock(calls_mutex_);
    calls_.erase(id);
  }
  if (!got)
    throw Error("runtime-unreachable", "registry call timed out");
  json reply = call->reply;
  if (!reply.value("ok", false))
    throw Error(reply.value("error", std::string{"registry-error"}),
                reply.value("detail", std::string{}));
  return reply;
}

nlohmann::json Node::apply_registry_op(const json& request,
                                       const std::string& peer) {
  const std::string op = request.value("op", std::string{});
  try {
    if (op == "add") {
      AgentId a = agent_from_json(request.at("agent"));
      a.node = peer;  // agents live where their session lives
      registry_.add(a);
      return {{"ok", true}};
    }
    if (op == "remove") {
      const bool removed = registry_.remove(request.at("name").get<std::string>());
      return {{"ok", true}, {"removed", removed}};
    }
    if (op == "lookup") {
      json agents = json::array();
      for (const auto& a :
           registry_.lookup(parse_role(request.at("role").get<std::string>())))
        agents.push_back(agent_to_json(a));
      return {{"ok", true}, {"agents", agents}};
    }
    if (op == "all") {
      json agents = json::array();
      for (const auto& a : registry_.all()) agents.push_back(agent_to_json(a));
      return {{"ok", true}, {"agents", agents}};
    }
    return {{"ok", false}, {"error", "registry-error"},
            {"detail", "unknown op '" + op + "'"}};
  } catch (const Error& e) {
    return {{"ok", false}, {"error", e.code()}, {"detail", e.what()}};
  }
}

Agent& Node::add_agent(std::unique_ptr<Agent> agent) {
  Agent& ref = *agent;
  register_agent_id(ref.id());  // throws duplicate-name before anything runs
  {
    std::lock_guard lock(agents_mutex_);
    agents_[ref.id().name] = std::move(agent);
  }
  ref.start();
  return ref;
}

Agent* Node::find_agent(const std::string& agent_name) {
  std::lock_guard lock(agents_mutex_);
  auto it = agents_.find(agent_name);
  return it == agents_.end() ? nullptr : it->second.get();
}

std::vector<std::string> Node::local_agent_names() {
  std::lock_guard lock(agents_mutex_);
  std::vector<std::string> names;
  for (const auto& [name, agent] : agents_) names.push_back(name);
  return names;
}

void Node::route(const std::string& to, Envelope env) {
  if (crashed_ || stopping_) return;
  if (Agent* local = find_agent(to)) {
    local->deliver(std::move(env));
    return;
  }
  if (!is_server()) {
    remote_session_->send(
        {{"type", "envelope"}, {"to", to}, {"env", env.to_json()}});
    return;
  }
  const auto owner = registry_.find(to);
  if (!owner) return;  // unknown target: dropped
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(owner->node);
  if (it != sessions_.end())
    it->second->send({{"type", "envelope"}, {"to", to}, {"env", env.to_json()}});
}

void Node::enqueue(const std::string& to, Envelope env) {
  if (Agent* local = find_agent(to)) {
    local->deliver(std::move(env));
    return;
  }
  bool known = false;
  if (is_server()) {
    known = registry_.find(to).has_value();
  } else {
    for (const auto& a : registry_snapshot())
      if (a.name == to) {
        known = true;
        break;
      }
  }
  if (!known)
    throw Error("unknown-agent", "no agent named '" + to + "'");
  route(to, std::move(env));
}

std::vector<std::string> Node::control_targets(const ControlPackage& control) {
  std::vector<std::string> names;
  switch (control.target.kind) {
    case TargetKind::Agent:
      names.push_back(control.target.name);
      break;
    case TargetKind::Role:
      for (const auto& a : registry_.lookup(parse_role(control.target.name)))
        names.push_back(a.name);
      break;
    case TargetKind::All:
    case TargetKind::Package:
      // Package targets fan out like All: whoever holds the package reacts.
      for (const auto& a : registry_.all()) names.push_back(a.name);
      break;
  }
  return names;
}

void Node::submit_control(Envelope control_env) {
  if (crashed_ || stopping_) return;
  if (!control_env.control)
    throw Error("invalid-envelope", "not a control envelope");
  if (!is_server()) {
    remote_session_->send({{"type", "control"}, {"env", control_env.to_json()}});
    return;
  }
  for (const auto& target : control_targets(*control_env.control)) {
    Envelope copy = control_env;
    route(target, std::move(copy));
  }
}

void Node::broadcast_load(const LoadReport& report) {
  if (crashed_ || stopping_) return;
  const json msg = {{"type", "load-report"}, {"report", report.to_json()}};
  if (!is_server()) {
    remote_session_->send(msg);
    return;
  }
  std::lock_guard lock(sessions_mutex_);
  for (const auto& [peer, session] : sessions_) session->send(msg);
}

void Node::deliver_load_report(const LoadReport& report) {
  std::vector<LoadBalancerAgent*> balancers;
  {
    std::lock_guard lock(agents_mutex_);
    for (const auto& [name, agent] : agents_)
      if (auto* lb = dynamic_cast<LoadBalancerAgent*>(agent.get()))
        balancers.push_back(lb);
  }
  for (auto* lb : balancers)
    if (report.node != name()) lb->absorb_report(report);
}

void Node::on_wire(const std::string& peer, json msg) {
  if (stopping_) return;
  const std::string type = msg.value("type", std::string{});
  try {
    if (type == "heartbeat") {
      return;  // receipt time is all that matters, and the session kept it
    }
    if (type == "envelope") {
      const std::string to = msg.at("to").get<std::string>();
      Envelope env = Envelope::from_json(msg.at("env"));
      if (Agent* local = find_agent(to)) {
        local->deliver(std::move(env));
      } else if (is_server()) {
        route(to, std::move(env));  // relay towards the owner
      }
      return;
    }
    if (type == "control" && is_server()) {
      submit_control(Envelope::from_json(msg.at("env")));
      return;
    }
    if (type == "registry" && is_server()) {
      json reply = apply_registry_op(msg, peer);
      reply["type"] = "registry-reply";
      reply["req"] = msg.value("req", std::uint64_t{0});
      std::lock_guard lock(sessions_mutex_);
      auto it = sessions_.find(peer);
      if (it != sessions_.end()) it->second->send(reply);
      return;
    }
    if (type == "registry-reply") {
      const std::uint64_t id = msg.value("req", std::uint64_t{0});
      std::shared_ptr<PendingCall> call;
      {
        std::lock_guard lock(calls_mutex_);
        auto it = calls_.find(id);
        if (it != calls_.end()) call = it->second;
      }
      if (call) {
        std::lock_guard lock(call->mutex);
        call->reply = std::move(msg);
        call->done = true;
        call->ready.notify_all();
      }
      return;
    }
    if (type == "load-report") {
      const LoadReport report = LoadReport::from_json(msg.at("report"));
      deliver_load_report(report);
      if (is_server()) {  // hub: relay to everyone else
        const json relay = {{"type", "load-report"}, {"report", report.to_json()}};
        std::lock_guard lock(sessions_mutex_);
        for (const auto& [other, session] : sessions_)
          if (other != peer) session->send(relay);
      }
      return;
    }
  } catch (const Error&) {
    // malformed or stale traffic is dropped; the session stays up
  } catch (const std::exception&) {
  }
}

void Node::on_session_closed(const std::string& peer, const std::string& reason,
                             Session* self) {
  if (stopping_) return;
  if (is_server()) {
    post([this, peer, reason, self] { evict_node(peer, reason, self); });
  }
  // A client that lost its server keeps its agents; outbound traffic fails
  // silently until the process is torn down.
}

void Node::evict_node(const std::string& peer, const std::string& reason,
                      Session* expect) {
  std::unique_ptr<Session> retired;
  {
    std::lock_guard lock(sessions_mutex_);
    auto it = sessions_.find(peer);
    if (it == sessions_.end()) {
      // Nothing to evict; a displaced session's close notice ends here.
      if (expect) return;
    } else {
      // A reconnect may have put a fresh session under this name since the
      // eviction was decided; never tear that one down on stale evidence.
      if (expect && it->second.get() != expect) return;
      retired = std::move(it->second);
      sessions_.erase(it);
    }
  }
  const bool had_session = retired != nullptr;
  if (retired) retired->close();
  retired.reset();  // joins reader and writer; we are on the housekeeper
  const std::vector<AgentId> lost = registry_.remove_node(peer);
  if (!lost.empty() || had_session) fire_node_down(peer);
  (void)reason;
}

void Node::fire_node_down(const std::string& peer) {
  std::vector<std::function<void(const std::string&)>> subs;
  {
    std::lock_guard lock(subs_mutex_);
    subs = node_down_subs_;
  }
  for (const auto& fn : subs) fn(peer);
}

void Node::subscribe_node_down(std::function<void(const std::string&)> fn) {
  std::lock_guard lock(subs_mutex_);
  node_down_subs_.push_back(std::move(fn));
}

void Node::post(std::function<void()> chore) {
  std::lock_guard lock(chores_mutex_);
  if (stopping_) return;
  chores_.push_back(std::move(chore));
  chores_cv_.notify_one();
}

void Node::housekeeping_loop() {
  for (;;) {
    std::function<void()> chore;
    {
      std::unique_lock lock(chores_mutex_);
      chores_cv_.wait(lock, [&] { return stopping_.load() || !chores_.empty(); });
      if (chores_.empty()) {
        if (stopping_) return;
        continue;
      }
      chore = std::move(chores_.front());
      chores_.pop_front();
    }
    try {
      chore();
    } catch (const std::exception&) {
      // housekeeping must not die
    }
  }
}

void Node::heartbeat_loop() {
  auto last_beat = std::chrono::steady_clock::now() - config_.timing.heartbeat;
  while (!stopping_) {
    std::this_thread::sleep_for(std::min<std::chrono::milliseconds>(
        config_.timing.heartbeat / 4 + std::chrono::milliseconds(1),
        std::chrono::milliseconds(50)));
    if (stopping_) return;
    if (crashed_) continue;  // a crashed node falls silent
    const auto now = std::chrono::steady_clock::now();
    if (now - last_beat >= config_.timing.heartbeat) {
      last_beat = now;
      const json beat = {{"type", "heartbeat"}, {"node", name()}};
      if (!is_server()) {
        if (remote_session_) remote_session_->send(beat);
      } else {
        std::lock_guard lock(sessions_mutex_);
        for (const auto& [peer, session] : sessions_) session->send(beat);
      }
    }
    if (is_server()) {
      std::vector<std::pair<std::string, Session*>> dead;
      {
        std::lock_guard lock(sessions_mutex_);
        for (const auto& [peer, session] : sessions_)
          if (now - session->last_received() > config_.timing.dead_after())
            dead.emplace_back(peer, session.get());
      }
      for (const auto& [peer, session] : dead)
        post([this, peer, session] {
          evict_node(peer, "heartbeat-timeout", session);
        });
    }
  }
}

void Node::crash() {
  crashed_ = true;
  std::lock_guard lock(agents_mutex_);
  for (auto& [name, agent] : agents_) agent->freeze();
}

void Node::stop() {
  if (stopping_.exchange(true)) return;
  if (listener_) listener_->stop();

  // Close transport first so no peer blocks on us while agents wind down.
  std::map<std::string, std::unique_ptr<Session>> sessions;
  std::vector<std::unique_ptr<Session>> limbo;
  {
    std::lock_guard lock(sessions_mutex_);
    sessions.swap(sessions_);
    limbo.swap(limbo_);
  }
  for (auto& [peer, session] : sessions) session->close();
  sessions.clear();
  limbo.clear();
  if (remote_session_) remote_session_->close();
  remote_session_.reset();

  // Halt outside agents_mutex_: a working thread mid-route may need that
  // mutex one last time before it can be joined. The objects stay alive
  // until the housekeeper is down, because late chores may still consult
  // node-down subscribers.
  std::map<std::string, std::unique_ptr<Agent>> agents;
  {
    std::lock_guard lock(agents_mutex_);
    agents.swap(agents_);
  }
  for (auto& [name, agent] : agents) agent->halt();

  {
    std::lock_guard lock(chores_mutex_);
    chores_cv_.notify_all();
  }
  if (housekeeper_.joinable()) housekeeper_.join();
  if (heartbeat_.joinable()) heartbeat_.join();
  agents.clear();

  // Unblock anyone still waiting on a registry round-trip.
  std::lock_guard lock(calls_mutex_);
  for (auto& [id, call] : calls_) {
    std::lock_guard clock(call->mutex);
    call->done = true;
    call->reply = {{"ok", false}, {"error", "runtime-unreachable"},
                   {"detail", "node stopped"}};
    call->ready.notify_all();
  }
}

}  // namespace lagoon
