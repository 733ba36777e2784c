#include "lagoon/registry.hpp"

#include <algorithm>

#include "lagoon/error.hpp"

namespace lagoon {

const char* role_name(Role r) {
  switch (r) {
    case Role::Server: return "server";
    case Role::TaskContractor: return "task-contractor";
    case Role::Controller: return "controller";
    case Role::Collector: return "collector";
    case Role::Splitter: return "splitter";
    case Role::Answer: return "answer";
    case Role::Client: return "client";
    case Role::LoadBalancer: return "load-balancer";
    case Role::Worker: return "worker";
  }
  return "worker";
}

Role parse_role(const std::string& s) {
  if (s == "server") return Role::Server;
  if (s == "task-contractor") return Role::TaskContractor;
  if (s == "controller") return Role::Controller;
  if (s == "collector") return Role::Collector;
  if (s == "splitter") return Role::Splitter;
  if (s == "answer") return Role::Answer;
  if (s == "client") return Role::Client;
  if (s == "load-balancer") return Role::LoadBalancer;
  if (s == "worker") return Role::Worker;
  throw Error("unknown-role", "no role named '" + s + "'");
}

void Registry::add(const AgentId& agent) {
  std::lock_guard lock(mutex_);
  for (const auto& a : agents_)
    if (a.name == agent.name)
      throw Error("duplicate-name",
                  "agent '" + agent.name + "' is already registered");
  agents_.push_back(agent);
}

bool Registry::remove(const std::string& name) {
  std::lock_guard lock(mutex_);
  auto it = std::find_if(agents_.begin(), agents_.end(),
                         [&](const AgentId& a) { return a.name == name; });
  if (it == agents_.end()) return false;
  agents_.erase(it);
  return true;
}

std::vector<AgentId> Registry::remove_node(const std::string& node) {
  std::lock_guard lock(mutex_);
  std::vector<AgentId> removed;
  std::vector<AgentId> kept;
  kept.reserve(agents_.size());
  for (auto& a : agents_) {
    if (a.node == node)
      removed.push_back(std::move(a));
    else
      kept.push_back(std::move(a));
  }
  agents_ = std::move(kept);
  return removed;
}

std::vector<AgentId> Registry::lookup(Role role) const {
  std::lock_guard lock(mutex_);
  std::vector<AgentId> out;
  for (const auto& a : agents_)
    if (a.role == role) out.push_back(a);
  std::sort(out.begin(), out.end(),
            [](const AgentId& x, const AgentId& y) { return x.name < y.name; });
  return out;
}

std::optional<AgentId> Registry::find(const std::string& name) const {
  std::lock_guard lock(mutex_);
  for (const auto& a : agents_)
    if (a.name == name) return a;
  return std::nullopt;
}

std::vector<AgentId> Registry::all() const {
  std::lock_guard lock(mutex_);
  std::vector<AgentId> out = agents_;
  std::sort(out.begin(), out.end(),
            [](const AgentId& x, const AgentId& y) { return x.name < y.name; });
  return out;
}

std::size_t Registry::size() const {
  std::lock_guard lock(mutex_);
  return agents_.size();
}

}  // namespace lagoon
