#pragma once

#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace lagoon {

enum class Role {
  Server,
  TaskContractor,
  Controller,
  Collector,
  Splitter,
  Answer,
  Client,
  LoadBalancer,
  Worker,
};

const char* role_name(Role r);
Role parse_role(const std::string& s);  // throws Error("unknown-role")

// Name card of a registered agent. Names are globally unique; `kind`
// distinguishes worker specialities and is empty for other roles.
struct AgentId {
  std::string name;
  Role role = Role::Worker;
  std::string kind;
  std::string node;

  bool operator==(const AgentId&) const = default;
};

// The yellow pages kept on the server node. All mutation is serialized; a
// lookup returns a snapshot that may go stale the moment it is taken.
class Registry {
 public:
  void add(const AgentId& agent);              // throws Error("duplicate-name")
  bool remove(const std::string& name);        // false if absent
  std::vector<AgentId> remove_node(const std::string& node);

  std::vector<AgentId> lookup(Role role) const;  // sorted by name
  std::optional<AgentId> find(const std::string& name) const;
  std::vector<AgentId> all() const;              // sorted by name
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::vector<AgentId> agents_;
};

}  // namespace lagoon
