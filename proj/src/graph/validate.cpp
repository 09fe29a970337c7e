#include "dflow/graph/validate.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

namespace dflow::graph {
namespace {

class Reporter {
 public:
  explicit Reporter(ValidationReport& r) : r_(r) {}
  void operator()(std::string code, std::string message) {
    r_.violations.push_back({std::move(code), std::move(message)});
  }

 private:
  ValidationReport& r_;
};

bool weakly_connected(const std::set<std::string>& members,
                      const std::vector<std::pair<std::string, std::string>>& edges) {
  if (members.size() <= 1) return true;
  std::map<std::string, std::vector<std::string>> adj;
  for (const auto& [a, b] : edges) {
    if (members.count(a) && members.count(b)) {
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
  }
  std::set<std::string> seen{*members.begin()};
  std::vector<std::string> stack{*members.begin()};
  while (!stack.empty()) {
    std::string cur = stack.back();
    stack.pop_back();
    for (const auto& next : adj[cur]) {
      if (seen.insert(next).second) stack.push_back(next);
    }
  }
  return seen.size() == members.size();
}

}  // namespace

bool ValidationReport::has(std::string_view code) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& v) { return v.code == code; });
}

std::string ValidationReport::to_string() const {
  std::ostringstream out;
  for (const auto& v : violations) out << v.code << ": " << v.message << "\n";
  return out.str();
}

ValidationReport validate_graph(const GraphSpec& g) {
  ValidationReport report;
  Reporter add(report);

  if (g.actors.empty()) add("no-actors", "graph has no actors");

  std::set<std::string> actor_ids;
  for (const auto& a : g.actors) {
    if (!actor_ids.insert(a.id).second) add("duplicate-id", "duplicate actor id '" + a.id + "'");
    std::set<std::string> port_ids;
    bool has_control = false;
    for (const auto& p : a.ports) {
      std::string where = a.id + "." + p.id;
      if (!port_ids.insert(p.id).second) add("duplicate-port", "duplicate port id '" + where + "'");
      if (p.rate < 0) add("negative-rate", "negative token rate on port '" + where + "'");
      if (p.token_bytes < 1) add("token-bytes", "token_bytes must be >= 1 on port '" + where + "'");
      if (is_control(p.direction)) {
        has_control = true;
        if (p.token_bytes < 4) {
          add("control-token-bytes", "control port '" + where + "' needs token_bytes >= 4");
        }
        if (p.dynamic) add("dynamic-control-port", "control port '" + where + "' cannot be dynamic");
      }
    }
    if (a.kind == ActorKind::static_actor && has_control) {
      add("static-actor-has-control", "static actor '" + a.id + "' declares control ports");
    }
    if (a.kind != ActorKind::static_actor && !has_control) {
      add("dynamic-actor-no-control", "dynamic actor '" + a.id + "' has no control port");
    }
  }

  std::map<PortRef, int> bindings;
  std::set<std::string> fifo_ids;
  std::vector<std::pair<std::string, std::string>> edges;
  for (const auto& f : g.fifos) {
    if (!fifo_ids.insert(f.id).second) add("duplicate-id", "duplicate fifo id '" + f.id + "'");
    if (f.capacity < 1) add("capacity", "fifo '" + f.id + "' capacity must be >= 1");
    const PortSpec* from = g.find_port(f.from);
    const PortSpec* to = g.find_port(f.to);
    if (!from) add("unknown-port", "fifo '" + f.id + "' references undeclared port '" + f.from.str() + "'");
    if (!to) add("unknown-port", "fifo '" + f.id + "' references undeclared port '" + f.to.str() + "'");
    if (from && is_input(from->direction)) {
      add("fifo-direction", "fifo '" + f.id + "' producer port '" + f.from.str() + "' is not an output");
    }
    if (to && !is_input(to->direction)) {
      add("fifo-direction", "fifo '" + f.id + "' consumer port '" + f.to.str() + "' is not an input");
    }
    if (from && to && is_control(from->direction) != is_control(to->direction)) {
      add("fifo-direction", "fifo '" + f.id + "' mixes control and data ports");
    }
    for (const PortSpec* p : {from, to}) {
      if (p && p->token_bytes != f.token_bytes) {
        add("fifo-token-bytes", "fifo '" + f.id + "' token_bytes " + std::to_string(f.token_bytes) +
                                    " differs from port '" + p->id + "' (" +
                                    std::to_string(p->token_bytes) + ")");
      }
    }
    // Control outputs may broadcast to one control FIFO per consumer.
    if (from && from->direction != PortDirection::control_out) ++bindings[f.from];
    if (to) ++bindings[f.to];
    edges.emplace_back(f.from.actor, f.to.actor);
  }
  for (const auto& [ref, count] : bindings) {
    if (count > 1) add("port-multiply-bound", "port '" + ref.str() + "' is bound to " +
                                                  std::to_string(count) + " fifos");
  }

  std::map<PortRef, int> controlled_count;
  for (std::size_t ti = 0; ti < g.control_tables.size(); ++ti) {
    const ControlTable& t = g.control_tables[ti];
    std::string name = "control table on '" + t.control_port.str() + "'";
    const PortSpec* cp = g.find_port(t.control_port);
    if (!cp) {
      add("unknown-port", name + " references undeclared port");
    } else if (cp->direction != PortDirection::control_out) {
      add("control-port-direction", name + ": control port must be control-out");
    }
    for (const auto& ref : t.controlled) {
      ++controlled_count[ref];
      const PortSpec* p = g.find_port(ref);
      if (!p) {
        add("unknown-port", name + " controls undeclared port '" + ref.str() + "'");
        continue;
      }
      if (!p->dynamic) add("controlled-not-dynamic", name + " controls non-dynamic port '" + ref.str() + "'");
      if (is_control(p->direction)) add("controlled-not-data", name + " controls control port '" + ref.str() + "'");
      // The owning actor must either own the control port or receive it.
      if (ref.actor != t.control_port.actor) {
        bool routed = std::any_of(g.fifos.begin(), g.fifos.end(), [&](const FifoSpec& f) {
          return f.from == t.control_port && f.to.actor == ref.actor;
        });
        if (!routed) {
          add("control-not-routed", name + " does not reach actor '" + ref.actor + "' through a control fifo");
        }
      }
    }
    std::set<std::int64_t> indices;
    bool progress = false;
    for (const auto& row : t.settings) {
      if (!indices.insert(row.index).second) {
        add("duplicate-setting", name + " has duplicate setting index " + std::to_string(row.index));
      }
      if (row.index < 0) add("negative-setting-index", name + " has negative setting index");
      if (row.rates.size() != t.controlled.size()) {
        add("setting-arity", name + " setting " + std::to_string(row.index) + " has " +
                                 std::to_string(row.rates.size()) + " rates for " +
                                 std::to_string(t.controlled.size()) + " controlled ports");
      }
      bool all_nonzero = !row.rates.empty();
      for (auto r : row.rates) {
        if (r < 0) add("negative-rate", name + " setting " + std::to_string(row.index) + ": negative token rate");
        all_nonzero = all_nonzero && r > 0;
      }
      progress = progress || all_nonzero;
    }
    if (!progress) add("no-progress-setting", name + " has no setting with all data rates non-zero");
  }
  for (const auto& a : g.actors) {
    for (const auto& p : a.ports) {
      if (!p.dynamic) continue;
      PortRef ref{a.id, p.id};
      int n = controlled_count.count(ref) ? controlled_count[ref] : 0;
      if (n == 0) add("dynamic-port-uncontrolled", "dynamic port '" + ref.str() + "' is not controlled by any table");
      if (n > 1) add("multiply-controlled-port", "multiply-controlled port '" + ref.str() + "' (" +
                                                     std::to_string(n) + " tables)");
    }
  }

  // Connectivity per declared stream, or of the whole graph when no actor
  // declares a stream.
  std::map<int, std::set<std::string>> streams;
  for (const auto& a : g.actors) {
    if (auto s = a.stream()) streams[*s].insert(a.id);
  }
  if (streams.empty()) {
    if (!weakly_connected(actor_ids, edges)) add("disconnected", "graph is not connected");
  } else {
    for (const auto& [stream, members] : streams) {
      if (!weakly_connected(members, edges)) {
        add("disconnected", "stream " + std::to_string(stream) + " is not connected");
      }
    }
  }
  return report;
}

ValidationReport validate_mapping(const GraphSpec& g, const MappingSpec& m) {
  ValidationReport report;
  Reporter add(report);
  std::set<std::string> nodes;
  for (const auto& n : m.nodes) {
    if (!nodes.insert(n.id).second) add("duplicate-id", "duplicate node id '" + n.id + "'");
  }
  std::map<std::string, int> assigned;
  for (const auto& a : m.assignments) {
    ++assigned[a.actor];
    if (!g.find_actor(a.actor)) add("unknown-actor", "assignment for unknown actor '" + a.actor + "'");
    if (!nodes.count(a.node)) add("unknown-node", "actor '" + a.actor + "' assigned to unknown node '" + a.node + "'");
  }
  for (const auto& a : g.actors) {
    int n = assigned.count(a.id) ? assigned[a.id] : 0;
    if (n != 1) add("assignment", "actor '" + a.id + "' must be assigned to exactly one node");
  }
  for (const auto& f : g.fifos) {
    std::string from = m.node_of(f.from.actor);
    std::string to = m.node_of(f.to.actor);
    const LinkBinding* link = m.find_link(f.id);
    if (from != to && (!link || link->transport == TransportKind::local || link->address.empty())) {
      add("missing-link", "fifo '" + f.id + "' crosses nodes without a transport binding");
    }
  }
  for (const auto& l : m.links) {
    if (!g.find_fifo(l.fifo)) add("unknown-fifo", "link for unknown fifo '" + l.fifo + "'");
  }
  for (const auto& group : m.redundancy.groups) {
    for (const auto& id : group) {
      const NodeSpec* n = m.find_node(id);
      if (!n || n->role != NodeRole::server) {
        add("redundancy-group", "redundancy group member '" + id + "' is not a server node");
      }
    }
  }
  return report;
}

}  // namespace dflow::graph
