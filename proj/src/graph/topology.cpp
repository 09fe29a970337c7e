#include "dflow/graph/topology.hpp"

#include <algorithm>
#include <map>
#include <queue>
#include <set>

#include "dflow/error.hpp"

namespace dflow::graph {

GraphStats graph_stats(const GraphSpec& g) { return {g.actors.size(), g.fifos.size()}; }

std::vector<std::string> topological_order(const GraphSpec& g) {
  std::map<std::string, int> indegree;
  std::map<std::string, std::vector<std::string>> succ;
  for (const auto& a : g.actors) indegree[a.id] = 0;
  for (const auto& f : g.fifos) {
    if (f.from.actor == f.to.actor) continue;
    if (!indegree.count(f.from.actor) || !indegree.count(f.to.actor)) continue;
    succ[f.from.actor].push_back(f.to.actor);
    ++indegree[f.to.actor];
  }
  std::priority_queue<std::string, std::vector<std::string>, std::greater<>> ready;
  for (const auto& [id, deg] : indegree) {
    if (deg == 0) ready.push(id);
  }
  std::vector<std::string> order;
  std::set<std::string> placed;
  while (!ready.empty()) {
    std::string cur = ready.top();
    ready.pop();
    order.push_back(cur);
    placed.insert(cur);
    for (const auto& next : succ[cur]) {
      if (--indegree[next] == 0) ready.push(next);
    }
  }
  for (const auto& [id, deg] : indegree) {
    if (!placed.count(id)) order.push_back(id);
  }
  return order;
}

std::vector<std::string> chain_order(const GraphSpec& g) {
  if (g.actors.empty()) throw GraphError("not a chain: graph has no actors");
  std::map<std::string, std::set<std::string>> succ;
  std::map<std::string, std::set<std::string>> pred;
  for (const auto& f : g.fifos) {
    if (f.from.actor == f.to.actor) throw GraphError("not a chain: self loop on '" + f.from.actor + "'");
    succ[f.from.actor].insert(f.to.actor);
    pred[f.to.actor].insert(f.from.actor);
  }
  std::vector<std::string> heads;
  for (const auto& a : g.actors) {
    if (pred[a.id].empty()) heads.push_back(a.id);
    if (succ[a.id].size() > 1 || pred[a.id].size() > 1) {
      throw GraphError("not a chain: actor '" + a.id + "' branches");
    }
  }
  if (heads.size() != 1) throw GraphError("not a chain: expected exactly one head actor");
  std::vector<std::string> order{heads.front()};
  while (!succ[order.back()].empty()) {
    order.push_back(*succ[order.back()].begin());
    if (order.size() > g.actors.size()) throw GraphError("not a chain: cycle");
  }
  if (order.size() != g.actors.size()) throw GraphError("not a chain: graph is disconnected");
  return order;
}

std::string endpoint_node_id(int i) { return "ep" + std::to_string(i); }
std::string server_node_id(int j) { return "srv" + std::to_string(j); }

namespace {

struct Boundary {
  std::string actor;
  std::string port;
};

// The single data port of `direction` class that no FIFO binds.
Boundary find_boundary(const GraphSpec& t, bool want_output, const char* what) {
  std::set<PortRef> bound;
  for (const auto& f : t.fifos) {
    bound.insert(f.from);
    bound.insert(f.to);
  }
  std::vector<Boundary> found;
  for (const auto& a : t.actors) {
    for (const auto& p : a.ports) {
      bool is_out = p.direction == PortDirection::out;
      bool is_in = p.direction == PortDirection::in;
      if ((want_output ? is_out : is_in) && !bound.count(PortRef{a.id, p.id})) {
        found.push_back({a.id, p.id});
      }
    }
  }
  if (found.size() != 1) {
    throw GraphError(std::string(what) + " template must expose exactly one unbound " +
                     (want_output ? "output" : "input") + " port, found " +
                     std::to_string(found.size()));
  }
  return found.front();
}

PortRef prefixed(const PortRef& ref, const std::string& prefix) {
  return PortRef{prefix + ref.actor, ref.port};
}

// Copies a template into `out` with every identifier prefixed; `stream` is
// recorded as a kernel parameter when non-negative.
void instantiate(const GraphSpec& t, const std::string& prefix, int stream, GraphSpec& out) {
  for (ActorSpec a : t.actors) {
    a.id = prefix + a.id;
    if (stream >= 0) a.kernel.params["stream"] = stream;
    out.actors.push_back(std::move(a));
  }
  for (FifoSpec f : t.fifos) {
    f.id = prefix + f.id;
    f.from = prefixed(f.from, prefix);
    f.to = prefixed(f.to, prefix);
    out.fifos.push_back(std::move(f));
  }
  for (ControlTable c : t.control_tables) {
    c.control_port = prefixed(c.control_port, prefix);
    for (auto& ref : c.controlled) ref = prefixed(ref, prefix);
    out.control_tables.push_back(std::move(c));
  }
}

// Replaces port `port` of `actor` with one copy per suffix.
void split_port(GraphSpec& g, const std::string& actor, const std::string& port,
                const std::vector<std::string>& suffixes) {
  for (auto& a : g.actors) {
    if (a.id != actor) continue;
    auto it = std::find_if(a.ports.begin(), a.ports.end(),
                           [&](const PortSpec& p) { return p.id == port; });
    PortSpec original = *it;
    it = a.ports.erase(it);
    std::vector<PortSpec> copies;
    for (const auto& s : suffixes) {
      PortSpec copy = original;
      copy.id = port + "_" + s;
      copies.push_back(std::move(copy));
    }
    a.ports.insert(it, copies.begin(), copies.end());
    return;
  }
}

}  // namespace

std::pair<GraphSpec, MappingSpec> build_complete_bipartite(
    const GraphSpec& endpoint_template, const GraphSpec& server_template,
    const BipartiteOptions& options) {
  const int m = options.servers;
  const int n = options.endpoints;
  if (m < 1 || n < 1) throw GraphError("K_{m,n} requires m >= 1 and n >= 1");
  Boundary ep_out = find_boundary(endpoint_template, true, "endpoint");
  Boundary srv_in = find_boundary(server_template, false, "server");
  const PortSpec* ep_port = endpoint_template.find_actor(ep_out.actor)->find_port(ep_out.port);
  const PortSpec* srv_port = server_template.find_actor(srv_in.actor)->find_port(srv_in.port);
  if (ep_port->dynamic || srv_port->dynamic) throw GraphError("template boundary ports must be static");
  if (ep_port->token_bytes != srv_port->token_bytes) {
    throw GraphError("endpoint and server boundary ports disagree on token_bytes");
  }

  GraphSpec g;
  g.name = endpoint_template.name + "+" + server_template.name + "@K" + std::to_string(m) + "," +
           std::to_string(n);
  MappingSpec map;
  map.redundancy.mode = options.redundancy;
  std::vector<std::string> group;

  std::vector<std::string> server_suffixes;
  for (int j = 1; j <= m; ++j) server_suffixes.push_back(server_node_id(j));
  std::vector<std::string> stream_suffixes;
  for (int i = 1; i <= n; ++i) stream_suffixes.push_back("s" + std::to_string(i));

  auto assign_all = [&](std::size_t first, const std::string& node) {
    for (std::size_t k = first; k < g.actors.size(); ++k) {
      map.assignments.push_back({g.actors[k].id, node, "core0"});
    }
  };

  for (int i = 1; i <= n; ++i) {
    std::string node = endpoint_node_id(i);
    map.nodes.push_back({node, NodeRole::endpoint, "endpoint"});
    std::size_t first = g.actors.size();
    std::string prefix = node + "_";
    instantiate(endpoint_template, prefix, i, g);
    split_port(g, prefix + ep_out.actor, ep_out.port, server_suffixes);
    assign_all(first, node);
  }
  for (int j = 1; j <= m; ++j) {
    std::string node = server_node_id(j);
    map.nodes.push_back({node, NodeRole::server, "server"});
    group.push_back(node);
    std::size_t first = g.actors.size();
    if (options.instancing == ServerInstancing::per_stream) {
      for (int i = 1; i <= n; ++i) {
        instantiate(server_template, node + "_s" + std::to_string(i) + "_", i, g);
      }
    } else {
      instantiate(server_template, node + "_", -1, g);
      split_port(g, node + "_" + srv_in.actor, srv_in.port, stream_suffixes);
    }
    assign_all(first, node);
  }
  map.redundancy.groups.push_back(group);

  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= m; ++j) {
      std::string ep = endpoint_node_id(i);
      std::string srv = server_node_id(j);
      FifoSpec f;
      f.id = ep + "_to_" + srv;
      f.from = PortRef{ep + "_" + ep_out.actor, ep_out.port + "_" + srv};
      if (options.instancing == ServerInstancing::per_stream) {
        f.to = PortRef{srv + "_s" + std::to_string(i) + "_" + srv_in.actor, srv_in.port};
      } else {
        f.to = PortRef{srv + "_" + srv_in.actor, srv_in.port + "_s" + std::to_string(i)};
      }
      f.capacity = options.link_capacity;
      f.token_bytes = ep_port->token_bytes;
      g.fifos.push_back(f);

      LinkBinding link;
      link.fifo = f.id;
      link.transport = options.transport;
      if (options.transport == TransportKind::tcp) {
        link.address = options.tcp_host + ":" + std::to_string(options.tcp_base_port + j - 1);
      } else {
        link.address = "mem://" + srv + "/" + f.id;
      }
      map.links.push_back(std::move(link));
    }
  }
  return {std::move(g), std::move(map)};
}

}  // namespace dflow::graph
