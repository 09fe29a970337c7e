#include "dflow/graph/io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "dflow/error.hpp"

namespace dflow::graph {
namespace {

using nlohmann::json;

// Field accessor for one JSON object that rejects keys outside `allowed`.
class Fields {
 public:
  Fields(const json& j, std::string path, std::initializer_list<std::string_view> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ParseError(path_ + ": expected an object");
    for (const auto& [key, value] : j.items()) {
      bool known = false;
      for (auto a : allowed) known = known || a == key;
      if (!known) throw ParseError(path_ + ": unknown key '" + key + "'");
    }
  }

  const json* find(std::string_view key) const {
    auto it = j_.find(std::string(key));
    return it == j_.end() ? nullptr : &*it;
  }

  const json& require(std::string_view key) const {
    const json* v = find(key);
    if (!v) throw ParseError(path_ + ": missing required field '" + std::string(key) + "'");
    return *v;
  }

  std::string string(std::string_view key) const {
    const json& v = require(key);
    if (!v.is_string()) throw ParseError(at(key) + ": expected a string");
    return v.get<std::string>();
  }

  std::string string_or(std::string_view key, std::string fallback) const {
    return find(key) ? string(key) : std::move(fallback);
  }

  std::int64_t integer(std::string_view key) const {
    const json& v = require(key);
    if (!v.is_number_integer()) throw ParseError(at(key) + ": expected an integer");
    return v.get<std::int64_t>();
  }

  std::int64_t integer_or(std::string_view key, std::int64_t fallback) const {
    return find(key) ? integer(key) : fallback;
  }

  bool boolean_or(std::string_view key, bool fallback) const {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ParseError(at(key) + ": expected a boolean");
    return v->get<bool>();
  }

  const json& array(std::string_view key) const {
    const json& v = require(key);
    if (!v.is_array()) throw ParseError(at(key) + ": expected an array");
    return v;
  }

  const json& array_or_empty(std::string_view key) const {
    static const json empty = json::array();
    return find(key) ? array(key) : empty;
  }

  std::string at(std::string_view key) const { return path_ + "." + std::string(key); }
  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
};

std::string indexed(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

PortRef parse_ref(const json& v, const std::string& path) {
  if (!v.is_string()) throw ParseError(path + ": expected \"actor.port\"");
  auto ref = PortRef::parse(v.get<std::string>());
  if (!ref) throw ParseError(path + ": malformed port reference '" + v.get<std::string>() + "'");
  return *ref;
}

PortSpec parse_port(const json& j, const std::string& path) {
  Fields f(j, path, {"id", "dir", "rate", "token_bytes", "dynamic"});
  PortSpec p;
  p.id = f.string("id");
  auto dir = parse_direction(f.string("dir"));
  if (!dir) throw ParseError(f.at("dir") + ": unknown direction '" + f.string("dir") + "'");
  p.direction = *dir;
  p.rate = f.integer_or("rate", 1);
  p.token_bytes = f.integer("token_bytes");
  p.dynamic = f.boolean_or("dynamic", false);
  return p;
}

ActorSpec parse_actor(const json& j, const std::string& path) {
  Fields f(j, path, {"id", "kernel", "params", "ports", "kind"});
  ActorSpec a;
  a.id = f.string("id");
  a.kernel.name = f.string("kernel");
  if (const json* params = f.find("params")) {
    if (!params->is_object()) throw ParseError(f.at("params") + ": expected an object");
    a.kernel.params = *params;
  }
  const json& ports = f.array("ports");
  std::set<std::string> seen;
  bool has_control = false;
  for (std::size_t i = 0; i < ports.size(); ++i) {
    PortSpec p = parse_port(ports[i], indexed(f.at("ports"), i));
    if (!seen.insert(p.id).second) {
      throw ParseError(path + ": duplicate identifier: port '" + p.id + "' of actor '" + a.id + "'");
    }
    has_control = has_control || is_control(p.direction);
    a.ports.push_back(std::move(p));
  }
  if (const json* kind = f.find("kind")) {
    if (!kind->is_string()) throw ParseError(f.at("kind") + ": expected a string");
    auto k = parse_kind(kind->get<std::string>());
    if (!k) throw ParseError(f.at("kind") + ": unknown actor kind '" + kind->get<std::string>() + "'");
    a.kind = *k;
  } else {
    a.kind = has_control ? ActorKind::dynamic : ActorKind::static_actor;
  }
  return a;
}

json to_json(const GraphSpec& g) {
  json actors = json::array();
  for (const auto& a : g.actors) {
    json ports = json::array();
    for (const auto& p : a.ports) {
      ports.push_back({{"id", p.id},
                       {"dir", to_string(p.direction)},
                       {"rate", p.rate},
                       {"token_bytes", p.token_bytes},
                       {"dynamic", p.dynamic}});
    }
    json actor = {{"id", a.id}, {"kernel", a.kernel.name}, {"kind", to_string(a.kind)}};
    actor["params"] = a.kernel.params.is_null() ? json::object() : a.kernel.params;
    actor["ports"] = std::move(ports);
    actors.push_back(std::move(actor));
  }
  json fifos = json::array();
  for (const auto& f : g.fifos) {
    fifos.push_back({{"id", f.id},
                     {"from", f.from.str()},
                     {"to", f.to.str()},
                     {"capacity", f.capacity},
                     {"token_bytes", f.token_bytes}});
  }
  json tables = json::array();
  for (const auto& t : g.control_tables) {
    json controlled = json::array();
    for (const auto& c : t.controlled) controlled.push_back(c.str());
    json settings = json::array();
    for (const auto& s : t.settings) settings.push_back({{"index", s.index}, {"rates", s.rates}});
    tables.push_back({{"control_port", t.control_port.str()},
                      {"controlled", std::move(controlled)},
                      {"settings", std::move(settings)}});
  }
  return {{"graph", g.name},
          {"actors", std::move(actors)},
          {"fifos", std::move(fifos)},
          {"control_tables", std::move(tables)}};
}

}  // namespace

nlohmann::json parse_json(std::string_view text) {
  try {
    return nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    // e.byte is 1-based and points one past the offending character.
    std::size_t offset = e.byte > 0 ? e.byte - 1 : 0;
    int line = 1;
    int column = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ParseError("syntax error: " + std::string(e.what()), line, column);
  }
}


GraphSpec parse_graph(std::string_view text) {
  json root = parse_json(text);
  Fields top(root, "$", {"graph", "actors", "fifos", "control_tables"});
  GraphSpec g;
  g.name = top.string("graph");

  const json& actors = top.array("actors");
  if (actors.empty()) throw ParseError("graph has no actors");
  std::set<std::string> actor_ids;
  for (std::size_t i = 0; i < actors.size(); ++i) {
    ActorSpec a = parse_actor(actors[i], indexed("$.actors", i));
    if (!actor_ids.insert(a.id).second) {
      throw ParseError("duplicate identifier: actor '" + a.id + "'");
    }
    g.actors.push_back(std::move(a));
  }

  const json& fifos = top.array_or_empty("fifos");
  std::set<std::string> fifo_ids;
  for (std::size_t i = 0; i < fifos.size(); ++i) {
    std::string path = indexed("$.fifos", i);
    Fields f(fifos[i], path, {"id", "from", "to", "capacity", "token_bytes"});
    FifoSpec fifo;
    fifo.id = f.string("id");
    if (!fifo_ids.insert(fifo.id).second) {
      throw ParseError("duplicate identifier: fifo '" + fifo.id + "'");
    }
    fifo.from = parse_ref(f.require("from"), f.at("from"));
    fifo.to = parse_ref(f.require("to"), f.at("to"));
    for (const PortRef* ref : {&fifo.from, &fifo.to}) {
      if (!g.find_port(*ref)) {
        throw ParseError("fifo '" + fifo.id + "' references undeclared port '" + ref->str() + "'");
      }
    }
    fifo.capacity = f.integer_or("capacity", kDefaultFifoCapacity);
    fifo.token_bytes = f.integer_or("token_bytes", g.find_port(fifo.from)->token_bytes);
    g.fifos.push_back(std::move(fifo));
  }

  const json& tables = top.array_or_empty("control_tables");
  for (std::size_t i = 0; i < tables.size(); ++i) {
    std::string path = indexed("$.control_tables", i);
    Fields f(tables[i], path, {"control_port", "controlled", "settings"});
    ControlTable t;
    t.control_port = parse_ref(f.require("control_port"), f.at("control_port"));
    if (!g.find_port(t.control_port)) {
      throw ParseError(path + ": control table references undeclared port '" +
                       t.control_port.str() + "'");
    }
    const json& controlled = f.array("controlled");
    for (std::size_t c = 0; c < controlled.size(); ++c) {
      PortRef ref = parse_ref(controlled[c], indexed(f.at("controlled"), c));
      if (!g.find_port(ref)) {
        throw ParseError(path + ": control table references undeclared port '" + ref.str() + "'");
      }
      t.controlled.push_back(std::move(ref));
    }
    const json& settings = f.array("settings");
    for (std::size_t s = 0; s < settings.size(); ++s) {
      std::string spath = indexed(f.at("settings"), s);
      Fields sf(settings[s], spath, {"index", "rates"});
      RateAssignment row;
      row.index = sf.integer("index");
      const json& rates = sf.array("rates");
      for (const auto& r : rates) {
        if (!r.is_number_integer()) throw ParseError(sf.at("rates") + ": expected integers");
        row.rates.push_back(r.get<std::int64_t>());
      }
      t.settings.push_back(std::move(row));
    }
    g.control_tables.push_back(std::move(t));
  }
  return g;
}

std::string serialize_graph(const GraphSpec& g) { return to_json(g).dump(2) + "\n"; }

MappingSpec parse_mapping(std::string_view text) {
  json root = parse_json(text);
  Fields top(root, "$", {"nodes", "assignments", "links", "redundancy"});
  MappingSpec m;

  const json& nodes = top.array("nodes");
  std::set<std::string> node_ids;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    Fields f(nodes[i], indexed("$.nodes", i), {"id", "role", "platform_class"});
    NodeSpec n;
    n.id = f.string("id");
    auto role = parse_role(f.string("role"));
    if (!role) throw ParseError(f.at("role") + ": unknown role '" + f.string("role") + "'");
    n.role = *role;
    n.platform_class = f.string_or("platform_class", std::string(to_string(n.role)));
    if (!node_ids.insert(n.id).second) throw ParseError("duplicate identifier: node '" + n.id + "'");
    m.nodes.push_back(std::move(n));
  }

  const json& assignments = top.array("assignments");
  std::set<std::string> assigned;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    Fields f(assignments[i], indexed("$.assignments", i), {"actor", "node", "unit"});
    Assignment a{f.string("actor"), f.string("node"), f.string_or("unit", "core0")};
    if (!assigned.insert(a.actor).second) {
      throw ParseError("duplicate identifier: actor '" + a.actor + "' assigned twice");
    }
    m.assignments.push_back(std::move(a));
  }

  const json& links = top.array_or_empty("links");
  std::set<std::string> linked;
  for (std::size_t i = 0; i < links.size(); ++i) {
    Fields f(links[i], indexed("$.links", i), {"fifo", "transport", "address"});
    LinkBinding l;
    l.fifo = f.string("fifo");
    auto t = parse_transport(f.string("transport"));
    if (!t) throw ParseError(f.at("transport") + ": unknown transport '" + f.string("transport") + "'");
    l.transport = *t;
    l.address = f.string_or("address", "");
    if (!linked.insert(l.fifo).second) throw ParseError("duplicate identifier: link for fifo '" + l.fifo + "'");
    m.links.push_back(std::move(l));
  }

  if (const json* red = top.find("redundancy")) {
    Fields f(*red, "$.redundancy", {"mode", "groups"});
    auto mode = parse_redundancy(f.string("mode"));
    if (!mode) throw ParseError("$.redundancy.mode: unknown mode '" + f.string("mode") + "'");
    m.redundancy.mode = *mode;
    for (const auto& group : f.array_or_empty("groups")) {
      if (!group.is_array()) throw ParseError("$.redundancy.groups: expected arrays of node ids");
      std::vector<std::string> members;
      for (const auto& id : group) {
        if (!id.is_string()) throw ParseError("$.redundancy.groups: expected node id strings");
        members.push_back(id.get<std::string>());
      }
      m.redundancy.groups.push_back(std::move(members));
    }
  }
  return m;
}

std::string serialize_mapping(const MappingSpec& m) {
  json nodes = json::array();
  for (const auto& n : m.nodes) {
    nodes.push_back({{"id", n.id}, {"role", to_string(n.role)}, {"platform_class", n.platform_class}});
  }
  json assignments = json::array();
  for (const auto& a : m.assignments) {
    assignments.push_back({{"actor", a.actor}, {"node", a.node}, {"unit", a.unit}});
  }
  json links = json::array();
  for (const auto& l : m.links) {
    links.push_back({{"fifo", l.fifo}, {"transport", to_string(l.transport)}, {"address", l.address}});
  }
  json root = {{"nodes", std::move(nodes)},
               {"assignments", std::move(assignments)},
               {"links", std::move(links)},
               {"redundancy", {{"mode", to_string(m.redundancy.mode)}, {"groups", m.redundancy.groups}}}};
  return root.dump(2) + "\n";
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
}

GraphSpec load_graph(const std::string& path) {
  try {
    return parse_graph(read_text_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

MappingSpec load_mapping(const std::string& path) {
  try {
    return parse_mapping(read_text_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::uint64_t graph_hash(const GraphSpec& g) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_json(g).dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace dflow::graph
