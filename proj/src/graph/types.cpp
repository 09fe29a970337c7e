#include "dflow/graph/types.hpp"

#include <algorithm>

namespace dflow::graph {

std::string_view to_string(PortDirection d) {
  switch (d) {
    case PortDirection::in: return "in";
    case PortDirection::out: return "out";
    case PortDirection::control_in: return "control-in";
    case PortDirection::control_out: return "control-out";
  }
  return "?";
}

std::string_view to_string(ActorKind k) {
  switch (k) {
    case ActorKind::static_actor: return "static";
    case ActorKind::dynamic: return "dynamic";
    case ActorKind::dynamic_processing: return "dynamic-processing";
  }
  return "?";
}

std::optional<PortDirection> parse_direction(std::string_view s) {
  if (s == "in") return PortDirection::in;
  if (s == "out") return PortDirection::out;
  if (s == "control-in") return PortDirection::control_in;
  if (s == "control-out") return PortDirection::control_out;
  return std::nullopt;
}

std::optional<ActorKind> parse_kind(std::string_view s) {
  if (s == "static") return ActorKind::static_actor;
  if (s == "dynamic") return ActorKind::dynamic;
  if (s == "dynamic-processing") return ActorKind::dynamic_processing;
  return std::nullopt;
}

std::string_view to_string(NodeRole r) {
  return r == NodeRole::endpoint ? "endpoint" : "server";
}

std::string_view to_string(TransportKind t) {
  switch (t) {
    case TransportKind::local: return "local";
    case TransportKind::tcp: return "tcp";
    case TransportKind::mem: return "mem";
  }
  return "?";
}

std::string_view to_string(RedundancyMode m) {
  return m == RedundancyMode::replicate ? "replicate" : "failover";
}

std::optional<NodeRole> parse_role(std::string_view s) {
  if (s == "endpoint") return NodeRole::endpoint;
  if (s == "server") return NodeRole::server;
  return std::nullopt;
}

std::optional<TransportKind> parse_transport(std::string_view s) {
  if (s == "local") return TransportKind::local;
  if (s == "tcp") return TransportKind::tcp;
  if (s == "mem") return TransportKind::mem;
  return std::nullopt;
}

std::optional<RedundancyMode> parse_redundancy(std::string_view s) {
  if (s == "replicate") return RedundancyMode::replicate;
  if (s == "failover") return RedundancyMode::failover;
  return std::nullopt;
}

const PortSpec* ActorSpec::find_port(std::string_view port_id) const {
  auto it = std::find_if(ports.begin(), ports.end(),
                         [&](const PortSpec& p) { return p.id == port_id; });
  return it == ports.end() ? nullptr : &*it;
}

std::optional<int> ActorSpec::stream() const {
  if (!kernel.params.is_object()) return std::nullopt;
  auto it = kernel.params.find("stream");
  if (it == kernel.params.end() || !it->is_number_integer()) return std::nullopt;
  return it->get<int>();
}

std::optional<PortRef> PortRef::parse(std::string_view text) {
  auto dot = text.find('.');
  if (dot == std::string_view::npos || dot == 0 || dot + 1 == text.size() ||
      text.find('.', dot + 1) != std::string_view::npos) {
    return std::nullopt;
  }
  return PortRef{std::string(text.substr(0, dot)), std::string(text.substr(dot + 1))};
}

const RateAssignment* ControlTable::find_setting(std::int64_t index) const {
  auto it = std::find_if(settings.begin(), settings.end(),
                         [&](const RateAssignment& r) { return r.index == index; });
  return it == settings.end() ? nullptr : &*it;
}

const ActorSpec* GraphSpec::find_actor(std::string_view id) const {
  auto it = std::find_if(actors.begin(), actors.end(),
                         [&](const ActorSpec& a) { return a.id == id; });
  return it == actors.end() ? nullptr : &*it;
}

const FifoSpec* GraphSpec::find_fifo(std::string_view id) const {
  auto it = std::find_if(fifos.begin(), fifos.end(),
                         [&](const FifoSpec& f) { return f.id == id; });
  return it == fifos.end() ? nullptr : &*it;
}

const PortSpec* GraphSpec::find_port(const PortRef& ref) const {
  const ActorSpec* a = find_actor(ref.actor);
  return a ? a->find_port(ref.port) : nullptr;
}

const NodeSpec* MappingSpec::find_node(std::string_view id) const {
  auto it = std::find_if(nodes.begin(), nodes.end(),
                         [&](const NodeSpec& n) { return n.id == id; });
  return it == nodes.end() ? nullptr : &*it;
}

const Assignment* MappingSpec::find_assignment(std::string_view actor) const {
  auto it = std::find_if(assignments.begin(), assignments.end(),
                         [&](const Assignment& a) { return a.actor == actor; });
  return it == assignments.end() ? nullptr : &*it;
}

const LinkBinding* MappingSpec::find_link(std::string_view fifo) const {
  auto it = std::find_if(links.begin(), links.end(),
                         [&](const LinkBinding& l) { return l.fifo == fifo; });
  return it == links.end() ? nullptr : &*it;
}

std::string MappingSpec::node_of(std::string_view actor) const {
  const Assignment* a = find_assignment(actor);
  return a ? a->node : std::string{};
}

}  // namespace dflow::graph
