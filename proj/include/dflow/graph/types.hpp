#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace dflow::graph {

enum class PortDirection { in, out, control_in, control_out };
enum class ActorKind { static_actor, dynamic, dynamic_processing };

std::string_view to_string(PortDirection d);
std::string_view to_string(ActorKind k);
std::optional<PortDirection> parse_direction(std::string_view s);
std::optional<ActorKind> parse_kind(std::string_view s);

inline bool is_input(PortDirection d) {
  return d == PortDirection::in || d == PortDirection::control_in;
}
inline bool is_control(PortDirection d) {
  return d == PortDirection::control_in || d == PortDirection::control_out;
}

// Rates and sizes are kept signed so that malformed files survive parsing and
// are reported by validate_graph instead of being silently wrapped.
struct PortSpec {
  std::string id;
  PortDirection direction = PortDirection::in;
  std::int64_t rate = 1;
  std::int64_t token_bytes = 8;
  bool dynamic = false;

  friend bool operator==(const PortSpec&, const PortSpec&) = default;
};

struct KernelRef {
  std::string name;
  nlohmann::json params = nlohmann::json::object();

  friend bool operator==(const KernelRef&, const KernelRef&) = default;
};

struct ActorSpec {
  std::string id;
  KernelRef kernel;
  std::vector<PortSpec> ports;
  ActorKind kind = ActorKind::static_actor;

  const PortSpec* find_port(std::string_view port_id) const;
  // Value of the integer "stream" kernel parameter, if declared.
  std::optional<int> stream() const;

  friend bool operator==(const ActorSpec&, const ActorSpec&) = default;
};

// "actor.port" reference.
struct PortRef {
  std::string actor;
  std::string port;

  std::string str() const { return actor + "." + port; }
  static std::optional<PortRef> parse(std::string_view text);

  friend bool operator==(const PortRef&, const PortRef&) = default;
  friend auto operator<=>(const PortRef&, const PortRef&) = default;
};

inline constexpr std::int64_t kDefaultFifoCapacity = 8;

struct FifoSpec {
  std::string id;
  PortRef from;
  PortRef to;
  std::int64_t capacity = kDefaultFifoCapacity;
  std::int64_t token_bytes = 0;

  friend bool operator==(const FifoSpec&, const FifoSpec&) = default;
};

struct RateAssignment {
  std::int64_t index = 0;
  std::vector<std::int64_t> rates;

  friend bool operator==(const RateAssignment&, const RateAssignment&) = default;
};

struct ControlTable {
  PortRef control_port;
  std::vector<PortRef> controlled;
  std::vector<RateAssignment> settings;

  const RateAssignment* find_setting(std::int64_t index) const;

  friend bool operator==(const ControlTable&, const ControlTable&) = default;
};

// The directed graph G = (A, F) plus its control tables.
struct GraphSpec {
  std::string name;
  std::vector<ActorSpec> actors;
  std::vector<FifoSpec> fifos;
  std::vector<ControlTable> control_tables;

  const ActorSpec* find_actor(std::string_view id) const;
  const FifoSpec* find_fifo(std::string_view id) const;
  const PortSpec* find_port(const PortRef& ref) const;

  friend bool operator==(const GraphSpec&, const GraphSpec&) = default;
};

enum class NodeRole { endpoint, server };
enum class TransportKind { local, tcp, mem };
enum class RedundancyMode { replicate, failover };

std::string_view to_string(NodeRole r);
std::string_view to_string(TransportKind t);
std::string_view to_string(RedundancyMode m);
std::optional<NodeRole> parse_role(std::string_view s);
std::optional<TransportKind> parse_transport(std::string_view s);
std::optional<RedundancyMode> parse_redundancy(std::string_view s);

struct NodeSpec {
  std::string id;
  NodeRole role = NodeRole::endpoint;
  std::string platform_class;

  friend bool operator==(const NodeSpec&, const NodeSpec&) = default;
};

struct Assignment {
  std::string actor;
  std::string node;
  std::string unit;

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

struct LinkBinding {
  std::string fifo;
  TransportKind transport = TransportKind::local;
  std::string address;

  friend bool operator==(const LinkBinding&, const LinkBinding&) = default;
};

struct RedundancySpec {
  RedundancyMode mode = RedundancyMode::replicate;
  std::vector<std::vector<std::string>> groups;

  friend bool operator==(const RedundancySpec&, const RedundancySpec&) = default;
};

struct MappingSpec {
  std::vector<NodeSpec> nodes;
  std::vector<Assignment> assignments;
  std::vector<LinkBinding> links;
  RedundancySpec redundancy;

  const NodeSpec* find_node(std::string_view id) const;
  const Assignment* find_assignment(std::string_view actor) const;
  const LinkBinding* find_link(std::string_view fifo) const;
  // Node hosting the actor, or empty when unassigned.
  std::string node_of(std::string_view actor) const;

  friend bool operator==(const MappingSpec&, const MappingSpec&) = default;
};

}  // namespace dflow::graph
