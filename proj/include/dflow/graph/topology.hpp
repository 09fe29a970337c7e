#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dflow/graph/types.hpp"

namespace dflow::graph {

struct GraphStats {
  std::size_t actor_count = 0;
  std::size_t fifo_count = 0;

  friend bool operator==(const GraphStats&, const GraphStats&) = default;
};

GraphStats graph_stats(const GraphSpec& g);

// Actors in topological order over data and control FIFOs, ties broken by
// actor id. Actors on cycles are appended in id order.
std::vector<std::string> topological_order(const GraphSpec& g);

// If every FIFO connects consecutive actors of a single linear order (parallel
// FIFOs between neighbours are allowed), returns that order. Throws GraphError
// "not a chain" otherwise.
std::vector<std::string> chain_order(const GraphSpec& g);

enum class ServerInstancing {
  // One server-side instance of the server template per stream on every
  // server, so one stream's death cannot stall another.
  per_stream,
  // One server-side instance per server whose boundary actor takes one input
  // port per stream.
  shared,
};

struct BipartiteOptions {
  int servers = 1;    // m
  int endpoints = 1;  // n
  RedundancyMode redundancy = RedundancyMode::replicate;
  ServerInstancing instancing = ServerInstancing::per_stream;
  TransportKind transport = TransportKind::mem;
  std::string tcp_host = "127.0.0.1";
  int tcp_base_port = 0;  // server j listens on base + j - 1
  std::int64_t link_capacity = kDefaultFifoCapacity;
};

// Node ids produced by the builder.
std::string endpoint_node_id(int i);
std::string server_node_id(int j);

// Instantiates the K_{m,n} topology: n endpoint subgraphs, server-side
// instances on each of the m servers and one FIFO from every endpoint's
// boundary port to every server.
std::pair<GraphSpec, MappingSpec> build_complete_bipartite(
    const GraphSpec& endpoint_template, const GraphSpec& server_template,
    const BipartiteOptions& options);

}  // namespace dflow::graph
