#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "dflow/error.hpp"
#include "dflow/graph/types.hpp"
#include "dflow/runtime/engine.hpp"
#include "dflow/transport/frame.hpp"
#include "dflow/transport/network.hpp"

namespace dflow::transport {

class TransportError : public Error {
 public:
  using Error::Error;
};

struct LinkConfig {
  std::chrono::milliseconds heartbeat_interval{500};
  std::chrono::milliseconds idle_timeout{1500};
  std::chrono::milliseconds backoff_base{100};
  std::chrono::milliseconds backoff_cap{3200};
  std::chrono::milliseconds handshake_timeout{1000};
  int retry_budget = 5;
  std::size_t max_tokens_per_frame = 64;

  // Delay after the `failures`-th consecutive failed attempt (1-based).
  std::chrono::milliseconds backoff(int failures) const;
  // How long a listening side waits for its peer to (re)connect before it
  // declares the link dead: the dialer's whole retry schedule plus one idle
  // period and one handshake.
  std::chrono::milliseconds passive_grace() const;
};

enum class LinkStatus { connecting, alive, degraded, dead };

std::string_view to_string(LinkStatus s);

struct LinkState {
  std::string fifo;
  std::uint32_t fifo_id = 0;  // index of the FIFO in the graph
  std::string peer;           // node at the other end
  std::string address;
  bool outbound = false;
  LinkStatus status = LinkStatus::connecting;
  Clock::time_point last_rx{};
  int retry_count = 0;
  std::uint64_t establishments = 0;
  std::string last_error;

  // Outbound: tokens [acked, taken) sit in the resend buffer; next_send is
  // the transmit cursor inside that range.
  std::uint64_t acked = 0;
  std::uint64_t taken = 0;
  std::uint64_t next_send = 0;
  std::size_t window = 0;

  // Inbound: tokens delivered into the local FIFO, and redundant copies seen.
  std::uint64_t delivered = 0;
  std::uint64_t duplicates = 0;
  bool peer_finished = false;

  std::size_t unacked() const { return static_cast<std::size_t>(taken - acked); }
};

// All links of one node. Outbound boundary FIFOs are dialled, inbound ones
// are served from one listener per distinct address; an arriving connection
// names its FIFO in HELLO.
//
// Tokens leave the local engine's outbound buffer into a resend buffer
// bounded by the remote FIFO capacity and stay there until the peer reports
// them consumed (HEARTBEAT carries the consumed count). After a reconnect the
// listener answers with RESUME(next expected) and the dialer rewinds to it;
// the listener drops anything it already has. Not thread-safe except for
// state()/states(), which may be read from other threads.
class NodeTransport {
 public:
  NodeTransport(std::shared_ptr<Network> network, runtime::Engine& engine, const graph::MappingSpec& mapping,
                std::uint64_t graph_hash, LinkConfig config = {});
  ~NodeTransport();

  NodeTransport(const NodeTransport&) = delete;
  NodeTransport& operator=(const NodeTransport&) = delete;

  // Binds listeners (throws TransportError when an address is taken) and
  // schedules the first dial of every outbound link.
  void start();
  // Does all pending I/O and timer work once. Returns true if any tokens
  // moved in either direction.
  bool pump();
  // Earliest time pump() has timer work to do.
  Clock::time_point next_deadline() const;
  // Blocks in the network until traffic, wake() or `deadline`.
  void wait_until(Clock::time_point deadline);

  std::vector<std::string> outbound_links() const;
  std::vector<std::string> inbound_links() const;
  bool has_link(std::string_view fifo) const;
  LinkState state(std::string_view fifo) const;
  std::vector<LinkState> states() const;
  // Links that turned dead since the last call.
  std::vector<std::string> take_newly_dead();

  // Pumps until the link is alive. Throws TransportError on a terminal
  // handshake failure (graph hash or version mismatch), exhausted retries or
  // when `timeout` passes.
  LinkState establish(std::string_view fifo, std::chrono::milliseconds timeout);
  // Status after checking the idle threshold.
  LinkStatus poll_liveness(std::string_view fifo);
  // Acknowledgment horizon of an outbound link.
  std::uint64_t acked(std::string_view fifo) const;

  // Copies of the tokens sent but not acknowledged, oldest first.
  std::vector<std::vector<std::byte>> unacked_tokens(std::string_view fifo) const;
  // Tokens sent on `fifo` ahead of anything from its engine buffer.
  void enqueue_replay(std::string_view fifo, std::vector<std::vector<std::byte>> tokens);
  // Declares a link dead (terminal) without waiting for the retry budget.
  void mark_dead(std::string_view fifo, const std::string& reason);

  // Every outbound link is dead or established with nothing left to send.
  bool outbound_settled() const;
  // Every inbound link is dead or its peer said BYE.
  bool inbound_settled() const;
  // Sends BYE on every established outbound link.
  void send_bye();
  // Closes every connection and listener.
  void shutdown();

 private:
  struct Out;
  struct In;
  struct Pending;

  Out* find_out(std::string_view fifo) const;
  In* find_in(std::string_view fifo) const;
  void set_status(LinkState& st, LinkStatus to, const std::string& reason);
  void out_attempt_failed(Out& l, const std::string& reason, Clock::time_point now);
  void out_transport_error(Out& l, const std::string& reason, Clock::time_point now);
  void in_transport_error(In& l, const std::string& reason, Clock::time_point now);
  bool pump_out(Out& l, Clock::time_point now);
  bool pump_in(In& l, Clock::time_point now);
  void pump_accept(Clock::time_point now);
  bool send_frame(Connection& c, const TokenFrame& f, std::optional<std::size_t> token_bytes = {});

  std::shared_ptr<Network> network_;
  runtime::Engine& engine_;
  const graph::MappingSpec& mapping_;
  std::uint64_t hash_;
  LinkConfig config_;
  std::vector<std::unique_ptr<Out>> out_;
  std::vector<std::unique_ptr<In>> in_;
  std::vector<std::unique_ptr<Listener>> listeners_;
  std::vector<std::unique_ptr<Pending>> pending_;
  std::vector<std::string> newly_dead_;
  mutable std::mutex state_mu_;
  bool started_ = false;
};

struct AdaptationReport {
  std::string fifo;
  // dropped-replica | failover | standby-lost | port-disabled | dead-input |
  // stalled
  std::string action;
  std::vector<std::string> disabled_ports;  // "actor.port"
  std::vector<std::string> dead_actors;
  std::string activated_fifo;
  std::size_t replayed_tokens = 0;
  std::vector<int> stalled_streams;
  bool halted = false;

  std::string to_string() const;
};

// Reacts to a dead link so the rest of the node keeps running:
//  - outbound to a server with live group peers: replicate drops the replica,
//    failover moves the active port to the next live peer and replays what
//    the dead one had not consumed;
//  - outbound with nowhere left to go: the producer's stream is reported
//    stalled, and a node with no other live output and no local sink halts;
//  - inbound: the consumer port is disabled if the actor has other live data
//    inputs, otherwise the actor (and what only it feeds) is marked
//    dead-input-disabled.
AdaptationReport on_link_failure(runtime::Engine& engine, NodeTransport& transport, std::string_view fifo,
                                 const graph::MappingSpec& mapping);

// Failover starts with only the first live group member's port enabled.
void apply_initial_policy(runtime::Engine& engine, const graph::MappingSpec& mapping);

}  // namespace dflow::transport
