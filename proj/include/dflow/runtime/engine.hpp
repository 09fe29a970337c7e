#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dflow/error.hpp"
#include "dflow/graph/types.hpp"
#include "dflow/runtime/kernel.hpp"
#include "dflow/runtime/metrics.hpp"
#include "dflow/runtime/token_buffer.hpp"

namespace dflow::runtime {

enum class SchedulingMode { deterministic_sequential, concurrent };

std::string_view to_string(SchedulingMode m);

struct EngineConfig {
  SchedulingMode mode = SchedulingMode::deterministic_sequential;
  std::uint64_t seed = 0;
  std::string fairness = "topological-first";
  // Firings allowed per source actor; unset means unbounded.
  std::optional<std::uint64_t> frame_budget;
  WaitMode wait_mode = WaitMode::sleep;
  // Keep every payload consumed by sink actors (for tests).
  bool record_sink_payloads = false;
};

// Text config: one `key = value` per line, `#` comments. Keys: mode
// (deterministic|concurrent), seed, fairness, frames, wait (sleep|busy).
EngineConfig parse_engine_config(std::string_view text);

enum class ActorStatus { idle, enabled, firing, dead_input_disabled, failed };

std::string_view to_string(ActorStatus s);

struct ActorState {
  std::string actor_id;
  std::map<std::string, std::int64_t> rates;  // current rate per port id
  std::uint64_t fire_count = 0;
  ActorStatus status = ActorStatus::idle;
};

struct FiringRecord {
  std::string actor;
  std::map<std::string, std::int64_t> consumed;  // tokens per input port
  std::map<std::string, std::int64_t> produced;  // tokens per output port
  bool kernel_invoked = false;
  std::uint64_t frame = 0;
  std::chrono::microseconds elapsed{0};
  std::optional<std::string> error;
};

struct ProgressReport {
  std::vector<std::string> fired;
  bool quiescent() const { return fired.empty(); }
};

struct BlockedPort {
  std::string port;
  std::string fifo;
  enum class Need { input_tokens, output_space, control_token } need = Need::input_tokens;
  std::int64_t required = 0;
  std::int64_t available = 0;
  bool link_dead = false;
};

struct BlockedActor {
  std::string actor;
  std::vector<BlockedPort> waits;
  // True when the actor is blocked only because an upstream link died.
  bool dead_link = false;
};

struct BufferCensus {
  std::string fifo;
  std::size_t occupancy = 0;
  std::size_t capacity = 0;
};

struct DeadlockDiagnosis {
  std::vector<BlockedActor> blocked;
  std::vector<BufferCensus> census;

  // Whether any actor is blocked for a reason other than a dead link.
  bool is_deadlock() const;
  const BlockedActor* find(std::string_view actor) const;
  std::string to_string() const;
};

class DeadlockError : public Error {
 public:
  DeadlockError(DeadlockDiagnosis diagnosis, RunMetrics partial);
  const DeadlockDiagnosis& diagnosis() const { return diagnosis_; }
  const RunMetrics& partial_metrics() const { return partial_; }

 private:
  DeadlockDiagnosis diagnosis_;
  RunMetrics partial_;
};

struct EngineHooks {
  std::string node_id = "local";
  // Actors executed by this engine; empty means all actors of the graph.
  std::set<std::string> local_actors;
  std::shared_ptr<MetricsSink> metrics;
  // Consulted before every source firing with the 1-based frame about to be
  // submitted. Returning false halts the engine (the node was killed).
  std::function<bool(std::string_view actor, std::uint64_t frame)> source_gate;
  // Optional throttle: a source is enabled only while this returns true.
  std::function<bool(std::string_view actor)> source_ready;
};

// Executes the local part of a validated graph.
//
// FIFOs whose producer and consumer are both local are ordinary buffers. A
// FIFO with only one local end is a boundary buffer: the transport is its
// remote producer (inbound) or remote consumer (outbound).
class Engine {
 public:
  Engine(const graph::GraphSpec& graph, const KernelRegistry& kernels, EngineConfig config = {},
         EngineHooks hooks = {});
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  const graph::GraphSpec& graph() const { return graph_; }
  const EngineConfig& config() const { return config_; }
  const std::string& node_id() const { return hooks_.node_id; }
  MetricsSink& metrics() { return *hooks_.metrics; }
  std::shared_ptr<MetricsSink> metrics_ptr() const { return hooks_.metrics; }

  std::vector<std::string> actors() const;  // local actors in schedule order
  bool is_local(std::string_view actor) const;
  bool enabled(std::string_view actor) const;
  // Fires one enabled actor. Throws Error if it is not enabled.
  FiringRecord fire(std::string_view actor);
  ProgressReport step();

  const ActorState& state(std::string_view actor) const;
  TokenBuffer& buffer(std::string_view fifo);
  const TokenBuffer& buffer(std::string_view fifo) const;
  bool has_buffer(std::string_view fifo) const;
  std::vector<std::string> inbound_boundary() const;
  std::vector<std::string> outbound_boundary() const;

  void set_frame_budget(std::optional<std::uint64_t> frames) { config_.frame_budget = frames; }
  // Frames submitted so far by the local source actor (0 if not a source).
  std::uint64_t frames_submitted(std::string_view actor) const;
  bool sources_exhausted() const;
  bool halted() const { return halted_; }
  void halt() { halted_ = true; }

  // Failure adaptation.
  void disable_port(std::string_view actor, std::string_view port);
  void enable_port(std::string_view actor, std::string_view port);
  bool port_disabled(std::string_view actor, std::string_view port) const;
  void mark_link_dead(std::string_view fifo);
  bool link_dead(std::string_view fifo) const;
  // Marks the actor dead-input-disabled, then every local actor whose data
  // inputs all come from disabled actors or dead links.
  std::vector<std::string> mark_dead_input(std::string_view actor);
  // Stops an actor (and everything only it feeds) from firing again.
  void retire_actor(std::string_view actor);

  // Quiescent with unfinished work: returns who is blocked on what.
  std::optional<DeadlockDiagnosis> detect_deadlock() const;
  // Frames or tokens still pending locally.
  bool has_pending_work() const;

  const std::vector<std::vector<std::byte>>& sink_payloads(std::string_view actor) const;
  int stream_of(std::string_view actor) const;

 private:
  struct PortRt;
  struct ActorRt;

  ActorRt& actor_rt(std::string_view id);
  const ActorRt& actor_rt(std::string_view id) const;
  bool enabled_impl(const ActorRt& a) const;
  std::vector<std::int64_t> effective_rates(const ActorRt& a, bool for_space) const;
  FiringRecord fire_impl(ActorRt& a);

  graph::GraphSpec graph_;
  EngineConfig config_;
  EngineHooks hooks_;
  std::vector<std::unique_ptr<ActorRt>> actors_;  // schedule order
  std::map<std::string, std::size_t, std::less<>> actor_index_;
  std::map<std::string, std::unique_ptr<TokenBuffer>, std::less<>> buffers_;
  std::set<std::string, std::less<>> dead_links_;
  std::vector<std::string> inbound_;
  std::vector<std::string> outbound_;
  bool halted_ = false;
};

// Runs until every source has submitted `frames` frames and the engine is
// quiescent. Throws DeadlockError when the engine stops with work pending.
RunMetrics run_until(Engine& engine, std::uint64_t frames);

}  // namespace dflow::runtime
