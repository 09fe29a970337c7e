#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "dflow/explore/explorer.hpp"
#include "dflow/graph/topology.hpp"
#include "dflow/graph/types.hpp"
#include "dflow/runtime/engine.hpp"
#include "dflow/transport/link.hpp"
#include "dflow/transport/network.hpp"

namespace dflow::harness {

// ---- fault scripts ----------------------------------------------------------

enum class FaultAction { kill, drop_link, restore_link };

std::string_view to_string(FaultAction a);

struct FaultEvent {
  std::string target;  // node id (kill) or fifo id (drop/restore)
  FaultAction action = FaultAction::kill;
  std::uint64_t at_frame = 1;

  friend bool operator==(const FaultEvent&, const FaultEvent&) = default;
};

struct FaultScript {
  std::vector<FaultEvent> events;
};

// `kill:<node>@frame=<k>` or `drop-link:<fifo>@frame=<k>,restore=<j>`
// (restore optional). Throws ParseError.
std::vector<FaultEvent> parse_fault_spec(std::string_view spec);
// Throws ConfigError on an unknown target, at_frame < 1, a restore that does
// not follow a drop of the same link, or anything scheduled on a node after
// its kill.
void validate_fault_script(const FaultScript& script, const graph::GraphSpec& g, const graph::MappingSpec& m);

// Applies faults to an in-memory fabric. Scheduled events fire on frame
// indices: a kill follows the target's own source frames (or the highest frame
// any node has reached when the target hosts no source), a link event follows
// the frames of the node producing into the link.
class FaultInjector {
 public:
  FaultInjector(const graph::GraphSpec& g, const graph::MappingSpec& m, std::shared_ptr<transport::MemFabric> fabric,
                std::shared_ptr<runtime::MetricsSink> metrics);

  // Validates and queues the script.
  void schedule(const FaultScript& script);
  // Applies one event now and returns a log line. Throws ConfigError on an
  // unknown target or a restore of a link that is not dropped.
  std::string inject(const FaultEvent& e);
  // Source gate of `node`: advances the frame clocks, applies due events and
  // returns false once the node is killed.
  bool on_source(const std::string& node, std::uint64_t frame);
  bool killed(std::string_view node) const;
  std::vector<std::string> log() const;

 private:
  std::string apply(const FaultEvent& e);
  std::string clock_node(const FaultEvent& e) const;

  const graph::GraphSpec& graph_;
  const graph::MappingSpec& mapping_;
  std::shared_ptr<transport::MemFabric> fabric_;
  std::shared_ptr<runtime::MetricsSink> metrics_;
  mutable std::mutex mu_;
  std::vector<FaultEvent> pending_;
  std::map<std::string, std::uint64_t, std::less<>> frames_;
  std::uint64_t max_frame_ = 0;
  std::set<std::string, std::less<>> killed_;
  std::set<std::string, std::less<>> dropped_;
  std::vector<std::string> log_;
};

// ---- one node -----------------------------------------------------------------

struct NodeOptions {
  std::string node_id;
  runtime::EngineConfig engine;
  transport::LinkConfig link;
  std::chrono::milliseconds max_runtime{std::chrono::minutes(10)};
  // Firings between transport pumps.
  int burst = 16;
  // Polled every loop iteration; true means the node lost power.
  std::function<bool()> killed;
  std::function<bool(std::string_view actor, std::uint64_t frame)> source_gate;
  std::function<bool(std::string_view actor)> source_ready;
};

struct NodeReport {
  std::string node;
  bool clean = false;      // finished its work and said BYE
  bool killed = false;
  bool halted = false;     // stopped because nothing downstream was left
  bool timed_out = false;
  std::string error;
  std::vector<int> stalled_streams;
  std::vector<transport::AdaptationReport> adaptations;
  std::vector<transport::LinkState> links;
  std::optional<runtime::DeadlockDiagnosis> deadlock;
};

// The actors of one mapping node, their engine and their links.
class NodeRuntime {
 public:
  // Throws ConfigError when the node is not in the mapping.
  NodeRuntime(const graph::GraphSpec& g, const graph::MappingSpec& m, const runtime::KernelRegistry& kernels,
              std::shared_ptr<transport::Network> network, std::shared_ptr<runtime::MetricsSink> metrics,
              NodeOptions options);
  ~NodeRuntime();

  // Binds listeners. Call before any peer starts dialling.
  void start();
  // Runs until done, killed, halted or out of time.
  NodeReport run();

  runtime::Engine& engine() { return *engine_; }
  transport::NodeTransport& transport() { return *transport_; }
  const std::string& node_id() const { return options_.node_id; }

 private:
  const graph::GraphSpec& graph_;
  const graph::MappingSpec& mapping_;
  NodeOptions options_;
  std::unique_ptr<runtime::Engine> engine_;
  std::unique_ptr<transport::NodeTransport> transport_;
};

// ---- virtual runs ---------------------------------------------------------------

struct RunOptions {
  std::uint64_t frames = 100;
  FaultScript faults;
  runtime::EngineConfig engine;
  transport::LinkConfig link;
  double bandwidth_bps = 0.0;  // 0: unshaped
  std::chrono::milliseconds timeout{std::chrono::minutes(5)};
  // Extra per-node hook, e.g. for lockstep measurement.
  std::function<bool(std::string_view node, std::string_view actor)> source_ready;
};

struct RunResult {
  graph::GraphSpec graph;
  graph::MappingSpec mapping;
  runtime::RunMetrics metrics;
  std::vector<NodeReport> nodes;
  std::vector<std::string> fault_log;

  const NodeReport* node(std::string_view id) const;
  // Any node that stopped with a real (not dead-link) deadlock.
  bool deadlocked() const;
  std::uint64_t completed(int stream) const;
};

// Every mapping node of one graph on its own thread over an in-memory fabric
// that uses the same framing and link logic as TCP.
class VirtualCluster {
 public:
  VirtualCluster(graph::GraphSpec g, graph::MappingSpec m, const runtime::KernelRegistry& kernels,
                 RunOptions options);
  ~VirtualCluster();

  VirtualCluster(const VirtualCluster&) = delete;
  VirtualCluster& operator=(const VirtualCluster&) = delete;

  // Binds every listener, then starts the node threads.
  void start();
  // Fault injection into the running cluster.
  std::string inject_fault(const FaultEvent& e) { return faults_->inject(e); }
  FaultInjector& faults() { return *faults_; }
  // Joins the node threads and gathers the metrics.
  RunResult wait();

 private:
  graph::GraphSpec graph_;
  graph::MappingSpec mapping_;
  RunOptions options_;
  std::shared_ptr<transport::MemFabric> fabric_;
  std::shared_ptr<runtime::MetricsSink> metrics_;
  std::unique_ptr<FaultInjector> faults_;
  std::vector<std::unique_ptr<NodeRuntime>> nodes_;
  std::vector<NodeReport> reports_;
  std::vector<std::thread> threads_;
  bool started_ = false;
  bool joined_ = false;
};

RunResult run_mapped(const graph::GraphSpec& g, const graph::MappingSpec& m, const runtime::KernelRegistry& kernels,
                     const RunOptions& options);

struct Topology {
  int servers = 1;
  int endpoints = 1;
};

// "K<m>,<n>" -> {m, n}. Throws ParseError.
Topology parse_topology(std::string_view text);

struct VirtualOptions : RunOptions {
  Topology topology;
  graph::RedundancyMode redundancy = graph::RedundancyMode::replicate;
  graph::ServerInstancing instancing = graph::ServerInstancing::per_stream;
  std::int64_t link_capacity = graph::kDefaultFifoCapacity;
};

RunResult run_virtual(const graph::GraphSpec& endpoint_template, const graph::GraphSpec& server_template,
                      const runtime::KernelRegistry& kernels, const VirtualOptions& options);

// ---- physical nodes ---------------------------------------------------------------

struct NodeRunResult {
  NodeReport report;
  runtime::RunMetrics metrics;
};

// One node of a mapping over TCP. Throws ConfigError when the node is absent.
// `interrupted` is polled like a kill (e.g. set from a signal handler).
NodeRunResult run_node(const graph::GraphSpec& g, const graph::MappingSpec& m, const std::string& node_id,
                       const runtime::KernelRegistry& kernels, const runtime::EngineConfig& engine,
                       const transport::LinkConfig& link = {},
                       std::chrono::milliseconds timeout = std::chrono::minutes(10),
                       std::function<bool()> interrupted = {});

// ---- scaling bench -------------------------------------------------------------------

struct BenchCell {
  int servers = 0;
  int endpoints = 0;
  double endpoint_ms = 0.0;  // mean per-frame period on the endpoints
  double server_ms = 0.0;    // mean per-frame period per stream on the servers
  std::uint64_t stalled = 0;
};

struct BenchTable {
  std::vector<int> servers;
  std::vector<int> endpoints;
  std::vector<BenchCell> cells;
  std::uint64_t frames = 0;

  const BenchCell& at(int m, int n) const;
  // side,servers,<n...>; endpoint rows first, then server rows.
  std::string to_csv() const;
  std::string to_text() const;
  // Server time never drops as endpoints are added.
  bool server_monotone() const;
  // Largest relative gap between the first two server counts, per cell.
  double max_server_count_gap() const;
};

struct BenchOptions {
  std::vector<int> servers{1, 2};
  std::vector<int> endpoints{1, 2, 3, 4, 5, 6};
  std::uint64_t frames = 1000;
  transport::LinkConfig link;
  std::int64_t link_capacity = graph::kDefaultFifoCapacity;
};

BenchTable bench_scaling(const graph::GraphSpec& endpoint_template, const graph::GraphSpec& server_template,
                         const runtime::KernelRegistry& kernels, const BenchOptions& options);

// "A..B" or "A" -> inclusive list. Throws ParseError.
std::vector<int> parse_range(std::string_view text);

// ---- measured exploration ---------------------------------------------------------------

// Runs a chain split at cut k over a bandwidth-shaped in-memory link, one
// frame at a time, and reports submit-to-server-arrival time per frame. An
// `input` source of model.input_bytes heads the chain and an `output` sink of
// model.output_bytes ends it, so every cut ships exactly one boundary.
class VirtualCutRunner : public explore::CutRunner {
 public:
  explicit VirtualCutRunner(runtime::WaitMode wait = runtime::WaitMode::sleep) : wait_(wait) {}
  explore::CutEvaluation run_cut(const graph::GraphSpec& chain, const explore::CostModel& model, std::size_t k,
                                 std::uint64_t frames) override;

 private:
  runtime::WaitMode wait_;
};

// The chain with the measurement source and sink attached and per-actor cost
// hints for cut k.
graph::GraphSpec measurement_graph(const graph::GraphSpec& chain, const explore::CostModel& model, std::size_t k);

// ---- reporting ------------------------------------------------------------------

// Per-stream table, liveness trace and failures.
std::string summary_text(const runtime::RunMetrics& m);
// Summary rebuilt from a metrics CSV.
runtime::RunMetrics metrics_from_csv(std::string_view csv, std::uint64_t frames_requested = 0);

}  // namespace dflow::harness
