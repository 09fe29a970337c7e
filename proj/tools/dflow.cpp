// dflow: validate graphs, run nodes, explore partition points, benchmark.

#include <atomic>
#include <csignal>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "dflow/error.hpp"
#include "dflow/explore/explorer.hpp"
#include "dflow/graph/io.hpp"
#include "dflow/graph/topology.hpp"
#include "dflow/graph/validate.hpp"
#include "dflow/harness/harness.hpp"

using namespace dflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;  // invalid input, stalled streams under --strict, node failure
constexpr int kExitError = 2;   // configuration or usage error

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

struct EngineFlags {
  std::string config;
  bool deterministic = false;
  std::optional<std::uint64_t> seed;
  std::string wait = "sleep";

  void add(CLI::App* app) {
    app->add_option("--config", config, "engine config file (key = value lines)")->check(CLI::ExistingFile);
    app->add_flag("--deterministic", deterministic, "fire one actor at a time in topological order");
    app->add_option("--seed", seed, "seed passed to kernels");
    app->add_option("--wait", wait, "how synthetic kernels spend their cost")->check(CLI::IsMember({"sleep", "busy"}));
  }

  runtime::EngineConfig build() const {
    runtime::EngineConfig c;
    c.mode = runtime::SchedulingMode::concurrent;
    if (!config.empty()) c = runtime::parse_engine_config(graph::read_text_file(config));
    if (deterministic) c.mode = runtime::SchedulingMode::deterministic_sequential;
    if (seed) c.seed = *seed;
    c.wait_mode = wait == "busy" ? runtime::WaitMode::busy : runtime::WaitMode::sleep;
    return c;
  }
};

graph::RedundancyMode redundancy_of(const std::string& s) {
  auto r = graph::parse_redundancy(s);
  if (!r) throw ConfigError("unknown redundancy mode '" + s + "'");
  return *r;
}

void write_metrics(const std::string& path, const runtime::RunMetrics& m) {
  if (path.empty()) return;
  graph::write_text_file(path, runtime::to_csv(m.events));
}

bool any_stalled(const runtime::RunMetrics& m) {
  for (const auto& s : m.summary) {
    if (s.frames_stalled > 0 || s.frames_submitted < s.frames_requested) return true;
  }
  return false;
}

void print_nodes(const std::vector<harness::NodeReport>& nodes) {
  for (const auto& n : nodes) {
    std::cout << "node " << n.node << ": "
              << (n.killed ? "killed" : n.clean ? "clean" : n.halted ? "halted" : n.timed_out ? "timed out" : "failed");
    if (!n.error.empty()) std::cout << " (" << n.error << ")";
    std::cout << "\n";
    for (const auto& a : n.adaptations) std::cout << "  adaptation: " << a.to_string() << "\n";
    if (!n.stalled_streams.empty()) {
      std::cout << "  stalled streams:";
      for (int s : n.stalled_streams) std::cout << " " << s;
      std::cout << "\n";
    }
    if (n.deadlock && n.deadlock->is_deadlock()) std::cout << n.deadlock->to_string();
  }
}

int cmd_validate(const std::string& graph_path, const std::string& mapping_path) {
  auto g = graph::load_graph(graph_path);
  auto report = graph::validate_graph(g);
  auto stats = graph::graph_stats(g);
  std::cout << g.name << ": " << stats.actor_count << " actors, " << stats.fifo_count << " fifos, "
            << g.control_tables.size() << " control tables\n";
  if (!mapping_path.empty()) {
    auto m = graph::load_mapping(mapping_path);
    auto mr = graph::validate_mapping(g, m);
    report.violations.insert(report.violations.end(), mr.violations.begin(), mr.violations.end());
  }
  if (report.ok()) {
    std::cout << "valid\n";
    return kExitOk;
  }
  std::cout << report.to_string();
  return kExitFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dataflow runtime for split endpoint/server inference"};
  app.require_subcommand(1);

  // validate
  auto* validate = app.add_subcommand("validate", "check a graph (and optionally a mapping)");
  std::string v_graph, v_mapping;
  validate->add_option("graph", v_graph, "graph file")->required()->check(CLI::ExistingFile);
  validate->add_option("--mapping", v_mapping, "mapping file")->check(CLI::ExistingFile);

  // run-node
  auto* run_node = app.add_subcommand("run-node", "run one node of a mapping over TCP");
  std::string n_graph, n_mapping, n_node, n_metrics;
  std::uint64_t n_frames = 1000;
  double n_timeout_s = 600;
  bool n_strict = false;
  EngineFlags n_engine;
  run_node->add_option("--graph", n_graph, "graph file")->required()->check(CLI::ExistingFile);
  run_node->add_option("--mapping", n_mapping, "mapping file")->required()->check(CLI::ExistingFile);
  run_node->add_option("--node", n_node, "node id from the mapping")->required();
  run_node->add_option("--frames", n_frames, "frames per source")->capture_default_str();
  run_node->add_option("--timeout", n_timeout_s, "give up after this many seconds")->capture_default_str();
  run_node->add_option("--metrics-out", n_metrics, "write the metrics CSV here");
  run_node->add_flag("--strict", n_strict, "exit nonzero when any stream stalls");
  n_engine.add(run_node);

  // run-virtual
  auto* run_virtual = app.add_subcommand("run-virtual", "run a K<m>,<n> topology in one process");
  std::string r_topology, r_ep, r_srv, r_redundancy = "replicate", r_instancing = "per-stream", r_metrics;
  std::vector<std::string> r_faults;
  std::uint64_t r_frames = 1000;
  std::int64_t r_capacity = graph::kDefaultFifoCapacity;
  double r_bandwidth = 0;
  bool r_strict = false;
  EngineFlags r_engine;
  run_virtual->add_option("--topology", r_topology, "K<m>,<n>: m servers, n endpoints")->required();
  run_virtual->add_option("--endpoint-template", r_ep, "endpoint graph")->required()->check(CLI::ExistingFile);
  run_virtual->add_option("--server-template", r_srv, "server graph")->required()->check(CLI::ExistingFile);
  run_virtual->add_option("--frames", r_frames, "frames per endpoint")->capture_default_str();
  run_virtual->add_option("--redundancy", r_redundancy, "replicate or failover")
      ->check(CLI::IsMember({"replicate", "failover"}))
      ->capture_default_str();
  run_virtual->add_option("--instancing", r_instancing, "server instances")
      ->check(CLI::IsMember({"per-stream", "shared"}))
      ->capture_default_str();
  run_virtual->add_option("--fault", r_faults, "kill:<node>@frame=<k> | drop-link:<fifo>@frame=<k>,restore=<j>");
  run_virtual->add_option("--link-capacity", r_capacity, "capacity of endpoint-server FIFOs")->capture_default_str();
  run_virtual->add_option("--bandwidth", r_bandwidth, "shape every link to this many bit/s (0: unshaped)");
  run_virtual->add_option("--metrics-out", r_metrics, "write the metrics CSV here");
  run_virtual->add_flag("--strict", r_strict, "exit nonzero when any stream stalls");
  r_engine.add(run_virtual);

  // explore
  auto* explore = app.add_subcommand("explore", "rank the partition points of a chain");
  std::string e_graph, e_costs, e_csv;
  bool e_measure = false;
  std::uint64_t e_frames = 10;
  explore->add_option("--graph", e_graph, "chain graph")->required()->check(CLI::ExistingFile);
  explore->add_option("--costs", e_costs, "cost model")->required()->check(CLI::ExistingFile);
  explore->add_flag("--measure", e_measure, "run every cut in the virtual harness instead of estimating");
  explore->add_option("--frames", e_frames, "frames per measured cut")->capture_default_str();
  explore->add_option("--csv-out", e_csv, "write the cut table as CSV here");

  // bench
  auto* bench = app.add_subcommand("bench", "per-frame time over a grid of K<m>,<n> topologies");
  std::string b_m = "1..2", b_n = "1..6", b_ep, b_srv, b_csv;
  std::uint64_t b_frames = 1000;
  bench->add_option("--m-range", b_m, "servers, A..B")->capture_default_str();
  bench->add_option("--n-range", b_n, "endpoints, A..B")->capture_default_str();
  bench->add_option("--frames", b_frames, "frames per cell")->capture_default_str();
  bench->add_option("--endpoint-template", b_ep, "endpoint graph")->required()->check(CLI::ExistingFile);
  bench->add_option("--server-template", b_srv, "server graph")->required()->check(CLI::ExistingFile);
  bench->add_option("--csv-out", b_csv, "write the table as CSV here");

  // build-topology
  auto* build = app.add_subcommand("build-topology", "write the graph and mapping of a K<m>,<n> topology");
  std::string t_topology, t_ep, t_srv, t_graph_out, t_mapping_out, t_transport = "tcp", t_host = "127.0.0.1",
                                                                   t_redundancy = "replicate";
  int t_port = 7400;
  std::int64_t t_capacity = graph::kDefaultFifoCapacity;
  build->add_option("--topology", t_topology, "K<m>,<n>")->required();
  build->add_option("--endpoint-template", t_ep, "endpoint graph")->required()->check(CLI::ExistingFile);
  build->add_option("--server-template", t_srv, "server graph")->required()->check(CLI::ExistingFile);
  build->add_option("--graph-out", t_graph_out, "output graph file")->required();
  build->add_option("--mapping-out", t_mapping_out, "output mapping file")->required();
  build->add_option("--transport", t_transport, "tcp or mem")->check(CLI::IsMember({"tcp", "mem"}))->capture_default_str();
  build->add_option("--host", t_host, "server host")->capture_default_str();
  build->add_option("--base-port", t_port, "server j listens on base + j - 1")->capture_default_str();
  build->add_option("--redundancy", t_redundancy, "replicate or failover")
      ->check(CLI::IsMember({"replicate", "failover"}))
      ->capture_default_str();
  build->add_option("--link-capacity", t_capacity, "capacity of endpoint-server FIFOs")->capture_default_str();

  // summarize
  auto* summarize = app.add_subcommand("summarize", "summary of a metrics CSV");
  std::string s_metrics;
  std::uint64_t s_frames = 0;
  summarize->add_option("metrics", s_metrics, "metrics CSV")->required()->check(CLI::ExistingFile);
  summarize->add_option("--frames", s_frames, "frames requested per stream (default: submitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) return cmd_validate(v_graph, v_mapping);

    if (run_node->parsed()) {
      auto g = graph::load_graph(n_graph);
      auto m = graph::load_mapping(n_mapping);
      auto config = n_engine.build();
      config.frame_budget = n_frames;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      auto r = harness::run_node(g, m, n_node, runtime::KernelRegistry::with_builtins(), config, {},
                                 std::chrono::milliseconds(static_cast<std::int64_t>(n_timeout_s * 1000)),
                                 [] { return g_interrupted.load(); });
      write_metrics(n_metrics, r.metrics);
      std::cout << harness::summary_text(r.metrics);
      print_nodes({r.report});
      for (const auto& l : r.report.links) {
        std::cout << "  link " << l.fifo << " (" << (l.outbound ? "to " : "from ") << l.peer
                  << "): " << transport::to_string(l.status);
        if (!l.last_error.empty()) std::cout << ", last error: " << l.last_error;
        std::cout << "\n";
      }
      if (!r.report.error.empty() || r.report.timed_out) return kExitFailed;
      if (n_strict && (!r.report.stalled_streams.empty() || any_stalled(r.metrics))) return kExitFailed;
      return kExitOk;
    }

    if (run_virtual->parsed()) {
      harness::VirtualOptions o;
      o.topology = harness::parse_topology(r_topology);
      o.frames = r_frames;
      o.engine = r_engine.build();
      o.redundancy = redundancy_of(r_redundancy);
      o.instancing = r_instancing == "shared" ? graph::ServerInstancing::shared : graph::ServerInstancing::per_stream;
      o.link_capacity = r_capacity;
      o.bandwidth_bps = r_bandwidth;
      for (const auto& f : r_faults) {
        auto events = harness::parse_fault_spec(f);
        o.faults.events.insert(o.faults.events.end(), events.begin(), events.end());
      }
      auto r = harness::run_virtual(graph::load_graph(r_ep), graph::load_graph(r_srv),
                                    runtime::KernelRegistry::with_builtins(), o);
      write_metrics(r_metrics, r.metrics);
      std::cout << harness::summary_text(r.metrics);
      print_nodes(r.nodes);
      bool failed = std::any_of(r.nodes.begin(), r.nodes.end(),
                                [](const harness::NodeReport& n) { return !n.error.empty() || n.timed_out; });
      if (failed || r.deadlocked()) return kExitFailed;
      if (r_strict && any_stalled(r.metrics)) return kExitFailed;
      return kExitOk;
    }

    if (explore->parsed()) {
      auto g = graph::load_graph(e_graph);
      auto costs = explore::load_cost_model(e_costs);
      explore::Exploration e;
      if (e_measure) {
        harness::VirtualCutRunner runner;
        e = explore::explore_measured(runner, g, costs, e_frames);
      } else {
        e = explore::explore(g, costs);
      }
      std::cout << explore::to_text(e);
      if (!e_csv.empty()) graph::write_text_file(e_csv, explore::to_csv(e));
      return kExitOk;
    }

    if (bench->parsed()) {
      harness::BenchOptions o;
      o.servers = harness::parse_range(b_m);
      o.endpoints = harness::parse_range(b_n);
      o.frames = b_frames;
      auto t = harness::bench_scaling(graph::load_graph(b_ep), graph::load_graph(b_srv),
                                      runtime::KernelRegistry::with_builtins(), o);
      std::cout << t.to_text();
      if (!b_csv.empty()) graph::write_text_file(b_csv, t.to_csv());
      return kExitOk;
    }

    if (build->parsed()) {
      auto topo = harness::parse_topology(t_topology);
      graph::BipartiteOptions b;
      b.servers = topo.servers;
      b.endpoints = topo.endpoints;
      b.redundancy = redundancy_of(t_redundancy);
      b.transport = t_transport == "tcp" ? graph::TransportKind::tcp : graph::TransportKind::mem;
      b.tcp_host = t_host;
      b.tcp_base_port = t_port;
      b.link_capacity = t_capacity;
      auto [g, m] = graph::build_complete_bipartite(graph::load_graph(t_ep), graph::load_graph(t_srv), b);
      graph::write_text_file(t_graph_out, graph::serialize_graph(g));
      graph::write_text_file(t_mapping_out, graph::serialize_mapping(m));
      std::cout << "wrote " << g.actors.size() << " actors, " << g.fifos.size() << " fifos, " << m.nodes.size()
                << " nodes\n";
      return kExitOk;
    }

    if (summarize->parsed()) {
      auto m = harness::metrics_from_csv(graph::read_text_file(s_metrics), s_frames);
      std::cout << harness::summary_text(m);
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitError;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailed;
  }
  return kExitOk;
}
