#include "dflow/harness/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "dflow/error.hpp"
#include "dflow/graph/io.hpp"
#include "dflow/graph/validate.hpp"

namespace dflow::harness {

using runtime::Clock;
using namespace std::chrono_literals;

std::string_view to_string(FaultAction a) {
  switch (a) {
    case FaultAction::kill: return "kill";
    case FaultAction::drop_link: return "drop-link";
    case FaultAction::restore_link: return "restore-link";
  }
  return "?";
}

namespace {

std::uint64_t parse_u64(std::string_view text, std::string_view what) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError(std::string(what) + ": expected a non-negative integer, got '" + std::string(text) + "'");
  }
  return v;
}

std::string_view strip_prefix(std::string_view s, std::string_view prefix, std::string_view spec) {
  if (s.substr(0, prefix.size()) != prefix) {
    throw ParseError("fault spec '" + std::string(spec) + "': expected '" + std::string(prefix) + "'");
  }
  return s.substr(prefix.size());
}

std::set<std::string> source_actors(const graph::GraphSpec& g) {
  std::set<std::string> fed;
  for (const auto& f : g.fifos) fed.insert(f.to.actor);
  std::set<std::string> s;
  for (const auto& a : g.actors) {
    if (!fed.count(a.id)) s.insert(a.id);
  }
  return s;
}

bool hosts_source(const graph::GraphSpec& g, const graph::MappingSpec& m, const std::string& node) {
  for (const auto& a : source_actors(g)) {
    if (m.node_of(a) == node) return true;
  }
  return false;
}

bool crossing_link(const graph::GraphSpec& g, const graph::MappingSpec& m, const std::string& fifo) {
  const auto* f = g.find_fifo(fifo);
  const auto* b = m.find_link(fifo);
  return f && b && b->transport != graph::TransportKind::local &&
         m.node_of(f->from.actor) != m.node_of(f->to.actor);
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

runtime::RunMetrics gather(const runtime::MetricsSink& sink, std::uint64_t frames, const runtime::EngineConfig& cfg) {
  runtime::RunMetrics m;
  m.events = sink.events();
  m.liveness = sink.liveness();
  m.failures = sink.failures();
  m.frames_requested = frames;
  m.summary = runtime::summarize(m.events, frames);
  m.policy = cfg.fairness;
  m.wait_mode = std::string(runtime::to_string(cfg.wait_mode));
  m.notes.push_back("frames requested: " + std::to_string(frames));
  m.notes.push_back("scheduling: " + std::string(runtime::to_string(cfg.mode)) + ", seed " + std::to_string(cfg.seed));
  return m;
}

}  // namespace

// ---- fault scripts ----------------------------------------------------------

std::vector<FaultEvent> parse_fault_spec(std::string_view spec) {
  auto colon = spec.find(':');
  auto at = spec.find('@');
  if (colon == std::string_view::npos || at == std::string_view::npos || at < colon) {
    throw ParseError("fault spec '" + std::string(spec) + "': expected <action>:<target>@frame=<k>");
  }
  auto action = spec.substr(0, colon);
  std::string target(spec.substr(colon + 1, at - colon - 1));
  if (target.empty()) throw ParseError("fault spec '" + std::string(spec) + "': empty target");
  auto rest = strip_prefix(spec.substr(at + 1), "frame=", spec);

  if (action == "kill") {
    return {{target, FaultAction::kill, parse_u64(rest, "frame")}};
  }
  if (action == "drop-link") {
    auto comma = rest.find(',');
    std::vector<FaultEvent> v{{target, FaultAction::drop_link, parse_u64(rest.substr(0, comma), "frame")}};
    if (comma != std::string_view::npos) {
      auto r = strip_prefix(rest.substr(comma + 1), "restore=", spec);
      v.push_back({target, FaultAction::restore_link, parse_u64(r, "restore")});
    }
    return v;
  }
  if (action == "restore-link") {
    return {{target, FaultAction::restore_link, parse_u64(rest, "frame")}};
  }
  throw ParseError("fault spec '" + std::string(spec) + "': unknown action '" + std::string(action) + "'");
}

void validate_fault_script(const FaultScript& script, const graph::GraphSpec& g, const graph::MappingSpec& m) {
  std::map<std::string, std::uint64_t> drop_at;  // currently dropped links
  std::set<std::string> killed;
  for (const auto& e : script.events) {
    if (e.at_frame < 1) throw ConfigError("fault on '" + e.target + "': frame must be >= 1");
    switch (e.action) {
      case FaultAction::kill:
        if (!m.find_node(e.target)) throw ConfigError("unknown fault target node '" + e.target + "'");
        if (!killed.insert(e.target).second) throw ConfigError("node '" + e.target + "' is killed twice");
        break;
      case FaultAction::drop_link:
        if (!crossing_link(g, m, e.target)) throw ConfigError("unknown fault target link '" + e.target + "'");
        if (drop_at.count(e.target)) throw ConfigError("link '" + e.target + "' is dropped twice");
        drop_at[e.target] = e.at_frame;
        break;
      case FaultAction::restore_link: {
        if (!crossing_link(g, m, e.target)) throw ConfigError("unknown fault target link '" + e.target + "'");
        auto it = drop_at.find(e.target);
        if (it == drop_at.end()) throw ConfigError("restore without prior drop on link '" + e.target + "'");
        if (e.at_frame <= it->second) {
          throw ConfigError("restore of link '" + e.target + "' must come after its drop at frame " +
                            std::to_string(it->second));
        }
        drop_at.erase(it);
        break;
      }
    }
  }
}

FaultInjector::FaultInjector(const graph::GraphSpec& g, const graph::MappingSpec& m,
                             std::shared_ptr<transport::MemFabric> fabric, std::shared_ptr<runtime::MetricsSink> metrics)
    : graph_(g), mapping_(m), fabric_(std::move(fabric)), metrics_(std::move(metrics)) {}

void FaultInjector::schedule(const FaultScript& script) {
  validate_fault_script(script, graph_, mapping_);
  std::lock_guard lock(mu_);
  pending_.insert(pending_.end(), script.events.begin(), script.events.end());
}

std::string FaultInjector::clock_node(const FaultEvent& e) const {
  std::string node = e.target;
  if (e.action != FaultAction::kill) node = mapping_.node_of(graph_.find_fifo(e.target)->from.actor);
  return hosts_source(graph_, mapping_, node) ? node : std::string();
}

std::string FaultInjector::apply(const FaultEvent& e) {
  std::string node = e.target;
  std::string msg;
  switch (e.action) {
    case FaultAction::kill:
      if (!mapping_.find_node(e.target)) throw ConfigError("unknown fault target node '" + e.target + "'");
      if (killed_.count(e.target)) throw ConfigError("node '" + e.target + "' is already killed");
      fabric_->kill_node(e.target);
      killed_.insert(e.target);
      msg = "kill " + e.target;
      break;
    case FaultAction::drop_link:
    case FaultAction::restore_link: {
      if (!crossing_link(graph_, mapping_, e.target)) {
        throw ConfigError("unknown fault target link '" + e.target + "'");
      }
      bool drop = e.action == FaultAction::drop_link;
      if (!drop && !dropped_.count(e.target)) {
        throw ConfigError("restore without prior drop on link '" + e.target + "'");
      }
      fabric_->set_dropped(mapping_.find_link(e.target)->address, drop);
      if (drop) dropped_.insert(e.target);
      else dropped_.erase(e.target);
      node = mapping_.node_of(graph_.find_fifo(e.target)->from.actor);
      msg = std::string(drop ? "drop-link " : "restore-link ") + e.target;
      break;
    }
  }
  auto cn = clock_node(e);
  std::uint64_t clock = cn.empty() ? max_frame_ : frames_[cn];
  msg += " at frame " + std::to_string(clock);
  log_.push_back(msg);
  if (metrics_) metrics_->record_failure({node, "", "fault: " + msg, metrics_->now_us()});
  return msg;
}

std::string FaultInjector::inject(const FaultEvent& e) {
  std::lock_guard lock(mu_);
  return apply(e);
}

bool FaultInjector::on_source(const std::string& node, std::uint64_t frame) {
  std::lock_guard lock(mu_);
  auto& f = frames_[node];
  f = std::max(f, frame);
  max_frame_ = std::max(max_frame_, frame);
  for (auto it = pending_.begin(); it != pending_.end();) {
    auto cn = clock_node(*it);
    std::uint64_t clock = cn.empty() ? max_frame_ : frames_[cn];
    if (clock >= it->at_frame) {
      apply(*it);
      it = pending_.erase(it);
    } else {
      ++it;
    }
  }
  return !killed_.count(node);
}

bool FaultInjector::killed(std::string_view node) const {
  std::lock_guard lock(mu_);
  return killed_.count(node) > 0;
}

std::vector<std::string> FaultInjector::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

// ---- one node -----------------------------------------------------------------

NodeRuntime::NodeRuntime(const graph::GraphSpec& g, const graph::MappingSpec& m, const runtime::KernelRegistry& kernels,
                         std::shared_ptr<transport::Network> network, std::shared_ptr<runtime::MetricsSink> metrics,
                         NodeOptions options)
    : graph_(g), mapping_(m), options_(std::move(options)) {
  const auto& id = options_.node_id;
  if (!m.find_node(id)) throw ConfigError("node '" + id + "' is not in the mapping");
  runtime::EngineHooks hooks;
  hooks.node_id = id;
  for (const auto& a : m.assignments) {
    if (a.node == id) hooks.local_actors.insert(a.actor);
  }
  if (hooks.local_actors.empty()) throw ConfigError("node '" + id + "' hosts no actors");
  hooks.metrics = std::move(metrics);
  hooks.source_gate = options_.source_gate;
  hooks.source_ready = options_.source_ready;
  engine_ = std::make_unique<runtime::Engine>(g, kernels, options_.engine, std::move(hooks));
  transport::apply_initial_policy(*engine_, m);
  transport_ = std::make_unique<transport::NodeTransport>(std::move(network), *engine_, m, graph::graph_hash(g),
                                                          options_.link);
}

NodeRuntime::~NodeRuntime() = default;

void NodeRuntime::start() { transport_->start(); }

NodeReport NodeRuntime::run() {
  NodeReport r;
  r.node = options_.node_id;
  auto& e = *engine_;
  auto& t = *transport_;
  auto killed = [&] { return options_.killed && options_.killed(); };
  auto handle_dead = [&] {
    for (const auto& fifo : t.take_newly_dead()) {
      auto a = transport::on_link_failure(e, t, fifo, mapping_);
      r.stalled_streams.insert(r.stalled_streams.end(), a.stalled_streams.begin(), a.stalled_streams.end());
      r.adaptations.push_back(std::move(a));
    }
  };
  // No pump after BYE: the peer may already be closing, which is not a fault.
  auto finish = [&] { t.send_bye(); };
  const auto deadline = Clock::now() + options_.max_runtime;
  try {
    t.start();
    while (true) {
      if (killed()) {
        r.killed = true;
        break;
      }
      bool moved = t.pump();
      handle_dead();
      int fired = 0;
      while (fired < options_.burst && !killed() && !e.halted()) {
        if (e.step().quiescent()) break;
        ++fired;
      }
      moved |= t.pump();
      handle_dead();
      if (killed()) continue;
      if (e.halted()) {
        r.halted = true;
        finish();
        break;
      }
      if (e.sources_exhausted() && !e.has_pending_work() && t.outbound_settled() && t.inbound_settled()) {
        finish();
        r.clean = true;
        break;
      }
      auto now = Clock::now();
      if (now >= deadline) {
        r.timed_out = true;
        r.deadlock = e.detect_deadlock();
        break;
      }
      if (fired == 0 && !moved) t.wait_until(std::min({t.next_deadline(), now + 50ms, deadline}));
    }
  } catch (const std::exception& ex) {
    r.error = ex.what();
  }
  std::sort(r.stalled_streams.begin(), r.stalled_streams.end());
  r.stalled_streams.erase(std::unique(r.stalled_streams.begin(), r.stalled_streams.end()), r.stalled_streams.end());
  r.links = t.states();
  // A killed node vanishes without closing anything.
  if (!r.killed) t.shutdown();
  return r;
}

// ---- virtual runs ---------------------------------------------------------------

const NodeReport* RunResult::node(std::string_view id) const {
  for (const auto& n : nodes) {
    if (n.node == id) return &n;
  }
  return nullptr;
}

bool RunResult::deadlocked() const {
  return std::any_of(nodes.begin(), nodes.end(), [](const NodeReport& n) { return n.deadlock && n.deadlock->is_deadlock(); });
}

std::uint64_t RunResult::completed(int stream) const {
  const auto* s = metrics.stream(stream);
  return s ? s->frames_completed : 0;
}

VirtualCluster::VirtualCluster(graph::GraphSpec g, graph::MappingSpec m, const runtime::KernelRegistry& kernels,
                               RunOptions options)
    : graph_(std::move(g)), mapping_(std::move(m)), options_(std::move(options)) {
  auto report = graph::validate_mapping(graph_, mapping_);
  if (!report.ok()) throw ConfigError(report.to_string());
  fabric_ = transport::MemFabric::create(options_.bandwidth_bps);
  metrics_ = std::make_shared<runtime::MetricsSink>();
  faults_ = std::make_unique<FaultInjector>(graph_, mapping_, fabric_, metrics_);
  faults_->schedule(options_.faults);

  for (const auto& node : mapping_.nodes) {
    bool hosts = std::any_of(mapping_.assignments.begin(), mapping_.assignments.end(),
                             [&](const graph::Assignment& a) { return a.node == node.id; });
    if (!hosts) continue;
    NodeOptions o;
    o.node_id = node.id;
    o.engine = options_.engine;
    o.engine.frame_budget = options_.frames;
    o.link = options_.link;
    o.max_runtime = options_.timeout;
    FaultInjector* inj = faults_.get();
    std::string id = node.id;
    o.killed = [inj, id] { return inj->killed(id); };
    o.source_gate = [inj, id](std::string_view, std::uint64_t frame) { return inj->on_source(id, frame); };
    if (options_.source_ready) {
      o.source_ready = [f = options_.source_ready, id](std::string_view actor) { return f(id, actor); };
    }
    nodes_.push_back(
        std::make_unique<NodeRuntime>(graph_, mapping_, kernels, fabric_->node(node.id), metrics_, std::move(o)));
  }
}

VirtualCluster::~VirtualCluster() {
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
}

void VirtualCluster::start() {
  if (started_) throw Error("cluster already started");
  started_ = true;
  for (auto& n : nodes_) n->start();
  reports_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    threads_.emplace_back([this, i] { reports_[i] = nodes_[i]->run(); });
  }
}

RunResult VirtualCluster::wait() {
  if (!started_) start();
  if (joined_) throw Error("cluster already joined");
  for (auto& t : threads_) t.join();
  threads_.clear();
  joined_ = true;
  RunResult r;
  r.graph = graph_;
  r.mapping = mapping_;
  r.nodes = reports_;
  r.fault_log = faults_->log();
  r.metrics = gather(*metrics_, options_.frames, options_.engine);
  r.metrics.notes.push_back("redundancy: " + std::string(graph::to_string(mapping_.redundancy.mode)));
  for (const auto& line : r.fault_log) r.metrics.notes.push_back("fault: " + line);
  return r;
}

RunResult run_mapped(const graph::GraphSpec& g, const graph::MappingSpec& m, const runtime::KernelRegistry& kernels,
                     const RunOptions& options) {
  VirtualCluster c(g, m, kernels, options);
  c.start();
  return c.wait();
}

Topology parse_topology(std::string_view text) {
  auto bad = [&] { return ParseError("topology '" + std::string(text) + "': expected K<m>,<n>"); };
  if (text.size() < 4 || (text[0] != 'K' && text[0] != 'k')) throw bad();
  auto comma = text.find(',');
  if (comma == std::string_view::npos) throw bad();
  Topology t;
  try {
    t.servers = static_cast<int>(parse_u64(text.substr(1, comma - 1), "m"));
    t.endpoints = static_cast<int>(parse_u64(text.substr(comma + 1), "n"));
  } catch (const ParseError&) {
    throw bad();
  }
  if (t.servers < 1 || t.endpoints < 1) throw ParseError("topology '" + std::string(text) + "': m and n must be >= 1");
  return t;
}

RunResult run_virtual(const graph::GraphSpec& endpoint_template, const graph::GraphSpec& server_template,
                      const runtime::KernelRegistry& kernels, const VirtualOptions& options) {
  graph::BipartiteOptions b;
  b.servers = options.topology.servers;
  b.endpoints = options.topology.endpoints;
  b.redundancy = options.redundancy;
  b.instancing = options.instancing;
  b.transport = graph::TransportKind::mem;
  b.link_capacity = options.link_capacity;
  auto [g, m] = graph::build_complete_bipartite(endpoint_template, server_template, b);
  auto report = graph::validate_graph(g);
  if (!report.ok()) throw GraphError(report.to_string());
  return run_mapped(g, m, kernels, options);
}

// ---- physical nodes ---------------------------------------------------------------

NodeRunResult run_node(const graph::GraphSpec& g, const graph::MappingSpec& m, const std::string& node_id,
                       const runtime::KernelRegistry& kernels, const runtime::EngineConfig& engine,
                       const transport::LinkConfig& link, std::chrono::milliseconds timeout,
                       std::function<bool()> interrupted) {
  if (!m.find_node(node_id)) throw ConfigError("node '" + node_id + "' is not in the mapping");
  auto metrics = std::make_shared<runtime::MetricsSink>();
  NodeOptions o;
  o.node_id = node_id;
  o.engine = engine;
  o.link = link;
  o.max_runtime = timeout;
  o.killed = std::move(interrupted);
  NodeRuntime node(g, m, kernels, std::make_shared<transport::TcpNetwork>(), metrics, std::move(o));
  node.start();
  NodeRunResult r;
  r.report = node.run();
  r.metrics = gather(*metrics, engine.frame_budget.value_or(0), engine);
  r.metrics.notes.push_back("node: " + node_id);
  return r;
}

// ---- scaling bench -------------------------------------------------------------------

const BenchCell& BenchTable::at(int m, int n) const {
  for (const auto& c : cells) {
    if (c.servers == m && c.endpoints == n) return c;
  }
  throw Error("no bench cell for m=" + std::to_string(m) + ", n=" + std::to_string(n));
}

std::string BenchTable::to_csv() const {
  std::string out = "side,servers";
  for (int n : endpoints) out += "," + std::to_string(n);
  out += "\n";
  for (const char* side : {"endpoint", "server"}) {
    for (int m : servers) {
      out += std::string(side) + "," + std::to_string(m);
      for (int n : endpoints) {
        const auto& c = at(m, n);
        out += "," + fixed(std::string_view(side) == "endpoint" ? c.endpoint_ms : c.server_ms, 3);
      }
      out += "\n";
    }
  }
  return out;
}

std::string BenchTable::to_text() const {
  std::ostringstream os;
  os << "per-frame time in ms over " << frames << " frames\n";
  os << std::setw(10) << "side" << std::setw(4) << "m";
  for (int n : endpoints) os << std::setw(9) << ("n=" + std::to_string(n));
  os << "\n";
  for (const char* side : {"endpoint", "server"}) {
    for (int m : servers) {
      os << std::setw(10) << side << std::setw(4) << m;
      for (int n : endpoints) {
        const auto& c = at(m, n);
        os << std::setw(9) << fixed(std::string_view(side) == "endpoint" ? c.endpoint_ms : c.server_ms, 3);
      }
      os << "\n";
    }
  }
  os << "server time monotone in n: " << (server_monotone() ? "yes" : "no") << "\n";
  if (servers.size() >= 2) os << "largest server-count gap: " << fixed(100 * max_server_count_gap(), 1) << "%\n";
  return os.str();
}

bool BenchTable::server_monotone() const {
  for (int m : servers) {
    for (std::size_t i = 1; i < endpoints.size(); ++i) {
      if (at(m, endpoints[i]).server_ms < at(m, endpoints[i - 1]).server_ms) return false;
    }
  }
  return true;
}

double BenchTable::max_server_count_gap() const {
  if (servers.size() < 2) return 0.0;
  double gap = 0.0;
  for (int n : endpoints) {
    double a = at(servers[0], n).server_ms;
    double b = at(servers[1], n).server_ms;
    if (a > 0) gap = std::max(gap, std::fabs(b - a) / a);
  }
  return gap;
}

BenchTable bench_scaling(const graph::GraphSpec& endpoint_template, const graph::GraphSpec& server_template,
                         const runtime::KernelRegistry& kernels, const BenchOptions& options) {
  if (options.servers.empty() || options.endpoints.empty()) throw ConfigError("bench ranges must be non-empty");
  BenchTable table;
  table.servers = options.servers;
  table.endpoints = options.endpoints;
  table.frames = options.frames;
  for (int m : options.servers) {
    for (int n : options.endpoints) {
      VirtualOptions v;
      v.topology = {m, n};
      v.frames = options.frames;
      v.engine.mode = runtime::SchedulingMode::deterministic_sequential;
      v.engine.wait_mode = runtime::WaitMode::sleep;
      v.link = options.link;
      v.link_capacity = options.link_capacity;
      auto r = run_virtual(endpoint_template, server_template, kernels, v);
      for (const auto& node : r.nodes) {
        if (!node.error.empty()) throw Error("bench K" + std::to_string(m) + "," + std::to_string(n) + ": " + node.error);
      }
      BenchCell c;
      c.servers = m;
      c.endpoints = n;
      for (int i = 1; i <= n; ++i) {
        c.endpoint_ms += runtime::node_frame_period_ms(r.metrics.events, graph::endpoint_node_id(i), i) / n;
      }
      for (int j = 1; j <= m; ++j) {
        for (int i = 1; i <= n; ++i) {
          c.server_ms += runtime::node_frame_period_ms(r.metrics.events, graph::server_node_id(j), i) / (m * n);
        }
      }
      for (const auto& s : r.metrics.summary) c.stalled += s.frames_stalled + (s.frames_requested - s.frames_submitted);
      table.cells.push_back(c);
    }
  }
  return table;
}

std::vector<int> parse_range(std::string_view text) {
  auto dots = text.find("..");
  auto lo = parse_u64(text.substr(0, dots), "range");
  auto hi = dots == std::string_view::npos ? lo : parse_u64(text.substr(dots + 2), "range");
  if (lo < 1 || hi < lo || hi > 1024) throw ParseError("range '" + std::string(text) + "': expected A..B with 1 <= A <= B");
  std::vector<int> v;
  for (auto i = lo; i <= hi; ++i) v.push_back(static_cast<int>(i));
  return v;
}

// ---- measured exploration ---------------------------------------------------------------

namespace {

constexpr std::string_view kInputActor = "input";
constexpr std::string_view kOutputActor = "output";

std::int64_t token_size(std::uint64_t bytes) {
  return std::max<std::int64_t>(static_cast<std::int64_t>(bytes), runtime::kFrameTagBytes);
}

std::string measure_fifo(std::size_t i) { return "x" + std::to_string(i); }

// Timestamps shared between the measurement kernels and the source throttle.
struct CutProbe {
  std::mutex mu;
  std::map<std::uint64_t, Clock::time_point> submitted;
  std::map<std::uint64_t, Clock::time_point> arrived;

  bool ready() {
    std::lock_guard lock(mu);
    return arrived.size() >= submitted.size();
  }
};

}  // namespace

graph::GraphSpec measurement_graph(const graph::GraphSpec& chain, const explore::CostModel& model, std::size_t k) {
  auto order = graph::chain_order(chain);
  const std::size_t n = order.size();
  if (k > n) throw Error("cut " + std::to_string(k) + " outside 0.." + std::to_string(n));
  auto b = explore::boundary_bytes(chain, model);

  auto port = [](const char* id, graph::PortDirection d, std::int64_t bytes) {
    graph::PortSpec p;
    p.id = id;
    p.direction = d;
    p.rate = 1;
    p.token_bytes = bytes;
    return p;
  };
  auto kernel = [&](std::size_t position, double cost_us) {
    graph::KernelRef r;
    r.name = position == k ? "cut_arrival" : "synthetic_cost";
    r.params = {{"cost_us", std::llround(cost_us)}};
    return r;
  };

  graph::GraphSpec g;
  g.name = chain.name + "@cut" + std::to_string(k);
  graph::ActorSpec in;
  in.id = std::string(kInputActor);
  in.kernel.name = "cut_input";
  in.ports = {port("out", graph::PortDirection::out, token_size(b[0]))};
  g.actors.push_back(in);
  for (std::size_t i = 0; i < n; ++i) {
    graph::ActorSpec a;
    a.id = order[i];
    const auto& cls = i < k ? model.endpoint_class : model.server_class;
    a.kernel = kernel(i, model.compute_us(order[i], cls));
    a.ports = {port("in", graph::PortDirection::in, token_size(b[i])),
               port("out", graph::PortDirection::out, token_size(b[i + 1]))};
    g.actors.push_back(a);
  }
  graph::ActorSpec out;
  out.id = std::string(kOutputActor);
  out.kernel = kernel(n, 0);
  out.ports = {port("in", graph::PortDirection::in, token_size(b[n]))};
  g.actors.push_back(out);

  for (std::size_t i = 0; i <= n; ++i) {
    graph::FifoSpec f;
    f.id = measure_fifo(i);
    f.from = {g.actors[i].id, "out"};
    f.to = {g.actors[i + 1].id, "in"};
    f.capacity = 2;
    f.token_bytes = token_size(b[i]);
    g.fifos.push_back(f);
  }
  return g;
}

explore::CutEvaluation VirtualCutRunner::run_cut(const graph::GraphSpec& chain, const explore::CostModel& model,
                                                 std::size_t k, std::uint64_t frames) {
  if (frames == 0) throw Error("empty measurement");
  auto g = measurement_graph(chain, model, k);
  const std::string ep = "endpoint";
  const std::string srv = "server";
  graph::MappingSpec m;
  m.nodes = {{ep, graph::NodeRole::endpoint, model.endpoint_class}, {srv, graph::NodeRole::server, model.server_class}};
  // Actor j of the measurement graph is input (j = 0), chain actor j - 1, or output.
  for (std::size_t j = 0; j < g.actors.size(); ++j) {
    m.assignments.push_back({g.actors[j].id, j <= k ? ep : srv, "core0"});
  }
  for (std::size_t i = 0; i < g.fifos.size(); ++i) {
    const auto& f = g.fifos[i];
    if (i == k) m.links.push_back({f.id, graph::TransportKind::mem, "mem://" + srv + "/" + f.id});
    else m.links.push_back({f.id, graph::TransportKind::local, ""});
  }

  auto probe = std::make_shared<CutProbe>();
  auto kernels = runtime::KernelRegistry::with_builtins();
  const auto* cost = kernels.find("synthetic_cost");
  auto base = cost->behavior;
  // The frame is raw input: a zero payload, timed from its submission.
  kernels.register_kernel("cut_input", [probe](runtime::KernelContext& ctx) {
    std::lock_guard lock(probe->mu);
    probe->submitted[ctx.frame()] = Clock::now();
  });
  kernels.register_kernel("cut_arrival", [probe, base](runtime::KernelContext& ctx) {
    {
      std::lock_guard lock(probe->mu);
      probe->arrived.emplace(ctx.frame(), Clock::now());
    }
    base(ctx);
  });

  RunOptions o;
  o.frames = frames;
  o.bandwidth_bps = model.bandwidth_bps;
  o.engine.mode = runtime::SchedulingMode::deterministic_sequential;
  o.engine.wait_mode = wait_;
  o.source_ready = [probe](std::string_view, std::string_view actor) {
    return actor != kInputActor || probe->ready();
  };
  auto r = run_mapped(g, m, kernels, o);
  for (const auto& node : r.nodes) {
    if (!node.error.empty()) throw Error("cut " + std::to_string(k) + ": " + node.error);
    if (!node.clean) throw Error("cut " + std::to_string(k) + ": node '" + node.node + "' did not finish");
  }

  // Per frame: endpoint busy time and submit-to-arrival time.
  std::map<std::uint64_t, double> busy_ep, busy_srv;
  std::map<std::pair<std::string, std::uint64_t>, std::int64_t> started;
  for (const auto& e : r.metrics.events) {
    auto key = std::make_pair(e.actor, e.frame);
    if (e.event == runtime::FrameEventKind::fire_start) started[key] = e.t_us;
    if (e.event == runtime::FrameEventKind::fire_end && started.count(key)) {
      double us = static_cast<double>(e.t_us - started[key]);
      if (e.actor != kInputActor) (e.node == ep ? busy_ep : busy_srv)[e.frame] += us;
    }
  }
  std::uint64_t first = frames >= 2 ? 2 : 1;  // frame 1 warms up the link
  explore::CutEvaluation out;
  out.cut = k;
  out.measured = true;
  out.mapping = explore::cut_mapping(chain, k);
  out.boundary_bytes = explore::boundary_bytes(chain, model)[k];
  std::uint64_t counted = 0;
  for (std::uint64_t f = first; f <= frames; ++f) {
    auto s = probe->submitted.find(f);
    auto a = probe->arrived.find(f);
    if (s == probe->submitted.end() || a == probe->arrived.end()) throw Error("frame " + std::to_string(f) + " was lost");
    out.total_us += std::chrono::duration<double, std::micro>(a->second - s->second).count();
    out.endpoint_us += busy_ep[f];
    out.server_us += busy_srv[f];
    ++counted;
  }
  out.total_us /= static_cast<double>(counted);
  out.endpoint_us /= static_cast<double>(counted);
  out.server_us /= static_cast<double>(counted);
  out.comm_us = std::max(0.0, out.total_us - out.endpoint_us);
  return out;
}

// ---- reporting ------------------------------------------------------------------

std::string summary_text(const runtime::RunMetrics& m) {
  std::ostringstream os;
  os << std::setw(7) << "stream" << std::setw(11) << "requested" << std::setw(11) << "submitted" << std::setw(11)
     << "completed" << std::setw(9) << "stalled" << std::setw(10) << "mean_ms" << std::setw(10) << "p95_ms" << "\n";
  for (const auto& s : m.summary) {
    os << std::setw(7) << s.stream << std::setw(11) << s.frames_requested << std::setw(11) << s.frames_submitted
       << std::setw(11) << s.frames_completed << std::setw(9) << s.frames_stalled << std::setw(10) << fixed(s.mean_ms, 3)
       << std::setw(10) << fixed(s.p95_ms, 3) << "\n";
  }
  if (!m.liveness.empty()) {
    os << "links:\n";
    for (const auto& l : m.liveness) {
      os << "  " << std::setw(10) << fixed(l.t_us / 1000.0, 1) << " ms  " << l.node << "  " << l.link << "  " << l.from
         << " -> " << l.to << "\n";
    }
  }
  if (!m.failures.empty()) {
    os << "failures:\n";
    for (const auto& f : m.failures) {
      os << "  " << std::setw(10) << fixed(f.t_us / 1000.0, 1) << " ms  " << f.node;
      if (!f.actor.empty()) os << "  " << f.actor;
      os << "  " << f.message << "\n";
    }
  }
  for (const auto& n : m.notes) os << "# " << n << "\n";
  return os.str();
}

runtime::RunMetrics metrics_from_csv(std::string_view csv, std::uint64_t frames_requested) {
  runtime::RunMetrics m;
  m.events = runtime::parse_csv(csv);
  m.frames_requested = frames_requested;
  m.summary = runtime::summarize(m.events, frames_requested);
  return m;
}

}  // namespace dflow::harness
