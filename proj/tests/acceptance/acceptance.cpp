// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run every criterion
//   acceptance 3 7        run the listed criteria
//
// Exit status is 0 only when every selected criterion passes.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dflow/error.hpp"
#include "dflow/explore/explorer.hpp"
#include "dflow/graph/io.hpp"
#include "dflow/graph/validate.hpp"
#include "dflow/harness/harness.hpp"
#include "dflow/runtime/engine.hpp"
#include "dflow/transport/frame.hpp"
#include "support/cut_oracle.hpp"
#include "support/graph_gen.hpp"

extern char** environ;

namespace {

namespace graph = dflow::graph;
namespace runtime = dflow::runtime;
namespace transport = dflow::transport;
namespace harness = dflow::harness;
namespace gen = dflow::testing;

using Seconds = std::chrono::duration<double>;
using SteadyClock = std::chrono::steady_clock;

std::string data(const std::string& name) { return std::string(DFLOW_DATA_DIR) + "/" + name; }

const runtime::KernelRegistry& builtins() {
  static const runtime::KernelRegistry r = runtime::KernelRegistry::with_builtins();
  return r;
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects the first few violations and counts the rest.
class Violations {
 public:
  void add(const std::string& what) {
    if (count_++ < 5) first_ << (count_ > 1 ? "; " : "") << what;
  }
  std::size_t count() const { return count_; }
  std::string text() const { return first_.str(); }

 private:
  std::size_t count_ = 0;
  std::ostringstream first_;
};

std::string fmt(double v, int digits = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::vector<std::uint64_t> one_to(std::uint64_t n) {
  std::vector<std::uint64_t> v(n);
  std::iota(v.begin(), v.end(), 1);
  return v;
}

// ---- 1 ------------------------------------------------------------------------

Outcome explorer_oracle() {
  gen::Rng rng(20240601);
  std::vector<gen::RandomChain> chains;
  chains.reserve(1000);
  for (int i = 0; i < 1000; ++i) chains.push_back(gen::random_chain(rng));

  auto start = SteadyClock::now();
  Violations bad;
  for (std::size_t i = 0; i < chains.size(); ++i) {
    auto e = dflow::explore::explore(chains[i].graph, chains[i].model);
    auto want = gen::oracle_best(gen::oracle_totals(chains[i]));
    if (e.best != want) bad.add("model " + std::to_string(i) + ": " + std::to_string(e.best) + " vs " + std::to_string(want));
  }
  double took = Seconds(SteadyClock::now() - start).count();
  Outcome o;
  o.pass = bad.count() == 0 && took < 5.0;
  o.detail = std::to_string(1000 - bad.count()) + "/1000 match, " + fmt(took, 3) + " s";
  if (bad.count()) o.detail += " [" + bad.text() + "]";
  return o;
}

// ---- 2 ------------------------------------------------------------------------

Outcome estimate_vs_measure() {
  auto chain = graph::load_graph(data("chain5.json"));
  auto costs = dflow::explore::load_cost_model(data("chain5_costs.json"));
  auto start = SteadyClock::now();
  auto est = dflow::explore::explore(chain, costs);
  harness::VirtualCutRunner runner;
  auto meas = dflow::explore::explore_measured(runner, chain, costs, 10);
  double took = Seconds(SteadyClock::now() - start).count();

  Outcome o;
  std::ostringstream os;
  double worst = 0.0;
  for (std::size_t k = 0; k < est.table.size(); ++k) {
    double e = est.table[k].total_us;
    double m = meas.table.at(k).total_us;
    double rel = e > 0 ? std::fabs(m - e) / e : 0.0;
    worst = std::max(worst, rel);
    os << (k ? " " : "") << fmt(m / 1000.0) << "/" << fmt(e / 1000.0);
  }
  o.pass = meas.best == est.best && worst < 0.15 && took < 60.0;
  o.detail = "argmin " + std::to_string(meas.best) + " vs " + std::to_string(est.best) + ", worst error " +
             fmt(100 * worst, 1) + "%, ms measured/estimated " + os.str() + ", " + fmt(took, 1) + " s";
  return o;
}

// ---- 3 ------------------------------------------------------------------------

Outcome scaling_shape() {
  auto ep = graph::load_graph(data("vehicle_endpoint.json"));
  auto srv = graph::load_graph(data("vehicle_server.json"));
  harness::BenchOptions opt;
  auto start = SteadyClock::now();
  auto table = harness::bench_scaling(ep, srv, builtins(), opt);
  double took = Seconds(SteadyClock::now() - start).count();

  std::uint64_t stalled = 0;
  for (const auto& c : table.cells) stalled += c.stalled;
  bool monotone = table.server_monotone();
  double gap = table.max_server_count_gap();
  std::ostringstream rows;
  for (int m : table.servers) {
    rows << " m=" << m << ":";
    for (int n : table.endpoints) rows << " " << fmt(table.at(m, n).server_ms);
  }
  Outcome o;
  o.pass = monotone && gap < 0.10 && stalled == 0 && took < 300.0;
  o.detail = std::string("monotone ") + (monotone ? "yes" : "no") + ", max gap " + fmt(100 * gap, 1) +
             "%, server ms" + rows.str() + ", stalled " + std::to_string(stalled) + ", " + fmt(took, 1) + " s";
  return o;
}

// ---- 4-6 ----------------------------------------------------------------------

struct Vehicle {
  graph::GraphSpec ep = graph::load_graph(data("vehicle_endpoint.json"));
  graph::GraphSpec srv = graph::load_graph(data("vehicle_server.json"));

  harness::RunResult run(int m, int n, const std::string& fault,
                         graph::RedundancyMode redundancy = graph::RedundancyMode::replicate,
                         std::int64_t link_capacity = graph::kDefaultFifoCapacity) const {
    harness::VirtualOptions o;
    o.topology = {m, n};
    o.frames = 100;
    o.redundancy = redundancy;
    o.link_capacity = link_capacity;
    o.timeout = std::chrono::seconds(60);
    for (const auto& e : harness::parse_fault_spec(fault)) o.faults.events.push_back(e);
    return harness::run_virtual(ep, srv, builtins(), o);
  }
};

Outcome server_kill() {
  Vehicle v;
  auto start = SteadyClock::now();
  auto r = v.run(2, 4, "kill:srv2@frame=50");
  double took = Seconds(SteadyClock::now() - start).count();
  Outcome o;
  std::ostringstream os;
  for (int i = 1; i <= 4; ++i) {
    os << (i > 1 ? " " : "") << r.completed(i);
    if (r.completed(i) != 100) o.pass = false;
  }
  bool deadlock = false;
  for (const auto& n : r.nodes) deadlock |= n.deadlock.has_value();
  if (deadlock || took >= 60.0) o.pass = false;
  o.detail = "completed " + os.str() + ", deadlock diagnosis " + (deadlock ? "yes" : "no") + ", " + fmt(took, 1) + " s";
  return o;
}

Outcome endpoint_kill() {
  Vehicle v;
  Outcome o;
  auto start = SteadyClock::now();
  auto a = v.run(1, 2, "kill:ep1@frame=30");
  double ta = Seconds(SteadyClock::now() - start).count();
  start = SteadyClock::now();
  auto b = v.run(2, 1, "kill:srv1@frame=30");
  double tb = Seconds(SteadyClock::now() - start).count();
  o.pass = a.completed(2) == 100 && a.completed(1) <= 30 && ta < 60.0 && b.completed(1) == 100 && tb < 60.0;
  o.detail = "K1,2 kill ep1: surviving " + std::to_string(a.completed(2)) + ", dead " + std::to_string(a.completed(1)) +
             " (" + fmt(ta, 1) + " s); K2,1 kill srv1: " + std::to_string(b.completed(1)) + " (" + fmt(tb, 1) + " s)";
  return o;
}

Outcome transient_break() {
  Vehicle v;
  auto start = SteadyClock::now();
  auto r = v.run(1, 1, "drop-link:ep1_to_srv1@frame=20,restore=40", graph::RedundancyMode::replicate, 32);
  double took = Seconds(SteadyClock::now() - start).count();

  // Every frame the server finished, in arrival order, duplicates included.
  std::vector<std::uint64_t> received;
  for (const auto& e : r.metrics.events) {
    if (e.event == runtime::FrameEventKind::complete && e.stream == 1) received.push_back(e.frame);
  }
  bool exact = received == one_to(100);
  bool recovered = false;
  for (const auto& l : r.metrics.liveness) recovered |= l.link == "ep1_to_srv1" && l.from == "degraded" && l.to == "alive";
  Outcome o;
  o.pass = r.completed(1) == 100 && exact;
  o.detail = "completed " + std::to_string(r.completed(1)) + ", received " + std::to_string(received.size()) +
             " frames " + (exact ? "1..100 gap-free, no duplicates" : "with gaps, duplicates or reordering") +
             ", link " + (recovered ? "recovered" : "never recovered") + ", " + fmt(took, 1) + " s";
  return o;
}

// ---- 7 ------------------------------------------------------------------------

struct SmallCase {
  std::string name;
  graph::GraphSpec graph;
  std::uint64_t frames = 3;
};

std::vector<std::string> sinks(const graph::GraphSpec& g) {
  std::vector<std::string> out;
  for (const auto& a : g.actors) {
    bool has_out = false, has_in = false;
    for (const auto& p : a.ports) {
      has_out |= p.direction == graph::PortDirection::out || p.direction == graph::PortDirection::control_out;
      has_in |= p.direction == graph::PortDirection::in;
    }
    if (has_in && !has_out) out.push_back(a.id);
  }
  return out;
}

using SinkLog = std::map<std::string, std::vector<std::vector<std::byte>>>;

SinkLog sink_log(const runtime::Engine& e, const std::vector<std::string>& names) {
  SinkLog log;
  for (const auto& s : names) log[s] = e.sink_payloads(s);
  return log;
}

runtime::EngineConfig small_config(runtime::SchedulingMode mode, std::uint64_t frames) {
  runtime::EngineConfig c;
  c.mode = mode;
  c.seed = 7;
  c.frame_budget = frames;
  c.record_sink_payloads = true;
  return c;
}

std::vector<SmallCase> small_cases() {
  std::vector<SmallCase> cases;
  for (int n = 2; n <= 4; ++n) {
    auto g = gen::chain_graph(n, 2, "affine");
    for (int i = 0; i < n; ++i) g.actors[static_cast<std::size_t>(i)].kernel.params = {{"mul", 2 * i + 1}, {"add", i}};
    cases.push_back({"chain" + std::to_string(n), g, 3});
  }
  {
    // a0 -1-> (2) a1 (3) -> (1) a2: multi-rate chain.
    auto g = gen::chain_graph(3, 4, "affine");
    g.actors[1].ports[0].rate = 2;
    g.actors[1].ports[1].rate = 3;
    g.actors[1].kernel.params = {{"mul", 5}, {"add", 3}};
    g.fifos[0].capacity = 3;
    g.fifos[1].capacity = 4;
    cases.push_back({"chain3-multirate", g, 4});
  }
  cases.push_back({"diamond", gen::diamond_graph("affine", 2), 3});
  cases.push_back({"diamond-cap1", gen::diamond_graph("affine", 1), 3});
  cases.push_back({"dpg", graph::load_graph(data("switch_dpg.json")), 3});
  {
    auto g = graph::load_graph(data("switch_dpg.json"));
    g.actors[0].kernel.params["sequence"] = {0, 1, 1};
    for (auto& f : g.fifos) f.capacity = 1;
    cases.push_back({"dpg-cap1", g, 3});
  }
  return cases;
}

// Depth-first over every firing order. Each tree node rebuilds the engine by
// replaying its prefix.
void enumerate_orders(const SmallCase& c, const std::vector<std::string>& names, const SinkLog& reference,
                      std::vector<std::string>& prefix, std::size_t& orders, Violations& bad) {
  runtime::Engine e(c.graph, builtins(),
                    small_config(runtime::SchedulingMode::deterministic_sequential, c.frames));
  for (const auto& a : prefix) e.fire(a);
  std::vector<std::string> ready;
  for (const auto& a : e.actors()) {
    if (e.enabled(a)) ready.push_back(a);
  }
  if (ready.empty()) {
    ++orders;
    if (sink_log(e, names) != reference) {
      std::string path;
      for (const auto& a : prefix) path += (path.empty() ? "" : ",") + a;
      bad.add(c.name + " order " + path);
    }
    return;
  }
  for (const auto& a : ready) {
    prefix.push_back(a);
    enumerate_orders(c, names, reference, prefix, orders, bad);
    prefix.pop_back();
  }
}

Outcome determinism() {
  Violations bad;
  std::size_t orders = 0, concurrent_runs = 0;
  auto cases = small_cases();
  for (const auto& c : cases) {
    graph::validate_graph(c.graph);
    auto names = sinks(c.graph);

    runtime::Engine ref(c.graph, builtins(), small_config(runtime::SchedulingMode::deterministic_sequential, c.frames));
    runtime::run_until(ref, c.frames);
    auto reference = sink_log(ref, names);
    for (const auto& [sink, payloads] : reference) {
      if (payloads.empty()) bad.add(c.name + ": sink " + sink + " saw nothing");
    }
    std::vector<std::string> prefix;
    enumerate_orders(c, names, reference, prefix, orders, bad);

    // The threaded scheduler on a longer run.
    const std::uint64_t long_frames = 16;
    runtime::Engine long_ref(c.graph, builtins(),
                             small_config(runtime::SchedulingMode::deterministic_sequential, long_frames));
    runtime::run_until(long_ref, long_frames);
    auto long_reference = sink_log(long_ref, names);
    for (int run = 0; run < 25; ++run) {
      runtime::Engine e(c.graph, builtins(), small_config(runtime::SchedulingMode::concurrent, long_frames));
      runtime::run_until(e, long_frames);
      ++concurrent_runs;
      if (sink_log(e, names) != long_reference) bad.add(c.name + " concurrent run " + std::to_string(run));
    }
  }
  Outcome o;
  o.pass = bad.count() == 0;
  o.detail = std::to_string(cases.size()) + " graphs, " + std::to_string(orders) + " firing orders and " +
             std::to_string(concurrent_runs) + " concurrent runs, " + std::to_string(bad.count()) + " mismatches";
  if (bad.count()) o.detail += " [" + bad.text() + "]";
  return o;
}

// ---- 8 ------------------------------------------------------------------------

std::int64_t decode_index(std::span<const std::byte> token) {
  std::uint64_t v = 0;
  for (auto b : token) v = (v << 8) | std::to_integer<std::uint8_t>(b);
  return static_cast<std::int64_t>(v);
}

std::vector<std::byte> token_copy(std::span<const std::byte> t) { return {t.begin(), t.end()}; }

// Rates a control table assigns to `actor`'s ports under setting `index`.
std::map<std::string, std::int64_t> controlled_rates(const graph::GraphSpec& g, const std::string& actor,
                                                     std::int64_t index) {
  std::map<std::string, std::int64_t> out;
  for (const auto& t : g.control_tables) {
    const auto* s = t.find_setting(index);
    if (!s) continue;
    for (std::size_t i = 0; i < t.controlled.size(); ++i) {
      if (t.controlled[i].actor == actor) out[t.controlled[i].port] = s->rates[i];
    }
  }
  return out;
}

struct FifoShadow {
  const graph::FifoSpec* spec = nullptr;
  std::deque<std::vector<std::byte>> tokens;
  std::uint64_t produced = 0;
  std::uint64_t consumed = 0;
};

// Fires random enabled actors and checks every FIFO after each firing.
void check_random_graph(const graph::GraphSpec& g, gen::Rng& rng, std::uint64_t firings, std::uint64_t& fired,
                        std::uint64_t& control_checked, Violations& bad) {
  runtime::EngineConfig cfg;
  cfg.seed = rng();
  runtime::Engine e(g, builtins(), cfg);
  std::map<std::string, FifoShadow> shadow;
  std::map<std::string, graph::PortDirection> direction;  // "actor.port"
  std::map<std::string, std::string> ctrl_in;             // actor -> control fifo
  std::map<std::string, std::vector<std::string>> ctrl_out;
  for (const auto& a : g.actors) {
    for (const auto& p : a.ports) direction[a.id + "." + p.id] = p.direction;
  }
  for (const auto& f : g.fifos) {
    shadow[f.id].spec = &f;
    if (direction[f.to.actor + "." + f.to.port] == graph::PortDirection::control_in) ctrl_in[f.to.actor] = f.id;
    if (direction[f.from.actor + "." + f.from.port] == graph::PortDirection::control_out) {
      ctrl_out[f.from.actor].push_back(f.id);
    }
  }
  auto where = [&](const std::string& what) { return g.name + " firing " + std::to_string(fired) + ": " + what; };

  const auto actors = e.actors();
  for (std::uint64_t step = 0; step < firings; ++step) {
    std::vector<std::string> ready;
    for (const auto& a : actors) {
      if (e.enabled(a)) ready.push_back(a);
    }
    if (ready.empty()) {
      bad.add(where("quiescent with unbounded sources"));
      return;
    }
    const std::string actor =
        ready[static_cast<std::size_t>(gen::uniform(rng, 0, static_cast<std::int64_t>(ready.size()) - 1))];

    // Setting carried by the control token this firing will consume.
    std::optional<std::int64_t> setting;
    if (auto it = ctrl_in.find(actor); it != ctrl_in.end()) setting = decode_index(e.buffer(it->second).peek(0));

    auto rec = e.fire(actor);
    ++fired;
    if (rec.error) {
      bad.add(where(actor + " failed: " + *rec.error));
      return;
    }

    for (auto& [id, s] : shadow) {
      auto& buf = e.buffer(id);
      if (s.spec->to.actor == actor) {
        auto it = rec.consumed.find(s.spec->to.port);
        std::int64_t n = it == rec.consumed.end() ? 0 : it->second;
        if (static_cast<std::size_t>(n) > s.tokens.size()) {
          bad.add(where(id + " consumed more than it held"));
          return;
        }
        for (std::int64_t k = 0; k < n; ++k) s.tokens.pop_front();
        s.consumed += static_cast<std::uint64_t>(n);
      }
      if (s.spec->from.actor == actor) {
        auto it = rec.produced.find(s.spec->from.port);
        std::int64_t n = it == rec.produced.end() ? 0 : it->second;
        std::size_t occ = buf.occupancy();
        if (static_cast<std::size_t>(n) > occ) {
          bad.add(where(id + " produced tokens it does not hold"));
          return;
        }
        for (std::size_t k = occ - static_cast<std::size_t>(n); k < occ; ++k) s.tokens.push_back(token_copy(buf.peek(k)));
        s.produced += static_cast<std::uint64_t>(n);
      }
      // Conservation and occupancy.
      if (buf.produced_total() != s.produced || buf.consumed_total() != s.consumed) {
        bad.add(where(id + " counters " + std::to_string(buf.produced_total()) + "/" +
                      std::to_string(buf.consumed_total()) + " vs firings " + std::to_string(s.produced) + "/" +
                      std::to_string(s.consumed)));
      }
      if (buf.occupancy() != buf.produced_total() - buf.consumed_total()) bad.add(where(id + " occupancy drift"));
      if (buf.occupancy() > buf.capacity() || buf.capacity() != static_cast<std::size_t>(s.spec->capacity)) {
        bad.add(where(id + " occupancy " + std::to_string(buf.occupancy()) + " over capacity"));
      }
      // Ordering: the buffer holds exactly the shadow queue, oldest first.
      if (s.tokens.size() != buf.occupancy()) {
        bad.add(where(id + " holds " + std::to_string(buf.occupancy()) + " tokens, expected " +
                      std::to_string(s.tokens.size())));
      } else {
        for (std::size_t k = 0; k < s.tokens.size(); ++k) {
          auto t = buf.peek(k);
          if (!std::equal(t.begin(), t.end(), s.tokens[k].begin(), s.tokens[k].end())) {
            bad.add(where(id + " token " + std::to_string(k) + " out of order"));
            break;
          }
        }
      }
    }

    // A controller sends the same setting down every control fifo.
    if (auto it = ctrl_out.find(actor); it != ctrl_out.end() && rec.produced.size()) {
      std::optional<std::int64_t> sent;
      for (const auto& id : it->second) {
        auto& tokens = shadow[id].tokens;
        if (tokens.empty()) continue;
        auto idx = decode_index(tokens.back());
        if (sent && *sent != idx) bad.add(where(actor + " sent different settings on its control fifos"));
        sent = idx;
      }
      if (!setting) setting = sent;
    }

    // Control alignment: controlled ports move exactly the tokens the setting
    // assigns, zero for a no-op firing.
    if (setting) {
      ++control_checked;
      if (auto it = ctrl_in.find(actor); it != ctrl_in.end()) {
        auto c = rec.consumed.find(shadow[it->second].spec->to.port);
        if (c == rec.consumed.end() || c->second != 1) bad.add(where(actor + " did not consume one control token"));
      }
      for (const auto& [port, rate] : controlled_rates(g, actor, *setting)) {
        bool in = direction[actor + "." + port] == graph::PortDirection::in;
        const auto& moved = in ? rec.consumed : rec.produced;
        auto it = moved.find(port);
        std::int64_t n = it == moved.end() ? 0 : it->second;
        if (n != rate) {
          bad.add(where(actor + "." + port + " moved " + std::to_string(n) + " tokens under setting " +
                        std::to_string(*setting) + ", table says " + std::to_string(rate)));
        }
      }
    }
  }
}

Outcome conservation() {
  gen::Rng rng(99);
  Violations bad;
  std::uint64_t fired = 0, control_checked = 0;
  int graphs = 0, dpgs = 0;
  for (; graphs < 40; ++graphs) {
    gen::GenOptions opt;
    opt.max_actors = static_cast<int>(gen::uniform(rng, 2, 20));
    opt.balanced = true;
    auto g = gen::random_graph(rng, opt);
    g.name = "graph" + std::to_string(graphs);
    graph::validate_graph(g);
    dpgs += g.control_tables.empty() ? 0 : 1;
    check_random_graph(g, rng, 10'000, fired, control_checked, bad);
  }
  Outcome o;
  o.pass = bad.count() == 0 && dpgs > 0;
  o.detail = std::to_string(graphs) + " graphs (" + std::to_string(dpgs) + " with control), " + std::to_string(fired) +
             " firings (" + std::to_string(control_checked) + " under control), " + std::to_string(bad.count()) +
             " violations";
  if (bad.count()) o.detail += " [" + bad.text() + "]";
  return o;
}

// ---- 9 ------------------------------------------------------------------------

transport::TokenFrame random_frame(gen::Rng& rng) {
  transport::TokenFrame f;
  f.type = static_cast<transport::FrameType>(gen::uniform(rng, 1, 6));
  f.fifo_id = static_cast<std::uint32_t>(rng());
  f.sequence = rng();
  if (f.type == transport::FrameType::data) {
    f.token_count = static_cast<std::uint16_t>(gen::uniform(rng, 0, 12));
    f.payload.resize(static_cast<std::size_t>(f.token_count * gen::uniform(rng, 1, 64)));
  } else {
    f.payload.resize(static_cast<std::size_t>(gen::uniform(rng, 0, 24)));
  }
  for (auto& b : f.payload) b = static_cast<std::byte>(rng());
  return f;
}

Outcome codec_robustness() {
  using transport::decode_frame;
  using transport::encode_frame;
  gen::Rng rng(31337);
  Violations bad;
  const int n = 100'000;

  int roundtrips = 0;
  for (int i = 0; i < n; ++i) {
    auto f = random_frame(rng);
    auto bytes = encode_frame(f);
    auto r = decode_frame(bytes);
    if (r.ok() && r.consumed == bytes.size() && *r.frame == f) ++roundtrips;
    else bad.add("roundtrip " + std::to_string(i));
  }

  int mutated_ok = 0, checksum_rejected = 0;
  for (int i = 0; i < n; ++i) {
    auto f = random_frame(rng);
    const auto good = encode_frame(f);
    auto b = good;
    int edits = static_cast<int>(gen::uniform(rng, 1, 4));
    for (int k = 0; k < edits && !b.empty(); ++k) {
      auto at = static_cast<std::size_t>(gen::uniform(rng, 0, static_cast<std::int64_t>(b.size()) - 1));
      switch (gen::uniform(rng, 0, 3)) {
        case 0: b[at] = static_cast<std::byte>(rng()); break;
        case 1: b[at] ^= static_cast<std::byte>(1u << gen::uniform(rng, 0, 7)); break;
        case 2: b.resize(at); break;
        default: b.insert(b.begin() + static_cast<std::ptrdiff_t>(at), static_cast<std::byte>(rng()));
      }
    }
    auto r = decode_frame(b);  // must not crash or throw
    if (r.ok()) {
      auto again = encode_frame(*r.frame);
      if (!std::equal(again.begin(), again.end(), b.begin(), b.begin() + static_cast<std::ptrdiff_t>(r.consumed))) {
        bad.add("mutation " + std::to_string(i) + " decoded to a different frame");
      }
    } else {
      ++mutated_ok;
    }

    // Same-length corruption under a stale checksum.
    auto c = good;
    auto body = c.size() - transport::kTrailerBytes;
    auto at = static_cast<std::size_t>(gen::uniform(rng, 0, static_cast<std::int64_t>(c.size()) - 1));
    std::byte flip{static_cast<std::uint8_t>(gen::uniform(rng, 1, 255))};
    c[at] ^= flip;
    auto rc = decode_frame(c);
    if (rc.ok()) bad.add("corruption at byte " + std::to_string(at) + " of " + std::to_string(body) + " accepted");
    else ++checksum_rejected;
  }
  Outcome o;
  o.pass = bad.count() == 0;
  o.detail = std::to_string(roundtrips) + "/" + std::to_string(n) + " exact roundtrips, " + std::to_string(n) +
             " mutated inputs (" + std::to_string(mutated_ok) + " rejected, none crashed), " +
             std::to_string(checksum_rejected) + "/" + std::to_string(n) + " corrupted frames rejected";
  if (bad.count()) o.detail += " [" + bad.text() + "]";
  return o;
}

// ---- 10 -----------------------------------------------------------------------

int free_port() {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw dflow::Error("socket failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  socklen_t len = sizeof addr;
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
    ::close(fd);
    throw dflow::Error("cannot pick a free port");
  }
  int port = ntohs(addr.sin_port);
  ::close(fd);
  return port;
}

pid_t spawn(const std::vector<std::string>& args, const std::string& log) {
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, 1, log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_adddup2(&fa, 1, 2);
  pid_t pid = -1;
  int rc = posix_spawn(&pid, argv[0], &fa, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&fa);
  if (rc != 0) throw dflow::Error("cannot start " + args[0] + ": " + std::strerror(rc));
  return pid;
}

// Exit code, or -1 after killing a process that outlived the deadline.
int wait_for(pid_t pid, SteadyClock::time_point deadline) {
  int status = 0;
  while (true) {
    pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    if (SteadyClock::now() > deadline) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      return -1;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

std::vector<runtime::FrameEvent> read_events(const std::string& path) {
  return runtime::parse_csv(graph::read_text_file(path));
}

Outcome process_equivalence() {
  namespace fs = std::filesystem;
  const std::string cli = DFLOW_CLI;
  const std::uint64_t frames = 100;
  auto dir = fs::temp_directory_path() / ("dflow-acceptance-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto path = [&](const char* name) { return (dir / name).string(); };

  // In-process reference.
  Vehicle v;
  harness::VirtualOptions vo;
  vo.topology = {1, 1};
  vo.frames = frames;
  vo.engine.mode = runtime::SchedulingMode::deterministic_sequential;
  auto virt = harness::run_virtual(v.ep, v.srv, builtins(), vo);

  // Two OS processes over loopback.
  auto deadline = SteadyClock::now() + std::chrono::seconds(90);
  int port = free_port();
  int rc = wait_for(spawn({cli, "build-topology", "--topology", "K1,1", "--endpoint-template",
                           data("vehicle_endpoint.json"), "--server-template", data("vehicle_server.json"),
                           "--graph-out", path("graph.json"), "--mapping-out", path("mapping.json"), "--transport",
                           "tcp", "--host", "127.0.0.1", "--base-port", std::to_string(port)},
                          path("build.log")),
                    deadline);
  if (rc != 0) return {false, "build-topology exited " + std::to_string(rc)};
  auto node = [&](const char* id, const char* csv, const char* log) {
    return spawn({cli, "run-node", "--graph", path("graph.json"), "--mapping", path("mapping.json"), "--node", id,
                  "--frames", std::to_string(frames), "--deterministic", "--timeout", "60", "--metrics-out",
                  path(csv)},
                 path(log));
  };
  pid_t srv = node("srv1", "srv1.csv", "srv1.log");
  pid_t ep = node("ep1", "ep1.csv", "ep1.log");
  int ep_rc = wait_for(ep, deadline);
  int srv_rc = wait_for(srv, deadline);
  if (ep_rc != 0 || srv_rc != 0) {
    return {false, "run-node exit codes ep1=" + std::to_string(ep_rc) + " srv1=" + std::to_string(srv_rc) +
                       " (logs in " + dir.string() + ")"};
  }
  auto events = read_events(path("ep1.csv"));
  auto srv_events = read_events(path("srv1.csv"));
  events.insert(events.end(), srv_events.begin(), srv_events.end());
  auto summary = runtime::summarize(events, frames);

  Outcome o;
  std::ostringstream os;
  if (summary.size() != virt.metrics.summary.size()) o.pass = false;
  for (const auto& s : virt.metrics.summary) {
    std::uint64_t got = 0;
    for (const auto& p : summary) {
      if (p.stream == s.stream) got = p.frames_completed;
    }
    auto order_v = runtime::completion_order(virt.metrics.events, s.stream);
    auto order_p = runtime::completion_order(events, s.stream);
    bool same = got == s.frames_completed && order_v == order_p;
    o.pass = o.pass && same;
    os << "stream " << s.stream << ": in-process " << s.frames_completed << ", processes " << got << ", order "
       << (order_v == order_p ? "identical" : "differs") << "; ";
  }
  o.pass = o.pass && !virt.metrics.summary.empty() && virt.metrics.summary[0].frames_completed == frames;
  o.detail = os.str() + "port " + std::to_string(port);
  if (o.pass) fs::remove_all(dir);
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<Criterion> all = {
      {1, "explorer matches exhaustive argmin", explorer_oracle},
      {2, "measured cut agrees with estimate", estimate_vs_measure},
      {3, "scaling shape of the bipartite bench", scaling_shape},
      {4, "server kill under replication", server_kill},
      {5, "endpoint kill and server kill", endpoint_kill},
      {6, "transient link break recovery", transient_break},
      {7, "concurrent equals sequential", determinism},
      {8, "conservation and ordering", conservation},
      {9, "codec robustness", codec_robustness},
      {10, "in-process equals two processes", process_equivalence},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    Outcome o;
    auto start = SteadyClock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    double took = Seconds(SteadyClock::now() - start).count();
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << c.id << ". " << c.name << " (" << fmt(took, 1)
              << " s): " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
