#include <gtest/gtest.h>

#include <cstring>

#include "dflow/graph/io.hpp"
#include "dflow/runtime/engine.hpp"
#include "support/graph_gen.hpp"

using namespace dflow;
using namespace dflow::runtime;
using dflow::testing::make_fifo;
using dflow::testing::make_port;
using graph::PortDirection;

namespace {

std::string data(const std::string& name) { return std::string(DFLOW_DATA_DIR) + "/" + name; }

const KernelRegistry& builtins() {
  static const KernelRegistry r = KernelRegistry::with_builtins();
  return r;
}

std::vector<std::byte> token_of(std::size_t bytes, std::uint8_t fill) {
  return std::vector<std::byte>(bytes, static_cast<std::byte>(fill));
}

std::vector<std::byte> control_token(std::uint32_t index) {
  std::vector<std::byte> t(4);
  for (int i = 0; i < 4; ++i) t[static_cast<std::size_t>(i)] = static_cast<std::byte>((index >> (8 * (3 - i))) & 0xff);
  return t;
}

// Two-actor graph whose consumer takes `in_rate` tokens per firing.
graph::GraphSpec pair_graph(std::int64_t in_rate, std::int64_t capacity, std::int64_t token_bytes = 16) {
  graph::GraphSpec g;
  g.name = "pair";
  graph::ActorSpec s{"s", {"identity", nlohmann::json::object()}, {make_port("out", PortDirection::out, 1, token_bytes)}};
  graph::ActorSpec k{"k", {"identity", nlohmann::json::object()}, {make_port("in", PortDirection::in, in_rate, token_bytes)}};
  g.actors = {s, k};
  g.fifos = {make_fifo("s_k", {"s", "out"}, {"k", "in"}, capacity, token_bytes)};
  return g;
}

}  // namespace

TEST(TokenBuffer, FifoOrderAndCounters) {
  TokenBuffer b("f", 3, 4);
  b.push(token_of(4, 1));
  b.push(token_of(4, 2));
  EXPECT_EQ(b.occupancy(), 2u);
  EXPECT_EQ(std::to_integer<int>(b.peek(0)[0]), 1);
  b.pop(1);
  b.push(token_of(4, 3));
  b.push(token_of(4, 4));
  EXPECT_EQ(b.free_space(), 0u);
  EXPECT_THROW(b.push(token_of(4, 5)), Error);
  std::vector<std::byte> out;
  b.copy_front(3, out);
  EXPECT_EQ(std::to_integer<int>(out[0]), 2);
  EXPECT_EQ(std::to_integer<int>(out[4]), 3);
  EXPECT_EQ(std::to_integer<int>(out[8]), 4);
  EXPECT_EQ(b.produced_total(), b.consumed_total() + b.occupancy());
  EXPECT_THROW(b.push(token_of(3, 0)), Error);
  b.pop(3);
  EXPECT_THROW(b.pop(1), Error);
}

TEST(KernelRegistry, DuplicatesAndUnknownNames) {
  KernelRegistry r = KernelRegistry::with_builtins();
  EXPECT_NE(r.find("synthetic_cost"), nullptr);
  EXPECT_NE(r.find("matmul_toy"), nullptr);
  EXPECT_THROW(r.register_kernel("identity", [](KernelContext&) {}), Error);
  graph::GraphSpec g = dflow::testing::chain_graph(2, 4, "no_such_kernel");
  EXPECT_THROW(Engine(g, r), Error);
}

TEST(KernelRegistry, MatmulToyComputesProduct) {
  // 2x2 product on the payload after the frame tag.
  KernelRegistry r = KernelRegistry::with_builtins();
  std::vector<std::byte> tok(24, std::byte{0});
  std::uint32_t m[4] = {1, 2, 3, 4};
  std::memcpy(tok.data() + 8, m, 16);
  graph::GraphSpec g3 = dflow::testing::chain_graph(3, 2, "matmul_toy", 24);
  Engine e3(g3, r, {.frame_budget = 0, .record_sink_payloads = true});
  e3.buffer("f1").push(tok);
  e3.fire("a1");
  auto out = e3.buffer("f2").peek(0);
  std::uint32_t c[4];
  std::memcpy(c, out.data() + 8, 16);
  EXPECT_EQ(c[0], 7u);
  EXPECT_EQ(c[1], 10u);
  EXPECT_EQ(c[2], 15u);
  EXPECT_EQ(c[3], 22u);
}

TEST(Enabled, InputAndOutputConditions) {
  Engine e(pair_graph(1, 2), builtins(), {.frame_budget = 0});
  EXPECT_FALSE(e.enabled("k"));
  e.buffer("s_k").push(token_of(16, 0));
  EXPECT_TRUE(e.enabled("k"));

  Engine e2(pair_graph(2, 4), builtins(), {.frame_budget = 0});
  e2.buffer("s_k").push(token_of(16, 0));
  EXPECT_FALSE(e2.enabled("k"));
  e2.buffer("s_k").push(token_of(16, 0));
  EXPECT_TRUE(e2.enabled("k"));

  // Full output FIFO blocks the producer.
  Engine e3(pair_graph(1, 1), builtins());
  EXPECT_TRUE(e3.enabled("s"));
  e3.fire("s");
  EXPECT_FALSE(e3.enabled("s"));
}

TEST(Enabled, SwitchDpgActorUnderSettingZero) {
  Engine e(graph::load_graph(data("switch_dpg.json")), builtins(), {.frame_budget = 0});
  EXPECT_FALSE(e.enabled("a"));
  e.buffer("x_ac").push(control_token(0));
  EXPECT_TRUE(e.enabled("a"));
  FiringRecord r = e.fire("a");
  EXPECT_FALSE(r.kernel_invoked);
  EXPECT_EQ(r.consumed.count("p_a1"), 0u);
  EXPECT_EQ(r.consumed.at("p_ac"), 1);
  EXPECT_TRUE(r.produced.empty());
  EXPECT_EQ(e.buffer("x_ac").occupancy(), 0u);
  EXPECT_EQ(e.state("a").rates.at("p_a1"), 0);
  EXPECT_EQ(e.state("a").fire_count, 1u);
}

TEST(Fire, StaticActorShiftsOccupancy) {
  graph::GraphSpec g = dflow::testing::chain_graph(3, 4, "identity", 4096);
  Engine e(g, builtins());
  e.fire("a0");
  EXPECT_EQ(e.buffer("f1").occupancy(), 1u);
  FiringRecord r = e.fire("a1");
  EXPECT_EQ(r.consumed.at("in"), 1);
  EXPECT_EQ(r.produced.at("out"), 1);
  EXPECT_EQ(e.buffer("f1").occupancy(), 0u);
  EXPECT_EQ(e.buffer("f2").occupancy(), 1u);
  EXPECT_EQ(e.buffer("f2").peek(0).size(), 4096u);
  EXPECT_EQ(read_frame_tag(e.buffer("f2").peek(0)), 1u);
}

TEST(Fire, SwitchDpgControlIndexOneEnablesProcessingPath) {
  graph::GraphSpec g = graph::load_graph(data("switch_dpg.json"));
  g.actors[0].kernel.params["sequence"] = {1};
  Engine e(g, builtins());
  FiringRecord rx = e.fire("x");
  EXPECT_EQ(rx.produced.at("p_x1"), 1);
  EXPECT_EQ(rx.produced.at("p_xc"), 1);
  EXPECT_EQ(e.buffer("x_ac").occupancy(), 1u);
  EXPECT_EQ(e.buffer("x_yc").occupancy(), 1u);
  EXPECT_TRUE(e.enabled("a"));
  FiringRecord ra = e.fire("a");
  EXPECT_TRUE(ra.kernel_invoked);
  EXPECT_EQ(ra.consumed.at("p_a1"), 1);
  EXPECT_EQ(e.state("a").rates.at("p_a1"), 1);
  EXPECT_EQ(e.state("a").rates.at("p_a2"), 1);
  e.fire("b");
  FiringRecord ry = e.fire("y");
  EXPECT_EQ(ry.consumed.at("p_y1"), 1);
  EXPECT_EQ(ry.consumed.at("p_y2"), 1);
}

TEST(Fire, KernelFailureMarksActorFailed) {
  KernelRegistry r = KernelRegistry::with_builtins();
  r.register_kernel("boom", [](KernelContext&) { throw std::runtime_error("bad input"); });
  graph::GraphSpec g = dflow::testing::chain_graph(2, 2);
  g.actors[1].kernel.name = "boom";
  Engine e(g, r);
  e.fire("a0");
  FiringRecord rec = e.fire("a1");
  ASSERT_TRUE(rec.error);
  EXPECT_EQ(e.state("a1").status, ActorStatus::failed);
  ASSERT_EQ(e.metrics().failures().size(), 1u);
  EXPECT_NE(e.metrics().failures()[0].message.find("bad input"), std::string::npos);
}

TEST(Fire, PayloadSizeMismatchFails) {
  KernelRegistry r = KernelRegistry::with_builtins();
  r.register_kernel("short", [](KernelContext& ctx) { ctx.output(0).resize(3); });
  graph::GraphSpec g = dflow::testing::chain_graph(2, 2);
  g.actors[0].kernel.name = "short";
  Engine e(g, r);
  FiringRecord rec = e.fire("a0");
  ASSERT_TRUE(rec.error);
  EXPECT_NE(rec.error->find("payload size mismatch"), std::string::npos);
  EXPECT_EQ(e.buffer("f1").occupancy(), 0u);
}

TEST(Step, DeterministicOrderAndQuiescence) {
  Engine e(dflow::testing::chain_graph(3), builtins(), {.frame_budget = 1});
  EXPECT_EQ(e.step().fired, std::vector<std::string>{"a0"});
  EXPECT_EQ(e.step().fired, std::vector<std::string>{"a1"});
  EXPECT_EQ(e.step().fired, std::vector<std::string>{"a2"});
  EXPECT_TRUE(e.step().quiescent());
  EXPECT_FALSE(e.detect_deadlock());
}

TEST(Step, ConcurrentFiresIndependentActorsTogether) {
  Engine e(dflow::testing::diamond_graph(), builtins(),
           {.mode = SchedulingMode::concurrent, .frame_budget = 1});
  EXPECT_EQ(e.step().fired, std::vector<std::string>{"s"});
  auto both = e.step().fired;
  EXPECT_EQ(both, (std::vector<std::string>{"l", "r"}));
  EXPECT_EQ(e.step().fired, std::vector<std::string>{"k"});
}

TEST(RunUntil, IdentityChainTenFrames) {
  Engine e(dflow::testing::chain_graph(4), builtins());
  RunMetrics m = run_until(e, 10);
  EXPECT_EQ(completion_order(m.events, 0), (std::vector<std::uint64_t>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}));
  ASSERT_NE(m.stream(0), nullptr);
  EXPECT_EQ(m.stream(0)->frames_completed, 10u);
  EXPECT_EQ(m.stream(0)->frames_stalled, 0u);
}

TEST(RunUntil, ZeroFrames) {
  Engine e(dflow::testing::chain_graph(4), builtins());
  RunMetrics m = run_until(e, 0);
  EXPECT_TRUE(m.events.empty());
  EXPECT_EQ(e.state("a0").fire_count, 0u);
}

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<std::uint8_t> source_token(std::uint64_t seed, std::uint64_t frame, std::size_t bytes) {
  std::vector<std::uint8_t> out(bytes);
  std::uint64_t state = mix(seed ^ (frame * 0x100000001b3ULL));
  for (std::size_t k = 0; k < bytes; ++k) {
    if (k % 8 == 0) state = mix(state);
    out[k] = static_cast<std::uint8_t>(state >> (8 * (k % 8)));
  }
  for (std::size_t k = 0; k < 8; ++k) out[k] = static_cast<std::uint8_t>(frame >> (8 * (7 - k)));
  return out;
}

std::vector<std::uint8_t> affine_token(std::vector<std::uint8_t> in, int mul, int add, std::uint64_t frame) {
  for (auto& b : in) b = static_cast<std::uint8_t>((b * mul + add) & 0xff);
  for (std::size_t k = 0; k < 8; ++k) in[k] = static_cast<std::uint8_t>(frame >> (8 * (7 - k)));
  return in;
}

}  // namespace

TEST(RunUntil, SwitchDpgAlternatingControlMatchesHandSimulation) {
  const std::uint64_t seed = 42;
  Engine e(graph::load_graph(data("switch_dpg.json")), builtins(), {.seed = seed, .record_sink_payloads = true});
  RunMetrics m = run_until(e, 8);

  // Hand simulation: x emits 1,0,1,0,...; a runs on odd frames only, b always.
  std::vector<std::vector<std::uint8_t>> expected;
  for (std::uint64_t f = 1; f <= 8; ++f) {
    auto x_out = source_token(seed, f, 16);
    std::vector<std::uint8_t> y_in;
    if (f % 2 == 1) {
      auto a_out = affine_token(x_out, 3, 1, f);
      y_in.insert(y_in.end(), a_out.begin(), a_out.end());
    }
    auto b_out = affine_token(x_out, 1, 7, f);
    y_in.insert(y_in.end(), b_out.begin(), b_out.end());
    expected.push_back(y_in);
  }
  const auto& got = e.sink_payloads("y");
  ASSERT_EQ(got.size(), expected.size());
  std::size_t processed = 0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    std::vector<std::uint8_t> bytes;
    for (auto b : got[i]) bytes.push_back(std::to_integer<std::uint8_t>(b));
    EXPECT_EQ(bytes, expected[i]) << "frame " << i + 1;
    processed += bytes.size() == 32;
  }
  EXPECT_EQ(processed, 4u);
  EXPECT_EQ(e.state("a").fire_count, 8u);
  EXPECT_EQ(e.buffer("x_ac").consumed_total(), 8u);
  EXPECT_EQ(m.stream(0)->frames_completed, 8u);
}

TEST(Deadlock, CapacityBelowConsumerRate) {
  graph::GraphSpec g = dflow::testing::chain_graph(3, 4);
  g.fifos[1].capacity = 1;
  g.actors[2].ports[0].rate = 2;
  Engine e(g, builtins());
  try {
    run_until(e, 5);
    FAIL() << "expected a deadlock";
  } catch (const DeadlockError& err) {
    const BlockedActor* k = err.diagnosis().find("a2");
    ASSERT_NE(k, nullptr);
    ASSERT_EQ(k->waits.size(), 1u);
    EXPECT_EQ(k->waits[0].fifo, "f2");
    EXPECT_EQ(k->waits[0].required, 2);
    EXPECT_FALSE(k->dead_link);
    EXPECT_TRUE(err.diagnosis().is_deadlock());
    EXPECT_FALSE(err.partial_metrics().events.empty());
  }
}

TEST(Deadlock, HealthyMidRunIsNone) {
  Engine e(dflow::testing::chain_graph(3), builtins(), {.frame_budget = 4});
  e.step();
  e.step();
  EXPECT_FALSE(e.detect_deadlock());
}

TEST(Deadlock, DeadLinkBlocksOnlyItsStream) {
  // Stream 1: r1 (remote) -> m1 -> k1 (takes 2); stream 2: s2 -> k2.
  graph::GraphSpec g;
  auto actor = [](std::string id, int stream, std::vector<graph::PortSpec> ports) {
    graph::ActorSpec a{std::move(id), {"identity", {{"stream", stream}}}, std::move(ports)};
    return a;
  };
  g.actors = {actor("r1", 1, {make_port("out", PortDirection::out, 1, 16)}),
              actor("m1", 1, {make_port("in", PortDirection::in, 1, 16), make_port("out", PortDirection::out, 1, 16)}),
              actor("k1", 1, {make_port("in", PortDirection::in, 2, 16)}),
              actor("s2", 2, {make_port("out", PortDirection::out, 1, 16)}),
              actor("k2", 2, {make_port("in", PortDirection::in, 1, 16)})};
  g.fifos = {make_fifo("r1_m1", {"r1", "out"}, {"m1", "in"}, 4, 16),
             make_fifo("m1_k1", {"m1", "out"}, {"k1", "in"}, 4, 16),
             make_fifo("s2_k2", {"s2", "out"}, {"k2", "in"}, 4, 16)};
  EngineHooks hooks;
  hooks.local_actors = {"m1", "k1", "s2", "k2"};
  Engine e(g, builtins(), {.frame_budget = 5}, hooks);
  EXPECT_EQ(e.inbound_boundary(), std::vector<std::string>{"r1_m1"});
  std::vector<std::byte> tok(16, std::byte{0});
  write_frame_tag(tok, 1);
  e.buffer("r1_m1").push(tok);
  e.mark_link_dead("r1_m1");
  while (!e.step().quiescent()) {
  }
  EXPECT_EQ(e.state("k2").fire_count, 5u);
  auto d = e.detect_deadlock();
  ASSERT_TRUE(d);
  EXPECT_FALSE(d->is_deadlock()) << d->to_string();
  ASSERT_NE(d->find("k1"), nullptr);
  EXPECT_TRUE(d->find("k1")->dead_link);
  EXPECT_TRUE(d->find("m1")->dead_link);
  EXPECT_EQ(d->find("k2"), nullptr);
  EXPECT_EQ(d->find("s2"), nullptr);
}

TEST(EngineConfig, ParsesText) {
  EngineConfig c = parse_engine_config("mode = concurrent\nseed = 9  # comment\nframes = 12\nwait = busy\n");
  EXPECT_EQ(c.mode, SchedulingMode::concurrent);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.frame_budget, 12u);
  EXPECT_EQ(c.wait_mode, WaitMode::busy);
  EXPECT_THROW(parse_engine_config("mode = sideways"), ParseError);
  EXPECT_THROW(parse_engine_config("colour = 1"), ParseError);
  EXPECT_THROW(parse_engine_config("seed = abc"), ParseError);
}

TEST(Metrics, CsvRoundtripAndSummary) {
  Engine e(dflow::testing::chain_graph(3), builtins());
  RunMetrics m = run_until(e, 20);
  std::string csv = to_csv(m.events);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsCsvHeader);
  auto back = parse_csv(csv);
  EXPECT_EQ(back, m.events);
  auto s = summarize(back, 20);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].frames_completed + s[0].frames_stalled, s[0].frames_submitted);
  EXPECT_EQ(s[0].frames_submitted, 20u);
  // Recompute the mean from raw rows.
  std::map<std::uint64_t, std::int64_t> sub, done;
  for (const auto& ev : back) {
    if (ev.event == FrameEventKind::submit) sub[ev.frame] = ev.t_us;
    if (ev.event == FrameEventKind::complete && !done.count(ev.frame)) done[ev.frame] = ev.t_us;
  }
  double total = 0;
  for (auto [f, t] : done) total += (t - sub[f]) / 1000.0;
  EXPECT_NEAR(s[0].mean_ms, total / static_cast<double>(done.size()), 1e-9);
  EXPECT_THROW(parse_csv("frame,stream\n"), ParseError);
}

TEST(Metrics, SummaryDeduplicatesReplicatedCompletions) {
  std::vector<FrameEvent> ev = {
      {1, 1, "ep1", "cam", FrameEventKind::submit, 0},
      {1, 1, "srv1", "cls", FrameEventKind::complete, 500},
      {1, 1, "srv2", "cls", FrameEventKind::complete, 700},
      {2, 1, "ep1", "cam", FrameEventKind::submit, 1000},
  };
  auto s = summarize(ev, 3);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].frames_completed, 1u);
  EXPECT_EQ(s[0].frames_stalled, 1u);
  EXPECT_EQ(s[0].frames_requested, 3u);
  EXPECT_DOUBLE_EQ(s[0].mean_ms, 0.5);
}
