#include <gtest/gtest.h>

#include "dflow/error.hpp"
#include "dflow/explore/explorer.hpp"
#include "dflow/graph/io.hpp"
#include "support/cut_oracle.hpp"

using namespace dflow::explore;
using dflow::Error;
using dflow::GraphError;
using dflow::ParseError;
namespace graph = dflow::graph;
namespace gen = dflow::testing;

namespace {

std::string data(const std::string& name) { return std::string(DFLOW_DATA_DIR) + "/" + name; }

struct Chain5 {
  graph::GraphSpec graph = graph::load_graph(data("chain5.json"));
  CostModel model = load_cost_model(data("chain5_costs.json"));
};

class FixedRunner : public CutRunner {
 public:
  CutEvaluation run_cut(const graph::GraphSpec& chain, const CostModel& model, std::size_t k,
                        std::uint64_t) override {
    ++calls;
    auto e = estimate_endpoint_time(chain, k, model);
    e.total_us += 10;  // measurement noise
    return e;
  }
  int calls = 0;
};

}  // namespace

TEST(CostModel, ParsesShippedFiles) {
  Chain5 c;
  EXPECT_DOUBLE_EQ(c.model.bandwidth_bps, 100e6);
  EXPECT_EQ(c.model.input_bytes, 600000u);
  EXPECT_EQ(c.model.output_bytes, 4000u);
  EXPECT_DOUBLE_EQ(c.model.compute_us("c3", "endpoint"), 6000);
  EXPECT_EQ(c.model.bytes("f2"), 150000u);
  EXPECT_EQ(parse_cost_model(serialize_cost_model(c.model)).actor_us, c.model.actor_us);
}

TEST(CostModel, RejectsBadInput) {
  EXPECT_THROW(parse_cost_model(R"({"bandwidth_bps": 0})"), ParseError);
  EXPECT_THROW(parse_cost_model(R"({"actors": {}})"), ParseError);
  EXPECT_THROW(parse_cost_model(R"({"bandwidth_bps": 1, "speed": 3})"), ParseError);
  EXPECT_THROW(parse_cost_model(R"({"bandwidth_bps": 1, "actors": {"a": {"endpoint": -1}}})"), ParseError);
  EXPECT_THROW(parse_cost_model(R"({"bandwidth_bps": 1, "fifos": {"f": -5}})"), ParseError);
  try {
    parse_cost_model("{\n  \"bandwidth_bps\": ,\n}");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
  }
}

TEST(EnumerateCuts, CountsAndPlacement) {
  auto ssd = graph::load_graph(data("ssd53.json"));
  auto cuts = enumerate_cuts(ssd);
  ASSERT_EQ(cuts.size(), 54u);
  EXPECT_EQ(cuts[0].node_of("l01"), "server");
  EXPECT_EQ(cuts[53].node_of("l53"), "endpoint");
  EXPECT_EQ(cuts[13].node_of("l13"), "endpoint");
  EXPECT_EQ(cuts[13].node_of("l14"), "server");

  auto one = gen::chain_graph(1);
  auto two = enumerate_cuts(one);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0].node_of("a0"), "server");
  EXPECT_EQ(two[1].node_of("a0"), "endpoint");
}

TEST(EnumerateCuts, CrossingFifosGetAddresses) {
  Chain5 c;
  auto m = cut_mapping(c.graph, 2);
  EXPECT_EQ(m.find_link("f2")->transport, graph::TransportKind::mem);
  EXPECT_EQ(m.find_link("f2")->address, "mem://server/f2");
  EXPECT_EQ(m.find_link("f1")->transport, graph::TransportKind::local);
  CutOptions tcp;
  tcp.transport = graph::TransportKind::tcp;
  tcp.tcp_address = "127.0.0.1:7000";
  EXPECT_EQ(cut_mapping(c.graph, 2, tcp).find_link("f2")->address, "127.0.0.1:7000");
}

TEST(EnumerateCuts, DiamondIsNotAChain) {
  try {
    enumerate_cuts(gen::diamond_graph());
    FAIL();
  } catch (const GraphError& e) {
    EXPECT_NE(std::string(e.what()).find("not a chain"), std::string::npos);
  }
}

TEST(Estimate, FiveActorExample) {
  Chain5 c;
  auto e = dflow::explore::explore(c.graph, c.model);
  const double expected_ms[] = {48.0, 28.0, 19.0, 19.4, 16.6, 20.32};
  ASSERT_EQ(e.table.size(), 6u);
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_NEAR(e.table[k].total_us / 1000, expected_ms[k], 1e-9) << k;
    EXPECT_NEAR(e.table[k].total_us, e.table[k].endpoint_us + e.table[k].comm_us, 1e-9);
  }
  EXPECT_EQ(e.best, 4u);
  EXPECT_NEAR(e.best_cut().total_us, 16600, 1e-6);
  EXPECT_EQ(e.table[2].boundary_bytes, 150000u);
  EXPECT_DOUBLE_EQ(e.table[2].server_us, 3000);
}

TEST(Estimate, BandwidthExtremes) {
  Chain5 c;
  c.model.bandwidth_bps = 1e15;
  EXPECT_EQ(dflow::explore::explore(c.graph, c.model).best, 0u);
  c.model.bandwidth_bps = 1;
  EXPECT_EQ(dflow::explore::explore(c.graph, c.model).best, 5u);
}

TEST(Estimate, MissingCostEntry) {
  Chain5 c;
  c.model.actor_us.erase("c3");
  EXPECT_THROW(estimate_endpoint_time(c.graph, 4, c.model), Error);
  Chain5 d;
  d.model.fifo_bytes.erase("f4");
  EXPECT_THROW(dflow::explore::explore(d.graph, d.model), Error);
  EXPECT_THROW(estimate_endpoint_time(d.graph, 9, Chain5().model), Error);
}

TEST(Explore, TiesGoToTheLargerCut) {
  Chain5 c;
  // Cut 3 and cut 4 both total 16.6 ms.
  c.model.fifo_bytes["f3"] = 45000;
  auto e = dflow::explore::explore(c.graph, c.model);
  EXPECT_NEAR(e.table[3].total_us, 16600, 1e-9);
  EXPECT_NEAR(e.table[4].total_us, 16600, 1e-9);
  EXPECT_EQ(e.best, 4u);
}

TEST(Explore, SyntheticFiftyThreeStageModel) {
  auto g = graph::load_graph(data("ssd53.json"));
  auto m = load_cost_model(data("ssd53_costs.json"));
  auto e = dflow::explore::explore(g, m);
  ASSERT_EQ(e.table.size(), 54u);
  EXPECT_TRUE(same_total(e.table[13].total_us, e.table[14].total_us));
  EXPECT_EQ(e.best, 14u);
  EXPECT_EQ(e.table[53].comm_us, 0.0);
  // Brute force over the same table.
  for (const auto& c : e.table) EXPECT_GE(c.total_us + 1e-6, e.best_cut().total_us);
}

TEST(Explore, MatchesBruteForceOnRandomModels) {
  gen::Rng rng(2024);
  for (int i = 0; i < 300; ++i) {
    auto rc = gen::random_chain(rng);
    auto e = dflow::explore::explore(rc.graph, rc.model);
    auto totals = gen::oracle_totals(rc);
    ASSERT_EQ(e.table.size(), rc.graph.actors.size() + 1);
    for (std::size_t k = 0; k < totals.size(); ++k) {
      EXPECT_NEAR(e.table[k].total_us, static_cast<double>(totals[k]), 1e-6 * std::max(1.0L, totals[k]));
    }
    ASSERT_EQ(e.best, gen::oracle_best(totals)) << "model " << i;
  }
}

TEST(Explore, TotalsMonotoneInBandwidth) {
  gen::Rng rng(77);
  for (int i = 0; i < 100; ++i) {
    auto rc = gen::random_chain(rng, 20);
    auto slow = dflow::explore::explore(rc.graph, rc.model);
    rc.model.bandwidth_bps *= 1.0 + static_cast<double>(gen::uniform(rng, 1, 100)) / 10;
    auto fast = dflow::explore::explore(rc.graph, rc.model);
    for (std::size_t k = 0; k < slow.table.size(); ++k) EXPECT_LE(fast.table[k].total_us, slow.table[k].total_us);
  }
}

TEST(Explore, EndpointOnlyHasNoTransferWithoutOutput) {
  Chain5 c;
  c.model.output_bytes = 0;
  auto e = dflow::explore::explore(c.graph, c.model);
  EXPECT_EQ(e.table.back().comm_us, 0.0);
  EXPECT_DOUBLE_EQ(e.table.back().total_us, 20000);
}

TEST(Explore, CsvAndText) {
  Chain5 c;
  auto e = dflow::explore::explore(c.graph, c.model);
  auto csv = to_csv(e);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kCutCsvHeader);
  EXPECT_NE(csv.find("\n4,15000.000,1600.000,16600.000,1\n"), std::string::npos);
  EXPECT_NE(csv.find("\n0,0.000,48000.000,48000.000,0\n"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  auto text = to_text(e);
  EXPECT_NE(text.find("best cut 4"), std::string::npos);
}

TEST(Measure, EmptyMeasurementAndSequentialSweep) {
  Chain5 c;
  FixedRunner runner;
  try {
    measure_cut(runner, c.graph, c.model, 2, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "empty measurement");
  }
  auto m = explore_measured(runner, c.graph, c.model, 3);
  EXPECT_EQ(runner.calls, 6);
  EXPECT_EQ(m.best, 4u);
  EXPECT_TRUE(m.table[0].measured);
}
