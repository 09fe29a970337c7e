#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dflow/graph/types.hpp"

namespace dflow::explore {

// Declared costs of a chain. Times are microseconds per frame, sizes bytes per
// frame. `input_bytes` is the raw frame shipped when nothing runs on the
// endpoint; `output_bytes` is the result shipped when everything does.
struct CostModel {
  double bandwidth_bps = 0.0;
  std::uint64_t input_bytes = 0;
  std::uint64_t output_bytes = 0;
  std::string endpoint_class = "endpoint";
  std::string server_class = "server";
  std::map<std::string, std::map<std::string, double>> actor_us;  // actor -> class -> us
  std::map<std::string, std::uint64_t> fifo_bytes;

  // Throws Error("missing cost entry ...") when absent.
  double compute_us(const std::string& actor, const std::string& platform_class) const;
  std::uint64_t bytes(const std::string& fifo) const;
};

// JSON: {"bandwidth_bps", "input_bytes", "output_bytes", "endpoint_class",
// "server_class", "actors": {id: {class: us}}, "fifos": {id: bytes}}.
CostModel parse_cost_model(std::string_view text);
CostModel load_cost_model(const std::string& path);
std::string serialize_cost_model(const CostModel& m);

struct CutOptions {
  std::string endpoint_node = "endpoint";
  std::string server_node = "server";
  graph::TransportKind transport = graph::TransportKind::mem;
  std::string tcp_address = "127.0.0.1:0";
};

struct CutEvaluation {
  std::size_t cut = 0;  // actors [0, cut) run on the endpoint
  double endpoint_us = 0.0;
  double comm_us = 0.0;
  double total_us = 0.0;
  double server_us = 0.0;  // context only, not part of the objective
  std::uint64_t boundary_bytes = 0;
  bool measured = false;
  graph::MappingSpec mapping;
};

// Mapping for cut k: the first k chain actors on the endpoint node, the rest
// on the server node, crossing FIFOs bound to the chosen transport.
graph::MappingSpec cut_mapping(const graph::GraphSpec& chain, std::size_t k, const CutOptions& options = {});

// N + 1 mappings, k = 0 (all server) .. N (all endpoint). Throws GraphError
// "not a chain" for any other topology.
std::vector<graph::MappingSpec> enumerate_cuts(const graph::GraphSpec& chain, const CutOptions& options = {});

// Bytes crossing each cut: [0] is the input frame, [N] the output, in between
// the sum over the FIFOs joining actors k-1 and k.
std::vector<std::uint64_t> boundary_bytes(const graph::GraphSpec& chain, const CostModel& model);

double transfer_us(std::uint64_t bytes, double bandwidth_bps);

CutEvaluation estimate_endpoint_time(const graph::GraphSpec& chain, std::size_t k, const CostModel& model,
                                     const CutOptions& options = {});

struct Exploration {
  std::size_t best = 0;
  std::vector<CutEvaluation> table;

  const CutEvaluation& best_cut() const { return table.at(best); }
};

// Totals closer than this are a tie; ties go to the larger cut.
bool same_total(double a, double b);
std::size_t argmin_cut(const std::vector<CutEvaluation>& table);

Exploration explore(const graph::GraphSpec& chain, const CostModel& model, const CutOptions& options = {});

inline constexpr std::string_view kCutCsvHeader = "cut,endpoint_us,comm_us,total_us,is_best";

std::string to_csv(const Exploration& e);
// Human-readable table including estimated server time.
std::string to_text(const Exploration& e);

// Executes a chain under one cut and reports the endpoint-side time per frame.
class CutRunner {
 public:
  virtual ~CutRunner() = default;
  virtual CutEvaluation run_cut(const graph::GraphSpec& chain, const CostModel& model, std::size_t k,
                                std::uint64_t frames) = 0;
};

// Throws Error("empty measurement") when frames is 0.
CutEvaluation measure_cut(CutRunner& runner, const graph::GraphSpec& chain, const CostModel& model, std::size_t k,
                          std::uint64_t frames);
// Measures every cut in order (never in parallel).
Exploration explore_measured(CutRunner& runner, const graph::GraphSpec& chain, const CostModel& model,
                             std::uint64_t frames);

}  // namespace dflow::explore
