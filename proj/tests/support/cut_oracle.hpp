#pragma once

// Brute-force reference for partition-point selection, written without the
// explorer's helpers.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dflow/explore/explorer.hpp"
#include "support/graph_gen.hpp"

namespace dflow::testing {

struct RandomChain {
  graph::GraphSpec graph;
  explore::CostModel model;
};

// Chain a0..a{n-1} with integer costs and sizes so that exact ties occur.
inline RandomChain random_chain(Rng& rng, int max_length = 60) {
  RandomChain rc;
  int n = static_cast<int>(uniform(rng, 1, max_length));
  rc.graph = chain_graph(n);
  auto& m = rc.model;
  static const double bandwidths[] = {1e6, 16e6, 100e6, 1e9};
  m.bandwidth_bps = bandwidths[uniform(rng, 0, 3)];
  m.input_bytes = static_cast<std::uint64_t>(uniform(rng, 0, 1'000'000));
  m.output_bytes = static_cast<std::uint64_t>(uniform(rng, 0, 10'000));
  for (const auto& a : rc.graph.actors) {
    m.actor_us[a.id]["endpoint"] = static_cast<double>(uniform(rng, 0, 20'000));
    m.actor_us[a.id]["server"] = static_cast<double>(uniform(rng, 0, 2'000));
  }
  for (const auto& f : rc.graph.fifos) {
    m.fifo_bytes[f.id] = static_cast<std::uint64_t>(uniform(rng, 0, 3) == 0 ? 1000 : uniform(rng, 0, 800'000));
  }
  return rc;
}

// Totals per cut for a chain_graph-shaped chain: actors a0..a{n-1}, FIFO f{i}
// feeding a{i}.
inline std::vector<long double> oracle_totals(const RandomChain& rc) {
  const auto& m = rc.model;
  std::size_t n = rc.graph.actors.size();
  std::vector<long double> totals;
  for (std::size_t k = 0; k <= n; ++k) {
    long double compute = 0;
    for (std::size_t i = 0; i < k; ++i) compute += m.actor_us.at("a" + std::to_string(i)).at("endpoint");
    long double bytes;
    if (k == 0) bytes = m.input_bytes;
    else if (k == n) bytes = m.output_bytes;
    else bytes = m.fifo_bytes.at("f" + std::to_string(k));
    totals.push_back(compute + bytes * 8.0L / (m.bandwidth_bps / 1e6L));
  }
  return totals;
}

inline std::size_t oracle_best(const std::vector<long double>& totals) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < totals.size(); ++k) {
    long double scale = std::max<long double>({1.0L, std::fabs(totals[k]), std::fabs(totals[best])});
    if (totals[k] <= totals[best] + 1e-9L * scale) best = k;
  }
  return best;
}

}  // namespace dflow::testing
