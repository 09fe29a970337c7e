#pragma once

#include <cstdint>
#include <map>

#include "dflow/graph/types.hpp"

namespace dflow::graph {

using RateState = std::map<PortRef, std::int64_t>;

// Declared rate of every port in the graph.
RateState initial_rates(const GraphSpec& g);

// Returns a copy of `rates` in which every port controlled by `table` carries
// the rate from the row with the given index. Throws GraphError when the index
// does not exist.
RateState apply_rate_setting(const RateState& rates, const ControlTable& table,
                             std::int64_t setting_index);

}  // namespace dflow::graph
