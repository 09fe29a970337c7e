#include "dflow/graph/rates.hpp"

#include "dflow/error.hpp"

namespace dflow::graph {

RateState initial_rates(const GraphSpec& g) {
  RateState rates;
  for (const auto& a : g.actors) {
    for (const auto& p : a.ports) rates[PortRef{a.id, p.id}] = p.rate;
  }
  return rates;
}

RateState apply_rate_setting(const RateState& rates, const ControlTable& table,
                             std::int64_t setting_index) {
  const RateAssignment* row = table.find_setting(setting_index);
  if (!row) {
    throw GraphError("control table on '" + table.control_port.str() +
                     "' has no setting with index " + std::to_string(setting_index));
  }
  if (row->rates.size() != table.controlled.size()) {
    throw GraphError("control table on '" + table.control_port.str() + "' setting " +
                     std::to_string(setting_index) + " has the wrong number of rates");
  }
  RateState next = rates;
  for (std::size_t i = 0; i < table.controlled.size(); ++i) {
    next[table.controlled[i]] = row->rates[i];
  }
  return next;
}

}  // namespace dflow::graph
