#pragma once

#include <string>
#include <vector>

#include "dflow/graph/types.hpp"

namespace dflow::graph {

struct Violation {
  std::string code;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has(std::string_view code) const;
  std::string to_string() const;
};

// Checks every structural invariant of the IR and reports all violations.
// Pure; calling it twice yields the same report.
ValidationReport validate_graph(const GraphSpec& g);

// Mapping checks against the graph it maps.
ValidationReport validate_mapping(const GraphSpec& g, const MappingSpec& m);

}  // namespace dflow::graph
