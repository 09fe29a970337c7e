#pragma once

#include <string>
#include <string_view>

#include "dflow/graph/types.hpp"

namespace dflow::graph {

// Graph and mapping files are JSON documents. Parsing rejects unknown keys,
// duplicate identifiers and missing required fields with a ParseError.
GraphSpec parse_graph(std::string_view text);
std::string serialize_graph(const GraphSpec& g);

MappingSpec parse_mapping(std::string_view text);
std::string serialize_mapping(const MappingSpec& m);

GraphSpec load_graph(const std::string& path);
MappingSpec load_mapping(const std::string& path);
// Parses JSON, reporting syntax errors as ParseError with line and column.
nlohmann::json parse_json(std::string_view text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

// FNV-1a 64 over the canonical serialization; peers exchange it during the
// handshake to detect nodes built from different graph files.
std::uint64_t graph_hash(const GraphSpec& g);

}  // namespace dflow::graph
