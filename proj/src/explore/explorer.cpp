#include "dflow/explore/explorer.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "dflow/error.hpp"
#include "dflow/graph/io.hpp"
#include "dflow/graph/topology.hpp"

namespace dflow::explore {

using nlohmann::json;

double CostModel::compute_us(const std::string& actor, const std::string& platform_class) const {
  auto a = actor_us.find(actor);
  if (a != actor_us.end()) {
    auto c = a->second.find(platform_class);
    if (c != a->second.end()) return c->second;
  }
  throw Error("missing cost entry for actor '" + actor + "' on class '" + platform_class + "'");
}

std::uint64_t CostModel::bytes(const std::string& fifo) const {
  auto it = fifo_bytes.find(fifo);
  if (it == fifo_bytes.end()) throw Error("missing cost entry for fifo '" + fifo + "'");
  return it->second;
}

namespace {

double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ParseError(path + ": expected a number");
  return j.get<double>();
}

std::uint64_t count(const json& j, const std::string& path) {
  if (!j.is_number_integer() && !j.is_number_unsigned()) throw ParseError(path + ": expected an integer");
  if (j.is_number_integer() && j.get<std::int64_t>() < 0) throw ParseError(path + ": must be >= 0");
  return j.get<std::uint64_t>();
}

std::string text(const json& j, const std::string& path) {
  if (!j.is_string()) throw ParseError(path + ": expected a string");
  return j.get<std::string>();
}

}  // namespace

CostModel parse_cost_model(std::string_view source) {
  json root = graph::parse_json(source);
  if (!root.is_object()) throw ParseError("cost model: expected an object");
  CostModel m;
  bool have_bw = false;
  for (const auto& [key, value] : root.items()) {
    if (key == "bandwidth_bps") {
      m.bandwidth_bps = number(value, key);
      have_bw = true;
    } else if (key == "input_bytes") {
      m.input_bytes = count(value, key);
    } else if (key == "output_bytes") {
      m.output_bytes = count(value, key);
    } else if (key == "endpoint_class") {
      m.endpoint_class = text(value, key);
    } else if (key == "server_class") {
      m.server_class = text(value, key);
    } else if (key == "actors") {
      if (!value.is_object()) throw ParseError("actors: expected an object");
      for (const auto& [actor, classes] : value.items()) {
        if (!classes.is_object()) throw ParseError("actors." + actor + ": expected an object");
        for (const auto& [cls, us] : classes.items()) {
          double t = number(us, "actors." + actor + "." + cls);
          if (t < 0) throw ParseError("actors." + actor + "." + cls + ": time must be >= 0");
          m.actor_us[actor][cls] = t;
        }
      }
    } else if (key == "fifos") {
      if (!value.is_object()) throw ParseError("fifos: expected an object");
      for (const auto& [fifo, b] : value.items()) m.fifo_bytes[fifo] = count(b, "fifos." + fifo);
    } else {
      throw ParseError("cost model: unknown key '" + key + "'");
    }
  }
  if (!have_bw) throw ParseError("cost model: missing field 'bandwidth_bps'");
  if (!(m.bandwidth_bps > 0) || !std::isfinite(m.bandwidth_bps)) throw ParseError("bandwidth_bps: must be > 0");
  return m;
}

CostModel load_cost_model(const std::string& path) { return parse_cost_model(graph::read_text_file(path)); }

std::string serialize_cost_model(const CostModel& m) {
  json j;
  j["bandwidth_bps"] = m.bandwidth_bps;
  j["input_bytes"] = m.input_bytes;
  j["output_bytes"] = m.output_bytes;
  j["endpoint_class"] = m.endpoint_class;
  j["server_class"] = m.server_class;
  j["actors"] = json::object();
  for (const auto& [a, classes] : m.actor_us) {
    for (const auto& [c, us] : classes) j["actors"][a][c] = us;
  }
  j["fifos"] = json::object();
  for (const auto& [f, b] : m.fifo_bytes) j["fifos"][f] = b;
  return j.dump(2) + "\n";
}

graph::MappingSpec cut_mapping(const graph::GraphSpec& chain, std::size_t k, const CutOptions& options) {
  auto order = graph::chain_order(chain);
  if (k > order.size()) throw Error("cut " + std::to_string(k) + " outside 0.." + std::to_string(order.size()));
  graph::MappingSpec m;
  m.nodes = {{options.endpoint_node, graph::NodeRole::endpoint, "endpoint"},
             {options.server_node, graph::NodeRole::server, "server"}};
  for (std::size_t i = 0; i < order.size(); ++i) {
    m.assignments.push_back({order[i], i < k ? options.endpoint_node : options.server_node, "core0"});
  }
  for (const auto& f : chain.fifos) {
    bool crosses = m.node_of(f.from.actor) != m.node_of(f.to.actor);
    if (!crosses) {
      m.links.push_back({f.id, graph::TransportKind::local, ""});
    } else if (options.transport == graph::TransportKind::tcp) {
      m.links.push_back({f.id, graph::TransportKind::tcp, options.tcp_address});
    } else {
      m.links.push_back({f.id, graph::TransportKind::mem, "mem://" + options.server_node + "/" + f.id});
    }
  }
  return m;
}

std::vector<graph::MappingSpec> enumerate_cuts(const graph::GraphSpec& chain, const CutOptions& options) {
  auto n = graph::chain_order(chain).size();
  std::vector<graph::MappingSpec> v;
  for (std::size_t k = 0; k <= n; ++k) v.push_back(cut_mapping(chain, k, options));
  return v;
}

std::vector<std::uint64_t> boundary_bytes(const graph::GraphSpec& chain, const CostModel& model) {
  auto order = graph::chain_order(chain);
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
  std::vector<std::uint64_t> b(order.size() + 1, 0);
  b.front() = model.input_bytes;
  b.back() = model.output_bytes;
  for (const auto& f : chain.fifos) b[pos[f.to.actor]] += model.bytes(f.id);
  return b;
}

double transfer_us(std::uint64_t bytes, double bandwidth_bps) {
  return static_cast<double>(bytes) * 8.0 * 1e6 / bandwidth_bps;
}

CutEvaluation estimate_endpoint_time(const graph::GraphSpec& chain, std::size_t k, const CostModel& model,
                                     const CutOptions& options) {
  auto order = graph::chain_order(chain);
  if (k > order.size()) throw Error("cut " + std::to_string(k) + " outside 0.." + std::to_string(order.size()));
  CutEvaluation e;
  e.cut = k;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < k) e.endpoint_us += model.compute_us(order[i], model.endpoint_class);
    else e.server_us += model.compute_us(order[i], model.server_class);
  }
  e.boundary_bytes = boundary_bytes(chain, model)[k];
  e.comm_us = transfer_us(e.boundary_bytes, model.bandwidth_bps);
  e.total_us = e.endpoint_us + e.comm_us;
  e.mapping = cut_mapping(chain, k, options);
  return e;
}

bool same_total(double a, double b) { return std::fabs(a - b) <= 1e-9 * std::max({1.0, std::fabs(a), std::fabs(b)}); }

std::size_t argmin_cut(const std::vector<CutEvaluation>& table) {
  if (table.empty()) throw Error("empty cut table");
  std::size_t best = 0;
  for (std::size_t i = 1; i < table.size(); ++i) {
    if (table[i].total_us < table[best].total_us || same_total(table[i].total_us, table[best].total_us)) best = i;
  }
  return best;
}

Exploration explore(const graph::GraphSpec& chain, const CostModel& model, const CutOptions& options) {
  auto n = graph::chain_order(chain).size();
  Exploration e;
  for (std::size_t k = 0; k <= n; ++k) e.table.push_back(estimate_endpoint_time(chain, k, model, options));
  e.best = argmin_cut(e.table);
  return e;
}

namespace {

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

std::string to_csv(const Exploration& e) {
  std::string out(kCutCsvHeader);
  out += "\n";
  for (const auto& c : e.table) {
    out += std::to_string(c.cut) + "," + fixed(c.endpoint_us, 3) + "," + fixed(c.comm_us, 3) + "," +
           fixed(c.total_us, 3) + "," + (c.cut == e.table.at(e.best).cut ? "1" : "0") + "\n";
  }
  return out;
}

std::string to_text(const Exploration& e) {
  std::ostringstream os;
  os << std::setw(5) << "cut" << std::setw(14) << "endpoint_ms" << std::setw(12) << "comm_ms" << std::setw(12)
     << "total_ms" << std::setw(13) << "server_ms" << "\n";
  for (const auto& c : e.table) {
    os << std::setw(5) << c.cut << std::setw(14) << fixed(c.endpoint_us / 1000, 3) << std::setw(12)
       << fixed(c.comm_us / 1000, 3) << std::setw(12) << fixed(c.total_us / 1000, 3) << std::setw(13)
       << fixed(c.server_us / 1000, 3) << (c.cut == e.best_cut().cut ? "  <- best" : "") << "\n";
  }
  const auto& all = e.table.back();
  os << "best cut " << e.best_cut().cut << ": " << fixed(e.best_cut().total_us / 1000, 3) << " ms vs "
     << fixed(all.total_us / 1000, 3) << " ms endpoint-only\n";
  return os.str();
}

CutEvaluation measure_cut(CutRunner& runner, const graph::GraphSpec& chain, const CostModel& model, std::size_t k,
                          std::uint64_t frames) {
  if (frames == 0) throw Error("empty measurement");
  auto e = runner.run_cut(chain, model, k, frames);
  e.cut = k;
  e.measured = true;
  return e;
}

Exploration explore_measured(CutRunner& runner, const graph::GraphSpec& chain, const CostModel& model,
                             std::uint64_t frames) {
  auto n = graph::chain_order(chain).size();
  Exploration e;
  for (std::size_t k = 0; k <= n; ++k) e.table.push_back(measure_cut(runner, chain, model, k, frames));
  e.best = argmin_cut(e.table);
  return e;
}

}  // namespace dflow::explore
