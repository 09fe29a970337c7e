#include "dflow/runtime/engine.hpp"

#include <algorithm>
#include <sstream>
#include <thread>

#include "dflow/graph/topology.hpp"

namespace dflow::runtime {

using graph::PortDirection;

std::string_view to_string(SchedulingMode m) {
  return m == SchedulingMode::concurrent ? "concurrent" : "deterministic";
}

std::string_view to_string(ActorStatus s) {
  switch (s) {
    case ActorStatus::idle: return "idle";
    case ActorStatus::enabled: return "enabled";
    case ActorStatus::firing: return "firing";
    case ActorStatus::dead_input_disabled: return "dead-input-disabled";
    case ActorStatus::failed: return "failed";
  }
  return "?";
}

EngineConfig parse_engine_config(std::string_view text) {
  EngineConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("engine config: expected key = value", line_no, 1);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "mode") {
        if (value == "deterministic" || value == "deterministic-sequential") {
          cfg.mode = SchedulingMode::deterministic_sequential;
        } else if (value == "concurrent") {
          cfg.mode = SchedulingMode::concurrent;
        } else {
          throw ParseError("engine config: unknown mode '" + value + "'", line_no, 1);
        }
      } else if (key == "seed") {
        cfg.seed = std::stoull(value);
      } else if (key == "fairness") {
        cfg.fairness = value;
      } else if (key == "frames") {
        cfg.frame_budget = std::stoull(value);
      } else if (key == "wait") {
        if (value == "sleep") cfg.wait_mode = WaitMode::sleep;
        else if (value == "busy") cfg.wait_mode = WaitMode::busy;
        else throw ParseError("engine config: unknown wait mode '" + value + "'", line_no, 1);
      } else {
        throw ParseError("engine config: unknown key '" + key + "'", line_no, 1);
      }
    } catch (const std::invalid_argument&) {
      throw ParseError("engine config: bad number for '" + key + "'", line_no, 1);
    } catch (const std::out_of_range&) {
      throw ParseError("engine config: number out of range for '" + key + "'", line_no, 1);
    }
  }
  return cfg;
}

bool DeadlockDiagnosis::is_deadlock() const {
  return std::any_of(blocked.begin(), blocked.end(), [](const BlockedActor& b) { return !b.dead_link; });
}

const BlockedActor* DeadlockDiagnosis::find(std::string_view actor) const {
  for (const auto& b : blocked) {
    if (b.actor == actor) return &b;
  }
  return nullptr;
}

std::string DeadlockDiagnosis::to_string() const {
  std::ostringstream out;
  for (const auto& b : blocked) {
    out << b.actor << (b.dead_link ? " [dead link]" : "") << ":";
    for (const auto& w : b.waits) {
      const char* need = w.need == BlockedPort::Need::input_tokens    ? "tokens"
                         : w.need == BlockedPort::Need::output_space ? "space"
                                                                     : "control";
      out << " " << w.port << "<-" << w.fifo << " needs " << w.required << " " << need << " has "
          << w.available << (w.link_dead ? " (dead)" : "");
    }
    out << "\n";
  }
  for (const auto& c : census) out << "  " << c.fifo << " " << c.occupancy << "/" << c.capacity << "\n";
  return out.str();
}

DeadlockError::DeadlockError(DeadlockDiagnosis diagnosis, RunMetrics partial)
    : Error("deadlock:\n" + diagnosis.to_string()),
      diagnosis_(std::move(diagnosis)),
      partial_(std::move(partial)) {}

struct Engine::PortRt {
  const graph::PortSpec* spec = nullptr;
  std::vector<TokenBuffer*> buffers;  // control outputs may feed several
  std::vector<std::string> fifos;
  int table = -1;       // data port: controlling table; control port: its table
  bool self_controlled = false;
  bool disabled = false;
  int stream = 0;

  TokenBuffer* buffer() const { return buffers.empty() ? nullptr : buffers.front(); }
  std::string fifo() const { return fifos.empty() ? std::string{} : fifos.front(); }
};

struct Engine::ActorRt {
  const graph::ActorSpec* spec = nullptr;
  const KernelInfo* kernel = nullptr;
  std::vector<PortRt> ports;
  std::vector<std::size_t> data_in, data_out, ctrl_in, ctrl_out;
  ActorState state;
  bool source = false;
  bool sink = false;
  bool retired = false;
  std::optional<int> stream;
  std::uint64_t submitted = 0;
  std::vector<std::vector<std::byte>> sink_log;
  // Payload storage reused across firings.
  std::vector<std::vector<std::byte>> inputs, outputs;
};

namespace {

std::uint32_t decode_setting(std::span<const std::byte> token) {
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | std::to_integer<std::uint32_t>(token[i]);
  return v;
}

std::vector<std::byte> encode_setting(std::int64_t index, std::size_t token_bytes) {
  std::vector<std::byte> token(token_bytes, std::byte{0});
  auto v = static_cast<std::uint32_t>(index);
  for (std::size_t i = 0; i < 4; ++i) token[i] = static_cast<std::byte>((v >> (8 * (3 - i))) & 0xff);
  return token;
}

}  // namespace

Engine::Engine(const graph::GraphSpec& graph, const KernelRegistry& kernels, EngineConfig config,
               EngineHooks hooks)
    : graph_(graph), config_(std::move(config)), hooks_(std::move(hooks)) {
  if (!hooks_.metrics) hooks_.metrics = std::make_shared<MetricsSink>();
  auto local = [&](const std::string& id) {
    return hooks_.local_actors.empty() || hooks_.local_actors.count(id) > 0;
  };

  for (const auto& f : graph_.fifos) {
    bool from_local = local(f.from.actor);
    bool to_local = local(f.to.actor);
    if (!from_local && !to_local) continue;
    if (f.capacity < 1 || f.token_bytes < 1) throw Error("fifo '" + f.id + "' is malformed");
    buffers_.emplace(f.id, std::make_unique<TokenBuffer>(f.id, static_cast<std::size_t>(f.capacity),
                                                         static_cast<std::size_t>(f.token_bytes)));
    if (from_local && !to_local) outbound_.push_back(f.id);
    if (!from_local && to_local) inbound_.push_back(f.id);
  }

  for (const auto& id : graph::topological_order(graph_)) {
    if (!local(id)) continue;
    const graph::ActorSpec* spec = graph_.find_actor(id);
    auto a = std::make_unique<ActorRt>();
    a->spec = spec;
    a->kernel = kernels.find(spec->kernel.name);
    if (!a->kernel) {
      throw Error("actor '" + id + "' uses unregistered kernel '" + spec->kernel.name + "'");
    }
    a->stream = spec->stream();
    a->state.actor_id = id;
    bool has_data_out = false;
    for (const auto& p : spec->ports) {
      PortRt rt;
      rt.spec = &p;
      rt.stream = a->stream.value_or(0);
      for (const auto& f : graph_.fifos) {
        bool mine = (graph::is_input(p.direction) ? f.to : f.from) == graph::PortRef{id, p.id};
        if (!mine) continue;
        rt.fifos.push_back(f.id);
        rt.buffers.push_back(buffers_.at(f.id).get());
        if (p.direction == PortDirection::in) {
          if (auto s = graph_.find_actor(f.from.actor)->stream()) rt.stream = *s;
        }
      }
      for (std::size_t t = 0; t < graph_.control_tables.size(); ++t) {
        const auto& table = graph_.control_tables[t];
        if (p.direction == PortDirection::control_out && table.control_port == graph::PortRef{id, p.id}) {
          rt.table = static_cast<int>(t);
        }
        if (p.direction == PortDirection::control_in && !rt.fifos.empty()) {
          const graph::FifoSpec* f = graph_.find_fifo(rt.fifos.front());
          if (table.control_port == f->from) rt.table = static_cast<int>(t);
        }
        if (!graph::is_control(p.direction)) {
          for (const auto& ref : table.controlled) {
            if (ref == graph::PortRef{id, p.id}) {
              rt.table = static_cast<int>(t);
              rt.self_controlled = table.control_port.actor == id;
            }
          }
        }
      }
      std::size_t index = a->ports.size();
      switch (p.direction) {
        case PortDirection::in: a->data_in.push_back(index); break;
        case PortDirection::out: a->data_out.push_back(index); has_data_out = true; break;
        case PortDirection::control_in: a->ctrl_in.push_back(index); break;
        case PortDirection::control_out: a->ctrl_out.push_back(index); break;
      }
      a->state.rates[p.id] = p.rate;
      a->ports.push_back(std::move(rt));
    }
    a->source = a->data_in.empty() && a->ctrl_in.empty();
    a->sink = !has_data_out;
    actor_index_[id] = actors_.size();
    actors_.push_back(std::move(a));
  }
}

Engine::~Engine() = default;

Engine::ActorRt& Engine::actor_rt(std::string_view id) {
  auto it = actor_index_.find(id);
  if (it == actor_index_.end()) throw Error("actor '" + std::string(id) + "' is not local to this engine");
  return *actors_[it->second];
}

const Engine::ActorRt& Engine::actor_rt(std::string_view id) const {
  return const_cast<Engine*>(this)->actor_rt(id);
}

std::vector<std::string> Engine::actors() const {
  std::vector<std::string> out;
  for (const auto& a : actors_) out.push_back(a->state.actor_id);
  return out;
}

bool Engine::is_local(std::string_view actor) const { return actor_index_.count(actor) > 0; }

std::vector<std::int64_t> Engine::effective_rates(const ActorRt& a, bool for_space) const {
  std::vector<std::int64_t> rates(a.ports.size());
  for (std::size_t i = 0; i < a.ports.size(); ++i) rates[i] = a.state.rates.at(a.ports[i].spec->id);
  // The pending control token decides this firing's rates.
  for (std::size_t c : a.ctrl_in) {
    const PortRt& cp = a.ports[c];
    if (cp.table < 0 || !cp.buffer() || cp.buffer()->occupancy() == 0) continue;
    const auto& table = graph_.control_tables[static_cast<std::size_t>(cp.table)];
    const auto* row = table.find_setting(decode_setting(cp.buffer()->peek(0)));
    if (!row) continue;
    for (std::size_t k = 0; k < table.controlled.size() && k < row->rates.size(); ++k) {
      if (table.controlled[k].actor != a.state.actor_id) continue;
      for (std::size_t i = 0; i < a.ports.size(); ++i) {
        if (a.ports[i].spec->id == table.controlled[k].port) rates[i] = row->rates[k];
      }
    }
  }
  // Rates this actor selects for itself are unknown until its kernel runs;
  // reserve space for the largest row.
  if (for_space) {
    for (std::size_t i = 0; i < a.ports.size(); ++i) {
      const PortRt& p = a.ports[i];
      if (!p.self_controlled || p.table < 0) continue;
      const auto& table = graph_.control_tables[static_cast<std::size_t>(p.table)];
      for (std::size_t k = 0; k < table.controlled.size(); ++k) {
        if (table.controlled[k] != graph::PortRef{a.state.actor_id, p.spec->id}) continue;
        for (const auto& row : table.settings) {
          if (k < row.rates.size()) rates[i] = std::max(rates[i], row.rates[k]);
        }
      }
    }
  }
  for (std::size_t i = 0; i < a.ports.size(); ++i) {
    if (a.ports[i].disabled) rates[i] = 0;
  }
  return rates;
}

bool Engine::enabled_impl(const ActorRt& a) const {
  if (halted_ || a.retired) return false;
  if (a.state.status == ActorStatus::dead_input_disabled || a.state.status == ActorStatus::failed) return false;
  if (a.source && config_.frame_budget && a.submitted >= *config_.frame_budget) return false;
  if (a.source && hooks_.source_ready && !hooks_.source_ready(a.state.actor_id)) return false;
  if (!a.data_in.empty() && std::all_of(a.data_in.begin(), a.data_in.end(),
                                        [&](std::size_t i) { return a.ports[i].disabled; })) {
    return false;
  }
  for (std::size_t c : a.ctrl_in) {
    const TokenBuffer* b = a.ports[c].buffer();
    if (!b || b->occupancy() < 1) return false;
  }
  auto rates = effective_rates(a, true);
  for (std::size_t i : a.data_in) {
    const TokenBuffer* b = a.ports[i].buffer();
    if (rates[i] > 0 && (!b || b->occupancy() < static_cast<std::size_t>(rates[i]))) return false;
  }
  for (std::size_t i : a.data_out) {
    const TokenBuffer* b = a.ports[i].buffer();
    if (b && rates[i] > 0 && b->free_space() < static_cast<std::size_t>(rates[i])) return false;
  }
  for (std::size_t i : a.ctrl_out) {
    for (const TokenBuffer* b : a.ports[i].buffers) {
      if (b->free_space() < static_cast<std::size_t>(std::max<std::int64_t>(rates[i], 1))) return false;
    }
  }
  return true;
}

bool Engine::enabled(std::string_view actor) const { return enabled_impl(actor_rt(actor)); }

FiringRecord Engine::fire(std::string_view actor) {
  ActorRt& a = actor_rt(actor);
  if (!enabled_impl(a)) throw Error("actor '" + std::string(actor) + "' is not enabled");
  if (a.source && hooks_.source_gate && !hooks_.source_gate(a.state.actor_id, a.submitted + 1)) {
    halted_ = true;
    FiringRecord rec;
    rec.actor = a.state.actor_id;
    rec.error = "halted";
    return rec;
  }
  return fire_impl(a);
}

FiringRecord Engine::fire_impl(ActorRt& a) {
  FiringRecord rec;
  rec.actor = a.state.actor_id;
  const auto t0 = Clock::now();
  MetricsSink& metrics = *hooks_.metrics;
  a.state.status = ActorStatus::firing;

  auto fail = [&](std::string message) {
    a.state.status = ActorStatus::failed;
    metrics.record_failure({hooks_.node_id, a.state.actor_id, message, metrics.now_us()});
    rec.error = std::move(message);
    rec.elapsed = std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - t0);
    return rec;
  };

  std::vector<std::int64_t> rates = effective_rates(a, false);
  for (std::size_t c : a.ctrl_in) {
    PortRt& cp = a.ports[c];
    auto index = decode_setting(cp.buffer()->peek(0));
    if (cp.table >= 0 && !graph_.control_tables[static_cast<std::size_t>(cp.table)].find_setting(index)) {
      cp.buffer()->pop(1);
      return fail("control token carries unknown setting index " + std::to_string(index));
    }
    cp.buffer()->pop(1);
    rec.consumed[cp.spec->id] = 1;
  }

  struct Tag {
    int stream;
    std::uint64_t frame;
  };
  std::vector<Tag> tags;
  auto& inputs = a.inputs;
  inputs.resize(a.data_in.size());
  for (auto& in : inputs) in.clear();
  bool all_in_zero = true;
  for (std::size_t k = 0; k < a.data_in.size(); ++k) {
    PortRt& p = a.ports[a.data_in[k]];
    auto r = rates[a.data_in[k]];
    if (r <= 0) continue;
    all_in_zero = false;
    TokenBuffer& b = *p.buffer();
    b.copy_front(static_cast<std::size_t>(r), inputs[k]);
    if (b.token_bytes() >= kFrameTagBytes) {
      for (std::int64_t t = 0; t < r; ++t) tags.push_back({p.stream, read_frame_tag(b.peek(static_cast<std::size_t>(t)))});
    }
    b.pop(static_cast<std::size_t>(r));
    rec.consumed[p.spec->id] = r;
  }
  bool all_out_zero = std::all_of(a.data_out.begin(), a.data_out.end(), [&](std::size_t i) {
    return rates[i] == 0 || a.ports[i].self_controlled;
  });
  const bool noop = !a.data_in.empty() && all_in_zero && all_out_zero;

  std::uint64_t frame;
  if (a.source) {
    frame = ++a.submitted;
  } else if (!tags.empty()) {
    frame = tags.front().frame;
  } else {
    frame = a.state.fire_count + 1;
  }
  rec.frame = frame;
  int stream = a.stream ? *a.stream : (tags.empty() ? 0 : tags.front().stream);

  if (a.source) metrics.record({frame, stream, hooks_.node_id, a.state.actor_id, FrameEventKind::submit, metrics.now_us()});
  metrics.record({frame, stream, hooks_.node_id, a.state.actor_id, FrameEventKind::fire_start, metrics.now_us()});

  auto& outputs = a.outputs;
  outputs.resize(a.data_out.size());
  auto size_outputs = [&] {
    for (std::size_t k = 0; k < a.data_out.size(); ++k) {
      const PortRt& p = a.ports[a.data_out[k]];
      outputs[k].assign(static_cast<std::size_t>(std::max<std::int64_t>(rates[a.data_out[k]], 0)) *
                            static_cast<std::size_t>(p.spec->token_bytes),
                        std::byte{0});
    }
  };
  size_outputs();

  std::optional<std::int64_t> emitted;
  if (!noop) {
    KernelContext ctx;
    for (auto& in : inputs) ctx.inputs_.emplace_back(in);
    for (auto& out : outputs) ctx.outputs_.push_back(&out);
    ctx.params_ = &a.spec->kernel.params;
    ctx.actor_id_ = &a.state.actor_id;
    ctx.frame_ = frame;
    ctx.firing_ = a.state.fire_count;
    ctx.seed_ = config_.seed;
    ctx.wait_mode_ = config_.wait_mode;
    ctx.cost_hint_ = a.kernel->cost_hint;
    if (auto it = a.spec->kernel.params.find("cost_us");
        it != a.spec->kernel.params.end() && it->is_number()) {
      ctx.cost_hint_ = std::chrono::microseconds(it->get<std::int64_t>());
    }
    if (!a.ctrl_out.empty()) {
      ctx.on_control_ = [&](std::int64_t index) {
        for (std::size_t c : a.ctrl_out) {
          const PortRt& cp = a.ports[c];
          if (cp.table < 0) continue;
          const auto& table = graph_.control_tables[static_cast<std::size_t>(cp.table)];
          const auto* row = table.find_setting(index);
          if (!row) throw Error("unknown setting index " + std::to_string(index));
          for (std::size_t k = 0; k < table.controlled.size(); ++k) {
            if (table.controlled[k].actor != a.state.actor_id) continue;
            for (std::size_t i = 0; i < a.ports.size(); ++i) {
              if (a.ports[i].spec->id == table.controlled[k].port && !a.ports[i].disabled) {
                rates[i] = row->rates[k];
              }
            }
          }
        }
        emitted = index;
        size_outputs();
      };
    }
    try {
      a.kernel->behavior(ctx);
    } catch (const std::exception& e) {
      return fail("kernel '" + a.kernel->name + "' failed: " + e.what());
    }
    rec.kernel_invoked = true;
  }

  // Self-controlled ports without an explicit choice fall back to the first row.
  if (!emitted && !a.ctrl_out.empty() && !noop) {
    for (std::size_t c : a.ctrl_out) {
      const PortRt& cp = a.ports[c];
      if (cp.table < 0) continue;
      const auto& table = graph_.control_tables[static_cast<std::size_t>(cp.table)];
      if (!table.settings.empty()) emitted = table.settings.front().index;
    }
    bool resize = false;
    for (std::size_t i = 0; i < a.ports.size(); ++i) resize = resize || a.ports[i].self_controlled;
    if (resize && emitted) {
      for (std::size_t c : a.ctrl_out) {
        const PortRt& cp = a.ports[c];
        if (cp.table < 0) continue;
        const auto& table = graph_.control_tables[static_cast<std::size_t>(cp.table)];
        const auto* row = table.find_setting(*emitted);
        for (std::size_t k = 0; row && k < table.controlled.size(); ++k) {
          for (std::size_t i = 0; i < a.ports.size(); ++i) {
            if (table.controlled[k] == graph::PortRef{a.state.actor_id, a.ports[i].spec->id} &&
                !a.ports[i].disabled) {
              rates[i] = row->rates[k];
            }
          }
        }
      }
      for (std::size_t k = 0; k < a.data_out.size(); ++k) {
        auto expected = static_cast<std::size_t>(rates[a.data_out[k]]) *
                        static_cast<std::size_t>(a.ports[a.data_out[k]].spec->token_bytes);
        outputs[k].resize(expected, std::byte{0});
      }
    }
  }

  for (std::size_t k = 0; k < a.data_out.size(); ++k) {
    const PortRt& p = a.ports[a.data_out[k]];
    auto expected = static_cast<std::size_t>(std::max<std::int64_t>(rates[a.data_out[k]], 0)) *
                    static_cast<std::size_t>(p.spec->token_bytes);
    if (outputs[k].size() != expected) {
      return fail("payload size mismatch on port '" + p.spec->id + "': " + std::to_string(outputs[k].size()) +
                  " bytes, expected " + std::to_string(expected));
    }
  }

  for (std::size_t k = 0; k < a.data_out.size(); ++k) {
    const PortRt& p = a.ports[a.data_out[k]];
    auto tb = static_cast<std::size_t>(p.spec->token_bytes);
    std::size_t count = outputs[k].size() / tb;
    for (std::size_t t = 0; t < count; ++t) {
      std::span<std::byte> token(outputs[k].data() + t * tb, tb);
      if (tb >= kFrameTagBytes) write_frame_tag(token, frame);
      if (p.buffer() && !p.disabled) p.buffer()->push(token);
    }
    if (count) rec.produced[p.spec->id] = static_cast<std::int64_t>(count);
  }
  if (emitted) {
    for (std::size_t c : a.ctrl_out) {
      const PortRt& cp = a.ports[c];
      auto token = encode_setting(*emitted, static_cast<std::size_t>(cp.spec->token_bytes));
      auto r = std::max<std::int64_t>(cp.spec->rate, 1);
      for (TokenBuffer* b : cp.buffers) {
        for (std::int64_t t = 0; t < r; ++t) b->push(token);
      }
      rec.produced[cp.spec->id] = r;
    }
  }

  for (std::size_t i = 0; i < a.ports.size(); ++i) {
    if (a.ports[i].spec->dynamic) a.state.rates[a.ports[i].spec->id] = rates[i];
  }

  if (a.sink && !tags.empty()) {
    std::vector<Tag> done;
    for (const auto& t : tags) {
      bool seen = std::any_of(done.begin(), done.end(), [&](const Tag& d) {
        return d.stream == t.stream && d.frame == t.frame;
      });
      if (seen) continue;
      done.push_back(t);
      metrics.record({t.frame, t.stream, hooks_.node_id, a.state.actor_id, FrameEventKind::complete, metrics.now_us()});
    }
  }
  if (a.sink && config_.record_sink_payloads && !all_in_zero) {
    std::vector<std::byte> all;
    for (const auto& in : inputs) all.insert(all.end(), in.begin(), in.end());
    a.sink_log.push_back(std::move(all));
  }

  metrics.record({frame, stream, hooks_.node_id, a.state.actor_id, FrameEventKind::fire_end, metrics.now_us()});
  ++a.state.fire_count;
  a.state.status = ActorStatus::idle;
  rec.elapsed = std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - t0);
  return rec;
}

ProgressReport Engine::step() {
  ProgressReport report;
  if (halted_) return report;
  if (config_.mode == SchedulingMode::deterministic_sequential) {
    for (auto& a : actors_) {
      if (!enabled_impl(*a)) continue;
      auto rec = fire(a->state.actor_id);
      if (!halted_) report.fired.push_back(rec.actor);
      return report;
    }
    return report;
  }

  // Concurrent: every enabled actor fires once. Firings only touch their own
  // ports' SPSC buffers, so the enabled set cannot conflict.
  std::vector<ActorRt*> ready;
  for (auto& a : actors_) {
    if (!enabled_impl(*a)) continue;
    if (a->source && hooks_.source_gate && !hooks_.source_gate(a->state.actor_id, a->submitted + 1)) {
      halted_ = true;
      return report;
    }
    ready.push_back(a.get());
  }
  if (ready.empty()) return report;
  {
    std::vector<std::jthread> workers;
    for (std::size_t i = 1; i < ready.size(); ++i) {
      workers.emplace_back([this, a = ready[i]] { fire_impl(*a); });
    }
    fire_impl(*ready.front());
  }
  for (ActorRt* a : ready) report.fired.push_back(a->state.actor_id);
  return report;
}

const ActorState& Engine::state(std::string_view actor) const { return actor_rt(actor).state; }

TokenBuffer& Engine::buffer(std::string_view fifo) {
  auto it = buffers_.find(fifo);
  if (it == buffers_.end()) throw Error("fifo '" + std::string(fifo) + "' has no local buffer");
  return *it->second;
}

const TokenBuffer& Engine::buffer(std::string_view fifo) const { return const_cast<Engine*>(this)->buffer(fifo); }

bool Engine::has_buffer(std::string_view fifo) const { return buffers_.count(fifo) > 0; }
std::vector<std::string> Engine::inbound_boundary() const { return inbound_; }
std::vector<std::string> Engine::outbound_boundary() const { return outbound_; }

std::uint64_t Engine::frames_submitted(std::string_view actor) const { return actor_rt(actor).submitted; }

bool Engine::sources_exhausted() const {
  if (halted_) return true;
  for (const auto& a : actors_) {
    if (!a->source || a->retired || a->state.status == ActorStatus::failed) continue;
    if (!config_.frame_budget || a->submitted < *config_.frame_budget) return false;
  }
  return true;
}

void Engine::disable_port(std::string_view actor, std::string_view port) {
  for (auto& p : actor_rt(actor).ports) {
    if (p.spec->id == port) p.disabled = true;
  }
}

void Engine::enable_port(std::string_view actor, std::string_view port) {
  for (auto& p : actor_rt(actor).ports) {
    if (p.spec->id == port) p.disabled = false;
  }
}

bool Engine::port_disabled(std::string_view actor, std::string_view port) const {
  for (const auto& p : actor_rt(actor).ports) {
    if (p.spec->id == port) return p.disabled;
  }
  return false;
}

void Engine::mark_link_dead(std::string_view fifo) { dead_links_.emplace(fifo); }
bool Engine::link_dead(std::string_view fifo) const { return dead_links_.count(fifo) > 0; }

std::vector<std::string> Engine::mark_dead_input(std::string_view actor) {
  std::vector<std::string> marked;
  ActorRt& first = actor_rt(actor);
  if (first.state.status != ActorStatus::dead_input_disabled) {
    first.state.status = ActorStatus::dead_input_disabled;
    marked.push_back(first.state.actor_id);
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (auto& a : actors_) {
      if (a->state.status == ActorStatus::dead_input_disabled || a->data_in.empty()) continue;
      bool all_dead = std::all_of(a->data_in.begin(), a->data_in.end(), [&](std::size_t i) {
        const PortRt& p = a->ports[i];
        if (p.disabled || p.fifos.empty()) return true;
        if (dead_links_.count(p.fifo())) return true;
        const graph::FifoSpec* f = graph_.find_fifo(p.fifo());
        auto it = actor_index_.find(f->from.actor);
        return it != actor_index_.end() &&
               actors_[it->second]->state.status == ActorStatus::dead_input_disabled;
      });
      if (all_dead) {
        a->state.status = ActorStatus::dead_input_disabled;
        marked.push_back(a->state.actor_id);
        changed = true;
      }
    }
  }
  return marked;
}

void Engine::retire_actor(std::string_view actor) { actor_rt(actor).retired = true; }

bool Engine::has_pending_work() const {
  if (!sources_exhausted()) return true;
  for (const auto& [id, b] : buffers_) {
    if (dead_links_.count(id) || b->occupancy() == 0) continue;
    const auto* f = graph_.find_fifo(id);
    auto it = f ? actor_index_.find(f->to.actor) : actor_index_.end();
    if (it != actor_index_.end()) {
      const ActorRt& c = *actors_[it->second];
      if (c.retired || c.state.status == ActorStatus::dead_input_disabled || c.state.status == ActorStatus::failed) {
        continue;
      }
    }
    return true;
  }
  return false;
}

std::optional<DeadlockDiagnosis> Engine::detect_deadlock() const {
  for (const auto& a : actors_) {
    if (enabled_impl(*a)) return std::nullopt;
  }
  if (!has_pending_work()) return std::nullopt;

  DeadlockDiagnosis d;
  for (const auto& a : actors_) {
    if (a->retired || a->state.status == ActorStatus::failed) continue;
    if (a->source && config_.frame_budget && a->submitted >= *config_.frame_budget) continue;
    BlockedActor b;
    b.actor = a->state.actor_id;
    bool dead = a->state.status == ActorStatus::dead_input_disabled;
    auto rates = effective_rates(*a, true);
    for (std::size_t c : a->ctrl_in) {
      const PortRt& p = a->ports[c];
      std::size_t have = p.buffer() ? p.buffer()->occupancy() : 0;
      if (have < 1) {
        b.waits.push_back({p.spec->id, p.fifo(), BlockedPort::Need::control_token, 1,
                           static_cast<std::int64_t>(have), dead_links_.count(p.fifo()) > 0});
      }
    }
    for (std::size_t i : a->data_in) {
      const PortRt& p = a->ports[i];
      std::size_t have = p.buffer() ? p.buffer()->occupancy() : 0;
      if (rates[i] > 0 && have < static_cast<std::size_t>(rates[i])) {
        b.waits.push_back({p.spec->id, p.fifo(), BlockedPort::Need::input_tokens, rates[i],
                           static_cast<std::int64_t>(have), dead_links_.count(p.fifo()) > 0});
      }
    }
    for (std::size_t i : a->data_out) {
      const PortRt& p = a->ports[i];
      if (!p.buffer() || rates[i] <= 0) continue;
      std::size_t space = p.buffer()->free_space();
      if (space < static_cast<std::size_t>(rates[i])) {
        b.waits.push_back({p.spec->id, p.fifo(), BlockedPort::Need::output_space, rates[i],
                           static_cast<std::int64_t>(space), dead_links_.count(p.fifo()) > 0});
      }
    }
    if (b.waits.empty() && !dead) continue;
    b.dead_link = dead;
    d.blocked.push_back(std::move(b));
  }
  // Inputs from a local producer that is not blocked itself (an exhausted,
  // retired or failed actor) are drained, not blocked.
  for (bool pruned = true; pruned;) {
    pruned = false;
    for (auto& b : d.blocked) {
      auto drained = [&](const BlockedPort& w) {
        if (w.need != BlockedPort::Need::input_tokens && w.need != BlockedPort::Need::control_token) return false;
        const std::string& producer = graph_.find_fifo(w.fifo)->from.actor;
        return is_local(producer) && !d.find(producer);
      };
      auto before = b.waits.size();
      b.waits.erase(std::remove_if(b.waits.begin(), b.waits.end(), drained), b.waits.end());
      pruned = pruned || b.waits.size() != before;
    }
    auto idle = [](const BlockedActor& b) { return b.waits.empty() && !b.dead_link; };
    auto before = d.blocked.size();
    d.blocked.erase(std::remove_if(d.blocked.begin(), d.blocked.end(), idle), d.blocked.end());
    pruned = pruned || d.blocked.size() != before;
  }
  // Attribute waits to dead links transitively: a wait is dead when its FIFO
  // is dead or the local actor on the other end is itself dead-blocked.
  auto blocked_dead = [&](const std::string& actor) {
    const BlockedActor* other = d.find(actor);
    return other && other->dead_link;
  };
  bool changed = true;
  while (changed) {
    changed = false;
    for (auto& b : d.blocked) {
      for (auto& w : b.waits) {
        if (w.link_dead) continue;
        const graph::FifoSpec* f = graph_.find_fifo(w.fifo);
        const std::string& peer = w.need == BlockedPort::Need::output_space ? f->to.actor : f->from.actor;
        if (is_local(peer) && blocked_dead(peer)) {
          w.link_dead = true;
          changed = true;
        }
      }
      bool all_dead = !b.waits.empty() &&
                      std::all_of(b.waits.begin(), b.waits.end(), [](const BlockedPort& w) { return w.link_dead; });
      if (all_dead && !b.dead_link) {
        b.dead_link = true;
        changed = true;
      }
    }
  }
  for (const auto& [id, b] : buffers_) d.census.push_back({id, b->occupancy(), b->capacity()});
  return d;
}

const std::vector<std::vector<std::byte>>& Engine::sink_payloads(std::string_view actor) const {
  return actor_rt(actor).sink_log;
}

int Engine::stream_of(std::string_view actor) const { return actor_rt(actor).stream.value_or(0); }

RunMetrics run_until(Engine& engine, std::uint64_t frames) {
  RunMetrics m;
  m.frames_requested = frames;
  m.policy = engine.config().fairness;
  m.wait_mode = std::string(to_string(engine.config().wait_mode));
  if (frames == 0) return m;
  engine.set_frame_budget(frames);
  while (!engine.step().quiescent()) {
  }
  m.events = engine.metrics().events();
  m.failures = engine.metrics().failures();
  m.summary = summarize(m.events, frames);
  if (auto d = engine.detect_deadlock(); d && d->is_deadlock()) throw DeadlockError(std::move(*d), std::move(m));
  return m;
}

}  // namespace dflow::runtime
