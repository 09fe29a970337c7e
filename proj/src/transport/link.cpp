#include "dflow/transport/link.hpp"

#include <algorithm>
#include <sstream>

namespace dflow::transport {

using namespace std::chrono_literals;

std::chrono::milliseconds LinkConfig::backoff(int failures) const {
  auto d = backoff_base;
  for (int i = 1; i < failures && d < backoff_cap; ++i) d *= 2;
  return std::min(d, backoff_cap);
}

std::chrono::milliseconds LinkConfig::passive_grace() const {
  std::chrono::milliseconds total{0};
  for (int i = 1; i <= retry_budget; ++i) total += backoff(i);
  return total + idle_timeout + handshake_timeout;
}

std::string_view to_string(LinkStatus s) {
  switch (s) {
    case LinkStatus::connecting: return "connecting";
    case LinkStatus::alive: return "alive";
    case LinkStatus::degraded: return "degraded";
    case LinkStatus::dead: return "dead";
  }
  return "?";
}

struct NodeTransport::Out {
  LinkState st;
  runtime::TokenBuffer* buf = nullptr;
  std::size_t token_bytes = 0;
  std::unique_ptr<Connection> conn;
  FrameReader reader;
  bool established = false;
  Clock::time_point next_attempt{};
  Clock::time_point handshake_deadline{};
  Clock::time_point last_tx{};
  int failures = 0;
  std::deque<std::vector<std::byte>> store;
  std::deque<std::vector<std::byte>> replay;
};

struct NodeTransport::In {
  LinkState st;
  runtime::TokenBuffer* buf = nullptr;
  std::size_t token_bytes = 0;
  std::unique_ptr<Connection> conn;
  FrameReader reader;
  Clock::time_point last_tx{};
  Clock::time_point give_up_at{};
  std::uint64_t ack_sent = ~0ull;
};

struct NodeTransport::Pending {
  std::unique_ptr<Connection> conn;
  FrameReader reader;
  Clock::time_point deadline;
};

namespace {

std::uint32_t fifo_index(const graph::GraphSpec& g, std::string_view fifo) {
  for (std::size_t i = 0; i < g.fifos.size(); ++i) {
    if (g.fifos[i].id == fifo) return static_cast<std::uint32_t>(i);
  }
  throw TransportError("unknown fifo '" + std::string(fifo) + "'");
}

std::string ms_text(Clock::duration d) {
  return std::to_string(std::chrono::duration_cast<std::chrono::milliseconds>(d).count()) + " ms";
}

}  // namespace

NodeTransport::NodeTransport(std::shared_ptr<Network> network, runtime::Engine& engine,
                             const graph::MappingSpec& mapping, std::uint64_t graph_hash, LinkConfig config)
    : network_(std::move(network)), engine_(engine), mapping_(mapping), hash_(graph_hash), config_(config) {
  const auto& g = engine_.graph();
  auto binding = [&](const std::string& fifo) {
    const auto* b = mapping_.find_link(fifo);
    if (!b || b->address.empty()) throw TransportError("fifo '" + fifo + "' crosses nodes but has no link address");
    return b;
  };
  for (const auto& fifo : engine_.outbound_boundary()) {
    auto l = std::make_unique<Out>();
    const auto* spec = g.find_fifo(fifo);
    l->st.fifo = fifo;
    l->st.fifo_id = fifo_index(g, fifo);
    l->st.peer = mapping_.node_of(spec->to.actor);
    l->st.address = binding(fifo)->address;
    l->st.outbound = true;
    l->st.window = static_cast<std::size_t>(spec->capacity);
    l->buf = &engine_.buffer(fifo);
    l->token_bytes = l->buf->token_bytes();
    out_.push_back(std::move(l));
  }
  for (const auto& fifo : engine_.inbound_boundary()) {
    auto l = std::make_unique<In>();
    const auto* spec = g.find_fifo(fifo);
    l->st.fifo = fifo;
    l->st.fifo_id = fifo_index(g, fifo);
    l->st.peer = mapping_.node_of(spec->from.actor);
    l->st.address = binding(fifo)->address;
    l->buf = &engine_.buffer(fifo);
    l->token_bytes = l->buf->token_bytes();
    in_.push_back(std::move(l));
  }
}

NodeTransport::~NodeTransport() { shutdown(); }

void NodeTransport::start() {
  if (started_) return;
  started_ = true;
  auto now = Clock::now();
  std::vector<std::string> bound;
  for (auto& l : in_) {
    l->give_up_at = now + config_.passive_grace();
    if (std::find(bound.begin(), bound.end(), l->st.address) != bound.end()) continue;
    try {
      listeners_.push_back(network_->listen(l->st.address));
    } catch (const Error& e) {
      throw TransportError(e.what());
    }
    bound.push_back(l->st.address);
  }
  for (auto& l : out_) l->next_attempt = now;
}

NodeTransport::Out* NodeTransport::find_out(std::string_view fifo) const {
  for (const auto& l : out_) {
    if (l->st.fifo == fifo) return l.get();
  }
  return nullptr;
}

NodeTransport::In* NodeTransport::find_in(std::string_view fifo) const {
  for (const auto& l : in_) {
    if (l->st.fifo == fifo) return l.get();
  }
  return nullptr;
}

void NodeTransport::set_status(LinkState& st, LinkStatus to, const std::string& reason) {
  std::lock_guard lock(state_mu_);
  if (st.status == to || st.status == LinkStatus::dead) return;
  runtime::LivenessEvent e;
  e.node = engine_.node_id();
  e.link = st.fifo;
  e.from = std::string(to_string(st.status));
  e.to = std::string(to_string(to));
  if (auto m = engine_.metrics_ptr()) {
    e.t_us = m->now_us();
    if (!reason.empty() && to != LinkStatus::alive) {
      m->record_failure({engine_.node_id(), st.fifo, "link " + e.to + ": " + reason, e.t_us});
    }
    m->record_liveness(e);
  }
  st.status = to;
  if (to == LinkStatus::dead) newly_dead_.push_back(st.fifo);
}

bool NodeTransport::send_frame(Connection& c, const TokenFrame& f, std::optional<std::size_t> token_bytes) {
  auto bytes = encode_frame(f, token_bytes);
  return c.send(bytes);
}

void NodeTransport::out_attempt_failed(Out& l, const std::string& reason, Clock::time_point now) {
  if (l.conn) l.conn->close();
  l.conn.reset();
  l.established = false;
  ++l.failures;
  {
    std::lock_guard lock(state_mu_);
    l.st.retry_count = l.failures;
    l.st.last_error = reason;
  }
  if (l.failures >= config_.retry_budget) {
    set_status(l.st, LinkStatus::dead,
               reason + " (" + std::to_string(l.failures) + " attempts)");
    return;
  }
  l.next_attempt = now + config_.backoff(l.failures);
}

void NodeTransport::out_transport_error(Out& l, const std::string& reason, Clock::time_point now) {
  if (l.conn) l.conn->close();
  l.conn.reset();
  l.established = false;
  {
    std::lock_guard lock(state_mu_);
    l.st.last_error = reason;
  }
  if (l.st.status == LinkStatus::alive) set_status(l.st, LinkStatus::degraded, reason);
  l.next_attempt = now;
}

void NodeTransport::in_transport_error(In& l, const std::string& reason, Clock::time_point now) {
  if (l.conn) l.conn->close();
  l.conn.reset();
  {
    std::lock_guard lock(state_mu_);
    l.st.last_error = reason;
  }
  if (l.st.status == LinkStatus::alive) set_status(l.st, LinkStatus::degraded, reason);
  l.give_up_at = now + config_.passive_grace();
}

void NodeTransport::pump_accept(Clock::time_point now) {
  for (auto& listener : listeners_) {
    while (auto c = listener->accept()) {
      auto p = std::make_unique<Pending>();
      p->conn = std::move(c);
      p->deadline = now + config_.handshake_timeout;
      pending_.push_back(std::move(p));
    }
  }
  for (auto it = pending_.begin(); it != pending_.end();) {
    Pending& p = **it;
    std::vector<std::byte> bytes;
    bool open = p.conn->receive(bytes);
    p.reader.feed(bytes);
    auto f = p.reader.next();
    bool drop = p.reader.error() != DecodeError::none || (!f && (!open || now > p.deadline));
    if (f) {
      drop = true;
      std::optional<HelloPayload> hello;
      if (f->type == FrameType::hello) hello = decode_hello(f->payload);
      In* l = nullptr;
      for (auto& cand : in_) {
        if (cand->st.fifo_id == f->fifo_id) l = cand.get();
      }
      if (hello && l && l->st.status != LinkStatus::dead) {
        HelloPayload mine{hash_, engine_.node_id(), {l->st.fifo_id}};
        TokenFrame ack{FrameType::hello_ack, l->st.fifo_id, l->st.delivered, 0, encode_hello(mine)};
        send_frame(*p.conn, ack);
        if (hello->graph_hash != hash_) {
          std::lock_guard lock(state_mu_);
          l->st.last_error = "graph hash mismatch with node '" + hello->node_id + "'";
          if (auto m = engine_.metrics_ptr()) {
            m->record_failure({engine_.node_id(), l->st.fifo, l->st.last_error, m->now_us()});
          }
        } else {
          TokenFrame resume{FrameType::resume, l->st.fifo_id, l->st.delivered, 0, encode_resume(l->st.delivered)};
          if (send_frame(*p.conn, resume)) {
            if (l->conn) l->conn->close();
            l->conn = std::move(p.conn);
            l->reader = std::move(p.reader);
            l->st.last_rx = now;
            l->last_tx = now;
            l->ack_sent = l->st.delivered;
            {
              std::lock_guard lock(state_mu_);
              ++l->st.establishments;
              l->st.peer = hello->node_id;
            }
            set_status(l->st, LinkStatus::alive, {});
          }
        }
      }
    }
    if (drop) {
      if (p.conn) p.conn->close();
      it = pending_.erase(it);
    } else {
      ++it;
    }
  }
}

bool NodeTransport::pump_in(In& l, Clock::time_point now) {
  if (l.st.status == LinkStatus::dead) return false;
  bool moved = false;
  if (!l.conn) {
    if (!l.st.peer_finished && now >= l.give_up_at) {
      set_status(l.st, LinkStatus::dead, "peer did not reconnect within " + ms_text(config_.passive_grace()));
    }
    return false;
  }
  std::vector<std::byte> bytes;
  bool open = l.conn->receive(bytes);
  l.reader.feed(bytes);
  while (auto f = l.reader.next()) {
    l.st.last_rx = now;
    switch (f->type) {
      case FrameType::data: {
        if (f->payload.size() != static_cast<std::size_t>(f->token_count) * l.token_bytes) {
          in_transport_error(l, "DATA payload does not match token size", now);
          return moved;
        }
        for (std::uint16_t i = 0; i < f->token_count; ++i) {
          std::uint64_t seq = f->sequence + i;
          if (seq < l.st.delivered) {
            std::lock_guard lock(state_mu_);
            ++l.st.duplicates;
            continue;
          }
          if (seq > l.st.delivered) {
            in_transport_error(l, "sequence gap: expected " + std::to_string(l.st.delivered) + ", got " +
                                      std::to_string(seq), now);
            return moved;
          }
          if (l.buf->free_space() == 0) {
            in_transport_error(l, "peer exceeded the FIFO capacity", now);
            return moved;
          }
          l.buf->push(std::span<const std::byte>(f->payload).subspan(i * l.token_bytes, l.token_bytes));
          {
            std::lock_guard lock(state_mu_);
            ++l.st.delivered;
          }
          moved = true;
        }
        break;
      }
      case FrameType::heartbeat:
        // The sender's cursor is past what arrived: the tail was lost.
        if (f->sequence > l.st.delivered) {
          in_transport_error(l, "sequence gap: expected " + std::to_string(l.st.delivered) + ", peer at " +
                                    std::to_string(f->sequence), now);
          return moved;
        }
        break;
      case FrameType::bye:
        l.st.peer_finished = true;
        break;
      default:
        in_transport_error(l, "unexpected " + std::string(to_string(f->type)) + " frame", now);
        return moved;
    }
  }
  if (l.reader.error() != DecodeError::none) {
    in_transport_error(l, std::string(to_string(l.reader.error())), now);
    return moved;
  }
  if (!open) {
    if (l.st.peer_finished) {
      l.conn->close();
      l.conn.reset();
    } else {
      in_transport_error(l, l.conn->error().empty() ? "connection closed" : l.conn->error(), now);
    }
    return moved;
  }
  std::uint64_t consumed = l.buf->consumed_total();
  if (consumed != l.ack_sent || now - l.last_tx >= config_.heartbeat_interval) {
    if (!send_frame(*l.conn, {FrameType::heartbeat, l.st.fifo_id, consumed, 0, {}})) {
      in_transport_error(l, l.conn->error(), now);
      return moved;
    }
    if (consumed != l.ack_sent) moved = true;
    l.ack_sent = consumed;
    l.last_tx = now;
  }
  if (!l.st.peer_finished && now - l.st.last_rx > config_.idle_timeout) {
    in_transport_error(l, "no data received for " + ms_text(now - l.st.last_rx), now);
  }
  return moved;
}

bool NodeTransport::pump_out(Out& l, Clock::time_point now) {
  if (l.st.status == LinkStatus::dead) return false;
  bool moved = false;
  if (!l.conn) {
    if (now < l.next_attempt) return false;
    std::string err;
    l.conn = network_->dial(l.st.address, err);
    if (!l.conn) {
      out_attempt_failed(l, err.empty() ? "connection refused" : err, now);
      return false;
    }
    l.reader = FrameReader();
    l.established = false;
    l.handshake_deadline = now + config_.handshake_timeout;
    HelloPayload hello{hash_, engine_.node_id(), {l.st.fifo_id}};
    if (!send_frame(*l.conn, {FrameType::hello, l.st.fifo_id, 0, 0, encode_hello(hello)})) {
      out_attempt_failed(l, l.conn->error(), now);
      return false;
    }
    l.last_tx = now;
  }

  auto ack_to = [&](std::uint64_t a) {
    std::lock_guard lock(state_mu_);
    while (l.st.acked < a) {
      l.store.pop_front();
      ++l.st.acked;
      moved = true;
    }
  };

  std::vector<std::byte> bytes;
  bool open = l.conn->receive(bytes);
  l.reader.feed(bytes);
  while (auto f = l.reader.next()) {
    l.st.last_rx = now;
    switch (f->type) {
      case FrameType::hello_ack: {
        auto h = decode_hello(f->payload);
        if (!h) {
          out_attempt_failed(l, "malformed HELLO_ACK", now);
          return moved;
        }
        if (h->graph_hash != hash_) {
          mark_dead(l.st.fifo, "graph hash mismatch with node '" + h->node_id + "'");
          return moved;
        }
        break;
      }
      case FrameType::resume: {
        auto r = decode_resume(f->payload);
        if (!r || *r < l.st.acked || *r > l.st.taken) {
          out_attempt_failed(l, "bad RESUME", now);
          return moved;
        }
        ack_to(*r);
        {
          std::lock_guard lock(state_mu_);
          l.st.next_send = *r;
          l.st.retry_count = 0;
          ++l.st.establishments;
        }
        l.established = true;
        l.failures = 0;
        set_status(l.st, LinkStatus::alive, {});
        break;
      }
      case FrameType::heartbeat:
        if (l.established && f->sequence > l.st.acked && f->sequence <= l.st.taken) ack_to(f->sequence);
        break;
      case FrameType::bye:
        l.st.peer_finished = true;
        break;
      default:
        out_transport_error(l, "unexpected " + std::string(to_string(f->type)) + " frame", now);
        return moved;
    }
  }
  if (l.reader.error() != DecodeError::none) {
    if (l.reader.error() == DecodeError::bad_version) {
      mark_dead(l.st.fifo, "version mismatch");
    } else if (l.established) {
      out_transport_error(l, std::string(to_string(l.reader.error())), now);
    } else {
      out_attempt_failed(l, std::string(to_string(l.reader.error())), now);
    }
    return moved;
  }
  if (!open) {
    std::string why = l.conn->error().empty() ? "connection closed" : l.conn->error();
    if (l.established) out_transport_error(l, why, now);
    else out_attempt_failed(l, why, now);
    return moved;
  }
  if (!l.established) {
    if (now > l.handshake_deadline) out_attempt_failed(l, "handshake timeout", now);
    return moved;
  }

  // Take new tokens while the remote FIFO has room for them.
  while (l.st.taken < l.st.acked + l.st.window) {
    if (!l.replay.empty()) {
      l.store.push_back(std::move(l.replay.front()));
      l.replay.pop_front();
    } else if (l.buf->occupancy() > 0) {
      auto t = l.buf->peek(0);
      l.store.emplace_back(t.begin(), t.end());
      l.buf->pop(1);
    } else {
      break;
    }
    std::lock_guard lock(state_mu_);
    ++l.st.taken;
    moved = true;
  }
  while (l.st.next_send < l.st.taken) {
    auto n = static_cast<std::uint16_t>(std::min<std::uint64_t>(l.st.taken - l.st.next_send, config_.max_tokens_per_frame));
    TokenFrame f{FrameType::data, l.st.fifo_id, l.st.next_send, n, {}};
    f.payload.reserve(n * l.token_bytes);
    for (std::uint16_t i = 0; i < n; ++i) {
      const auto& t = l.store[static_cast<std::size_t>(l.st.next_send - l.st.acked) + i];
      f.payload.insert(f.payload.end(), t.begin(), t.end());
    }
    if (!send_frame(*l.conn, f, l.token_bytes)) {
      out_transport_error(l, l.conn->error(), now);
      return moved;
    }
    {
      std::lock_guard lock(state_mu_);
      l.st.next_send += n;
    }
    l.last_tx = now;
  }
  if (now - l.last_tx >= config_.heartbeat_interval) {
    if (!send_frame(*l.conn, {FrameType::heartbeat, l.st.fifo_id, l.st.next_send, 0, {}})) {
      out_transport_error(l, l.conn->error(), now);
      return moved;
    }
    l.last_tx = now;
  }
  if (now - l.st.last_rx > config_.idle_timeout) {
    out_transport_error(l, "no data received for " + ms_text(now - l.st.last_rx), now);
  }
  return moved;
}

bool NodeTransport::pump() {
  if (!started_) start();
  auto now = Clock::now();
  pump_accept(now);
  bool moved = false;
  for (auto& l : in_) moved |= pump_in(*l, now);
  for (auto& l : out_) moved |= pump_out(*l, now);
  return moved;
}

Clock::time_point NodeTransport::next_deadline() const {
  auto now = Clock::now();
  auto best = now + config_.heartbeat_interval;
  auto consider = [&](Clock::time_point t) { best = std::min(best, t); };
  for (const auto& l : out_) {
    if (l->st.status == LinkStatus::dead) continue;
    if (!l->conn) {
      consider(l->next_attempt);
      continue;
    }
    if (!l->established) consider(l->handshake_deadline);
    consider(l->last_tx + config_.heartbeat_interval);
    consider(l->st.last_rx + config_.idle_timeout);
  }
  for (const auto& l : in_) {
    if (l->st.status == LinkStatus::dead) continue;
    if (!l->conn) {
      if (!l->st.peer_finished) consider(l->give_up_at);
      continue;
    }
    consider(l->last_tx + config_.heartbeat_interval);
    if (!l->st.peer_finished) consider(l->st.last_rx + config_.idle_timeout);
  }
  for (const auto& p : pending_) consider(p->deadline);
  return best;
}

void NodeTransport::wait_until(Clock::time_point deadline) { network_->wait_until(deadline); }

std::vector<std::string> NodeTransport::outbound_links() const {
  std::vector<std::string> v;
  for (const auto& l : out_) v.push_back(l->st.fifo);
  return v;
}

std::vector<std::string> NodeTransport::inbound_links() const {
  std::vector<std::string> v;
  for (const auto& l : in_) v.push_back(l->st.fifo);
  return v;
}

bool NodeTransport::has_link(std::string_view fifo) const { return find_out(fifo) || find_in(fifo); }

LinkState NodeTransport::state(std::string_view fifo) const {
  std::lock_guard lock(state_mu_);
  if (auto* o = find_out(fifo)) return o->st;
  if (auto* i = find_in(fifo)) return i->st;
  throw TransportError("no link for fifo '" + std::string(fifo) + "'");
}

std::vector<LinkState> NodeTransport::states() const {
  std::lock_guard lock(state_mu_);
  std::vector<LinkState> v;
  for (const auto& l : out_) v.push_back(l->st);
  for (const auto& l : in_) v.push_back(l->st);
  return v;
}

std::vector<std::string> NodeTransport::take_newly_dead() {
  std::lock_guard lock(state_mu_);
  return std::exchange(newly_dead_, {});
}

LinkState NodeTransport::establish(std::string_view fifo, std::chrono::milliseconds timeout) {
  if (!has_link(fifo)) throw TransportError("no link for fifo '" + std::string(fifo) + "'");
  auto end = Clock::now() + timeout;
  while (true) {
    pump();
    auto st = state(fifo);
    if (st.status == LinkStatus::alive) return st;
    if (st.status == LinkStatus::dead) throw TransportError(st.last_error);
    auto now = Clock::now();
    if (now >= end) {
      throw TransportError("handshake timeout" + (st.last_error.empty() ? "" : " (" + st.last_error + ")"));
    }
    wait_until(std::min(end, next_deadline()));
  }
}

LinkStatus NodeTransport::poll_liveness(std::string_view fifo) {
  pump();
  return state(fifo).status;
}

std::uint64_t NodeTransport::acked(std::string_view fifo) const { return state(fifo).acked; }

std::vector<std::vector<std::byte>> NodeTransport::unacked_tokens(std::string_view fifo) const {
  auto* l = find_out(fifo);
  if (!l) throw TransportError("no outbound link for fifo '" + std::string(fifo) + "'");
  std::vector<std::vector<std::byte>> v(l->store.begin(), l->store.end());
  v.insert(v.end(), l->replay.begin(), l->replay.end());
  return v;
}

void NodeTransport::enqueue_replay(std::string_view fifo, std::vector<std::vector<std::byte>> tokens) {
  auto* l = find_out(fifo);
  if (!l) throw TransportError("no outbound link for fifo '" + std::string(fifo) + "'");
  for (auto& t : tokens) l->replay.push_back(std::move(t));
}

void NodeTransport::mark_dead(std::string_view fifo, const std::string& reason) {
  if (auto* o = find_out(fifo)) {
    if (o->conn) o->conn->close();
    o->conn.reset();
    o->established = false;
    {
      std::lock_guard lock(state_mu_);
      o->st.last_error = reason;
    }
    set_status(o->st, LinkStatus::dead, reason);
  } else if (auto* i = find_in(fifo)) {
    if (i->conn) i->conn->close();
    i->conn.reset();
    {
      std::lock_guard lock(state_mu_);
      i->st.last_error = reason;
    }
    set_status(i->st, LinkStatus::dead, reason);
  } else {
    throw TransportError("no link for fifo '" + std::string(fifo) + "'");
  }
}

bool NodeTransport::outbound_settled() const {
  return std::all_of(out_.begin(), out_.end(), [](const auto& l) {
    return l->st.status == LinkStatus::dead ||
           (l->established && l->store.empty() && l->replay.empty() && l->buf->occupancy() == 0);
  });
}

bool NodeTransport::inbound_settled() const {
  return std::all_of(in_.begin(), in_.end(),
                     [](const auto& l) { return l->st.status == LinkStatus::dead || l->st.peer_finished; });
}

void NodeTransport::send_bye() {
  for (auto& l : out_) {
    if (l->conn && l->established) send_frame(*l->conn, {FrameType::bye, l->st.fifo_id, l->st.next_send, 0, {}});
  }
}

void NodeTransport::shutdown() {
  for (auto& l : out_) {
    if (l->conn) l->conn->close();
    l->conn.reset();
  }
  for (auto& l : in_) {
    if (l->conn) l->conn->close();
    l->conn.reset();
  }
  pending_.clear();
  listeners_.clear();
}

// ---------------------------------------------------------------------------

std::string AdaptationReport::to_string() const {
  std::ostringstream os;
  os << fifo << ": " << action;
  if (!activated_fifo.empty()) os << " -> " << activated_fifo << " (" << replayed_tokens << " tokens replayed)";
  for (const auto& p : disabled_ports) os << "; disabled " << p;
  if (!dead_actors.empty()) {
    os << "; dead-input";
    for (const auto& a : dead_actors) os << " " << a;
  }
  if (!stalled_streams.empty()) {
    os << "; stalled stream";
    for (int s : stalled_streams) os << " " << s;
  }
  if (halted) os << "; node halted";
  return os.str();
}

namespace {

const std::vector<std::string>* group_of(const graph::MappingSpec& mapping, const std::string& node) {
  for (const auto& g : mapping.redundancy.groups) {
    if (std::find(g.begin(), g.end(), node) != g.end()) return &g;
  }
  return nullptr;
}

// Outbound boundary FIFOs of `actor` that lead into `group`, in group order.
std::vector<const graph::FifoSpec*> group_fifos(const runtime::Engine& engine, const graph::MappingSpec& mapping,
                                                const std::string& actor, const std::vector<std::string>& group) {
  std::vector<const graph::FifoSpec*> v;
  for (const auto& node : group) {
    for (const auto& id : engine.outbound_boundary()) {
      const auto* f = engine.graph().find_fifo(id);
      if (f->from.actor == actor && mapping.node_of(f->to.actor) == node) v.push_back(f);
    }
  }
  return v;
}

std::string fifo_from(const graph::GraphSpec& g, const std::string& actor, const std::string& port) {
  for (const auto& f : g.fifos) {
    if (f.from.actor == actor && f.from.port == port) return f.id;
  }
  return {};
}

std::string fifo_to(const graph::GraphSpec& g, const std::string& actor, const std::string& port) {
  for (const auto& f : g.fifos) {
    if (f.to.actor == actor && f.to.port == port) return f.id;
  }
  return {};
}

}  // namespace

AdaptationReport on_link_failure(runtime::Engine& engine, NodeTransport& transport, std::string_view fifo,
                                 const graph::MappingSpec& mapping) {
  const auto& g = engine.graph();
  const auto* f = g.find_fifo(fifo);
  if (!f) throw TransportError("unknown fifo '" + std::string(fifo) + "'");
  if (transport.has_link(fifo) && transport.state(fifo).status != LinkStatus::dead) {
    transport.mark_dead(fifo, "declared dead");
  }
  AdaptationReport r;
  r.fifo = std::string(fifo);

  if (engine.is_local(f->from.actor)) {
    const std::string& producer = f->from.actor;
    const std::string dead_node = mapping.node_of(f->to.actor);
    const bool was_active = !engine.port_disabled(producer, f->from.port);
    const bool failover = mapping.redundancy.mode == graph::RedundancyMode::failover;

    std::vector<std::vector<std::byte>> tokens;
    if (failover && was_active) tokens = transport.unacked_tokens(fifo);
    auto& buf = engine.buffer(fifo);
    for (std::size_t i = 0; i < buf.occupancy(); ++i) {
      auto t = buf.peek(i);
      if (failover && was_active) tokens.emplace_back(t.begin(), t.end());
    }
    buf.pop(buf.occupancy());
    engine.mark_link_dead(fifo);
    engine.disable_port(producer, f->from.port);
    r.disabled_ports.push_back(producer + "." + f->from.port);

    std::vector<const graph::FifoSpec*> peers;
    if (const auto* group = group_of(mapping, dead_node)) peers = group_fifos(engine, mapping, producer, *group);
    auto live = [&](const graph::FifoSpec* p) {
      return p->id != fifo && !engine.link_dead(p->id) &&
             (!transport.has_link(p->id) || transport.state(p->id).status != LinkStatus::dead);
    };

    if (!failover) {
      if (std::any_of(peers.begin(), peers.end(), live)) r.action = "dropped-replica";
    } else if (!was_active) {
      r.action = "standby-lost";
    } else {
      auto self = std::find_if(peers.begin(), peers.end(), [&](const auto* p) { return p->id == fifo; });
      std::size_t start = self == peers.end() ? 0 : static_cast<std::size_t>(self - peers.begin());
      for (std::size_t k = 1; k <= peers.size(); ++k) {
        const auto* next = peers[(start + k) % peers.size()];
        if (!live(next)) continue;
        engine.enable_port(producer, next->from.port);
        r.activated_fifo = next->id;
        r.replayed_tokens = tokens.size();
        transport.enqueue_replay(next->id, std::move(tokens));
        r.action = "failover";
        break;
      }
    }

    if (r.action.empty()) {
      r.action = "stalled";
      r.stalled_streams.push_back(engine.stream_of(producer));
      bool node_output = false;
      for (const auto& id : engine.outbound_boundary()) {
        if (!engine.link_dead(id)) node_output = true;
      }
      bool local_sink = false;
      bool producer_output = false;
      for (const auto& a : g.actors) {
        if (!engine.is_local(a.id)) continue;
        bool has_out = false;
        for (const auto& p : a.ports) {
          if (p.direction != graph::PortDirection::out) continue;
          auto id = fifo_from(g, a.id, p.id);
          if (id.empty()) continue;
          has_out = true;
          if (a.id == producer && !engine.port_disabled(a.id, p.id) && !engine.link_dead(id)) producer_output = true;
        }
        if (!has_out) local_sink = true;
      }
      if (!node_output && !local_sink) {
        engine.halt();
        r.halted = true;
      } else if (!producer_output) {
        engine.retire_actor(producer);
      }
    }
  } else {
    const std::string& consumer = f->to.actor;
    engine.mark_link_dead(fifo);
    bool other_input = false;
    for (const auto& p : g.find_actor(consumer)->ports) {
      if (p.direction != graph::PortDirection::in || p.id == f->to.port) continue;
      auto id = fifo_to(g, consumer, p.id);
      if (!id.empty() && !engine.port_disabled(consumer, p.id) && !engine.link_dead(id)) other_input = true;
    }
    if (other_input) {
      engine.disable_port(consumer, f->to.port);
      r.disabled_ports.push_back(consumer + "." + f->to.port);
      r.action = "port-disabled";
    } else {
      r.dead_actors = engine.mark_dead_input(consumer);
      r.action = "dead-input";
    }
  }

  if (auto m = engine.metrics_ptr()) {
    m->record_failure({engine.node_id(), std::string(fifo), "adaptation: " + r.to_string(), m->now_us()});
  }
  return r;
}

void apply_initial_policy(runtime::Engine& engine, const graph::MappingSpec& mapping) {
  if (mapping.redundancy.mode != graph::RedundancyMode::failover) return;
  for (const auto& actor : engine.actors()) {
    for (const auto& group : mapping.redundancy.groups) {
      auto fifos = group_fifos(engine, mapping, actor, group);
      for (std::size_t i = 1; i < fifos.size(); ++i) engine.disable_port(actor, fifos[i]->from.port);
    }
  }
}

}  // namespace dflow::transport
