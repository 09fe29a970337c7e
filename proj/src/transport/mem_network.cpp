#include <atomic>
#include <deque>

#include "dflow/error.hpp"
#include "dflow/transport/network.hpp"

namespace dflow::transport {

void Waker::notify() {
  {
    std::lock_guard lock(mu_);
    signaled_ = true;
  }
  cv_.notify_all();
}

void Waker::notify_at(Clock::time_point t) {
  {
    std::lock_guard lock(mu_);
    pending_.insert(t);
  }
  cv_.notify_all();
}

void Waker::wait_until(Clock::time_point deadline) {
  std::unique_lock lock(mu_);
  while (true) {
    auto now = Clock::now();
    auto due = pending_.upper_bound(now);
    bool timed = due != pending_.begin();
    pending_.erase(pending_.begin(), due);
    if (signaled_ || timed || now >= deadline) break;
    auto until = pending_.empty() ? deadline : std::min(deadline, *pending_.begin());
    cv_.wait_until(lock, until);
  }
  signaled_ = false;
}

std::string mem_address_node(const std::string& address) {
  const std::string scheme = "mem://";
  if (address.rfind(scheme, 0) != 0) return {};
  auto rest = address.substr(scheme.size());
  return rest.substr(0, rest.find('/'));
}

struct MemFabric::Pipe {
  struct Chunk {
    Clock::time_point at;
    std::vector<std::byte> bytes;
  };
  std::mutex mu;
  std::deque<Chunk> chunks;
  Clock::time_point busy_until{};
  std::shared_ptr<Waker> reader;
};

struct Duplex {
  std::string address;
  std::string dialer;
  std::string acceptor;
  MemFabric::Pipe to_acceptor;
  MemFabric::Pipe to_dialer;
  std::atomic<bool> closed{false};
};

struct MemFabric::ListenerState {
  std::mutex mu;
  std::string address;
  std::string node;
  std::deque<std::unique_ptr<Connection>> pending;
};

class MemConnection : public Connection {
 public:
  MemConnection(std::shared_ptr<MemFabric> fabric, std::shared_ptr<Duplex> duplex, bool dialer)
      : fabric_(std::move(fabric)), duplex_(std::move(duplex)), dialer_(dialer) {}
  ~MemConnection() override { close(); }

  bool send(std::span<const std::byte> bytes) override {
    if (duplex_->closed) {
      error_ = "broken pipe";
      return false;
    }
    if (silenced()) return true;
    MemFabric::Pipe& out = dialer_ ? duplex_->to_acceptor : duplex_->to_dialer;
    auto now = Clock::now();
    Clock::time_point at = now;
    double bps;
    {
      std::lock_guard lock(fabric_->mu_);
      bps = fabric_->bandwidth_bps_;
    }
    {
      std::lock_guard lock(out.mu);
      if (bps > 0) {
        auto start = std::max(now, out.busy_until);
        auto transfer = std::chrono::duration<double>(static_cast<double>(bytes.size()) * 8.0 / bps);
        at = start + std::chrono::duration_cast<Clock::duration>(transfer);
        out.busy_until = at;
      }
      out.chunks.push_back({at, std::vector<std::byte>(bytes.begin(), bytes.end())});
    }
    if (at > now) out.reader->notify_at(at);
    else out.reader->notify();
    return true;
  }

  bool receive(std::vector<std::byte>& out) override {
    MemFabric::Pipe& in = dialer_ ? duplex_->to_dialer : duplex_->to_acceptor;
    bool got = false;
    bool silent = silenced();
    auto now = Clock::now();
    {
      std::lock_guard lock(in.mu);
      while (!in.chunks.empty() && in.chunks.front().at <= now) {
        if (!silent) {
          out.insert(out.end(), in.chunks.front().bytes.begin(), in.chunks.front().bytes.end());
          got = true;
        }
        in.chunks.pop_front();
      }
      if (got || !duplex_->closed) return true;
      if (!in.chunks.empty()) return true;
    }
    error_ = "connection reset";
    return false;
  }

  void close() override {
    // A node that lost power cannot say goodbye.
    if (fabric_->killed(dialer_ ? duplex_->dialer : duplex_->acceptor)) return;
    if (duplex_->closed.exchange(true)) return;
    duplex_->to_acceptor.reader->notify();
    duplex_->to_dialer.reader->notify();
  }

  const std::string& error() const override { return error_; }

 private:
  bool silenced() const {
    return fabric_->dropped(duplex_->address) || fabric_->killed(duplex_->dialer) ||
           fabric_->killed(duplex_->acceptor);
  }

  std::shared_ptr<MemFabric> fabric_;
  std::shared_ptr<Duplex> duplex_;
  bool dialer_;
  std::string error_;
};

class MemListener : public Listener {
 public:
  MemListener(std::shared_ptr<MemFabric> fabric, std::shared_ptr<MemFabric::ListenerState> state)
      : fabric_(std::move(fabric)), state_(std::move(state)) {}
  ~MemListener() override {
    std::lock_guard lock(fabric_->mu_);
    fabric_->listeners_.erase(state_->address);
  }

  std::unique_ptr<Connection> accept() override {
    std::lock_guard lock(state_->mu);
    if (state_->pending.empty()) return nullptr;
    auto c = std::move(state_->pending.front());
    state_->pending.pop_front();
    return c;
  }

 private:
  std::shared_ptr<MemFabric> fabric_;
  std::shared_ptr<MemFabric::ListenerState> state_;
};

class MemNetwork : public Network {
 public:
  MemNetwork(std::shared_ptr<MemFabric> fabric, std::string node)
      : fabric_(std::move(fabric)), node_(std::move(node)), waker_(fabric_->waker_of(node_)) {}

  std::unique_ptr<Connection> dial(const std::string& address, std::string& error) override {
    std::shared_ptr<MemFabric::ListenerState> target;
    {
      std::lock_guard lock(fabric_->mu_);
      auto it = fabric_->listeners_.find(address);
      if (it != fabric_->listeners_.end()) target = it->second.lock();
      bool refused = !target || fabric_->dropped_.count(address) || fabric_->killed_.count(node_) ||
                     fabric_->killed_.count(target->node);
      if (refused) {
        error = "connection refused";
        return nullptr;
      }
    }
    auto duplex = std::make_shared<Duplex>();
    duplex->address = address;
    duplex->dialer = node_;
    duplex->acceptor = target->node;
    duplex->to_acceptor.reader = fabric_->waker_of(target->node);
    duplex->to_dialer.reader = waker_;
    {
      std::lock_guard lock(target->mu);
      target->pending.push_back(std::make_unique<MemConnection>(fabric_, duplex, false));
    }
    duplex->to_acceptor.reader->notify();
    return std::make_unique<MemConnection>(fabric_, duplex, true);
  }

  std::unique_ptr<Listener> listen(const std::string& address) override {
    auto state = std::make_shared<MemFabric::ListenerState>();
    state->address = address;
    state->node = node_;
    std::lock_guard lock(fabric_->mu_);
    auto& slot = fabric_->listeners_[address];
    if (slot.lock()) throw Error("address in use: " + address);
    slot = state;
    return std::make_unique<MemListener>(fabric_, state);
  }

  void wait_until(Clock::time_point deadline) override { waker_->wait_until(deadline); }
  void wake() override { waker_->notify(); }

 private:
  std::shared_ptr<MemFabric> fabric_;
  std::string node_;
  std::shared_ptr<Waker> waker_;
};

std::shared_ptr<MemFabric> MemFabric::create(double bandwidth_bps) {
  std::shared_ptr<MemFabric> f(new MemFabric());
  f->bandwidth_bps_ = bandwidth_bps;
  return f;
}

std::shared_ptr<Network> MemFabric::node(const std::string& node_id) {
  return std::make_shared<MemNetwork>(shared_from_this(), node_id);
}

void MemFabric::set_bandwidth(double bandwidth_bps) {
  std::lock_guard lock(mu_);
  bandwidth_bps_ = bandwidth_bps;
}

void MemFabric::set_dropped(const std::string& address, bool dropped) {
  {
    std::lock_guard lock(mu_);
    if (dropped) dropped_.insert(address);
    else dropped_.erase(address);
  }
  wake_all();
}

bool MemFabric::dropped(const std::string& address) const {
  std::lock_guard lock(mu_);
  return dropped_.count(address) > 0;
}

void MemFabric::kill_node(const std::string& node_id) {
  {
    std::lock_guard lock(mu_);
    killed_.insert(node_id);
  }
  wake_all();
}

bool MemFabric::killed(const std::string& node_id) const {
  std::lock_guard lock(mu_);
  return killed_.count(node_id) > 0;
}

std::shared_ptr<Waker> MemFabric::waker_of(const std::string& node_id) {
  std::lock_guard lock(mu_);
  auto& w = wakers_[node_id];
  if (!w) w = std::make_shared<Waker>();
  return w;
}

void MemFabric::wake_all() {
  std::vector<std::shared_ptr<Waker>> all;
  {
    std::lock_guard lock(mu_);
    for (auto& [id, w] : wakers_) all.push_back(w);
  }
  for (auto& w : all) w->notify();
}

}  // namespace dflow::transport
