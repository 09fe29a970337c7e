#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace dflow::transport {

using Clock = std::chrono::steady_clock;

// Non-blocking byte stream.
class Connection {
 public:
  virtual ~Connection() = default;
  // Queues bytes for the peer. False once the stream is broken; error() then
  // says why ("broken pipe", "connection reset", ...).
  virtual bool send(std::span<const std::byte> bytes) = 0;
  // Appends whatever has arrived. False once the stream is closed or broken
  // and nothing is left to read.
  virtual bool receive(std::vector<std::byte>& out) = 0;
  virtual void close() = 0;
  virtual const std::string& error() const = 0;
};

class Listener {
 public:
  virtual ~Listener() = default;
  // Pending inbound connection, or nullptr.
  virtual std::unique_ptr<Connection> accept() = 0;
};

// One node's view of the network.
class Network {
 public:
  virtual ~Network() = default;
  // Returns nullptr and sets `error` when the peer cannot be reached.
  virtual std::unique_ptr<Connection> dial(const std::string& address, std::string& error) = 0;
  // Throws dflow::Error when the address cannot be bound.
  virtual std::unique_ptr<Listener> listen(const std::string& address) = 0;
  // Blocks until traffic may be pending for this node, wake() is called or
  // the deadline passes.
  virtual void wait_until(Clock::time_point deadline) = 0;
  virtual void wake() = 0;
};

// Wakes one node's loop on traffic, including traffic scheduled to arrive
// later by bandwidth shaping.
class Waker {
 public:
  void notify();
  void notify_at(Clock::time_point t);
  void wait_until(Clock::time_point deadline);

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  bool signaled_ = false;
  std::multiset<Clock::time_point> pending_;
};

// In-process network for virtual runs. Addresses look like
// "mem://<node>/<name>"; the node part names the listening node.
//
// Faults: a dropped address silently discards traffic in both directions and
// refuses new dials until restored (a pulled cable); a killed node goes
// silent and refuses dials for good (power loss).
class MemFabric : public std::enable_shared_from_this<MemFabric> {
 public:
  // `bandwidth_bps` of 0 delivers instantly; otherwise every direction of
  // every connection is shaped to that rate.
  static std::shared_ptr<MemFabric> create(double bandwidth_bps = 0.0);

  std::shared_ptr<Network> node(const std::string& node_id);
  void set_bandwidth(double bandwidth_bps);
  void set_dropped(const std::string& address, bool dropped);
  bool dropped(const std::string& address) const;
  void kill_node(const std::string& node_id);
  bool killed(const std::string& node_id) const;

  struct Pipe;
  struct ListenerState;

 private:
  MemFabric() = default;
  friend class MemNetwork;
  friend class MemConnection;
  friend class MemListener;

  std::shared_ptr<Waker> waker_of(const std::string& node_id);
  void wake_all();

  mutable std::mutex mu_;
  double bandwidth_bps_ = 0.0;
  std::set<std::string> dropped_;
  std::set<std::string> killed_;
  std::map<std::string, std::weak_ptr<ListenerState>> listeners_;
  std::map<std::string, std::shared_ptr<Waker>> wakers_;
};

// Node id embedded in a "mem://<node>/<name>" address.
std::string mem_address_node(const std::string& address);

// TCP over IPv4 with poll(). Addresses are "host:port"; port 0 picks a free
// port when listening.
class TcpNetwork : public Network {
 public:
  TcpNetwork();
  ~TcpNetwork() override;

  std::unique_ptr<Connection> dial(const std::string& address, std::string& error) override;
  std::unique_ptr<Listener> listen(const std::string& address) override;
  void wait_until(Clock::time_point deadline) override;
  void wake() override;

  struct Registry;

 private:
  std::shared_ptr<Registry> registry_;
};

// Port the listener actually bound (useful with port 0).
int tcp_listener_port(const Listener& listener);

}  // namespace dflow::transport
