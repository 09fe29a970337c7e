#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dflow::runtime {

// Bounded single-producer single-consumer ring of fixed-size tokens.
//
// The producer thread calls push(); the consumer thread calls peek()/pop().
// occupancy() is always produced_total() - consumed_total() and never exceeds
// capacity().
class TokenBuffer {
 public:
  TokenBuffer(std::string fifo_id, std::size_t capacity, std::size_t token_bytes);

  TokenBuffer(const TokenBuffer&) = delete;
  TokenBuffer& operator=(const TokenBuffer&) = delete;

  const std::string& fifo_id() const { return fifo_id_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t token_bytes() const { return token_bytes_; }

  std::uint64_t produced_total() const { return produced_.load(std::memory_order_acquire); }
  std::uint64_t consumed_total() const { return consumed_.load(std::memory_order_acquire); }
  std::size_t occupancy() const;
  std::size_t free_space() const { return capacity_ - occupancy(); }

  // Producer side. `token` must be exactly token_bytes() long and there must
  // be free space.
  void push(std::span<const std::byte> token);

  // Consumer side. `index` counts from the oldest token.
  std::span<const std::byte> peek(std::size_t index) const;
  void pop(std::size_t count);
  // Appends the oldest `count` tokens to `out` without removing them.
  void copy_front(std::size_t count, std::vector<std::byte>& out) const;

 private:
  std::span<std::byte> slot(std::uint64_t position);
  std::span<const std::byte> slot(std::uint64_t position) const;

  std::string fifo_id_;
  std::size_t capacity_;
  std::size_t token_bytes_;
  std::vector<std::byte> storage_;
  std::atomic<std::uint64_t> produced_{0};
  std::atomic<std::uint64_t> consumed_{0};
};

}  // namespace dflow::runtime
