#include "dflow/runtime/token_buffer.hpp"

#include <algorithm>
#include <cassert>

#include "dflow/error.hpp"

namespace dflow::runtime {

TokenBuffer::TokenBuffer(std::string fifo_id, std::size_t capacity, std::size_t token_bytes)
    : fifo_id_(std::move(fifo_id)),
      capacity_(capacity),
      token_bytes_(token_bytes),
      storage_(capacity * token_bytes) {
  if (capacity == 0 || token_bytes == 0) {
    throw Error("fifo '" + fifo_id_ + "' needs positive capacity and token size");
  }
}

std::size_t TokenBuffer::occupancy() const {
  // Load consumed first so a concurrent push can only make the result smaller
  // than the true occupancy, never larger than capacity.
  std::uint64_t c = consumed_.load(std::memory_order_acquire);
  std::uint64_t p = produced_.load(std::memory_order_acquire);
  return static_cast<std::size_t>(p - c);
}

std::span<std::byte> TokenBuffer::slot(std::uint64_t position) {
  return {storage_.data() + (position % capacity_) * token_bytes_, token_bytes_};
}

std::span<const std::byte> TokenBuffer::slot(std::uint64_t position) const {
  return {storage_.data() + (position % capacity_) * token_bytes_, token_bytes_};
}

void TokenBuffer::push(std::span<const std::byte> token) {
  if (token.size() != token_bytes_) {
    throw Error("fifo '" + fifo_id_ + "': token of " + std::to_string(token.size()) +
                " bytes, expected " + std::to_string(token_bytes_));
  }
  std::uint64_t p = produced_.load(std::memory_order_relaxed);
  if (p - consumed_.load(std::memory_order_acquire) >= capacity_) {
    throw Error("fifo '" + fifo_id_ + "' overrun");
  }
  std::copy(token.begin(), token.end(), slot(p).begin());
  produced_.store(p + 1, std::memory_order_release);
}

std::span<const std::byte> TokenBuffer::peek(std::size_t index) const {
  assert(index < occupancy());
  return slot(consumed_.load(std::memory_order_relaxed) + index);
}

void TokenBuffer::pop(std::size_t count) {
  std::uint64_t c = consumed_.load(std::memory_order_relaxed);
  if (count > produced_.load(std::memory_order_acquire) - c) {
    throw Error("fifo '" + fifo_id_ + "' underrun");
  }
  consumed_.store(c + count, std::memory_order_release);
}

void TokenBuffer::copy_front(std::size_t count, std::vector<std::byte>& out) const {
  for (std::size_t i = 0; i < count; ++i) {
    auto token = peek(i);
    out.insert(out.end(), token.begin(), token.end());
  }
}

}  // namespace dflow::runtime
