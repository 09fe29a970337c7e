#include "dflow/transport/frame.hpp"

#include <zlib.h>

#include <algorithm>

#include "dflow/error.hpp"

namespace dflow::transport {

namespace {

void put(std::vector<std::byte>& out, std::uint64_t v, int bytes) {
  for (int i = bytes - 1; i >= 0; --i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

std::uint64_t get(std::span<const std::byte> in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v = (v << 8) | std::to_integer<std::uint64_t>(in[at + static_cast<std::size_t>(i)]);
  return v;
}

bool known_type(std::uint8_t t) { return t >= 0x01 && t <= 0x06; }

}  // namespace

std::string_view to_string(FrameType t) {
  switch (t) {
    case FrameType::data: return "DATA";
    case FrameType::hello: return "HELLO";
    case FrameType::hello_ack: return "HELLO_ACK";
    case FrameType::heartbeat: return "HEARTBEAT";
    case FrameType::bye: return "BYE";
    case FrameType::resume: return "RESUME";
  }
  return "?";
}

std::string_view to_string(DecodeError e) {
  switch (e) {
    case DecodeError::none: return "none";
    case DecodeError::truncated: return "truncated frame";
    case DecodeError::bad_magic: return "bad magic";
    case DecodeError::bad_version: return "version mismatch";
    case DecodeError::bad_type: return "unknown frame type";
    case DecodeError::oversize: return "oversize frame";
    case DecodeError::length_mismatch: return "payload length does not match token count";
    case DecodeError::bad_checksum: return "bad checksum";
  }
  return "?";
}

std::uint32_t crc32(std::span<const std::byte> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in pieces.
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    auto n = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = ::crc32(crc, p, n);
    p += n;
    left -= n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::byte> encode_frame(const TokenFrame& f, std::optional<std::size_t> token_bytes) {
  if (f.type == FrameType::data) {
    if (f.token_count == 0 && !f.payload.empty()) throw Error("DATA frame has payload but no tokens");
    if (f.token_count > 0 && f.payload.size() % f.token_count != 0) {
      throw Error("DATA payload is not a whole number of tokens");
    }
    if (token_bytes && f.payload.size() != f.token_count * *token_bytes) {
      throw Error("DATA payload length " + std::to_string(f.payload.size()) + " != " +
                  std::to_string(f.token_count) + " x " + std::to_string(*token_bytes));
    }
  } else if (f.token_count != 0) {
    throw Error(std::string(to_string(f.type)) + " frame cannot carry tokens");
  }
  if (f.payload.size() > 0xffffffffu) throw Error("payload too large");
  std::vector<std::byte> out;
  out.reserve(kHeaderBytes + f.payload.size() + kTrailerBytes);
  for (auto m : kMagic) out.push_back(static_cast<std::byte>(m));
  out.push_back(static_cast<std::byte>(kVersion));
  out.push_back(static_cast<std::byte>(f.type));
  put(out, f.fifo_id, 4);
  put(out, f.sequence, 8);
  put(out, f.token_count, 2);
  put(out, f.payload.size(), 4);
  out.insert(out.end(), f.payload.begin(), f.payload.end());
  put(out, crc32(out), 4);
  return out;
}

DecodeResult decode_frame(std::span<const std::byte> bytes, std::size_t max_payload) {
  DecodeResult r;
  auto fail = [&](DecodeError e) {
    r.error = e;
    return r;
  };
  // Check what is present before reporting truncation so that garbage is
  // rejected as early as possible.
  for (std::size_t i = 0; i < 4 && i < bytes.size(); ++i) {
    if (std::to_integer<std::uint8_t>(bytes[i]) != kMagic[i]) return fail(DecodeError::bad_magic);
  }
  if (bytes.size() > 4 && std::to_integer<std::uint8_t>(bytes[4]) != kVersion) return fail(DecodeError::bad_version);
  if (bytes.size() > 5 && !known_type(std::to_integer<std::uint8_t>(bytes[5]))) return fail(DecodeError::bad_type);
  if (bytes.size() < kHeaderBytes) return fail(DecodeError::truncated);

  auto type = static_cast<FrameType>(std::to_integer<std::uint8_t>(bytes[5]));
  auto token_count = static_cast<std::uint16_t>(get(bytes, 18, 2));
  std::uint64_t length = get(bytes, 20, 4);
  if (length > max_payload) return fail(DecodeError::oversize);
  if (type == FrameType::data ? (token_count == 0 ? length != 0 : length % token_count != 0) : token_count != 0) {
    return fail(DecodeError::length_mismatch);
  }
  std::size_t total = kHeaderBytes + length + kTrailerBytes;
  if (bytes.size() < total) return fail(DecodeError::truncated);
  auto stored = static_cast<std::uint32_t>(get(bytes, kHeaderBytes + length, 4));
  if (crc32(bytes.first(kHeaderBytes + length)) != stored) return fail(DecodeError::bad_checksum);

  TokenFrame f;
  f.type = type;
  f.fifo_id = static_cast<std::uint32_t>(get(bytes, 6, 4));
  f.sequence = get(bytes, 10, 8);
  f.token_count = token_count;
  f.payload.assign(bytes.begin() + kHeaderBytes, bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderBytes + length));
  r.frame = std::move(f);
  r.consumed = total;
  return r;
}

void FrameReader::feed(std::span<const std::byte> bytes) {
  if (offset_ > 0 && offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  }
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<TokenFrame> FrameReader::next() {
  if (error_ != DecodeError::none) return std::nullopt;
  std::span<const std::byte> rest(buffer_.data() + offset_, buffer_.size() - offset_);
  if (rest.empty()) return std::nullopt;
  DecodeResult r = decode_frame(rest, max_payload_);
  if (!r.ok()) {
    if (r.error != DecodeError::truncated) error_ = r.error;
    return std::nullopt;
  }
  offset_ += r.consumed;
  if (offset_ > (1u << 20) && offset_ * 2 > buffer_.size()) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
    offset_ = 0;
  }
  return std::move(r.frame);
}

std::vector<std::byte> encode_hello(const HelloPayload& h) {
  if (h.node_id.size() > 0xffff || h.fifo_ids.size() > 0xffff) throw Error("HELLO payload too large");
  std::vector<std::byte> out;
  put(out, h.graph_hash, 8);
  put(out, h.node_id.size(), 2);
  for (char c : h.node_id) out.push_back(static_cast<std::byte>(c));
  put(out, h.fifo_ids.size(), 2);
  for (auto id : h.fifo_ids) put(out, id, 4);
  return out;
}

std::optional<HelloPayload> decode_hello(std::span<const std::byte> p) {
  HelloPayload h;
  if (p.size() < 10) return std::nullopt;
  h.graph_hash = get(p, 0, 8);
  std::size_t len = get(p, 8, 2);
  std::size_t at = 10;
  if (p.size() < at + len + 2) return std::nullopt;
  for (std::size_t i = 0; i < len; ++i) h.node_id.push_back(static_cast<char>(p[at + i]));
  at += len;
  std::size_t count = get(p, at, 2);
  at += 2;
  if (p.size() != at + 4 * count) return std::nullopt;
  for (std::size_t i = 0; i < count; ++i) h.fifo_ids.push_back(static_cast<std::uint32_t>(get(p, at + 4 * i, 4)));
  return h;
}

std::vector<std::byte> encode_resume(std::uint64_t next_expected) {
  std::vector<std::byte> out;
  put(out, next_expected, 8);
  return out;
}

std::optional<std::uint64_t> decode_resume(std::span<const std::byte> payload) {
  if (payload.size() != 8) return std::nullopt;
  return get(payload, 0, 8);
}

}  // namespace dflow::transport
