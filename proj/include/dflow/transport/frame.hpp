#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dflow::transport {

// Wire layout, big-endian:
//   magic "EPRF" | version u8 | type u8 | fifo_id u32 | sequence u64 |
//   token_count u16 | payload_length u32 | payload | crc32 u32
// The CRC (polynomial 0x04C11DB7) covers header and payload.
inline constexpr std::uint8_t kMagic[4] = {0x45, 0x50, 0x52, 0x46};
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderBytes = 24;
inline constexpr std::size_t kTrailerBytes = 4;
inline constexpr std::size_t kDefaultMaxPayload = 64u << 20;

enum class FrameType : std::uint8_t {
  data = 0x01,
  hello = 0x02,
  hello_ack = 0x03,
  heartbeat = 0x04,
  bye = 0x05,
  resume = 0x06,
};

std::string_view to_string(FrameType t);

struct TokenFrame {
  FrameType type = FrameType::data;
  std::uint32_t fifo_id = 0;
  std::uint64_t sequence = 0;  // index of the first token (DATA)
  std::uint16_t token_count = 0;
  std::vector<std::byte> payload;

  friend bool operator==(const TokenFrame&, const TokenFrame&) = default;
};

// Throws dflow::Error when token_count and payload disagree: a DATA frame
// needs a payload of token_count equal-sized tokens (token_bytes when given),
// other frame types carry no tokens.
std::vector<std::byte> encode_frame(const TokenFrame& f, std::optional<std::size_t> token_bytes = {});

enum class DecodeError {
  none,
  truncated,
  bad_magic,
  bad_version,
  bad_type,
  oversize,
  length_mismatch,
  bad_checksum,
};

std::string_view to_string(DecodeError e);

struct DecodeResult {
  std::optional<TokenFrame> frame;
  DecodeError error = DecodeError::none;
  std::size_t consumed = 0;  // bytes of the decoded frame

  bool ok() const { return frame.has_value(); }
};

// Decodes the frame at the start of `bytes`. Never throws; any defect yields
// an error and no frame.
DecodeResult decode_frame(std::span<const std::byte> bytes, std::size_t max_payload = kDefaultMaxPayload);

// Splits a byte stream into frames.
class FrameReader {
 public:
  explicit FrameReader(std::size_t max_payload = kDefaultMaxPayload) : max_payload_(max_payload) {}

  void feed(std::span<const std::byte> bytes);
  // Next complete frame, nothing when more bytes are needed. A malformed
  // frame sets error() and the reader stays failed.
  std::optional<TokenFrame> next();
  DecodeError error() const { return error_; }
  std::size_t buffered() const { return buffer_.size() - offset_; }

 private:
  std::vector<std::byte> buffer_;
  std::size_t offset_ = 0;
  std::size_t max_payload_;
  DecodeError error_ = DecodeError::none;
};

struct HelloPayload {
  std::uint64_t graph_hash = 0;
  std::string node_id;
  std::vector<std::uint32_t> fifo_ids;

  friend bool operator==(const HelloPayload&, const HelloPayload&) = default;
};

std::vector<std::byte> encode_hello(const HelloPayload& h);
std::optional<HelloPayload> decode_hello(std::span<const std::byte> payload);

std::vector<std::byte> encode_resume(std::uint64_t next_expected);
std::optional<std::uint64_t> decode_resume(std::span<const std::byte> payload);

std::uint32_t crc32(std::span<const std::byte> bytes);

}  // namespace dflow::transport
