#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace dflow::runtime {

enum class WaitMode { sleep, busy };

std::string_view to_string(WaitMode m);

// Bytes [0, 8) of every data token of at least 8 bytes carry the frame tag
// (big-endian). The engine writes the tag after the kernel returns, so kernels
// should treat that prefix as reserved.
inline constexpr std::size_t kFrameTagBytes = 8;

std::uint64_t read_frame_tag(std::span<const std::byte> token);
void write_frame_tag(std::span<std::byte> token, std::uint64_t frame);

class Engine;

// What a kernel sees during one firing.
class KernelContext {
 public:
  std::size_t input_count() const { return inputs_.size(); }
  // Consumed bytes of the i-th data input port (declaration order); empty when
  // the port's current rate is 0.
  std::span<const std::byte> input(std::size_t i) const { return inputs_.at(i); }

  std::size_t output_count() const { return outputs_.size(); }
  // Pre-sized to rate x token_bytes of the i-th data output port. Resizing it
  // makes the firing fail with a payload size mismatch.
  std::vector<std::byte>& output(std::size_t i) { return *outputs_.at(i); }

  const nlohmann::json& params() const { return *params_; }
  const std::string& actor_id() const { return *actor_id_; }
  std::uint64_t frame() const { return frame_; }
  std::uint64_t firing() const { return firing_; }
  std::uint64_t seed() const { return seed_; }
  std::chrono::microseconds cost_hint() const { return cost_hint_; }
  WaitMode wait_mode() const { return wait_mode_; }

  // Selects the control-table row sent on every control output port of this
  // actor. Ports of this actor that the row controls take its rates for the
  // current firing, and output() is resized accordingly.
  void emit_control(std::int64_t setting_index);

  // Spends the cost hint (sleeping or spinning per wait_mode()).
  void spend(std::chrono::microseconds cost) const;

 private:
  friend class Engine;

  std::vector<std::span<const std::byte>> inputs_;
  std::vector<std::vector<std::byte>*> outputs_;
  const nlohmann::json* params_ = nullptr;
  const std::string* actor_id_ = nullptr;
  std::uint64_t frame_ = 0;
  std::uint64_t firing_ = 0;
  std::uint64_t seed_ = 0;
  std::chrono::microseconds cost_hint_{0};
  WaitMode wait_mode_ = WaitMode::sleep;
  std::function<void(std::int64_t)> on_control_;
};

using KernelFn = std::function<void(KernelContext&)>;

struct KernelInfo {
  std::string name;
  KernelFn behavior;
  std::chrono::microseconds cost_hint{0};
};

class KernelRegistry {
 public:
  // Throws Error when the name is already registered. The returned reference
  // stays valid for the registry's lifetime.
  const KernelInfo& register_kernel(std::string name, KernelFn behavior,
                                    std::chrono::microseconds cost_hint = {});
  const KernelInfo* find(std::string_view name) const;
  std::vector<std::string> names() const;

  // Registry preloaded with the built-in kernels:
  //   identity, synthetic_cost  copy the first non-empty input to every output
  //                             after spending params.cost_us
  //   matmul_toy                square uint32 matrix product on the payload
  //   affine                    bytewise sum of inputs, times mul plus add
  //   control_sequence          identity that emits params.sequence cyclically
  //   threshold_gate            identity that emits 0 (exit) or 1 (continue)
  static KernelRegistry with_builtins();

 private:
  std::map<std::string, KernelInfo, std::less<>> kernels_;
};

}  // namespace dflow::runtime
