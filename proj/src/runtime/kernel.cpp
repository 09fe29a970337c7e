#include "dflow/runtime/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <thread>

#include "dflow/error.hpp"

namespace dflow::runtime {

std::string_view to_string(WaitMode m) { return m == WaitMode::sleep ? "sleep" : "busy"; }

std::uint64_t read_frame_tag(std::span<const std::byte> token) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < kFrameTagBytes && i < token.size(); ++i) {
    v = (v << 8) | std::to_integer<std::uint64_t>(token[i]);
  }
  return v;
}

void write_frame_tag(std::span<std::byte> token, std::uint64_t frame) {
  for (std::size_t i = 0; i < kFrameTagBytes && i < token.size(); ++i) {
    token[i] = static_cast<std::byte>((frame >> (8 * (kFrameTagBytes - 1 - i))) & 0xff);
  }
}

void KernelContext::emit_control(std::int64_t setting_index) {
  if (!on_control_) throw Error("actor '" + actor_id() + "' has no control output");
  on_control_(setting_index);
}

void KernelContext::spend(std::chrono::microseconds cost) const {
  if (cost.count() <= 0) return;
  if (wait_mode_ == WaitMode::sleep) {
    std::this_thread::sleep_for(cost);
    return;
  }
  auto until = std::chrono::steady_clock::now() + cost;
  while (std::chrono::steady_clock::now() < until) {
  }
}

const KernelInfo& KernelRegistry::register_kernel(std::string name, KernelFn behavior,
                                                  std::chrono::microseconds cost_hint) {
  if (kernels_.count(name)) throw Error("kernel '" + name + "' is already registered");
  KernelInfo info{name, std::move(behavior), cost_hint};
  return kernels_.emplace(std::move(name), std::move(info)).first->second;
}

const KernelInfo* KernelRegistry::find(std::string_view name) const {
  auto it = kernels_.find(name);
  return it == kernels_.end() ? nullptr : &it->second;
}

std::vector<std::string> KernelRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, info] : kernels_) out.push_back(name);
  return out;
}

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Copies the first non-empty input into every output; sources get a
// deterministic pattern derived from seed and frame.
void forward(KernelContext& ctx) {
  std::span<const std::byte> src;
  for (std::size_t i = 0; i < ctx.input_count(); ++i) {
    if (!ctx.input(i).empty()) {
      src = ctx.input(i);
      break;
    }
  }
  for (std::size_t o = 0; o < ctx.output_count(); ++o) {
    auto& out = ctx.output(o);
    if (!src.empty()) {
      // Repeat the source bytes across the output.
      for (std::size_t k = 0; k < out.size(); k += src.size()) {
        std::memcpy(out.data() + k, src.data(), std::min(src.size(), out.size() - k));
      }
    } else {
      std::uint64_t state = mix(ctx.seed() ^ (ctx.frame() * 0x100000001b3ULL));
      for (std::size_t k = 0; k < out.size(); ++k) {
        if (k % 8 == 0) state = mix(state);
        out[k] = static_cast<std::byte>((state >> (8 * (k % 8))) & 0xff);
      }
    }
  }
}

std::size_t nonempty_inputs(const KernelContext& ctx) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < ctx.input_count(); ++i) n += ctx.input(i).empty() ? 0 : 1;
  return n;
}

// Cost is spent once per consumed input port (once for sources), so an actor
// that serves several streams per firing pays for each of them.
void synthetic_cost(KernelContext& ctx) {
  auto units = std::max<std::size_t>(1, nonempty_inputs(ctx));
  ctx.spend(ctx.cost_hint() * static_cast<long>(units));
  forward(ctx);
}

std::vector<std::uint32_t> as_matrix(std::span<const std::byte> bytes, std::size_t n) {
  std::vector<std::uint32_t> m(n * n, 0);
  if (bytes.size() >= kFrameTagBytes + n * n * 4) {
    std::memcpy(m.data(), bytes.data() + kFrameTagBytes, n * n * 4);
  }
  return m;
}

void matmul_toy(KernelContext& ctx) {
  ctx.spend(ctx.cost_hint());
  if (ctx.input_count() == 0 || ctx.input(0).empty()) {
    forward(ctx);
    return;
  }
  auto a_bytes = ctx.input(0);
  auto b_bytes = ctx.input_count() > 1 && !ctx.input(1).empty() ? ctx.input(1) : a_bytes;
  std::size_t payload = a_bytes.size() > kFrameTagBytes ? a_bytes.size() - kFrameTagBytes : 0;
  auto n = static_cast<std::size_t>(std::sqrt(static_cast<double>(payload / 4)));
  auto a = as_matrix(a_bytes, n);
  auto b = as_matrix(b_bytes, n);
  std::vector<std::uint32_t> c(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      std::uint32_t aik = a[i * n + k];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aik * b[k * n + j];
    }
  }
  for (std::size_t o = 0; o < ctx.output_count(); ++o) {
    auto& out = ctx.output(o);
    std::fill(out.begin(), out.end(), std::byte{0});
    std::size_t bytes = std::min(out.size() > kFrameTagBytes ? out.size() - kFrameTagBytes : 0, n * n * 4);
    if (bytes) std::memcpy(out.data() + kFrameTagBytes, c.data(), bytes);
  }
}

void affine(KernelContext& ctx) {
  ctx.spend(ctx.cost_hint());
  auto mul = ctx.params().value("mul", 1);
  auto add = ctx.params().value("add", 0);
  if (nonempty_inputs(ctx) == 0) {
    forward(ctx);
    return;
  }
  for (std::size_t o = 0; o < ctx.output_count(); ++o) {
    auto& out = ctx.output(o);
    for (std::size_t k = 0; k < out.size(); ++k) {
      int sum = 0;
      for (std::size_t i = 0; i < ctx.input_count(); ++i) {
        auto in = ctx.input(i);
        if (k < in.size()) sum += std::to_integer<int>(in[k]);
      }
      out[k] = static_cast<std::byte>((sum * mul + add) & 0xff);
    }
  }
}

void control_sequence(KernelContext& ctx) {
  const auto& seq = ctx.params().at("sequence");
  if (!seq.is_array() || seq.empty()) throw Error("control_sequence needs a non-empty 'sequence'");
  ctx.emit_control(seq.at(ctx.firing() % seq.size()).get<std::int64_t>());
  synthetic_cost(ctx);
}

void threshold_gate(KernelContext& ctx) {
  // Stand-in confidence score in [0, 100) derived from the frame.
  auto score = static_cast<int>(mix(ctx.seed() ^ mix(ctx.frame())) % 100);
  int threshold = ctx.params().value("threshold", 50);
  ctx.emit_control(score < threshold ? 0 : 1);
  synthetic_cost(ctx);
}

}  // namespace

KernelRegistry KernelRegistry::with_builtins() {
  KernelRegistry r;
  r.register_kernel("identity", synthetic_cost);
  r.register_kernel("synthetic_cost", synthetic_cost);
  r.register_kernel("matmul_toy", matmul_toy);
  r.register_kernel("affine", affine);
  r.register_kernel("control_sequence", control_sequence);
  r.register_kernel("threshold_gate", threshold_gate);
  return r;
}

}  // namespace dflow::runtime
