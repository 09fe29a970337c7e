#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dflow::runtime {

using Clock = std::chrono::steady_clock;

enum class FrameEventKind { submit, fire_start, fire_end, complete };

std::string_view to_string(FrameEventKind k);
std::optional<FrameEventKind> parse_event_kind(std::string_view s);

// One row of the metrics CSV.
struct FrameEvent {
  std::uint64_t frame = 0;
  int stream = 0;
  std::string node;
  std::string actor;
  FrameEventKind event = FrameEventKind::submit;
  std::int64_t t_us = 0;

  friend bool operator==(const FrameEvent&, const FrameEvent&) = default;
};

struct LivenessEvent {
  std::string node;
  std::string link;
  std::string from;
  std::string to;
  std::int64_t t_us = 0;
};

struct FailureRecord {
  std::string node;
  std::string actor;
  std::string message;
  std::int64_t t_us = 0;
};

struct StreamSummary {
  int stream = 0;
  std::uint64_t frames_requested = 0;
  std::uint64_t frames_submitted = 0;
  std::uint64_t frames_completed = 0;
  std::uint64_t frames_stalled = 0;  // submitted but never completed
  double mean_ms = 0.0;  // submit to first completion
  double p95_ms = 0.0;
};

struct RunMetrics {
  std::vector<FrameEvent> events;
  std::vector<LivenessEvent> liveness;
  std::vector<FailureRecord> failures;
  std::vector<StreamSummary> summary;
  std::uint64_t frames_requested = 0;
  std::string policy;     // scheduling fairness label
  std::string wait_mode;  // how synthetic kernels spend their cost
  std::vector<std::string> notes;

  const StreamSummary* stream(int id) const;
};

// Thread-safe append-only collector shared by the engines of one run.
class MetricsSink {
 public:
  explicit MetricsSink(Clock::time_point epoch = Clock::now()) : epoch_(epoch) {}

  Clock::time_point epoch() const { return epoch_; }
  std::int64_t now_us() const;

  void record(FrameEvent e);
  void record_liveness(LivenessEvent e);
  void record_failure(FailureRecord f);
  void set_enabled(bool on) { enabled_ = on; }

  // Events merge-ordered by timestamp (stable for equal timestamps).
  std::vector<FrameEvent> events() const;
  std::vector<LivenessEvent> liveness() const;
  std::vector<FailureRecord> failures() const;

 private:
  Clock::time_point epoch_;
  bool enabled_ = true;
  mutable std::mutex mu_;
  std::vector<FrameEvent> events_;
  std::vector<LivenessEvent> liveness_;
  std::vector<FailureRecord> failures_;
};

inline constexpr std::string_view kMetricsCsvHeader = "frame,stream,node,actor,event,t_us";

std::string to_csv(const std::vector<FrameEvent>& events);
// Throws ParseError on a malformed header or row.
std::vector<FrameEvent> parse_csv(std::string_view text);

// Per-stream completion statistics. A frame counts as completed once any node
// reports `complete` for it; duplicates from replicated servers are ignored.
// `frames_requested` of 0 uses the number of submitted frames.
std::vector<StreamSummary> summarize(const std::vector<FrameEvent>& events,
                                     std::uint64_t frames_requested);

// Ordered list of completed frames for one stream (first arrival only).
std::vector<std::uint64_t> completion_order(const std::vector<FrameEvent>& events, int stream);

// Mean interval between consecutive frames finishing on `node` for `stream`:
// for every frame, the last fire_end on that node; 0 when fewer than 2 frames.
double node_frame_period_ms(const std::vector<FrameEvent>& events, std::string_view node, int stream);

}  // namespace dflow::runtime
