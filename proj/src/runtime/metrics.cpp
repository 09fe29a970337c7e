#include "dflow/runtime/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "dflow/error.hpp"

namespace dflow::runtime {

std::string_view to_string(FrameEventKind k) {
  switch (k) {
    case FrameEventKind::submit: return "submit";
    case FrameEventKind::fire_start: return "fire_start";
    case FrameEventKind::fire_end: return "fire_end";
    case FrameEventKind::complete: return "complete";
  }
  return "?";
}

std::optional<FrameEventKind> parse_event_kind(std::string_view s) {
  if (s == "submit") return FrameEventKind::submit;
  if (s == "fire_start") return FrameEventKind::fire_start;
  if (s == "fire_end") return FrameEventKind::fire_end;
  if (s == "complete") return FrameEventKind::complete;
  return std::nullopt;
}

const StreamSummary* RunMetrics::stream(int id) const {
  for (const auto& s : summary) {
    if (s.stream == id) return &s;
  }
  return nullptr;
}

std::int64_t MetricsSink::now_us() const {
  return std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - epoch_).count();
}

void MetricsSink::record(FrameEvent e) {
  if (!enabled_) return;
  std::lock_guard lock(mu_);
  events_.push_back(std::move(e));
}

void MetricsSink::record_liveness(LivenessEvent e) {
  std::lock_guard lock(mu_);
  liveness_.push_back(std::move(e));
}

void MetricsSink::record_failure(FailureRecord f) {
  std::lock_guard lock(mu_);
  failures_.push_back(std::move(f));
}

std::vector<FrameEvent> MetricsSink::events() const {
  std::vector<FrameEvent> out;
  {
    std::lock_guard lock(mu_);
    out = events_;
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const FrameEvent& a, const FrameEvent& b) { return a.t_us < b.t_us; });
  return out;
}

std::vector<LivenessEvent> MetricsSink::liveness() const {
  std::vector<LivenessEvent> out;
  {
    std::lock_guard lock(mu_);
    out = liveness_;
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const LivenessEvent& a, const LivenessEvent& b) { return a.t_us < b.t_us; });
  return out;
}

std::vector<FailureRecord> MetricsSink::failures() const {
  std::lock_guard lock(mu_);
  return failures_;
}

std::string to_csv(const std::vector<FrameEvent>& events) {
  std::ostringstream out;
  out << kMetricsCsvHeader << "\n";
  for (const auto& e : events) {
    out << e.frame << ',' << e.stream << ',' << e.node << ',' << e.actor << ','
        << to_string(e.event) << ',' << e.t_us << '\n';
  }
  return out.str();
}

std::vector<FrameEvent> parse_csv(std::string_view text) {
  std::vector<FrameEvent> events;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line) || line != kMetricsCsvHeader) {
    throw ParseError("metrics csv: unexpected header", 1, 1);
  }
  ++line_no;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream row(line);
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw ParseError("metrics csv: expected 6 columns", line_no, 1);
    FrameEvent e;
    try {
      e.frame = std::stoull(cells[0]);
      e.stream = std::stoi(cells[1]);
      e.t_us = std::stoll(cells[5]);
    } catch (const std::exception&) {
      throw ParseError("metrics csv: bad number", line_no, 1);
    }
    e.node = cells[2];
    e.actor = cells[3];
    auto kind = parse_event_kind(cells[4]);
    if (!kind) throw ParseError("metrics csv: unknown event '" + cells[4] + "'", line_no, 1);
    e.event = *kind;
    events.push_back(std::move(e));
  }
  return events;
}

std::vector<StreamSummary> summarize(const std::vector<FrameEvent>& events,
                                     std::uint64_t frames_requested) {
  struct Acc {
    std::map<std::uint64_t, std::int64_t> submit;
    std::map<std::uint64_t, std::int64_t> complete;
  };
  std::map<int, Acc> streams;
  for (const auto& e : events) {
    if (e.event == FrameEventKind::submit) {
      auto& s = streams[e.stream].submit;
      if (!s.count(e.frame) || e.t_us < s[e.frame]) s[e.frame] = e.t_us;
    } else if (e.event == FrameEventKind::complete) {
      auto& c = streams[e.stream].complete;
      if (!c.count(e.frame) || e.t_us < c[e.frame]) c[e.frame] = e.t_us;
    }
  }
  std::vector<StreamSummary> out;
  for (const auto& [id, acc] : streams) {
    StreamSummary s;
    s.stream = id;
    s.frames_submitted = acc.submit.size();
    s.frames_requested = frames_requested ? frames_requested : s.frames_submitted;
    s.frames_completed = acc.complete.size();
    s.frames_stalled = s.frames_submitted > s.frames_completed ? s.frames_submitted - s.frames_completed : 0;
    std::vector<double> latencies;
    for (const auto& [frame, t] : acc.complete) {
      auto it = acc.submit.find(frame);
      if (it != acc.submit.end()) latencies.push_back((t - it->second) / 1000.0);
    }
    if (!latencies.empty()) {
      double sum = 0.0;
      for (double l : latencies) sum += l;
      s.mean_ms = sum / static_cast<double>(latencies.size());
      std::sort(latencies.begin(), latencies.end());
      // Nearest-rank percentile.
      std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(latencies.size())));
      s.p95_ms = latencies[std::max<std::size_t>(rank, 1) - 1];
    }
    out.push_back(s);
  }
  return out;
}

std::vector<std::uint64_t> completion_order(const std::vector<FrameEvent>& events, int stream) {
  std::vector<std::uint64_t> order;
  std::set<std::uint64_t> seen;
  std::vector<const FrameEvent*> completes;
  for (const auto& e : events) {
    if (e.event == FrameEventKind::complete && e.stream == stream) completes.push_back(&e);
  }
  std::stable_sort(completes.begin(), completes.end(),
                   [](const FrameEvent* a, const FrameEvent* b) { return a->t_us < b->t_us; });
  for (const FrameEvent* e : completes) {
    if (seen.insert(e->frame).second) order.push_back(e->frame);
  }
  return order;
}

double node_frame_period_ms(const std::vector<FrameEvent>& events, std::string_view node, int stream) {
  std::map<std::uint64_t, std::int64_t> done;
  for (const auto& e : events) {
    if (e.node != node || e.stream != stream || e.event != FrameEventKind::fire_end) continue;
    auto& t = done[e.frame];
    t = std::max(t, e.t_us);
  }
  if (done.size() < 2) return 0.0;
  std::vector<std::int64_t> times;
  for (const auto& [frame, t] : done) times.push_back(t);
  std::sort(times.begin(), times.end());
  return (times.back() - times.front()) / 1000.0 / static_cast<double>(times.size() - 1);
}

}  // namespace dflow::runtime
