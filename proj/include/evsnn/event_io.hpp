#pragma once

// Event streams: text parsing, windowing, and continuous voxel-grid encoding.

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <span>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "evsnn/tensor.hpp"

namespace evsnn {

struct Event {
  double t = 0.0;
  int x = 0;
  int y = 0;
  int p = 1;  // -1 or +1

  friend bool operator==(const Event&, const Event&) = default;
};

struct ParseError : std::runtime_error {
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_number(line) {}
  std::size_t line_number;
};

struct OrderingError : std::runtime_error {
  OrderingError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_number(line) {}
  std::size_t line_number;
};

struct SensorSize {
  std::size_t height = 0;
  std::size_t width = 0;
  friend bool operator==(const SensorSize&, const SensorSize&) = default;
};

struct EventStream {
  std::vector<Event> events;
  std::optional<SensorSize> sensor;  // from a "# H W" header when present
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  if constexpr (std::is_floating_point_v<T>) {
    // std::from_chars for double is not reliable on every toolchain we build with.
    std::string tmp(s);
    char* end = nullptr;
    errno = 0;
    out = static_cast<T>(std::strtod(tmp.c_str(), &end));
    return errno == 0 && end == tmp.c_str() + tmp.size() && std::isfinite(out);
  } else {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
  }
}

}  // namespace detail

/// Parses "t x y p" lines (p in {0,1}; 0 is OFF). Lines starting with '#'
/// are comments; a leading "# H W" comment declares the sensor size.
/// Timestamps must be non-decreasing.
inline EventStream parse_event_stream(std::istream& in) {
  EventStream out;
  std::string line;
  std::size_t lineno = 0;
  double last_t = -std::numeric_limits<double>::infinity();
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv(line);
    auto first = sv.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) continue;
    sv.remove_prefix(first);
    if (sv.front() == '#') {
      auto fields = detail::split_ws(sv.substr(1));
      std::size_t h = 0, w = 0;
      if (out.events.empty() && !out.sensor && fields.size() == 2 && detail::parse_number(fields[0], h) &&
          detail::parse_number(fields[1], w) && h > 0 && w > 0)
        out.sensor = SensorSize{h, w};
      continue;
    }
    auto fields = detail::split_ws(sv);
    if (fields.size() != 4) throw ParseError(lineno, "expected 4 fields \"t x y p\", got " + std::to_string(fields.size()));
    Event e;
    int p = 0;
    if (!detail::parse_number(fields[0], e.t)) throw ParseError(lineno, "bad timestamp '" + std::string(fields[0]) + "'");
    if (!detail::parse_number(fields[1], e.x) || e.x < 0) throw ParseError(lineno, "bad x '" + std::string(fields[1]) + "'");
    if (!detail::parse_number(fields[2], e.y) || e.y < 0) throw ParseError(lineno, "bad y '" + std::string(fields[2]) + "'");
    if (!detail::parse_number(fields[3], p) || (p != 0 && p != 1))
      throw ParseError(lineno, "polarity must be 0 or 1, got '" + std::string(fields[3]) + "'");
    e.p = p == 1 ? 1 : -1;
    if (out.sensor && (static_cast<std::size_t>(e.x) >= out.sensor->width ||
                       static_cast<std::size_t>(e.y) >= out.sensor->height))
      throw ParseError(lineno, "event outside declared sensor size");
    if (e.t < last_t) throw OrderingError(lineno, "timestamp decreases");
    last_t = e.t;
    out.events.push_back(e);
  }
  return out;
}

inline EventStream parse_event_stream(const std::string& text) {
  std::istringstream is(text);
  return parse_event_stream(is);
}

inline void write_event_stream(std::ostream& os, const std::vector<Event>& events,
                               std::optional<SensorSize> sensor = std::nullopt) {
  if (sensor) os << "# " << sensor->height << ' ' << sensor->width << '\n';
  char buf[64];
  for (const auto& e : events) {
    std::snprintf(buf, sizeof buf, "%.9f %d %d %d\n", e.t, e.x, e.y, e.p > 0 ? 1 : 0);
    os << buf;
  }
}

/// Throws ParseError(0, ...) if any event lies outside H×W.
inline void validate_bounds(const std::vector<Event>& events, SensorSize sensor) {
  for (const auto& e : events)
    if (e.x < 0 || e.y < 0 || static_cast<std::size_t>(e.x) >= sensor.width ||
        static_cast<std::size_t>(e.y) >= sensor.height)
      throw ParseError(0, "event (" + std::to_string(e.x) + "," + std::to_string(e.y) + ") outside " +
                              std::to_string(sensor.height) + "x" + std::to_string(sensor.width));
}

// ---------------------------------------------------------------------------
// Windows

struct EventWindow {
  std::vector<Event> events;
  double t0 = 0.0;
  double t1 = 0.0;
  std::size_t sensor_h = 0;
  std::size_t sensor_w = 0;
};

struct FixedDuration {
  double seconds;
};
struct FixedCount {
  std::size_t count;
};
using WindowStrategy = std::variant<FixedDuration, FixedCount>;

/// Contiguous, non-overlapping windows covering a sorted stream.
/// Duration windows start at the first event (or `origin`) and are
/// [origin + kΔT, origin + (k+1)ΔT); empty gaps yield empty windows.
/// Count windows hold K events each (last may be short) and span from their
/// first event to the next window's first event.
inline std::vector<EventWindow> split_windows(const std::vector<Event>& events, const WindowStrategy& strategy,
                                              SensorSize sensor, std::optional<double> origin = std::nullopt) {
  std::vector<EventWindow> out;
  if (const auto* fd = std::get_if<FixedDuration>(&strategy)) {
    if (!(fd->seconds > 0.0)) throw ConfigError("split_windows: duration must be positive");
    if (events.empty()) return out;
    const double o = origin.value_or(events.front().t);
    if (events.front().t < o) throw ConfigError("split_windows: origin after first event");
    const double dt = fd->seconds;
    auto start_of = [&](std::size_t k) { return o + static_cast<double>(k) * dt; };
    for (const auto& e : events) {
      auto k = static_cast<std::size_t>(std::floor((e.t - o) / dt));
      while (k > 0 && e.t < start_of(k)) --k;
      while (e.t >= start_of(k + 1)) ++k;
      while (out.size() <= k) {
        EventWindow w;
        w.t0 = start_of(out.size());
        w.t1 = start_of(out.size() + 1);
        w.sensor_h = sensor.height;
        w.sensor_w = sensor.width;
        out.push_back(std::move(w));
      }
      out[k].events.push_back(e);
    }
  } else {
    const auto& fc = std::get<FixedCount>(strategy);
    if (fc.count < 1) throw ConfigError("split_windows: count must be >= 1");
    for (std::size_t i = 0; i < events.size(); i += fc.count) {
      EventWindow w;
      const std::size_t end = std::min(events.size(), i + fc.count);
      w.events.assign(events.begin() + static_cast<long>(i), events.begin() + static_cast<long>(end));
      w.t0 = events[i].t;
      w.t1 = end < events.size() ? events[end].t : events[end - 1].t;
      w.sensor_h = sensor.height;
      w.sensor_w = sensor.width;
      out.push_back(std::move(w));
    }
  }
  return out;
}

/// Events with t in (t_begin, t_end], the interval between two frames.
inline EventWindow window_between(const std::vector<Event>& events, double t_begin, double t_end, SensorSize sensor) {
  EventWindow w;
  w.t0 = t_begin;
  w.t1 = t_end;
  w.sensor_h = sensor.height;
  w.sensor_w = sensor.width;
  auto lo = std::upper_bound(events.begin(), events.end(), t_begin, [](double t, const Event& e) { return t < e.t; });
  auto hi = std::upper_bound(events.begin(), events.end(), t_end, [](double t, const Event& e) { return t < e.t; });
  if (lo < hi) w.events.assign(lo, hi);
  return w;
}

// ---------------------------------------------------------------------------
// Voxel grid

struct VoxelGrid {
  std::size_t bins = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;  // bins × height × width
  double t0 = 0.0;
  double t1 = 0.0;

  std::size_t plane_size() const { return height * width; }
  std::span<const double> plane(std::size_t b) const {
    return std::span<const double>(data).subspan(b * plane_size(), plane_size());
  }
  double at(std::size_t b, std::size_t y, std::size_t x) const { return data[(b * height + y) * width + x]; }
};

/// Normalized event time t* = (B-1)(t - t0)/(t1 - t0), clamped to [0, B-1];
/// zero for a degenerate window.
inline double normalized_timestamp(double t, double t0, double t1, std::size_t bins) {
  if (!(t1 > t0)) return 0.0;
  const double ts = static_cast<double>(bins - 1) / (t1 - t0) * (t - t0);
  return std::clamp(ts, 0.0, static_cast<double>(bins - 1));
}

/// Each event deposits p·max(0, 1 - |n - t*|) into bins n = floor(t*), floor(t*)+1.
inline VoxelGrid encode_voxel_grid(const EventWindow& window, std::size_t bins) {
  if (bins < 1) throw ConfigError("encode_voxel_grid: bins must be >= 1");
  VoxelGrid g;
  g.bins = bins;
  g.height = window.sensor_h;
  g.width = window.sensor_w;
  g.t0 = window.t0;
  g.t1 = window.t1;
  g.data.assign(bins * g.height * g.width, 0.0);
  for (const auto& e : window.events) {
    if (e.x < 0 || e.y < 0 || static_cast<std::size_t>(e.x) >= g.width || static_cast<std::size_t>(e.y) >= g.height)
      throw ShapeError("encode_voxel_grid: event outside sensor");
    const double ts = normalized_timestamp(e.t, window.t0, window.t1, bins);
    const auto lower = static_cast<std::size_t>(std::floor(ts));
    const double f = ts - static_cast<double>(lower);
    const std::size_t pix = static_cast<std::size_t>(e.y) * g.width + static_cast<std::size_t>(e.x);
    g.data[lower * g.plane_size() + pix] += e.p * (1.0 - f);
    if (f > 0.0 && lower + 1 < bins) g.data[(lower + 1) * g.plane_size() + pix] += e.p * f;
  }
  return g;
}

/// Standardizes the nonzero entries to mean 0 / population std 1. Zeros stay
/// zero. With fewer than two distinct nonzero values every nonzero entry
/// becomes 0.
inline VoxelGrid normalize_nonzero(VoxelGrid grid) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : grid.data)
    if (v != 0.0) {
      sum += v;
      ++n;
    }
  if (n == 0) return grid;
  const double mu = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : grid.data)
    if (v != 0.0) ss += (v - mu) * (v - mu);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  for (double& v : grid.data) {
    if (v == 0.0) continue;
    v = sd > 0.0 ? (v - mu) / sd : 0.0;
  }
  return grid;
}

/// One 1×H×W tensor per temporal bin, in bin order.
inline std::vector<Tensor> slice_temporal_bins(const VoxelGrid& grid) {
  std::vector<Tensor> out;
  out.reserve(grid.bins);
  for (std::size_t b = 0; b < grid.bins; ++b) {
    auto p = grid.plane(b);
    out.emplace_back(Shape{1, grid.height, grid.width}, std::vector<double>(p.begin(), p.end()));
  }
  return out;
}

/// Inverse of slice_temporal_bins.
inline VoxelGrid stack_temporal_bins(const std::vector<Tensor>& slices, double t0 = 0.0, double t1 = 0.0) {
  VoxelGrid g;
  g.bins = slices.size();
  g.t0 = t0;
  g.t1 = t1;
  if (slices.empty()) return g;
  g.height = slices[0].dim(slices[0].rank() - 2);
  g.width = slices[0].dim(slices[0].rank() - 1);
  for (const auto& s : slices) {
    if (s.numel() != g.height * g.width) throw ShapeError("stack_temporal_bins: slice size mismatch");
    g.data.insert(g.data.end(), s.data().begin(), s.data().end());
  }
  return g;
}

}  // namespace evsnn
