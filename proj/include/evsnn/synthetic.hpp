#pragma once

// Minimal event simulator: a texture translated by integer steps with
// wrap-around; each pixel fires whenever its log intensity has moved by the
// contrast threshold since its last event.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "evsnn/event_io.hpp"
#include "evsnn/tensor.hpp"

namespace evsnn {

struct Shift {
  long dy = 0;
  long dx = 0;
  bool operator==(const Shift&) const = default;
};

struct SyntheticScene {
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<double> texture;     // row-major, values in [0,1]
  std::vector<Shift> trajectory;   // trajectory[k]: motion from frame k-1 to k (k >= 1)
  double contrast = 0.15;
  double log_eps = 1e-3;
  double frame_interval = 0.01;    // seconds between frames
  std::size_t steps() const { return trajectory.size(); }

  void validate() const {
    if (height == 0 || width == 0) throw ConfigError("scene must be non-empty");
    if (texture.size() != height * width) throw ConfigError("texture size does not match scene dimensions");
    if (!(contrast > 0.0)) throw ConfigError("contrast threshold must be positive");
    if (!(frame_interval > 0.0)) throw ConfigError("frame interval must be positive");
    if (trajectory.empty()) throw ConfigError("scene needs at least one step");
    for (double v : texture)
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("texture values must lie in [0,1]");
  }
};

struct SimulationResult {
  std::vector<Event> events;
  std::vector<Tensor> frames;        // {H, W} ground-truth intensities, one per step
  std::vector<Shift> flows;          // flows[k] = trajectory[k]
  std::vector<double> timestamps;    // frame k at k * frame_interval
  SensorSize sensor;
};

/// Frame with absolute offset (oy, ox): out[y,x] = tex[(y-oy) mod H, (x-ox) mod W].
inline std::vector<double> shifted_texture(const SyntheticScene& s, long oy, long ox) {
  std::vector<double> out(s.height * s.width);
  const long h = static_cast<long>(s.height), w = static_cast<long>(s.width);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const long sy = ((y - oy) % h + h) % h;
      const long sx = ((x - ox) % w + w) % w;
      out[static_cast<std::size_t>(y * w + x)] = s.texture[static_cast<std::size_t>(sy * w + sx)];
    }
  return out;
}

inline SimulationResult generate_events(const SyntheticScene& scene) {
  scene.validate();
  SimulationResult res;
  res.sensor = {scene.height, scene.width};
  const std::size_t n = scene.height * scene.width;
  long oy = 0, ox = 0;
  std::vector<double> prev;
  std::vector<double> ref(n);
  for (std::size_t k = 0; k < scene.steps(); ++k) {
    if (k > 0) {
      oy += scene.trajectory[k].dy;
      ox += scene.trajectory[k].dx;
    }
    std::vector<double> cur = shifted_texture(scene, oy, ox);
    const double t_k = static_cast<double>(k) * scene.frame_interval;
    if (k == 0) {
      for (std::size_t i = 0; i < n; ++i) ref[i] = std::log(cur[i] + scene.log_eps);
    } else {
      const double t_prev = static_cast<double>(k - 1) * scene.frame_interval;
      for (std::size_t i = 0; i < n; ++i) {
        const double l0 = std::log(prev[i] + scene.log_eps);
        const double l1 = std::log(cur[i] + scene.log_eps);
        if (l1 == l0) continue;
        const int x = static_cast<int>(i % scene.width);
        const int y = static_cast<int>(i / scene.width);
        if (l1 > l0) {
          while (l1 - ref[i] >= scene.contrast) {
            ref[i] += scene.contrast;
            const double frac = (ref[i] - l0) / (l1 - l0);
            res.events.push_back({t_prev + frac * scene.frame_interval, x, y, +1});
          }
        } else {
          while (ref[i] - l1 >= scene.contrast) {
            ref[i] -= scene.contrast;
            const double frac = (ref[i] - l0) / (l1 - l0);
            res.events.push_back({t_prev + frac * scene.frame_interval, x, y, -1});
          }
        }
      }
    }
    res.frames.push_back(Tensor({scene.height, scene.width}, cur));
    res.flows.push_back(scene.trajectory[k]);
    res.timestamps.push_back(t_k);
    prev = std::move(cur);
  }
  std::stable_sort(res.events.begin(), res.events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  return res;
}

// ---------------------------------------------------------------------------
// Scene construction

struct SceneConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t steps = 40;
  std::string texture = "blobs";  // "blobs" | "edge" | "constant"
  std::size_t blobs = 6;
  Shift velocity{1, 1};
  std::vector<Shift> trajectory;  // explicit per-step motion overrides velocity
  double contrast = 0.15;
  double frame_interval = 0.01;
  std::uint64_t seed = 1;
};

inline SceneConfig scene_config_from_json(const nlohmann::json& j) {
  SceneConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.steps = j.value("steps", c.steps);
  c.texture = j.value("texture", c.texture);
  c.blobs = j.value("blobs", c.blobs);
  if (j.contains("velocity")) {
    const auto& v = j.at("velocity");
    c.velocity = {v.at(0).get<long>(), v.at(1).get<long>()};
  }
  if (j.contains("trajectory"))
    for (const auto& v : j.at("trajectory")) c.trajectory.push_back({v.at(0).get<long>(), v.at(1).get<long>()});
  c.contrast = j.value("contrast", c.contrast);
  c.frame_interval = j.value("frame_interval", c.frame_interval);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline nlohmann::json to_json(const SceneConfig& c) {
  nlohmann::json traj = nlohmann::json::array();
  for (const auto& s : c.trajectory) traj.push_back({s.dy, s.dx});
  return {{"height", c.height},
          {"width", c.width},
          {"steps", c.steps},
          {"texture", c.texture},
          {"blobs", c.blobs},
          {"velocity", {c.velocity.dy, c.velocity.dx}},
          {"trajectory", traj},
          {"contrast", c.contrast},
          {"frame_interval", c.frame_interval},
          {"seed", c.seed}};
}

/// Sum of random Gaussian blobs on a mid-grey base, rescaled into [0.05, 0.95].
inline std::vector<double> blob_texture(std::size_t h, std::size_t w, std::size_t blobs, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * static_cast<double>(gen() >> 11) * 0x1.0p-53; };
  std::vector<double> tex(h * w, 0.0);
  for (std::size_t b = 0; b < blobs; ++b) {
    const double cy = uni(0, static_cast<double>(h));
    const double cx = uni(0, static_cast<double>(w));
    const double sigma = uni(0.08, 0.22) * static_cast<double>(std::min(h, w));
    const double amp = uni(-1.0, 1.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        // wrap-around distance keeps the texture seamless under translation
        double dy = std::fabs(static_cast<double>(y) - cy);
        double dx = std::fabs(static_cast<double>(x) - cx);
        dy = std::min(dy, static_cast<double>(h) - dy);
        dx = std::min(dx, static_cast<double>(w) - dx);
        tex[y * w + x] += amp * std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
      }
  }
  const auto [mn, mx] = std::minmax_element(tex.begin(), tex.end());
  const double lo = *mn, span = *mx - *mn;
  for (double& v : tex) v = span > 0 ? 0.05 + 0.9 * (v - lo) / span : 0.5;
  return tex;
}

inline SyntheticScene make_scene(const SceneConfig& c) {
  SyntheticScene s;
  s.height = c.height;
  s.width = c.width;
  s.contrast = c.contrast;
  s.frame_interval = c.frame_interval;
  if (c.texture == "blobs") {
    s.texture = blob_texture(c.height, c.width, c.blobs, c.seed);
  } else if (c.texture == "edge") {
    s.texture.assign(c.height * c.width, 0.2);
    for (std::size_t y = 0; y < c.height; ++y)
      for (std::size_t x = c.width / 2; x < c.width; ++x) s.texture[y * c.width + x] = 0.8;
  } else if (c.texture == "constant") {
    s.texture.assign(c.height * c.width, 0.5);
  } else {
    throw ConfigError("unknown texture '" + c.texture + "'");
  }
  if (!c.trajectory.empty()) {
    s.trajectory = c.trajectory;
    if (s.trajectory.size() != c.steps) throw ConfigError("trajectory length must equal steps");
  } else {
    s.trajectory.assign(c.steps, c.velocity);
  }
  if (!s.trajectory.empty()) s.trajectory[0] = {0, 0};
  return s;
}

}  // namespace evsnn
