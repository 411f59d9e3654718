#pragma once

// Binary PGM (P5, 8-bit) images and on-disk simulated datasets:
//   events.txt  "# H W" header then "t x y p" lines
//   frames.csv  index,t,dy,dx
//   frames/frame_%04d.pgm

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "evsnn/event_io.hpp"
#include "evsnn/metrics.hpp"
#include "evsnn/synthetic.hpp"
#include "evsnn/tensor.hpp"
#include "evsnn/trainer.hpp"

namespace evsnn {

/// Values in [0,1] to bytes: floor(v·255 + 0.5), clamped.
inline std::vector<unsigned char> to_bytes(const Tensor& img) {
  std::vector<unsigned char> out(img.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = std::floor(img[i] * 255.0 + 0.5);
    out[i] = static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
  }
  return out;
}

inline void write_pgm(const std::string& path, const Tensor& img) {
  const std::size_t h = img.dim(img.rank() - 2), w = img.dim(img.rank() - 1);
  if (img.numel() != h * w) throw ShapeError("write_pgm: expected a single image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "P5\n" << w << ' ' << h << "\n255\n";
  const auto bytes = to_bytes(img);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Reads a P5 image into an {H,W} tensor scaled to [0,1].
inline Tensor read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  auto token = [&]() {
    std::string t;
    while (is >> std::ws && is.peek() == '#') {
      std::string comment;
      std::getline(is, comment);
    }
    is >> t;
    return t;
  };
  if (token() != "P5") throw FormatError(path + ": not a binary PGM");
  const std::size_t w = std::stoul(token()), h = std::stoul(token());
  const double maxval = std::stod(token());
  if (maxval != 255) throw FormatError(path + ": only 8-bit PGM is supported");
  is.get();
  std::vector<unsigned char> bytes(h * w);
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw FormatError(path + ": truncated pixel data");
  std::vector<double> d(bytes.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = bytes[i] / 255.0;
  return Tensor({h, w}, std::move(d));
}

inline std::string frame_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04zu.pgm", k);
  return buf;
}

inline void write_dataset(const std::filesystem::path& dir, const SimulationResult& sim) {
  std::filesystem::create_directories(dir / "frames");
  {
    std::ofstream os(dir / "events.txt");
    os << "# " << sim.sensor.height << ' ' << sim.sensor.width << '\n';
    write_event_stream(os, sim.events);
  }
  std::ofstream csv(dir / "frames.csv");
  csv << "index,t,dy,dx\n";
  for (std::size_t k = 0; k < sim.frames.size(); ++k) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu,%.9f,%ld,%ld\n", k, sim.timestamps[k], sim.flows[k].dy, sim.flows[k].dx);
    csv << buf;
    write_pgm((dir / "frames" / frame_name(k)).string(), sim.frames[k]);
  }
}

inline EventStream read_event_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return parse_event_stream(is);
}

/// Loads a dataset directory back into simulator form (frames quantized to 8 bits).
inline SimulationResult read_dataset(const std::filesystem::path& dir) {
  SimulationResult sim;
  EventStream es = read_event_file((dir / "events.txt").string());
  sim.events = std::move(es.events);
  std::ifstream csv(dir / "frames.csv");
  if (!csv) throw std::runtime_error("cannot open " + (dir / "frames.csv").string());
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, t, dy, dx;
    std::getline(ss, a, ',');
    std::getline(ss, t, ',');
    std::getline(ss, dy, ',');
    std::getline(ss, dx, ',');
    const std::size_t k = std::stoul(a);
    sim.timestamps.push_back(std::stod(t));
    sim.flows.push_back({std::stol(dy), std::stol(dx)});
    sim.frames.push_back(read_pgm((dir / "frames" / frame_name(k)).string()));
  }
  if (sim.frames.empty()) throw FormatError((dir / "frames.csv").string() + ": no frames");
  sim.sensor = es.sensor.value_or(SensorSize{sim.frames[0].dim(0), sim.frames[0].dim(1)});
  return sim;
}

}  // namespace evsnn
