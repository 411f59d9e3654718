// evsnn: simulate, voxelize, train, reconstruct, probe, profile, gradcheck.

#include <cmath>
#include <numbers>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "evsnn/evsnn.hpp"
#include "evsnn/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace evsnn;

namespace {

json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return json::parse(is);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

struct WindowFlags {
  double window_ms = 0.0;
  std::size_t window_count = 0;

  void add(CLI::App* app) {
    auto* d = app->add_option("--window-ms", window_ms, "fixed window duration in milliseconds");
    auto* c = app->add_option("--window-count", window_count, "fixed number of events per window");
    d->excludes(c);
  }
  WindowStrategy strategy() const {
    if (window_count > 0) return FixedCount{window_count};
    return FixedDuration{(window_ms > 0 ? window_ms : 10.0) * 1e-3};
  }
};

SensorSize sensor_of(const EventStream& es, std::size_t h, std::size_t w) {
  if (h && w) return {h, w};
  if (es.sensor) return *es.sensor;
  SensorSize s{0, 0};
  for (const auto& e : es.events) {
    s.height = std::max(s.height, static_cast<std::size_t>(e.y) + 1);
    s.width = std::max(s.width, static_cast<std::size_t>(e.x) + 1);
  }
  if (!s.height || !s.width) throw ConfigError("sensor size unknown: pass --height/--width or a '# H W' header");
  return s;
}

/// Zero-pads a {1,1,h,w} bin to {1,1,H,W} (bottom/right).
Tensor pad_bin(const Tensor& bin, std::size_t H, std::size_t W) {
  const std::size_t h = bin.dim(bin.rank() - 2), w = bin.dim(bin.rank() - 1);
  if (h == H && w == W) return bin.reshape({1, 1, H, W});
  std::vector<double> d(H * W, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) d[y * W + x] = bin[y * w + x];
  return Tensor({1, 1, H, W}, std::move(d));
}

Tensor crop(const Tensor& img, std::size_t h, std::size_t w) {
  const std::size_t W = img.dim(img.rank() - 1);
  std::vector<double> d(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) d[y * w + x] = img[y * W + x];
  return Tensor({h, w}, std::move(d));
}

/// Network sized for `sensor` (padded to the encoder stride) from a checkpoint.
Network network_for_sensor(const std::string& checkpoint, SensorSize sensor, json* extra) {
  Network net = Network::load(checkpoint, extra);
  NetworkSpec s = net.spec();
  s.height = sensor.height;
  s.width = sensor.width;
  s = s.padded();
  if (s.height != net.spec().height || s.width != net.spec().width) return net.with_input_size(s.height, s.width);
  return net;
}

std::size_t bins_from(const json& extra, std::size_t flag) {
  if (flag) return flag;
  if (extra.contains("train") && extra["train"].contains("bins")) return extra["train"]["bins"].get<std::size_t>();
  return 5;
}

// -- simulate ----------------------------------------------------------------

int cmd_simulate(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed) {
  SceneConfig c = config.empty() ? SceneConfig{} : scene_config_from_json(read_json(config));
  if (seed) c.seed = *seed;
  const SimulationResult sim = generate_events(make_scene(c));
  write_dataset(out, sim);
  write_text(fs::path(out) / "scene.json", to_json(c).dump(2) + "\n");
  std::cout << "wrote " << sim.events.size() << " events and " << sim.frames.size() << " frames to " << out << "\n";
  return 0;
}

// -- voxelize ----------------------------------------------------------------

int cmd_voxelize(const std::string& events, const std::string& out, std::size_t bins, const WindowFlags& wf,
                 std::size_t h, std::size_t w, bool normalize) {
  const EventStream es = read_event_file(events);
  const SensorSize sensor = sensor_of(es, h, w);
  validate_bounds(es.events, sensor);
  const auto windows = split_windows(es.events, wf.strategy(), sensor);
  TensorArchive ar;
  std::vector<double> meta;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    VoxelGrid g = encode_voxel_grid(windows[i], bins);
    if (normalize) g = normalize_nonzero(std::move(g));
    char name[32];
    std::snprintf(name, sizeof name, "window_%04zu", i);
    ar.put_values(name, {g.bins, g.height, g.width}, g.data);
    meta.insert(meta.end(), {windows[i].t0, windows[i].t1, static_cast<double>(windows[i].events.size())});
  }
  ar.put_values("windows", {windows.size(), 3}, meta);
  fs::create_directories(out);
  ar.save((fs::path(out) / "voxels.spkt").string());
  std::cout << "wrote " << windows.size() << " voxel grids (" << bins << " bins, " << sensor.height << "x"
            << sensor.width << ")\n";
  return 0;
}

// -- train -------------------------------------------------------------------

int cmd_train(const std::string& spec_path, const std::string& train_path, const std::vector<std::string>& data,
              const std::string& out, std::optional<std::size_t> epochs, std::optional<std::uint64_t> seed,
              std::size_t bins) {
  NetworkSpec spec = spec_path.empty() ? NetworkSpec{} : spec_from_json(read_json(spec_path));
  TrainConfig tc = train_path.empty() ? TrainConfig{} : train_config_from_json(read_json(train_path));
  if (epochs) tc.epochs = *epochs;
  if (seed) {
    tc.seed = *seed;
    spec.seed = *seed;
  }
  if (bins) tc.bins = bins;
  if (data.empty()) throw ConfigError("train needs at least one --data directory");
  std::vector<TrainingSequence> seqs;
  for (const auto& d : data) seqs.push_back(prepare_sequence(read_dataset(d), tc.bins, tc.seq_len));
  spec.height = seqs.front().height;
  spec.width = seqs.front().width;
  Network net(spec);
  fs::create_directories(out);
  std::ofstream csv(fs::path(out) / "metrics.csv");
  train(net, seqs, tc, &csv, [](const EpochLog& e) {
    std::printf("epoch %zu loss %.6f mse %.6f ssim %.4f rate %.4f\n", e.epoch, e.loss, e.mse, e.ssim, e.spike_rate);
    std::fflush(stdout);
  });
  net.save((fs::path(out) / "checkpoint.spkt").string(), {{"train", to_json(tc)}});
  write_text(fs::path(out) / "train_config.json", to_json(tc).dump(2) + "\n");
  return 0;
}

// -- reconstruct / probe input ------------------------------------------------

struct InputWindows {
  std::vector<std::vector<Tensor>> bins;  // sensor-sized {1,1,h,w}
  std::vector<double> t0, t1;
  std::vector<Tensor> frames;             // ground truth when available
  SensorSize sensor;
};

InputWindows load_inputs(const std::string& data_dir, const std::string& events, const WindowFlags& wf,
                         std::size_t bins, std::size_t h, std::size_t w) {
  InputWindows in;
  if (!data_dir.empty()) {
    const SimulationResult sim = read_dataset(data_dir);
    in.sensor = sim.sensor;
    in.bins = voxelize_frames(sim.events, sim.timestamps, sim.sensor, bins);
    for (std::size_t k = 0; k < sim.timestamps.size(); ++k) {
      in.t1.push_back(sim.timestamps[k]);
      in.t0.push_back(k ? sim.timestamps[k - 1] : sim.timestamps[0] - (sim.timestamps.size() > 1 ? sim.timestamps[1] - sim.timestamps[0] : 0.01));
    }
    in.frames = sim.frames;
    return in;
  }
  if (events.empty()) throw ConfigError("pass --events or --data");
  const EventStream es = read_event_file(events);
  in.sensor = sensor_of(es, h, w);
  validate_bounds(es.events, in.sensor);
  for (const auto& win : split_windows(es.events, wf.strategy(), in.sensor)) {
    auto slices = slice_temporal_bins(normalize_nonzero(encode_voxel_grid(win, bins)));
    for (auto& s : slices) s = s.reshape({1, 1, in.sensor.height, in.sensor.width});
    in.bins.push_back(std::move(slices));
    in.t0.push_back(win.t0);
    in.t1.push_back(win.t1);
  }
  return in;
}

int cmd_reconstruct(const std::string& checkpoint, const std::string& events, const std::string& data_dir,
                    const std::string& out, std::size_t bins_flag, const WindowFlags& wf, std::size_t h,
                    std::size_t w) {
  json extra;
  Network::load(checkpoint, &extra);
  const std::size_t bins = bins_from(extra, bins_flag);
  const InputWindows in = load_inputs(data_dir, events, wf, bins, h, w);
  const Network net = network_for_sensor(checkpoint, in.sensor, nullptr);
  fs::create_directories(fs::path(out) / "recon");
  std::ofstream index(fs::path(out) / "reconstruct.csv");
  index << "index,t0,t1,file\n";
  NoGradGuard ng;
  NetworkState state = net.initial_state(1);
  for (std::size_t k = 0; k < in.bins.size(); ++k) {
    Tensor img;
    for (const auto& b : in.bins[k]) img = net.forward_step(state, pad_bin(b, net.spec().height, net.spec().width));
    const Tensor view = metrics::histogram_normalize(crop(img, in.sensor.height, in.sensor.width));
    const std::string name = frame_name(k);
    write_pgm((fs::path(out) / "recon" / name).string(), view);
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu,%.9f,%.9f,recon/%s\n", k, in.t0[k], in.t1[k], name.c_str());
    index << buf;
  }
  std::cout << "wrote " << in.bins.size() << " reconstructions to " << out << "/recon\n";
  return 0;
}

int cmd_probe(const std::string& checkpoint, const std::string& events, const std::string& data_dir,
              const std::string& out, std::size_t cutoff, std::size_t bins_flag, const WindowFlags& wf,
              std::size_t extra_steps, bool fold_bn, bool zero_bias, std::size_t h, std::size_t w) {
  json extra;
  Network::load(checkpoint, &extra);
  const std::size_t bins = bins_from(extra, bins_flag);
  InputWindows in = load_inputs(data_dir, events, wf, bins, h, w);
  Network net = network_for_sensor(checkpoint, in.sensor, nullptr);
  if (fold_bn) net.fold_batch_norm();
  if (zero_bias) net.zero_biases();
  const auto spiking = net.spiking_layer_ids();
  const std::size_t total = std::max(in.bins.size(), cutoff) + extra_steps;
  fs::create_directories(out);
  std::ofstream csv(fs::path(out) / "probe.csv");
  csv << "step,empty_input,mse,ssim,spike_rate,lif_state_inf,lif_state_l2\n";
  NoGradGuard ng;
  NetworkState state = net.initial_state(1);
  const Tensor zero = Tensor::zeros({1, 1, net.spec().height, net.spec().width});
  for (std::size_t k = 0; k < total; ++k) {
    const bool empty = k >= cutoff || k >= in.bins.size();
    Probe probe;
    Tensor img;
    for (std::size_t b = 0; b < bins; ++b) {
      const Tensor bin = empty ? zero : pad_bin(in.bins[k][b], net.spec().height, net.spec().width);
      img = net.forward_step(state, bin, &probe);
    }
    SignalTally all;
    for (const auto& [id, t] : probe.neurons) all.merge(t);
    double vinf = 0.0, vl2 = 0.0;
    for (const auto& id : spiking)
      for (double v : state.v.at(id).data()) {
        vinf = std::max(vinf, std::fabs(v));
        vl2 += v * v;
      }
    std::string mse = "", ssim = "";
    if (k < in.frames.size()) {
      const Tensor p = metrics::histogram_normalize(crop(img, in.sensor.height, in.sensor.width));
      const Tensor g = metrics::histogram_normalize(in.frames[k]);
      mse = std::to_string(metrics::mse(p, g));
      ssim = std::to_string(metrics::ssim(p, g));
    }
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%d,%s,%s,%.6f,%.17g,%.17g\n", k, empty ? 1 : 0, mse.c_str(), ssim.c_str(),
                  all.rate(), vinf, std::sqrt(vl2));
    csv << buf;
  }
  std::cout << "wrote " << total << " probe rows to " << out << "/probe.csv\n";
  return 0;
}

// -- profile -----------------------------------------------------------------

double empty_input_rate(const Network& net, std::size_t steps = 5) {
  NoGradGuard ng;
  std::vector<Tensor> zeros(steps, Tensor::zeros({1, 1, net.spec().height, net.spec().width}));
  Probe p;
  net.forward_sequence(zeros, &p);
  SignalTally all;
  for (const auto& [id, t] : p.neurons) all.merge(t);
  return all.rate();
}

int cmd_profile(const std::string& checkpoint, const std::string& spec_path, const std::vector<std::string>& data,
                const std::string& events, const std::string& out, bool published_rates, std::size_t bins_flag,
                const WindowFlags& wf, std::size_t h, std::size_t w, std::optional<std::uint64_t> seed) {
  fs::create_directories(out);
  json report;
  std::string text;
  if (published_rates) {
    const PublishedEnergySummary s = published_energy_summary();
    report["published_rates"] = to_json(s);
    NetworkSpec ev;
    ev.height = 180;
    ev.width = 240;
    NetworkSpec pa = ev;
    pa.potential_assisted = true;
    pa.amp_enabled = true;
    const auto ev_ops = count_ann_ops(ev.padded(), 180, 240);
    const auto pa_ops = count_ann_ops(pa.padded(), 180, 240);
    report["counter_cross_check_180x240"] = {
        {"evsnn", {{"op_snn", total_ops(ev_ops, true)}, {"op_ann", total_ops(ev_ops, false)}, {"published_op", 16.12e9}}},
        {"pa_evsnn",
         {{"op_snn", total_ops(pa_ops, true)}, {"op_ann", total_ops(pa_ops, false)}, {"published_op_snn", 16.35e9},
          {"published_op_ann", 1.49e9}}}};
    char buf[1024];
    std::snprintf(buf, sizeof buf,
                  "%-12s %12s %12s %10s %12s\n"
                  "%-12s %12.4e %12s %10s %12.4f\n"
                  "%-12s %12.4e %12.4f %10.4f %12.4f\n"
                  "%-12s %12.4e %12.4f %10.4f %12.4f\n",
                  "model", "energy_J", "ann/snn", "rate", "normalized", "E2VID", s.e2vid_energy, "-", "-", 1.0,
                  "EVSNN", s.evsnn_energy, s.evsnn_ratio, 0.264, s.evsnn_normalized, "PA-EVSNN", s.pa_energy,
                  s.pa_ratio, 0.251, s.pa_normalized);
    text += buf;
    std::snprintf(buf, sizeof buf, "counter at 180x240: EVSNN op %.4e (published 1.612e10), PA-EVSNN snn %.4e ann %.4e\n",
                  total_ops(ev_ops, true) + total_ops(ev_ops, false), total_ops(pa_ops, true), total_ops(pa_ops, false));
    text += buf;
  } else {
    json extra;
    std::optional<Network> net;
    if (!checkpoint.empty()) {
      net.emplace(Network::load(checkpoint, &extra));
    } else if (!spec_path.empty()) {
      NetworkSpec s = spec_from_json(read_json(spec_path));
      if (seed) s.seed = *seed;
      net.emplace(s);
    } else {
      throw ConfigError("profile needs --checkpoint, --config or --published-rates");
    }
    const std::size_t bins = bins_from(extra, bins_flag);
    std::vector<std::vector<Tensor>> sequences;
    if (!data.empty() || !events.empty()) {
      std::vector<std::string> dirs = data;
      if (dirs.empty()) dirs.push_back("");
      bool resized = false;
      for (const auto& d : dirs) {
        const InputWindows in = load_inputs(d, events, wf, bins, h, w);
        if (!resized) {
          NetworkSpec s = net->spec();
          s.height = in.sensor.height;
          s.width = in.sensor.width;
          s = s.padded();
          if (s.height != net->spec().height || s.width != net->spec().width)
            net.emplace(net->with_input_size(s.height, s.width));
          resized = true;
        }
        std::vector<Tensor> seq;
        for (const auto& frame : in.bins)
          for (const auto& b : frame) seq.push_back(pad_bin(b, net->spec().height, net->spec().width));
        sequences.push_back(std::move(seq));
      }
    } else {
      throw ConfigError("profile needs --data or --events to measure spike rates (or use --published-rates)");
    }
    const SpikeStats stats = measure_spike_rates(*net, sequences);
    const std::size_t oh = h ? h : net->spec().height, ow = w ? w : net->spec().width;
    EnergyReport r = estimate_energy(count_ann_ops(net->spec(), oh, ow), stats);
    if (net->spec().skip == SkipKind::kAdd)
      r.warnings.push_back("ADD skip produces non-spike values (up to 2); its extra cost is not modeled");
    const double empty_rate = empty_input_rate(*net);
    if (empty_rate > 0)
      r.warnings.push_back("spike rate with empty input is " + std::to_string(empty_rate) +
                           " > 0 (BN shift/bias keeps neurons firing)");
    report = to_json(r, &stats);
    report["empty_input_rate"] = empty_rate;
    text = format_report(r, &stats);
  }
  write_text(fs::path(out) / "energy_report.json", report.dump(2) + "\n");
  write_text(fs::path(out) / "energy_report.txt", text);
  std::cout << text;
  return 0;
}

// -- gradcheck ---------------------------------------------------------------

/// Autograd gradient of Σ_t c_t S_t w.r.t. w for a scalar LIF driven by w·u_t,
/// against the hand-unrolled surrogate chain on the same spike pattern.
double frozen_spike_chain_error() {
  const double tau = 2.0, vth = 1.0;
  const std::vector<double> u{1.3, 2.6, 0.7}, c{0.5, 1.0, 2.0};
  Tensor wt = Tensor::scalar(1.1, true);
  NeuronConfig cfg;
  cfg.tau = tau;
  cfg.v_th = vth;
  Tensor v = Tensor::scalar(0.0);
  Tensor loss = Tensor::scalar(0.0);
  std::vector<double> h, s;
  for (std::size_t t = 0; t < u.size(); ++t) {
    StepResult r = lif_step(v, mul_scalar(wt, u[t]), cfg);
    h.push_back(r.v_charge.item());
    s.push_back(r.output.item());
    loss = add(loss, mul_scalar(r.output, c[t]));
    v = r.v;
  }
  loss.backward();
  const double analytic = wt.grad()[0];
  double g_v = 0.0, dw = 0.0;
  for (std::size_t t = u.size(); t-- > 0;) {
    const double x = h[t] - vth;
    const double surrogate = 1.0 / (1.0 + std::numbers::pi * std::numbers::pi * x * x);
    const double g_h = c[t] * surrogate + g_v * (1.0 - s[t]);
    dw += g_h * u[t] / tau;
    g_v = g_h * (1.0 - 1.0 / tau);
  }
  return std::fabs(analytic - dw) / std::max(std::fabs(dw), 1e-300);
}

NetworkSpec mp_toy_spec(NetworkSpec s) {
  s.neuron = NeuronKind::kMP_LIF;
  return s;
}

int cmd_gradcheck(const std::string& spec_path, const std::string& out, std::uint64_t seed) {
  std::vector<NamedCheck> rows = primitive_gradchecks(seed);

  NetworkSpec base;
  base.n_channels = 2;
  base.n_encoders = 1;
  base.n_residual = 1;
  base.height = 8;
  base.width = 8;
  if (!spec_path.empty()) base = spec_from_json(read_json(spec_path));
  base.seed = seed;
  {
    Network net(mp_toy_spec(base));
    std::mt19937_64 gen(seed);
    std::vector<Tensor> bins;
    for (int t = 0; t < 3; ++t) bins.push_back(detail::random_tensor({1, 1, base.height, base.width}, gen));
    const Tensor c = detail::random_tensor({1, 1, base.height, base.width}, gen, 0.5, 1.5);
    for (auto& [name, param] : net.named_parameters()) {
      auto f = [&](const Tensor&) {
        Tensor acc = Tensor::scalar(0.0);
        for (const auto& img : net.forward_sequence(bins)) acc = add(acc, sum(mul(img, c)));
        return acc;
      };
      std::vector<std::size_t> coords;
      for (std::size_t i = 0; i < std::min<std::size_t>(param.numel(), 4); ++i) coords.push_back(i * param.numel() / 4);
      rows.push_back({"mp_network." + name, finite_difference_check(f, param, 1e-5, coords).max_rel_error});
    }
  }
  rows.push_back({"frozen_spike_lif_chain", frozen_spike_chain_error(), 1e-10});
  {
    Network net(base);
    std::mt19937_64 gen(seed + 1);
    std::vector<Tensor> bins(2, detail::random_tensor({1, 1, base.height, base.width}, gen));
    Tensor loss = Tensor::scalar(0.0);
    for (const auto& img : net.forward_sequence(bins)) loss = add(loss, mul_scalar(sum(img), 0.0));
    loss.backward();
    double worst = 0.0;
    for (const auto& p : net.parameters())
      if (p.has_grad())
        for (double g : p.grad()) worst = std::max(worst, std::fabs(g));
    rows.push_back({"constant_loss_zero_grad", worst, 1e-300});
  }

  bool ok = true;
  std::string table;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-44s %12s %10s %s\n", "check", "error", "tolerance", "result");
  table += buf;
  for (const auto& r : rows) {
    const bool pass = r.tolerance <= 1e-300 ? r.error == 0.0 : r.passed();
    ok = ok && pass;
    std::snprintf(buf, sizeof buf, "%-44s %12.3e %10.1e %s\n", r.name.c_str(), r.error, r.tolerance,
                  pass ? "PASS" : "FAIL");
    table += buf;
  }
  std::cout << table;
  if (!out.empty()) {
    fs::create_directories(out);
    write_text(fs::path(out) / "gradcheck.txt", table);
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiking event-to-video reconstruction toolkit"};
  app.require_subcommand(1);

  std::string config, train_config, out, events, checkpoint, data_dir;
  std::vector<std::string> data;
  std::uint64_t seed_value = 1;
  std::size_t bins = 0, vox_bins = 5, height = 0, width = 0, cutoff = 0, extra_steps = 10;
  std::size_t epochs_value = 0;
  bool published_rates = false, normalize = false, fold_bn = false, zero_bias = false;
  WindowFlags wf;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic scene, its events and ground-truth frames");
  sim->add_option("--config", config, "scene config JSON");
  sim->add_option("--out", out, "output directory")->required();
  auto* sim_seed = sim->add_option("--seed", seed_value, "texture seed");

  auto* vox = app.add_subcommand("voxelize", "encode event windows as voxel grids (SPKT)");
  vox->add_option("--events", events, "event file")->required();
  vox->add_option("--out", out, "output directory")->required();
  vox->add_option("--bins", vox_bins, "temporal bins per window");
  vox->add_option("--height", height);
  vox->add_option("--width", width);
  vox->add_flag("--normalize", normalize, "standardize nonzero entries");
  wf.add(vox);

  auto* tr = app.add_subcommand("train", "train a network on simulated datasets");
  tr->add_option("--config", config, "network spec JSON");
  tr->add_option("--train-config", train_config, "training config JSON");
  tr->add_option("--data", data, "dataset directory (repeatable)")->required();
  tr->add_option("--out", out, "output directory")->required();
  auto* tr_epochs = tr->add_option("--epochs", epochs_value);
  auto* tr_seed = tr->add_option("--seed", seed_value);
  tr->add_option("--bins", bins);

  auto* rec = app.add_subcommand("reconstruct", "write one PGM image per event window");
  rec->add_option("--checkpoint", checkpoint)->required();
  rec->add_option("--events", events);
  rec->add_option("--data", data_dir, "dataset directory (windows between its frames)");
  rec->add_option("--out", out)->required();
  rec->add_option("--bins", bins);
  rec->add_option("--height", height);
  rec->add_option("--width", width);
  wf.add(rec);

  auto* pr = app.add_subcommand("probe", "feed empty input after a cutoff and log metrics per step");
  pr->add_option("--checkpoint", checkpoint)->required();
  pr->add_option("--events", events);
  pr->add_option("--data", data_dir);
  pr->add_option("--out", out)->required();
  pr->add_option("--cutoff", cutoff, "first window index replaced by empty input")->required();
  pr->add_option("--extra-steps", extra_steps, "empty steps appended after the input");
  pr->add_option("--bins", bins);
  pr->add_option("--height", height);
  pr->add_option("--width", width);
  pr->add_flag("--fold-bn", fold_bn);
  pr->add_flag("--zero-bias", zero_bias);
  wf.add(pr);

  auto* prof = app.add_subcommand("profile", "operation counts, spike rates and energy estimate");
  prof->add_option("--checkpoint", checkpoint);
  prof->add_option("--config", config, "network spec JSON (random weights)");
  prof->add_option("--data", data);
  prof->add_option("--events", events);
  prof->add_option("--out", out)->required();
  prof->add_flag("--published-rates", published_rates, "use the published operation counts and rates");
  prof->add_option("--bins", bins);
  prof->add_option("--height", height);
  prof->add_option("--width", width);
  auto* prof_seed = prof->add_option("--seed", seed_value);
  wf.add(prof);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--config", config, "network spec JSON for the network checks");
  gc->add_option("--out", out);
  gc->add_option("--seed", seed_value);

  CLI11_PARSE(app, argc, argv);

  auto opt_seed = [&](CLI::Option* o) { return o->count() ? std::optional<std::uint64_t>(seed_value) : std::nullopt; };
  try {
    if (*sim) return cmd_simulate(config, out, opt_seed(sim_seed));
    if (*vox) return cmd_voxelize(events, out, vox_bins, wf, height, width, normalize);
    if (*tr)
      return cmd_train(config, train_config, data, out,
                       tr_epochs->count() ? std::optional<std::size_t>(epochs_value) : std::nullopt, opt_seed(tr_seed),
                       bins);
    if (*rec) return cmd_reconstruct(checkpoint, events, data_dir, out, bins, wf, height, width);
    if (*pr)
      return cmd_probe(checkpoint, events, data_dir, out, cutoff, bins, wf, extra_steps, fold_bn, zero_bias, height,
                       width);
    if (*prof)
      return cmd_profile(checkpoint, config, data, events, out, published_rates, bins, wf, height, width,
                         opt_seed(prof_seed));
    if (*gc) return cmd_gradcheck(config, out, seed_value);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
