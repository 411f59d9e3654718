#pragma once

// Truncated-BPTT training: the loss is accumulated over segments of
// `loss_every` frames; after each segment the optimizer steps and the
// network state is cut from the graph.

#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "json.hpp"

#include "evsnn/event_io.hpp"
#include "evsnn/losses.hpp"
#include "evsnn/metrics.hpp"
#include "evsnn/network.hpp"
#include "evsnn/optim.hpp"
#include "evsnn/synthetic.hpp"

namespace evsnn {

struct TrainConfig {
  double lr = 0.002;
  std::size_t batch = 2;
  std::size_t epochs = 100;
  double lambda = 1.0;
  std::size_t l0 = 2;
  std::size_t loss_every = 5;
  std::size_t seq_len = 40;
  std::size_t bins = 1;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and non-negative");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    if (loss_every < 1) throw ConfigError("loss_every must be >= 1");
    if (seq_len < 1) throw ConfigError("seq_len must be >= 1");
    if (bins < 1) throw ConfigError("bins must be >= 1");
  }
};

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.lambda = j.value("lambda", c.lambda);
  c.l0 = j.value("l0", c.l0);
  c.loss_every = j.value("loss_every", c.loss_every);
  c.seq_len = j.value("seq_len", c.seq_len);
  c.bins = j.value("bins", c.bins);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},         {"batch", c.batch},     {"epochs", c.epochs},
          {"lambda", c.lambda}, {"l0", c.l0},           {"loss_every", c.loss_every},
          {"seq_len", c.seq_len}, {"bins", c.bins},     {"seed", c.seed}};
}

struct TrainingDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Network-ready form of one simulated sequence. Frame k is driven by the
/// events in (t_{k-1}, t_k], encoded into `bins` normalized temporal bins.
struct TrainingSequence {
  std::vector<std::vector<Tensor>> inputs;  // per frame: bins × {1,1,H,W}
  std::vector<Tensor> targets;              // per frame: {1,1,H,W}, histogram-normalized
  std::vector<Tensor> frames;               // per frame: {H,W}, raw intensities
  std::vector<Shift> flows;
  std::size_t height = 0, width = 0;
  std::size_t size() const { return targets.size(); }
};

/// Voxelizes the inter-frame windows of an event stream. `frame_times[k]` is
/// the timestamp of frame k; frame 0's window has the same length as the first
/// interval (or `fallback_interval` when there is only one frame).
inline std::vector<std::vector<Tensor>> voxelize_frames(const std::vector<Event>& events,
                                                        const std::vector<double>& frame_times, SensorSize sensor,
                                                        std::size_t bins, double fallback_interval = 0.01) {
  std::vector<std::vector<Tensor>> out;
  for (std::size_t k = 0; k < frame_times.size(); ++k) {
    const double interval = frame_times.size() > 1 ? frame_times[1] - frame_times[0] : fallback_interval;
    const double t_begin = k == 0 ? frame_times[0] - interval : frame_times[k - 1];
    const EventWindow w = window_between(events, t_begin, frame_times[k], sensor);
    auto slices = slice_temporal_bins(normalize_nonzero(encode_voxel_grid(w, bins)));
    for (auto& s : slices) s = s.reshape({1, 1, sensor.height, sensor.width});
    out.push_back(std::move(slices));
  }
  return out;
}

inline TrainingSequence prepare_sequence(const SimulationResult& sim, std::size_t bins, std::size_t max_frames = 0) {
  TrainingSequence seq;
  seq.height = sim.sensor.height;
  seq.width = sim.sensor.width;
  std::size_t n = sim.frames.size();
  if (max_frames > 0) n = std::min(n, max_frames);
  std::vector<double> times(sim.timestamps.begin(), sim.timestamps.begin() + static_cast<long>(n));
  seq.inputs = voxelize_frames(sim.events, times, sim.sensor, bins);
  for (std::size_t k = 0; k < n; ++k) {
    seq.frames.push_back(sim.frames[k]);
    seq.targets.push_back(metrics::histogram_normalize(sim.frames[k]).reshape({1, 1, seq.height, seq.width}));
    seq.flows.push_back(sim.flows[k]);
  }
  return seq;
}

/// Stacks equally long sequences along the batch axis.
inline TrainingSequence stack_sequences(const std::vector<const TrainingSequence*>& parts) {
  if (parts.empty()) throw ContractError("stack_sequences: nothing to stack");
  if (parts.size() == 1) return *parts.front();
  TrainingSequence out;
  const auto& first = *parts.front();
  out.height = first.height;
  out.width = first.width;
  for (const auto* p : parts)
    if (p->size() != first.size() || p->height != first.height || p->width != first.width ||
        p->inputs.front().size() != first.inputs.front().size())
      throw ContractError("stack_sequences: sequences differ in length, size or bins");
  for (std::size_t k = 0; k < first.size(); ++k) {
    std::vector<Tensor> bins;
    for (std::size_t b = 0; b < first.inputs[k].size(); ++b) {
      std::vector<Tensor> col;
      for (const auto* p : parts) col.push_back(p->inputs[k][b]);
      bins.push_back(concat(col, 0));
    }
    out.inputs.push_back(std::move(bins));
    std::vector<Tensor> tg;
    for (const auto* p : parts) tg.push_back(p->targets[k]);
    out.targets.push_back(concat(tg, 0));
    out.frames.push_back(first.frames[k]);
    out.flows.push_back(first.flows[k]);
  }
  return out;
}

struct EvalResult {
  double mse = 0.0;
  double ssim = 0.0;
  double spike_rate = 0.0;
  std::vector<Tensor> predictions;  // raw potentials, one {1,1,H,W} per frame
  Probe probe;
};

/// Inference over a single sequence. Scores average hn(pred) vs hn(gt) over
/// frames 1..L-1 (frame 0 has no preceding event window).
inline EvalResult evaluate(const Network& net, const TrainingSequence& seq) {
  NoGradGuard ng;
  EvalResult r;
  NetworkState state = net.initial_state(1);
  std::size_t scored = 0;
  for (std::size_t k = 0; k < seq.size(); ++k) {
    Tensor out;
    for (const auto& bin : seq.inputs[k]) out = net.forward_step(state, bin, &r.probe);
    r.predictions.push_back(out);
    if (k == 0 && seq.size() > 1) continue;
    const Tensor p = metrics::histogram_normalize(out);
    r.mse += metrics::mse(p, seq.targets[k]);
    r.ssim += metrics::ssim(p, seq.targets[k]);
    ++scored;
  }
  if (scored) {
    r.mse /= static_cast<double>(scored);
    r.ssim /= static_cast<double>(scored);
  }
  SignalTally all;
  for (const auto& [id, t] : r.probe.neurons) all.merge(t);
  r.spike_rate = all.rate();
  return r;
}

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double mse = 0.0;
  double ssim = 0.0;
  double spike_rate = 0.0;
};

inline void write_log_header(std::ostream& os) { os << "epoch,loss,mse,ssim,spike_rate\n"; }

inline void write_log_row(std::ostream& os, const EpochLog& e) {
  std::ostringstream line;
  line << std::setprecision(17) << e.epoch << ',' << e.loss << ',' << e.mse << ',' << e.ssim << ',' << e.spike_rate
       << '\n';
  os << line.str();
}

namespace detail {

/// Fisher-Yates with a 64-bit Mersenne twister, stable across standard libraries.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::mt19937_64& gen) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(gen() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace detail

/// Runs one truncated-BPTT pass over a (possibly stacked) sequence. Returns
/// the mean segment loss.
inline double train_sequence(Network& net, Adam& opt, const TrainingSequence& seq, const TrainConfig& cfg,
                             std::size_t epoch) {
  const std::size_t batch = seq.targets.front().dim(0);
  NetworkState state = net.initial_state(batch);
  std::optional<Tensor> previous;
  const LossWeights w{cfg.lambda, cfg.l0};
  double loss_sum = 0.0;
  std::size_t segments = 0;
  for (std::size_t start = 0; start < seq.size(); start += cfg.loss_every) {
    const std::size_t end = std::min(seq.size(), start + cfg.loss_every);
    std::vector<Tensor> preds, gts;
    std::vector<Shift> flows;
    for (std::size_t k = start; k < end; ++k) {
      Tensor out;
      for (const auto& bin : seq.inputs[k]) out = net.forward_step_train(state, bin);
      preds.push_back(out);
      gts.push_back(seq.targets[k]);
      flows.push_back(seq.flows[k]);
    }
    Tensor loss = total_loss(preds, gts, flows, w, start, previous);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "training diverged: loss " << value << " at epoch " << epoch << ", frames [" << start << ", " << end
          << ")";
      throw TrainingDivergence(msg.str());
    }
    opt.zero_grad();
    loss.backward();
    opt.step();
    detach_state(state);
    {
      NoGradGuard ng;
      previous = normalize_prediction(preds.back()).detach();
    }
    loss_sum += value;
    ++segments;
  }
  return segments ? loss_sum / static_cast<double>(segments) : 0.0;
}

struct TrainResult {
  std::vector<EpochLog> log;
};

/// Trains on `data` for cfg.epochs epochs. After each epoch the network is
/// evaluated on every sequence and one log row is emitted.
inline TrainResult train(Network& net, const std::vector<TrainingSequence>& data, const TrainConfig& cfg,
                         std::ostream* csv = nullptr, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: no training sequences");
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Adam opt(net.parameters(), acfg);
  std::mt19937_64 gen(cfg.seed);
  TrainResult result;
  if (csv) write_log_header(*csv);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = detail::seeded_permutation(data.size(), gen);
    double loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t i = 0; i < order.size(); i += cfg.batch) {
      std::vector<const TrainingSequence*> parts;
      for (std::size_t j = i; j < std::min(order.size(), i + cfg.batch); ++j) parts.push_back(&data[order[j]]);
      const TrainingSequence stacked = stack_sequences(parts);
      loss += train_sequence(net, opt, stacked, cfg, epoch);
      ++batches;
    }
    EpochLog row;
    row.epoch = epoch;
    row.loss = loss / static_cast<double>(batches);
    for (const auto& seq : data) {
      const EvalResult ev = evaluate(net, seq);
      row.mse += ev.mse;
      row.ssim += ev.ssim;
      row.spike_rate += ev.spike_rate;
    }
    const double n = static_cast<double>(data.size());
    row.mse /= n;
    row.ssim /= n;
    row.spike_rate /= n;
    result.log.push_back(row);
    if (csv) write_log_row(*csv, row);
    if (on_epoch) on_epoch(row);
  }
  return result;
}

}  // namespace evsnn
