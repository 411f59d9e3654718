#pragma once

// Operation counting and the 45nm energy model: an ANN MAC costs 4.6 pJ,
// an SNN accumulate costs 0.9 pJ and only happens for incoming spikes.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "evsnn/network.hpp"

namespace evsnn {

inline constexpr double kEnergyPerMac = 4.6e-12;
inline constexpr double kEnergyPerAdd = 0.9e-12;

struct LayerOpCount {
  std::string id;
  double op_ann = 0.0;    // MACs if the layer ran as an ANN layer
  bool is_snn = false;    // consumes {0,1} spikes only
  bool is_mp = false;     // membrane-potential branch (floating-point)
  bool is_linear = false;
};

/// Per conv: k_w·k_h·(c_in/groups)·h_out·w_out·c_out; per linear: f_in·f_out.
/// Pooling, skip merges and neuron updates are not counted.
inline std::vector<LayerOpCount> count_ann_ops(const NetworkSpec& spec, std::size_t height, std::size_t width) {
  std::vector<LayerOpCount> out;
  for (const auto& g : describe_layers(spec, height, width)) {
    LayerOpCount c;
    c.id = g.id;
    c.is_linear = g.is_linear;
    c.is_mp = g.mp_branch;
    c.is_snn = g.binary_input && !g.mp_branch && !g.event_input;
    if (g.is_linear)
      c.op_ann = static_cast<double>(g.c_in) * static_cast<double>(g.c_out);
    else
      c.op_ann = static_cast<double>(g.kernel * g.kernel) * static_cast<double>(g.c_in / g.groups) *
                 static_cast<double>(g.h_out * g.w_out) * static_cast<double>(g.c_out);
    out.push_back(c);
  }
  return out;
}

inline std::vector<LayerOpCount> count_ann_ops(const NetworkSpec& spec) {
  return count_ann_ops(spec, spec.height, spec.width);
}

inline double total_ops(const std::vector<LayerOpCount>& ops, bool snn) {
  double s = 0.0;
  for (const auto& o : ops)
    if (o.is_snn == snn) s += o.op_ann;
  return s;
}

struct SpikeStats {
  std::map<std::string, double> layer_rate;    // spiking neuron outputs
  std::map<std::string, double> layer_neurons; // neuron-step count behind each rate
  std::map<std::string, double> input_rate;    // fraction of ones feeding each conv
  double overall_neuron_weighted = 0.0;
  double overall_op_weighted = 0.0;
  bool binary = true;                          // every tallied inter-layer signal was {0,1}
};

/// Rates from an instrumented evaluation. `ops` (optional) enables the
/// op-weighted overall rate over SNN layers.
inline SpikeStats spike_stats_from_probe(const Probe& probe, const std::vector<LayerOpCount>& ops = {}) {
  SpikeStats s;
  SignalTally all;
  for (const auto& [id, t] : probe.neurons) {
    s.layer_rate[id] = t.rate();
    s.layer_neurons[id] = t.elements;
    all.merge(t);
  }
  s.overall_neuron_weighted = all.rate();
  for (const auto& [id, t] : probe.conv_inputs) s.input_rate[id] = t.rate();
  for (const auto& [id, t] : probe.signals) s.binary = s.binary && t.binary;
  double num = 0.0, den = 0.0;
  for (const auto& o : ops) {
    if (!o.is_snn) continue;
    auto it = s.input_rate.find(o.id);
    if (it == s.input_rate.end()) continue;
    num += o.op_ann * it->second;
    den += o.op_ann;
  }
  s.overall_op_weighted = den > 0 ? num / den : 0.0;
  return s;
}

/// Runs every sequence from a zero state and pools the tallies.
inline SpikeStats measure_spike_rates(const Network& net, const std::vector<std::vector<Tensor>>& sequences) {
  Probe probe;
  {
    NoGradGuard ng;
    for (const auto& seq : sequences) {
      Probe local;
      net.forward_sequence(seq, &local);
      probe.merge(local);
    }
  }
  return spike_stats_from_probe(probe, count_ann_ops(net.spec()));
}

struct LayerEnergy {
  std::string id;
  double op_ann = 0.0;
  bool is_snn = false;
  bool is_mp = false;
  double rate = 1.0;  // applied spike rate (1 for ANN layers)
  double energy = 0.0;
};

struct EnergyReport {
  std::vector<LayerEnergy> layers;
  double total = 0.0;
  double ann_equivalent = 0.0;  // same network run entirely as ANN
  double op_ann = 0.0;          // Σ op over ANN/MP layers
  double op_snn = 0.0;          // Σ op over SNN layers
  double e_mac = kEnergyPerMac;
  double e_add = kEnergyPerAdd;
  std::vector<std::string> warnings;

  double ratio_vs_ann() const { return total > 0 ? ann_equivalent / total : 0.0; }
};

/// SNN layers cost op·rate·e_add, where rate is the measured input spike
/// rate (or the overall rate when the layer has none); other layers cost
/// op·e_mac.
inline EnergyReport estimate_energy(const std::vector<LayerOpCount>& ops, const SpikeStats& stats,
                                    double e_mac = kEnergyPerMac, double e_add = kEnergyPerAdd) {
  EnergyReport r;
  r.e_mac = e_mac;
  r.e_add = e_add;
  for (const auto& o : ops) {
    LayerEnergy le;
    le.id = o.id;
    le.op_ann = o.op_ann;
    le.is_snn = o.is_snn;
    le.is_mp = o.is_mp;
    if (o.is_snn) {
      auto it = stats.input_rate.find(o.id);
      le.rate = it != stats.input_rate.end() ? it->second : stats.overall_neuron_weighted;
      le.energy = o.op_ann * le.rate * e_add;
      r.op_snn += o.op_ann;
    } else {
      le.rate = 1.0;
      le.energy = o.op_ann * e_mac;
      r.op_ann += o.op_ann;
    }
    r.total += le.energy;
    r.ann_equivalent += o.op_ann * e_mac;
    r.layers.push_back(le);
  }
  if (!stats.binary)
    r.warnings.push_back("non-spike inter-layer signals present (ADD skip or potential fusion); energy model assumes binary inputs");
  return r;
}

/// Energy from aggregate counts: op_ann·e_mac + op_snn·e_add·rate.
inline double estimate_energy(double op_ann, double op_snn, double rate, double e_mac = kEnergyPerMac,
                              double e_add = kEnergyPerAdd) {
  return op_ann * e_mac + op_snn * e_add * rate;
}

/// a·4.6 / (c·4.6 + (1-c)·b·0.9): a = normalized ANN ops, b = spike rate,
/// c = fraction of ops in floating-point (MP) layers.
inline double ann_snn_ratio(double a, double b, double c) {
  return (a * 4.6) / (c * 4.6 + (1.0 - c) * b * 0.9);
}

/// Published operation counts and rates at 180×240.
struct PublishedFigures {
  double e2vid_op_ann = 20.07e9;
  double evsnn_op_snn = 16.12e9;
  double evsnn_rate = 0.264;
  double pa_op_ann = 1.49e9;
  double pa_op_snn = 16.35e9;
  double pa_rate = 0.251;
  double pa_mp_fraction = 0.084;
};

struct PublishedEnergySummary {
  double e2vid_energy, evsnn_energy, pa_energy;
  double evsnn_ratio, pa_ratio;
  double evsnn_normalized, pa_normalized;
};

inline PublishedEnergySummary published_energy_summary(const PublishedFigures& f = {}) {
  PublishedEnergySummary s{};
  s.e2vid_energy = estimate_energy(f.e2vid_op_ann, 0.0, 0.0);
  s.evsnn_energy = estimate_energy(0.0, f.evsnn_op_snn, f.evsnn_rate);
  s.pa_energy = estimate_energy(f.pa_op_ann, f.pa_op_snn, f.pa_rate);
  s.evsnn_ratio = ann_snn_ratio(1.0, f.evsnn_rate, 0.0);
  s.pa_ratio = ann_snn_ratio(1.0, f.pa_rate, f.pa_mp_fraction);
  s.evsnn_normalized = s.evsnn_energy / s.e2vid_energy;
  s.pa_normalized = s.pa_energy / s.e2vid_energy;
  return s;
}

inline nlohmann::json to_json(const PublishedEnergySummary& s) {
  return {{"e2vid_energy_j", s.e2vid_energy},         {"evsnn_energy_j", s.evsnn_energy},
          {"pa_evsnn_energy_j", s.pa_energy},         {"evsnn_ann_snn_ratio", s.evsnn_ratio},
          {"pa_evsnn_ann_snn_ratio", s.pa_ratio},     {"evsnn_normalized_energy", s.evsnn_normalized},
          {"pa_evsnn_normalized_energy", s.pa_normalized}};
}

inline nlohmann::json to_json(const EnergyReport& r, const SpikeStats* stats = nullptr) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : r.layers)
    layers.push_back({{"id", l.id},
                      {"op_ann", l.op_ann},
                      {"type", l.is_snn ? "SNN" : (l.is_mp ? "MP" : "ANN")},
                      {"rate", l.rate},
                      {"energy_j", l.energy}});
  nlohmann::json j = {{"layers", layers},
                      {"total_energy_j", r.total},
                      {"ann_equivalent_energy_j", r.ann_equivalent},
                      {"ratio_vs_ann", r.ratio_vs_ann()},
                      {"op_ann", r.op_ann},
                      {"op_snn", r.op_snn},
                      {"e_mac_j", r.e_mac},
                      {"e_add_j", r.e_add},
                      {"warnings", r.warnings}};
  if (stats) {
    j["spike_rates"] = stats->layer_rate;
    j["overall_rate_neuron_weighted"] = stats->overall_neuron_weighted;
    j["overall_rate_op_weighted"] = stats->overall_op_weighted;
  }
  return j;
}

/// Aligned text table: one row per layer, then totals.
inline std::string format_report(const EnergyReport& r, const SpikeStats* stats = nullptr) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %14s %5s %8s %14s\n", "layer", "op_ann", "type", "rate", "energy_J");
  out += buf;
  for (const auto& l : r.layers) {
    std::snprintf(buf, sizeof buf, "%-16s %14.0f %5s %8.4f %14.6e\n", l.id.c_str(), l.op_ann,
                  l.is_snn ? "SNN" : (l.is_mp ? "MP" : "ANN"), l.rate, l.energy);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%-16s %14.0f %5s %8s %14.6e\n", "total", r.op_ann + r.op_snn, "", "", r.total);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-16s %14s %5s %8s %14.6e\n", "all-ANN", "", "", "", r.ann_equivalent);
  out += buf;
  std::snprintf(buf, sizeof buf, "ratio vs all-ANN: %.4f\n", r.ratio_vs_ann());
  out += buf;
  if (stats) {
    std::snprintf(buf, sizeof buf, "overall rate (neuron-weighted): %.4f\noverall rate (op-weighted): %.4f\n",
                  stats->overall_neuron_weighted, stats->overall_op_weighted);
    out += buf;
    for (const auto& [id, rate] : stats->layer_rate) {
      std::snprintf(buf, sizeof buf, "  rate %-12s %.4f\n", id.c_str(), rate);
      out += buf;
    }
  }
  for (const auto& w : r.warnings) out += "warning: " + w + "\n";
  return out;
}

}  // namespace evsnn
