#pragma once

// U-shaped spiking reconstruction network: head, strided encoders, spiking
// residual blocks, upsampling decoders with spike skip connections, and a
// membrane-potential prediction layer. One forward step per temporal bin.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "evsnn/neurons.hpp"
#include "evsnn/ops.hpp"
#include "evsnn/serialize.hpp"
#include "evsnn/tensor.hpp"

namespace evsnn {

enum class SkipKind { kAdd, kOr, kIand, kConcat };

inline const char* to_string(SkipKind k) {
  switch (k) {
    case SkipKind::kAdd: return "ADD";
    case SkipKind::kOr: return "OR";
    case SkipKind::kIand: return "IAND";
    case SkipKind::kConcat: return "CONCAT";
  }
  return "?";
}

inline SkipKind skip_kind_from_string(const std::string& s) {
  for (auto k : {SkipKind::kAdd, SkipKind::kOr, SkipKind::kIand, SkipKind::kConcat})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown skip kind '" + s + "'");
}

/// g(A, B) merging encoder spikes A into decoder spikes B.
/// OR is computed as A + B - A·B, which equals max(A, B) on {0,1}.
inline Tensor skip_connect(SkipKind kind, const Tensor& a, const Tensor& b) {
  if (kind == SkipKind::kConcat) {
    if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
      throw ShapeError("skip_connect CONCAT: incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
    return concat({a, b}, 1);
  }
  detail::require_same_shape(a, b, "skip_connect");
  switch (kind) {
    case SkipKind::kAdd: return add(a, b);
    case SkipKind::kOr: return sub(add(a, b), mul(a, b));
    case SkipKind::kIand: return sub(b, mul(a, b));
    default: break;
  }
  throw ContractError("unreachable skip kind");
}

// ---------------------------------------------------------------------------
// Specification

struct NetworkSpec {
  std::size_t n_channels = 32;
  std::size_t n_encoders = 3;
  std::size_t n_residual = 1;
  SkipKind skip = SkipKind::kConcat;
  NeuronKind neuron = NeuronKind::kLIF;
  bool potential_assisted = false;
  bool amp_enabled = false;
  std::optional<NeuronKind> mp_kind;  // PA branch neuron; defaults to MP_LIF or AMP_LIF
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t head_kernel = 5;
  std::size_t encoder_kernel = 5;
  std::size_t residual_kernel = 3;
  std::size_t decoder_kernel = 5;
  std::size_t pred_kernel = 3;
  bool batch_norm = true;
  double tau = 2.0;
  double v_th = 1.0;
  std::uint64_t seed = 1;

  std::size_t n_decoders() const { return n_encoders; }
  std::size_t encoder_channels(std::size_t i) const { return n_channels << (i + 1); }  // i from 0
  NeuronKind pa_kind() const {
    if (mp_kind) return *mp_kind;
    return amp_enabled ? NeuronKind::kAMP_LIF : NeuronKind::kMP_LIF;
  }

  void validate() const {
    if (n_channels < 1) throw ConfigError("n_channels must be >= 1");
    if (n_encoders < 1) throw ConfigError("n_encoders must be >= 1");
    const std::size_t m = std::size_t{1} << n_encoders;
    if (height == 0 || width == 0 || height % m || width % m)
      throw ConfigError("input " + std::to_string(height) + "x" + std::to_string(width) + " not divisible by 2^" +
                        std::to_string(n_encoders));
    for (auto k : {head_kernel, encoder_kernel, residual_kernel, decoder_kernel, pred_kernel})
      if (k % 2 == 0) throw ConfigError("kernel sizes must be odd");
    if (potential_assisted && is_spiking(pa_kind())) throw ConfigError("PA branch neurons must be MP kinds");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  }

  /// Same spec with H and W rounded up to the next multiple of 2^n_encoders.
  NetworkSpec padded() const {
    NetworkSpec s = *this;
    const std::size_t m = std::size_t{1} << n_encoders;
    s.height = (height + m - 1) / m * m;
    s.width = (width + m - 1) / m * m;
    return s;
  }
};

inline nlohmann::json to_json(const NetworkSpec& s) {
  nlohmann::json j = {{"n_channels", s.n_channels},
                      {"n_encoders", s.n_encoders},
                      {"n_residual", s.n_residual},
                      {"skip", to_string(s.skip)},
                      {"neuron", to_string(s.neuron)},
                      {"potential_assisted", s.potential_assisted},
                      {"amp_enabled", s.amp_enabled},
                      {"height", s.height},
                      {"width", s.width},
                      {"head_kernel", s.head_kernel},
                      {"encoder_kernel", s.encoder_kernel},
                      {"residual_kernel", s.residual_kernel},
                      {"decoder_kernel", s.decoder_kernel},
                      {"pred_kernel", s.pred_kernel},
                      {"batch_norm", s.batch_norm},
                      {"tau", s.tau},
                      {"v_th", s.v_th},
                      {"seed", s.seed}};
  if (s.mp_kind) j["mp_kind"] = to_string(*s.mp_kind);
  return j;
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("n_channels", s.n_channels);
  get("n_encoders", s.n_encoders);
  get("n_residual", s.n_residual);
  if (j.contains("n_decoders") && j.at("n_decoders").get<std::size_t>() != s.n_encoders)
    throw ConfigError("n_decoders must equal n_encoders");
  if (j.contains("skip")) s.skip = skip_kind_from_string(j.at("skip").get<std::string>());
  if (j.contains("neuron")) s.neuron = neuron_kind_from_string(j.at("neuron").get<std::string>());
  if (j.contains("mp_kind")) s.mp_kind = neuron_kind_from_string(j.at("mp_kind").get<std::string>());
  get("potential_assisted", s.potential_assisted);
  get("amp_enabled", s.amp_enabled);
  get("height", s.height);
  get("width", s.width);
  get("head_kernel", s.head_kernel);
  get("encoder_kernel", s.encoder_kernel);
  get("residual_kernel", s.residual_kernel);
  get("decoder_kernel", s.decoder_kernel);
  get("pred_kernel", s.pred_kernel);
  get("batch_norm", s.batch_norm);
  get("tau", s.tau);
  get("v_th", s.v_th);
  get("seed", s.seed);
  return s;
}

// ---------------------------------------------------------------------------
// Static layer geometry (used for op counting without building weights)

struct ConvGeometryInfo {
  std::string id;
  bool is_linear = false;
  std::size_t kernel = 1, c_in = 0, c_out = 0, groups = 1, h_out = 1, w_out = 1;
  std::size_t stride = 1;
  bool upsample = false;
  bool binary_input = true;  // fed only by {0,1} spikes
  bool event_input = false;  // fed by the voxel-grid bin
  bool mp_branch = false;    // part of the membrane-potential (AMP) branch
};

/// Every conv/linear in evaluation order, for an H×W input.
inline std::vector<ConvGeometryInfo> describe_layers(const NetworkSpec& spec, std::size_t h, std::size_t w) {
  std::vector<ConvGeometryInfo> out;
  const bool pa = spec.potential_assisted;
  const bool amp = pa && spec.pa_kind() == NeuronKind::kAMP_LIF;
  auto amp_layers = [&](const std::string& id, std::size_t c, std::size_t ho, std::size_t wo) {
    if (!amp) return;
    out.push_back({id + ".amp.conv", false, 3, c, c, c, ho, wo, 1, false, true, false, true});
    out.push_back({id + ".amp.linear", true, 1, 2 * c, c, 1, 1, 1, 1, false, false, false, true});
  };
  out.push_back({"head", false, spec.head_kernel, 1, spec.n_channels, 1, h, w, 1, false, false, true, false});
  std::size_t ch = spec.n_channels, hh = h, ww = w;
  for (std::size_t i = 0; i < spec.n_encoders; ++i) {
    const std::size_t co = spec.encoder_channels(i);
    const std::size_t ho = (hh + 2 * (spec.encoder_kernel / 2) - spec.encoder_kernel) / 2 + 1;
    const std::size_t wo = (ww + 2 * (spec.encoder_kernel / 2) - spec.encoder_kernel) / 2 + 1;
    const std::string id = "down" + std::to_string(i + 1);
    out.push_back({id, false, spec.encoder_kernel, ch, co, 1, ho, wo, 2, false, true, false, false});
    amp_layers(id, co, ho, wo);
    ch = co;
    hh = ho;
    ww = wo;
  }
  for (std::size_t r = 0; r < spec.n_residual; ++r)
    for (int half = 1; half <= 2; ++half)
      out.push_back({"res" + std::to_string(r + 1) + "_" + std::to_string(half), false, spec.residual_kernel, ch, ch, 1,
                     hh, ww, 1, false, true, false, false});
  const bool decoder_binary = spec.skip != SkipKind::kAdd && !pa;
  for (std::size_t j = 0; j < spec.n_decoders(); ++j) {
    const std::size_t e = spec.n_encoders - 1 - j;
    const std::size_t a_ch = spec.encoder_channels(e);
    const std::size_t cin = spec.skip == SkipKind::kConcat ? a_ch + ch : a_ch;
    const std::size_t co = e >= 1 ? spec.encoder_channels(e - 1) : spec.n_channels;
    hh *= 2;
    ww *= 2;
    const std::string id = "up" + std::to_string(j + 1);
    out.push_back({id, false, spec.decoder_kernel, cin, co, 1, hh, ww, 1, true, decoder_binary, false, false});
    amp_layers(id, co, hh, ww);
    ch = co;
  }
  out.push_back({"pred", false, spec.pred_kernel, ch, 1, 1, hh, ww, 1, false, !pa, false, false});
  return out;
}

// ---------------------------------------------------------------------------
// Layers

struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  BatchNormStats stats;

  static BatchNorm make(std::size_t c) {
    BatchNorm bn;
    bn.gamma = Tensor::full({c}, 1.0, true);
    bn.beta = Tensor::zeros({c}, true);
    bn.stats.running_mean.assign(c, 0.0);
    bn.stats.running_var.assign(c, 1.0);
    return bn;
  }
};

/// conv (optionally preceded by ×2 upsampling) → BN → neuron, plus an
/// optional membrane-potential neuron sharing the same pre-activation.
struct ConvUnit {
  std::string id;
  Tensor weight;
  Tensor bias;
  Conv2dOptions opt;
  bool upsample = false;
  std::optional<BatchNorm> bn;
  NeuronLayer neuron;
  std::optional<NeuronLayer> mp;

  std::size_t out_channels() const { return weight.dim(0); }
};

/// Membrane potentials of every stateful neuron, keyed by layer id.
struct NetworkState {
  std::map<std::string, Tensor> v;
};

struct SignalTally {
  double nonzero = 0.0;
  double ones = 0.0;
  double elements = 0.0;
  double max_value = 0.0;
  bool binary = true;

  void add(const Tensor& t) {
    for (double x : t.data()) {
      if (x != 0.0) nonzero += 1.0;
      if (x == 1.0) ones += 1.0;
      if (x != 0.0 && x != 1.0) binary = false;
      max_value = std::max(max_value, x);
    }
    elements += static_cast<double>(t.numel());
  }
  void merge(const SignalTally& o) {
    nonzero += o.nonzero;
    ones += o.ones;
    elements += o.elements;
    max_value = std::max(max_value, o.max_value);
    binary = binary && o.binary;
  }
  double rate() const { return elements > 0 ? ones / elements : 0.0; }
  double activity() const { return elements > 0 ? nonzero / elements : 0.0; }
};

/// Per-evaluation instrumentation. `neurons` tallies spiking layer outputs,
/// `conv_inputs` tallies what each conv/linear consumes, `signals` covers
/// every inter-layer tensor for the binarity sweep.
struct Probe {
  std::map<std::string, SignalTally> neurons;
  std::map<std::string, SignalTally> conv_inputs;
  std::map<std::string, SignalTally> signals;

  void merge(const Probe& o) {
    for (const auto& [k, v] : o.neurons) neurons[k].merge(v);
    for (const auto& [k, v] : o.conv_inputs) conv_inputs[k].merge(v);
    for (const auto& [k, v] : o.signals) signals[k].merge(v);
  }
};

namespace detail {

/// Uniform(-bound, bound) from the top 53 bits of a 64-bit Mersenne twister,
/// independent of the standard library's distribution implementations.
class ParamRng {
 public:
  explicit ParamRng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo, double hi) {
    const double u = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }
  Tensor uniform_tensor(Shape shape, double bound) {
    std::vector<double> d(shape_numel(shape));
    for (double& x : d) x = uniform(-bound, bound);
    return Tensor(std::move(shape), std::move(d), true);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace detail

class Network {
 public:
  explicit Network(const NetworkSpec& spec) : spec_(spec) {
    spec_.validate();
    build();
  }

  const NetworkSpec& spec() const { return spec_; }

  ConvUnit& head() { return head_; }
  const ConvUnit& head() const { return head_; }
  std::vector<ConvUnit>& encoders() { return encoders_; }
  const std::vector<ConvUnit>& encoders() const { return encoders_; }
  std::vector<ConvUnit>& residuals() { return residuals_; }  // two units per block
  const std::vector<ConvUnit>& residuals() const { return residuals_; }
  std::vector<ConvUnit>& decoders() { return decoders_; }
  const std::vector<ConvUnit>& decoders() const { return decoders_; }
  ConvUnit& prediction() { return pred_; }
  const ConvUnit& prediction() const { return pred_; }

  template <class F>
  void for_each_unit(F&& f) {
    f(head_);
    for (auto& u : encoders_) f(u);
    for (auto& u : residuals_) f(u);
    for (auto& u : decoders_) f(u);
    f(pred_);
  }
  template <class F>
  void for_each_unit(F&& f) const {
    f(head_);
    for (const auto& u : encoders_) f(u);
    for (const auto& u : residuals_) f(u);
    for (const auto& u : decoders_) f(u);
    f(pred_);
  }

  /// Learnable tensors with stable, unique names.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for_each_unit([&](const ConvUnit& u) {
      out.emplace_back(u.id + ".weight", u.weight);
      if (u.bias.defined()) out.emplace_back(u.id + ".bias", u.bias);
      if (u.bn) {
        out.emplace_back(u.id + ".bn.gamma", u.bn->gamma);
        out.emplace_back(u.id + ".bn.beta", u.bn->beta);
      }
      auto neuron_params = [&](const NeuronLayer& n, const std::string& prefix) {
        if (n.plif_w.defined()) out.emplace_back(prefix + ".plif_w", n.plif_w);
        if (n.amp) {
          out.emplace_back(prefix + ".amp.conv.weight", n.amp->conv_weight);
          out.emplace_back(prefix + ".amp.conv.bias", n.amp->conv_bias);
          out.emplace_back(prefix + ".amp.linear.weight", n.amp->linear_weight);
          out.emplace_back(prefix + ".amp.linear.bias", n.amp->linear_bias);
        }
      };
      neuron_params(u.neuron, u.id);
      if (u.mp) neuron_params(*u.mp, mp_id(u));
    });
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_parameters()) n += t.numel();
    return n;
  }

  static std::string mp_id(const ConvUnit& u) { return u.id + ".mp"; }

  /// Zero potentials for every stateful neuron at batch size `batch`.
  NetworkState initial_state(std::size_t batch = 1) const {
    NetworkState s;
    std::size_t h = spec_.height, w = spec_.width;
    auto put = [&](const std::string& id, std::size_t c, std::size_t hh, std::size_t ww) {
      s.v[id] = Tensor::zeros({batch, c, hh, ww});
    };
    put(head_.id, head_.out_channels(), h, w);
    for (const auto& u : encoders_) {
      h /= 2;
      w /= 2;
      put(u.id, u.out_channels(), h, w);
      if (u.mp) put(mp_id(u), u.out_channels(), h, w);
    }
    for (const auto& u : residuals_) put(u.id, u.out_channels(), h, w);
    for (const auto& u : decoders_) {
      h *= 2;
      w *= 2;
      put(u.id, u.out_channels(), h, w);
      if (u.mp) put(mp_id(u), u.out_channels(), h, w);
    }
    put(pred_.id, 1, h, w);
    return s;
  }

  /// One recurrent step in inference mode (BN uses running statistics).
  Tensor forward_step(NetworkState& state, const Tensor& bin, Probe* probe = nullptr) const {
    return step_impl(*this, state, bin, probe, BnMode::kEval);
  }

  /// One recurrent step in training mode (BN uses batch statistics and
  /// updates the running buffers).
  Tensor forward_step_train(NetworkState& state, const Tensor& bin, Probe* probe = nullptr) {
    return step_impl(*this, state, bin, probe, BnMode::kTrain);
  }

  /// Zero state, then one step per bin; returns every step's image.
  std::vector<Tensor> forward_sequence(const std::vector<Tensor>& bins, Probe* probe = nullptr) const {
    std::vector<Tensor> out;
    if (bins.empty()) return out;
    NetworkState st = initial_state(batch_of(bins.front()));
    for (const auto& b : bins) out.push_back(forward_step(st, b, probe));
    return out;
  }

  /// Folds each BN into its preceding conv using the running statistics.
  void fold_batch_norm() {
    for_each_unit([](ConvUnit& u) {
      if (!u.bn) return;
      const std::size_t co = u.out_channels();
      const std::size_t per = u.weight.numel() / co;
      auto w = u.weight.mutable_data();
      if (!u.bias.defined()) u.bias = Tensor::zeros({co}, true);
      auto b = u.bias.mutable_data();
      const auto& st = u.bn->stats;
      for (std::size_t c = 0; c < co; ++c) {
        const double scale = u.bn->gamma[c] / std::sqrt(st.running_var[c] + st.eps);
        for (std::size_t i = 0; i < per; ++i) w[c * per + i] *= scale;
        b[c] = (b[c] - st.running_mean[c]) * scale + u.bn->beta[c];
      }
      u.bn.reset();
    });
  }

  /// Sets every conv bias (and BN shift) to zero.
  void zero_biases() {
    for_each_unit([](ConvUnit& u) {
      if (u.bias.defined())
        for (double& x : u.bias.mutable_data()) x = 0.0;
      if (u.bn) {
        for (double& x : u.bn->beta.mutable_data()) x = 0.0;
        for (double& x : u.bn->stats.running_mean) x = 0.0;
      }
    });
  }

  /// Names of spiking layers (Table-style order) and their decay factors.
  std::vector<std::string> spiking_layer_ids() const {
    std::vector<std::string> ids;
    for_each_unit([&](const ConvUnit& u) {
      if (is_spiking(u.neuron.cfg.kind)) ids.push_back(u.id);
    });
    return ids;
  }

  const NeuronLayer& neuron_of(const std::string& id) const {
    const NeuronLayer* found = nullptr;
    for_each_unit([&](const ConvUnit& u) {
      if (u.id == id) found = &u.neuron;
      if (u.mp && mp_id(u) == id) found = &*u.mp;
    });
    if (!found) throw ContractError("no neuron layer '" + id + "'");
    return *found;
  }

  // -- checkpoints -----------------------------------------------------------

  void save(TensorArchive& ar, const nlohmann::json& extra = nlohmann::json::object()) const {
    nlohmann::json meta = {{"spec", to_json(spec_)}, {"extra", extra}};
    ar.put_blob("meta.json", meta.dump());
    for (const auto& [name, t] : named_parameters()) ar.put(name, t);
    for_each_unit([&](const ConvUnit& u) {
      if (!u.bn) return;
      ar.put_values(u.id + ".bn.running_mean", {u.bn->stats.running_mean.size()}, u.bn->stats.running_mean);
      ar.put_values(u.id + ".bn.running_var", {u.bn->stats.running_var.size()}, u.bn->stats.running_var);
    });
    nlohmann::json folded = nlohmann::json::array();
    for_each_unit([&](const ConvUnit& u) {
      if (!u.bn) folded.push_back(u.id);
    });
    ar.put_blob("bn_absent.json", folded.dump());
  }

  void save(const std::string& path, const nlohmann::json& extra = nlohmann::json::object()) const {
    TensorArchive ar;
    save(ar, extra);
    ar.save(path);
  }

  /// Restores a saved network. `input_size` replaces the stored H×W (weights
  /// do not depend on the spatial size).
  static Network load(const TensorArchive& ar, nlohmann::json* extra = nullptr,
                      std::optional<std::pair<std::size_t, std::size_t>> input_size = std::nullopt) {
    const auto meta = nlohmann::json::parse(ar.blob("meta.json"));
    NetworkSpec spec = spec_from_json(meta.at("spec"));
    if (input_size) {
      spec.height = input_size->first;
      spec.width = input_size->second;
    }
    Network net(spec);
    if (extra) *extra = meta.value("extra", nlohmann::json::object());
    if (ar.contains("bn_absent.json")) {
      const auto absent = nlohmann::json::parse(ar.blob("bn_absent.json"));
      net.for_each_unit([&](ConvUnit& u) {
        for (const auto& id : absent)
          if (id.get<std::string>() == u.id) {
            u.bn.reset();
            if (!u.bias.defined()) u.bias = Tensor::zeros({u.out_channels()}, true);
          }
      });
    }
    for (auto& [name, t] : net.named_parameters()) {
      Tensor src = ar.tensor(name);
      if (src.shape() != t.shape()) throw FormatError("checkpoint tensor '" + name + "' has wrong shape");
      auto dst = t.mutable_data();
      std::copy(src.data().begin(), src.data().end(), dst.begin());
    }
    net.for_each_unit([&](ConvUnit& u) {
      if (!u.bn) return;
      auto rm = ar.tensor(u.id + ".bn.running_mean");
      auto rv = ar.tensor(u.id + ".bn.running_var");
      u.bn->stats.running_mean.assign(rm.data().begin(), rm.data().end());
      u.bn->stats.running_var.assign(rv.data().begin(), rv.data().end());
    });
    return net;
  }

  static Network load(const std::string& path, nlohmann::json* extra = nullptr) {
    return load(TensorArchive::load(path), extra);
  }

  /// Copy of this network for a different input size.
  Network with_input_size(std::size_t height, std::size_t width) const {
    TensorArchive ar;
    save(ar);
    return load(ar, nullptr, std::make_pair(height, width));
  }

  static std::size_t batch_of(const Tensor& bin) { return bin.rank() == 4 ? bin.dim(0) : 1; }

 private:
  void build() {
    detail::ParamRng rng(spec_.seed);
    NeuronConfig ncfg;
    ncfg.kind = spec_.neuron;
    ncfg.tau = spec_.tau;
    ncfg.v_th = spec_.v_th;
    NeuronConfig mpcfg = ncfg;
    mpcfg.kind = spec_.pa_kind();

    auto make_unit = [&](std::string id, std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride,
                         bool upsample, bool with_bn, const NeuronConfig& cfg, bool with_mp) {
      ConvUnit u;
      u.id = std::move(id);
      const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
      u.weight = rng.uniform_tensor({cout, cin, k, k}, bound);
      u.bias = rng.uniform_tensor({cout}, bound);
      u.opt = {stride, k / 2, 1};
      u.upsample = upsample;
      if (with_bn) u.bn = BatchNorm::make(cout);
      u.neuron = NeuronLayer::make(cfg, cout);
      if (with_mp) {
        u.mp = NeuronLayer::make(mpcfg, cout);
        if (u.mp->amp) {
          auto& a = *u.mp->amp;
          a.conv_weight = rng.uniform_tensor({cout, 1, 3, 3}, 1.0 / 3.0);
          a.conv_bias = rng.uniform_tensor({cout}, 1.0 / 3.0);
          const double lb = 1.0 / std::sqrt(static_cast<double>(2 * cout));
          a.linear_weight = rng.uniform_tensor({cout, 2 * cout}, lb);
          a.linear_bias = rng.uniform_tensor({cout}, lb);
        }
      }
      return u;
    };

    const bool bn = spec_.batch_norm;
    const bool pa = spec_.potential_assisted;
    head_ = make_unit("head", 1, spec_.n_channels, spec_.head_kernel, 1, false, bn, ncfg, false);
    std::size_t ch = spec_.n_channels;
    for (std::size_t i = 0; i < spec_.n_encoders; ++i) {
      const std::size_t co = spec_.encoder_channels(i);
      encoders_.push_back(make_unit("down" + std::to_string(i + 1), ch, co, spec_.encoder_kernel, 2, false, bn, ncfg, pa));
      ch = co;
    }
    for (std::size_t r = 0; r < spec_.n_residual; ++r)
      for (int half = 1; half <= 2; ++half)
        residuals_.push_back(make_unit("res" + std::to_string(r + 1) + "_" + std::to_string(half), ch, ch,
                                       spec_.residual_kernel, 1, false, bn, ncfg, false));
    for (std::size_t j = 0; j < spec_.n_decoders(); ++j) {
      const std::size_t e = spec_.n_encoders - 1 - j;
      const std::size_t a_ch = spec_.encoder_channels(e);
      const std::size_t cin = spec_.skip == SkipKind::kConcat ? a_ch + ch : a_ch;
      const std::size_t co = e >= 1 ? spec_.encoder_channels(e - 1) : spec_.n_channels;
      decoders_.push_back(make_unit("up" + std::to_string(j + 1), cin, co, spec_.decoder_kernel, 1, true, bn, ncfg, pa));
      ch = co;
    }
    NeuronConfig pcfg;
    pcfg.kind = NeuronKind::kMP_LIF;
    pcfg.tau = 2.0;
    pred_ = make_unit("pred", ch, 1, spec_.pred_kernel, 1, false, false, pcfg, false);
  }

  template <class Self>
  static Tensor step_impl(Self& self, NetworkState& state, const Tensor& bin_in, Probe* probe, BnMode mode) {
    const NetworkSpec& spec = self.spec_;
    Tensor bin = bin_in;
    if (bin.rank() == 3) bin = bin.reshape({1, bin.dim(0), bin.dim(1), bin.dim(2)});
    if (bin.rank() != 4 || bin.dim(1) != 1 || bin.dim(2) != spec.height || bin.dim(3) != spec.width)
      throw ContractError("forward_step: bin " + shape_str(bin_in.shape()) + " does not match network input 1x" +
                          std::to_string(spec.height) + "x" + std::to_string(spec.width));
    const std::size_t batch = bin.dim(0);

    auto state_at = [&](const std::string& id, const Shape& expect) -> Tensor& {
      auto it = state.v.find(id);
      if (it == state.v.end()) throw ContractError("network state lacks layer '" + id + "'");
      if (it->second.shape() != expect)
        throw ContractError("network state for '" + id + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                            shape_str(expect));
      return it->second;
    };

    auto signal = [&](const std::string& id, const Tensor& t) {
      if (probe) probe->signals[id].add(t);
    };

    struct UnitOut {
      Tensor spikes;
      Tensor potential;  // PA branch output, undefined otherwise
    };

    auto run_unit = [&](auto& u, const Tensor& x) -> UnitOut {
      if (probe) probe->conv_inputs[u.id].add(x);
      Tensor in = u.upsample ? upsample_nearest2x(x) : x;
      Tensor pre = conv2d(in, u.weight, u.bias, u.opt);
      if (u.bn) {
        BatchNormStats* upd = nullptr;
        if constexpr (!std::is_const_v<Self>) {
          if (mode == BnMode::kTrain) upd = &u.bn->stats;
        }
        pre = batch_norm2d(pre, u.bn->gamma, u.bn->beta, u.bn->stats, mode, upd);
      }
      Tensor& v = state_at(u.id, pre.shape());
      StepResult r = u.neuron.step(v, pre);
      v = r.v;
      if (probe && is_spiking(u.neuron.cfg.kind)) probe->neurons[u.id].add(r.output);
      UnitOut out{r.output, {}};
      if (u.mp) {
        Tensor& vm = state_at(mp_id(u), pre.shape());
        if (probe && u.mp->amp) {
          probe->conv_inputs[u.id + ".amp.conv"].add(r.output);
        }
        StepResult m = u.mp->step(vm, pre, r.output);
        vm = m.v;
        out.potential = m.output;
      }
      return out;
    };

    UnitOut h = run_unit(self.head_, bin);
    signal(self.head_.id, h.spikes);
    std::vector<UnitOut> enc;
    Tensor x = h.spikes;
    for (auto& u : self.encoders_) {
      enc.push_back(run_unit(u, x));
      x = enc.back().spikes;
      signal(u.id, x);
    }
    for (std::size_t r = 0; r + 1 < self.residuals_.size(); r += 2) {
      UnitOut a = run_unit(self.residuals_[r], x);
      signal(self.residuals_[r].id, a.spikes);
      UnitOut b = run_unit(self.residuals_[r + 1], a.spikes);
      signal(self.residuals_[r + 1].id, b.spikes);
      x = skip_connect(SkipKind::kOr, b.spikes, x);
      signal("res" + std::to_string(r / 2 + 1) + ".out", x);
    }

    auto fuse = [&](const Tensor& a, const Tensor& a_mp, const Tensor& b, const Tensor& b_mp) {
      if (spec.skip == SkipKind::kConcat) {
        Tensor aa = a_mp.defined() ? add(a, a_mp) : a;
        Tensor bb = b_mp.defined() ? add(b, b_mp) : b;
        return skip_connect(SkipKind::kConcat, aa, bb);
      }
      Tensor g = skip_connect(spec.skip, a, b);
      if (a_mp.defined()) g = add(g, a_mp);
      if (b_mp.defined()) g = add(g, b_mp);
      return g;
    };

    Tensor prev_mp;
    for (std::size_t j = 0; j < self.decoders_.size(); ++j) {
      const UnitOut& e = enc[spec.n_encoders - 1 - j];
      Tensor g = fuse(e.spikes, e.potential, x, prev_mp);
      signal("skip" + std::to_string(j + 1), g);
      UnitOut d = run_unit(self.decoders_[j], g);
      x = d.spikes;
      prev_mp = d.potential;
      signal(self.decoders_[j].id, x);
    }
    Tensor g = prev_mp.defined() ? add(x, prev_mp) : x;
    signal("pred.in", g);
    UnitOut p = run_unit(self.pred_, g);
    (void)batch;
    return p.spikes;  // the prediction neuron is MP_LIF: its output is the potential
  }

  NetworkSpec spec_;
  ConvUnit head_;
  std::vector<ConvUnit> encoders_;
  std::vector<ConvUnit> residuals_;
  std::vector<ConvUnit> decoders_;
  ConvUnit pred_;
};

/// Reset every neuron potential to zero, detached from any prior graph.
inline void reset_state(const Network& net, NetworkState& state, std::size_t batch = 1) {
  state = net.initial_state(batch);
}

/// Cuts the recorded history of every potential (truncated BPTT boundary).
inline void detach_state(NetworkState& state) {
  for (auto& [id, v] : state.v) v = v.detach();
}

}  // namespace evsnn
