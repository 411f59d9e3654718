#pragma once

// Spiking (IF/LIF/PLIF) and membrane-potential (MP_IF/MP_LIF/MP_PLIF/AMP_LIF)
// neuron dynamics with surrogate-gradient spike backward.

#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>

#include "evsnn/ops.hpp"
#include "evsnn/tensor.hpp"

namespace evsnn {

enum class NeuronKind { kIF, kLIF, kPLIF, kMP_IF, kMP_LIF, kMP_PLIF, kAMP_LIF };

inline bool is_spiking(NeuronKind k) { return k == NeuronKind::kIF || k == NeuronKind::kLIF || k == NeuronKind::kPLIF; }
inline bool has_plif_param(NeuronKind k) { return k == NeuronKind::kPLIF || k == NeuronKind::kMP_PLIF; }

inline const char* to_string(NeuronKind k) {
  switch (k) {
    case NeuronKind::kIF: return "IF";
    case NeuronKind::kLIF: return "LIF";
    case NeuronKind::kPLIF: return "PLIF";
    case NeuronKind::kMP_IF: return "MP_IF";
    case NeuronKind::kMP_LIF: return "MP_LIF";
    case NeuronKind::kMP_PLIF: return "MP_PLIF";
    case NeuronKind::kAMP_LIF: return "AMP_LIF";
  }
  return "?";
}

inline NeuronKind neuron_kind_from_string(const std::string& s) {
  for (auto k : {NeuronKind::kIF, NeuronKind::kLIF, NeuronKind::kPLIF, NeuronKind::kMP_IF, NeuronKind::kMP_LIF,
                 NeuronKind::kMP_PLIF, NeuronKind::kAMP_LIF})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown neuron kind '" + s + "'");
}

struct NeuronConfig {
  NeuronKind kind = NeuronKind::kLIF;
  double v_th = 1.0;
  double v_reset = 0.0;
  double v_rest = 0.0;
  double tau = 2.0;
};

/// Decay coefficient 1/τ: a constant, one learnable scalar, or one value per
/// (sample, channel) broadcast over the trailing spatial axes.
using InvTau = std::variant<double, Tensor>;

enum class UpdateForm {
  kLeak,  // V + k·(-(V - v_rest) + X)
  kEma,   // (1 - k)·V + k·X
};

namespace detail {

inline std::size_t inv_tau_index_stride(const Tensor& v, const Tensor& k) {
  if (k.numel() == 1) return 0;
  if (v.rank() < 2 || k.numel() != v.dim(0) * v.dim(1))
    throw ShapeError("membrane update: per-channel 1/tau " + shape_str(k.shape()) + " does not match " +
                     shape_str(v.shape()));
  std::size_t hw = 1;
  for (std::size_t d = 2; d < v.rank(); ++d) hw *= v.dim(d);
  return hw;
}

}  // namespace detail

/// Fused membrane update; differentiable in V, X and (when a tensor) k.
inline Tensor membrane_update(const Tensor& v, const Tensor& x, const InvTau& inv_tau, double v_rest, UpdateForm form) {
  detail::require_same_shape(v, x, "membrane_update");
  const std::size_t n = v.numel();
  auto vd = v.data();
  auto xd = x.data();
  std::vector<double> out(n);
  Tensor kt;
  std::size_t hw = 0;  // 0 → scalar k
  double kc = 0.0;
  if (const auto* c = std::get_if<double>(&inv_tau)) {
    kc = *c;
  } else {
    kt = std::get<Tensor>(inv_tau);
    hw = detail::inv_tau_index_stride(v, kt);
  }
  auto k_at = [&](std::size_t i) { return kt.defined() ? (hw ? kt[i / hw] : kt[0]) : kc; };
  for (std::size_t i = 0; i < n; ++i) {
    const double k = k_at(i);
    out[i] = form == UpdateForm::kLeak ? vd[i] + k * (-(vd[i] - v_rest) + xd[i]) : (1.0 - k) * vd[i] + k * xd[i];
  }
  return detail::make_result(v.shape(), std::move(out), {&v, &x, &kt},
                             [v, x, kt, kc, hw, v_rest, form](const detail::TensorImpl& o) {
                               auto vd = v.data();
                               auto xd = x.data();
                               double* gv = detail::grad_of(v);
                               double* gx = detail::grad_of(x);
                               double* gk = detail::grad_of(kt);
                               for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                 const std::size_t ki = hw ? i / hw : 0;
                                 const double k = kt.defined() ? kt[ki] : kc;
                                 const double g = o.grad[i];
                                 if (gv) gv[i] += g * (1.0 - k);
                                 if (gx) gx[i] += g * k;
                                 if (gk) gk[ki] += g * (form == UpdateForm::kLeak ? (xd[i] - vd[i] + v_rest) : (xd[i] - vd[i]));
                               }
                             });
}

/// Shifted-ArcTan surrogate derivative H₁'(x) = 1/(1 + π²x²).
inline double arctan_surrogate_grad(double x) {
  const double px = std::numbers::pi * x;
  return 1.0 / (1.0 + px * px);
}

/// Heaviside forward (1 iff x ≥ 0); backward multiplies by H₁'(x).
inline Tensor surrogate_spike(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return v >= 0.0 ? 1.0 : 0.0; }, [](double v, double) { return arctan_surrogate_grad(v); });
}

/// V_charge where S = 0, v_reset where S = 1; the spike acts as a constant gate.
inline Tensor hard_reset(const Tensor& v_charge, const Tensor& spikes, double v_reset) {
  detail::require_same_shape(v_charge, spikes, "hard_reset");
  std::vector<double> out(v_charge.numel());
  auto vd = v_charge.data();
  auto sd = spikes.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sd[i] != 0.0 ? v_reset : vd[i];
  return detail::make_result(v_charge.shape(), std::move(out), {&v_charge}, [v_charge, spikes](const detail::TensorImpl& o) {
    double* gv = detail::grad_of(v_charge);
    auto sd = spikes.data();
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      if (sd[i] == 0.0) gv[i] += o.grad[i];
  });
}

struct StepResult {
  Tensor output;   // spikes for spiking kinds, potential for MP kinds
  Tensor v;        // membrane potential carried to the next step
  Tensor v_charge; // potential after charging, before reset
};

namespace detail {

inline StepResult fire_and_reset(const Tensor& v_charge, const NeuronConfig& cfg) {
  Tensor s = surrogate_spike(add_scalar(v_charge, -cfg.v_th));
  Tensor v_new = hard_reset(v_charge, s.detach(), cfg.v_reset);
  return {s, v_new, v_charge};
}

inline void check_tau(double tau) {
  if (!(tau > 0.0)) throw ConfigError("membrane time constant must be positive, got " + std::to_string(tau));
}

}  // namespace detail

/// V_c = V + (1/τ)(-(V - v_rest) + X); S = H(V_c - v_th); hard reset.
/// `inv_tau` overrides 1/cfg.tau (PLIF passes its learnable coefficient).
inline StepResult lif_step(const Tensor& v_prev, const Tensor& x, const NeuronConfig& cfg,
                           std::optional<InvTau> inv_tau = std::nullopt) {
  if (!inv_tau) detail::check_tau(cfg.tau);
  const InvTau k = inv_tau ? *inv_tau : InvTau{1.0 / cfg.tau};
  return detail::fire_and_reset(membrane_update(v_prev, x, k, cfg.v_rest, UpdateForm::kLeak), cfg);
}

/// V_c = V + X; spike and reset as lif_step.
inline StepResult if_step(const Tensor& v_prev, const Tensor& x, const NeuronConfig& cfg) {
  return detail::fire_and_reset(add(v_prev, x), cfg);
}

/// τ = 1/sigmoid(w).
inline Tensor plif_tau(const Tensor& w) { return reciprocal(sigmoid(w)); }

/// V = (1 - 1/τ)V + (1/τ)X; the output is the potential itself.
inline StepResult mp_step(const Tensor& v_prev, const Tensor& x, double tau) {
  detail::check_tau(tau);
  Tensor v = membrane_update(v_prev, x, InvTau{1.0 / tau}, 0.0, UpdateForm::kEma);
  return {v, v, v};
}

/// Same with a tensor τ (one value, or N×C per channel).
inline StepResult mp_step(const Tensor& v_prev, const Tensor& x, const Tensor& tau) {
  Tensor v = membrane_update(v_prev, x, InvTau{reciprocal(tau)}, 0.0, UpdateForm::kEma);
  return {v, v, v};
}

/// Integration without leak: V = V + X.
inline StepResult mp_if_step(const Tensor& v_prev, const Tensor& x) {
  Tensor v = add(v_prev, x);
  return {v, v, v};
}

// ---------------------------------------------------------------------------
// Adaptive membrane potential block

struct AmpBlockParams {
  Tensor conv_weight;    // C×1×3×3 (depthwise)
  Tensor conv_bias;      // C
  Tensor linear_weight;  // C×2C
  Tensor linear_bias;    // C

  static AmpBlockParams zeros(std::size_t channels, bool requires_grad = true) {
    return {Tensor::zeros({channels, 1, 3, 3}, requires_grad), Tensor::zeros({channels}, requires_grad),
            Tensor::zeros({channels, 2 * channels}, requires_grad), Tensor::zeros({channels}, requires_grad)};
  }
  std::size_t channels() const { return conv_bias.numel(); }
};

inline bool is_binary(const Tensor& t) {
  for (double v : t.data())
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

/// Bound on the AMP logit. sigmoid(±30) stays strictly inside (0, 1) in
/// double precision, so τ stays strictly above 1 and finite.
inline constexpr double kAmpLogitBound = 30.0;

/// τ = 1/sigmoid(Linear([AvgPool(S), MaxPool(Conv(S))])), shape N×C.
inline Tensor amp_compute_tau(const Tensor& spikes, const AmpBlockParams& p, bool strict = false) {
  detail::require_rank(spikes, 4, "amp_compute_tau");
  if (spikes.dim(1) != p.channels()) throw ShapeError("amp_compute_tau: channel mismatch");
  if (strict && !is_binary(spikes)) throw ContractError("amp_compute_tau: input spikes are not binary");
  const std::size_t c = p.channels();
  Tensor rate = global_avg_pool(spikes);
  Tensor intensity = global_max_pool(conv2d(spikes, p.conv_weight, p.conv_bias, {1, 1, c}));
  Tensor z = linear(concat({rate, intensity}, 1), p.linear_weight, p.linear_bias);
  return reciprocal(sigmoid(clamp(z, -kAmpLogitBound, kAmpLogitBound)));
}

/// MP update whose per-channel τ comes from the presented spikes.
inline StepResult amp_lif_step(const Tensor& v_prev, const Tensor& x, const Tensor& spikes, const AmpBlockParams& p,
                               bool strict = false) {
  return mp_step(v_prev, x, amp_compute_tau(spikes, p, strict));
}

// ---------------------------------------------------------------------------
// Layer wrapper

struct NeuronLayerState {
  Tensor v;
};

/// A neuron population with its configuration and learnable parameters.
struct NeuronLayer {
  NeuronConfig cfg;
  Tensor plif_w;                     // PLIF / MP_PLIF
  std::optional<AmpBlockParams> amp; // AMP_LIF

  static NeuronLayer make(const NeuronConfig& cfg, std::size_t channels) {
    NeuronLayer l;
    l.cfg = cfg;
    // w = -log(τ - 1) makes the initial time constant equal cfg.tau.
    if (has_plif_param(cfg.kind)) {
      if (!(cfg.tau > 1.0)) throw ConfigError("PLIF initial tau must exceed 1");
      l.plif_w = Tensor::scalar(-std::log(cfg.tau - 1.0), true);
    }
    if (cfg.kind == NeuronKind::kAMP_LIF) l.amp = AmpBlockParams::zeros(channels);
    return l;
  }

  /// Advances one step. `spikes_for_amp` feeds the AMP rate/intensity branch.
  StepResult step(const Tensor& v_prev, const Tensor& x, const Tensor& spikes_for_amp = {}) const {
    switch (cfg.kind) {
      case NeuronKind::kIF: return if_step(v_prev, x, cfg);
      case NeuronKind::kLIF: return lif_step(v_prev, x, cfg);
      case NeuronKind::kPLIF: return lif_step(v_prev, x, cfg, InvTau{sigmoid(plif_w)});
      case NeuronKind::kMP_IF: return mp_if_step(v_prev, x);
      case NeuronKind::kMP_LIF: return mp_step(v_prev, x, cfg.tau);
      case NeuronKind::kMP_PLIF: return mp_step(v_prev, x, plif_tau(plif_w));
      case NeuronKind::kAMP_LIF:
        if (!spikes_for_amp.defined()) throw ContractError("AMP_LIF step needs the layer's input spikes");
        return amp_lif_step(v_prev, x, spikes_for_amp, *amp);
    }
    throw ContractError("unreachable neuron kind");
  }

  /// Decay factor (1 - 1/τ) applied per empty step, for the fixed-τ kinds.
  std::optional<double> fixed_decay() const {
    switch (cfg.kind) {
      case NeuronKind::kIF:
      case NeuronKind::kMP_IF: return 1.0;
      case NeuronKind::kLIF:
      case NeuronKind::kMP_LIF: return 1.0 - 1.0 / cfg.tau;
      case NeuronKind::kPLIF:
      case NeuronKind::kMP_PLIF: return 1.0 - sigmoid_scalar(plif_w[0]);
      default: return std::nullopt;
    }
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    if (plif_w.defined()) out.push_back(plif_w);
    if (amp) out.insert(out.end(), {amp->conv_weight, amp->conv_bias, amp->linear_weight, amp->linear_bias});
    return out;
  }
};

}  // namespace evsnn
