#pragma once
// Confidence masks, the segmentation loss family and its analytic gradients
// with respect to per-voxel logits, plus predictive entropy over ensembles.
//
//   ce_conf = -(1/m) sum_i sum_c Y_ic * CM_i * log(P_ic)
//   ce      = ce_conf with CM == 1
//   dice    = 1 - (1/C) sum_c (2 sum_i Y_ic P_ic + s) / (sum_i Y_ic + sum_i P_ic + s)
//   dice_ce = dice + ce, dice_ce_conf = dice + ce_conf
//
// The flat overloads work on m voxels x C channels, voxel-major.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "usconf/error.hpp"
#include "usconf/grid.hpp"

namespace usconf {

enum class LossKind { ce, ce_conf, dice, dice_ce, dice_ce_conf };

inline constexpr double kLogClamp = 1e-12;
inline constexpr double kDiceSmooth = 1e-5;

inline constexpr bool uses_confidence(LossKind k) noexcept {
  return k == LossKind::ce_conf || k == LossKind::dice_ce_conf;
}
inline constexpr bool has_ce_term(LossKind k) noexcept { return k != LossKind::dice; }
inline constexpr bool has_dice_term(LossKind k) noexcept {
  return k == LossKind::dice || k == LossKind::dice_ce || k == LossKind::dice_ce_conf;
}

inline std::string_view to_string(LossKind k) noexcept {
  switch (k) {
  case LossKind::ce: return "ce";
  case LossKind::ce_conf: return "ce_conf";
  case LossKind::dice: return "dice";
  case LossKind::dice_ce: return "dice_ce";
  case LossKind::dice_ce_conf: return "dice_ce_conf";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  for (auto k : {LossKind::ce, LossKind::ce_conf, LossKind::dice, LossKind::dice_ce, LossKind::dice_ce_conf})
    if (to_string(k) == s) return k;
  throw InputError("unknown loss kind '" + std::string(s) + "'");
}

struct LossValue {
  double total = 0.0;
  std::optional<double> ce;   // cross-entropy term (confidence-weighted for *_conf)
  std::optional<double> dice; // soft-dice term
};

namespace detail {

inline void check_conf_arg(LossKind kind, std::span<const double> cm, std::size_t m) {
  if (uses_confidence(kind)) {
    require(!cm.empty(), std::string(to_string(kind)) + " requires a confidence map");
    require(cm.size() == m, "loss: confidence map size != voxel count");
  }
}

inline double weighted_ce(std::size_t channels, std::span<const double> y, std::span<const double> p,
                          std::span<const double> cm) {
  const std::size_t m = y.size() / channels;
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double wi = cm.empty() ? 1.0 : cm[i];
    double voxel = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const double yc = y[i * channels + c];
      if (yc != 0.0) voxel += yc * std::log(std::max(p[i * channels + c], kLogClamp));
    }
    sum += wi * voxel;
  }
  return -sum / static_cast<double>(m);
}

inline double soft_dice(std::size_t channels, std::span<const double> y, std::span<const double> p) {
  const std::size_t m = y.size() / channels;
  double acc = 0.0;
  for (std::size_t c = 0; c < channels; ++c) {
    double inter = 0.0, sy = 0.0, sp = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      inter += y[i * channels + c] * p[i * channels + c];
      sy += y[i * channels + c];
      sp += p[i * channels + c];
    }
    acc += (2.0 * inter + kDiceSmooth) / (sy + sp + kDiceSmooth);
  }
  return 1.0 - acc / static_cast<double>(channels);
}

} // namespace detail

/// Loss on flat arrays. `cm` may be empty for kinds without confidence
/// weighting; for ce / dice / dice_ce it is ignored.
inline LossValue loss_value(LossKind kind, std::size_t channels, std::span<const double> y,
                            std::span<const double> p, std::span<const double> cm = {}) {
  detail::require(channels >= 1 && y.size() == p.size() && y.size() % channels == 0 && !y.empty(),
                  "loss_value: inconsistent sizes");
  const std::size_t m = y.size() / channels;
  detail::check_conf_arg(kind, cm, m);
  LossValue out;
  if (has_ce_term(kind)) {
    out.ce = detail::weighted_ce(channels, y, p, uses_confidence(kind) ? cm : std::span<const double>{});
    out.total += *out.ce;
  }
  if (has_dice_term(kind)) {
    out.dice = detail::soft_dice(channels, y, p);
    out.total += *out.dice;
  }
  return out;
}

/// Numerically stable per-voxel softmax.
inline void softmax(std::size_t channels, std::span<const double> logits, std::span<double> out) {
  const std::size_t m = logits.size() / channels;
  for (std::size_t i = 0; i < m; ++i) {
    const double *z = logits.data() + i * channels;
    double *p = out.data() + i * channels;
    const double zmax = *std::max_element(z, z + channels);
    double sum = 0.0;
    for (std::size_t c = 0; c < channels; ++c) sum += (p[c] = std::exp(z[c] - zmax));
    for (std::size_t c = 0; c < channels; ++c) p[c] /= sum;
  }
}

inline std::vector<double> softmax(std::size_t channels, std::span<const double> logits) {
  std::vector<double> p(logits.size());
  softmax(channels, logits, p);
  return p;
}

/// d loss / d logits with P = softmax(logits). Written into `grad`.
inline void loss_gradient(LossKind kind, std::size_t channels, std::span<const double> logits,
                          std::span<const double> y, std::span<const double> cm, std::span<double> grad) {
  detail::require(channels >= 1 && logits.size() == y.size() && grad.size() == y.size() &&
                      y.size() % channels == 0 && !y.empty(),
                  "loss_gradient: inconsistent sizes");
  const std::size_t m = y.size() / channels;
  detail::check_conf_arg(kind, cm, m);
  const auto p = softmax(channels, logits);
  std::fill(grad.begin(), grad.end(), 0.0);
  const double inv_m = 1.0 / static_cast<double>(m);

  if (has_ce_term(kind)) {
    const bool weighted = uses_confidence(kind);
    for (std::size_t i = 0; i < m; ++i) {
      const double wi = (weighted ? cm[i] : 1.0) * inv_m;
      double ysum = 0.0;
      for (std::size_t c = 0; c < channels; ++c) ysum += y[i * channels + c];
      for (std::size_t c = 0; c < channels; ++c)
        grad[i * channels + c] += wi * (p[i * channels + c] * ysum - y[i * channels + c]);
    }
  }

  if (has_dice_term(kind)) {
    // dD/dP_ic = -(1/C) (2 Y_ic Den_c - Num_c) / Den_c^2, then through softmax.
    std::vector<double> num(channels), den(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      double inter = 0.0, sy = 0.0, sp = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        inter += y[i * channels + c] * p[i * channels + c];
        sy += y[i * channels + c];
        sp += p[i * channels + c];
      }
      num[c] = 2.0 * inter + kDiceSmooth;
      den[c] = sy + sp + kDiceSmooth;
    }
    const double inv_c = 1.0 / static_cast<double>(channels);
    std::vector<double> g(channels);
    for (std::size_t i = 0; i < m; ++i) {
      double gp = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        g[c] = -inv_c * (2.0 * y[i * channels + c] * den[c] - num[c]) / (den[c] * den[c]);
        gp += g[c] * p[i * channels + c];
      }
      for (std::size_t c = 0; c < channels; ++c) grad[i * channels + c] += p[i * channels + c] * (g[c] - gp);
    }
  }
}

inline std::vector<double> loss_gradient(LossKind kind, std::size_t channels, std::span<const double> logits,
                                         std::span<const double> y, std::span<const double> cm = {}) {
  std::vector<double> grad(logits.size());
  loss_gradient(kind, channels, logits, y, cm, grad);
  return grad;
}

// ---- ProbMap-level API ----------------------------------------------------

namespace detail {

inline void require_one_hot(const ProbMap &y, const char *who) {
  for (std::size_t v = 0; v < y.voxels(); ++v) {
    float sum = 0.0f;
    for (std::size_t c = 0; c < y.channels(); ++c) {
      const float val = y(v, c);
      require(val == 0.0f || val == 1.0f, std::string(who) + ": target is not one-hot");
      sum += val;
    }
    require(sum == 1.0f, std::string(who) + ": target is not one-hot");
  }
}

inline std::vector<double> widen(std::span<const float> x) { return {x.begin(), x.end()}; }

} // namespace detail

/// Weighted target Y * CM, broadcasting CM over channels.
inline ProbMap confidence_mask(const ProbMap &y, std::span<const float> cm) {
  detail::require(cm.size() == y.voxels(), "confidence_mask: confidence map dims do not match labels");
  detail::require_one_hot(y, "confidence_mask");
  const std::size_t ch = y.channels();
  std::vector<float> out(y.data().begin(), y.data().end());
  for (std::size_t v = 0; v < y.voxels(); ++v)
    for (std::size_t c = 0; c < ch; ++c) out[v * ch + c] *= cm[v];
  return {y.dims(), ch, std::move(out), false};
}

inline LossValue loss_value(LossKind kind, const ProbMap &y, const ProbMap &y_hat,
                            std::optional<std::span<const float>> cm = std::nullopt) {
  detail::require(y.dims() == y_hat.dims() && y.channels() == y_hat.channels(), "loss_value: dims mismatch");
  detail::require_one_hot(y, "loss_value");
  for (std::size_t v = 0; v < y_hat.voxels(); ++v) {
    double s = 0.0;
    for (std::size_t c = 0; c < y_hat.channels(); ++c) s += y_hat(v, c);
    detail::require(std::abs(s - 1.0) <= ProbMap::kNormTolerance, "loss_value: prediction is not normalized");
  }
  if (uses_confidence(kind))
    detail::require(cm.has_value(), std::string(to_string(kind)) + " requires a confidence map");
  const auto yd = detail::widen(y.data());
  const auto pd = detail::widen(y_hat.data());
  const auto cd = cm ? detail::widen(*cm) : std::vector<double>{};
  return loss_value(kind, y.channels(), yd, pd, cd);
}

/// Predictive entropy (nats) of the ensemble mean; 0 log 0 := 0.
struct EntropyMap {
  Dims dims;
  std::vector<double> data;
};

inline EntropyMap entropy_map(std::span<const ProbMap> predictions) {
  detail::require(!predictions.empty(), "entropy_map: need at least one prediction");
  const auto &first = predictions.front();
  for (const auto &p : predictions)
    detail::require(p.dims() == first.dims() && p.channels() == first.channels(), "entropy_map: dims mismatch");
  const std::size_t ch = first.channels(), n = first.voxels();
  const double inv_k = 1.0 / static_cast<double>(predictions.size());
  EntropyMap out{first.dims(), std::vector<double>(n, 0.0)};
  std::vector<double> mean(ch);
  for (std::size_t v = 0; v < n; ++v) {
    std::fill(mean.begin(), mean.end(), 0.0);
    for (const auto &p : predictions)
      for (std::size_t c = 0; c < ch; ++c) mean[c] += p(v, c);
    double h = 0.0;
    for (std::size_t c = 0; c < ch; ++c) {
      const double q = mean[c] * inv_k;
      if (q > 0.0) h -= q * std::log(q);
    }
    out.data[v] = std::max(h, 0.0);
  }
  return out;
}

} // namespace usconf
