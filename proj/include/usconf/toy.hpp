#pragma once
// Desk-scale segmentation study: synthetic B-mode phantoms with depth-growing
// label noise, and a one-hidden-layer per-pixel classifier trained under the
// baseline, CM-as-extra-channel and CM-in-the-loss configurations.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "usconf/confidence.hpp"
#include "usconf/error.hpp"
#include "usconf/grid.hpp"
#include "usconf/loss.hpp"
#include "usconf/metrics.hpp"
#include "usconf/parallel.hpp"
#include "usconf/random.hpp"

namespace usconf {

struct Ellipse {
  double cx, cy; // centre (column, row)
  double ax, ay; // semi-axes in pixels
  float intensity;
};

/// Bright horizontal reflector; everything below it inside its column range
/// is darkened by `shadow_factor`.
struct Stripe {
  std::size_t row = 20;
  std::size_t thickness = 3;
  float intensity = 1.0f;
  std::size_t col_begin = 16;
  std::size_t col_end = 48;
  double shadow_factor = 0.4;
};

struct PhantomSpec {
  std::size_t width = 64;
  std::size_t height = 64;
  float background = 0.3f;
  std::vector<Ellipse> organs; // organ k gets class k+1
  std::optional<Stripe> stripe;
  double speckle_sigma = 0.15;
  double p0 = 0.02; // boundary flip probability at depth 0
  double p1 = 0.25; // additional flip probability at depth 1
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(width >= 1 && height >= 3, "PhantomSpec: need W >= 1, H >= 3");
    detail::require(background >= 0.0f && background <= 1.0f, "PhantomSpec: background outside [0,1]");
    for (const auto &o : organs)
      detail::require(o.intensity >= 0.0f && o.intensity <= 1.0f && o.ax > 0 && o.ay > 0,
                      "PhantomSpec: invalid organ");
    if (stripe)
      detail::require(stripe->intensity >= 0.0f && stripe->intensity <= 1.0f && stripe->shadow_factor >= 0.0 &&
                          stripe->col_begin <= stripe->col_end && stripe->col_end <= width,
                      "PhantomSpec: invalid stripe");
    detail::require(speckle_sigma >= 0.0, "PhantomSpec: speckle_sigma must be >= 0");
    detail::require(p0 >= 0.0 && p1 >= 0.0 && p0 + p1 <= 0.5, "PhantomSpec: need p0, p1 >= 0 and p0 + p1 <= 0.5");
    detail::require(organs.size() + 1 <= 255, "PhantomSpec: too many organs");
  }

  /// 64x64, one 0.7 organ on 0.3 background, stripe at row 20 over columns
  /// [16,48) casting a 0.4 shadow. The organ sits partly inside the shadow.
  static PhantomSpec standard(std::uint64_t seed) {
    PhantomSpec s;
    s.organs = {Ellipse{40.0, 40.0, 16.0, 11.0, 0.7f}};
    s.stripe = Stripe{};
    s.seed = seed;
    return s;
  }
};

struct Phantom {
  Image2D image;
  LabelMap clean;
  LabelMap noisy;
};

namespace detail {
enum StreamTag : std::uint64_t { kSpeckle = 1, kLabelNoise = 2, kInit = 3, kShuffle = 4 };
}

/// Deterministic for a fixed seed. Noisy labels differ from clean ones only
/// within 2 px (Chebyshev) of a class boundary, flipped with probability
/// p0 + p1 * depth.
inline Phantom generate_phantom(const PhantomSpec &spec) {
  spec.validate();
  const std::size_t w = spec.width, h = spec.height, n = w * h;
  const unsigned classes = static_cast<unsigned>(spec.organs.size() + 1);
  std::vector<float> g(n, spec.background);
  std::vector<std::uint8_t> clean(n, 0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t k = 0; k < spec.organs.size(); ++k) {
        const auto &o = spec.organs[k];
        const double dx = (static_cast<double>(c) - o.cx) / o.ax, dy = (static_cast<double>(r) - o.cy) / o.ay;
        if (dx * dx + dy * dy <= 1.0) {
          g[r * w + c] = o.intensity;
          clean[r * w + c] = static_cast<std::uint8_t>(k + 1);
        }
      }
  if (spec.stripe) {
    const auto &s = *spec.stripe;
    for (std::size_t r = s.row; r < std::min(h, s.row + s.thickness); ++r)
      for (std::size_t c = s.col_begin; c < s.col_end; ++c) g[r * w + c] = s.intensity;
    for (std::size_t r = s.row + s.thickness; r < h; ++r)
      for (std::size_t c = s.col_begin; c < s.col_end; ++c)
        g[r * w + c] = static_cast<float>(g[r * w + c] * s.shadow_factor);
  }
  CounterRng speckle(stream_key(spec.seed, detail::kSpeckle));
  for (auto &v : g) {
    const double noisy = v * (1.0 + spec.speckle_sigma * speckle.normal());
    v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
  }

  std::vector<std::uint8_t> noisy = clean;
  CounterRng flips(stream_key(spec.seed, detail::kLabelNoise));
  for (std::size_t r = 0; r < h; ++r) {
    const double depth = h > 1 ? static_cast<double>(r) / static_cast<double>(h - 1) : 0.0;
    const double prob = spec.p0 + spec.p1 * depth;
    for (std::size_t c = 0; c < w; ++c) {
      const auto own = clean[r * w + c];
      std::optional<std::uint8_t> other;
      for (std::size_t rr = r >= 2 ? r - 2 : 0; rr <= std::min(h - 1, r + 2) && !other; ++rr)
        for (std::size_t cc = c >= 2 ? c - 2 : 0; cc <= std::min(w - 1, c + 2); ++cc)
          if (clean[rr * w + cc] != own) {
            other = clean[rr * w + cc];
            break;
          }
      if (!other) continue;
      if (flips.uniform() < prob) noisy[r * w + c] = *other;
    }
  }
  const Dims dims{w, h, 1};
  return {Image2D(w, h, std::move(g)), LabelMap(dims, std::move(clean), classes),
          LabelMap(dims, std::move(noisy), classes)};
}

/// Whether the confidence map is appended as an extra input feature.
enum class ChannelMode { one, two };

inline std::string_view to_string(ChannelMode m) noexcept { return m == ChannelMode::one ? "1ch" : "2ch"; }

struct FeatureGrid {
  std::size_t pixels = 0;
  std::size_t features = 0;
  std::vector<double> data; // pixel-major
};

/// 1ch: (intensity, normalized depth, 3x3 local mean); 2ch appends the CM value.
inline FeatureGrid extract_features(const Image2D &img, const ConfidenceMap *cm, ChannelMode mode) {
  if (mode == ChannelMode::two) {
    detail::require(cm != nullptr, "extract_features: 2ch mode requires a confidence map");
    detail::require(cm->width() == img.width() && cm->height() == img.height(),
                    "extract_features: confidence map dims do not match image");
  }
  const std::size_t w = img.width(), h = img.height();
  FeatureGrid f{w * h, mode == ChannelMode::one ? 3u : 4u, {}};
  f.data.resize(f.pixels * f.features);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      double sum = 0.0;
      int cnt = 0;
      for (std::size_t rr = r ? r - 1 : 0; rr <= std::min(h - 1, r + 1); ++rr)
        for (std::size_t cc = c ? c - 1 : 0; cc <= std::min(w - 1, c + 1); ++cc) {
          sum += img(rr, cc);
          ++cnt;
        }
      double *x = &f.data[(r * w + c) * f.features];
      x[0] = img(r, c);
      x[1] = img.depth(r);
      x[2] = sum / cnt;
      if (mode == ChannelMode::two) x[3] = (*cm)(r, c);
    }
  return f;
}

struct TrainConfig {
  double lr = 0.1;
  std::size_t epochs = 200;
  std::size_t batch = 256;
  std::uint64_t seed = 0;
  LossKind kind = LossKind::ce;
  ChannelMode mode = ChannelMode::one;
};

inline constexpr std::size_t kHiddenUnits = 16;

/// features -> 16 tanh -> classes softmax. Weight layout: W1 (16 x F,
/// row-major), b1 (16), W2 (C x 16), b2 (C).
struct ToyModel {
  std::size_t features = 0;
  std::size_t classes = 0;
  std::vector<double> weights;
  TrainConfig config;

  static std::size_t weight_count(std::size_t f, std::size_t c) {
    return f * kHiddenUnits + kHiddenUnits + kHiddenUnits * c + c;
  }

  static ToyModel zeros(std::size_t f, std::size_t c) { return {f, c, std::vector<double>(weight_count(f, c), 0.0), {}}; }

  /// Glorot-uniform weights, zero biases.
  static ToyModel initialized(std::size_t f, std::size_t c, std::uint64_t seed) {
    auto m = zeros(f, c);
    CounterRng rng(stream_key(seed, detail::kInit));
    const double a1 = std::sqrt(6.0 / static_cast<double>(f + kHiddenUnits));
    const double a2 = std::sqrt(6.0 / static_cast<double>(kHiddenUnits + c));
    for (std::size_t i = 0; i < f * kHiddenUnits; ++i) m.weights[i] = a1 * (2.0 * rng.uniform() - 1.0);
    const std::size_t w2 = f * kHiddenUnits + kHiddenUnits;
    for (std::size_t i = 0; i < kHiddenUnits * c; ++i) m.weights[w2 + i] = a2 * (2.0 * rng.uniform() - 1.0);
    return m;
  }

  const double *w1() const { return weights.data(); }
  const double *b1() const { return w1() + features * kHiddenUnits; }
  const double *w2() const { return b1() + kHiddenUnits; }
  const double *b2() const { return w2() + kHiddenUnits * classes; }
};

namespace detail {

// Logits (and optionally hidden activations) for a set of pixels.
inline void forward(const ToyModel &m, std::span<const double> x, std::span<const std::size_t> rows,
                    std::vector<double> &hidden, std::vector<double> &logits) {
  const std::size_t f = m.features, c = m.classes;
  hidden.resize(rows.size() * kHiddenUnits);
  logits.resize(rows.size() * c);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const double *xi = &x[rows[b] * f];
    double *hb = &hidden[b * kHiddenUnits];
    for (std::size_t j = 0; j < kHiddenUnits; ++j) {
      double a = m.b1()[j];
      for (std::size_t k = 0; k < f; ++k) a += m.w1()[j * f + k] * xi[k];
      hb[j] = std::tanh(a);
    }
    for (std::size_t o = 0; o < c; ++o) {
      double a = m.b2()[o];
      for (std::size_t j = 0; j < kHiddenUnits; ++j) a += m.w2()[o * kHiddenUnits + j] * hb[j];
      logits[b * c + o] = a;
    }
  }
}

inline std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

inline std::vector<double> one_hot_rows(const LabelMap &labels, std::size_t classes) {
  std::vector<double> y(labels.dims().voxels() * classes, 0.0);
  for (std::size_t i = 0; i < labels.dims().voxels(); ++i) y[i * classes + labels[i]] = 1.0;
  return y;
}

} // namespace detail

/// Softmax probabilities per pixel.
inline ProbMap predict(const ToyModel &model, const FeatureGrid &features, Dims dims) {
  detail::require(features.features == model.features, "predict: feature count does not match model");
  detail::require(dims.voxels() == features.pixels, "predict: dims do not match feature grid");
  std::vector<double> hidden, logits;
  const auto rows = detail::iota_rows(features.pixels);
  detail::forward(model, features.data, rows, hidden, logits);
  const auto p = softmax(model.classes, logits);
  std::vector<float> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = static_cast<float>(p[i]);
  return {dims, model.classes, std::move(out), true};
}

struct TrainResult {
  ToyModel model;
  double initial_loss = 0.0;
  std::vector<double> history; // full-data loss after each epoch
};

/// Loss of `model` over all pixels.
inline double dataset_loss(const ToyModel &model, const FeatureGrid &features, std::span<const double> y,
                           std::span<const double> cm, LossKind kind) {
  std::vector<double> hidden, logits;
  const auto rows = detail::iota_rows(features.pixels);
  detail::forward(model, features.data, rows, hidden, logits);
  return loss_value(kind, model.classes, y, softmax(model.classes, logits), cm).total;
}

/// Minibatch SGD with a seed-derived shuffle per epoch. `cm` (one value per
/// pixel) is required by the *_conf kinds and ignored otherwise.
inline TrainResult train_toy(const FeatureGrid &features, const LabelMap &labels, std::span<const float> cm,
                             const TrainConfig &cfg) {
  detail::require(labels.dims().voxels() == features.pixels, "train_toy: labels do not match features");
  detail::require(cfg.batch >= 1 && cfg.epochs >= 1 && cfg.lr > 0.0, "train_toy: invalid training config");
  if (uses_confidence(cfg.kind))
    detail::require(cm.size() == features.pixels, "train_toy: " + std::string(to_string(cfg.kind)) +
                                                      " requires a confidence map matching the image");
  const std::size_t n = features.pixels, f = features.features, c = labels.num_classes();
  const auto y = detail::one_hot_rows(labels, c);
  std::vector<double> cmd;
  if (uses_confidence(cfg.kind)) cmd.assign(cm.begin(), cm.end());

  TrainResult out{ToyModel::initialized(f, c, cfg.seed), 0.0, {}};
  out.model.config = cfg;
  auto &model = out.model;
  out.initial_loss = dataset_loss(model, features, y, cmd, cfg.kind);

  std::vector<std::size_t> order = detail::iota_rows(n);
  std::vector<double> hidden, logits, yb, cb, grad, dh(kHiddenUnits);
  std::vector<double> gw(model.weights.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    CounterRng shuffle(stream_key(cfg.seed, detail::kShuffle, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle() % i]);

    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(cfg.batch, n - start));
      const std::size_t m = rows.size();
      detail::forward(model, features.data, rows, hidden, logits);
      yb.resize(m * c);
      cb.resize(cmd.empty() ? 0 : m);
      for (std::size_t b = 0; b < m; ++b) {
        std::copy_n(&y[rows[b] * c], c, &yb[b * c]);
        if (!cmd.empty()) cb[b] = cmd[rows[b]];
      }
      grad.resize(m * c);
      loss_gradient(cfg.kind, c, logits, yb, cb, grad);

      std::fill(gw.begin(), gw.end(), 0.0);
      double *gw1 = gw.data(), *gb1 = gw1 + f * kHiddenUnits, *gw2 = gb1 + kHiddenUnits,
             *gb2 = gw2 + kHiddenUnits * c;
      for (std::size_t b = 0; b < m; ++b) {
        const double *hb = &hidden[b * kHiddenUnits], *gb = &grad[b * c], *xi = &features.data[rows[b] * f];
        std::fill(dh.begin(), dh.end(), 0.0);
        for (std::size_t o = 0; o < c; ++o) {
          gb2[o] += gb[o];
          for (std::size_t j = 0; j < kHiddenUnits; ++j) {
            gw2[o * kHiddenUnits + j] += gb[o] * hb[j];
            dh[j] += model.w2()[o * kHiddenUnits + j] * gb[o];
          }
        }
        for (std::size_t j = 0; j < kHiddenUnits; ++j) {
          const double da = dh[j] * (1.0 - hb[j] * hb[j]);
          gb1[j] += da;
          for (std::size_t k = 0; k < f; ++k) gw1[j * f + k] += da * xi[k];
        }
      }
      for (std::size_t i = 0; i < gw.size(); ++i) model.weights[i] -= cfg.lr * gw[i];
    }
    const double loss = dataset_loss(model, features, y, cmd, cfg.kind);
    if (!std::isfinite(loss))
      throw DivergenceError("train_toy: loss became non-finite at epoch " + std::to_string(epoch));
    out.history.push_back(loss);
  }
  return out;
}

// ---- configuration study -----------------------------------------------------

struct ToyConfiguration {
  ChannelMode mode;
  LossKind kind;

  std::string name() const { return std::string(to_string(mode)) + "-" + std::string(to_string(kind)); }
};

/// Baselines, CM as second channel, CM in the loss, and both.
inline std::vector<ToyConfiguration> standard_configurations() {
  using enum LossKind;
  return {{ChannelMode::one, dice},    {ChannelMode::one, ce},          {ChannelMode::one, dice_ce},
          {ChannelMode::two, dice},    {ChannelMode::two, ce},          {ChannelMode::two, dice_ce},
          {ChannelMode::one, ce_conf}, {ChannelMode::one, dice_ce_conf}, {ChannelMode::two, dice_ce_conf},
          {ChannelMode::two, ce_conf}};
}

struct ToyRun {
  std::uint64_t seed = 0;
  double initial_loss = 0.0;
  std::vector<double> history;
  double pixel_accuracy = 0.0; // vs clean labels
  std::size_t islands = 0;     // summed over foreground classes
  std::vector<MetricsRow> rows;
};

struct ToyConfigResult {
  ToyConfiguration config;
  std::vector<ToyRun> runs; // one per seed, in seed order
  MetricsReport report;
  double median_islands = 0.0;
};

struct ToyStudy {
  RwParams cm_params;
  TrainConfig base;
  std::vector<std::uint64_t> seeds;
  std::vector<ToyConfigResult> results;

  const ToyConfigResult *find(const std::string &name) const {
    for (const auto &r : results)
      if (r.config.name() == name) return &r;
    return nullptr;
  }
};

/// Confidence-map parameters used for the study: alpha = 0.5, beta = 100.
inline RwParams study_cm_params() {
  RwParams p;
  p.alpha = 0.5;
  p.beta = 100.0;
  return p;
}

inline double median(std::vector<double> v) {
  detail::require(!v.empty(), "median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

inline std::size_t foreground_islands(const LabelMap &pred) {
  std::size_t total = 0;
  for (unsigned c = 1; c < pred.num_classes(); ++c) total += count_islands(binarize(pred, c)).islands;
  return total;
}

inline double pixel_accuracy(const LabelMap &pred, const LabelMap &truth) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.dims().voxels(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.dims().voxels());
}

/// Trains every configuration on every seed's standard phantom (noisy labels)
/// and evaluates against the clean labels. Seeds run concurrently on
/// `workers` threads; results are identical for any worker count.
inline ToyStudy run_toy_study(std::span<const std::uint64_t> seeds, std::span<const ToyConfiguration> configs,
                              const TrainConfig &base = {}, const RwParams &cm_params = study_cm_params(),
                              std::size_t workers = 1) {
  detail::require(!seeds.empty() && !configs.empty(), "run_toy_study: need seeds and configurations");
  ToyStudy study{cm_params, base, {seeds.begin(), seeds.end()}, {}};
  std::vector<std::vector<ToyRun>> per_seed(seeds.size());
  parallel_for(seeds.size(), workers, [&](std::size_t s) {
    const auto ph = generate_phantom(PhantomSpec::standard(seeds[s]));
    const auto cm = compute_confidence_map(ph.image, cm_params).map;
    const auto f1 = extract_features(ph.image, nullptr, ChannelMode::one);
    const auto f2 = extract_features(ph.image, &cm, ChannelMode::two);
    for (const auto &cfg : configs) {
      TrainConfig tc = base;
      tc.seed = seeds[s];
      tc.kind = cfg.kind;
      tc.mode = cfg.mode;
      const auto &feat = cfg.mode == ChannelMode::one ? f1 : f2;
      auto tr = train_toy(feat, ph.noisy, cm.data(), tc);
      const auto pred = argmax_labels(predict(tr.model, feat, ph.clean.dims()));
      ToyRun run{seeds[s], tr.initial_loss, std::move(tr.history), pixel_accuracy(pred, ph.clean),
                 foreground_islands(pred), evaluate_subject("seed" + std::to_string(seeds[s]), pred, ph.clean, {})};
      per_seed[s].push_back(std::move(run));
    }
  });
  for (std::size_t k = 0; k < configs.size(); ++k) {
    ToyConfigResult r{configs[k], {}, {}, 0.0};
    std::vector<MetricsRow> rows;
    std::vector<double> islands;
    for (auto &runs : per_seed) {
      rows.insert(rows.end(), runs[k].rows.begin(), runs[k].rows.end());
      islands.push_back(static_cast<double>(runs[k].islands));
      r.runs.push_back(runs[k]);
    }
    r.report = aggregate_report(std::move(rows));
    r.median_islands = median(std::move(islands));
    study.results.push_back(std::move(r));
  }
  return study;
}

} // namespace usconf
