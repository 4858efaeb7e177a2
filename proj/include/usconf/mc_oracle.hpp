#pragma once
// Monte-Carlo estimate of the confidence map by simulating the random walk
// directly. Used only to cross-check the linear-system solution.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "usconf/confidence.hpp"
#include "usconf/error.hpp"
#include "usconf/grid.hpp"
#include "usconf/parallel.hpp"
#include "usconf/random.hpp"

namespace usconf {

struct McConfig {
  std::size_t walks_per_pixel = 1000;
  std::size_t max_steps = 0; // 0 -> 8 * H^2 * W
  std::uint64_t seed = 0;

  std::size_t step_cap(std::size_t width, std::size_t height) const noexcept {
    return max_steps ? max_steps : 8 * height * height * width;
  }
};

struct McResult {
  ConfidenceMap estimate;
  Field2D std_error;
  std::size_t censored = 0;
  std::size_t total_walks = 0;
};

namespace detail {

/// Cumulative transition table per pixel: up to 8 (neighbour, cum. prob) pairs.
struct TransitionTable {
  static constexpr std::size_t kMax = 8;
  std::vector<std::array<std::uint32_t, kMax>> next;
  std::vector<std::array<double, kMax>> cum;
  std::vector<std::uint8_t> count;

  explicit TransitionTable(const EdgeWeights &e)
      : next(e.width * e.height), cum(e.width * e.height), count(e.width * e.height, 0) {
    for (std::size_t r = 0; r < e.height; ++r) {
      for (std::size_t c = 0; c < e.width; ++c) {
        const std::size_t i = r * e.width + c;
        double total = 0.0;
        std::size_t k = 0;
        e.for_each_neighbor(r, c, [&](const EdgeWeights::Neighbor &nb) {
          total += nb.weight;
          next[i][k] = static_cast<std::uint32_t>(nb.row * e.width + nb.col);
          cum[i][k] = total;
          ++k;
        });
        count[i] = static_cast<std::uint8_t>(k);
        for (std::size_t j = 0; j < k; ++j) cum[i][j] /= total;
      }
    }
  }

  std::uint32_t step(std::size_t i, double u) const noexcept {
    const std::size_t k = count[i];
    for (std::size_t j = 0; j + 1 < k; ++j)
      if (u < cum[i][j]) return next[i][j];
    return next[i][k - 1];
  }
};

} // namespace detail

/// Fraction of walks from each pixel absorbed at the top row. Each walk uses
/// its own counter stream keyed by (seed, pixel, walk), so the result is
/// independent of the worker count. Throws CensoredWalksError if more than 1%
/// of walks hit the step cap.
inline McResult mc_confidence(const Image2D &img, const RwParams &params, const McConfig &cfg,
                              std::size_t workers = 1) {
  params.validate();
  detail::require(img.width() >= 1 && img.height() >= 3, "mc_confidence: need W >= 1, H >= 3");
  detail::require(cfg.walks_per_pixel >= 1, "mc_confidence: walks_per_pixel must be >= 1");
  const std::size_t w = img.width(), h = img.height(), n = w * h;
  const detail::TransitionTable table(edge_weights(attenuation_field(img, params.alpha), params));
  const std::size_t cap = cfg.step_cap(w, h);
  const std::size_t walks = cfg.walks_per_pixel;

  std::vector<std::size_t> hits(n, 0), censored(n, 0);
  const std::size_t first = w, last = n - w; // interior pixels [first, last)
  parallel_for(last - first, workers, [&](std::size_t k) {
    const std::size_t start = first + k;
    std::size_t top = 0, lost = 0;
    for (std::size_t walk = 0; walk < walks; ++walk) {
      CounterRng rng(stream_key(cfg.seed, start, walk));
      std::size_t pos = start;
      std::size_t steps = 0;
      while (pos >= first && pos < last) {
        if (steps++ == cap) break;
        pos = table.step(pos, rng.uniform());
      }
      if (pos < first) {
        ++top;
      } else if (pos < last) {
        ++lost;
      }
    }
    hits[start] = top;
    censored[start] = lost;
  });

  McResult res;
  res.std_error = {w, h, std::vector<double>(n, 0.0)};
  std::vector<float> est(n, 0.0f);
  for (std::size_t i = 0; i < first; ++i) est[i] = 1.0f;
  for (std::size_t i = first; i < last; ++i) {
    res.censored += censored[i];
    const std::size_t valid = walks - censored[i];
    const double p = valid ? static_cast<double>(hits[i]) / static_cast<double>(valid) : 0.0;
    est[i] = static_cast<float>(p);
    res.std_error.data[i] = valid ? std::sqrt(p * (1.0 - p) / static_cast<double>(valid)) : 0.0;
  }
  res.total_walks = (last - first) * walks;
  res.estimate = ConfidenceMap(w, h, std::move(est));
  if (res.censored * 100 > res.total_walks)
    throw CensoredWalksError("mc_confidence: " + std::to_string(res.censored) + " of " +
                             std::to_string(res.total_walks) + " walks exceeded " + std::to_string(cap) + " steps");
  return res;
}

} // namespace usconf
