#pragma once
// Shared fixtures and brute-force references for the test suites.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "usconf.hpp"

namespace testing_util {

using namespace usconf;

inline Image2D random_image(std::size_t w, std::size_t h, std::mt19937_64 &rng, float lo = 0.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(w * h);
  for (auto &x : v) x = u(rng);
  return {w, h, std::move(v)};
}

/// Smooth-ish random image: random blobs over a base level.
inline Image2D blob_image(std::size_t w, std::size_t h, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<float> v(w * h, 0.4f);
  for (int b = 0; b < 3; ++b) {
    const double cx = u(rng) * w, cy = u(rng) * h, r = 2.0 + u(rng) * w / 4.0, a = u(rng) * 0.5;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        v[y * w + x] += static_cast<float>(a * std::exp(-d2 / (r * r)));
      }
  }
  for (auto &x : v) x = std::min(x, 1.0f);
  return {w, h, std::move(v)};
}

inline BinaryMask random_mask(Dims d, double p, std::mt19937_64 &rng) {
  std::bernoulli_distribution b(p);
  BinaryMask m{d, std::vector<std::uint8_t>(d.voxels())};
  for (auto &x : m.data) x = b(rng) ? 1 : 0;
  return m;
}

inline void coords(Dims d, std::size_t i, std::size_t &x, std::size_t &y, std::size_t &z) {
  x = i % d.width;
  y = (i / d.width) % d.height;
  z = i / (d.width * d.height);
}

inline double squared_distance(Dims d, std::size_t i, std::size_t j, Spacing3 s) {
  std::size_t xi, yi, zi, xj, yj, zj;
  coords(d, i, xi, yi, zi);
  coords(d, j, xj, yj, zj);
  const double dx = (double(xi) - double(xj)) * s.x, dy = (double(yi) - double(yj)) * s.y,
               dz = (double(zi) - double(zj)) * s.z;
  return dx * dx + dy * dy + dz * dz;
}

/// O(n^2) nearest-foreground distances.
inline std::vector<double> brute_force_edt(const BinaryMask &m, Spacing3 s) {
  std::vector<std::size_t> fg;
  for (std::size_t i = 0; i < m.data.size(); ++i)
    if (m.data[i]) fg.push_back(i);
  std::vector<double> out(m.data.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j : fg) best = std::min(best, squared_distance(m.dims, i, j, s));
    out[i] = std::sqrt(best);
  }
  return out;
}

/// Surface points by direct face-neighbour inspection; then pooled
/// nearest-surface distances in both directions.
inline std::vector<double> brute_force_surface_distances(const BinaryMask &a, const BinaryMask &b, Spacing3 s) {
  auto surface = [](const BinaryMask &m) {
    std::vector<std::size_t> pts;
    const Dims d = m.dims;
    for (std::size_t i = 0; i < m.data.size(); ++i) {
      if (!m.data[i]) continue;
      std::size_t x, y, z;
      coords(d, i, x, y, z);
      bool edge = x == 0 || y == 0 || x + 1 == d.width || y + 1 == d.height;
      if (!edge) edge = !m.data[i - 1] || !m.data[i + 1] || !m.data[i - d.width] || !m.data[i + d.width];
      if (d.depth > 1 && !edge) {
        const std::size_t sl = d.width * d.height;
        edge = z == 0 || z + 1 == d.depth || !m.data[i - sl] || !m.data[i + sl];
      }
      if (edge) pts.push_back(i);
    }
    return pts;
  };
  const auto sa = surface(a), sb = surface(b);
  std::vector<double> out;
  auto one_way = [&](const std::vector<std::size_t> &from, const std::vector<std::size_t> &to) {
    for (auto i : from) {
      double best = std::numeric_limits<double>::infinity();
      for (auto j : to) best = std::min(best, squared_distance(a.dims, i, j, s));
      out.push_back(std::sqrt(best));
    }
  };
  one_way(sa, sb);
  one_way(sb, sa);
  return out;
}

/// Flood-fill component count with face connectivity.
inline std::size_t brute_force_components(const BinaryMask &m) {
  const Dims d = m.dims;
  std::vector<std::uint8_t> seen(m.data.size(), 0);
  std::size_t count = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < m.data.size(); ++s) {
    if (!m.data[s] || seen[s]) continue;
    ++count;
    stack = {s};
    seen[s] = 1;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      std::size_t x, y, z;
      coords(d, i, x, y, z);
      const std::size_t sl = d.width * d.height;
      std::vector<std::size_t> nb;
      if (x > 0) nb.push_back(i - 1);
      if (x + 1 < d.width) nb.push_back(i + 1);
      if (y > 0) nb.push_back(i - d.width);
      if (y + 1 < d.height) nb.push_back(i + d.width);
      if (z > 0) nb.push_back(i - sl);
      if (z + 1 < d.depth) nb.push_back(i + sl);
      for (auto j : nb)
        if (m.data[j] && !seen[j]) {
          seen[j] = 1;
          stack.push_back(j);
        }
    }
  }
  return count;
}

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

/// Confidence map through the dense direct solver.
inline std::vector<double> dense_confidence(const Image2D &img, const RwParams &p) {
  const auto sys = dirichlet_system(edge_weights(attenuation_field(img, p.alpha), p));
  const auto x = dense_solve(to_dense(sys.matrix), sys.rhs);
  std::vector<double> out(img.size(), 0.0);
  for (std::size_t c = 0; c < img.width(); ++c) out[c] = 1.0;
  for (std::size_t u = 0; u < x.size(); ++u) out[u + img.width()] = std::clamp(x[u], 0.0, 1.0);
  return out;
}

inline RwParams random_params(std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> ua(0.0, 3.0), ub(10.0, 200.0);
  RwParams p;
  p.alpha = ua(rng);
  p.beta = ub(rng);
  return p;
}

} // namespace testing_util
