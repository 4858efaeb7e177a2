#pragma once
// Ultrasound confidence maps as the solution of a random-walker Dirichlet
// problem on the 8-connected pixel graph.
//
// Row 0 (transducer) is the source with value 1, row H-1 is the sink with
// value 0. The confidence of a pixel is the probability that a walk started
// there reaches the source before the sink, i.e. the harmonic function of
// the weighted graph Laplacian with those boundary values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "usconf/error.hpp"
#include "usconf/grid.hpp"
#include "usconf/parallel.hpp"
#include "usconf/sparse.hpp"

namespace usconf {

struct RwParams {
  double alpha = 2.0;     // attenuation per unit normalized depth
  double beta = 90.0;     // intensity-difference penalty
  double gamma = 0.05;    // beam-shape penalty for horizontal/diagonal moves
  double epsilon = 1e-6;  // weight floor; keeps the graph connected
  double tol = 1e-6;      // CG relative residual
  std::size_t max_iter = 0; // 0 -> 10 * unknowns
  Preconditioner preconditioner = Preconditioner::line; // column-wise tridiagonal blocks

  void validate() const {
    detail::require(alpha >= 0.0 && std::isfinite(alpha), "RwParams: alpha must be >= 0");
    detail::require(beta >= 0.0 && std::isfinite(beta), "RwParams: beta must be >= 0");
    detail::require(gamma >= 0.0 && std::isfinite(gamma), "RwParams: gamma must be >= 0");
    detail::require(epsilon > 0.0 && std::isfinite(epsilon), "RwParams: epsilon must be > 0");
    detail::require(tol > 0.0, "RwParams: tol must be > 0");
  }
};

/// Scalar 2D field in f64, same layout as Image2D.
struct Field2D {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> data;

  double operator()(std::size_t row, std::size_t col) const { return data[row * width + col]; }
};

/// Certainty per pixel. Top row is exactly 1, bottom row exactly 0.
class ConfidenceMap {
public:
  ConfidenceMap() = default;
  ConfidenceMap(std::size_t width, std::size_t height, std::vector<float> data)
      : width_(width), height_(height), data_(std::move(data)) {
    detail::require(width_ >= 1 && height_ >= 2, "ConfidenceMap: need W >= 1, H >= 2");
    detail::require(data_.size() == width_ * height_, "ConfidenceMap: data length != W*H");
    detail::check_unit_range(data_, "ConfidenceMap");
    const std::size_t last = (height_ - 1) * width_;
    for (std::size_t c = 0; c < width_; ++c)
      detail::require(data_[c] == 1.0f && data_[last + c] == 0.0f,
                      "ConfidenceMap: boundary rows must be exactly 1 (top) and 0 (bottom)");
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<const float> data() const noexcept { return data_; }
  float operator()(std::size_t row, std::size_t col) const { return data_[row * width_ + col]; }

  Image2D as_image(Spacing2 spacing = {}) const { return {width_, height_, data_, spacing}; }

private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<float> data_;
};

/// Edge weights of the 8-neighbourhood graph, stored once per undirected
/// edge at its upper (or left) endpoint. Absent edges at the border hold 0.
struct EdgeWeights {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> down;       // (r,c) - (r+1,c)
  std::vector<double> right;      // (r,c) - (r,c+1)
  std::vector<double> down_right; // (r,c) - (r+1,c+1)
  std::vector<double> down_left;  // (r,c) - (r+1,c-1)

  struct Neighbor {
    std::size_t row;
    std::size_t col;
    double weight;
  };

  /// Calls fn(Neighbor) for each of the up to 8 neighbours of (r, c), in
  /// increasing raster order of the neighbour.
  template <class Fn>
  void for_each_neighbor(std::size_t r, std::size_t c, Fn &&fn) const {
    const std::size_t w = width;
    if (r > 0) {
      const std::size_t up = (r - 1) * w;
      if (c > 0) fn(Neighbor{r - 1, c - 1, down_right[up + c - 1]});
      fn(Neighbor{r - 1, c, down[up + c]});
      if (c + 1 < w) fn(Neighbor{r - 1, c + 1, down_left[up + c + 1]});
    }
    if (c > 0) fn(Neighbor{r, c - 1, right[r * w + c - 1]});
    if (c + 1 < w) fn(Neighbor{r, c + 1, right[r * w + c]});
    if (r + 1 < height) {
      if (c > 0) fn(Neighbor{r + 1, c - 1, down_left[r * w + c]});
      fn(Neighbor{r + 1, c, down[r * w + c]});
      if (c + 1 < w) fn(Neighbor{r + 1, c + 1, down_right[r * w + c]});
    }
  }
};

/// Beer-Lambert attenuated intensities c = g * exp(-alpha * depth).
inline Field2D attenuation_field(const Image2D &img, double alpha) {
  Field2D f{img.width(), img.height(), std::vector<double>(img.size())};
  for (std::size_t r = 0; r < img.height(); ++r) {
    const double att = std::exp(-alpha * img.depth(r));
    for (std::size_t c = 0; c < img.width(); ++c) f.data[r * f.width + c] = static_cast<double>(img(r, c)) * att;
  }
  return f;
}

inline double vertical_weight(double ci, double cj, const RwParams &p) {
  return std::exp(-p.beta * std::abs(ci - cj)) + p.epsilon;
}
inline double horizontal_weight(double ci, double cj, const RwParams &p) {
  return std::exp(-p.beta * (std::abs(ci - cj) + p.gamma)) + p.epsilon;
}
inline double diagonal_weight(double ci, double cj, const RwParams &p) {
  return std::exp(-p.beta * (std::abs(ci - cj) + std::numbers::sqrt2 * p.gamma)) + p.epsilon;
}

inline EdgeWeights edge_weights(const Field2D &c, const RwParams &p) {
  const std::size_t w = c.width, h = c.height, n = w * h;
  for (double v : c.data) detail::require(std::isfinite(v), "edge_weights: non-finite attenuation value");
  EdgeWeights e{w, h, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0),
                std::vector<double>(n, 0.0)};
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t col = 0; col < w; ++col) {
      const std::size_t i = r * w + col;
      const double ci = c.data[i];
      if (col + 1 < w) e.right[i] = horizontal_weight(ci, c.data[i + 1], p);
      if (r + 1 < h) {
        e.down[i] = vertical_weight(ci, c.data[i + w], p);
        if (col + 1 < w) e.down_right[i] = diagonal_weight(ci, c.data[i + w + 1], p);
        if (col > 0) e.down_left[i] = diagonal_weight(ci, c.data[i + w - 1], p);
      }
    }
  }
  return e;
}

/// Laplacian restricted to the unknown rows 1..H-2 plus the source terms.
/// Unknown (r, c) has index (r-1)*W + c.
struct DirichletSystem {
  std::size_t width = 0;
  std::size_t height = 0;
  CsrMatrix matrix;
  std::vector<double> rhs;

  std::size_t unknowns() const noexcept { return rhs.size(); }
  std::size_t unknown_index(std::size_t row, std::size_t col) const noexcept { return (row - 1) * width + col; }
  std::size_t pixel_of_unknown(std::size_t u) const noexcept { return u + width; }
};

inline DirichletSystem dirichlet_system(const EdgeWeights &e) {
  detail::require(e.height >= 3, "dirichlet_system: need H >= 3 (at least one unknown row)");
  detail::require(e.width >= 1, "dirichlet_system: need W >= 1");
  const std::size_t w = e.width, h = e.height;
  DirichletSystem sys;
  sys.width = w;
  sys.height = h;
  const std::size_t n = w * (h - 2);
  sys.rhs.assign(n, 0.0);
  auto &m = sys.matrix;
  m.n = n;
  m.row_ptr.reserve(n + 1);
  m.col_idx.reserve(n * 9);
  m.values.reserve(n * 9);
  m.row_ptr.push_back(0);

  for (std::size_t r = 1; r + 1 < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t self = sys.unknown_index(r, c);
      double diag = 0.0, source = 0.0;
      std::size_t self_slot = m.values.size();
      bool placed = false;
      auto place_self = [&] {
        self_slot = m.values.size();
        m.col_idx.push_back(self);
        m.values.push_back(0.0);
        placed = true;
      };
      // neighbours arrive in raster order, hence increasing unknown index
      e.for_each_neighbor(r, c, [&](const EdgeWeights::Neighbor &nb) {
        diag += nb.weight;
        if (nb.row == 0) {
          source += nb.weight;
        } else if (nb.row + 1 < h) {
          if (!placed && (nb.row > r || (nb.row == r && nb.col > c))) place_self();
          m.col_idx.push_back(sys.unknown_index(nb.row, nb.col));
          m.values.push_back(-nb.weight);
        }
      });
      if (!placed) place_self();
      m.values[self_slot] = diag;
      sys.rhs[sys.unknown_index(r, c)] = source;
      m.row_ptr.push_back(m.values.size());
    }
  }
  m.symmetric = detail::stored_symmetric(m);
  return sys;
}

struct ConfidenceResult {
  ConfidenceMap map;
  SolverStats stats;
};

using ConfidenceNotConverged = NotConvergedError<ConfidenceMap, SolverStats>;

namespace detail {

inline ConfidenceMap assemble_map(std::size_t w, std::size_t h, std::span<const double> interior) {
  std::vector<float> data(w * h, 0.0f);
  std::fill(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(w), 1.0f);
  // Interior values are strictly inside (0,1); keep that after rounding.
  const double lo = std::numeric_limits<float>::min();
  const double hi = std::nextafter(1.0f, 0.0f);
  for (std::size_t u = 0; u < interior.size(); ++u)
    data[u + w] = static_cast<float>(std::clamp(interior[u], lo, hi));
  return {w, h, std::move(data)};
}

} // namespace detail

/// attenuation -> edge weights -> Dirichlet reduction -> CG. Throws
/// ConfidenceNotConverged with the partial map if CG stalls.
inline ConfidenceResult compute_confidence_map(const Image2D &img, const RwParams &params = {}) {
  params.validate();
  detail::require(img.width() >= 1 && img.height() >= 3, "compute_confidence_map: need W >= 1, H >= 3");
  const auto sys = dirichlet_system(edge_weights(attenuation_field(img, params.alpha), params));
  CgOptions opt{params.tol, params.max_iter, params.preconditioner, img.width()};
  try {
    auto res = cg_solve(sys.matrix, sys.rhs, opt);
    return {detail::assemble_map(img.width(), img.height(), res.x), res.stats};
  } catch (const CgNotConverged &e) {
    throw ConfidenceNotConverged(e.what(), detail::assemble_map(img.width(), img.height(), e.partial()), e.stats());
  }
}

/// Independent per-slice maps stacked into a volume. Output is identical for
/// any worker count.
inline Volume3D compute_volume_confidence(const Volume3D &vol, const RwParams &params = {}, std::size_t workers = 1) {
  params.validate();
  const Dims d = vol.dims();
  std::vector<std::vector<float>> slices(d.depth);
  parallel_for(d.depth, workers, [&](std::size_t z) {
    try {
      const auto res = compute_confidence_map(vol.slice(z), params);
      slices[z].assign(res.map.data().begin(), res.map.data().end());
    } catch (const ConfidenceNotConverged &e) {
      throw ConfidenceNotConverged("slice " + std::to_string(z) + ": " + e.what(), e.partial(), e.stats());
    } catch (const InputError &e) {
      throw InputError("slice " + std::to_string(z) + ": " + e.what());
    }
  });
  std::vector<float> out;
  out.reserve(d.voxels());
  for (const auto &s : slices) out.insert(out.end(), s.begin(), s.end());
  return {d, std::move(out), vol.spacing()};
}

} // namespace usconf
