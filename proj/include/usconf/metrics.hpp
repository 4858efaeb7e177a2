#pragma once
// Segmentation evaluation: overlap ratios, exact Euclidean distance
// transform, surface distances, island counting and report aggregation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "usconf/error.hpp"
#include "usconf/grid.hpp"

namespace usconf {

/// 0/1 mask over a 2D (depth == 1) or 3D grid.
struct BinaryMask {
  Dims dims;
  std::vector<std::uint8_t> data;

  std::size_t count() const {
    return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
  }
  bool empty() const { return std::all_of(data.begin(), data.end(), [](std::uint8_t v) { return v == 0; }); }
};

inline BinaryMask binarize(const LabelMap &labels, unsigned cls) {
  BinaryMask m{labels.dims(), std::vector<std::uint8_t>(labels.dims().voxels())};
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = labels[i] == cls ? 1 : 0;
  return m;
}

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const noexcept { return tp + fp + fn + tn; }
};

inline ConfusionCounts confusion_counts(const LabelMap &pred, const LabelMap &gt, unsigned cls) {
  detail::require(pred.dims() == gt.dims(), "confusion_counts: dims mismatch");
  ConfusionCounts k;
  for (std::size_t i = 0; i < pred.dims().voxels(); ++i) {
    const bool p = pred[i] == cls, g = gt[i] == cls;
    if (p && g) ++k.tp;
    else if (p) ++k.fp;
    else if (g) ++k.fn;
    else ++k.tn;
  }
  return k;
}

struct OverlapMetrics {
  double dsc, iou, precision, recall, miss_rate, fall_out;
};

/// Ratios with fixed 0/0 conventions: dsc = iou = 1 on doubly-empty masks;
/// precision (recall) = 1 when nothing was predicted (present) and nothing
/// was missed (falsely added), else 0; miss_rate = 1 - recall; fall_out = 0
/// without negatives.
inline OverlapMetrics overlap_metrics(const ConfusionCounts &k) {
  const auto ratio = [](std::size_t num, std::size_t den, double fallback) {
    return den ? static_cast<double>(num) / static_cast<double>(den) : fallback;
  };
  OverlapMetrics m{};
  m.dsc = ratio(2 * k.tp, 2 * k.tp + k.fp + k.fn, 1.0);
  m.iou = ratio(k.tp, k.tp + k.fp + k.fn, 1.0);
  m.precision = ratio(k.tp, k.tp + k.fp, k.fn == 0 ? 1.0 : 0.0);
  m.recall = ratio(k.tp, k.tp + k.fn, k.fp == 0 ? 1.0 : 0.0);
  m.miss_rate = k.tp + k.fn ? ratio(k.fn, k.fn + k.tp, 0.0) : 1.0 - m.recall;
  m.fall_out = ratio(k.fp, k.fp + k.tn, 0.0);
  return m;
}

// ---- distance transform ----------------------------------------------------

struct DistanceField {
  Dims dims;
  std::vector<double> data; // mm; +inf everywhere when the mask is empty
  bool empty_mask = false;
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas f(p) + (s (q - p))^2 along one line of length
// n with stride `stride`, in place. Entries equal to +inf are not sources.
inline void squared_edt_1d(double *f, std::size_t n, std::size_t stride, double s, std::vector<double> &buf,
                           std::vector<std::size_t> &v, std::vector<double> &z) {
  buf.resize(n);
  v.resize(n);
  z.resize(n + 1);
  for (std::size_t i = 0; i < n; ++i) buf[i] = f[i * stride];
  const double s2 = s * s;
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (buf[q] == kInf) continue;
    const double fq = buf[q] + s2 * static_cast<double>(q) * static_cast<double>(q);
    if (!any) {
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      any = true;
      continue;
    }
    // z[0] == -inf stops the scan at k == 0
    double inter;
    while (true) {
      const std::size_t p = v[k];
      const double fp = buf[p] + s2 * static_cast<double>(p) * static_cast<double>(p);
      inter = (fq - fp) / (2.0 * s2 * static_cast<double>(q - p));
      if (inter > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = inter;
    z[k + 1] = kInf;
  }
  if (!any) return;
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const std::size_t p = v[k];
    const double t = s * (static_cast<double>(q) - static_cast<double>(p));
    f[q * stride] = buf[p] + t * t;
  }
}

} // namespace detail

/// Exact Euclidean distance (mm) from every voxel to the nearest foreground
/// voxel, by separable lower-envelope passes along x, y, then z.
inline DistanceField distance_transform(const BinaryMask &mask, Spacing3 spacing) {
  const Dims d = mask.dims;
  detail::require(mask.data.size() == d.voxels(), "distance_transform: mask size != dims");
  detail::require(spacing.x > 0 && spacing.y > 0 && spacing.z > 0, "distance_transform: spacing must be > 0");
  DistanceField out{d, std::vector<double>(d.voxels()), mask.empty()};
  for (std::size_t i = 0; i < d.voxels(); ++i) out.data[i] = mask.data[i] ? 0.0 : detail::kInf;
  if (out.empty_mask) return out;

  std::vector<double> buf, z;
  std::vector<std::size_t> v;
  const std::size_t w = d.width, h = d.height, dz = d.depth;
  for (std::size_t k = 0; k < dz; ++k)
    for (std::size_t y = 0; y < h; ++y)
      detail::squared_edt_1d(out.data.data() + (k * h + y) * w, w, 1, spacing.x, buf, v, z);
  for (std::size_t k = 0; k < dz; ++k)
    for (std::size_t x = 0; x < w; ++x)
      detail::squared_edt_1d(out.data.data() + k * h * w + x, h, w, spacing.y, buf, v, z);
  if (dz > 1)
    for (std::size_t i = 0; i < w * h; ++i) detail::squared_edt_1d(out.data.data() + i, dz, w * h, spacing.z, buf, v, z);
  for (double &x : out.data) x = std::sqrt(x);
  return out;
}

// ---- surfaces ---------------------------------------------------------------

/// Foreground voxels with at least one face neighbour in the background.
/// Outside the grid counts as background; a single-slice grid is treated
/// as 2D (no z faces).
inline BinaryMask surface_voxels(const BinaryMask &mask) {
  const Dims d = mask.dims;
  const std::size_t w = d.width, h = d.height, dz = d.depth;
  BinaryMask s{d, std::vector<std::uint8_t>(d.voxels(), 0)};
  auto at = [&](std::size_t x, std::size_t y, std::size_t z) { return mask.data[(z * h + y) * w + x]; };
  for (std::size_t z = 0; z < dz; ++z)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        if (!at(x, y, z)) continue;
        bool edge = x == 0 || x + 1 == w || y == 0 || y + 1 == h || !at(x - 1, y, z) || !at(x + 1, y, z) ||
                    !at(x, y - 1, z) || !at(x, y + 1, z);
        if (dz > 1) edge = edge || z == 0 || z + 1 == dz || !at(x, y, z - 1) || !at(x, y, z + 1);
        s.data[(z * h + y) * w + x] = edge ? 1 : 0;
      }
  return s;
}

struct SurfaceDistances {
  double asd_mm = 0.0;
  double hd_mm = 0.0;
  double hd95_mm = 0.0;
};

/// Symmetric surface distances. Throws UndefinedMetricError if either mask is empty.
inline SurfaceDistances surface_metrics(const BinaryMask &pred, const BinaryMask &gt, Spacing3 spacing) {
  detail::require(pred.dims == gt.dims, "surface_metrics: dims mismatch");
  if (pred.empty() || gt.empty()) throw UndefinedMetricError("surface_metrics: empty mask, distances undefined");
  const auto sp = surface_voxels(pred), sg = surface_voxels(gt);
  const auto to_g = distance_transform(sg, spacing), to_p = distance_transform(sp, spacing);

  std::vector<double> pooled;
  double sum = 0.0, hd = 0.0;
  for (std::size_t i = 0; i < sp.data.size(); ++i)
    if (sp.data[i]) pooled.push_back(to_g.data[i]);
  for (std::size_t i = 0; i < sg.data.size(); ++i)
    if (sg.data[i]) pooled.push_back(to_p.data[i]);
  for (double x : pooled) {
    sum += x;
    hd = std::max(hd, x);
  }
  SurfaceDistances out;
  out.asd_mm = sum / static_cast<double>(pooled.size());
  out.hd_mm = hd;
  std::sort(pooled.begin(), pooled.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(pooled.size())));
  out.hd95_mm = pooled[std::max<std::size_t>(rank, 1) - 1];
  return out;
}

// ---- connected components ------------------------------------------------

namespace detail {

struct DisjointSet {
  std::vector<std::size_t> parent;

  std::size_t make() {
    parent.push_back(parent.size());
    return parent.size() - 1;
  }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

} // namespace detail

struct IslandCount {
  std::size_t components = 0;
  std::size_t islands = 0; // components other than the largest
};

/// Face-connected components (4-conn in 2D, 6-conn in 3D), two-pass labeling.
inline IslandCount count_islands(const BinaryMask &mask) {
  const Dims d = mask.dims;
  const std::size_t w = d.width, h = d.height, dz = d.depth;
  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> label(d.voxels(), none);
  detail::DisjointSet ds;
  for (std::size_t z = 0; z < dz; ++z)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = (z * h + y) * w + x;
        if (!mask.data[i]) continue;
        std::size_t l = none;
        for (std::size_t j : {x > 0 ? i - 1 : none, y > 0 ? i - w : none, z > 0 ? i - w * h : none}) {
          if (j == none || label[j] == none) continue;
          if (l == none) l = label[j];
          else ds.unite(l, label[j]);
        }
        label[i] = l == none ? ds.make() : l;
      }
  IslandCount out;
  for (std::size_t r = 0; r < ds.parent.size(); ++r)
    if (ds.find(r) == r) ++out.components;
  out.islands = out.components ? out.components - 1 : 0;
  return out;
}

// ---- rows and aggregation ------------------------------------------------

struct MetricsRow {
  std::string subject;
  unsigned class_id = 0;
  double dsc = 0, iou = 0, precision = 0, recall = 0, miss_rate = 0, fall_out = 0;
  double asd_mm = std::numeric_limits<double>::quiet_NaN(); // NaN when undefined
  double hd_mm = std::numeric_limits<double>::quiet_NaN();
  double hd95_mm = std::numeric_limits<double>::quiet_NaN();

  bool distances_defined() const { return !std::isnan(asd_mm); }
};

inline constexpr std::size_t kMetricCount = 9;
inline constexpr const char *kMetricNames[kMetricCount] = {"dsc",      "iou",      "precision", "recall", "miss_rate",
                                                           "fall_out", "asd_mm", "hd_mm",     "hd95_mm"};

inline std::array<double, kMetricCount> metric_values(const MetricsRow &r) {
  return {r.dsc, r.iou, r.precision, r.recall, r.miss_rate, r.fall_out, r.asd_mm, r.hd_mm, r.hd95_mm};
}

/// All metrics for one class of one subject.
inline MetricsRow evaluate_class(const std::string &subject, const LabelMap &pred, const LabelMap &gt, unsigned cls,
                                 Spacing3 spacing) {
  const auto o = overlap_metrics(confusion_counts(pred, gt, cls));
  MetricsRow row{subject, cls, o.dsc, o.iou, o.precision, o.recall, o.miss_rate, o.fall_out};
  const auto pm = binarize(pred, cls), gm = binarize(gt, cls);
  if (!pm.empty() && !gm.empty()) {
    const auto s = surface_metrics(pm, gm, spacing);
    row.asd_mm = s.asd_mm;
    row.hd_mm = s.hd_mm;
    row.hd95_mm = s.hd95_mm;
  }
  return row;
}

/// Rows for every foreground class 1..C-1.
inline std::vector<MetricsRow> evaluate_subject(const std::string &subject, const LabelMap &pred,
                                                const LabelMap &gt, Spacing3 spacing) {
  detail::require(pred.dims() == gt.dims(), "evaluate_subject: dims mismatch");
  const unsigned classes = std::max(pred.num_classes(), gt.num_classes());
  std::vector<MetricsRow> rows;
  for (unsigned c = 1; c < classes; ++c) rows.push_back(evaluate_class(subject, pred, gt, c, spacing));
  return rows;
}

enum class AggregationOrder {
  classes_then_subjects, // mean over classes per subject, then mean/std over subjects
  pooled,                // mean/std over all rows directly
};

struct MetricSummary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = 0; // number of contributing samples
};

struct MetricsReport {
  std::vector<MetricsRow> rows; // sorted by (subject, class)
  std::array<MetricSummary, kMetricCount> summary;
  AggregationOrder order = AggregationOrder::classes_then_subjects;
};

namespace detail {

inline MetricSummary summarize(const std::vector<double> &xs) {
  MetricSummary s;
  s.n = xs.size();
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.std = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
  return s;
}

} // namespace detail

/// Mean and sample std per metric. Undefined (NaN) distances are skipped.
inline MetricsReport aggregate_report(std::vector<MetricsRow> rows,
                                      AggregationOrder order = AggregationOrder::classes_then_subjects) {
  detail::require(!rows.empty(), "aggregate_report: no rows");
  std::sort(rows.begin(), rows.end(), [](const MetricsRow &a, const MetricsRow &b) {
    return std::tie(a.subject, a.class_id) < std::tie(b.subject, b.class_id);
  });
  MetricsReport rep;
  rep.order = order;
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    std::vector<double> samples;
    if (order == AggregationOrder::pooled) {
      for (const auto &r : rows)
        if (double v = metric_values(r)[m]; !std::isnan(v)) samples.push_back(v);
    } else {
      for (std::size_t i = 0; i < rows.size();) {
        std::size_t j = i;
        double sum = 0.0;
        std::size_t cnt = 0;
        for (; j < rows.size() && rows[j].subject == rows[i].subject; ++j)
          if (double v = metric_values(rows[j])[m]; !std::isnan(v)) {
            sum += v;
            ++cnt;
          }
        if (cnt) samples.push_back(sum / static_cast<double>(cnt));
        i = j;
      }
    }
    rep.summary[m] = detail::summarize(samples);
  }
  rep.rows = std::move(rows);
  return rep;
}

} // namespace usconf
