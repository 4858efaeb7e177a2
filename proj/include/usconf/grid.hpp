#pragma once
// Core grid types shared by every module.
//
// Layout is row-major with x fastest everywhere: index = (z*H + y)*W + x.
// In 2D images the row index y is the depth / beam direction, row 0 being
// the transducer side.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "usconf/error.hpp"

namespace usconf {

struct Spacing2 {
  double x = 1.0;
  double y = 1.0;
  bool operator==(const Spacing2 &) const = default;
};

struct Spacing3 {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;
  bool operator==(const Spacing3 &) const = default;
};

struct Dims {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t depth = 1;

  std::size_t voxels() const noexcept { return width * height * depth; }
  bool operator==(const Dims &) const = default;
};

namespace detail {

inline void require(bool ok, const std::string &msg) {
  if (!ok) throw InputError(msg);
}

inline void check_unit_range(std::span<const float> data, const char *what) {
  for (float v : data)
    require(v >= 0.0f && v <= 1.0f, std::string(what) + ": value outside [0,1]");
}

} // namespace detail

/// A single B-mode slice with intensities in [0,1].
class Image2D {
public:
  Image2D() = default;
  Image2D(std::size_t width, std::size_t height, std::vector<float> data, Spacing2 spacing = {})
      : width_(width), height_(height), data_(std::move(data)), spacing_(spacing) {
    detail::require(width_ > 0 && height_ > 0, "Image2D: empty dimensions");
    detail::require(data_.size() == width_ * height_, "Image2D: data length != W*H");
    detail::require(spacing_.x > 0 && spacing_.y > 0, "Image2D: spacing must be positive");
    detail::check_unit_range(data_, "Image2D");
  }

  static Image2D filled(std::size_t width, std::size_t height, float value, Spacing2 spacing = {}) {
    return {width, height, std::vector<float>(width * height, value), spacing};
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  Spacing2 spacing() const noexcept { return spacing_; }
  std::span<const float> data() const noexcept { return data_; }

  float operator()(std::size_t row, std::size_t col) const { return data_[row * width_ + col]; }

  /// Normalized depth of a row, r/(H-1); the last row sits at exactly 1.
  double depth(std::size_t row) const noexcept {
    return height_ > 1 ? static_cast<double>(row) / static_cast<double>(height_ - 1) : 0.0;
  }

private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<float> data_;
  Spacing2 spacing_;
};

/// A stack of slices, x fastest, then y, then z.
class Volume3D {
public:
  Volume3D() = default;
  Volume3D(Dims dims, std::vector<float> data, Spacing3 spacing = {})
      : dims_(dims), data_(std::move(data)), spacing_(spacing) {
    detail::require(dims_.voxels() > 0, "Volume3D: empty dimensions");
    detail::require(data_.size() == dims_.voxels(), "Volume3D: data length != W*H*D");
    detail::require(spacing_.x > 0 && spacing_.y > 0 && spacing_.z > 0,
                    "Volume3D: spacing must be positive");
    detail::check_unit_range(data_, "Volume3D");
  }

  static Volume3D from_slices(std::span<const Image2D> slices, double spacing_z = 1.0) {
    detail::require(!slices.empty(), "Volume3D: no slices");
    const auto &first = slices.front();
    Dims dims{first.width(), first.height(), slices.size()};
    std::vector<float> data;
    data.reserve(dims.voxels());
    for (const auto &s : slices) {
      detail::require(s.width() == dims.width && s.height() == dims.height,
                      "Volume3D: slice dimensions differ");
      data.insert(data.end(), s.data().begin(), s.data().end());
    }
    return {dims, std::move(data), {first.spacing().x, first.spacing().y, spacing_z}};
  }

  Dims dims() const noexcept { return dims_; }
  Spacing3 spacing() const noexcept { return spacing_; }
  std::span<const float> data() const noexcept { return data_; }

  Image2D slice(std::size_t z) const {
    detail::require(z < dims_.depth, "Volume3D: slice index out of range");
    const std::size_t n = dims_.width * dims_.height;
    auto first = data_.begin() + static_cast<std::ptrdiff_t>(z * n);
    return {dims_.width, dims_.height, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(n)),
            {spacing_.x, spacing_.y}};
  }

private:
  Dims dims_;
  std::vector<float> data_;
  Spacing3 spacing_;
};

/// Integer class labels. D == 1 for 2D maps.
class LabelMap {
public:
  LabelMap() = default;
  LabelMap(Dims dims, std::vector<std::uint8_t> data, unsigned num_classes, Spacing3 spacing = {})
      : dims_(dims), data_(std::move(data)), num_classes_(num_classes), spacing_(spacing) {
    detail::require(dims_.voxels() > 0, "LabelMap: empty dimensions");
    detail::require(data_.size() == dims_.voxels(), "LabelMap: data length != W*H*D");
    detail::require(num_classes_ >= 2 && num_classes_ <= 256, "LabelMap: num_classes must be in [2,256]");
    for (auto id : data_)
      detail::require(id < num_classes_, "LabelMap: class id >= num_classes");
  }

  Dims dims() const noexcept { return dims_; }
  unsigned num_classes() const noexcept { return num_classes_; }
  Spacing3 spacing() const noexcept { return spacing_; }
  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::uint8_t operator[](std::size_t i) const { return data_[i]; }

private:
  Dims dims_;
  std::vector<std::uint8_t> data_;
  unsigned num_classes_ = 2;
  Spacing3 spacing_;
};

/// Per-voxel class probabilities, stored voxel-major: data[v*C + c].
class ProbMap {
public:
  static constexpr double kNormTolerance = 1e-5;

  ProbMap() = default;
  ProbMap(Dims dims, std::size_t channels, std::vector<float> data, bool normalized = false)
      : dims_(dims), channels_(channels), data_(std::move(data)), normalized_(normalized) {
    detail::require(dims_.voxels() > 0 && channels_ >= 1, "ProbMap: empty dimensions");
    detail::require(data_.size() == dims_.voxels() * channels_, "ProbMap: data length != voxels*C");
    detail::check_unit_range(data_, "ProbMap");
    if (normalized_) {
      for (std::size_t v = 0; v < dims_.voxels(); ++v) {
        double sum = 0.0;
        for (std::size_t c = 0; c < channels_; ++c) sum += data_[v * channels_ + c];
        detail::require(std::abs(sum - 1.0) <= kNormTolerance, "ProbMap: channels do not sum to 1");
      }
    }
  }

  Dims dims() const noexcept { return dims_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t voxels() const noexcept { return dims_.voxels(); }
  bool normalized() const noexcept { return normalized_; }
  std::span<const float> data() const noexcept { return data_; }
  float operator()(std::size_t voxel, std::size_t channel) const { return data_[voxel * channels_ + channel]; }

private:
  Dims dims_;
  std::size_t channels_ = 0;
  std::vector<float> data_;
  bool normalized_ = false;
};

/// Divides raw samples by max_value; samples equal to max_value map to exactly 1.
inline Image2D normalize_intensities(std::size_t width, std::size_t height, std::span<const std::uint32_t> raw,
                                     std::uint32_t max_value, Spacing2 spacing = {}) {
  detail::require(max_value > 0, "normalize_intensities: max_value must be > 0");
  detail::require(raw.size() == width * height, "normalize_intensities: sample count != W*H");
  std::vector<float> out(raw.size());
  const double denom = static_cast<double>(max_value);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    detail::require(raw[i] <= max_value, "normalize_intensities: sample exceeds max_value");
    out[i] = raw[i] == max_value ? 1.0f : static_cast<float>(static_cast<double>(raw[i]) / denom);
  }
  return {width, height, std::move(out), spacing};
}

inline ProbMap one_hot_encode(const LabelMap &labels) {
  const std::size_t c = labels.num_classes();
  std::vector<float> data(labels.dims().voxels() * c, 0.0f);
  for (std::size_t v = 0; v < labels.dims().voxels(); ++v) data[v * c + labels[v]] = 1.0f;
  return {labels.dims(), c, std::move(data), true};
}

/// Per-voxel argmax; ties resolve to the lowest class id.
inline LabelMap argmax_labels(const ProbMap &probs) {
  const std::size_t c = probs.channels();
  std::vector<std::uint8_t> out(probs.voxels());
  for (std::size_t v = 0; v < probs.voxels(); ++v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (probs(v, k) > probs(v, best)) best = k;
    out[v] = static_cast<std::uint8_t>(best);
  }
  return {probs.dims(), std::move(out), static_cast<unsigned>(std::max<std::size_t>(c, 2))};
}

} // namespace usconf
