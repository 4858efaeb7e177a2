#pragma once
// File formats: binary PGM (P5) input and the "CMG1" grid container.
//
// CMG1 layout, all integers and floats little-endian:
//   0  magic "CMG1"
//   4  kind         u8   0 = f32 grid, 1 = u8 labels
//   5  width        u32
//   9  height       u32
//  13  depth        u32
//  17  num_classes  u8   labels: class count; f32: 0 for a plain grid, or C
//                        when C probability channels are stacked along z
//  18  spacing      3 x f32 (mm)
//  30  payload      row-major, x fastest
//
// Stacked probability maps store channel c of slice z at slice c*D + z.

#include <array>
#include <bit>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "usconf/confidence.hpp"
#include "usconf/error.hpp"
#include "usconf/grid.hpp"

namespace usconf {

// ---- PGM --------------------------------------------------------------------

struct RawGrid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::uint32_t max_value = 0;
  std::vector<std::uint32_t> samples;
};

inline RawGrid decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto fail = [](const std::string &m) -> void { throw InputError("pgm: " + m); };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail("not a binary PGM (expected magic P5)");
  pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char *what) {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) fail(std::string("missing ") + what);
    std::uint64_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + static_cast<std::uint64_t>(bytes[pos++] - '0');
      if (v > std::numeric_limits<std::uint32_t>::max()) fail(std::string(what) + " too large");
    }
    return static_cast<std::uint32_t>(v);
  };
  if (pos >= bytes.size() || !(std::isspace(bytes[pos]) || bytes[pos] == '#')) fail("malformed header");
  RawGrid g;
  g.width = read_uint("width");
  g.height = read_uint("height");
  g.max_value = read_uint("maxval");
  if (g.width == 0 || g.height == 0) fail("zero dimension");
  if (g.max_value == 0 || g.max_value > 65535) fail("maxval must be in [1, 65535]");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail("missing whitespace after maxval");
  ++pos;
  const std::size_t bps = g.max_value > 255 ? 2 : 1;
  const std::size_t n = g.width * g.height;
  if (bytes.size() - pos < n * bps)
    fail("truncated payload: expected " + std::to_string(n * bps) + " bytes, got " + std::to_string(bytes.size() - pos));
  g.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    g.samples[i] = bps == 1 ? bytes[pos + i] : (std::uint32_t{bytes[pos + 2 * i]} << 8) | bytes[pos + 2 * i + 1];
    if (g.samples[i] > g.max_value) fail("sample exceeds maxval");
  }
  return g;
}

inline std::vector<std::uint8_t> encode_pgm(const RawGrid &g) {
  if (g.max_value == 0 || g.max_value > 65535) throw InputError("pgm: maxval must be in [1, 65535]");
  if (g.samples.size() != g.width * g.height) throw InputError("pgm: sample count != W*H");
  const std::string header = "P5\n" + std::to_string(g.width) + " " + std::to_string(g.height) + "\n" +
                             std::to_string(g.max_value) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (auto s : g.samples) {
    if (s > g.max_value) throw InputError("pgm: sample exceeds maxval");
    if (g.max_value > 255) out.push_back(static_cast<std::uint8_t>(s >> 8));
    out.push_back(static_cast<std::uint8_t>(s & 0xff));
  }
  return out;
}

/// Linear quantization of [0,1] values to 8-bit: round(v * 255).
inline RawGrid quantize_8bit(std::size_t width, std::size_t height, std::span<const float> values) {
  RawGrid g{width, height, 255, std::vector<std::uint32_t>(values.size())};
  for (std::size_t i = 0; i < values.size(); ++i)
    g.samples[i] = static_cast<std::uint32_t>(std::lround(std::clamp(values[i], 0.0f, 1.0f) * 255.0f));
  return g;
}

inline Image2D pgm_to_image(const RawGrid &g, Spacing2 spacing = {}) {
  return normalize_intensities(g.width, g.height, g.samples, g.max_value, spacing);
}

// ---- CMG1 -----------------------------------------------------------------

enum class GridKind : std::uint8_t { f32 = 0, labels = 1 };

struct GridFile {
  static constexpr std::array<char, 4> kMagic{'C', 'M', 'G', '1'};
  static constexpr std::size_t kHeaderBytes = 30;

  GridKind kind = GridKind::f32;
  std::uint32_t width = 0, height = 0, depth = 1;
  std::uint8_t num_classes = 0;
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  std::vector<float> values;         // kind == f32
  std::vector<std::uint8_t> labels;  // kind == labels

  std::size_t voxels() const noexcept {
    return static_cast<std::size_t>(width) * height * depth;
  }
  std::size_t payload_bytes() const noexcept { return voxels() * (kind == GridKind::f32 ? 4 : 1); }
  Dims dims() const noexcept { return {width, height, depth}; }
  Spacing3 spacing3() const noexcept { return {spacing[0], spacing[1], spacing[2]}; }

  bool operator==(const GridFile &) const = default;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t> &out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint32_t get_u32(const std::uint8_t *p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}
inline void put_f32(std::vector<std::uint8_t> &out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline float get_f32(const std::uint8_t *p) { return std::bit_cast<float>(get_u32(p)); }

inline std::uint32_t to_u32(std::size_t v, const char *what) {
  require(v <= std::numeric_limits<std::uint32_t>::max(), std::string("grid: ") + what + " exceeds u32");
  return static_cast<std::uint32_t>(v);
}

} // namespace detail

inline std::vector<std::uint8_t> encode_grid(const GridFile &g) {
  detail::require(g.width > 0 && g.height > 0 && g.depth > 0, "grid: zero dimension");
  if (g.kind == GridKind::f32)
    detail::require(g.values.size() == g.voxels() && g.labels.empty(), "grid: f32 payload length != W*H*D");
  else
    detail::require(g.labels.size() == g.voxels() && g.values.empty() && g.num_classes >= 2,
                    "grid: label payload length != W*H*D or num_classes < 2");
  std::vector<std::uint8_t> out(GridFile::kMagic.begin(), GridFile::kMagic.end());
  out.reserve(GridFile::kHeaderBytes + g.payload_bytes());
  out.push_back(static_cast<std::uint8_t>(g.kind));
  detail::put_u32(out, g.width);
  detail::put_u32(out, g.height);
  detail::put_u32(out, g.depth);
  out.push_back(g.num_classes);
  for (float s : g.spacing) detail::put_f32(out, s);
  if (g.kind == GridKind::f32)
    for (float v : g.values) detail::put_f32(out, v);
  else
    out.insert(out.end(), g.labels.begin(), g.labels.end());
  return out;
}

inline GridFile decode_grid(std::span<const std::uint8_t> bytes) {
  detail::require(bytes.size() >= GridFile::kHeaderBytes,
                  "grid: file too short for header (" + std::to_string(bytes.size()) + " bytes)");
  detail::require(std::memcmp(bytes.data(), GridFile::kMagic.data(), 4) == 0, "grid: bad magic (expected CMG1)");
  GridFile g;
  detail::require(bytes[4] <= 1, "grid: unknown kind " + std::to_string(bytes[4]));
  g.kind = static_cast<GridKind>(bytes[4]);
  g.width = detail::get_u32(&bytes[5]);
  g.height = detail::get_u32(&bytes[9]);
  g.depth = detail::get_u32(&bytes[13]);
  g.num_classes = bytes[17];
  for (int i = 0; i < 3; ++i) g.spacing[static_cast<std::size_t>(i)] = detail::get_f32(&bytes[18 + 4 * i]);
  detail::require(g.width > 0 && g.height > 0 && g.depth > 0, "grid: zero dimension");
  const unsigned __int128 payload =
      static_cast<unsigned __int128>(g.width) * g.height * g.depth * (g.kind == GridKind::f32 ? 4 : 1);
  detail::require(payload <= std::numeric_limits<std::size_t>::max() / 2, "grid: dimensions overflow");
  const std::size_t expected = static_cast<std::size_t>(payload);
  const std::size_t actual = bytes.size() - GridFile::kHeaderBytes;
  detail::require(actual == expected, "grid: payload length mismatch: expected " + std::to_string(expected) +
                                          " bytes, got " + std::to_string(actual));
  const std::uint8_t *p = bytes.data() + GridFile::kHeaderBytes;
  if (g.kind == GridKind::f32) {
    g.values.resize(g.voxels());
    for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = detail::get_f32(p + 4 * i);
  } else {
    detail::require(g.num_classes >= 2, "grid: label grid needs num_classes >= 2");
    g.labels.assign(p, p + expected);
  }
  return g;
}

inline std::vector<std::uint8_t> read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string &path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("short write to '" + path + "'");
}

inline GridFile read_grid(const std::string &path) {
  try {
    return decode_grid(read_file(path));
  } catch (const InputError &e) {
    throw InputError(path + ": " + e.what());
  }
}

inline void write_grid(const GridFile &g, const std::string &path) { write_file(path, encode_grid(g)); }

// ---- conversions ------------------------------------------------------------

inline GridFile to_grid(const Volume3D &v) {
  const auto d = v.dims();
  const auto s = v.spacing();
  GridFile g;
  g.width = detail::to_u32(d.width, "width");
  g.height = detail::to_u32(d.height, "height");
  g.depth = detail::to_u32(d.depth, "depth");
  g.spacing = {static_cast<float>(s.x), static_cast<float>(s.y), static_cast<float>(s.z)};
  g.values.assign(v.data().begin(), v.data().end());
  return g;
}

inline GridFile to_grid(const Image2D &img) {
  return to_grid(Volume3D({img.width(), img.height(), 1}, {img.data().begin(), img.data().end()},
                          {img.spacing().x, img.spacing().y, 1.0}));
}

inline GridFile to_grid(const ConfidenceMap &cm, Spacing2 spacing = {}) { return to_grid(cm.as_image(spacing)); }

/// Unrestricted f32 field (values need not be in [0,1]).
inline GridFile to_grid(Dims d, std::span<const double> values, Spacing3 s = {}) {
  detail::require(values.size() == d.voxels(), "grid: value count != W*H*D");
  GridFile g;
  g.width = detail::to_u32(d.width, "width");
  g.height = detail::to_u32(d.height, "height");
  g.depth = detail::to_u32(d.depth, "depth");
  g.spacing = {static_cast<float>(s.x), static_cast<float>(s.y), static_cast<float>(s.z)};
  g.values.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) g.values[i] = static_cast<float>(values[i]);
  return g;
}

inline GridFile to_grid(const LabelMap &m) {
  const auto d = m.dims();
  const auto s = m.spacing();
  GridFile g;
  g.kind = GridKind::labels;
  g.width = detail::to_u32(d.width, "width");
  g.height = detail::to_u32(d.height, "height");
  g.depth = detail::to_u32(d.depth, "depth");
  detail::require(m.num_classes() <= 255, "grid: more than 255 classes");
  g.num_classes = static_cast<std::uint8_t>(m.num_classes());
  g.spacing = {static_cast<float>(s.x), static_cast<float>(s.y), static_cast<float>(s.z)};
  g.labels.assign(m.data().begin(), m.data().end());
  return g;
}

/// Channels stacked along z: slice c*D + z holds channel c of slice z.
inline GridFile to_grid(const ProbMap &p, Spacing3 s = {}) {
  const auto d = p.dims();
  const std::size_t ch = p.channels();
  detail::require(ch <= 255, "grid: more than 255 channels");
  GridFile g;
  g.width = detail::to_u32(d.width, "width");
  g.height = detail::to_u32(d.height, "height");
  g.depth = detail::to_u32(d.depth * ch, "depth");
  g.num_classes = static_cast<std::uint8_t>(ch);
  g.spacing = {static_cast<float>(s.x), static_cast<float>(s.y), static_cast<float>(s.z)};
  g.values.resize(p.voxels() * ch);
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t v = 0; v < p.voxels(); ++v) g.values[c * p.voxels() + v] = p(v, c);
  return g;
}

inline Volume3D grid_to_volume(const GridFile &g) {
  detail::require(g.kind == GridKind::f32, "grid: expected an f32 grid");
  return {g.dims(), g.values, g.spacing3()};
}

inline Image2D grid_to_image(const GridFile &g) {
  detail::require(g.depth == 1, "grid: expected a single-slice grid");
  const auto v = grid_to_volume(g);
  return v.slice(0);
}

inline LabelMap grid_to_labels(const GridFile &g) {
  detail::require(g.kind == GridKind::labels, "grid: expected a label grid");
  return {g.dims(), g.labels, g.num_classes, g.spacing3()};
}

inline ProbMap grid_to_probmap(const GridFile &g, bool normalized = true) {
  detail::require(g.kind == GridKind::f32 && g.num_classes >= 1, "grid: expected a stacked probability grid");
  detail::require(g.depth % g.num_classes == 0, "grid: depth not divisible by channel count");
  const std::size_t ch = g.num_classes;
  const Dims d{g.width, g.height, g.depth / ch};
  const std::size_t n = d.voxels();
  std::vector<float> data(n * ch);
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t v = 0; v < n; ++v) data[v * ch + c] = g.values[c * n + v];
  return {d, ch, std::move(data), normalized};
}

/// Loads a PGM (by magic) or a single-slice / volume f32 CMG1 file.
inline Volume3D read_image_volume(const std::string &path, Spacing3 pgm_spacing = {}) {
  const auto bytes = read_file(path);
  try {
    if (bytes.size() >= 2 && bytes[0] == 'P') {
      const auto img = pgm_to_image(decode_pgm(bytes), {pgm_spacing.x, pgm_spacing.y});
      return Volume3D({img.width(), img.height(), 1}, {img.data().begin(), img.data().end()}, pgm_spacing);
    }
    return grid_to_volume(decode_grid(bytes));
  } catch (const InputError &e) {
    throw InputError(path + ": " + e.what());
  }
}

} // namespace usconf
