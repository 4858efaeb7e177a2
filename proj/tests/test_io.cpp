#include <gtest/gtest.h>

#include <filesystem>

#include "helpers.hpp"

using namespace usconf;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string &header, std::vector<std::uint8_t> payload) {
  std::vector<std::uint8_t> b(header.begin(), header.end());
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

std::string temp_path(const std::string &name) {
  return (std::filesystem::temp_directory_path() / ("usconf_io_" + name)).string();
}

} // namespace

TEST(Pgm, Decode8Bit) {
  const auto g = decode_pgm(bytes_of("P5 2 2 255\n", {0, 64, 128, 255}));
  EXPECT_EQ(g.width, 2u);
  EXPECT_EQ(g.height, 2u);
  EXPECT_EQ(g.max_value, 255u);
  EXPECT_EQ(g.samples, (std::vector<std::uint32_t>{0, 64, 128, 255}));
}

TEST(Pgm, Decode16BitBigEndian) {
  const auto g = decode_pgm(bytes_of("P5\n1 2\n65535\n", {0x01, 0x00, 0xff, 0xfe}));
  EXPECT_EQ(g.samples, (std::vector<std::uint32_t>{256, 65534}));
}

TEST(Pgm, Comments) {
  const auto g = decode_pgm(bytes_of("P5\n# made by hand\n3 # width\n1\n# max\n7\n", {0, 3, 7}));
  EXPECT_EQ(g.width, 3u);
  EXPECT_EQ(g.max_value, 7u);
  EXPECT_EQ(g.samples, (std::vector<std::uint32_t>{0, 3, 7}));
}

TEST(Pgm, PayloadMayStartWithWhitespaceByte) {
  const auto g = decode_pgm(bytes_of("P5 2 1 255\n", {10, 32}));
  EXPECT_EQ(g.samples, (std::vector<std::uint32_t>{10, 32}));
}

TEST(Pgm, Rejections) {
  EXPECT_THROW(decode_pgm(bytes_of("P6 1 1 255\n", {0, 0, 0})), InputError);
  EXPECT_THROW(decode_pgm(bytes_of("P2 1 1 255\n", {})), InputError);
  EXPECT_THROW(decode_pgm(bytes_of("P5 2 2 255\n", {1, 2, 3})), InputError);
  EXPECT_THROW(decode_pgm(bytes_of("P5 2 2 0\n", {0, 0, 0, 0})), InputError);
  EXPECT_THROW(decode_pgm(bytes_of("P5 1 1 65536\n", {0, 0})), InputError);
  EXPECT_THROW(decode_pgm(bytes_of("P5 1 1 100\n", {200})), InputError);
  EXPECT_THROW(decode_pgm(bytes_of("P5 1", {})), InputError);
  try {
    decode_pgm(bytes_of("P5 2 2 255\n", {1, 2, 3}));
  } catch (const InputError &e) {
    EXPECT_NE(std::string(e.what()).find("expected 4"), std::string::npos);
  }
}

TEST(Pgm, EncodeRoundTrip) {
  std::mt19937_64 rng(1);
  for (std::uint32_t maxval : {1u, 255u, 256u, 4095u, 65535u}) {
    RawGrid g{7, 5, maxval, std::vector<std::uint32_t>(35)};
    for (auto &s : g.samples) s = static_cast<std::uint32_t>(rng() % (maxval + 1));
    const auto back = decode_pgm(encode_pgm(g));
    EXPECT_EQ(back.samples, g.samples);
    EXPECT_EQ(back.max_value, maxval);
  }
}

TEST(Pgm, Quantize) {
  const std::vector<float> v{0.0f, 1.0f, 0.5f, 0.25f};
  EXPECT_EQ(quantize_8bit(4, 1, v).samples, (std::vector<std::uint32_t>{0, 255, 128, 64}));
}

TEST(Grid, HeaderAndPayloadLength) {
  GridFile g;
  g.width = 400;
  g.height = 270;
  g.values.assign(400 * 270, 0.5f);
  EXPECT_EQ(g.payload_bytes(), 432000u);
  const auto b = encode_grid(g);
  EXPECT_EQ(b.size(), GridFile::kHeaderBytes + 432000u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "CMG1");
  EXPECT_EQ(b[4], 0);
  EXPECT_EQ(b[5], 400 & 0xff);
  EXPECT_EQ(b[6], 400 >> 8);
  EXPECT_EQ(b[9], 270 & 0xff);
  EXPECT_EQ(b[13], 1);
  // 0.5f = 0x3f000000, little-endian
  EXPECT_EQ(b[30], 0x00);
  EXPECT_EQ(b[33], 0x3f);
}

TEST(Grid, RandomF32RoundTripBitExact) {
  std::mt19937_64 rng(16);
  GridFile g;
  g.width = g.height = 16;
  g.spacing = {0.3f, 0.7f, 2.0f};
  for (int i = 0; i < 256; ++i) {
    const auto bits = static_cast<std::uint32_t>(rng());
    float f;
    std::memcpy(&f, &bits, 4);
    g.values.push_back(f);
  }
  const auto path = temp_path("f32.cmg");
  write_grid(g, path);
  const auto back = read_grid(path);
  ASSERT_EQ(back.values.size(), 256u);
  EXPECT_EQ(0, std::memcmp(back.values.data(), g.values.data(), 256 * 4));
  EXPECT_EQ(back.spacing, g.spacing);
  EXPECT_EQ(encode_grid(back), encode_grid(g));
  std::filesystem::remove(path);
}

TEST(Grid, LabelRoundTrip) {
  const LabelMap l({3, 2, 2}, {0, 1, 2, 2, 1, 0, 0, 0, 1, 1, 2, 2}, 3, {0.5, 0.5, 3.0});
  const auto back = grid_to_labels(decode_grid(encode_grid(to_grid(l))));
  EXPECT_TRUE(std::equal(back.data().begin(), back.data().end(), l.data().begin()));
  EXPECT_EQ(back.num_classes(), 3u);
  EXPECT_EQ(back.spacing().z, 3.0);
}

TEST(Grid, ProbMapStackedRoundTrip) {
  const ProbMap p({2, 1, 2}, 3, {0.2f, 0.3f, 0.5f, 1, 0, 0, 0, 1, 0, 0.25f, 0.25f, 0.5f}, true);
  const auto g = to_grid(p);
  EXPECT_EQ(g.depth, 6u);
  EXPECT_EQ(g.num_classes, 3u);
  EXPECT_EQ(g.values[0], 0.2f); // channel 0, voxel 0
  EXPECT_EQ(g.values[1], 1.0f); // channel 0, voxel 1
  const auto back = grid_to_probmap(decode_grid(encode_grid(g)));
  EXPECT_TRUE(std::equal(back.data().begin(), back.data().end(), p.data().begin()));
  EXPECT_EQ(back.dims(), p.dims());
}

TEST(Grid, Rejections) {
  GridFile g;
  g.width = g.height = 2;
  g.values.assign(4, 0.0f);
  auto b = encode_grid(g);
  auto bad = b;
  bad[3] = '2';
  EXPECT_THROW(decode_grid(bad), InputError);
  auto shortb = b;
  shortb.pop_back();
  try {
    decode_grid(shortb);
    FAIL();
  } catch (const InputError &e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("expected 16"), std::string::npos) << m;
    EXPECT_NE(m.find("got 15"), std::string::npos) << m;
  }
  auto huge = b;
  for (int i = 5; i < 17; ++i) huge[static_cast<std::size_t>(i)] = 0xff;
  EXPECT_THROW(decode_grid(huge), InputError);
  EXPECT_THROW(decode_grid(std::vector<std::uint8_t>(10, 0)), InputError);
  g.values.pop_back();
  EXPECT_THROW(encode_grid(g), InputError);
  EXPECT_THROW(read_grid(temp_path("does_not_exist.cmg")), InputError);
}

TEST(Grid, ImageAndConfidenceConversions) {
  std::mt19937_64 rng(3);
  const auto img = testing_util::random_image(6, 5, rng);
  const auto back = grid_to_image(decode_grid(encode_grid(to_grid(img))));
  EXPECT_TRUE(std::equal(back.data().begin(), back.data().end(), img.data().begin()));
  const auto cm = compute_confidence_map(img).map;
  const auto g = to_grid(cm);
  EXPECT_TRUE(std::equal(g.values.begin(), g.values.end(), cm.data().begin()));
}
