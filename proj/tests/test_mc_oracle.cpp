#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace usconf;

namespace {

Image2D fixed_12x12() {
  std::mt19937_64 rng(12);
  return testing_util::random_image(12, 12, rng, 0.3f, 0.7f);
}

// Tight reference solve; the default residual tolerance leaves ~1e-3 error here.
ConfidenceMap reference(const Image2D &img) {
  RwParams p;
  p.tol = 1e-12;
  return compute_confidence_map(img, p).map;
}

double max_dev(const McResult &mc, const ConfidenceMap &cg) {
  return testing_util::max_abs_diff(mc.estimate.data(), cg.data());
}

} // namespace

TEST(McOracle, BoundaryRowsExact) {
  const auto r = mc_confidence(fixed_12x12(), {}, {100, 0, 1});
  for (std::size_t c = 0; c < 12; ++c) {
    EXPECT_EQ(r.estimate(0, c), 1.0f);
    EXPECT_EQ(r.std_error(0, c), 0.0);
    EXPECT_EQ(r.estimate(11, c), 0.0f);
  }
}

TEST(McOracle, ThreeRowUniformMiddleIsHalf) {
  RwParams p;
  p.alpha = 0.0;
  const auto r = mc_confidence(Image2D::filled(4, 3, 0.5f), p, {50000, 0, 3});
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(r.estimate(1, c), 0.5, 0.02);
}

TEST(McOracle, AgreesWithCg) {
  const auto img = fixed_12x12();
  const auto cg = reference(img);
  const auto mc = mc_confidence(img, {}, {50000, 0, 7});
  EXPECT_LT(max_dev(mc, cg), 0.02);
  EXPECT_EQ(mc.censored, 0u);
}

TEST(McOracle, ShrinksWithDoubling) {
  const auto img = fixed_12x12();
  const auto cg = reference(img);
  double prev = 1.0;
  for (std::size_t walks : {2000, 4000, 8000, 16000}) {
    const double d = max_dev(mc_confidence(img, {}, {walks, 0, 5}), cg);
    EXPECT_LT(d, prev) << walks;
    prev = d;
  }
}

TEST(McOracle, WithinThreeStandardErrors) {
  const auto img = fixed_12x12();
  const auto cg = reference(img);
  const auto mc = mc_confidence(img, {}, {10000, 0, 99});
  std::size_t ok = 0, total = 0;
  for (std::size_t i = 12; i < 132; ++i, ++total) {
    const double p = cg.data()[i];
    ok += std::abs(double(mc.estimate.data()[i]) - p) <= 3.0 * std::sqrt(p * (1.0 - p) / 10000.0);
  }
  EXPECT_GE(double(ok) / double(total), 0.99);
}

TEST(McOracle, StdErrorIsPlugIn) {
  const auto mc = mc_confidence(fixed_12x12(), {}, {400, 0, 8});
  for (std::size_t i = 12; i < 132; ++i) {
    const double p = mc.estimate.data()[i];
    EXPECT_NEAR(mc.std_error.data[i], std::sqrt(p * (1.0 - p) / 400.0), 1e-7);
  }
}

TEST(McOracle, DeterministicAcrossRunsAndWorkers) {
  const auto img = fixed_12x12();
  const auto a = mc_confidence(img, {}, {500, 0, 42}, 1);
  const auto b = mc_confidence(img, {}, {500, 0, 42}, 1);
  const auto c = mc_confidence(img, {}, {500, 0, 42}, 4);
  EXPECT_TRUE(std::equal(a.estimate.data().begin(), a.estimate.data().end(), b.estimate.data().begin()));
  EXPECT_TRUE(std::equal(a.estimate.data().begin(), a.estimate.data().end(), c.estimate.data().begin()));
  EXPECT_EQ(a.std_error.data, c.std_error.data);
  const auto d = mc_confidence(img, {}, {500, 0, 43}, 1);
  EXPECT_FALSE(std::equal(a.estimate.data().begin(), a.estimate.data().end(), d.estimate.data().begin()));
}

TEST(McOracle, CensoringReported) {
  EXPECT_THROW(mc_confidence(fixed_12x12(), {}, {200, 3, 1}), CensoredWalksError);
}

TEST(McOracle, DefaultStepCap) {
  McConfig cfg;
  EXPECT_EQ(cfg.step_cap(12, 10), 8u * 100u * 12u);
  cfg.max_steps = 5;
  EXPECT_EQ(cfg.step_cap(12, 10), 5u);
}

TEST(McOracle, RejectsZeroWalks) { EXPECT_THROW(mc_confidence(fixed_12x12(), {}, {0, 0, 1}), InputError); }

TEST(CounterRng, UniformInUnitInterval) {
  CounterRng rng(stream_key(1, 2, 3));
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 100000.0, 0.5, 0.01);
  EXPECT_NE(stream_key(1, 2, 3), stream_key(1, 3, 2));
}
