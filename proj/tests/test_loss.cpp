#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace usconf;

namespace {

const ProbMap kY({2, 1, 1}, 2, {1, 0, 0, 1}, true);
const ProbMap kP({2, 1, 1}, 2, {0.9f, 0.1f, 0.5f, 0.5f}, true);
const std::vector<float> kCm{0.5f, 0.8f};

// Direct evaluation with the two voxels written out.
// Stored values are f32, so the oracle uses the same f32 constants.
double worked_ce_conf() { return -(0.5 * std::log(double(0.9f)) + double(0.8f) * std::log(0.5)) / 2.0; }

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

struct Instance {
  std::size_t c, m;
  std::vector<double> logits, y, cm;
};

Instance random_instance(std::mt19937_64 &rng) {
  Instance in;
  in.c = 2 + rng() % 3;
  in.m = 1 + rng() % 16;
  std::normal_distribution<double> g(0.0, 1.5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  in.logits.resize(in.m * in.c);
  in.y.assign(in.m * in.c, 0.0);
  in.cm.resize(in.m);
  for (auto &z : in.logits) z = g(rng);
  for (std::size_t i = 0; i < in.m; ++i) {
    in.y[i * in.c + rng() % in.c] = 1.0;
    in.cm[i] = u(rng);
  }
  return in;
}

double loss_at(LossKind k, const Instance &in, const std::vector<double> &z) {
  return loss_value(k, in.c, in.y, softmax(in.c, z), in.cm).total;
}

} // namespace

TEST(ConfidenceMask, Definition) {
  const auto m = confidence_mask(kY, kCm);
  EXPECT_EQ(m(0, 0), 0.5f);
  EXPECT_EQ(m(0, 1), 0.0f);
  EXPECT_EQ(m(1, 0), 0.0f);
  EXPECT_EQ(m(1, 1), 0.8f);
  const std::vector<float> ones(2, 1.0f);
  const auto id = confidence_mask(kY, ones);
  EXPECT_TRUE(std::equal(id.data().begin(), id.data().end(), kY.data().begin()));
}

TEST(ConfidenceMask, RejectsMismatch) {
  const std::vector<float> three(3, 1.0f);
  EXPECT_THROW(confidence_mask(kY, three), InputError);
  EXPECT_THROW(confidence_mask(kP, kCm), InputError);
}

TEST(LossValue, WorkedExample) {
  const auto conf = loss_value(LossKind::ce_conf, kY, kP, kCm);
  EXPECT_NEAR(conf.total, 0.303599, 1e-6);
  EXPECT_NEAR(conf.total, worked_ce_conf(), 1e-12);
  const auto ce = loss_value(LossKind::ce, kY, kP);
  EXPECT_NEAR(ce.total, 0.399254, 1e-6);
  EXPECT_LE(conf.total, ce.total);
  const auto dice = loss_value(LossKind::dice, kY, kP);
  EXPECT_NEAR(dice.total, 0.3125, 1e-5);
  EXPECT_FALSE(dice.ce.has_value());
  const auto both = loss_value(LossKind::dice_ce_conf, kY, kP, kCm);
  EXPECT_NEAR(both.total, *both.ce + *both.dice, 1e-15);
  EXPECT_NEAR(*both.ce, conf.total, 1e-15);
}

TEST(LossValue, PerfectPredictionIsZero) {
  EXPECT_EQ(loss_value(LossKind::ce_conf, kY, kY, kCm).total, 0.0);
  EXPECT_NEAR(loss_value(LossKind::dice, kY, kY).total, 0.0, 1e-12);
}

TEST(LossValue, ConfRequiresMap) {
  EXPECT_THROW(loss_value(LossKind::ce_conf, kY, kP), InputError);
  EXPECT_THROW(loss_value(LossKind::ce, kP, kP), InputError);
}

TEST(LossValue, LogClampKeepsFinite) {
  const ProbMap p({2, 1, 1}, 2, {0, 1, 1, 0}, true);
  const double v = loss_value(LossKind::ce, kY, p).total;
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, -std::log(1e-12), 1e-9);
}

TEST(LossValue, UnitConfidenceEqualsCe) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 100; ++t) {
    auto in = random_instance(rng);
    std::fill(in.cm.begin(), in.cm.end(), 1.0);
    const auto p = softmax(in.c, in.logits);
    EXPECT_NEAR(loss_value(LossKind::ce_conf, in.c, in.y, p, in.cm).total,
                loss_value(LossKind::ce, in.c, in.y, p).total, 1e-12);
  }
}

TEST(LossValue, MonotoneInConfidence) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    const auto in = random_instance(rng);
    auto hi = in.cm;
    for (auto &v : hi) v = std::min(1.0, v + u(rng) * (1.0 - v));
    const auto p = softmax(in.c, in.logits);
    const double lo_v = loss_value(LossKind::ce_conf, in.c, in.y, p, in.cm).total;
    EXPECT_LE(lo_v, loss_value(LossKind::ce_conf, in.c, in.y, p, hi).total);
    EXPECT_LE(lo_v, loss_value(LossKind::ce, in.c, in.y, p).total);
  }
}

TEST(LossValue, OptimumStaysOneHot) {
  // For fixed CM > 0 the per-voxel ce_conf over normalized predictions is
  // minimized by putting all mass on the true class.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  const std::vector<double> y{0, 1, 0};
  const std::vector<double> cm{u(rng)};
  const std::vector<double> best{1e-9, 1 - 2e-9, 1e-9};
  const double at_best = loss_value(LossKind::ce_conf, 3, y, best, cm).total;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> p{u(rng), u(rng), u(rng)};
    const double s = p[0] + p[1] + p[2];
    for (auto &v : p) v /= s;
    EXPECT_LT(at_best, loss_value(LossKind::ce_conf, 3, y, p, cm).total);
  }
}

TEST(LossGradient, SingleVoxelExample) {
  const std::vector<double> z{0, 0}, y{1, 0}, cm{0.6};
  const auto g = loss_gradient(LossKind::ce_conf, 2, z, y, cm);
  EXPECT_NEAR(g[0], -0.3, 1e-15);
  EXPECT_NEAR(g[1], 0.3, 1e-15);
}

TEST(LossGradient, ZeroConfidenceVoxel) {
  const std::vector<double> z{0.3, -1, 2, 0.5}, y{1, 0, 0, 1}, cm{0.0, 0.7};
  const auto g = loss_gradient(LossKind::ce_conf, 2, z, y, cm);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_NE(g[2], 0.0);
}

TEST(LossGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(50);
  const double h = 1e-4;
  for (auto kind : {LossKind::ce, LossKind::ce_conf, LossKind::dice, LossKind::dice_ce, LossKind::dice_ce_conf})
    for (int t = 0; t < 50; ++t) {
      const auto in = random_instance(rng);
      const auto g = loss_gradient(kind, in.c, in.logits, in.y, in.cm);
      for (std::size_t j = 0; j < in.logits.size(); ++j) {
        auto zp = in.logits, zm = in.logits;
        zp[j] += h;
        zm[j] -= h;
        const double fd = (loss_at(kind, in, zp) - loss_at(kind, in, zm)) / (2 * h);
        if (std::abs(fd) < 1e-9 && std::abs(g[j]) < 1e-9) continue;
        ASSERT_LT(rel_err(g[j], fd), 1e-5) << to_string(kind) << " instance " << t << " entry " << j;
      }
    }
}

TEST(LossGradient, FourByFourByThree) {
  std::mt19937_64 rng(443);
  Instance in;
  in.c = 3;
  in.m = 16;
  std::normal_distribution<double> g;
  in.logits.resize(48);
  for (auto &v : in.logits) v = g(rng);
  in.y.assign(48, 0.0);
  in.cm.resize(16);
  for (std::size_t i = 0; i < 16; ++i) {
    in.y[i * 3 + rng() % 3] = 1;
    in.cm[i] = (i + 1) / 17.0;
  }
  const auto grad = loss_gradient(LossKind::dice_ce_conf, 3, in.logits, in.y, in.cm);
  for (std::size_t j = 0; j < 48; ++j) {
    auto zp = in.logits, zm = in.logits;
    zp[j] += 1e-4;
    zm[j] -= 1e-4;
    const double fd = (loss_at(LossKind::dice_ce_conf, in, zp) - loss_at(LossKind::dice_ce_conf, in, zm)) / 2e-4;
    EXPECT_LT(rel_err(grad[j], fd), 1e-5);
  }
}

TEST(Softmax, StableForLargeLogits) {
  const std::vector<double> z{1000, 1000, -1000};
  const auto p = softmax(3, z);
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_EQ(p[2], 0.0);
}

TEST(Entropy, Examples) {
  const std::vector<ProbMap> same(4, kY);
  for (double v : entropy_map(same).data) EXPECT_EQ(v, 0.0);

  const std::vector<ProbMap> uniform{ProbMap({1, 1, 1}, 2, {0.5f, 0.5f}, true)};
  EXPECT_NEAR(entropy_map(uniform).data[0], 0.693147, 1e-6);

  const std::vector<ProbMap> split{ProbMap({1, 1, 1}, 2, {1, 0}, true), ProbMap({1, 1, 1}, 2, {0, 1}, true)};
  EXPECT_NEAR(entropy_map(split).data[0], std::log(2.0), 1e-15);
}

TEST(Entropy, BoundedByLogC) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> u(0.01f, 1.0f);
  for (std::size_t c : {2u, 3u, 5u}) {
    std::vector<ProbMap> preds;
    for (int k = 0; k < 5; ++k) {
      std::vector<float> v(20 * c);
      for (std::size_t i = 0; i < 20; ++i) {
        float s = 0;
        for (std::size_t j = 0; j < c; ++j) s += v[i * c + j] = u(rng);
        for (std::size_t j = 0; j < c; ++j) v[i * c + j] /= s;
      }
      preds.emplace_back(Dims{4, 5, 1}, c, v, true);
    }
    for (double h : entropy_map(preds).data) {
      EXPECT_GE(h, 0.0);
      EXPECT_LE(h, std::log(double(c)) + 1e-12);
    }
  }
}

TEST(Entropy, RejectsMismatch) {
  const std::vector<ProbMap> bad{kY, ProbMap({1, 1, 1}, 2, {1, 0}, true)};
  EXPECT_THROW(entropy_map(bad), InputError);
  EXPECT_THROW(entropy_map(std::span<const ProbMap>{}), InputError);
}

TEST(LossKind, ParseRoundTrip) {
  for (auto k : {LossKind::ce, LossKind::ce_conf, LossKind::dice, LossKind::dice_ce, LossKind::dice_ce_conf})
    EXPECT_EQ(parse_loss_kind(to_string(k)), k);
  EXPECT_THROW(parse_loss_kind("focal"), InputError);
}
