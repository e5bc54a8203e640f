#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "m3/objective.hpp"

namespace {

using namespace m3;

// Reference values evaluated term by term outside this code base.
constexpr double kTwoLn2 = 1.3862943611198906;
constexpr double kMixedExample = 0.8682186071602136;  // ln(1+e^-1) + ln(1+e^-2+e^-0.5)

TEST(Cce, EmptyBatchIsZero) {
  EXPECT_EQ(cce_loss({}).loss, 0.0);
  ChoiceBatch masked{{1.0, -2.0}, {1, 0}, {false, false}};
  auto r = cce_loss(masked);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.d_logits, (std::vector<double>{0.0, 0.0}));
}

TEST(Cce, OnePositiveOneNegativeAtZero) {
  EXPECT_NEAR(cce_loss({{0.0, 0.0}, {1, 0}, {}}).loss, kTwoLn2, 1e-12);
}

TEST(Cce, MixedExample) {
  EXPECT_NEAR(cce_loss({{2.0, -1.0, 0.5}, {1, 0, 1}, {}}).loss, kMixedExample, 1e-12);
}

TEST(Cce, StableForLargeLogits) {
  auto r = cce_loss({{800.0, -800.0}, {1, 0}, {}});
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 0.0, 1e-300);
  auto bad = cce_loss({{-800.0, 800.0}, {1, 0}, {}});
  EXPECT_NEAR(bad.loss, 1600.0, 1e-9);
  EXPECT_NEAR(bad.d_logits[0], -1.0, 1e-12);
  EXPECT_NEAR(bad.d_logits[1], 1.0, 1e-12);
}

TEST(Cce, ShapeMismatch) {
  EXPECT_THROW(cce_loss({{0.0, 1.0}, {1}, {}}), ShapeError);
  EXPECT_THROW(cce_loss({{0.0}, {1}, {true, false}}), ShapeError);
}

ChoiceBatch random_batch(std::mt19937_64& rng, bool with_mask) {
  std::uniform_int_distribution<int> len(1, 12), bit(0, 1);
  std::normal_distribution<double> nd(0.0, 2.0);
  ChoiceBatch b;
  const int n = len(rng);
  for (int j = 0; j < n; ++j) {
    b.logits.push_back(nd(rng));
    b.labels.push_back(bit(rng));
    if (with_mask) b.mask.push_back(bit(rng) || j == 0);
  }
  return b;
}

TEST(Cce, GradientSignsOnRandomBatches) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    auto b = random_batch(rng, trial % 2);
    auto r = cce_loss(b);
    EXPECT_GT(r.loss, 0.0);
    for (std::size_t j = 0; j < b.logits.size(); ++j) {
      if (!b.active(j)) {
        EXPECT_EQ(r.d_logits[j], 0.0);
      } else if (b.labels[j] == 1) {
        EXPECT_LT(r.d_logits[j], 0.0);
      } else {
        EXPECT_GT(r.d_logits[j], 0.0);
      }
    }
  }
}

double max_fd_error(LossKind kind, std::mt19937_64& rng, int trials) {
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    auto b = random_batch(rng, trial % 2);
    auto r = compute_loss(kind, b);
    for (std::size_t j = 0; j < b.logits.size(); ++j) {
      auto up = b, down = b;
      up.logits[j] += h;
      down.logits[j] -= h;
      double numeric = (compute_loss(kind, up).loss - compute_loss(kind, down).loss) / (2 * h);
      double denom = std::max({std::abs(numeric), std::abs(r.d_logits[j]), 1e-3});
      worst = std::max(worst, std::abs(numeric - r.d_logits[j]) / denom);
    }
  }
  return worst;
}

TEST(Cce, MatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  EXPECT_LE(max_fd_error(LossKind::kCce, rng, 500), 1e-6);
}

TEST(Bce, MatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  EXPECT_LE(max_fd_error(LossKind::kBce, rng, 500), 1e-6);
}

TEST(Cce, MaskedEntriesAreInert) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto b = random_batch(rng, false);
    b.mask.assign(b.logits.size(), true);
    auto extended = b;
    extended.logits.push_back(nd(rng));
    extended.labels.push_back(trial % 2);
    extended.mask.push_back(false);
    auto r = cce_loss(b), e = cce_loss(extended);
    EXPECT_EQ(r.loss, e.loss);
    for (std::size_t j = 0; j < b.logits.size(); ++j) EXPECT_EQ(r.d_logits[j], e.d_logits[j]);
    EXPECT_EQ(e.d_logits.back(), 0.0);
  }
}

TEST(Cce, ApproachesZeroAtSeparation) {
  double prev = cce_loss({{0.0, 0.0}, {1, 0}, {}}).loss;
  for (double s = 1.0; s <= 30.0; s += 1.0) {
    double l = cce_loss({{s, -s}, {1, 0}, {}}).loss;
    EXPECT_LT(l, prev);
    EXPECT_GE(l, 0.0);
    prev = l;
  }
  EXPECT_LT(prev, 1e-12);
}

TEST(Bce, Examples) {
  auto r = bce_loss({{0.0}, {1}, {}});
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(r.d_logits[0], -0.5);
  EXPECT_NEAR(bce_loss({{0.0, 0.0, 0.0}, {1, 0, 1}, {}}).loss, std::log(2.0), 1e-15);
  EXPECT_LT(bce_loss({{50.0}, {1}, {}}).loss, 1e-20);
  EXPECT_EQ(bce_loss({{1.0}, {1}, {false}}).loss, 0.0);
}

TEST(Bce, MaskedEntriesAreInert) {
  auto a = bce_loss({{0.3, -1.2}, {1, 0}, {}});
  auto b = bce_loss({{0.3, -1.2, 9.0}, {1, 0, 1}, {true, true, false}});
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.d_logits[0], b.d_logits[0]);
  EXPECT_EQ(b.d_logits[2], 0.0);
}

}  // namespace
