#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "ulm/metrics.hpp"
#include "ulm/render.hpp"
#include "ulm/rng.hpp"

using namespace ulm;

TEST(MatchLocalizations, ExactMatchIsPerfect) {
  LocalizationSet truth;
  Rng rng(3);
  for (int i = 0; i < 40; ++i)
    truth.push_back({i % 4, rng.uniform(0, 1000), rng.uniform(0, 1000), 1.0});
  const MatchReport rep = match_localizations(truth, truth, 31.25);
  EXPECT_DOUBLE_EQ(rep.precision, 1.0);
  EXPECT_DOUBLE_EQ(rep.recall, 1.0);
  EXPECT_DOUBLE_EQ(rep.rmse_um, 0.0);
  EXPECT_EQ(rep.false_positives, 0);
  EXPECT_EQ(rep.false_negatives, 0);
}

TEST(MatchLocalizations, EmptyPredictions) {
  LocalizationSet truth = {{0, 10, 10, 1}};
  const MatchReport rep = match_localizations({}, truth, 31.25);
  EXPECT_DOUBLE_EQ(rep.recall, 0.0);
  EXPECT_EQ(rep.false_positives, 0);
  EXPECT_EQ(rep.false_negatives, 1);
  EXPECT_DOUBLE_EQ(rep.precision, 0.0);  // empty pred, non-empty truth

  const MatchReport both = match_localizations({}, {}, 31.25);
  EXPECT_DOUBLE_EQ(both.precision, 1.0);
  EXPECT_DOUBLE_EQ(both.recall, 1.0);
}

TEST(MatchLocalizations, GreedyTakesNearest) {
  const double tol = 10.0;
  LocalizationSet truth = {{0, 100, 100, 1}};
  LocalizationSet pred = {{0, 100 + 9, 100, 1}, {0, 100 + 5, 100, 1}};
  const MatchReport rep = match_localizations(pred, truth, tol);
  EXPECT_EQ(rep.true_positives, 1);
  EXPECT_EQ(rep.false_positives, 1);
  EXPECT_NEAR(rep.rmse_um, 5.0, 1e-12);
}

TEST(MatchLocalizations, FrameIndexSeparatesMatches) {
  LocalizationSet truth = {{0, 100, 100, 1}};
  LocalizationSet pred = {{1, 100, 100, 1}};  // same position, wrong frame
  const MatchReport rep = match_localizations(pred, truth, 31.25);
  EXPECT_EQ(rep.true_positives, 0);
  EXPECT_EQ(rep.false_positives, 1);
  EXPECT_EQ(rep.false_negatives, 1);
}

TEST(MatchLocalizations, SwapSymmetry) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    LocalizationSet a, b;
    const int na = rng.uniform_int(0, 12), nb = rng.uniform_int(0, 12);
    for (int i = 0; i < na; ++i) a.push_back({0, rng.uniform(0, 300), rng.uniform(0, 300), 1.0});
    for (int i = 0; i < nb; ++i) b.push_back({0, rng.uniform(0, 300), rng.uniform(0, 300), 1.0});
    const MatchReport ab = match_localizations(a, b, 40.0);
    const MatchReport ba = match_localizations(b, a, 40.0);
    EXPECT_EQ(ab.true_positives, ba.true_positives);
    EXPECT_DOUBLE_EQ(ab.precision, ba.recall);
    EXPECT_DOUBLE_EQ(ab.recall, ba.precision);
  }
}

TEST(MatchLocalizations, RmseNeverExceedsTolerance) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    LocalizationSet a, b;
    for (int i = 0; i < 15; ++i) {
      a.push_back({0, rng.uniform(0, 200), rng.uniform(0, 200), 1.0});
      b.push_back({0, rng.uniform(0, 200), rng.uniform(0, 200), 1.0});
    }
    const double tol = rng.uniform(5, 60);
    const MatchReport rep = match_localizations(a, b, tol);
    EXPECT_LE(rep.rmse_um, tol + 1e-12);
  }
}

TEST(MatchLocalizations, GreedyWithinFivePercentOfOptimal) {
  Rng rng(13);
  long greedy_total = 0, optimal_total = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const double tol = 25.0;
    std::vector<std::pair<double, double>> pd, td;
    LocalizationSet pred, truth;
    const int np = rng.uniform_int(1, 8), nt = rng.uniform_int(1, 8);
    for (int i = 0; i < np; ++i) {
      pd.emplace_back(rng.uniform(0, 120), rng.uniform(0, 120));
      pred.push_back({0, pd.back().first, pd.back().second, 1.0});
    }
    for (int i = 0; i < nt; ++i) {
      td.emplace_back(rng.uniform(0, 120), rng.uniform(0, 120));
      truth.push_back({0, td.back().first, td.back().second, 1.0});
    }
    greedy_total += match_localizations(pred, truth, tol).true_positives;
    optimal_total += oracles::best_assignment(pd, td, tol).matches;
  }
  EXPECT_GE(greedy_total, static_cast<long>(0.95 * optimal_total));
  EXPECT_LE(greedy_total, optimal_total);
}

TEST(RenderMap, ConstantMapRendersFullScale) {
  const Frame acc(8, 8, 4.0);
  const auto img = render_map(acc, 0.5, 0.0);
  for (auto v : img.data) EXPECT_EQ(v, 65535);
}

TEST(RenderMap, LinearGammaIsLinearQuantization) {
  Frame acc(4, 1);
  acc.at(0, 0) = 0.0;
  acc.at(1, 0) = 1.0;
  acc.at(2, 0) = 2.0;
  acc.at(3, 0) = 4.0;
  const auto img = render_map(acc, 1.0, 0.0);
  EXPECT_EQ(img.at(0, 0), 0);
  EXPECT_EQ(img.at(1, 0), std::lround(65535.0 * 0.25));
  EXPECT_EQ(img.at(2, 0), std::lround(65535.0 * 0.5));
  EXPECT_EQ(img.at(3, 0), 65535);
}

TEST(RenderMap, AllZeroAndErrors) {
  const auto img = render_map(Frame(5, 5), 0.5, 0.0);
  for (auto v : img.data) EXPECT_EQ(v, 0);
  Frame neg(3, 3);
  neg.at(1, 1) = -1.0;
  EXPECT_THROW(render_map(neg), InvalidParameter);
  EXPECT_THROW(render_map(Frame(3, 3), 0.0), InvalidParameter);
}

TEST(RenderMap, MonotoneForSharedMax) {
  Rng rng(17);
  Frame a(10, 10), b(10, 10);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    a.data[i] = rng.uniform(0, 0.8);
    b.data[i] = a.data[i] + rng.uniform(0, 0.2);
  }
  a.at(5, 5) = b.at(5, 5) = 1.0;  // shared max
  for (double gamma : {0.5, 1.0, 2.0}) {
    const auto ia = render_map(a, gamma);
    const auto ib = render_map(b, gamma);
    for (std::size_t i = 0; i < ia.data.size(); ++i) EXPECT_LE(ia.data[i], ib.data[i]);
  }
}

TEST(ResolutionProbe, SinglePeakAndFlatProfiles) {
  Frame img(64, 64);
  // vertical ridge at x = 32 px
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) img.at(x, y) = std::exp(-0.5 * (x - 32.0) * (x - 32.0) / 4.0);
  const double px_um = 10.0;
  const ProbeSegment seg{5 * px_um, 32 * px_um, 60 * px_um, 32 * px_um};
  const ProbeResult r = resolution_probe(img, px_um, seg);
  ASSERT_EQ(r.peaks.size(), 1u);
  // peak position along the segment maps back to the ridge center
  EXPECT_NEAR(seg.x0_um + r.peaks[0].t_um, (32 + 0.5) * px_um, 2 * px_um);

  const Frame flat(64, 64, 3.0);
  const ProbeResult rf = resolution_probe(flat, px_um, seg);
  EXPECT_TRUE(rf.peaks.empty());
  for (double v : rf.value) EXPECT_NEAR(v, 3.0, 1e-9);
}

TEST(ResolutionProbe, TwoPeaksAndDipRatio) {
  Frame img(64, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 64; ++x)
      img.at(x, y) = std::exp(-0.5 * (x - 24.0) * (x - 24.0) / 1.44) +
                     std::exp(-0.5 * (x - 40.0) * (x - 40.0) / 1.44);
  const double px_um = 31.25;
  const ProbeSegment seg{0, 8 * px_um, 63 * px_um, 8 * px_um};
  const ProbeResult r = resolution_probe(img, px_um, seg, 0.5 * px_um, 2 * px_um);
  ASSERT_GE(r.peaks.size(), 2u);
  EXPECT_GT(r.dip_ratio, 0.9);  // deep valley for 16-px separation, sigma 1.2

  EXPECT_THROW(resolution_probe(img, px_um, ProbeSegment{5, 5, 5, 5}), DegenerateInput);
  EXPECT_THROW(resolution_probe(img, 0.0, seg), InvalidParameter);
}
