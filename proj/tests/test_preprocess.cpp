#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "ulm/preprocess.hpp"
#include "ulm/rng.hpp"
#include "ulm/simgen.hpp"

using namespace ulm;

namespace {

Frame textured_frame(int w, int h, std::uint64_t seed, double smooth = 1.5) {
  GridSpec g;
  g.lr_width = w;
  g.lr_height = h;
  g.upsample = 1;
  Rng rng(seed);
  return make_tissue(g, rng, smooth, 1.0);
}

FrameSequence repeat_frame(const Frame& f, int n) {
  FrameSequence seq;
  seq.frames.assign(n, f);
  return seq;
}

}  // namespace

TEST(Tic, ConstantAndRampFrames) {
  FrameSequence seq;
  for (int t = 0; t < 4; ++t) seq.frames.push_back(Frame(3, 3, 7.5));
  auto curve = tic(seq);
  for (double v : curve) EXPECT_DOUBLE_EQ(v, 7.5);

  FrameSequence ramp;
  for (int t = 0; t < 5; ++t) ramp.frames.push_back(Frame(2, 2, static_cast<double>(t)));
  curve = tic(ramp);
  for (int t = 0; t < 5; ++t) EXPECT_DOUBLE_EQ(curve[t], t);
}

TEST(Tic, SyntheticBolusArgmaxMatchesCurve) {
  const int n = 120;
  const auto curve = oracles::gamma_variate(n, 35.0, 2.5);
  int curve_argmax = 0;
  for (int t = 1; t < n; ++t)
    if (curve[t] > curve[curve_argmax]) curve_argmax = t;

  const Frame base = textured_frame(16, 16, 4);
  FrameSequence seq;
  for (int t = 0; t < n; ++t) {
    Frame f = base;
    for (double& v : f.data) v *= curve[t];
    seq.frames.push_back(std::move(f));
  }
  EXPECT_EQ(washout_start(tic(seq)), curve_argmax);
}

TEST(WashoutStart, TieBreaksEarliest) {
  EXPECT_EQ(washout_start({1, 3, 2}), 1);
  EXPECT_EQ(washout_start({5, 5, 5}), 0);
  EXPECT_EQ(washout_start({1, 2, 3, 4}), 3);
  EXPECT_THROW(washout_start({}), DegenerateInput);
}

TEST(Ncc, IdentityNegationAndOffset) {
  const Frame a = textured_frame(12, 12, 9);
  const Roi roi = full_frame_roi(12, 12);
  EXPECT_NEAR(ncc(a, a, roi), 1.0, 1e-12);

  Frame neg = a;
  for (double& v : neg.data) v = -v + 3.0;
  EXPECT_NEAR(ncc(a, neg, roi), -1.0, 1e-12);

  Frame off = a;
  for (double& v : off.data) v += 11.0;
  EXPECT_NEAR(ncc(a, off, roi), 1.0, 1e-12);
}

TEST(Ncc, ZeroVarianceRoiIsDegenerate) {
  const Frame a = textured_frame(12, 12, 9);
  const Frame flat(12, 12, 1.0);
  EXPECT_THROW(ncc(a, flat, full_frame_roi(12, 12)), DegenerateInput);
}

TEST(Ncc, RoiValidation) {
  const Frame a = textured_frame(12, 12, 9);
  EXPECT_THROW(ncc(a, a, Roi{0, 0, 3, 3}), InvalidParameter);    // area < 16
  EXPECT_THROW(ncc(a, a, Roi{8, 8, 8, 8}), InvalidParameter);    // out of bounds
}

TEST(SplitSubsequences, IdenticalFramesFormOneRange) {
  const FrameSequence seq = repeat_frame(textured_frame(16, 16, 2), 1200);
  const auto idx = split_subsequences(seq, full_frame_roi(16, 16), 0.90, 1000);
  ASSERT_EQ(idx.ranges.size(), 1u);
  EXPECT_EQ(idx.ranges[0], std::make_pair(0, 1199));
}

TEST(SplitSubsequences, DecorrelatedBlockSplitsAtTheBreak) {
  const Frame a = textured_frame(16, 16, 21);
  const Frame b = textured_frame(16, 16, 22);  // independent texture
  FrameSequence seq;
  for (int t = 0; t < 1500; ++t) seq.frames.push_back(t < 600 ? a : b);
  const auto idx = split_subsequences(seq, full_frame_roi(16, 16), 0.90, 500);
  ASSERT_EQ(idx.ranges.size(), 2u);
  EXPECT_EQ(idx.ranges[0], std::make_pair(0, 599));
  EXPECT_EQ(idx.ranges[1], std::make_pair(600, 1499));
}

TEST(SplitSubsequences, AllUniqueNoiseYieldsEmptyIndex) {
  FrameSequence seq;
  Rng rng(77);
  for (int t = 0; t < 60; ++t) {
    Frame f(16, 16);
    for (double& v : f.data) v = rng.normal();
    seq.frames.push_back(std::move(f));
  }
  const Roi roi = full_frame_roi(16, 16);
  for (int t = 0; t + 1 < seq.n_frames(); ++t)
    ASSERT_LT(ncc(seq.frames[t], seq.frames[t + 1], roi), 0.9);
  const auto idx = split_subsequences(seq, roi, 0.90, 2);
  EXPECT_TRUE(idx.ranges.empty());
}

TEST(SplitSubsequences, RangesAreDisjointSortedAndInternallyCorrelated) {
  // alternating stable blocks of varying length
  FrameSequence seq;
  Rng rng(5);
  Frame cur = textured_frame(16, 16, 100);
  int next_break = 0;
  for (int t = 0; t < 400; ++t) {
    if (t == next_break) {
      cur = textured_frame(16, 16, 1000 + t);
      next_break += rng.uniform_int(30, 90);
    }
    seq.frames.push_back(cur);
  }
  const Roi roi = full_frame_roi(16, 16);
  const auto idx = split_subsequences(seq, roi, 0.90, 25);
  ASSERT_FALSE(idx.ranges.empty());
  for (std::size_t i = 0; i < idx.ranges.size(); ++i) {
    const auto [s, e] = idx.ranges[i];
    EXPECT_GE(e - s + 1, 25);
    if (i > 0) EXPECT_GT(s, idx.ranges[i - 1].second);
    for (int t = s; t < e; ++t)
      EXPECT_GT(ncc(seq.frames[t], seq.frames[t + 1], roi), 0.90);
  }
}

TEST(EstimateTranslation, ZeroShiftAndErrors) {
  const Frame a = textured_frame(32, 32, 13);
  const auto [dx, dy] = estimate_translation(a, a);
  EXPECT_NEAR(dx, 0.0, 1e-9);
  EXPECT_NEAR(dy, 0.0, 1e-9);
  EXPECT_THROW(estimate_translation(a, Frame(32, 32, 1.0)), DegenerateInput);
  EXPECT_THROW(estimate_translation(a, Frame(16, 16)), InvalidParameter);
}

TEST(EstimateTranslation, RecoversIntegerAndHalfPixelShifts) {
  const Frame base = textured_frame(48, 48, 17, 2.0);
  for (const auto& [sx, sy] : std::vector<std::pair<double, double>>{
           {3.0, -2.0}, {0.5, 0.0}, {-1.5, 2.5}, {4.0, 4.0}, {0.0, -3.5}}) {
    const Frame moved = apply_translation(base, sx, sy);
    const auto [dx, dy] = estimate_translation(base, moved);
    EXPECT_NEAR(dx, sx, 0.25) << "shift (" << sx << "," << sy << ")";
    EXPECT_NEAR(dy, sy, 0.25) << "shift (" << sx << "," << sy << ")";
  }
}

TEST(EstimateTranslation, AntisymmetryOnShiftedImages) {
  const Frame base = textured_frame(48, 48, 29, 2.0);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const double sx = rng.uniform(-3, 3), sy = rng.uniform(-3, 3);
    const Frame moved = apply_translation(base, sx, sy);
    const auto [fx, fy] = estimate_translation(base, moved);
    const auto [bx, by] = estimate_translation(moved, base);
    EXPECT_NEAR(fx, -bx, 0.25);
    EXPECT_NEAR(fy, -by, 0.25);
  }
}

TEST(ApplyTranslation, IdentityIntegerAndConstant) {
  const Frame a = textured_frame(20, 20, 31);
  const Frame same = apply_translation(a, 0, 0);
  for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_DOUBLE_EQ(same.data[i], a.data[i]);

  // integer shift then unshift is exact where support stays interior
  const Frame shifted = apply_translation(a, 3, -2);
  const Frame back = apply_translation(shifted, -3, 2);
  for (int y = 4; y < 16; ++y)
    for (int x = 4; x < 16; ++x) EXPECT_NEAR(back.at(x, y), a.at(x, y), 1e-6);

  const Frame c(10, 10, 2.5);
  const Frame cs = apply_translation(c, 0.3, 0.7);
  for (int y = 2; y < 8; ++y)
    for (int x = 2; x < 8; ++x) EXPECT_NEAR(cs.at(x, y), 2.5, 1e-12);

  EXPECT_THROW(apply_translation(a, std::nan(""), 0), InvalidParameter);
}

TEST(SvdFilter, RankOneStaticSequenceVanishes) {
  const Frame f = textured_frame(12, 12, 41);
  const FrameSequence seq = repeat_frame(f, 20);
  const FrameSequence out = svd_filter(seq, 1, 0);
  const double in_max = image_max(f);
  for (const Frame& g : out.frames)
    for (double v : g.data) EXPECT_LE(std::abs(v), 1e-9 * in_max);
}

TEST(SvdFilter, ZeroCutoffsIsIdentity) {
  FrameSequence seq;
  Rng rng(51);
  for (int t = 0; t < 10; ++t) {
    Frame f(8, 8);
    for (double& v : f.data) v = rng.normal();
    seq.frames.push_back(std::move(f));
  }
  const FrameSequence out = svd_filter(seq, 0, 0);
  double in_norm = 0, err = 0;
  for (int t = 0; t < 10; ++t)
    for (std::size_t i = 0; i < out.frames[t].data.size(); ++i) {
      const double d = out.frames[t].data[i] - seq.frames[t].data[i];
      err += d * d;
      in_norm += seq.frames[t].data[i] * seq.frames[t].data[i];
    }
  EXPECT_LE(std::sqrt(err / in_norm), 1e-9);
}

TEST(SvdFilter, StaticBackgroundSuppressedMovingBlobKept) {
  // known exact decomposition: a dominant static layer plus a moving blob with
  // its temporal mean removed. The zero temporal mean decouples the moving part
  // from the static singular component, so removing the top singular value must
  // return exactly the moving part.
  const int W = 32, H = 16, T = 24;
  Frame bg(W, H);
  Rng rng(61);
  for (double& v : bg.data) v = 2.0 + rng.uniform();

  std::vector<Frame> blobs;
  Frame blob_mean(W, H);
  for (int t = 0; t < T; ++t) {
    Frame blob(W, H);
    const double cx = 6.0 + 0.8 * t;
    const double cy = H / 2.0 + 0.2 * t;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        blob.at(x, y) = 0.5 * std::exp(-r2 / 2.0);
      }
    for (std::size_t i = 0; i < blob.data.size(); ++i) blob_mean.data[i] += blob.data[i] / T;
    blobs.push_back(std::move(blob));
  }
  FrameSequence seq;
  double moving_energy_in = 0;
  for (int t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < blobs[t].data.size(); ++i)
      blobs[t].data[i] -= blob_mean.data[i];  // zero temporal mean
    moving_energy_in += image_energy(blobs[t]);
    Frame sum = bg;
    for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += blobs[t].data[i];
    seq.frames.push_back(std::move(sum));
  }

  const FrameSequence out = svd_filter(seq, 1, 0);

  const double bg_energy_in = image_energy(bg) * T;
  double bg_energy_out = 0, moving_energy_out = 0, ein = 0, eout = 0;
  const double bg_norm = std::sqrt(image_energy(bg));
  for (int t = 0; t < T; ++t) {
    const double along_bg = image_dot(out.frames[t], bg) / bg_norm;
    bg_energy_out += along_bg * along_bg;
    moving_energy_out += image_energy(out.frames[t]);
    ein += image_energy(seq.frames[t]);
    eout += image_energy(out.frames[t]);
  }
  EXPECT_LE(bg_energy_out / bg_energy_in, 1e-6);
  EXPECT_NEAR(moving_energy_out, moving_energy_in, 0.2 * moving_energy_in);
  EXPECT_LE(eout, ein * (1 + 1e-12));
}

TEST(SvdFilter, LinearOnSharedWellSeparatedSubspace) {
  // X and Y share the same dominant static direction, and their moving parts
  // have zero temporal mean, so X, Y, and X+Y all resolve the identical top
  // singular subspace: the filter then acts as one fixed projector and is
  // additive and homogeneous on these inputs.
  const int W = 8, H = 8, T = 12;
  const Frame s_dir = textured_frame(W, H, 71);
  const double s_norm2 = image_energy(s_dir);
  auto build = [&](double static_amp, std::uint64_t seed) {
    Rng r2(seed);
    std::vector<Frame> moving(T, Frame(W, H));
    Frame mean(W, H);
    for (int t = 0; t < T; ++t) {
      for (double& v : moving[t].data) v = 0.05 * r2.normal();
      // spatially orthogonal to the static direction
      const double along = image_dot(moving[t], s_dir) / s_norm2;
      for (std::size_t i = 0; i < moving[t].data.size(); ++i)
        moving[t].data[i] -= along * s_dir.data[i];
      for (std::size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += moving[t].data[i] / T;
    }
    FrameSequence s;
    for (int t = 0; t < T; ++t) {
      Frame f(W, H);
      // temporal mean removal decouples the moving part from the static one
      for (std::size_t i = 0; i < f.data.size(); ++i)
        f.data[i] = static_amp * s_dir.data[i] + moving[t].data[i] - mean.data[i];
      s.frames.push_back(std::move(f));
    }
    return s;
  };
  const FrameSequence x = build(10.0, 1001), y = build(7.0, 1002);
  FrameSequence xy = x;
  for (int t = 0; t < T; ++t)
    for (std::size_t i = 0; i < xy.frames[t].data.size(); ++i)
      xy.frames[t].data[i] += y.frames[t].data[i];

  const FrameSequence fx = svd_filter(x, 1, 0);
  const FrameSequence fy = svd_filter(y, 1, 0);
  const FrameSequence fxy = svd_filter(xy, 1, 0);
  double err = 0, norm = 0;
  for (int t = 0; t < T; ++t)
    for (std::size_t i = 0; i < fx.frames[t].data.size(); ++i) {
      const double sum = fx.frames[t].data[i] + fy.frames[t].data[i];
      const double d = fxy.frames[t].data[i] - sum;
      err += d * d;
      norm += fxy.frames[t].data[i] * fxy.frames[t].data[i];
    }
  EXPECT_LE(std::sqrt(err) / std::sqrt(norm + 1e-300), 1e-8);

  // homogeneity under scaling
  FrameSequence x3 = x;
  for (auto& f : x3.frames)
    for (double& v : f.data) v *= 3.0;
  const FrameSequence fx3 = svd_filter(x3, 1, 0);
  err = norm = 0;
  for (int t = 0; t < T; ++t)
    for (std::size_t i = 0; i < fx.frames[t].data.size(); ++i) {
      const double d = fx3.frames[t].data[i] - 3.0 * fx.frames[t].data[i];
      err += d * d;
      norm += fx3.frames[t].data[i] * fx3.frames[t].data[i];
    }
  EXPECT_LE(std::sqrt(err) / std::sqrt(norm + 1e-300), 1e-10);
}

TEST(SvdFilter, InsufficientFrames) {
  const FrameSequence seq = repeat_frame(textured_frame(8, 8, 81), 3);
  EXPECT_THROW(svd_filter(seq, 2, 1), InvalidParameter);
}

TEST(SvdSpectrum, DescendingValues) {
  FrameSequence seq;
  Rng rng(91);
  for (int t = 0; t < 6; ++t) {
    Frame f(6, 6);
    for (double& v : f.data) v = rng.normal();
    seq.frames.push_back(std::move(f));
  }
  const auto sv = svd_spectrum(seq);
  ASSERT_EQ(sv.size(), 6u);
  for (std::size_t i = 1; i < sv.size(); ++i) EXPECT_LE(sv[i], sv[i - 1]);
}

TEST(PreprocessRun, OrderWashoutSplitRegisterFilter) {
  // Bolus peak at frame 40; before it, junk frames that would otherwise form a
  // long subsequence. After the peak: two stable blocks, the second longer and
  // drifting, carrying a moving blob over static tissue.
  GridSpec g;
  g.lr_width = 24;
  g.lr_height = 24;
  g.upsample = 1;
  Rng trng(123);
  const Frame tissue = make_tissue(g, trng, 2.0, 1.0);

  FrameSequence ceus, bmode;
  const int peak = 40, total = 200;
  const auto curve = oracles::gamma_variate(total, static_cast<double>(peak), 3.0, 0.2);
  Rng rng(7);
  for (int t = 0; t < total; ++t) {
    Frame cf(24, 24);
    // moving blob after washout
    const double cx = 4.0 + 0.08 * t, cy = 12.0;
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x) {
        const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        cf.at(x, y) = 0.5 * std::exp(-r2 / 2.0) + curve[t];
      }
    ceus.frames.push_back(std::move(cf));
    // b-mode: stable texture, decorrelation event at t=120
    Frame bf = t < 120 ? tissue : apply_translation(tissue, 6.5, -4.0);
    bmode.frames.push_back(std::move(bf));
  }

  PreprocessConfig cfg;
  cfg.corr_threshold = 0.90;
  cfg.min_len = 30;
  cfg.svd_low = 1;
  const PreprocessResult res = preprocess_run(ceus, bmode, cfg);

  EXPECT_EQ(res.report.washout_start, peak);
  // both post-washout blocks qualify; ranges are absolute
  ASSERT_EQ(res.report.subsequences.size(), 2u);
  EXPECT_EQ(res.report.subsequences[0].first, peak);
  EXPECT_EQ(res.report.subsequences[0].second, 119);
  EXPECT_EQ(res.report.subsequences[1].first, 120);
  EXPECT_EQ(res.report.subsequences[1].second, 199);
  // equal-length blocks: the earliest is selected
  EXPECT_EQ(res.report.selected.first, peak);
  EXPECT_EQ(res.report.selected.second, 119);
  EXPECT_EQ(res.filtered.n_frames(), 80);
  EXPECT_EQ(static_cast<int>(res.report.shifts.size()), 80);
  // b-mode within the block is static, so shifts stay near zero
  for (const auto& s : res.report.shifts) {
    EXPECT_NEAR(s[0], 0.0, 0.25);
    EXPECT_NEAR(s[1], 0.0, 0.25);
  }
  EXPECT_FALSE(res.report.singular_values.empty());
}

TEST(PreprocessRun, RejectsMismatchedInputs) {
  FrameSequence a = repeat_frame(Frame(8, 8, 1.0), 5);
  FrameSequence b = repeat_frame(Frame(8, 8, 1.0), 4);
  EXPECT_THROW(preprocess_run(a, b, PreprocessConfig{}), InvalidParameter);
}
