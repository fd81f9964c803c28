#include <gtest/gtest.h>

#include <cmath>

#include "ulm/metrics.hpp"
#include "ulm/unrolled.hpp"

using namespace ulm;

namespace {

GridSpec tiny_grid() {
  GridSpec g;
  g.lr_width = 8;
  g.lr_height = 8;
  g.upsample = 2;
  g.lr_pixel_um = 62.5;
  return g;
}

// K=2 blocks, 5x5 kernels, 16x16 HR — the gradient-check scale.
template <typename T>
NetParams<T> random_small_net(Rng& rng) {
  NetParams<T> p;
  p.upsample = 2;
  auto rk = [&]() {
    Image<T> k(5, 5);
    for (T& v : k.data) v = static_cast<T>(0.3 * rng.normal());
    return k;
  };
  p.w_in = rk();
  for (int k = 0; k < 2; ++k) {
    p.w_blocks.push_back(rk());
    p.v_blocks.push_back(rk());
    p.theta.push_back(static_cast<T>(softplus_inv(0.05) + 0.3 * rng.normal()));
  }
  return p;
}

}  // namespace

TEST(NetForward, ZeroInputGivesZeroOutput) {
  Rng rng(3);
  const NetParams<double> p = random_small_net<double>(rng);
  const Image<double> x(8, 8);
  const Image<double> f = net_forward(x, p);
  for (double v : f.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(NetForward, DeltaKernelsReduceToIdentity) {
  // K=1, w_in = w_1 = delta, rho ~ 0, r=1: output equals a non-negative input
  NetParams<float> p;
  p.upsample = 1;
  Image<float> delta(5, 5);
  delta.at(2, 2) = 1.0f;
  p.w_in = delta;
  p.w_blocks = {delta};
  p.v_blocks = {Image<float>(5, 5)};
  p.v_blocks[0].at(2, 2) = 1.0f;
  p.theta = {-100.0f};  // softplus(-100) underflows to 0

  Image<float> x(9, 9);
  Rng rng(5);
  for (float& v : x.data) v = static_cast<float>(rng.uniform());
  const Image<float> f = net_forward(x, p);
  for (std::size_t i = 0; i < x.data.size(); ++i) EXPECT_FLOAT_EQ(f.data[i], x.data[i]);
}

TEST(NetForward, OutputIsNonNegative) {
  Rng rng(7);
  const NetParams<double> p = random_small_net<double>(rng);
  for (int trial = 0; trial < 10; ++trial) {
    Image<double> x(8, 8);
    for (double& v : x.data) v = rng.normal();
    const Image<double> f = net_forward(x, p);
    for (double v : f.data) EXPECT_GE(v, 0.0);
  }
}

TEST(NetForward, ContinuousUnderInputPerturbation) {
  Rng rng(11);
  const NetParams<double> p = random_small_net<double>(rng);
  Image<double> x(8, 8);
  for (double& v : x.data) v = rng.uniform();
  const Image<double> f0 = net_forward(x, p);

  Image<double> dir(8, 8);
  for (double& v : dir.data) v = rng.normal();
  const double dn = std::sqrt(image_energy(dir));

  double prev_slope = -1;
  for (const double eps : {1e-2, 1e-3, 1e-4}) {
    Image<double> xp = x;
    for (std::size_t i = 0; i < xp.data.size(); ++i) xp.data[i] += eps * dir.data[i];
    const Image<double> fp = net_forward(xp, p);
    double d = 0;
    for (std::size_t i = 0; i < fp.data.size(); ++i) {
      const double e = fp.data[i] - f0.data[i];
      d += e * e;
    }
    const double slope = std::sqrt(d) / (eps * dn);
    if (prev_slope >= 0) EXPECT_LE(slope, 3.0 * prev_slope + 1.0);
    prev_slope = slope;
  }
}

TEST(NetLoss, BlurredTargetZeroesL2Term) {
  const auto blur = loss_blur_kernel<double>(1.0);
  Image<double> y(16, 16);
  y.at(8, 8) = 1.0;
  y.at(3, 12) = 0.5;
  const Image<double> gy = correlate_same(y, blur);
  const double lambda = 0.01;
  double l1 = 0;
  for (double v : gy.data) l1 += std::abs(v);
  EXPECT_NEAR(net_loss(gy, y, lambda, blur), lambda * l1, 1e-12);
}

TEST(NetLoss, ZeroEverything) {
  const auto blur = loss_blur_kernel<double>(1.0);
  const Image<double> z(16, 16);
  EXPECT_DOUBLE_EQ(net_loss(z, z, 0.01, blur), 0.0);
}

TEST(NetLoss, UnitSpikeClosedForm) {
  const auto blur = loss_blur_kernel<double>(1.0);
  Image<double> y(16, 16);
  y.at(8, 8) = 1.0;  // interior: blur support stays inside
  double kernel_sq_sum = 0;
  for (double v : blur.data) kernel_sq_sum += v * v;
  EXPECT_NEAR(net_loss(Image<double>(16, 16), y, 0.01, blur), kernel_sq_sum, 1e-12);
}

TEST(NetBackward, ZeroBatchGivesZeroGradients) {
  Rng rng(13);
  const NetParams<float> p = random_small_net<float>(rng);
  const auto blur = loss_blur_kernel<float>(1.0);
  std::vector<BatchSample> batch(3);
  for (auto& b : batch) {
    b.input_lr = Image<float>(8, 8);
    b.target_hr = Image<float>(16, 16);
  }
  std::vector<double> grads;
  const double loss = net_backward_batch(batch, p, 0.01, blur, grads);
  EXPECT_DOUBLE_EQ(loss, 0.0);
  for (double g : grads) EXPECT_DOUBLE_EQ(g, 0.0);
}

TEST(NetBackward, MatchesCentralFiniteDifferences) {
  const SeedSpec seeds{2024};
  const auto blur = loss_blur_kernel<double>(1.0);
  const double lambda = 0.01;

  // deterministic hunt for a base point clear of soft-threshold kinks
  NetParams<double> p;
  Image<double> x(8, 8);
  Image<double> y(16, 16);
  bool found = false;
  for (std::uint64_t attempt = 0; attempt < 50 && !found; ++attempt) {
    Rng rng = seeds.stream(attempt);
    p = random_small_net<double>(rng);
    x = Image<double>(8, 8);
    for (double& v : x.data) v = rng.uniform();
    y = Image<double>(16, 16);
    for (int s = 0; s < 3; ++s)
      y.at(rng.uniform_int(2, 13), rng.uniform_int(2, 13)) = rng.uniform(0.5, 1.0);
    ForwardTrace<double> tr;
    net_forward(x, p, &tr);
    double min_gap = 1e300;
    for (int k = 0; k < p.blocks(); ++k) {
      const double rho = softplus(p.theta[k]);
      for (double a : tr.preact[k].data) min_gap = std::min(min_gap, std::abs(std::abs(a) - rho));
    }
    found = min_gap > 1e-3;
  }
  ASSERT_TRUE(found) << "no kink-free base point in 50 attempts";

  NetParams<double> grads = p.zeros_like();
  net_backward_sample(x, y, p, lambda, blur, grads);
  const std::vector<double> analytic = grads.to_flat();

  std::vector<double> flat = p.to_flat();
  const double h = 1e-4;
  double max_rel = 0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    NetParams<double> pp = p;
    std::vector<double> fp = flat;
    fp[i] += h;
    pp.from_flat(fp);
    const double lp = net_loss(net_forward(x, pp), y, lambda, blur);
    fp[i] = flat[i] - h;
    pp.from_flat(fp);
    const double lm = net_loss(net_forward(x, pp), y, lambda, blur);
    const double fd = (lp - lm) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
    max_rel = std::max(max_rel, std::abs(fd - analytic[i]) / denom);
  }
  EXPECT_LT(max_rel, 1e-4);
}

TEST(NetBackward, DuplicatedBatchKeepsMeanGradient) {
  Rng rng(29);
  const NetParams<float> p = random_small_net<float>(rng);
  const auto blur = loss_blur_kernel<float>(1.0);
  std::vector<BatchSample> batch(2);
  for (auto& b : batch) {
    b.input_lr = Image<float>(8, 8);
    for (float& v : b.input_lr.data) v = static_cast<float>(rng.uniform());
    b.target_hr = Image<float>(16, 16);
    b.target_hr.at(rng.uniform_int(2, 13), rng.uniform_int(2, 13)) = 1.0f;
  }
  std::vector<BatchSample> doubled = {batch[0], batch[0], batch[1], batch[1]};

  std::vector<double> g1, g2;
  const double l1 = net_backward_batch(batch, p, 0.01, blur, g1);
  const double l2 = net_backward_batch(doubled, p, 0.01, blur, g2);
  EXPECT_NEAR(l1, l2, 1e-12 * std::max(1.0, std::abs(l1)));
  ASSERT_EQ(g1.size(), g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i)
    EXPECT_NEAR(g1[i], g2[i], 1e-12 * std::max(1.0, std::abs(g1[i])));
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  std::vector<double> params = {1.0, -2.0, 0.5};
  const std::vector<double> grads = {0.0, 0.0, 0.0};
  AdamState st(3);
  TrainConfig cfg;
  adam_step(params, grads, st, cfg);
  EXPECT_EQ(params, (std::vector<double>{1.0, -2.0, 0.5}));
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
  TrainConfig cfg;
  for (double g : {1e-6, 0.01, 3.0, -42.0}) {
    std::vector<double> params = {0.0};
    AdamState st(1);
    adam_step(params, {g}, st, cfg);
    // bias-corrected first step: lr * g / (|g| + eps)
    const double expect = cfg.lr * g / (std::abs(g) + cfg.adam_eps);
    EXPECT_NEAR(params[0], -expect, 1e-12 * std::abs(expect) + 1e-18);
    EXPECT_NEAR(std::abs(params[0]), cfg.lr, 0.011 * cfg.lr);
  }
}

TEST(Adam, ConstantGradientReachesSteadyStateLr) {
  TrainConfig cfg;
  const double g = 0.37;
  std::vector<double> params = {0.0};
  AdamState st(1);
  // independent recurrence for the expected trajectory
  double m = 0, v = 0, expect = 0;
  for (int t = 1; t <= 2000; ++t) {
    adam_step(params, {g}, st, cfg);
    m = cfg.adam_beta1 * m + (1 - cfg.adam_beta1) * g;
    v = cfg.adam_beta2 * v + (1 - cfg.adam_beta2) * g * g;
    const double mh = m / (1 - std::pow(cfg.adam_beta1, t));
    const double vh = v / (1 - std::pow(cfg.adam_beta2, t));
    expect -= cfg.lr * mh / (std::sqrt(vh) + cfg.adam_eps);
  }
  EXPECT_NEAR(params[0], expect, 1e-12 * std::abs(expect));
  // steady state: per-step move approaches lr
  std::vector<double> before = params;
  adam_step(params, {g}, st, cfg);
  EXPECT_NEAR(std::abs(params[0] - before[0]), cfg.lr, 0.02 * cfg.lr);
}

namespace {

TrainConfig micro_train_cfg() {
  TrainConfig tc;
  tc.batch_size = 2;
  tc.epochs = 3;
  tc.steps_per_epoch = 2;
  tc.val_size = 2;
  tc.seed = 99;
  return tc;
}

NetConfig micro_net_cfg() {
  NetConfig nc;
  nc.blocks = 2;
  nc.kernel_size = 5;
  return nc;
}

SampleDistributions micro_dist() {
  SampleDistributions d;
  d.n_min = 1;
  d.n_max = 4;
  d.sigma_min = d.sigma_max = 0.8;  // 3*sigma margin must fit the 8x8 patch
  return d;
}

}  // namespace

TEST(Train, ZeroLearningRateKeepsParamsBitExact) {
  const GridSpec g = tiny_grid();
  TrainConfig tc = micro_train_cfg();
  tc.lr = 0.0;
  const NetConfig nc = micro_net_cfg();

  Rng init_rng = SeedSpec{tc.seed}.stream(0);
  const NetParams<float> expected =
      init_net_params(nc, g, 0.5 * (micro_dist().sigma_min + micro_dist().sigma_max), init_rng);
  const TrainResult r = train(micro_dist(), g, nc, tc);
  EXPECT_EQ(r.ckpt.params.to_flat(), expected.to_flat());
}

TEST(Train, SameSeedSameCurveDifferentSeedDiffers) {
  const GridSpec g = tiny_grid();
  const TrainResult a = train(micro_dist(), g, micro_net_cfg(), micro_train_cfg());
  const TrainResult b = train(micro_dist(), g, micro_net_cfg(), micro_train_cfg());
  ASSERT_EQ(a.curve.size(), b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    EXPECT_EQ(a.curve[i].train_loss, b.curve[i].train_loss);
    EXPECT_EQ(a.curve[i].val_loss, b.curve[i].val_loss);
  }
  EXPECT_EQ(a.ckpt.params.to_flat(), b.ckpt.params.to_flat());

  TrainConfig tc2 = micro_train_cfg();
  tc2.seed = 100;
  const TrainResult c = train(micro_dist(), g, micro_net_cfg(), tc2);
  EXPECT_NE(a.curve.back().train_loss, c.curve.back().train_loss);
}

TEST(Train, ThresholdsStayNonNegative) {
  const GridSpec g = tiny_grid();
  TrainConfig tc = micro_train_cfg();
  tc.lr = 0.05;  // aggressive on purpose
  const TrainResult r = train(micro_dist(), g, micro_net_cfg(), tc);
  for (float th : r.ckpt.params.theta) EXPECT_GE(softplus(th), 0.0);
}

TEST(InferSequence, AllZeroSequenceGivesNoLocalizations) {
  const GridSpec g = tiny_grid();
  Rng rng = SeedSpec{1}.stream(0);
  Checkpoint ck;
  ck.params = init_net_params(micro_net_cfg(), g, 1.0, rng);
  ck.grid = g;
  ck.net = micro_net_cfg();
  FrameSequence seq;
  seq.pixel_um = g.lr_pixel_um;
  seq.frames.assign(5, Frame(8, 8));
  const InferResult r = infer_sequence(seq, ck);
  EXPECT_TRUE(r.locs.empty());
}

TEST(InferSequence, FrameCountPreservedAndGridChecked) {
  const GridSpec g = tiny_grid();
  Rng rng = SeedSpec{1}.stream(0);
  Checkpoint ck;
  ck.params = init_net_params(micro_net_cfg(), g, 1.0, rng);
  ck.grid = g;
  ck.net = micro_net_cfg();

  FrameSequence seq;
  seq.pixel_um = g.lr_pixel_um;
  Rng r2(8);
  for (int t = 0; t < 4; ++t) {
    Frame f(8, 8);
    for (double& v : f.data) v = r2.uniform();
    seq.frames.push_back(std::move(f));
  }
  InferConfig icfg;
  icfg.keep_frames = true;
  const InferResult r = infer_sequence(seq, ck, icfg);
  EXPECT_EQ(static_cast<int>(r.outputs.size()), 4);
  for (const auto& o : r.outputs) {
    EXPECT_EQ(o.width, g.hr_width());
    EXPECT_EQ(o.height, g.hr_height());
  }

  FrameSequence bad;
  bad.frames.assign(2, Frame(9, 9));
  EXPECT_THROW(infer_sequence(bad, ck), InvalidParameter);
}

TEST(Train, DivergenceGuardTriggersOnNonFiniteLoss) {
  const GridSpec g = tiny_grid();
  TrainConfig tc = micro_train_cfg();
  tc.lr = 1e39;  // first update overflows the f32 parameter store
  tc.epochs = 30;
  tc.steps_per_epoch = 5;
  EXPECT_THROW(train(micro_dist(), g, micro_net_cfg(), tc), NumericDivergence);
}
