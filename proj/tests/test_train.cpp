#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "sirem/phantom.hpp"
#include "sirem/train.hpp"
#include "test_util.hpp"

using namespace sirem;

namespace {

constexpr GridSize kGrid{16, 16};

DecoderShape tiny_shape() {
  DecoderShape s;
  s.input_dim = 8;
  s.hidden = {16, 16, 16};
  s.output = kGrid;
  s.dropout = 0.0;
  return s;
}

TrainUtterance make_utterance(std::uint64_t seed, std::size_t frames = 6) {
  PhantomConfig cfg;
  cfg.grid = kGrid;
  cfg.frames = frames;
  cfg.coils = 4;
  cfg.feature_dim = 8;
  cfg.feature_steps = 2;
  cfg.seed = seed;
  const auto seq = generate(cfg);
  const NufftPlan plan(sirem::testing::small_spiral(kGrid, 64, 3.0));
  const auto maps = simulate_sensitivities(cfg.coils, kGrid, seed + 100);
  const auto k = simulate_acquisition(seq, plan, maps, 0.01, seed);
  return prepare_utterance("utt" + std::to_string(seed), k, plan, maps, seq.features, seq.frames,
                           utterance_eba(seq), 1);
}

const std::vector<TrainUtterance> &corpus() {
  static const std::vector<TrainUtterance> c = [] {
    std::vector<TrainUtterance> v;
    for (std::uint64_t s = 1; s <= 4; ++s) v.push_back(make_utterance(s));
    return v;
  }();
  return c;
}

std::vector<BatchItem> batch_of(const TrainUtterance &u, std::size_t n) {
  std::vector<BatchItem> b;
  for (std::size_t t = 0; t < n; ++t) b.push_back({&u.frames[t], &u.eba});
  return b;
}

TrainConfig quiet_config() {
  TrainConfig c;
  c.workers = 1;
  return c;
}

SiremModel<double> random_model(std::uint64_t seed) {
  auto cfg = quiet_config();
  cfg.seed = seed;
  auto m = init_model<double>(tiny_shape(), cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double &l : m.logits.ell) l = n(rng);
  return m;
}

template <typename Scalar>
std::vector<double> flatten(const Gradients<Scalar> &g) {
  std::vector<double> out;
  g.decoder.for_each([&](const Mat<Scalar> &m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(static_cast<double>(m.data()[i]));
  });
  for (double v : g.logits) out.push_back(v);
  return out;
}

Gradients<double> gradient_with_norm(double target) {
  Gradients<double> g{init_decoder<double>(tiny_shape(), 3).zeros_like(), {}};
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto &[m, decay] : g.decoder.tensors())
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = n(rng);
  for (double &v : g.logits) v = n(rng);
  const double s = target / global_norm(g);
  for (auto &[m, decay] : g.decoder.tensors()) *m *= s;
  for (double &v : g.logits) v *= s;
  return g;
}

}  // namespace

TEST(TrainConfig, DefaultsMatchTheTrainingRecipe) {
  TrainConfig c;
  EXPECT_EQ(c.alpha, 0.1);
  EXPECT_EQ(c.beta, 0.01);
  EXPECT_EQ(c.gamma, 0.01);
  EXPECT_EQ(c.K, 2.0);
  EXPECT_EQ(c.lr, 1e-4);
  EXPECT_EQ(c.weight_decay, 1e-5);
  EXPECT_EQ(c.batch, 8u);
  EXPECT_EQ(c.epochs, 20u);
  EXPECT_EQ(c.clip_norm, 1.0);
  EXPECT_EQ(c.val_every, 5u);
  EXPECT_NO_THROW(c.validate());
  c.batch = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(CosineLr, EndpointsAndMidpoint) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(cosine_lr(0, c), c.lr);
  EXPECT_NEAR(cosine_lr(c.epochs, c), 0.0, 1e-20);
  EXPECT_NEAR(cosine_lr(c.epochs / 2, c), c.lr / 2.0, 1e-18);
  EXPECT_THROW(cosine_lr(c.epochs + 1, c), Error);
}

TEST(CosineLr, NonIncreasingOverEpochs) {
  TrainConfig c;
  for (std::size_t e = 0; e < c.epochs; ++e) EXPECT_LE(cosine_lr(e + 1, c), cosine_lr(e, c));
}

TEST(ClipGradients, SmallNormUnchanged) {
  auto g = gradient_with_norm(0.5);
  const auto before = flatten(g);
  EXPECT_NEAR(clip_gradients(g, 1.0), 0.5, 1e-12);
  EXPECT_EQ(flatten(g), before);
}

TEST(ClipGradients, LargeNormScaledToLimitPreservingDirection) {
  auto g = gradient_with_norm(2.0);
  const auto before = flatten(g);
  clip_gradients(g, 1.0);
  const auto after = flatten(g);
  EXPECT_NEAR(global_norm(g), 1.0, 1e-12);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < after.size(); ++i) {
    EXPECT_NEAR(after[i], 0.5 * before[i], 1e-15);
    dot += after[i] * before[i];
    na += after[i] * after[i];
    nb += before[i] * before[i];
  }
  EXPECT_NEAR(dot / std::sqrt(na * nb), 1.0, 1e-12);
}

TEST(ClipGradients, NeverIncreasesNorm) {
  for (double n : {0.1, 0.99, 1.0, 1.01, 3.0, 1e4}) {
    auto g = gradient_with_norm(n);
    clip_gradients(g, 1.0);
    EXPECT_LE(global_norm(g), std::max(n, 1.0) * (1.0 + 1e-12));
  }
}

TEST(AdamW, ZeroGradientZeroDecayLeavesParameterUnchanged) {
  std::vector<double> p{0.3, -1.2}, g{0.0, 0.0}, m{0.0, 0.0}, v{0.0, 0.0};
  for (std::uint64_t s = 1; s <= 5; ++s) adamw_update<double>(p, g, m, v, s, 1e-3, 0.0);
  EXPECT_EQ(p, (std::vector<double>{0.3, -1.2}));
}

TEST(AdamW, FirstStepIsLrTimesSign) {
  for (double g0 : {0.37, -2.5, 1e-3}) {
    std::vector<double> p{1.0}, g{g0}, m{0.0}, v{0.0};
    adamw_update<double>(p, g, m, v, 1, 1e-3, 0.0);
    const double expect = 1.0 - 1e-3 * g0 / (std::abs(g0) + kAdamEps);
    EXPECT_NEAR(p[0], expect, 1e-15);
    EXPECT_NEAR(p[0] - 1.0, -1e-3 * std::copysign(1.0, g0), 1e-8);
  }
}

TEST(AdamW, WeightDecayAloneIsGeometric) {
  const double lr = 0.01, wd = 0.5;
  std::vector<double> p{2.0}, g{0.0}, m{0.0}, v{0.0};
  for (std::uint64_t s = 1; s <= 10; ++s) adamw_update<double>(p, g, m, v, s, lr, wd);
  EXPECT_NEAR(p[0], 2.0 * std::pow(1.0 - lr * wd, 10), 1e-14);
}

TEST(OptimizerStep, DecayExemptsLogitsAndNormParameters) {
  auto cfg = quiet_config();
  cfg.weight_decay = 0.5;
  auto model = random_model(4);
  auto st = init_state(model);
  Gradients<double> g{model.decoder.zeros_like(), {}};
  optimizer_step(st, g, 0.1, cfg);
  EXPECT_EQ(st.step, 1u);
  EXPECT_EQ(st.model.logits.ell, model.logits.ell);
  const auto &l0 = st.model.decoder.layers[0];
  EXPECT_TRUE((l0.gain.array() == 1.0).all());
  EXPECT_TRUE((l0.offset.array() == 0.0).all());
  EXPECT_LT((l0.weight - model.decoder.layers[0].weight * 0.95).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_GT(st.model.decoder.version, model.decoder.version);
}

TEST(OptimizerStep, RejectsNonFiniteGradient) {
  auto model = random_model(4);
  auto st = init_state(model);
  Gradients<double> g{model.decoder.zeros_like(), {}};
  g.logits[2] = std::numeric_limits<double>::infinity();
  try {
    optimizer_step(st, g, 0.1, quiet_config());
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), Errc::non_finite);
  }
}

TEST(TotalLoss, PerfectPredictionLeavesOnlyRegularizers) {
  const auto &u = corpus()[0];
  const auto model = random_model(5);
  auto cfg = quiet_config();
  // w = 1 everywhere and reference equal to the audio estimate.
  FrameSample s = u.frames[0];
  EbAMap ones = uniform_eba(kGrid, 1.0);
  Mat<double> in(8, 1);
  for (std::size_t i = 0; i < 8; ++i) in(static_cast<Eigen::Index>(i), 0) = s.feature[i];
  const Mat<double> xa = decode_batch(in, model.decoder);
  for (std::size_t i = 0; i < s.reference.size(); ++i) s.reference[i] = xa(static_cast<Eigen::Index>(i), 0);
  const auto l = total_loss<double>({{&s, &ones}}, model, cfg);
  EXPECT_NEAR(l.recon, 0.0, 1e-28);
  const auto p = model.arm_profile().p;
  EXPECT_NEAR(l.total, cfg.alpha * psf_loss(p) + cfg.beta * budget_loss(p) + cfg.gamma * mask_loss(ones), 1e-15);
  EXPECT_EQ(mask_loss(ones), 0.0);
}

TEST(TotalLoss, DuplicatedSampleMatchesSingle) {
  const auto &u = corpus()[0];
  const auto model = random_model(6);
  const auto one = total_loss<double>(batch_of(u, 1), model, quiet_config());
  auto two = batch_of(u, 1);
  two.push_back(two.front());
  const auto dup = total_loss<double>(two, model, quiet_config());
  EXPECT_NEAR(one.total, dup.total, 1e-14);
  EXPECT_NEAR(one.recon, dup.recon, 1e-14);
}

TEST(TotalLoss, GradientIsSumOfComponentGradients) {
  const auto &u = corpus()[1];
  const auto model = random_model(7);
  const auto batch = batch_of(u, 3);
  auto run = [&](double a, double b) {
    auto cfg = quiet_config();
    cfg.alpha = a;
    cfg.beta = b;
    Gradients<double> g;
    total_loss<double>(batch, model, cfg, {}, &g);
    return flatten(g);
  };
  const auto full = run(0.1, 0.01), none = run(0.0, 0.0), psf = run(0.1, 0.0), bud = run(0.0, 0.01);
  double worst = 0.0;
  for (std::size_t i = 0; i < full.size(); ++i) {
    const double sum = none[i] + (psf[i] - none[i]) + (bud[i] - none[i]);
    worst = std::max(worst, std::abs(full[i] - sum));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(TotalLoss, ReconGradientWrtLogitsMatchesFiniteDifferences) {
  const auto &u = corpus()[2];
  auto model = random_model(8);
  auto cfg = quiet_config();
  cfg.alpha = cfg.beta = cfg.gamma = 0.0;
  const auto batch = batch_of(u, 2);
  Gradients<double> g;
  total_loss<double>(batch, model, cfg, {}, &g);
  const double h = 1e-3;
  double worst = 0.0;
  for (std::size_t i = 0; i < kArmsPerRotation; ++i) {
    auto probe = model;
    probe.logits.ell[i] += h;
    const double fp = total_loss<double>(batch, probe, cfg).recon;
    probe.logits.ell[i] -= 2.0 * h;
    const double fm = total_loss<double>(batch, probe, cfg).recon;
    const double fd = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - g.logits[i]) / std::max({std::abs(fd), std::abs(g.logits[i]), 1e-8}));
  }
  EXPECT_LT(worst, 5e-3);
}

TEST(TotalLoss, ReconGradientWrtDecoderMatchesFiniteDifferences) {
  const auto &u = corpus()[2];
  auto model = random_model(9);
  auto cfg = quiet_config();
  const auto batch = batch_of(u, 2);
  Gradients<double> g;
  total_loss<double>(batch, model, cfg, {}, &g);
  // Five-point stencil: many entries are ~1e-7, so roundoff must stay well below that.
  const double h = 1e-4;
  double worst = 0.0;
  auto &w = model.decoder.layers[3].weight;
  for (Eigen::Index i = 0; i < w.size(); i += 7) {
    const double keep = w.data()[i];
    auto at = [&](double step) {
      w.data()[i] = keep + step;
      return total_loss<double>(batch, model, cfg).total;
    };
    const double fd = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
    w.data()[i] = keep;
    const double an = g.decoder.layers[3].weight.data()[i];
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-7}));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(TotalLoss, RejectsShapeMismatchAndNonFinite) {
  const auto &u = corpus()[0];
  const auto model = random_model(10);
  EbAMap wrong = uniform_eba({8, 8}, 0.5);
  try {
    total_loss<double>({{&u.frames[0], &wrong}}, model, quiet_config());
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), Errc::shape_mismatch);
  }
  FrameSample bad = u.frames[0];
  bad.reference[5] = std::nan("");
  try {
    total_loss<double>({{&bad, &u.eba}}, model, quiet_config());
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), Errc::non_finite);
  }
  EXPECT_THROW(total_loss<double>({}, model, quiet_config()), Error);
}

TEST(TotalLoss, FrozenArmsUseUnitProfileAndNoLogitGradient) {
  const auto &u = corpus()[0];
  auto model = random_model(11);
  model.freeze_arms = true;
  Gradients<double> g;
  const auto l = total_loss<double>(batch_of(u, 2), model, quiet_config(), {}, &g);
  EXPECT_NEAR(l.psf, 1.0 / 13.0, 1e-15);
  for (double v : g.logits) EXPECT_EQ(v, 0.0);
}

TEST(Training, LossDecreasesOverFirstTenStepsWithoutRegularizers) {
  const auto &u = corpus()[0];
  auto cfg = quiet_config();
  cfg.alpha = cfg.beta = cfg.gamma = 0.0;
  cfg.lr = 1e-3;
  auto st = init_state(init_model<double>(tiny_shape(), cfg));
  const auto batch = batch_of(u, 4);
  double prev = std::numeric_limits<double>::infinity();
  for (int s = 0; s < 10; ++s) {
    Gradients<double> g;
    const double l = total_loss<double>(batch, st.model, cfg, {}, &g).total;
    EXPECT_LT(l, prev) << "step " << s;
    prev = l;
    clip_gradients(g, cfg.clip_norm);
    optimizer_step(st, g, cfg.lr, cfg);
  }
}

TEST(TrainLoop, ZeroEpochsReturnsInitialModel) {
  const auto &c = corpus();
  auto cfg = quiet_config();
  cfg.epochs = 0;
  const auto r = train_loop<double>({c[0], c[1]}, {c[2]}, tiny_shape(), cfg);
  const auto init = init_model<double>(tiny_shape(), cfg);
  EXPECT_EQ(r.model.decoder.layers[0].weight, init.decoder.layers[0].weight);
  EXPECT_EQ(r.model.logits.ell, init.logits.ell);
  EXPECT_EQ(r.best_epoch, 0u);
  EXPECT_DOUBLE_EQ(r.best_val_psnr, validation_psnr(init, {c[2]}, 1));
  ASSERT_EQ(r.log.size(), 1u);
}

TEST(TrainLoop, FixedSeedIsBitIdentical) {
  const auto &c = corpus();
  auto cfg = quiet_config();
  cfg.epochs = 2;
  cfg.val_every = 1;
  cfg.lr = 1e-3;
  auto shape = tiny_shape();
  shape.dropout = 0.1;
  const auto a = train_loop<float>({c[0], c[1]}, {c[2]}, shape, cfg);
  const auto b = train_loop<float>({c[0], c[1]}, {c[2]}, shape, cfg);
  for (std::size_t k = 0; k < a.model.decoder.layers.size(); ++k)
    EXPECT_EQ(a.model.decoder.layers[k].weight, b.model.decoder.layers[k].weight);
  EXPECT_EQ(a.model.logits.ell, b.model.logits.ell);
  EXPECT_EQ(a.best_val_psnr, b.best_val_psnr);
  ASSERT_EQ(a.log.size(), 3u);
  for (std::size_t e = 0; e < a.log.size(); ++e) EXPECT_EQ(a.log[e].loss.total, b.log[e].loss.total);
}

TEST(TrainLoop, ValidationScheduleAndBestSelection) {
  const auto &c = corpus();
  auto cfg = quiet_config();
  cfg.epochs = 3;
  cfg.val_every = 2;
  cfg.lr = 1e-3;
  std::size_t rows = 0;
  const auto r = train_loop<double>({c[0]}, {c[1]}, tiny_shape(), cfg, [&](const EpochLog &) { ++rows; });
  ASSERT_EQ(r.log.size(), 4u);
  EXPECT_EQ(rows, 4u);
  EXPECT_FALSE(std::isnan(r.log[0].val_psnr));
  EXPECT_TRUE(std::isnan(r.log[1].val_psnr));
  EXPECT_FALSE(std::isnan(r.log[2].val_psnr));
  EXPECT_FALSE(std::isnan(r.log[3].val_psnr));
  double best = -1e300;
  for (const auto &row : r.log)
    if (!std::isnan(row.val_psnr)) best = std::max(best, row.val_psnr);
  EXPECT_EQ(r.best_val_psnr, best);
  EXPECT_DOUBLE_EQ(validation_psnr(r.model, {c[1]}, 1), best);
  EXPECT_GT(r.log[1].loss.total, 0.0);
  EXPECT_LE(r.log[3].lr, r.log[1].lr);
}

TEST(TrainLoop, EmptySplitAndOverlapAreRejected) {
  const auto &c = corpus();
  try {
    train_loop<double>({}, {c[1]}, tiny_shape(), quiet_config());
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), Errc::empty_input);
  }
  EXPECT_THROW(train_loop<double>({c[0]}, {}, tiny_shape(), quiet_config()), Error);
  EXPECT_THROW(train_loop<double>({c[0]}, {c[0]}, tiny_shape(), quiet_config()), Error);
}

TEST(TrainLoop, RepeatedNonFiniteLossIsDivergence) {
  auto poisoned = corpus()[0];
  for (auto &f : poisoned.frames) f.reference[0] = std::nan("");
  auto cfg = quiet_config();
  cfg.epochs = 1;
  cfg.batch = 2;
  try {
    train_loop<double>({poisoned}, {corpus()[1]}, tiny_shape(), cfg);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), Errc::divergence);
  }
}

TEST(TrainLoop, ZeroFeatureAblationDecodesOneImage) {
  const auto &c = corpus();
  auto cfg = quiet_config();
  cfg.epochs = 1;
  cfg.zero_features = true;
  const auto r = train_loop<double>({c[0]}, {c[1]}, tiny_shape(), cfg);
  EXPECT_TRUE(r.model.zero_features);
  auto u = c[1];
  u.eba = uniform_eba(kGrid, 1.0);
  const auto rec = reconstruct_utterance(r.model, u, 1);
  for (std::size_t t = 1; t < rec.size(); ++t) EXPECT_EQ(rec[t], rec[0]);
}
