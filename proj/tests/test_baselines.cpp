#include <gtest/gtest.h>

#include <random>

#include "sirem/baselines.hpp"
#include "sirem/metrics.hpp"
#include "sirem/phantom.hpp"
#include "test_util.hpp"

using namespace sirem;

namespace {

ComplexImage as_complex(const RealImage &r) {
  ComplexImage c(r.grid());
  for (std::size_t i = 0; i < r.size(); ++i) c[i] = r[i];
  return c;
}

// Shared 2-of-13 phantom setup; built once because the solves dominate runtime.
struct Scene {
  PhantomSequence seq;
  Trajectory traj;
  SensitivityMaps maps;
  std::vector<KSpaceFrame> frames;
  Trajectory sub_traj;
  std::unique_ptr<NufftPlan> full_plan, sub_plan;
  std::unique_ptr<SenseOperator> op;
  std::vector<KSpaceFrame> sub_frames;

  static const Scene &get() {
    static const Scene s = [] {
      Scene s;
      PhantomConfig cfg;
      cfg.frames = 3;
      cfg.feature_dim = 8;
      s.seq = generate(cfg);
      s.traj = gen_spiral(13, cfg.samples_per_arm, cfg.spiral_turns, cfg.grid);
      s.full_plan = std::make_unique<NufftPlan>(s.traj);
      s.maps = simulate_sensitivities(cfg.coils, cfg.grid, 3);
      s.frames = simulate_acquisition(s.seq, *s.full_plan, s.maps, cfg.noise_sigma, 1);
      for (const auto &f : s.frames) {
        auto u = undersample(f, s.traj, default_undersampled_arms());
        s.sub_traj = u.traj;
        s.sub_frames.push_back(std::move(u.frame));
      }
      s.sub_plan = std::make_unique<NufftPlan>(s.sub_traj);
      s.op = std::make_unique<SenseOperator>(*s.sub_plan, s.maps);
      return s;
    }();
    return s;
  }
};

}  // namespace

TEST(PowerIteration, IdentityAndScaledIdentity) {
  const GridSize g{8, 8};
  auto id = [](const ComplexImage &x) { return x; };
  EXPECT_NEAR(power_iteration_lipschitz(id, id, g), 1.0, 1e-6);
  auto twice = [](const ComplexImage &x) {
    ComplexImage y = x;
    for (auto &v : y) v *= 2.0;
    return y;
  };
  EXPECT_NEAR(power_iteration_lipschitz(twice, id, g), 2.0, 1e-6);
  EXPECT_NEAR(power_iteration_lipschitz(twice, twice, g), 4.0, 1e-6);
}

TEST(PowerIteration, EstimateIsNonDecreasing) {
  const GridSize g{6, 6};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  RealImage diag(g);
  for (double &v : diag) v = u(rng);
  auto A = [&](const ComplexImage &x) {
    ComplexImage y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= diag[i];
    return y;
  };
  std::vector<double> hist;
  const double est = power_iteration_lipschitz(A, A, g, 20, 7, &hist);
  ASSERT_EQ(hist.size(), 20u);
  for (std::size_t k = 1; k < hist.size(); ++k) EXPECT_GE(hist[k], hist[k - 1] - 1e-12);
  const double top = *std::max_element(diag.begin(), diag.end());
  EXPECT_LE(est, top * top + 1e-9);
}

TEST(SenseOperatorTest, AdjointIdentity) {
  const GridSize g{16, 16};
  const auto traj = sirem::testing::small_spiral(g);
  const NufftPlan plan(traj);
  const auto maps = simulate_sensitivities(3, g, 2);
  const SenseOperator op(plan, maps);
  const auto x = sirem::testing::random_image(g, 1);
  const auto y = sirem::testing::random_samples(op.data_size(), 2);
  const auto ax = op.forward(x);
  const auto ahy = op.adjoint(y);
  const cplx lhs = inner(std::span<const cplx>(ax), std::span<const cplx>(y));
  const cplx rhs = inner(x.span(), ahy.span());
  EXPECT_LT(std::abs(lhs - rhs) / std::abs(lhs), 1e-10);
}

TEST(Wavelet, TransformIsOrthogonal) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = sirem::testing::random_image({128, 128}, seed);
    const auto c = wavelet::forward(x, 3);
    const double nx = l2_norm(x.span()), nc = l2_norm(c.span());
    EXPECT_NEAR(nc, nx, 1e-10 * nx);
    const auto back = wavelet::inverse(c, 3);
    EXPECT_LT(sirem::testing::rel_l2(back.span(), x.span()), 1e-12);
  }
}

TEST(Wavelet, PaddedEmbeddingPreservesNorm) {
  const GridSize g{84, 84};
  EXPECT_EQ(wavelet::padded_grid(g), (GridSize{128, 128}));
  const auto x = sirem::testing::random_image(g, 3);
  const auto c = wavelet::forward(wavelet::embed(x, {128, 128}), 3);
  EXPECT_NEAR(l2_norm(c.span()), l2_norm(x.span()), 1e-10 * l2_norm(x.span()));
  const auto back = wavelet::crop(wavelet::inverse(c, 3), g);
  EXPECT_LT(sirem::testing::rel_l2(back.span(), x.span()), 1e-12);
}

TEST(Wavelet, ConstantImageHasOnlyCoarseCoefficients) {
  ComplexImage x(GridSize{32, 32}, cplx(2.0, -1.0));
  const auto c = wavelet::forward(x, 3);
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t q = 0; q < 32; ++q)
      if (r >= 4 || q >= 4) EXPECT_LT(std::abs(c(r, q)), 1e-12);
}

TEST(Wavelet, RejectsIncompatibleGrids) {
  EXPECT_THROW(wavelet::forward(ComplexImage(GridSize{84, 84}), 3), Error);
  EXPECT_THROW(wavelet::forward(ComplexImage(GridSize{8, 8}), 3), Error);
}

TEST(Wavelet, SoftThresholdShrinksMagnitudeKeepsPhase) {
  ComplexImage c(GridSize{1, 3});
  c[0] = cplx(3.0, 4.0);
  c[1] = cplx(0.3, 0.4);
  c[2] = cplx(-1.0, 0.0);
  wavelet::soft_threshold(c, 1.0);
  EXPECT_NEAR(std::abs(c[0] - cplx(2.4, 3.2)), 0.0, 1e-15);
  EXPECT_EQ(c[1], cplx{});
  EXPECT_EQ(c[2], cplx{});
}

TEST(TotalVariation, ConstantImageHasZeroGradient) {
  const ComplexImage x(GridSize{10, 12}, cplx(0.4, 0.2));
  for (const auto &v : tv::gradient(x, 1e-3)) EXPECT_EQ(v, cplx{});
  EXPECT_NEAR(tv::value(x, 1e-3), 120 * 1e-3, 1e-15);
}

TEST(TotalVariation, GradientMatchesFiniteDifferences) {
  const auto x = sirem::testing::random_image({7, 6}, 5);
  const double eps = 0.1, h = 1e-6;
  const auto g = tv::gradient(x, eps);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (const cplx dir : {cplx(1.0, 0.0), cplx(0.0, 1.0)}) {
      ComplexImage a = x, b = x;
      a[i] += h * dir;
      b[i] -= h * dir;
      const double fd = (tv::value(a, eps) - tv::value(b, eps)) / (2.0 * h);
      const double an = dir.real() != 0.0 ? g[i].real() : g[i].imag();
      EXPECT_NEAR(an, fd, 1e-7);
    }
  }
}

TEST(TotalVariation, LastRowAndColumnDifferencesAreZero) {
  const auto x = sirem::testing::random_image({5, 4}, 6);
  const auto d = tv::differences(x);
  for (std::size_t r = 0; r < 5; ++r) EXPECT_EQ(d.dh(r, 3), cplx{});
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(d.dv(4, c), cplx{});
}

TEST(Gridding, EqualsSenseCombineBitExactly) {
  const auto &s = Scene::get();
  const auto a = recon_gridding(s.frames[0], *s.full_plan, s.maps);
  const auto b = sense_combine(s.frames[0], *s.full_plan, s.maps);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.method, Method::gridding);
}

TEST(Gridding, ZeroInputGivesZeroImage) {
  const auto &s = Scene::get();
  KSpaceFrame z(s.maps.coils, 13, s.traj.samples);
  for (double v : recon_gridding(z, *s.full_plan, s.maps).image) EXPECT_EQ(v, 0.0);
  KSpaceFrame zs(s.maps.coils, 2, s.traj.samples);
  for (double v : recon_wavelet(zs, *s.op, {}).image) EXPECT_EQ(v, 0.0);
  for (double v : recon_tv(zs, *s.op, CSConfig::tv_defaults()).image) EXPECT_EQ(v, 0.0);
}

TEST(Gridding, UndersamplingLowersPsnr) {
  const auto &s = Scene::get();
  for (std::size_t f = 0; f < s.frames.size(); ++f) {
    const double full = psnr(recon_gridding(s.frames[f], *s.full_plan, s.maps).image, s.seq.frames[f]);
    const double sub = psnr(recon_gridding(s.sub_frames[f], *s.sub_plan, s.maps).image, s.seq.frames[f]);
    EXPECT_LT(sub, full);
  }
}

TEST(Undersample, CopiesSelectedArms) {
  const auto &s = Scene::get();
  const auto u = undersample(s.frames[1], s.traj, {2, 9});
  EXPECT_EQ(u.frame.arms, 2u);
  EXPECT_EQ(u.traj.arms, 2u);
  for (std::size_t c = 0; c < s.maps.coils; ++c)
    for (std::size_t n = 0; n < s.traj.samples; n += 97) {
      EXPECT_EQ(u.frame.at(c, 0, n), s.frames[1].at(c, 2, n));
      EXPECT_EQ(u.frame.at(c, 1, n), s.frames[1].at(c, 9, n));
    }
}

TEST(IterativeRecon, ZeroIterationsReproduceGridding) {
  const auto &s = Scene::get();
  const auto grid = recon_gridding(s.sub_frames[0], *s.sub_plan, s.maps).image;
  CSConfig cfg;
  cfg.iters = 0;
  for (const auto &img : {recon_wavelet(s.sub_frames[0], *s.op, cfg).image,
                          recon_tv(s.sub_frames[0], *s.op, cfg).image})
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(img[i], grid[i], 1e-12);
}

TEST(IterativeRecon, ObjectiveMonotoneAndResidualDecreases) {
  const auto &s = Scene::get();
  for (std::size_t f = 0; f < s.sub_frames.size(); ++f) {
    CSReport w, t;
    const auto wi = recon_wavelet(s.sub_frames[f], *s.op, CSConfig::wavelet_defaults(), &w);
    const auto ti = recon_tv(s.sub_frames[f], *s.op, CSConfig::tv_defaults(), &t);
    for (const auto *r : {&w, &t}) {
      ASSERT_EQ(r->trace.size(), 100u);
      EXPECT_LE(r->objective_final, r->objective_initial);
      EXPECT_LE(r->trace.front(), r->objective_initial + 1e-12);
      for (std::size_t k = 1; k < r->trace.size(); ++k) EXPECT_LE(r->trace[k], r->trace[k - 1] + 1e-12);
      EXPECT_LE(r->residual_final, r->residual_initial);
      EXPECT_GT(r->lipschitz, 0.0);
    }
    for (const auto &img : {wi.image, ti.image})
      for (double v : img) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    EXPECT_EQ(wi.method, Method::wavelet);
    EXPECT_EQ(ti.method, Method::tv);
  }
}

TEST(IterativeRecon, WaveletBeatsGriddingOnUndersampledFrames) {
  const auto &s = Scene::get();
  for (std::size_t f = 0; f < s.sub_frames.size(); ++f) {
    const double g = psnr(recon_gridding(s.sub_frames[f], *s.sub_plan, s.maps).image, s.seq.frames[f]);
    const double w = psnr(recon_wavelet(s.sub_frames[f], *s.op, {}).image, s.seq.frames[f]);
    EXPECT_GE(w, g + 1.0) << "frame " << f;
  }
}

TEST(IterativeRecon, HugeLambdaZeroesTheWaveletImage) {
  const auto &s = Scene::get();
  CSConfig cfg;
  cfg.lambda = 1e6;
  for (double v : recon_wavelet(s.sub_frames[0], *s.op, cfg).image) EXPECT_EQ(v, 0.0);
}

TEST(IterativeRecon, LargeTvWeightFlattensTheImage) {
  const auto &s = Scene::get();
  CSConfig cfg = CSConfig::tv_defaults();
  cfg.lambda = 1.0;
  const auto grid = recon_gridding(s.sub_frames[0], *s.sub_plan, s.maps).image;
  const auto flat = recon_tv(s.sub_frames[0], *s.op, cfg).image;
  EXPECT_LT(tv::value(as_complex(flat), cfg.tv_epsilon), 0.8 * tv::value(as_complex(grid), cfg.tv_epsilon));
}

TEST(IterativeRecon, InvalidConfigurationIsRejected) {
  const auto &s = Scene::get();
  CSConfig bad;
  bad.lambda = 0.0;
  EXPECT_THROW(recon_wavelet(s.sub_frames[0], *s.op, bad), Error);
  bad = {};
  bad.step = -1.0;
  EXPECT_THROW(recon_tv(s.sub_frames[0], *s.op, bad), Error);
  KSpaceFrame wrong(s.maps.coils, 3, s.traj.samples);
  EXPECT_THROW(recon_wavelet(wrong, *s.op, {}), Error);
}

TEST(IterativeRecon, Deterministic) {
  const auto &s = Scene::get();
  EXPECT_EQ(recon_wavelet(s.sub_frames[1], *s.op, {}).image, recon_wavelet(s.sub_frames[1], *s.op, {}).image);
}
