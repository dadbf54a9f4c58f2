#include <gtest/gtest.h>

#include <cmath>

#include "sirem/coil.hpp"
#include "sirem/phantom.hpp"
#include "test_util.hpp"

using namespace sirem;

namespace {

double psnr_db(const RealImage &x, const RealImage &ref) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - ref[i]) * (x[i] - ref[i]);
  return 10.0 * std::log10(static_cast<double>(x.size()) / s);
}

}  // namespace

TEST(NormalizeKspace, PeakBecomesOne) {
  KSpaceFrame f(2, 13, 4);
  auto s = sirem::testing::random_samples(f.data.size(), 3);
  std::copy(s.begin(), s.end(), f.data.begin());
  double peak = 0.0;
  for (auto v : s) peak = std::max(peak, std::abs(v));
  const auto n = normalize_kspace(f);
  double np = 0.0;
  for (auto v : n.data) np = std::max(np, std::abs(v));
  EXPECT_NEAR(np, 1.0, 1e-15);
  EXPECT_NEAR(n.norm_scale, peak, 1e-15);
  EXPECT_NEAR(std::abs(n.data[5] * n.norm_scale - f.data[5]), 0.0, 1e-13);
}

TEST(NormalizeKspace, AllZeroFrameIsRejected) {
  try {
    normalize_kspace(KSpaceFrame(2, 13, 4));
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), Errc::all_zero_input);
  }
}

TEST(Sensitivities, SumOfSquaresIsOne) {
  const auto m = simulate_sensitivities(8, {40, 36}, 5);
  for (std::size_t p = 0; p < m.grid.pixels(); ++p) {
    double ss = 0.0;
    for (std::size_t c = 0; c < 8; ++c) ss += std::norm(m.at(c, p));
    EXPECT_NEAR(ss, 1.0, 1e-12);
  }
}

TEST(Sensitivities, DeterministicPerSeed) {
  const auto a = simulate_sensitivities(4, {16, 16}, 9);
  const auto b = simulate_sensitivities(4, {16, 16}, 9);
  const auto c = simulate_sensitivities(4, {16, 16}, 10);
  EXPECT_EQ(a.maps, b.maps);
  EXPECT_NE(a.maps, c.maps);
}

namespace {

std::vector<ComplexImage> coil_images_of(const SensitivityMaps &m) {
  std::vector<ComplexImage> out;
  for (std::size_t c = 0; c < m.coils; ++c) {
    ComplexImage im(m.grid);
    for (std::size_t p = 0; p < im.size(); ++p) im[p] = m.at(c, p);
    out.push_back(im);
  }
  return out;
}

// Largest and RMS deviation between estimate and truth after referencing truth to coil 0.
std::pair<double, double> walsh_error(const SensitivityMaps &est, const SensitivityMaps &truth) {
  double worst = 0.0, ss = 0.0;
  for (std::size_t p = 0; p < truth.grid.pixels(); ++p) {
    const cplx ref = std::conj(truth.at(0, p)) / std::abs(truth.at(0, p));
    for (std::size_t c = 0; c < truth.coils; ++c) {
      const double e = std::abs(est.at(c, p) - truth.at(c, p) * ref);
      worst = std::max(worst, e);
      ss += e * e;
    }
  }
  return {worst, std::sqrt(ss / static_cast<double>(truth.grid.pixels() * truth.coils))};
}

}  // namespace

TEST(Walsh, ExactForSpatiallyConstantProfiles) {
  const GridSize g{16, 16};
  SensitivityMaps truth(4, g);
  const cplx v[4] = {{0.5, 0.2}, {-0.3, 0.4}, {0.1, -0.6}, {0.2, 0.1}};
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t p = 0; p < g.pixels(); ++p) truth.at(c, p) = v[c];
  sos_normalize(truth);
  const auto est = walsh_estimate(coil_images_of(truth));
  EXPECT_LT(walsh_error(est, truth).first, 1e-9);
}

TEST(Walsh, CloseToSmoothProfilesAndPhaseReferenced) {
  const GridSize g{84, 84};
  const auto truth = simulate_sensitivities(8, g, 2);
  const auto est = walsh_estimate(coil_images_of(truth));
  for (std::size_t p = 0; p < g.pixels(); ++p) {
    EXPECT_NEAR(est.at(0, p).imag(), 0.0, 1e-12);
    EXPECT_GE(est.at(0, p).real(), 0.0);
  }
  const auto [worst, rms] = walsh_error(est, truth);
  EXPECT_LT(worst, 0.1);
  EXPECT_LT(rms, 0.02);
}

TEST(Walsh, RejectsMismatchedImages) {
  std::vector<ComplexImage> imgs{ComplexImage(GridSize{8, 8}), ComplexImage(GridSize{8, 9})};
  EXPECT_THROW(walsh_estimate(imgs), Error);
  EXPECT_THROW(walsh_estimate({}), Error);
}

TEST(SenseCombine, FullySampledRoundTripIsAbove25dB) {
  PhantomConfig cfg;
  cfg.frames = 1;
  const auto seq = generate(cfg);
  const auto traj = gen_spiral(13, cfg.samples_per_arm, cfg.spiral_turns, cfg.grid);
  const NufftPlan plan(traj);
  const auto maps = simulate_sensitivities(cfg.coils, cfg.grid, 3);
  const auto k = normalize_kspace(simulate_raw(seq.frames[0], plan, maps, 0.0, 1));
  const auto rec = sense_combine(k, plan, maps);
  EXPECT_EQ(rec.method, Method::gridding);
  EXPECT_GE(psnr_db(rec.image, seq.frames[0]), 25.0);
}

TEST(SenseCombine, OutputPeakIsOne) {
  const GridSize g{24, 24};
  const auto traj = sirem::testing::small_spiral(g);
  const NufftPlan plan(traj);
  const auto maps = simulate_sensitivities(3, g, 1);
  KSpaceFrame f(3, 13, traj.samples);
  auto s = sirem::testing::random_samples(f.data.size(), 4);
  std::copy(s.begin(), s.end(), f.data.begin());
  const auto rec = sense_combine(f, plan, maps);
  double peak = 0.0;
  for (double v : rec.image) {
    EXPECT_GE(v, 0.0);
    peak = std::max(peak, v);
  }
  EXPECT_NEAR(peak, 1.0, 1e-15);
}

TEST(SenseCombine, CoilCountMismatchIsReported) {
  const GridSize g{16, 16};
  const auto traj = sirem::testing::small_spiral(g);
  const auto maps = simulate_sensitivities(3, g, 1);
  KSpaceFrame f(2, 13, traj.samples);
  try {
    sense_combine(f, traj, maps);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), Errc::shape_mismatch);
  }
}

TEST(ArmImages, UnitWeightsReproduceCoilCombine) {
  const GridSize g{20, 20};
  const auto traj = sirem::testing::small_spiral(g);
  const NufftPlan plan(traj);
  const auto maps = simulate_sensitivities(2, g, 7);
  KSpaceFrame f(2, 13, traj.samples);
  auto s = sirem::testing::random_samples(f.data.size(), 8);
  std::copy(s.begin(), s.end(), f.data.begin());
  const auto arms = compute_arm_images(f, plan, maps);
  ASSERT_EQ(arms.size(), 13u);
  const auto full = coil_combine(f, plan, maps);
  ComplexImage sum(g);
  for (const auto &a : arms)
    for (std::size_t p = 0; p < sum.size(); ++p) sum[p] += a[p];
  EXPECT_LT(sirem::testing::rel_l2(sum.span(), full.span()), 1e-12);
}

TEST(ArmImages, WeightedSumMatchesWeightedAdjoint) {
  const GridSize g{20, 20};
  const auto traj = sirem::testing::small_spiral(g);
  const NufftPlan plan(traj);
  const auto maps = simulate_sensitivities(2, g, 7);
  KSpaceFrame f(2, 13, traj.samples);
  auto s = sirem::testing::random_samples(f.data.size(), 9);
  std::copy(s.begin(), s.end(), f.data.begin());
  std::vector<double> w(13);
  for (std::size_t i = 0; i < 13; ++i) w[i] = 0.1 * static_cast<double>(i);
  const auto arms = compute_arm_images(f, plan, maps);
  ComplexImage sum(g);
  for (std::size_t a = 0; a < 13; ++a)
    for (std::size_t p = 0; p < sum.size(); ++p) sum[p] += w[a] * arms[a][p];
  const auto direct = coil_combine(f, plan, maps, w);
  EXPECT_LT(sirem::testing::rel_l2(sum.span(), direct.span()), 1e-12);
}

TEST(EstimateFromUtterance, MapsAreUnitSumOfSquaresInsideObject) {
  PhantomConfig cfg;
  cfg.grid = {40, 40};
  cfg.frames = 3;
  cfg.samples_per_arm = 256;
  cfg.feature_dim = 8;
  const auto seq = generate(cfg);
  const auto traj = gen_spiral(13, cfg.samples_per_arm, cfg.spiral_turns, cfg.grid);
  const NufftPlan plan(traj);
  const auto maps = simulate_sensitivities(4, cfg.grid, 3);
  const auto frames = simulate_acquisition(seq, plan, maps, 0.0, 1);
  const auto est = estimate_from_utterance(frames, plan);
  for (std::size_t p = 0; p < cfg.grid.pixels(); ++p) {
    double ss = 0.0;
    for (std::size_t c = 0; c < 4; ++c) ss += std::norm(est.at(c, p));
    if (ss > 0.0) {
      EXPECT_NEAR(ss, 1.0, 1e-9);
    }
  }
  EXPECT_THROW(estimate_from_utterance({}, plan), Error);
}
