#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "sirem/policy.hpp"
#include "test_util.hpp"

using namespace sirem;

namespace {

ArmVector random_p(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  ArmVector p{};
  for (double &v : p) v = u(rng);
  return p;
}

template <typename F>
ArmVector central_difference(F &&f, ArmVector x, double h) {
  ArmVector g{};
  for (std::size_t i = 0; i < x.size(); ++i) {
    // Fourth-order five-point stencil.
    auto at = [&](double step) {
      ArmVector y = x;
      y[i] += step;
      return f(y);
    };
    g[i] = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
  }
  return g;
}

double rel_err(double a, double b) {
  const double den = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / den;
}

}  // namespace

TEST(Profile, LogitsStartAtOneHalf) {
  const auto p = profile(ArmLogits{});
  for (double v : p.p) EXPECT_EQ(v, 0.5);
  ArmLogits bad;
  bad.ell[3] = std::nan("");
  EXPECT_THROW(profile(bad), Error);
}

TEST(Profile, ApplyScalesEachArm) {
  KSpaceFrame f(2, 13, 3);
  for (auto &v : f.data) v = cplx(1.0, -1.0);
  ArmProfile prof;
  for (std::size_t i = 0; i < 13; ++i) prof.p[i] = 0.1 * static_cast<double>(i);
  const auto out = apply_profile(f, prof);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t a = 0; a < 13; ++a)
      for (std::size_t n = 0; n < 3; ++n) EXPECT_EQ(out.at(c, a, n), prof.p[a] * cplx(1.0, -1.0));
  KSpaceFrame wrong(2, 12, 3);
  EXPECT_THROW(apply_profile(wrong, prof), Error);
}

TEST(PsfLoss, ClosedFormAtOneHalf) {
  ArmVector p{};
  p.fill(0.5);
  EXPECT_NEAR(psf_loss(p), 0.25 / 13.0, 1e-12);
}

TEST(PsfLoss, EqualsMeanSquareOverThirteen) {
  const auto p = random_p(1);
  double m = 0.0;
  for (double v : p) m += v * v;
  EXPECT_NEAR(psf_loss(p), m / 13.0 / 13.0, 1e-14);
}

TEST(PsfLoss, GradientMatchesFiniteDifferences) {
  const auto p = random_p(2);
  const auto g = psf_loss_grad(p);
  const auto fd = central_difference([](const ArmVector &x) { return psf_loss(x); }, p, 1e-2);
  for (std::size_t i = 0; i < 13; ++i) EXPECT_LT(rel_err(g[i], fd[i]), 1e-10);
}

TEST(BudgetLoss, GradientMatchesFiniteDifferences) {
  const auto p = random_p(3);
  const auto g = budget_loss_grad(p);
  const auto fd = central_difference([](const ArmVector &x) { return budget_loss(x); }, p, 1e-2);
  for (std::size_t i = 0; i < 13; ++i) EXPECT_LT(rel_err(g[i], fd[i]), 1e-10);
}

TEST(BudgetLoss, GradientDescentReachesStationarySum) {
  ArmVector p{};
  p.fill(0.5);
  for (int it = 0; it < 2000; ++it) {
    const auto g = budget_loss_grad(p);
    for (std::size_t i = 0; i < 13; ++i) p[i] -= 0.01 * g[i];
  }
  double s = 0.0;
  for (double v : p) s += v;
  EXPECT_NEAR(s, 1.96154, 1e-4);
  EXPECT_NEAR(s, kDefaultArmBudget - 1.0 / 26.0, 1e-9);
}

TEST(PolicyBackward, SigmoidChainMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  ArmLogits l;
  for (double &v : l.ell) v = n(rng);
  auto loss = [](const ArmVector &ell) {
    const auto p = profile(ArmLogits{ell}).p;
    return psf_loss(p) + budget_loss(p);
  };
  const auto prof = profile(l);
  ArmVector up{};
  const auto gp = psf_loss_grad(prof.p), gb = budget_loss_grad(prof.p);
  for (std::size_t i = 0; i < 13; ++i) up[i] = gp[i] + gb[i];
  const auto g = policy_backward(prof, up);
  const auto fd = central_difference(loss, l.ell, 1e-3);
  for (std::size_t i = 0; i < 13; ++i) EXPECT_LT(rel_err(g[i], fd[i]), 1e-10);
}

TEST(MriBranch, OnesProfileMatchesMagnitudeNormalizedSum) {
  std::vector<ComplexImage> arms;
  for (std::size_t a = 0; a < 13; ++a) arms.push_back(sirem::testing::random_image({6, 7}, a + 1));
  ComplexImage sum(GridSize{6, 7});
  for (const auto &a : arms)
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += a[i];
  const auto x = mri_branch(arms, ArmProfile::ones());
  const auto ref = magnitude_normalize(sum);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], ref[i], 1e-14);
}

TEST(MriBranch, BackwardMatchesFiniteDifferences) {
  std::vector<ComplexImage> arms;
  for (std::size_t a = 0; a < 13; ++a) arms.push_back(sirem::testing::random_image({5, 5}, 40 + a));
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  RealImage up(GridSize{5, 5});
  for (double &v : up) v = n(rng);
  const auto p = random_p(7);
  auto f = [&](const ArmVector &q) {
    const auto x = mri_branch(arms, ArmProfile{q});
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += up[i] * x[i];
    return s;
  };
  MriBranchCache cache;
  mri_branch(arms, ArmProfile{p}, &cache);
  const auto g = mri_branch_backward(arms, cache, up);
  const auto fd = central_difference(f, p, 1e-6);
  for (std::size_t i = 0; i < 13; ++i) EXPECT_NEAR(g[i], fd[i], 1e-7 * (1.0 + std::abs(fd[i])));
}

TEST(MriBranch, RequiresThirteenArmImages) {
  std::vector<ComplexImage> arms(12, ComplexImage(GridSize{3, 3}));
  EXPECT_THROW(mri_branch(arms, ArmProfile::ones()), Error);
}

TEST(Profile, LargeLogitStaysBelowOne) {
  ArmLogits l;
  l.ell[4] = 20.0;
  const auto p = profile(l).p;
  EXPECT_LT(p[4], 1.0);
  EXPECT_NEAR(p[4], 1.0 - 2.06e-9, 1e-11);
}

TEST(Profile, HalfProfileHalvesAndIndicatorSuppressesEnergy) {
  KSpaceFrame f(3, 13, 4);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto &v : f.data) v = {n(rng), n(rng)};
  ArmProfile half;
  half.p.fill(0.5);
  const auto h = apply_profile(f, half);
  for (std::size_t i = 0; i < f.data.size(); ++i) EXPECT_EQ(h.data[i], 0.5 * f.data[i]);

  const double eps = 1e-3;
  ArmProfile ind;
  ind.p.fill(eps);
  ind.p[0] = ind.p[7] = 1.0 - eps;
  const auto out = apply_profile(f, ind);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t a = 0; a < 13; ++a) {
      if (a == 0 || a == 7) continue;
      double before = 0.0, after = 0.0;
      for (std::size_t s = 0; s < 4; ++s) {
        before += std::norm(f.at(c, a, s));
        after += std::norm(out.at(c, a, s));
      }
      EXPECT_NEAR(after / before, eps * eps, 1e-15);
    }
}

TEST(Regularizers, PlugInValues) {
  ArmVector zero{};
  EXPECT_EQ(psf_loss(zero), 0.0);
  EXPECT_EQ(budget_loss(zero, 2.0), 4.0);
  ArmVector p{};
  p.fill(2.0 / 13.0);
  EXPECT_NEAR(budget_loss(p, 2.0), 2.0 / 13.0, 1e-14);
  const auto g = policy_backward(profile(ArmLogits{}), ArmVector{});
  for (double v : g) EXPECT_EQ(v, 0.0);
}
