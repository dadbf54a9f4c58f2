#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include "coil.hpp"
#include "trajectory.hpp"

namespace sirem {

using ArmVector = std::array<double, kArmsPerRotation>;

struct ArmLogits {
  ArmVector ell{};
};

// Soft per-arm weights p = sigmoid(ell).
struct ArmProfile {
  ArmVector p{};

  static ArmProfile ones() {
    ArmProfile a;
    a.p.fill(1.0);
    return a;
  }
};

inline ArmProfile profile(const ArmLogits &logits) {
  ArmProfile out;
  for (std::size_t i = 0; i < kArmsPerRotation; ++i) {
    require(std::isfinite(logits.ell[i]), Errc::non_finite, "arm logit is not finite");
    out.p[i] = 1.0 / (1.0 + std::exp(-logits.ell[i]));
  }
  return out;
}

inline KSpaceFrame apply_profile(KSpaceFrame frame, const ArmProfile &prof) {
  require(frame.arms == kArmsPerRotation, Errc::shape_mismatch,
          "frame has " + std::to_string(frame.arms) + " arms, profile has 13");
  for (std::size_t c = 0; c < frame.coils; ++c)
    for (std::size_t a = 0; a < frame.arms; ++a)
      for (std::size_t n = 0; n < frame.samples; ++n) frame.at(c, a, n) *= prof.p[a];
  return frame;
}

// mean_j |IDFT(p)_j|^2 with the 1/R-scaled inverse DFT over the 13 arms.
inline double psf_loss(const ArmVector &p) {
  constexpr std::size_t r = kArmsPerRotation;
  double total = 0.0;
  for (std::size_t j = 0; j < r; ++j) {
    cplx acc{};
    for (std::size_t i = 0; i < r; ++i) {
      const double ph = 2.0 * std::numbers::pi * static_cast<double>(i * j) / static_cast<double>(r);
      acc += p[i] * cplx(std::cos(ph), std::sin(ph));
    }
    total += std::norm(acc / static_cast<double>(r));
  }
  return total / static_cast<double>(r);
}

// Parseval gives psf_loss = sum(p^2) / R^2, hence this gradient.
inline ArmVector psf_loss_grad(const ArmVector &p) {
  constexpr double r = static_cast<double>(kArmsPerRotation);
  ArmVector g{};
  for (std::size_t i = 0; i < kArmsPerRotation; ++i) g[i] = 2.0 * p[i] / (r * r);
  return g;
}

inline constexpr double kDefaultArmBudget = 2.0;

inline double budget_loss(const ArmVector &p, double budget = kDefaultArmBudget) {
  double sum = 0.0;
  for (double v : p) sum += v;
  return (sum - budget) * (sum - budget) + sum / static_cast<double>(kArmsPerRotation);
}

inline ArmVector budget_loss_grad(const ArmVector &p, double budget = kDefaultArmBudget) {
  double sum = 0.0;
  for (double v : p) sum += v;
  ArmVector g{};
  g.fill(2.0 * (sum - budget) + 1.0 / static_cast<double>(kArmsPerRotation));
  return g;
}

// Chain rule through the sigmoid: dL/dell = dL/dp * p * (1 - p).
inline ArmVector policy_backward(const ArmProfile &prof, const ArmVector &upstream) {
  ArmVector g{};
  for (std::size_t i = 0; i < kArmsPerRotation; ++i)
    g[i] = upstream[i] * prof.p[i] * (1.0 - prof.p[i]);
  return g;
}

// Measurement branch over precomputed per-arm images:
// x^m = |sum_i p_i z_i| / max_j |sum_i p_i z_i|.
struct MriBranchCache {
  ComplexImage combined;
  RealImage magnitude;
  std::size_t argmax = 0;
  double peak = 0.0;
};

template <typename ArmImageT>
RealImage mri_branch(const std::vector<ArmImageT> &arm_images, const ArmProfile &prof,
                     MriBranchCache *cache = nullptr) {
  require(arm_images.size() == kArmsPerRotation, Errc::shape_mismatch, "need 13 arm images");
  const GridSize g = arm_images.front().grid();
  ComplexImage z(g);
  for (std::size_t a = 0; a < kArmsPerRotation; ++a) {
    const auto &img = arm_images[a];
    const double w = prof.p[a];
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += w * cplx(img[i]);
  }
  RealImage mag(g);
  double peak = 0.0;
  std::size_t arg = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    mag[i] = std::abs(z[i]);
    if (mag[i] > peak) {
      peak = mag[i];
      arg = i;
    }
  }
  RealImage out(g);
  if (peak > 0.0)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mag[i] / peak;
  if (cache) *cache = {std::move(z), std::move(mag), arg, peak};
  return out;
}

// Gradient of sum(upstream .* x^m) with respect to p, using the subgradient of
// the max at the first maximizing pixel.
template <typename ArmImageT>
ArmVector mri_branch_backward(const std::vector<ArmImageT> &arm_images, const MriBranchCache &cache,
                              const RealImage &upstream) {
  ArmVector grad{};
  if (cache.peak <= 0.0) return grad;
  const double m = cache.peak;
  double weighted = 0.0;
  for (std::size_t i = 0; i < upstream.size(); ++i) weighted += upstream[i] * cache.magnitude[i];
  // dL/d|z_j| = g_j / M, plus -sum(g m)/M^2 at the argmax.
  RealImage dmag(upstream.grid());
  for (std::size_t i = 0; i < dmag.size(); ++i) dmag[i] = upstream[i] / m;
  dmag[cache.argmax] -= weighted / (m * m);
  for (std::size_t a = 0; a < kArmsPerRotation; ++a) {
    const auto &img = arm_images[a];
    double acc = 0.0;
    for (std::size_t i = 0; i < dmag.size(); ++i) {
      const double mi = cache.magnitude[i];
      if (mi <= 0.0 || dmag[i] == 0.0) continue;
      acc += dmag[i] * (std::conj(cache.combined[i]) * cplx(img[i])).real() / mi;
    }
    grad[a] = acc;
  }
  return grad;
}

}  // namespace sirem
