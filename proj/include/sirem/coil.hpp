#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "array.hpp"
#include "nufft.hpp"
#include "trajectory.hpp"
#include "types.hpp"

namespace sirem {

// Complex coil sensitivities, [coils, rows, cols].
struct SensitivityMaps {
  std::size_t coils = 0;
  GridSize grid;
  std::vector<cplx> maps;

  SensitivityMaps() = default;
  SensitivityMaps(std::size_t c, GridSize g) : coils(c), grid(g), maps(c * g.pixels()) {}

  cplx &at(std::size_t c, std::size_t pix) { return maps[c * grid.pixels() + pix]; }
  const cplx &at(std::size_t c, std::size_t pix) const { return maps[c * grid.pixels() + pix]; }
  std::span<const cplx> coil(std::size_t c) const {
    return std::span<const cplx>(maps).subspan(c * grid.pixels(), grid.pixels());
  }
};

// One 13-arm multi-coil block, [coils, arms, samples].
struct KSpaceFrame {
  std::size_t coils = 0;
  std::size_t arms = kArmsPerRotation;
  std::size_t samples = 0;
  std::vector<cplx> data;
  std::string traj_ref;
  double norm_scale = 1.0;

  KSpaceFrame() = default;
  KSpaceFrame(std::size_t c, std::size_t a, std::size_t n)
      : coils(c), arms(a), samples(n), data(c * a * n) {}

  std::size_t per_coil() const { return arms * samples; }
  std::span<cplx> coil(std::size_t c) {
    return std::span<cplx>(data).subspan(c * per_coil(), per_coil());
  }
  std::span<const cplx> coil(std::size_t c) const {
    return std::span<const cplx>(data).subspan(c * per_coil(), per_coil());
  }
  cplx &at(std::size_t c, std::size_t arm, std::size_t n) {
    return data[(c * arms + arm) * samples + n];
  }
  const cplx &at(std::size_t c, std::size_t arm, std::size_t n) const {
    return data[(c * arms + arm) * samples + n];
  }
};

inline KSpaceFrame normalize_kspace(KSpaceFrame raw) {
  double peak = 0.0;
  for (const auto &v : raw.data) peak = std::max(peak, std::abs(v));
  require(peak > 0.0, Errc::all_zero_input, "k-space frame has no nonzero sample");
  for (auto &v : raw.data) v /= peak;
  raw.norm_scale = peak;
  return raw;
}

// Divides every coil profile by the root-sum-of-squares where it is nonzero.
inline void sos_normalize(SensitivityMaps &m) {
  const std::size_t px = m.grid.pixels();
  for (std::size_t p = 0; p < px; ++p) {
    double ss = 0.0;
    for (std::size_t c = 0; c < m.coils; ++c) ss += std::norm(m.at(c, p));
    if (ss <= 0.0) continue;
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t c = 0; c < m.coils; ++c) m.at(c, p) *= inv;
  }
}

// Smooth synthetic receive profiles: Gaussian bumps on a ring outside the
// field of view, each with its own gentle linear phase.
inline SensitivityMaps simulate_sensitivities(std::size_t coils, GridSize grid, std::uint64_t seed) {
  require(coils >= 1, Errc::invalid_argument, "need at least one coil");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.15, 0.15), slope(-1.0, 1.0),
      offset(-std::numbers::pi, std::numbers::pi);
  SensitivityMaps m(coils, grid);
  const double h = static_cast<double>(grid.rows), w = static_cast<double>(grid.cols);
  const double extent = std::max(h, w);
  const double ring = 0.6 * extent, sigma = 0.45 * extent;
  for (std::size_t c = 0; c < coils; ++c) {
    const double ang = 2.0 * std::numbers::pi * (static_cast<double>(c) + jitter(rng)) /
                       static_cast<double>(coils);
    const double cr = h / 2.0 + ring * std::cos(ang), cc = w / 2.0 + ring * std::sin(ang);
    const double a = slope(rng), b = slope(rng), phi0 = offset(rng);
    for (std::size_t r = 0; r < grid.rows; ++r) {
      for (std::size_t q = 0; q < grid.cols; ++q) {
        const double dr = static_cast<double>(r) - cr, dc = static_cast<double>(q) - cc;
        const double mag = std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
        const double ph = phi0 + a * (static_cast<double>(r) - h / 2.0) / h +
                          b * (static_cast<double>(q) - w / 2.0) / w;
        m.at(c, r * grid.cols + q) = std::polar(mag, ph);
      }
    }
  }
  sos_normalize(m);
  return m;
}

inline constexpr std::size_t kWalshPowerSteps = 30;
inline constexpr std::size_t kWalshBlock = 8;

// Walsh adaptive estimate: dominant eigenvector of the local coil covariance.
// coil_images is [coils, rows, cols].
inline SensitivityMaps walsh_estimate(const std::vector<ComplexImage> &coil_images,
                                      std::size_t block = kWalshBlock) {
  require(!coil_images.empty(), Errc::invalid_argument, "need at least one coil image");
  require(block >= 1, Errc::invalid_argument, "block must be >= 1");
  const std::size_t nc = coil_images.size();
  const GridSize g = coil_images.front().grid();
  for (const auto &im : coil_images)
    require(im.grid() == g, Errc::shape_mismatch, "coil images differ in size");

  SensitivityMaps out(nc, g);
  std::vector<cplx> cov(nc * nc), v(nc), next(nc);
  const long half = static_cast<long>(block / 2);
  const long rows = static_cast<long>(g.rows), cols = static_cast<long>(g.cols);

  for (long r = 0; r < rows; ++r) {
    for (long q = 0; q < cols; ++q) {
      std::fill(cov.begin(), cov.end(), cplx{});
      const long r0 = std::max(0L, r - half), r1 = std::min(rows, r - half + static_cast<long>(block));
      const long q0 = std::max(0L, q - half), q1 = std::min(cols, q - half + static_cast<long>(block));
      for (long rr = r0; rr < r1; ++rr)
        for (long qq = q0; qq < q1; ++qq) {
          const std::size_t p = static_cast<std::size_t>(rr * cols + qq);
          for (std::size_t a = 0; a < nc; ++a) {
            const cplx xa = coil_images[a][p];
            for (std::size_t b = 0; b < nc; ++b) cov[a * nc + b] += xa * std::conj(coil_images[b][p]);
          }
        }
      double trace = 0.0;
      for (std::size_t a = 0; a < nc; ++a) trace += cov[a * nc + a].real();
      const std::size_t pix = static_cast<std::size_t>(r * cols + q);
      if (trace <= 0.0) continue;

      // Start from the pixel's own coil vector, falling back to the window diagonal.
      double vn = 0.0;
      for (std::size_t a = 0; a < nc; ++a) {
        v[a] = coil_images[a][pix];
        vn += std::norm(v[a]);
      }
      if (vn <= 0.0) {
        for (std::size_t a = 0; a < nc; ++a) v[a] = std::sqrt(cov[a * nc + a].real());
      }
      for (std::size_t it = 0; it < kWalshPowerSteps; ++it) {
        double nn = 0.0;
        for (std::size_t a = 0; a < nc; ++a) {
          cplx acc{};
          for (std::size_t b = 0; b < nc; ++b) acc += cov[a * nc + b] * v[b];
          next[a] = acc;
          nn += std::norm(acc);
        }
        if (nn <= 0.0) break;
        const double inv = 1.0 / std::sqrt(nn);
        for (std::size_t a = 0; a < nc; ++a) v[a] = next[a] * inv;
      }
      double norm = 0.0;
      for (std::size_t a = 0; a < nc; ++a) norm += std::norm(v[a]);
      if (norm <= 0.0) continue;
      cplx ref = 1.0;
      if (std::abs(v[0]) > 0.0) ref = std::conj(v[0]) / std::abs(v[0]);
      const double inv = 1.0 / std::sqrt(norm);
      for (std::size_t a = 0; a < nc; ++a) out.at(a, pix) = v[a] * ref * inv;
    }
  }
  return out;
}

// |z| / max|z|; all-zero input stays zero.
inline RealImage magnitude_normalize(const ComplexImage &z) {
  RealImage out(z.grid());
  double peak = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::abs(z[i]);
    peak = std::max(peak, out[i]);
  }
  if (peak > 0.0)
    for (auto &v : out) v /= peak;
  return out;
}

// Sum_c conj(S_c) * adjoint(k_c) with optional per-arm weights.
inline ComplexImage coil_combine(const KSpaceFrame &frame, const NufftPlan &plan,
                                 const SensitivityMaps &maps,
                                 std::span<const double> arm_weights = {}) {
  require(frame.coils == maps.coils, Errc::shape_mismatch,
          "frame has " + std::to_string(frame.coils) + " coils, maps " + std::to_string(maps.coils));
  require(maps.grid == plan.grid(), Errc::shape_mismatch, "maps vs trajectory grid");
  require(frame.per_coil() == plan.total_samples(), Errc::shape_mismatch,
          "frame samples vs trajectory");
  ComplexImage acc(plan.grid());
  for (std::size_t c = 0; c < frame.coils; ++c) {
    auto img = arm_weights.empty() ? plan.adjoint(frame.coil(c), true)
                                   : plan.adjoint_weighted(frame.coil(c), arm_weights, true);
    auto s = maps.coil(c);
    for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += std::conj(s[p]) * img[p];
  }
  return acc;
}

inline ReconFrame sense_combine(const KSpaceFrame &frame, const NufftPlan &plan,
                                const SensitivityMaps &maps) {
  ReconFrame out;
  out.image = magnitude_normalize(coil_combine(frame, plan, maps));
  out.method = Method::gridding;
  return out;
}

inline ReconFrame sense_combine(const KSpaceFrame &frame, const Trajectory &traj,
                                const SensitivityMaps &maps, GridderConfig cfg = {}) {
  return sense_combine(frame, NufftPlan(traj, cfg), maps);
}

// Per-arm coil-combined complex images z_i with x^m = |sum_i p_i z_i| / max.
using ArmImages = std::vector<ComplexImage>;

inline ArmImages compute_arm_images(const KSpaceFrame &frame, const NufftPlan &plan,
                                    const SensitivityMaps &maps) {
  require(frame.coils == maps.coils, Errc::shape_mismatch, "frame vs maps coil count");
  require(frame.per_coil() == plan.total_samples(), Errc::shape_mismatch, "frame vs trajectory");
  ArmImages arms(frame.arms, ComplexImage(plan.grid()));
  for (std::size_t c = 0; c < frame.coils; ++c) {
    auto s = maps.coil(c);
    for (std::size_t a = 0; a < frame.arms; ++a) {
      auto img = plan.adjoint(frame.coil(c), true, a, a + 1);
      auto &dst = arms[a];
      for (std::size_t p = 0; p < dst.size(); ++p) dst[p] += std::conj(s[p]) * img[p];
    }
  }
  return arms;
}

// Coil images from arm-averaged k-space, then Walsh.
inline SensitivityMaps estimate_from_utterance(const std::vector<KSpaceFrame> &frames,
                                               const NufftPlan &plan,
                                               std::size_t block = kWalshBlock) {
  require(!frames.empty(), Errc::empty_input, "no frames to estimate sensitivities from");
  const KSpaceFrame &first = frames.front();
  KSpaceFrame avg(first.coils, first.arms, first.samples);
  for (const auto &f : frames) {
    require(f.data.size() == avg.data.size(), Errc::shape_mismatch, "frames differ in shape");
    for (std::size_t i = 0; i < avg.data.size(); ++i) avg.data[i] += f.data[i];
  }
  const double inv = 1.0 / static_cast<double>(frames.size());
  for (auto &v : avg.data) v *= inv;
  std::vector<ComplexImage> coil_images;
  coil_images.reserve(avg.coils);
  for (std::size_t c = 0; c < avg.coils; ++c) coil_images.push_back(plan.adjoint(avg.coil(c), true));
  return walsh_estimate(coil_images, block);
}

}  // namespace sirem
