#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "array.hpp"
#include "fft.hpp"
#include "trajectory.hpp"

namespace sirem {

// Non-uniform transform convention shared by the gridder and the oracle:
//
//   forward:  s(k) = sum_{u,v} x[u,v] exp(-2 pi i (k0 (u - H/2) + k1 (v - W/2)))
//   adjoint:  x[u,v] = sum_k y(k) exp(+2 pi i (k0 (u - H/2) + k1 (v - W/2)))
//
// i.e. plain (unscaled) sums; adjoint is the exact conjugate transpose.
struct GridderConfig {
  double oversampling = 2.0;
  int kernel_width = 4;
  double kernel_beta = 0.0;  // <= 0 selects the oversampling-dependent default
};

// Beatty et al. shape parameter for a Kaiser-Bessel kernel of `width` taps at
// oversampling ratio `os`.
inline double kaiser_bessel_beta(double os, int width) {
  const double w = static_cast<double>(width);
  const double t = (w / os) * (w / os) * (os - 0.5) * (os - 0.5) - 0.8;
  return std::numbers::pi * std::sqrt(std::max(t, 0.0));
}

namespace detail {

inline double kb_kernel(double t, double width, double beta) {
  const double x = 2.0 * t / width;
  if (std::abs(x) > 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - x * x));
}

// Continuous Fourier transform of kb_kernel at frequency xi (cycles per grid cell).
inline double kb_transform(double xi, double width, double beta) {
  const double a = std::numbers::pi * width * xi;
  const double z2 = beta * beta - a * a;
  if (z2 > 1e-12) {
    const double z = std::sqrt(z2);
    return width * std::sinh(z) / z;
  }
  if (z2 < -1e-12) {
    const double z = std::sqrt(-z2);
    return width * std::sin(z) / z;
  }
  return width;
}

inline std::size_t oversampled(std::size_t n, double os) {
  auto m = static_cast<std::size_t>(std::llround(os * static_cast<double>(n)));
  return std::max(m, n);
}

}  // namespace detail

// Precomputed gridding plan for one trajectory. Immutable after construction;
// safe to share between threads.
class NufftPlan {
 public:
  NufftPlan(const Trajectory &traj, GridderConfig cfg = {}) : cfg_(cfg), grid_(traj.grid) {
    require(cfg.oversampling >= 1.0, Errc::invalid_argument, "oversampling must be >= 1");
    require(cfg.kernel_width >= 1, Errc::invalid_argument, "kernel width must be >= 1");
    require(traj.coords.size() == traj.total() * 2, Errc::shape_mismatch, "trajectory coords");
    require(traj.dcf.size() == traj.total(), Errc::shape_mismatch, "trajectory dcf");
    arms_ = traj.arms;
    samples_ = traj.samples;
    n0_ = detail::oversampled(grid_.rows, cfg.oversampling);
    n1_ = detail::oversampled(grid_.cols, cfg.oversampling);
    beta_ = cfg.kernel_beta > 0.0 ? cfg.kernel_beta
                                  : kaiser_bessel_beta(cfg.oversampling, cfg.kernel_width);
    width_ = static_cast<std::size_t>(cfg.kernel_width);
    dcf_ = traj.dcf;

    const std::size_t m = traj.total();
    idx0_.resize(m * width_);
    idx1_.resize(m * width_);
    w0_.resize(m * width_);
    w1_.resize(m * width_);
    const double wd = static_cast<double>(width_);
    for (std::size_t s = 0; s < m; ++s) {
      fill_taps(traj.coords[2 * s] * static_cast<double>(n0_), n0_, wd, &idx0_[s * width_],
                &w0_[s * width_]);
      fill_taps(traj.coords[2 * s + 1] * static_cast<double>(n1_), n1_, wd, &idx1_[s * width_],
                &w1_[s * width_]);
    }

    deapod0_ = deapod_table(grid_.rows, n0_, wd);
    deapod1_ = deapod_table(grid_.cols, n1_, wd);
  }

  GridSize grid() const { return grid_; }
  std::size_t arms() const { return arms_; }
  std::size_t samples_per_arm() const { return samples_; }
  std::size_t total_samples() const { return arms_ * samples_; }
  GridSize oversampled_grid() const { return {n0_, n1_}; }
  double beta() const { return beta_; }
  const std::vector<double> &dcf() const { return dcf_; }

  std::vector<cplx> forward(const ComplexImage &image) const {
    require(image.grid() == grid_, Errc::shape_mismatch,
            "image " + to_string(image.grid()) + " vs trajectory grid " + to_string(grid_));
    std::vector<cplx> g(n0_ * n1_, cplx{});
    const std::size_t h = grid_.rows, w = grid_.cols;
    for (std::size_t u = 0; u < h; ++u) {
      const std::size_t gu = wrap(static_cast<long>(u) - static_cast<long>(h / 2), n0_);
      for (std::size_t v = 0; v < w; ++v) {
        const std::size_t gv = wrap(static_cast<long>(v) - static_cast<long>(w / 2), n1_);
        g[gu * n1_ + gv] = image(u, v) * (deapod0_[u] * deapod1_[v]);
      }
    }
    fft::forward2d(g, n0_, n1_);
    std::vector<cplx> out(total_samples());
    for (std::size_t s = 0; s < out.size(); ++s) out[s] = interpolate(g, s);
    return out;
  }

  // Adjoint restricted to a contiguous arm range [arm_begin, arm_end); samples
  // holds all arms. Unselected arms contribute nothing.
  ComplexImage adjoint(std::span<const cplx> samples, bool apply_dcf, std::size_t arm_begin = 0,
                       std::size_t arm_end = static_cast<std::size_t>(-1)) const {
    require(samples.size() == total_samples(), Errc::shape_mismatch,
            "sample count " + std::to_string(samples.size()) + " vs trajectory " +
                std::to_string(total_samples()));
    arm_end = std::min(arm_end, arms_);
    std::vector<cplx> g(n0_ * n1_, cplx{});
    for (std::size_t s = arm_begin * samples_; s < arm_end * samples_; ++s) {
      const cplx y = apply_dcf ? samples[s] * dcf_[s] : samples[s];
      if (y == cplx{}) continue;
      spread(g, s, y);
    }
    return finish_adjoint(g);
  }

  // Adjoint with a per-arm real weight (weights.size() == arms()).
  ComplexImage adjoint_weighted(std::span<const cplx> samples, std::span<const double> arm_weights,
                                bool apply_dcf) const {
    require(samples.size() == total_samples(), Errc::shape_mismatch, "sample count");
    require(arm_weights.size() == arms_, Errc::shape_mismatch, "arm weight count");
    std::vector<cplx> g(n0_ * n1_, cplx{});
    for (std::size_t a = 0; a < arms_; ++a) {
      if (arm_weights[a] == 0.0) continue;
      for (std::size_t s = a * samples_; s < (a + 1) * samples_; ++s) {
        const cplx y = (apply_dcf ? samples[s] * dcf_[s] : samples[s]) * arm_weights[a];
        if (y == cplx{}) continue;
        spread(g, s, y);
      }
    }
    return finish_adjoint(g);
  }

 private:
  static std::size_t wrap(long i, std::size_t n) {
    long m = i % static_cast<long>(n);
    return static_cast<std::size_t>(m < 0 ? m + static_cast<long>(n) : m);
  }

  void fill_taps(double g, std::size_t n, double wd, std::size_t *idx, double *wt) const {
    const long first = static_cast<long>(std::floor(g - wd / 2.0)) + 1;
    for (std::size_t t = 0; t < width_; ++t) {
      const long m = first + static_cast<long>(t);
      idx[t] = wrap(m, n);
      wt[t] = detail::kb_kernel(g - static_cast<double>(m), wd, beta_);
    }
  }

  std::vector<double> deapod_table(std::size_t len, std::size_t n, double wd) const {
    std::vector<double> tab(len);
    for (std::size_t u = 0; u < len; ++u) {
      const double r = static_cast<double>(u) - static_cast<double>(len / 2);
      tab[u] = 1.0 / detail::kb_transform(r / static_cast<double>(n), wd, beta_);
    }
    return tab;
  }

  cplx interpolate(const std::vector<cplx> &g, std::size_t s) const {
    const std::size_t *i0 = &idx0_[s * width_];
    const std::size_t *i1 = &idx1_[s * width_];
    const double *a0 = &w0_[s * width_];
    const double *a1 = &w1_[s * width_];
    cplx acc{};
    for (std::size_t p = 0; p < width_; ++p) {
      const cplx *row = &g[i0[p] * n1_];
      cplx racc{};
      for (std::size_t q = 0; q < width_; ++q) racc += row[i1[q]] * a1[q];
      acc += racc * a0[p];
    }
    return acc;
  }

  void spread(std::vector<cplx> &g, std::size_t s, cplx y) const {
    const std::size_t *i0 = &idx0_[s * width_];
    const std::size_t *i1 = &idx1_[s * width_];
    const double *a0 = &w0_[s * width_];
    const double *a1 = &w1_[s * width_];
    for (std::size_t p = 0; p < width_; ++p) {
      cplx *row = &g[i0[p] * n1_];
      const cplx yp = y * a0[p];
      for (std::size_t q = 0; q < width_; ++q) row[i1[q]] += yp * a1[q];
    }
  }

  ComplexImage finish_adjoint(std::vector<cplx> &g) const {
    fft::backward2d(g, n0_, n1_);
    const std::size_t h = grid_.rows, w = grid_.cols;
    ComplexImage out(h, w);
    for (std::size_t u = 0; u < h; ++u) {
      const std::size_t gu = wrap(static_cast<long>(u) - static_cast<long>(h / 2), n0_);
      for (std::size_t v = 0; v < w; ++v) {
        const std::size_t gv = wrap(static_cast<long>(v) - static_cast<long>(w / 2), n1_);
        out(u, v) = g[gu * n1_ + gv] * (deapod0_[u] * deapod1_[v]);
      }
    }
    return out;
  }

  GridderConfig cfg_;
  GridSize grid_;
  std::size_t arms_ = 0, samples_ = 0;
  std::size_t n0_ = 0, n1_ = 0, width_ = 0;
  double beta_ = 0.0;
  std::vector<double> dcf_;
  std::vector<std::size_t> idx0_, idx1_;
  std::vector<double> w0_, w1_;
  std::vector<double> deapod0_, deapod1_;
};

inline std::vector<cplx> nufft_forward(const ComplexImage &image, const Trajectory &traj,
                                       GridderConfig cfg = {}) {
  require(all_finite<cplx>(image.span()), Errc::non_finite, "image contains non-finite values");
  return NufftPlan(traj, cfg).forward(image);
}

inline ComplexImage nufft_adjoint(std::span<const cplx> samples, const Trajectory &traj,
                                  bool apply_dcf, GridderConfig cfg = {}) {
  require(all_finite<cplx>(samples), Errc::non_finite, "samples contain non-finite values");
  return NufftPlan(traj, cfg).adjoint(samples, apply_dcf);
}

// Direct O(H W M) evaluation of the transform pair above. Test oracle only.
namespace oracle {

inline constexpr std::size_t kMaxSide = 64;

inline void check_size(GridSize g) {
  require(g.rows <= kMaxSide && g.cols <= kMaxSide, Errc::size_limit_exceeded,
          "direct DFT limited to 64x64, got " + to_string(g));
}

inline std::vector<cplx> forward(const ComplexImage &image, const Trajectory &traj) {
  check_size(image.grid());
  require(image.grid() == traj.grid, Errc::shape_mismatch, "image vs trajectory grid");
  const double two_pi = 2.0 * std::numbers::pi;
  const long c0 = static_cast<long>(image.rows() / 2), c1 = static_cast<long>(image.cols() / 2);
  std::vector<cplx> out(traj.total());
  for (std::size_t s = 0; s < out.size(); ++s) {
    const double k0 = traj.coords[2 * s], k1 = traj.coords[2 * s + 1];
    cplx acc{};
    for (std::size_t u = 0; u < image.rows(); ++u) {
      for (std::size_t v = 0; v < image.cols(); ++v) {
        const double ph = -two_pi * (k0 * static_cast<double>(static_cast<long>(u) - c0) +
                                     k1 * static_cast<double>(static_cast<long>(v) - c1));
        acc += image(u, v) * cplx(std::cos(ph), std::sin(ph));
      }
    }
    out[s] = acc;
  }
  return out;
}

inline ComplexImage adjoint(std::span<const cplx> samples, const Trajectory &traj,
                            bool apply_dcf = false) {
  check_size(traj.grid);
  require(samples.size() == traj.total(), Errc::shape_mismatch, "sample count");
  const double two_pi = 2.0 * std::numbers::pi;
  const long c0 = static_cast<long>(traj.grid.rows / 2), c1 = static_cast<long>(traj.grid.cols / 2);
  ComplexImage out(traj.grid);
  for (std::size_t u = 0; u < out.rows(); ++u) {
    for (std::size_t v = 0; v < out.cols(); ++v) {
      cplx acc{};
      for (std::size_t s = 0; s < samples.size(); ++s) {
        const double ph = two_pi * (traj.coords[2 * s] * static_cast<double>(static_cast<long>(u) - c0) +
                                    traj.coords[2 * s + 1] * static_cast<double>(static_cast<long>(v) - c1));
        const cplx y = apply_dcf ? samples[s] * traj.dcf[s] : samples[s];
        acc += y * cplx(std::cos(ph), std::sin(ph));
      }
      out(u, v) = acc;
    }
  }
  return out;
}

}  // namespace oracle

}  // namespace sirem
