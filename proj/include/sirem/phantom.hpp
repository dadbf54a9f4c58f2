#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "array.hpp"
#include "coil.hpp"
#include "fusion.hpp"
#include "nufft.hpp"
#include "trajectory.hpp"

namespace sirem {

// Articulator parameter vector: tongue row, tongue column, tongue elongation,
// lip aperture, velum angle. All live in roughly [-1, 1].
inline constexpr std::size_t kArticulatorParams = 5;
inline const std::vector<std::string> kArticulatorClasses = {"tongue", "lips", "velum"};

struct PhantomConfig {
  GridSize grid{84, 84};
  std::size_t frames = 40;
  std::size_t coils = 8;
  std::size_t samples_per_arm = 512;
  double spiral_turns = 8.0;
  // Motion amplitude per articulator parameter (0 freezes it) and the
  // frequency band (Hz) the sinusoids are drawn from.
  std::array<double, kArticulatorParams> motion_amplitude{1.0, 1.0, 1.0, 1.0, 1.0};
  double min_frequency = 0.4;
  double max_frequency = 1.6;
  double noise_sigma = 0.01;
  std::uint64_t seed = 1;
  // The feature map is shared by every utterance generated with the same
  // feature_seed so features mean the same thing across subjects.
  std::uint64_t feature_seed = 20260101;
  std::size_t feature_dim = 768;
  std::size_t feature_steps = 12;
  double feature_noise = 0.05;
  double frame_rate = kFrameRate;
};

struct PhantomSequence {
  GridSize grid;
  std::vector<RealImage> frames;
  std::vector<std::vector<Mask>> masks;  // [T][class]
  std::vector<std::array<double, kArticulatorParams>> params;
  NdArray<float> features;  // [T, L, d]
  std::vector<double> timestamps;
};

namespace detail {

inline double soft_inside(double signed_dist_px, double edge_px = 0.6) {
  return 0.5 * (1.0 - std::tanh(signed_dist_px / edge_px));
}

// Approximate signed distance (pixels) to an axis-aligned-then-rotated ellipse.
inline double ellipse_sd(double r, double c, double cr, double cc, double ar, double ac,
                         double angle = 0.0) {
  const double dr = r - cr, dc = c - cc;
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double u = ca * dr + sa * dc, v = -sa * dr + ca * dc;
  const double q = std::sqrt((u / ar) * (u / ar) + (v / ac) * (v / ac));
  return (q - 1.0) * std::min(ar, ac);
}

// Signed distance to a capsule (thick segment) from p0 to p1 with half-width hw.
inline double capsule_sd(double r, double c, double r0, double c0, double r1, double c1,
                         double hw) {
  const double dr = r1 - r0, dc = c1 - c0;
  const double len2 = dr * dr + dc * dc;
  double t = len2 > 0.0 ? ((r - r0) * dr + (c - c0) * dc) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(r - (r0 + t * dr), c - (c0 + t * dc)) - hw;
}

struct Anatomy {
  double head_ar, head_ac;
  double tongue_r, tongue_c;
  double lip_c;
  double velum_r, velum_c;
};

}  // namespace detail

// Renders one frame (peak-normalized to 1) and its articulator masks.
inline RealImage render_phantom(GridSize grid, const detail::Anatomy &a,
                                const std::array<double, kArticulatorParams> &p,
                                std::vector<Mask> *masks = nullptr) {
  using namespace detail;
  const double h = static_cast<double>(grid.rows), w = static_cast<double>(grid.cols);
  RealImage img(grid);
  if (masks) masks->assign(kArticulatorClasses.size(), Mask(grid));
  const double tongue_r = (a.tongue_r + 0.04 * p[0]) * h, tongue_c = (a.tongue_c + 0.05 * p[1]) * w;
  const double elong = std::exp(0.25 * p[2]);
  const double tongue_ar = 0.085 * h / elong, tongue_ac = 0.15 * w * elong;
  const double aperture = (0.05 + 0.035 * (p[3] + 1.0)) * h;
  const double mouth_r = 0.45 * h, lip_c = a.lip_c * w;
  const double velum_ang = 0.9 + 0.35 * p[4];
  const double vr0 = a.velum_r * h, vc0 = a.velum_c * w, vlen = 0.14 * h;
  const double vr1 = vr0 + vlen * std::sin(velum_ang), vc1 = vc0 - vlen * std::cos(velum_ang);

  for (std::size_t i = 0; i < grid.rows; ++i) {
    for (std::size_t j = 0; j < grid.cols; ++j) {
      const double r = static_cast<double>(i) + 0.5, c = static_cast<double>(j) + 0.5;
      double v = 0.55 * soft_inside(ellipse_sd(r, c, 0.5 * h, 0.5 * w, a.head_ar * h, a.head_ac * w));
      // Bright static structure (spine/marrow) keeps the frame peak stable.
      v = std::max(v, 1.0 * soft_inside(ellipse_sd(r, c, 0.72 * h, 0.84 * w, 0.1 * h, 0.035 * w)));
      // Airway: oral cavity, pharynx, and the gap between the lips.
      const double air = std::max({soft_inside(ellipse_sd(r, c, mouth_r, 0.4 * w, 0.06 * h, 0.24 * w)),
                                   soft_inside(capsule_sd(r, c, 0.42 * h, 0.64 * w, 0.92 * h, 0.66 * w, 0.035 * h)),
                                   soft_inside(ellipse_sd(r, c, mouth_r, lip_c, aperture / 2.0, 0.08 * w))});
      v *= (1.0 - air);
      const double tongue = soft_inside(ellipse_sd(r, c, tongue_r, tongue_c, tongue_ar, tongue_ac, -0.15));
      const double upper = soft_inside(ellipse_sd(r, c, mouth_r - aperture / 2.0 - 0.035 * h, lip_c, 0.04 * h, 0.06 * w));
      const double lower = soft_inside(ellipse_sd(r, c, mouth_r + aperture / 2.0 + 0.035 * h, lip_c, 0.04 * h, 0.06 * w));
      const double lips = std::max(upper, lower);
      const double velum = soft_inside(capsule_sd(r, c, vr0, vc0, vr1, vc1, 0.022 * h));
      v = std::max({v, 0.9 * tongue, 0.85 * lips, 0.8 * velum});
      img(i, j) = v;
      if (masks) {
        (*masks)[0](i, j) = tongue > 0.5;
        (*masks)[1](i, j) = lips > 0.5;
        (*masks)[2](i, j) = velum > 0.5;
      }
    }
  }
  double peak = 0.0;
  for (double v : img) peak = std::max(peak, v);
  if (peak > 0.0)
    for (double &v : img) v = std::clamp(v / peak, 0.0, 1.0);
  return img;
}

// Fixed linear map from articulator parameters to feature space.
struct FeatureMap {
  std::size_t dim = 0;
  std::vector<double> weights;  // [dim, kArticulatorParams]
  std::vector<double> bias;     // [dim]
};

inline FeatureMap make_feature_map(std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  FeatureMap m;
  m.dim = dim;
  m.weights.resize(dim * kArticulatorParams);
  m.bias.resize(dim);
  for (auto &v : m.weights) v = n(rng);
  for (auto &v : m.bias) v = 0.5 * n(rng);
  return m;
}

inline PhantomSequence generate(const PhantomConfig &cfg) {
  require(cfg.frames >= 1, Errc::invalid_argument, "phantom needs at least one frame");
  require(cfg.feature_dim >= 1 && cfg.feature_steps >= 1, Errc::invalid_argument,
          "feature shape must be positive");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  detail::Anatomy anat{between(0.4, 0.44), between(0.36, 0.4), between(0.53, 0.57),
                       between(0.4, 0.46), between(0.1, 0.13), between(0.36, 0.4),
                       between(0.58, 0.62)};
  std::array<double, kArticulatorParams> freq{}, phase{}, freq2{}, phase2{};
  for (std::size_t k = 0; k < kArticulatorParams; ++k) {
    freq[k] = between(cfg.min_frequency, cfg.max_frequency);
    phase[k] = between(0.0, 2.0 * std::numbers::pi);
    freq2[k] = between(cfg.min_frequency, cfg.max_frequency) * 1.7;
    phase2[k] = between(0.0, 2.0 * std::numbers::pi);
  }
  const FeatureMap fmap = make_feature_map(cfg.feature_dim, cfg.feature_seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  PhantomSequence seq;
  seq.grid = cfg.grid;
  seq.features = NdArray<float>({cfg.frames, cfg.feature_steps, cfg.feature_dim});
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    const double ct = frame_center_time(t, cfg.frame_rate);
    std::array<double, kArticulatorParams> p{};
    for (std::size_t k = 0; k < kArticulatorParams; ++k) {
      const double s = 0.7 * std::sin(2.0 * std::numbers::pi * freq[k] * ct + phase[k]) +
                       0.3 * std::sin(2.0 * std::numbers::pi * freq2[k] * ct + phase2[k]);
      p[k] = cfg.motion_amplitude[k] * s;
    }
    std::vector<Mask> masks;
    seq.frames.push_back(render_phantom(cfg.grid, anat, p, &masks));
    seq.masks.push_back(std::move(masks));
    seq.params.push_back(p);
    seq.timestamps.push_back(ct);
    for (std::size_t l = 0; l < cfg.feature_steps; ++l) {
      for (std::size_t d = 0; d < cfg.feature_dim; ++d) {
        double f = fmap.bias[d];
        for (std::size_t k = 0; k < kArticulatorParams; ++k)
          f += fmap.weights[d * kArticulatorParams + k] * p[k];
        if (cfg.feature_noise > 0.0) f += cfg.feature_noise * noise(rng);
        seq.features.data[(t * cfg.feature_steps + l) * cfg.feature_dim + d] = static_cast<float>(f);
      }
    }
  }
  return seq;
}

// Per-utterance EbA map: blurred union of every articulator mask over all frames.
inline EbAMap utterance_eba(const PhantomSequence &seq, double sigma = kDefaultEbABlur) {
  Mask uni(seq.grid);
  for (const auto &frame_masks : seq.masks)
    for (const auto &m : frame_masks)
      for (std::size_t i = 0; i < m.size(); ++i) uni[i] = std::max(uni[i], m[i]);
  return eba_from_segmentation({uni}, sigma);
}

// Coil k-space of one frame before normalization: forward(S_c * x) + noise.
inline KSpaceFrame simulate_raw(const RealImage &frame, const NufftPlan &plan,
                                const SensitivityMaps &maps, double noise_sigma,
                                std::uint64_t noise_seed) {
  require(frame.grid() == plan.grid() && maps.grid == plan.grid(), Errc::shape_mismatch,
          "frame, maps and trajectory grids differ");
  KSpaceFrame k(maps.coils, plan.arms(), plan.samples_per_arm());
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> n(0.0, noise_sigma / std::sqrt(2.0));
  for (std::size_t c = 0; c < maps.coils; ++c) {
    ComplexImage weighted(frame.grid());
    auto s = maps.coil(c);
    for (std::size_t p = 0; p < weighted.size(); ++p) weighted[p] = s[p] * frame[p];
    auto samples = plan.forward(weighted);
    auto dst = k.coil(c);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      dst[i] = samples[i];
      if (noise_sigma > 0.0) dst[i] += cplx(n(rng), n(rng));
    }
  }
  return k;
}

inline std::uint64_t frame_noise_seed(std::uint64_t seed, std::size_t frame) {
  return seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL * (frame + 1);
}

inline std::vector<KSpaceFrame> simulate_acquisition(const PhantomSequence &seq,
                                                     const NufftPlan &plan,
                                                     const SensitivityMaps &maps,
                                                     double noise_sigma, std::uint64_t seed) {
  std::vector<KSpaceFrame> out;
  out.reserve(seq.frames.size());
  for (std::size_t t = 0; t < seq.frames.size(); ++t)
    out.push_back(normalize_kspace(
        simulate_raw(seq.frames[t], plan, maps, noise_sigma, frame_noise_seed(seed, t))));
  return out;
}

}  // namespace sirem
