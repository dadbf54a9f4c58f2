#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "array.hpp"
#include "fft.hpp"
#include "types.hpp"

namespace sirem {

enum class EbAProvenance { from_segmentation, uniform, loaded };

// Explained-by-audio weight map, entries in [0,1].
struct EbAMap {
  RealImage w;
  EbAProvenance provenance = EbAProvenance::uniform;
};

using Mask = Image<std::uint8_t>;

inline EbAMap uniform_eba(GridSize g, double value) {
  require(value >= 0.0 && value <= 1.0, Errc::range_violation, "EbA value outside [0,1]");
  return {RealImage(g, value), EbAProvenance::uniform};
}

inline void check_unit_range(const RealImage &img, const char *what) {
  for (double v : img)
    require(v >= 0.0 && v <= 1.0, Errc::range_violation, std::string(what) + " outside [0,1]");
}

// x = w * xa + (1 - w) * xm, pixelwise.
inline ReconFrame fuse(const RealImage &xa, const RealImage &xm, const EbAMap &w) {
  require(xa.grid() == xm.grid() && xa.grid() == w.w.grid(), Errc::shape_mismatch,
          "fusion operands differ in shape");
  check_unit_range(xa, "audio estimate");
  check_unit_range(xm, "MRI estimate");
  check_unit_range(w.w, "EbA map");
  ReconFrame out;
  out.image = RealImage(xa.grid());
  for (std::size_t i = 0; i < xa.size(); ++i) out.image[i] = w.w[i] * xa[i] + (1.0 - w.w[i]) * xm[i];
  out.method = Method::sirem;
  return out;
}

// Normalized 1-D Gaussian taps, radius ceil(4 sigma).
inline std::vector<double> gaussian_taps(double sigma) {
  const long radius = static_cast<long>(std::ceil(4.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double &t : taps) t /= sum;
  return taps;
}

// Separable Gaussian blur with edge replication, so constants are preserved.
inline RealImage gaussian_blur(const RealImage &img, double sigma) {
  if (sigma <= 0.0) return img;
  const auto taps = gaussian_taps(sigma);
  const long radius = static_cast<long>(taps.size() / 2);
  const long rows = static_cast<long>(img.rows()), cols = static_cast<long>(img.cols());
  auto clamp_idx = [](long i, long n) { return std::clamp(i, 0L, n - 1); };
  RealImage tmp(img.grid()), out(img.grid());
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k)
        acc += taps[static_cast<std::size_t>(k + radius)] *
               img(static_cast<std::size_t>(r), static_cast<std::size_t>(clamp_idx(c + k, cols)));
      tmp(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
    }
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k)
        acc += taps[static_cast<std::size_t>(k + radius)] *
               tmp(static_cast<std::size_t>(clamp_idx(r + k, rows)), static_cast<std::size_t>(c));
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
    }
  return out;
}

inline constexpr double kDefaultEbABlur = 2.0;

inline EbAMap eba_from_segmentation(const std::vector<Mask> &masks, double sigma = kDefaultEbABlur) {
  require(!masks.empty(), Errc::empty_input, "no segmentation masks given");
  const GridSize g = masks.front().grid();
  RealImage u(g);
  for (const auto &m : masks) {
    require(m.grid() == g, Errc::shape_mismatch, "segmentation masks differ in shape");
    for (std::size_t i = 0; i < m.size(); ++i) {
      require(m[i] <= 1, Errc::range_violation, "segmentation mask is not binary");
      u[i] = std::max(u[i], static_cast<double>(m[i]));
    }
  }
  EbAMap out{gaussian_blur(u, sigma), EbAProvenance::from_segmentation};
  for (double &v : out.w.vec()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

// mean |F(1 - w)|^2 with the unitary 2-D DFT.
inline double mask_loss(const EbAMap &w) {
  ComplexImage comp(w.w.grid());
  for (std::size_t i = 0; i < comp.size(); ++i) comp[i] = 1.0 - w.w[i];
  auto spec = fft::unitary_fft2(comp);
  double s = 0.0;
  for (const auto &v : spec) s += std::norm(v);
  return s / static_cast<double>(spec.size());
}

// d mask_loss / d w = -(2 / HW) Re(F^H F (1 - w)).
inline RealImage mask_loss_grad(const EbAMap &w) {
  ComplexImage comp(w.w.grid());
  for (std::size_t i = 0; i < comp.size(); ++i) comp[i] = 1.0 - w.w[i];
  auto spec = fft::unitary_fft2(comp);
  fft::backward2d(spec.span(), spec.rows(), spec.cols());
  const double n = static_cast<double>(spec.size());
  RealImage g(w.w.grid());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = -2.0 / n * spec[i].real() / std::sqrt(n);
  return g;
}

}  // namespace sirem
