#pragma once

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include "array.hpp"

namespace sirem::fft {

// Unnormalized in-place complex transforms backed by FFTW. Forward uses
// exp(-2 pi i jk/n), backward exp(+2 pi i jk/n). Plans are created once per
// (shape, direction) under a lock and executed lock-free afterwards.
namespace detail {

struct PlanCache {
  std::mutex mutex;
  std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> plans;

  ~PlanCache() {
    for (auto &[key, plan] : plans) fftw_destroy_plan(plan);
  }
};

inline PlanCache &cache() {
  static PlanCache c;
  return c;
}

inline fftw_plan plan_for(std::size_t n0, std::size_t n1, int sign) {
  auto &c = cache();
  std::lock_guard lock(c.mutex);
  auto key = std::make_tuple(n0, n1, sign);
  if (auto it = c.plans.find(key); it != c.plans.end()) return it->second;
  std::vector<cplx> scratch(n0 * n1);
  auto *buf = reinterpret_cast<fftw_complex *>(scratch.data());
  unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  fftw_plan p = n0 == 1 ? fftw_plan_dft_1d(static_cast<int>(n1), buf, buf, sign, flags)
                        : fftw_plan_dft_2d(static_cast<int>(n0), static_cast<int>(n1), buf, buf,
                                           sign, flags);
  c.plans.emplace(key, p);
  return p;
}

inline void execute(std::span<cplx> data, std::size_t n0, std::size_t n1, int sign) {
  require(data.size() == n0 * n1, Errc::shape_mismatch, "fft buffer size");
  auto *buf = reinterpret_cast<fftw_complex *>(data.data());
  fftw_execute_dft(plan_for(n0, n1, sign), buf, buf);
}

}  // namespace detail

inline void forward2d(std::span<cplx> data, std::size_t rows, std::size_t cols) {
  detail::execute(data, rows, cols, FFTW_FORWARD);
}
inline void backward2d(std::span<cplx> data, std::size_t rows, std::size_t cols) {
  detail::execute(data, rows, cols, FFTW_BACKWARD);
}
inline void forward1d(std::span<cplx> data) { detail::execute(data, 1, data.size(), FFTW_FORWARD); }

// Unitary 2-D DFT (1/sqrt(H*W) scaling), origin at index 0.
inline ComplexImage unitary_fft2(const ComplexImage &img) {
  ComplexImage out = img;
  forward2d(out.span(), out.rows(), out.cols());
  const double s = 1.0 / std::sqrt(static_cast<double>(out.size()));
  for (auto &v : out) v *= s;
  return out;
}

}  // namespace sirem::fft
