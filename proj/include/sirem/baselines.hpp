#pragma once

#include <array>
#include <chrono>
#include <memory>
#include <cmath>
#include <mutex>
#include <optional>
#include <random>
#include <vector>

#include "array.hpp"
#include "coil.hpp"
#include "nufft.hpp"
#include "types.hpp"

namespace sirem {

struct CSConfig {
  double lambda = 1e-3;
  std::size_t iters = 100;
  std::optional<double> step;  // empty means "auto"
  double tv_epsilon = 1e-3;
  std::size_t wavelet_levels = 3;

  static CSConfig wavelet_defaults() { return {}; }
  static CSConfig tv_defaults() {
    CSConfig c;
    c.lambda = 5e-4;
    return c;
  }

  void validate() const {
    require(std::isfinite(lambda) && lambda > 0.0, Errc::invalid_argument, "lambda must be positive");
    require(!step || (std::isfinite(*step) && *step > 0.0), Errc::invalid_argument,
            "step must be positive or auto");
    require(tv_epsilon > 0.0, Errc::invalid_argument, "tv_epsilon must be positive");
    require(wavelet_levels >= 1, Errc::invalid_argument, "wavelet_levels must be >= 1");
  }
};

// Objective bookkeeping for one iterative solve, in the solver's normalized units.
struct CSReport {
  double lipschitz = 0.0;
  double objective_initial = 0.0;
  double objective_final = 0.0;
  double residual_initial = 0.0;
  double residual_final = 0.0;
  std::vector<double> trace;  // objective after each iteration
};

namespace detail {

inline double squared_norm(std::span<const cplx> v) {
  double s = 0.0;
  for (const auto &x : v) s += std::norm(x);
  return s;
}

}  // namespace detail

// Largest eigenvalue of AH(A(.)) by power iteration from a fixed-seed start,
// reported as the final Rayleigh quotient.
template <typename Fwd, typename Adj>
double power_iteration_lipschitz(Fwd &&A, Adj &&AH, GridSize grid, std::size_t steps = 20,
                                 std::uint64_t seed = 0x5eed, std::vector<double> *history = nullptr) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  ComplexImage v(grid);
  for (auto &x : v) x = cplx(n(rng), n(rng));
  double nv = std::sqrt(detail::squared_norm(v.span()));
  for (auto &x : v) x /= nv;
  double estimate = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    ComplexImage w = AH(A(v));
    estimate = inner(w.span(), v.span()).real();
    if (history) history->push_back(estimate);
    const double nw = std::sqrt(detail::squared_norm(w.span()));
    if (!(nw > 0.0) || !std::isfinite(nw)) break;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = w[i] / nw;
  }
  return estimate;
}

// Multi-coil encoding operator x -> {NUFFT(S_c x)}_c, without density compensation.
class SenseOperator {
 public:
  SenseOperator(const NufftPlan &plan, const SensitivityMaps &maps) : plan_(&plan), maps_(&maps) {
    require(maps.grid == plan.grid(), Errc::shape_mismatch, "maps vs trajectory grid");
  }

  GridSize grid() const { return plan_->grid(); }
  std::size_t data_size() const { return maps_->coils * plan_->total_samples(); }
  const NufftPlan &plan() const { return *plan_; }
  const SensitivityMaps &maps() const { return *maps_; }

  std::vector<cplx> forward(const ComplexImage &x) const {
    std::vector<cplx> out;
    out.reserve(data_size());
    ComplexImage weighted(x.grid());
    for (std::size_t c = 0; c < maps_->coils; ++c) {
      auto s = maps_->coil(c);
      for (std::size_t p = 0; p < x.size(); ++p) weighted[p] = s[p] * x[p];
      auto k = plan_->forward(weighted);
      out.insert(out.end(), k.begin(), k.end());
    }
    return out;
  }

  ComplexImage adjoint(std::span<const cplx> y) const {
    require(y.size() == data_size(), Errc::shape_mismatch, "data size vs operator");
    ComplexImage acc(grid());
    const std::size_t per = plan_->total_samples();
    for (std::size_t c = 0; c < maps_->coils; ++c) {
      auto img = plan_->adjoint(y.subspan(c * per, per), false);
      auto s = maps_->coil(c);
      for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += std::conj(s[p]) * img[p];
    }
    return acc;
  }

  // ||A^H A||_2, computed once per operator.
  double lipschitz() const {
    std::call_once(cache_->once, [this] {
      cache_->value = power_iteration_lipschitz([this](const ComplexImage &x) { return forward(x); },
                                             [this](const std::vector<cplx> &y) { return adjoint(y); },
                                             grid());
    });
    return cache_->value;
  }

 private:
  const NufftPlan *plan_;
  const SensitivityMaps *maps_;
  struct Cache {
    std::once_flag once;
    double value = 0.0;
  };
  std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

// ---------------------------------------------------------------------------
// Orthogonal periodic Daubechies-4 wavelet transform.

namespace wavelet {

inline const std::array<double, 4> &d4_lowpass() {
  static const std::array<double, 4> h = [] {
    const double s3 = std::sqrt(3.0), d = 4.0 * std::sqrt(2.0);
    return std::array<double, 4>{(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d};
  }();
  return h;
}

inline std::array<double, 4> d4_highpass() {
  const auto &h = d4_lowpass();
  return {h[3], -h[2], h[1], -h[0]};
}

// One analysis level on x[0..n) with the given stride (n even).
inline void analyze(cplx *x, std::size_t n, std::size_t stride, std::vector<cplx> &buf) {
  const auto &h = d4_lowpass();
  const auto g = d4_highpass();
  buf.assign(n, cplx{});
  const std::size_t half = n / 2;
  for (std::size_t i = 0; i < half; ++i) {
    cplx a{}, d{};
    for (std::size_t k = 0; k < 4; ++k) {
      const cplx v = x[((2 * i + k) % n) * stride];
      a += h[k] * v;
      d += g[k] * v;
    }
    buf[i] = a;
    buf[half + i] = d;
  }
  for (std::size_t i = 0; i < n; ++i) x[i * stride] = buf[i];
}

inline void synthesize(cplx *x, std::size_t n, std::size_t stride, std::vector<cplx> &buf) {
  const auto &h = d4_lowpass();
  const auto g = d4_highpass();
  buf.assign(n, cplx{});
  const std::size_t half = n / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const cplx a = x[i * stride], d = x[(half + i) * stride];
    for (std::size_t k = 0; k < 4; ++k) buf[(2 * i + k) % n] += h[k] * a + g[k] * d;
  }
  for (std::size_t i = 0; i < n; ++i) x[i * stride] = buf[i];
}

inline void check_levels(GridSize g, std::size_t levels) {
  const std::size_t f = std::size_t{1} << levels;
  require(levels >= 1 && g.rows % f == 0 && g.cols % f == 0 && g.rows / f >= 2 && g.cols / f >= 2,
          Errc::invalid_argument,
          "grid " + to_string(g) + " does not support " + std::to_string(levels) + " wavelet levels");
}

inline ComplexImage forward(ComplexImage img, std::size_t levels) {
  check_levels(img.grid(), levels);
  std::vector<cplx> buf;
  std::size_t rows = img.rows(), cols = img.cols();
  for (std::size_t l = 0; l < levels; ++l) {
    for (std::size_t r = 0; r < rows; ++r) analyze(&img(r, 0), cols, 1, buf);
    for (std::size_t c = 0; c < cols; ++c) analyze(&img(0, c), rows, img.cols(), buf);
    rows /= 2;
    cols /= 2;
  }
  return img;
}

inline ComplexImage inverse(ComplexImage coef, std::size_t levels) {
  check_levels(coef.grid(), levels);
  std::vector<cplx> buf;
  for (std::size_t l = levels; l-- > 0;) {
    const std::size_t rows = coef.rows() >> l, cols = coef.cols() >> l;
    for (std::size_t c = 0; c < cols; ++c) synthesize(&coef(0, c), rows, coef.cols(), buf);
    for (std::size_t r = 0; r < rows; ++r) synthesize(&coef(r, 0), cols, 1, buf);
  }
  return coef;
}

// Smallest power-of-two square holding the grid.
inline GridSize padded_grid(GridSize g) {
  std::size_t n = 1;
  while (n < std::max(g.rows, g.cols)) n <<= 1;
  return {n, n};
}

inline ComplexImage embed(const ComplexImage &x, GridSize padded) {
  ComplexImage out(padded);
  const std::size_t r0 = (padded.rows - x.rows()) / 2, c0 = (padded.cols - x.cols()) / 2;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r0 + r, c0 + c) = x(r, c);
  return out;
}

inline ComplexImage crop(const ComplexImage &x, GridSize g) {
  ComplexImage out(g);
  const std::size_t r0 = (x.rows() - g.rows) / 2, c0 = (x.cols() - g.cols) / 2;
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c) out(r, c) = x(r0 + r, c0 + c);
  return out;
}

// Complex soft-thresholding: c * max(0, 1 - tau / |c|).
inline void soft_threshold(ComplexImage &c, double tau) {
  for (auto &v : c) {
    const double m = std::abs(v);
    v = m > tau ? v * (1.0 - tau / m) : cplx{};
  }
}

inline double l1(const ComplexImage &c) {
  double s = 0.0;
  for (const auto &v : c) s += std::abs(v);
  return s;
}

}  // namespace wavelet

// ---------------------------------------------------------------------------
// Smoothed isotropic total variation with zero-boundary forward differences.

namespace tv {

struct Gradient {
  ComplexImage dh, dv;
};

inline Gradient differences(const ComplexImage &x) {
  Gradient g{ComplexImage(x.grid()), ComplexImage(x.grid())};
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (c + 1 < x.cols()) g.dh(r, c) = x(r, c + 1) - x(r, c);
      if (r + 1 < x.rows()) g.dv(r, c) = x(r + 1, c) - x(r, c);
    }
  return g;
}

inline double value(const ComplexImage &x, double eps) {
  const auto g = differences(x);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    s += std::sqrt(std::norm(g.dh[i]) + std::norm(g.dv[i]) + eps * eps);
  return s;
}

// Gradient with respect to the real and imaginary parts, packed as complex.
inline ComplexImage gradient(const ComplexImage &x, double eps) {
  auto g = differences(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = std::sqrt(std::norm(g.dh[i]) + std::norm(g.dv[i]) + eps * eps);
    g.dh[i] /= w;
    g.dv[i] /= w;
  }
  // Adjoint of the forward differences.
  ComplexImage out(x.grid());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) {
      cplx v = -g.dh(r, c) - g.dv(r, c);
      if (c >= 1) v += g.dh(r, c - 1);
      if (r >= 1) v += g.dv(r - 1, c);
      out(r, c) = v;
    }
  return out;
}

}  // namespace tv

// ---------------------------------------------------------------------------

inline ReconFrame recon_gridding(const KSpaceFrame &frame, const NufftPlan &plan,
                                 const SensitivityMaps &maps) {
  const auto t0 = std::chrono::steady_clock::now();
  ReconFrame out = sense_combine(frame, plan, maps);
  out.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline ReconFrame recon_gridding(const KSpaceFrame &frame, const Trajectory &traj,
                                 const SensitivityMaps &maps) {
  return recon_gridding(frame, NufftPlan(traj), maps);
}

namespace detail {

// The problem min 1/2||A x - y||^2 + lambda R(x) is solved in normalized form:
// x = s u with max|u0| = 1 and A scaled by 1/sqrt(L), so lambda is dimensionless
// and the data term has unit Lipschitz constant.
struct NormalizedProblem {
  double s = 0.0;          // image scale
  double a_scale = 1.0;    // 1/sqrt(L)
  std::vector<cplx> y;     // normalized data
  ComplexImage u0;         // normalized initialization
  bool zero = false;       // nothing to reconstruct
};

inline NormalizedProblem normalize_problem(const KSpaceFrame &frame, const SenseOperator &op) {
  require(frame.data.size() == op.data_size(), Errc::shape_mismatch, "frame size vs operator");
  NormalizedProblem np;
  ComplexImage x0 = coil_combine(frame, op.plan(), op.maps());
  const auto ax0 = op.forward(x0);
  const double den = squared_norm(ax0);
  if (!(den > 0.0)) {
    np.zero = true;
    np.u0 = ComplexImage(op.grid());
    return np;
  }
  const cplx alpha = inner(std::span<const cplx>(frame.data), std::span<const cplx>(ax0)) / den;
  double peak = 0.0;
  for (auto &v : x0) {
    v *= alpha;
    peak = std::max(peak, std::abs(v));
  }
  const double L = op.lipschitz();
  require(std::isfinite(L) && L > 0.0, Errc::non_convergent_step,
          "power iteration gave a non-positive Lipschitz estimate");
  np.s = peak;
  np.a_scale = 1.0 / std::sqrt(L);
  np.u0 = std::move(x0);
  for (auto &v : np.u0) v /= peak;
  np.y = frame.data;
  const double ys = 1.0 / (peak * std::sqrt(L));
  for (auto &v : np.y) v *= ys;
  return np;
}

inline std::vector<cplx> scaled_forward(const SenseOperator &op, const ComplexImage &u, double a) {
  auto r = op.forward(u);
  for (auto &v : r) v *= a;
  return r;
}

inline ComplexImage scaled_adjoint(const SenseOperator &op, std::span<const cplx> r, double a) {
  auto img = op.adjoint(r);
  for (auto &v : img) v *= a;
  return img;
}

inline double half_residual(std::span<const cplx> au, std::span<const cplx> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < au.size(); ++i) s += std::norm(au[i] - y[i]);
  return 0.5 * s;
}

inline ReconFrame finish(const ComplexImage &u, Method m, std::chrono::steady_clock::time_point t0) {
  ReconFrame out;
  out.image = magnitude_normalize(u);
  out.method = m;
  out.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace detail

// Wavelet-regularized CS by monotone FISTA in synthesis form over the
// coefficients of a power-of-two zero-padded embedding.
inline ReconFrame recon_wavelet(const KSpaceFrame &frame, const SenseOperator &op, const CSConfig &cfg,
                                CSReport *report = nullptr) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  auto np = detail::normalize_problem(frame, op);
  if (np.zero || cfg.iters == 0) {
    if (report) *report = {};
    return detail::finish(np.u0, Method::wavelet, t0);
  }
  const GridSize g = op.grid(), pg = wavelet::padded_grid(g);
  const std::size_t levels = cfg.wavelet_levels;
  const double a = np.a_scale, lambda = cfg.lambda;
  const double step = cfg.step.value_or(1.0);
  auto synth = [&](const ComplexImage &c) { return wavelet::crop(wavelet::inverse(c, levels), g); };
  auto analysis = [&](const ComplexImage &x) { return wavelet::forward(wavelet::embed(x, pg), levels); };
  auto objective = [&](const std::vector<cplx> &bc, const ComplexImage &c) {
    return detail::half_residual(bc, np.y) + lambda * wavelet::l1(c);
  };

  ComplexImage x = analysis(np.u0);
  std::vector<cplx> bx = detail::scaled_forward(op, synth(x), a);
  double fx = objective(bx, x);
  ComplexImage z = x;
  std::vector<cplx> bz = bx;
  double t = 1.0;
  CSReport rep;
  rep.lipschitz = op.lipschitz();
  rep.objective_initial = fx;
  rep.residual_initial = std::sqrt(2.0 * detail::half_residual(bx, np.y));

  std::vector<cplx> r(bz.size());
  for (std::size_t k = 0; k < cfg.iters; ++k) {
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = bz[i] - np.y[i];
    ComplexImage u = analysis(detail::scaled_adjoint(op, r, a));
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = z[i] - step * u[i];
    wavelet::soft_threshold(u, step * lambda);
    const auto bu = detail::scaled_forward(op, synth(u), a);
    const double fu = objective(bu, u);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const bool accept = fu <= fx;
    // z = x_new + (t/t')(u - x_new) + ((t-1)/t')(x_new - x_old); A z follows by linearity.
    const double cu = t / t_next, cd = (t - 1.0) / t_next;
    if (accept) {
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = u[i] + cd * (u[i] - x[i]);
      for (std::size_t i = 0; i < bz.size(); ++i) bz[i] = bu[i] + cd * (bu[i] - bx[i]);
      x = std::move(u);
      bx = bu;
      fx = fu;
    } else {
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + cu * (u[i] - x[i]);
      for (std::size_t i = 0; i < bz.size(); ++i) bz[i] = bx[i] + cu * (bu[i] - bx[i]);
    }
    t = t_next;
    rep.trace.push_back(fx);
  }
  rep.objective_final = fx;
  rep.residual_final = std::sqrt(2.0 * detail::half_residual(bx, np.y));
  if (report) *report = std::move(rep);
  return detail::finish(synth(x), Method::wavelet, t0);
}

// Smoothed-TV reconstruction by gradient descent. The first trial step is the
// Lipschitz bound 1 / (1 + 8 lambda / eps); the step is then adapted by
// backtracking so that every iteration decreases the objective.
inline ReconFrame recon_tv(const KSpaceFrame &frame, const SenseOperator &op, const CSConfig &cfg,
                           CSReport *report = nullptr) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  auto np = detail::normalize_problem(frame, op);
  if (np.zero || cfg.iters == 0) {
    if (report) *report = {};
    return detail::finish(np.u0, Method::tv, t0);
  }
  const double a = np.a_scale, lambda = cfg.lambda, eps = cfg.tv_epsilon;
  const double lipschitz_step = 1.0 / (1.0 + 8.0 * lambda / eps);
  double step = cfg.step.value_or(lipschitz_step);

  ComplexImage u = np.u0;
  std::vector<cplx> au = detail::scaled_forward(op, u, a);
  double fu = detail::half_residual(au, np.y) + lambda * tv::value(u, eps);
  CSReport rep;
  rep.lipschitz = op.lipschitz();
  rep.objective_initial = fu;
  rep.residual_initial = std::sqrt(2.0 * detail::half_residual(au, np.y));

  std::vector<cplx> r(au.size());
  for (std::size_t k = 0; k < cfg.iters; ++k) {
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = au[i] - np.y[i];
    ComplexImage grad = detail::scaled_adjoint(op, r, a);
    const ComplexImage gtv = tv::gradient(u, eps);
    double gnorm2 = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      grad[i] += lambda * gtv[i];
      gnorm2 += std::norm(grad[i]);
    }
    if (gnorm2 == 0.0) {
      rep.trace.push_back(fu);
      continue;
    }
    // Armijo backtracking; A(u - s g) = A u - s A g, so one forward per iteration.
    const auto ag = detail::scaled_forward(op, grad, a);
    ComplexImage cand(u.grid());
    std::vector<cplx> acand(au.size());
    double fc = fu;
    bool moved = false;
    for (int tries = 0; tries < 60; ++tries) {
      for (std::size_t i = 0; i < u.size(); ++i) cand[i] = u[i] - step * grad[i];
      for (std::size_t i = 0; i < au.size(); ++i) acand[i] = au[i] - step * ag[i];
      fc = detail::half_residual(acand, np.y) + lambda * tv::value(cand, eps);
      if (fc <= fu - 0.5 * step * gnorm2) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (moved) {
      u = cand;
      au = acand;
      fu = fc;
      if (!cfg.step) step = std::min(step * 1.5, 1.0);
    }
    rep.trace.push_back(fu);
  }
  rep.objective_final = fu;
  rep.residual_final = std::sqrt(2.0 * detail::half_residual(au, np.y));
  if (report) *report = std::move(rep);
  return detail::finish(u, Method::tv, t0);
}

// Restricts a 13-arm frame and its trajectory to the listed arms.
struct Undersampled {
  KSpaceFrame frame;
  Trajectory traj;
};

inline const std::vector<std::size_t> &default_undersampled_arms() {
  static const std::vector<std::size_t> arms{0, 6};
  return arms;
}

inline Undersampled undersample(const KSpaceFrame &frame, const Trajectory &traj,
                                const std::vector<std::size_t> &arms) {
  require(!arms.empty(), Errc::invalid_argument, "need at least one arm");
  require(frame.arms == traj.arms && frame.samples == traj.samples, Errc::shape_mismatch,
          "frame vs trajectory");
  Undersampled u{KSpaceFrame(frame.coils, arms.size(), frame.samples), select_arms(traj, arms)};
  u.frame.traj_ref = frame.traj_ref;
  u.frame.norm_scale = frame.norm_scale;
  for (std::size_t c = 0; c < frame.coils; ++c)
    for (std::size_t i = 0; i < arms.size(); ++i)
      for (std::size_t n = 0; n < frame.samples; ++n) u.frame.at(c, i, n) = frame.at(c, arms[i], n);
  return u;
}

}  // namespace sirem
