#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "array.hpp"

namespace sirem {

inline constexpr double kPsnrCap = 300.0;
inline constexpr double kRealtimeBudgetMs = 1000.0 / 30.0;

inline void check_same_shape(const RealImage &a, const RealImage &b) {
  require(a.grid() == b.grid(), Errc::shape_mismatch,
          "metric operands " + to_string(a.grid()) + " vs " + to_string(b.grid()));
}

inline double mse(const RealImage &x, const RealImage &ref) {
  check_same_shape(x, ref);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - ref[i]) * (x[i] - ref[i]);
  return s / static_cast<double>(x.size());
}

inline double psnr(const RealImage &x, const RealImage &ref, double peak = 1.0) {
  require(peak > 0.0, Errc::invalid_argument, "PSNR peak must be positive");
  const double m = mse(x, ref);
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / m));
}

inline double nmse(const RealImage &x, const RealImage &ref) {
  check_same_shape(x, ref);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - ref[i]) * (x[i] - ref[i]);
    den += ref[i] * ref[i];
  }
  require(den > 0.0, Errc::zero_reference, "NMSE undefined for an all-zero reference");
  return num / den;
}

// Peak-normalized RMSE; with peak 1 this is sqrt(MSE) = 10^(-PSNR/20).
inline double nrmse(const RealImage &x, const RealImage &ref, double peak = 1.0) {
  return std::sqrt(mse(x, ref)) / peak;
}

namespace detail {

inline std::vector<double> normalized_gaussian(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double c = static_cast<double>(size / 2);
  double sum = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += g[i];
  }
  for (double &v : g) v /= sum;
  return g;
}

// Separable 'valid' correlation of img with taps along both axes.
inline RealImage valid_filter(const RealImage &img, const std::vector<double> &taps) {
  const std::size_t k = taps.size();
  const std::size_t rows = img.rows() - k + 1, cols = img.cols() - k + 1;
  RealImage tmp(img.rows(), cols), out(rows, cols);
  for (std::size_t r = 0; r < img.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += taps[t] * img(r, c + t);
      tmp(r, c) = acc;
    }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += taps[t] * tmp(r + t, c);
      out(r, c) = acc;
    }
  return out;
}

}  // namespace detail

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

inline double ssim(const RealImage &x, const RealImage &y, const SsimParams &p = {}) {
  check_same_shape(x, y);
  require(x.rows() >= p.window && x.cols() >= p.window, Errc::invalid_argument,
          "image smaller than the SSIM window");
  const auto g = detail::normalized_gaussian(p.window, p.sigma);
  RealImage xx(x.grid()), yy(x.grid()), xy(x.grid());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = detail::valid_filter(x, g), my = detail::valid_filter(y, g);
  const auto sxx = detail::valid_filter(xx, g), syy = detail::valid_filter(yy, g),
             sxy = detail::valid_filter(xy, g);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i],
                 cxy = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

// Zero-mean Laplacian-of-Gaussian kernel, size x size.
inline RealImage log_kernel(std::size_t size = 15, double sigma = 1.5) {
  RealImage k(size, size);
  const double c = static_cast<double>(size / 2);
  double sum = 0.0;
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      const double r2 = (static_cast<double>(i) - c) * (static_cast<double>(i) - c) +
                        (static_cast<double>(j) - c) * (static_cast<double>(j) - c);
      const double s2 = sigma * sigma;
      k(i, j) = -1.0 / (std::numbers::pi * s2 * s2) * (1.0 - r2 / (2.0 * s2)) * std::exp(-r2 / (2.0 * s2));
      sum += k(i, j);
    }
  const double mean = sum / static_cast<double>(k.size());
  for (double &v : k) v -= mean;
  return k;
}

// 'Same'-size correlation with zero padding.
inline RealImage filter_same(const RealImage &img, const RealImage &k) {
  const long kr = static_cast<long>(k.rows() / 2), kc = static_cast<long>(k.cols() / 2);
  const long rows = static_cast<long>(img.rows()), cols = static_cast<long>(img.cols());
  RealImage out(img.grid());
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (long i = 0; i < static_cast<long>(k.rows()); ++i) {
        const long rr = r + i - kr;
        if (rr < 0 || rr >= rows) continue;
        for (long j = 0; j < static_cast<long>(k.cols()); ++j) {
          const long cc = c + j - kc;
          if (cc < 0 || cc >= cols) continue;
          acc += k(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) *
                 img(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
        }
      }
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
    }
  return out;
}

// ||LoG(x) - LoG(ref)|| / ||LoG(ref)||; empty when the reference is constant.
inline std::optional<double> hfen(const RealImage &x, const RealImage &ref) {
  check_same_shape(x, ref);
  const auto [lo, hi] = std::minmax_element(ref.begin(), ref.end());
  if (ref.empty() || *lo == *hi) return std::nullopt;
  static const RealImage kernel = log_kernel();
  const auto lx = filter_same(x, kernel), lr = filter_same(ref, kernel);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    num += (lx[i] - lr[i]) * (lx[i] - lr[i]);
    den += lr[i] * lr[i];
  }
  if (den <= 0.0) return std::nullopt;
  return std::sqrt(num / den);
}

struct FrameMetrics {
  double psnr = 0.0;
  double mse = 0.0;
  std::optional<double> nmse;
  double nrmse = 0.0;
  double ssim = 0.0;
  std::optional<double> hfen;
};

inline FrameMetrics evaluate_frame(const RealImage &x, const RealImage &ref) {
  FrameMetrics m;
  m.mse = mse(x, ref);
  m.psnr = psnr(x, ref);
  m.nrmse = nrmse(x, ref);
  try {
    m.nmse = nmse(x, ref);
  } catch (const Error &) {
  }
  m.ssim = ssim(x, ref);
  m.hfen = hfen(x, ref);
  return m;
}

inline const std::vector<std::string> &metric_names() {
  static const std::vector<std::string> names{"psnr", "ssim", "hfen", "nrmse", "nmse", "mse"};
  return names;
}

inline std::optional<double> metric_value(const FrameMetrics &m, const std::string &name) {
  if (name == "psnr") return m.psnr;
  if (name == "ssim") return m.ssim;
  if (name == "hfen") return m.hfen;
  if (name == "nrmse") return m.nrmse;
  if (name == "nmse") return m.nmse;
  if (name == "mse") return m.mse;
  fail(Errc::invalid_argument, "unknown metric " + name);
}

// Mean of each metric over a sequence's frames; undefined values are skipped.
struct SequenceMetrics {
  std::string sequence;
  std::size_t frames = 0;
  std::vector<std::optional<double>> values;  // aligned with metric_names()
};

inline SequenceMetrics summarize_sequence(const std::string &name,
                                          const std::vector<FrameMetrics> &frames) {
  SequenceMetrics s;
  s.sequence = name;
  s.frames = frames.size();
  for (const auto &metric : metric_names()) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto &f : frames)
      if (auto v = metric_value(f, metric)) {
        sum += *v;
        ++n;
      }
    s.values.push_back(n ? std::optional<double>(sum / static_cast<double>(n)) : std::nullopt);
  }
  return s;
}

struct TimingStats {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  std::size_t samples = 0;

  double fps() const { return mean_ms > 0.0 ? 1000.0 / mean_ms : 0.0; }
  bool realtime() const { return mean_ms < kRealtimeBudgetMs; }
};

inline TimingStats timing_stats(const std::vector<double> &ms) {
  TimingStats t;
  t.samples = ms.size();
  if (ms.empty()) return t;
  for (double v : ms) t.mean_ms += v;
  t.mean_ms /= static_cast<double>(ms.size());
  double var = 0.0;
  for (double v : ms) var += (v - t.mean_ms) * (v - t.mean_ms);
  t.std_ms = ms.size() > 1 ? std::sqrt(var / static_cast<double>(ms.size() - 1)) : 0.0;
  return t;
}

struct MetricReport {
  std::string method;
  std::vector<SequenceMetrics> sequences;
  std::vector<std::optional<double>> aggregate;  // aligned with metric_names()
  TimingStats timing;
};

// Aggregate = mean of per-sequence values.
inline void aggregate(MetricReport &r) {
  r.aggregate.clear();
  for (std::size_t k = 0; k < metric_names().size(); ++k) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto &s : r.sequences)
      if (s.values[k]) {
        sum += *s.values[k];
        ++n;
      }
    r.aggregate.push_back(n ? std::optional<double>(sum / static_cast<double>(n)) : std::nullopt);
  }
}

// Wall-clock milliseconds of fn(frame) over `frames` frames and `repetitions`
// passes; one untimed warm-up call on frame 0 comes first.
inline std::vector<double> bench_samples(std::size_t frames, std::size_t repetitions,
                                         const std::function<void(std::size_t)> &fn) {
  require(frames >= 1, Errc::empty_input, "bench needs at least one frame");
  fn(0);
  std::vector<double> ms;
  ms.reserve(frames * repetitions);
  for (std::size_t rep = 0; rep < repetitions; ++rep)
    for (std::size_t f = 0; f < frames; ++f) {
      const auto t0 = std::chrono::steady_clock::now();
      fn(f);
      const auto t1 = std::chrono::steady_clock::now();
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
  return ms;
}

inline TimingStats bench(std::size_t frames, std::size_t repetitions,
                         const std::function<void(std::size_t)> &fn) {
  return timing_stats(bench_samples(frames, repetitions, fn));
}

}  // namespace sirem
