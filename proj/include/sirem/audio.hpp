#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "array.hpp"
#include "fft.hpp"

namespace sirem {

enum class FeatureSource { file_backed, mel };

// Time-indexed speech features, [steps, dim].
struct FeatureSequence {
  std::size_t steps = 0;
  std::size_t dim = 0;
  std::vector<float> data;
  FeatureSource source = FeatureSource::mel;

  float operator()(std::size_t l, std::size_t d) const { return data[l * dim + d]; }
};

using PooledFeature = std::vector<double>;

inline PooledFeature pool(const FeatureSequence &seq) {
  require(seq.steps >= 1, Errc::empty_input, "feature sequence has no time steps");
  require(seq.data.size() == seq.steps * seq.dim, Errc::shape_mismatch, "feature payload");
  PooledFeature out(seq.dim, 0.0);
  for (std::size_t l = 0; l < seq.steps; ++l)
    for (std::size_t d = 0; d < seq.dim; ++d) out[d] += seq(l, d);
  for (double &v : out) v /= static_cast<double>(seq.steps);
  return out;
}

namespace mel {

inline constexpr std::size_t kFrameLength = 400;  // 25 ms at 16 kHz
inline constexpr std::size_t kHop = 160;          // 10 ms
inline constexpr std::size_t kFftSize = 512;
inline constexpr std::size_t kBands = 64;
inline constexpr double kSampleRate = 16000.0;

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular filters on the HTK mel scale from 0 Hz to Nyquist, [bands, fft/2+1].
inline std::vector<double> filterbank(std::size_t bands = kBands, std::size_t nfft = kFftSize,
                                      double rate = kSampleRate) {
  const std::size_t bins = nfft / 2 + 1;
  std::vector<double> fb(bands * bins, 0.0);
  const double top = hz_to_mel(rate / 2.0);
  std::vector<double> edges(bands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(bands + 1));
  for (std::size_t b = 0; b < bands; ++b) {
    const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = rate * static_cast<double>(k) / static_cast<double>(nfft);
      double v = 0.0;
      if (f > lo && f <= mid) v = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) v = (hi - f) / (hi - mid);
      fb[b * bins + k] = v;
    }
  }
  return fb;
}

inline double band_center_hz(std::size_t band, std::size_t bands = kBands, double rate = kSampleRate) {
  const double top = hz_to_mel(rate / 2.0);
  return mel_to_hz(top * static_cast<double>(band + 1) / static_cast<double>(bands + 1));
}

inline std::size_t frame_count(std::size_t samples) {
  return samples < kFrameLength ? 0 : (samples - kFrameLength) / kHop + 1;
}

}  // namespace mel

// Log-mel stand-in encoder: 25 ms Hann frames every 10 ms, |FFT|, 64 mel
// bands, log(1 + x).
inline FeatureSequence encode_mel(std::span<const double> waveform) {
  using namespace mel;
  require(waveform.size() >= kFrameLength, Errc::empty_input,
          "waveform shorter than one 400-sample frame");
  const std::size_t frames = frame_count(waveform.size());
  const std::size_t bins = kFftSize / 2 + 1;
  static const std::vector<double> fb = filterbank();
  std::vector<double> window(kFrameLength);
  for (std::size_t i = 0; i < kFrameLength; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                      static_cast<double>(kFrameLength));

  FeatureSequence out;
  out.steps = frames;
  out.dim = kBands;
  out.source = FeatureSource::mel;
  out.data.resize(frames * kBands);
  std::vector<cplx> buf(kFftSize);
  std::vector<double> mag(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), cplx{});
    for (std::size_t i = 0; i < kFrameLength; ++i) buf[i] = waveform[t * kHop + i] * window[i];
    fft::forward1d(buf);
    for (std::size_t k = 0; k < bins; ++k) mag[k] = std::abs(buf[k]);
    for (std::size_t b = 0; b < kBands; ++b) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += fb[b * bins + k] * mag[k];
      out.data[t * kBands + b] = static_cast<float>(std::log1p(e));
    }
  }
  return out;
}

}  // namespace sirem
