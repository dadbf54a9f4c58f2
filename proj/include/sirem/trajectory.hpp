#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "array.hpp"

namespace sirem {

inline constexpr std::size_t kArmsPerRotation = 13;
inline constexpr double kFrameRate = 12.81;      // 13-arm windows per second
inline constexpr double kReferenceRate = 83.28;  // 2-arm reference frames per second
inline constexpr double kAudioSampleRate = 16000.0;
inline constexpr double kDefaultAudioHalfWindow = 0.125;

// Spiral sampling pattern in normalized k-space (cycles per pixel, each
// component in [-0.5, 0.5]). coords is [arms, samples, 2] with component 0
// paired with image rows and component 1 with columns.
struct Trajectory {
  std::size_t arms = 0;
  std::size_t samples = 0;
  GridSize grid;
  std::vector<double> coords;
  std::vector<double> dcf;

  std::size_t total() const { return arms * samples; }
  double k0(std::size_t arm, std::size_t n) const { return coords[(arm * samples + n) * 2]; }
  double k1(std::size_t arm, std::size_t n) const { return coords[(arm * samples + n) * 2 + 1]; }
  double radius(std::size_t arm, std::size_t n) const { return std::hypot(k0(arm, n), k1(arm, n)); }
};

inline Trajectory density_compensation(Trajectory traj);

inline Trajectory gen_spiral(std::size_t arms, std::size_t samples_per_arm, double turns,
                             GridSize grid) {
  require(arms >= 1, Errc::invalid_argument, "spiral needs at least one arm");
  require(samples_per_arm >= 2, Errc::invalid_argument, "spiral needs at least two samples per arm");
  require(turns > 0.0, Errc::invalid_argument, "spiral turns must be positive");
  require(grid.rows > 0 && grid.cols > 0, Errc::invalid_argument, "grid must be non-empty");

  Trajectory t;
  t.arms = arms;
  t.samples = samples_per_arm;
  t.grid = grid;
  t.coords.resize(arms * samples_per_arm * 2);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < arms; ++i) {
    const double rot = two_pi * static_cast<double>(i) / static_cast<double>(arms);
    for (std::size_t n = 0; n < samples_per_arm; ++n) {
      const double s = static_cast<double>(n) / static_cast<double>(samples_per_arm - 1);
      const double r = 0.5 * s;
      const double theta = two_pi * turns * s + rot;
      t.coords[(i * samples_per_arm + n) * 2] = std::clamp(r * std::cos(theta), -0.5, 0.5);
      t.coords[(i * samples_per_arm + n) * 2 + 1] = std::clamp(r * std::sin(theta), -0.5, 0.5);
    }
  }
  return density_compensation(std::move(t));
}

// Radial ramp weights |k|, normalized to unit mean. A first sample sitting on
// the origin gets half the weight of its successor.
inline Trajectory density_compensation(Trajectory traj) {
  const std::size_t total = traj.total();
  traj.dcf.assign(total, 0.0);
  for (std::size_t i = 0; i < traj.arms; ++i) {
    for (std::size_t n = 0; n < traj.samples; ++n) traj.dcf[i * traj.samples + n] = traj.radius(i, n);
    if (traj.samples >= 2 && traj.radius(i, 0) == 0.0)
      traj.dcf[i * traj.samples] = 0.5 * traj.dcf[i * traj.samples + 1];
  }
  double mean = 0.0;
  for (double w : traj.dcf) mean += w;
  mean /= static_cast<double>(total);
  if (mean <= 0.0) {
    std::fill(traj.dcf.begin(), traj.dcf.end(), 1.0);
  } else {
    for (double &w : traj.dcf) w /= mean;
  }
  return traj;
}

// Arm `arm` of a trajectory, as a single-arm trajectory (useful for tests).
inline Trajectory select_arms(const Trajectory &traj, const std::vector<std::size_t> &arms) {
  Trajectory out;
  out.arms = arms.size();
  out.samples = traj.samples;
  out.grid = traj.grid;
  for (auto a : arms) {
    require(a < traj.arms, Errc::invalid_argument, "arm index out of range");
    auto c0 = traj.coords.begin() + static_cast<std::ptrdiff_t>(a * traj.samples * 2);
    out.coords.insert(out.coords.end(), c0, c0 + static_cast<std::ptrdiff_t>(traj.samples * 2));
    auto d0 = traj.dcf.begin() + static_cast<std::ptrdiff_t>(a * traj.samples);
    out.dcf.insert(out.dcf.end(), d0, d0 + static_cast<std::ptrdiff_t>(traj.samples));
  }
  return out;
}

struct FrameIndex {
  std::size_t frame_id = 0;
  std::vector<std::size_t> arm_ids;
  double center_time = 0.0;
  std::size_t ref_index = 0;
  std::pair<double, double> audio_span{0.0, 0.0};
};

inline std::vector<FrameIndex> group_frames(std::size_t arm_stream_length,
                                            std::size_t arms_per_frame = kArmsPerRotation) {
  require(arms_per_frame >= 1, Errc::invalid_argument, "arms per frame must be positive");
  require(arm_stream_length >= arms_per_frame, Errc::empty_input,
          "arm stream shorter than one frame");
  const std::size_t frames = arm_stream_length / arms_per_frame;
  std::vector<FrameIndex> out(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    out[t].frame_id = t;
    out[t].arm_ids.resize(arms_per_frame);
    for (std::size_t i = 0; i < arms_per_frame; ++i) out[t].arm_ids[i] = t * arms_per_frame + i;
  }
  return out;
}

// Nearest reference index j (timestamp j / rate) to c_t; ties go to the smaller index.
inline std::size_t align_reference(double center_time, double ref_rate) {
  require(center_time >= 0.0 && ref_rate > 0.0, Errc::invalid_argument,
          "alignment needs c_t >= 0 and a positive rate");
  const double guess = std::floor(center_time * ref_rate);
  const std::size_t lo = guess >= 1.0 ? static_cast<std::size_t>(guess) - 1 : 0;
  std::size_t best = lo;
  double best_dist = std::abs(static_cast<double>(lo) / ref_rate - center_time);
  for (std::size_t j = lo + 1; j <= lo + 3; ++j) {
    const double d = std::abs(static_cast<double>(j) / ref_rate - center_time);
    if (d < best_dist) {
      best = j;
      best_dist = d;
    }
  }
  return best;
}

inline std::pair<double, double> audio_window(double center_time, double half_width,
                                              double audio_len) {
  require(half_width > 0.0, Errc::invalid_argument, "audio window half-width must be positive");
  return {std::max(0.0, center_time - half_width), std::min(audio_len, center_time + half_width)};
}

// Center time of 13-arm window t when arms stream at frame_rate * 13 per second.
inline double frame_center_time(std::size_t frame, double frame_rate = kFrameRate) {
  return (static_cast<double>(frame) + 0.5) / frame_rate;
}

}  // namespace sirem
