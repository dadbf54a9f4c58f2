#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <vector>

#include "baselines.hpp"
#include "coil.hpp"
#include "decoder.hpp"
#include "fusion.hpp"
#include "io.hpp"
#include "train.hpp"

namespace sirem {

// Single-frame inference: audio estimate from the pooled feature, measurement
// estimate from one arm-weighted adjoint per coil, then pixelwise fusion.
inline ReconFrame sirem_reconstruct(const KSpaceFrame &frame, const NufftPlan &plan, const SensitivityMaps &maps,
                                    const PooledFeature &feature, const SiremModel<float> &model, const EbAMap &eba) {
  const auto t0 = std::chrono::steady_clock::now();
  const PooledFeature zeros(model.zero_features ? feature.size() : 0, 0.0);
  RealImage xa = decode(model.zero_features ? zeros : feature, model.decoder);
  for (double &v : xa) v = std::clamp(v, 0.0, 1.0);
  const ArmProfile prof = model.arm_profile();
  const RealImage xm = magnitude_normalize(coil_combine(frame, plan, maps, prof.p));
  ReconFrame out = fuse(xa, xm, eba);
  out.method = model.zero_features ? Method::sirem_no_audio : Method::sirem;
  out.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

struct ReconOptions {
  const SiremModel<float> *model = nullptr;
  CSConfig wavelet = CSConfig::wavelet_defaults();
  CSConfig tv = CSConfig::tv_defaults();
  // Baselines use only these arms when set (e.g. {0, 6}); SIREM always sees all 13.
  std::optional<std::vector<std::size_t>> baseline_arms;
  std::size_t workers = 0;
};

inline std::vector<PooledFeature> pooled_features(const io::UtteranceData &u) {
  require(u.features.rank() == 3 && u.features.shape[0] == u.frames(), Errc::shape_mismatch,
          "features of '" + u.id + "' must be [T, L, d]");
  const std::size_t L = u.features.shape[1], d = u.features.shape[2];
  std::vector<PooledFeature> out;
  for (std::size_t t = 0; t < u.frames(); ++t) {
    FeatureSequence s;
    s.steps = L;
    s.dim = d;
    const auto first = u.features.data.begin() + static_cast<std::ptrdiff_t>(t * L * d);
    s.data.assign(first, first + static_cast<std::ptrdiff_t>(L * d));
    out.push_back(pool(s));
  }
  return out;
}

// Everything one method needs to reconstruct any frame of one utterance.
// Setup work (plans, Lipschitz constant, pooling) happens in the constructor
// so that timing operator() measures only per-frame reconstruction.
class FrameRunner {
 public:
  FrameRunner(Method method, const io::UtteranceData &u, const ReconOptions &opt)
      : method_(method), u_(&u), opt_(opt) {
    if (method == Method::reference) return;
    if (method == Method::sirem || method == Method::sirem_no_audio) {
      require(opt.model != nullptr, Errc::usage, "method '" + std::string(method_name(method)) + "' needs a model");
      io::check_feature_dim(*opt.model, u.features.shape.back());
      model_ = *opt.model;
      if (method == Method::sirem_no_audio) model_.zero_features = true;
      plan_ = std::make_unique<NufftPlan>(u.traj);
      features_ = pooled_features(u);
      return;
    }
    Trajectory traj = u.traj;
    if (opt.baseline_arms) {
      frames_.reserve(u.frames());
      for (const auto &f : u.kspace) frames_.push_back(undersample(f, u.traj, *opt.baseline_arms).frame);
      traj = select_arms(u.traj, *opt.baseline_arms);
    }
    plan_ = std::make_unique<NufftPlan>(traj);
    op_ = std::make_unique<SenseOperator>(*plan_, u.maps);
    if (method != Method::gridding) op_->lipschitz();
  }

  std::size_t frames() const { return u_->frames(); }
  Method method() const { return method_; }

  ReconFrame operator()(std::size_t t) const {
    const KSpaceFrame &k = frames_.empty() ? u_->kspace.at(t) : frames_.at(t);
    ReconFrame out;
    switch (method_) {
      case Method::reference: out = {u_->reference.at(t), Method::reference, t, 0.0}; break;
      case Method::sirem:
      case Method::sirem_no_audio:
        out = sirem_reconstruct(k, *plan_, u_->maps, features_.at(t), model_, u_->eba);
        break;
      case Method::gridding: out = recon_gridding(k, *plan_, u_->maps); break;
      case Method::wavelet: out = recon_wavelet(k, *op_, opt_.wavelet); break;
      case Method::tv: out = recon_tv(k, *op_, opt_.tv); break;
    }
    out.frame_id = t;
    return out;
  }

 private:
  Method method_;
  const io::UtteranceData *u_;
  ReconOptions opt_;
  SiremModel<float> model_;
  std::unique_ptr<NufftPlan> plan_;
  std::unique_ptr<SenseOperator> op_;
  std::vector<PooledFeature> features_;
  std::vector<KSpaceFrame> frames_;
};

// Reconstructs every frame; iterative baselines run frames in parallel.
inline std::vector<ReconFrame> reconstruct_frames(Method method, const io::UtteranceData &u, const ReconOptions &opt) {
  const FrameRunner run(method, u, opt);
  std::vector<ReconFrame> out(run.frames());
  const bool parallel = method == Method::wavelet || method == Method::tv;
  parallel_for(out.size(), [&](std::size_t t) { out[t] = run(t); }, parallel ? opt.workers : 1);
  return out;
}

}  // namespace sirem
