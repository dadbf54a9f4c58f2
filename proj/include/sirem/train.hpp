#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "coil.hpp"
#include "decoder.hpp"
#include "fusion.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "policy.hpp"

namespace sirem {

struct TrainConfig {
  double alpha = 0.1;
  double beta = 0.01;
  double gamma = 0.01;
  double K = kDefaultArmBudget;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  std::size_t batch = 8;
  std::size_t epochs = 20;
  double clip_norm = 1.0;
  std::size_t val_every = 5;
  std::uint64_t seed = 1;
  // Audio ablation: every pooled feature is replaced by zeros.
  bool zero_features = false;
  // Keeps p = 1 and never updates the arm logits.
  bool freeze_arms = false;
  std::size_t workers = 0;

  void validate() const {
    require(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0, Errc::invalid_argument,
            "loss weights must be non-negative");
    require(K > 0.0, Errc::invalid_argument, "arm budget must be positive");
    require(lr > 0.0 && weight_decay >= 0.0, Errc::invalid_argument, "learning rate / weight decay");
    require(batch >= 1, Errc::invalid_argument, "batch size must be positive");
    require(clip_norm > 0.0, Errc::invalid_argument, "clip norm must be positive");
    require(val_every >= 1, Errc::invalid_argument, "validation interval must be positive");
  }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

template <typename Scalar>
struct SiremModel {
  DecoderParams<Scalar> decoder;
  ArmLogits logits;
  bool freeze_arms = false;
  bool zero_features = false;

  ArmProfile arm_profile() const { return freeze_arms ? ArmProfile::ones() : profile(logits); }

  template <typename To>
  SiremModel<To> cast() const {
    return {decoder.template cast<To>(), logits, freeze_arms, zero_features};
  }
};

template <typename Scalar>
SiremModel<Scalar> init_model(const DecoderShape &shape, const TrainConfig &cfg) {
  return {init_decoder<Scalar>(shape, cfg.seed), ArmLogits{}, cfg.freeze_arms, cfg.zero_features};
}

using cfloat = std::complex<float>;
using ArmImagesF = std::vector<Image<cfloat>>;

// One frame prepared for training: per-arm coil-combined images, pooled
// feature and reference.
struct FrameSample {
  ArmImagesF arms;
  PooledFeature feature;
  RealImage reference;
};

struct TrainUtterance {
  std::string id;
  std::vector<FrameSample> frames;
  EbAMap eba;
};

inline ArmImagesF to_float(const ArmImages &arms) {
  ArmImagesF out;
  out.reserve(arms.size());
  for (const auto &a : arms) {
    Image<cfloat> f(a.grid());
    for (std::size_t i = 0; i < a.size(); ++i) f[i] = cfloat(a[i]);
    out.push_back(std::move(f));
  }
  return out;
}

// features: [T, L, d]; references: T frames; kspace: T frames on `plan`.
inline TrainUtterance prepare_utterance(std::string id, const std::vector<KSpaceFrame> &kspace,
                                        const NufftPlan &plan, const SensitivityMaps &maps,
                                        const NdArray<float> &features,
                                        const std::vector<RealImage> &references, EbAMap eba,
                                        std::size_t workers = 0) {
  require(!kspace.empty(), Errc::empty_input, "utterance '" + id + "' has no frames");
  require(features.rank() == 3 && features.shape[0] == kspace.size(), Errc::shape_mismatch,
          "features of '" + id + "' must be [T, L, d] with T = " + std::to_string(kspace.size()));
  require(references.size() == kspace.size(), Errc::shape_mismatch,
          "reference count of '" + id + "'");
  require(eba.w.grid() == plan.grid(), Errc::shape_mismatch, "EbA grid of '" + id + "'");
  TrainUtterance u;
  u.id = std::move(id);
  u.eba = std::move(eba);
  u.frames.resize(kspace.size());
  const std::size_t steps = features.shape[1], dim = features.shape[2];
  parallel_for(
      kspace.size(),
      [&](std::size_t t) {
        auto &fs = u.frames[t];
        fs.arms = to_float(compute_arm_images(kspace[t], plan, maps));
        FeatureSequence seq;
        seq.steps = steps;
        seq.dim = dim;
        const auto first = features.data.begin() + static_cast<std::ptrdiff_t>(features.offset({t}));
        seq.data.assign(first, first + static_cast<std::ptrdiff_t>(steps * dim));
        fs.feature = pool(seq);
        require(references[t].grid() == plan.grid(), Errc::shape_mismatch, "reference grid");
        fs.reference = references[t];
      },
      workers);
  return u;
}

struct BatchItem {
  const FrameSample *sample = nullptr;
  const EbAMap *eba = nullptr;
};

struct LossBreakdown {
  double recon = 0.0;
  double psf = 0.0;
  double budget = 0.0;
  double mask = 0.0;
  double total = 0.0;
};

template <typename Scalar>
struct Gradients {
  DecoderParams<Scalar> decoder;
  ArmVector logits{};
};

namespace detail {

template <typename Scalar>
Mat<Scalar> feature_matrix(const std::vector<const PooledFeature *> &features, std::size_t dim,
                           bool zero) {
  Mat<Scalar> in = Mat<Scalar>::Zero(static_cast<Eigen::Index>(dim),
                                     static_cast<Eigen::Index>(features.size()));
  if (zero) return in;
  for (std::size_t b = 0; b < features.size(); ++b) {
    require(features[b]->size() == dim, Errc::dimension_mismatch,
            "pooled feature dimension " + std::to_string(features[b]->size()) + " vs decoder input " +
                std::to_string(dim));
    for (std::size_t i = 0; i < dim; ++i)
      in(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) = static_cast<Scalar>((*features[b])[i]);
  }
  return in;
}

inline void check_loss_finite(const LossBreakdown &l) {
  require(std::isfinite(l.total), Errc::non_finite, "training loss is not finite");
}

}  // namespace detail

// Mean over the batch of |x_hat - x|^2 plus the weighted arm and mask terms.
// The mask term is reported but has no gradient because w is fixed.
template <typename Scalar>
LossBreakdown total_loss(const std::vector<BatchItem> &batch, const SiremModel<Scalar> &model,
                         const TrainConfig &cfg, DecodeMode mode = {}, Gradients<Scalar> *grads = nullptr) {
  require(!batch.empty(), Errc::empty_input, "empty training batch");
  const std::size_t B = batch.size();
  const GridSize g = model.decoder.shape.output;
  std::vector<const PooledFeature *> feats(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto &it = batch[b];
    require(it.sample && it.eba, Errc::invalid_argument, "batch item without data");
    require(it.sample->reference.grid() == g && it.eba->w.grid() == g &&
                it.sample->arms.size() == kArmsPerRotation && it.sample->arms.front().grid() == g,
            Errc::shape_mismatch, "batch item shapes differ from the decoder grid " + to_string(g));
    feats[b] = &it.sample->feature;
  }
  const auto input = detail::feature_matrix<Scalar>(feats, model.decoder.shape.input_dim, model.zero_features);
  DecoderCache<Scalar> cache;
  const Mat<Scalar> xa = decode_batch(input, model.decoder, mode, grads ? &cache : nullptr);
  const ArmProfile prof = model.arm_profile();

  const Eigen::Index P = static_cast<Eigen::Index>(g.pixels());
  Mat<Scalar> dec_up(P, static_cast<Eigen::Index>(B));
  std::vector<double> sq(B, 0.0), masks(B, 0.0);
  std::vector<ArmVector> dps(B);
  parallel_for(
      B,
      [&](std::size_t b) {
        const auto &s = *batch[b].sample;
        const auto &w = batch[b].eba->w;
        MriBranchCache mc;
        const RealImage xm = mri_branch(s.arms, prof, &mc);
        RealImage mri_up(g);
        double acc = 0.0;
        for (Eigen::Index i = 0; i < P; ++i) {
          const std::size_t k = static_cast<std::size_t>(i);
          const double a = static_cast<double>(xa(i, static_cast<Eigen::Index>(b)));
          const double r = w[k] * a + (1.0 - w[k]) * xm[k] - s.reference[k];
          acc += r * r;
          const double gr = 2.0 * r / static_cast<double>(B);
          dec_up(i, static_cast<Eigen::Index>(b)) = static_cast<Scalar>(w[k] * gr);
          mri_up[k] = (1.0 - w[k]) * gr;
        }
        sq[b] = acc;
        masks[b] = mask_loss(*batch[b].eba);
        if (grads && !model.freeze_arms) dps[b] = mri_branch_backward(s.arms, mc, mri_up);
      },
      cfg.workers);

  LossBreakdown l;
  for (std::size_t b = 0; b < B; ++b) {
    l.recon += sq[b];
    l.mask += masks[b];
  }
  l.recon /= static_cast<double>(B);
  l.mask /= static_cast<double>(B);
  l.psf = psf_loss(prof.p);
  l.budget = budget_loss(prof.p, cfg.K);
  l.total = l.recon + cfg.alpha * l.psf + cfg.beta * l.budget + cfg.gamma * l.mask;
  detail::check_loss_finite(l);

  if (grads) {
    grads->decoder = decode_backward(cache, model.decoder, dec_up).params;
    grads->logits.fill(0.0);
    if (!model.freeze_arms) {
      ArmVector dp{};
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < kArmsPerRotation; ++i) dp[i] += dps[b][i];
      const auto gp = psf_loss_grad(prof.p);
      const auto gb = budget_loss_grad(prof.p, cfg.K);
      for (std::size_t i = 0; i < kArmsPerRotation; ++i) dp[i] += cfg.alpha * gp[i] + cfg.beta * gb[i];
      grads->logits = policy_backward(prof, dp);
    }
  }
  return l;
}

template <typename Scalar>
double global_norm(const Gradients<Scalar> &g) {
  double s = 0.0;
  g.decoder.for_each([&](const Mat<Scalar> &m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double v = static_cast<double>(m.data()[i]);
      s += v * v;
    }
  });
  for (double v : g.logits) s += v * v;
  return std::sqrt(s);
}

// Scales every gradient by clip_norm / norm when the global norm exceeds
// clip_norm. Returns the norm before clipping.
template <typename Scalar>
double clip_gradients(Gradients<Scalar> &g, double clip_norm = 1.0) {
  const double n = global_norm(g);
  if (n > clip_norm) {
    const double s = clip_norm / n;
    for (auto &[m, decay] : g.decoder.tensors()) *m *= static_cast<Scalar>(s);
    for (double &v : g.logits) v *= s;
  }
  return n;
}

inline double cosine_lr(std::size_t epoch, const TrainConfig &cfg) {
  require(epoch <= cfg.epochs, Errc::invalid_argument, "epoch beyond the schedule");
  if (cfg.epochs == 0) return cfg.lr;
  const double v = 0.5 * cfg.lr *
                   (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(cfg.epochs)));
  return std::max(0.0, v);
}

// One decoupled-weight-decay Adam update over flat buffers. `step` is the
// 1-based step count after incrementing.
template <typename T>
void adamw_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                  std::uint64_t step, double lr, double weight_decay) {
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
  const double decay = 1.0 - lr * weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double gi = static_cast<double>(grad[i]);
    const double mi = kAdamBeta1 * static_cast<double>(m[i]) + (1.0 - kAdamBeta1) * gi;
    const double vi = kAdamBeta2 * static_cast<double>(v[i]) + (1.0 - kAdamBeta2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mh = mi / bc1, vh = vi / bc2;
    param[i] = static_cast<T>(static_cast<double>(param[i]) * decay - lr * mh / (std::sqrt(vh) + kAdamEps));
  }
}

template <typename Scalar>
struct TrainState {
  SiremModel<Scalar> model;
  DecoderParams<Scalar> m, v;
  ArmVector m_logits{}, v_logits{};
  std::uint64_t step = 0;
  double best_val_psnr = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  SiremModel<Scalar> best;
};

template <typename Scalar>
TrainState<Scalar> init_state(SiremModel<Scalar> model) {
  TrainState<Scalar> s;
  s.m = model.decoder.zeros_like();
  s.v = model.decoder.zeros_like();
  s.best = model;
  s.model = std::move(model);
  return s;
}

template <typename Scalar>
void optimizer_step(TrainState<Scalar> &st, const Gradients<Scalar> &g, double lr, const TrainConfig &cfg) {
  require(std::isfinite(global_norm(g)), Errc::non_finite, "gradient is not finite");
  ++st.step;
  auto params = st.model.decoder.tensors();
  auto ms = st.m.tensors();
  auto vs = st.v.tensors();
  const auto gs = g.decoder.tensors();
  require(params.size() == gs.size() && params.size() == ms.size(), Errc::shape_mismatch,
          "gradient layout differs from the parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto &p = *params[k].first;
    require(p.size() == gs[k].first->size(), Errc::shape_mismatch, "gradient tensor shape");
    const auto n = static_cast<std::size_t>(p.size());
    adamw_update<Scalar>({p.data(), n}, {gs[k].first->data(), n}, {ms[k].first->data(), n},
                         {vs[k].first->data(), n}, st.step, lr, params[k].second ? cfg.weight_decay : 0.0);
  }
  st.model.decoder.version++;
  if (!st.model.freeze_arms)
    adamw_update<double>(st.model.logits.ell, g.logits, st.m_logits, st.v_logits, st.step, lr, 0.0);
}

// Fused reconstructions of every frame of an utterance (eval mode).
template <typename Scalar>
std::vector<RealImage> reconstruct_utterance(const SiremModel<Scalar> &model, const TrainUtterance &u,
                                             std::size_t workers = 0) {
  std::vector<const PooledFeature *> feats;
  for (const auto &f : u.frames) feats.push_back(&f.feature);
  const auto input = detail::feature_matrix<Scalar>(feats, model.decoder.shape.input_dim, model.zero_features);
  const Mat<Scalar> xa = decode_batch(input, model.decoder);
  const ArmProfile prof = model.arm_profile();
  std::vector<RealImage> out(u.frames.size());
  parallel_for(
      u.frames.size(),
      [&](std::size_t t) {
        const RealImage xm = mri_branch(u.frames[t].arms, prof);
        RealImage a(xm.grid());
        for (std::size_t i = 0; i < a.size(); ++i)
          a[i] = std::clamp(static_cast<double>(xa(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t))), 0.0, 1.0);
        out[t] = fuse(a, xm, u.eba).image;
      },
      workers);
  return out;
}

// Frame-averaged PSNR per utterance, then averaged over utterances.
template <typename Scalar>
double validation_psnr(const SiremModel<Scalar> &model, const std::vector<TrainUtterance> &val,
                       std::size_t workers = 0) {
  require(!val.empty(), Errc::empty_input, "validation split is empty");
  double total = 0.0;
  for (const auto &u : val) {
    const auto rec = reconstruct_utterance(model, u, workers);
    double s = 0.0;
    for (std::size_t t = 0; t < rec.size(); ++t) s += psnr(rec[t], u.frames[t].reference);
    total += s / static_cast<double>(rec.size());
  }
  return total / static_cast<double>(val.size());
}

struct EpochLog {
  std::size_t epoch = 0;  // epochs completed when the row was written
  LossBreakdown loss;     // mean over the epoch's steps
  double lr = 0.0;
  double grad_norm = 0.0;  // mean pre-clip global norm
  std::size_t skipped_steps = 0;
  double val_psnr = std::numeric_limits<double>::quiet_NaN();
};

template <typename Scalar>
struct TrainResult {
  SiremModel<Scalar> model;  // best checkpoint
  double best_val_psnr = 0.0;
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
  TrainConfig config;
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <typename Scalar = float>
TrainResult<Scalar> train_loop(const std::vector<TrainUtterance> &train, const std::vector<TrainUtterance> &val,
                               const DecoderShape &shape, const TrainConfig &cfg,
                               const std::function<void(const EpochLog &)> &on_epoch = {}) {
  cfg.validate();
  require(!train.empty(), Errc::empty_input, "training split is empty");
  require(!val.empty(), Errc::empty_input, "validation split is empty");
  for (const auto &a : train)
    for (const auto &b : val)
      require(a.id != b.id, Errc::invalid_argument, "utterance '" + a.id + "' is in both splits");

  auto st = init_state(init_model<Scalar>(shape, cfg));
  std::vector<EpochLog> log;
  auto validate_at = [&](std::size_t epoch, EpochLog &row) {
    row.val_psnr = validation_psnr(st.model, val, cfg.workers);
    if (row.val_psnr > st.best_val_psnr) {
      st.best_val_psnr = row.val_psnr;
      st.best_epoch = epoch;
      st.best = st.model;
    }
  };
  {
    EpochLog row;
    row.lr = cosine_lr(0, cfg);
    validate_at(0, row);
    log.push_back(row);
    if (on_epoch) on_epoch(row);
  }

  std::vector<BatchItem> order;
  for (const auto &u : train)
    for (const auto &f : u.frames) order.push_back({&f, &u.eba});

  std::size_t bad_in_a_row = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double lr = cosine_lr(e, cfg);
    std::mt19937_64 rng(mix_seed(cfg.seed, e));
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog row;
    row.epoch = e + 1;
    row.lr = lr;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::vector<BatchItem> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch)));
      Gradients<Scalar> g;
      LossBreakdown l;
      try {
        l = total_loss(batch, st.model, cfg, {true, mix_seed(cfg.seed ^ 0xD50Bu, st.step)}, &g);
        require(std::isfinite(global_norm(g)), Errc::non_finite, "gradient is not finite");
      } catch (const Error &err) {
        if (err.code() != Errc::non_finite) throw;
        ++row.skipped_steps;
        if (++bad_in_a_row >= 2)
          fail(Errc::divergence, "non-finite loss in two consecutive steps at epoch " + std::to_string(e + 1));
        continue;
      }
      bad_in_a_row = 0;
      row.grad_norm += clip_gradients(g, cfg.clip_norm);
      optimizer_step(st, g, lr, cfg);
      row.loss.recon += l.recon;
      row.loss.psf += l.psf;
      row.loss.budget += l.budget;
      row.loss.mask += l.mask;
      row.loss.total += l.total;
      ++steps;
    }
    if (steps > 0) {
      const double n = static_cast<double>(steps);
      row.loss.recon /= n;
      row.loss.psf /= n;
      row.loss.budget /= n;
      row.loss.mask /= n;
      row.loss.total /= n;
      row.grad_norm /= n;
    }
    if ((e + 1) % cfg.val_every == 0 || e + 1 == cfg.epochs) validate_at(e + 1, row);
    log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return {st.best, st.best_val_psnr, st.best_epoch, std::move(log), cfg};
}

}  // namespace sirem
