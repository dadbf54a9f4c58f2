#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "array.hpp"
#include "audio.hpp"

namespace sirem {

// Image decoder: three hidden blocks (linear -> layer norm -> GELU -> dropout)
// followed by a linear projection to the image grid and a sigmoid.
struct DecoderShape {
  std::size_t input_dim = 768;
  std::vector<std::size_t> hidden{1024, 2048, 2048};
  GridSize output{84, 84};
  double dropout = 0.1;

  std::size_t output_size() const { return output.pixels(); }
};

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Hidden layers carry layer-norm gain/offset; the output layer leaves them empty.
template <typename Scalar>
struct DenseLayer {
  Mat<Scalar> weight;  // [out, in]
  Mat<Scalar> bias;    // [out, 1]
  Mat<Scalar> gain;    // [out, 1]
  Mat<Scalar> offset;  // [out, 1]

  bool has_norm() const { return gain.size() > 0; }
};

template <typename Scalar>
struct DecoderParams {
  DecoderShape shape;
  std::uint64_t seed = 0;
  std::vector<DenseLayer<Scalar>> layers;
  // Bumped by every in-place update so cached activations can be checked.
  std::uint64_t version = 0;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto &l : layers) n += l.weight.size() + l.bias.size() + l.gain.size() + l.offset.size();
    return n;
  }

  // Visits (param, other, decay) pairs in a fixed order; `other` has the same layout.
  template <typename Other, typename Fn>
  void zip(Other &other, Fn &&fn) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto &a = layers[i];
      auto &b = other.layers[i];
      fn(a.weight, b.weight, true);
      fn(a.bias, b.bias, true);
      if (a.has_norm()) {
        fn(a.gain, b.gain, false);
        fn(a.offset, b.offset, false);
      }
    }
  }
  template <typename Fn>
  void for_each(Fn &&fn) const {
    for (const auto &l : layers) {
      fn(l.weight);
      fn(l.bias);
      if (l.has_norm()) {
        fn(l.gain);
        fn(l.offset);
      }
    }
  }

  // Every tensor with its weight-decay flag, in the same order as zip().
  std::vector<std::pair<Mat<Scalar> *, bool>> tensors() {
    std::vector<std::pair<Mat<Scalar> *, bool>> out;
    for (auto &l : layers) {
      out.emplace_back(&l.weight, true);
      out.emplace_back(&l.bias, true);
      if (l.has_norm()) {
        out.emplace_back(&l.gain, false);
        out.emplace_back(&l.offset, false);
      }
    }
    return out;
  }

  std::vector<std::pair<const Mat<Scalar> *, bool>> tensors() const {
    std::vector<std::pair<const Mat<Scalar> *, bool>> out;
    for (const auto &l : layers) {
      out.emplace_back(&l.weight, true);
      out.emplace_back(&l.bias, true);
      if (l.has_norm()) {
        out.emplace_back(&l.gain, false);
        out.emplace_back(&l.offset, false);
      }
    }
    return out;
  }

  DecoderParams zeros_like() const {
    DecoderParams z;
    z.shape = shape;
    z.seed = seed;
    for (const auto &l : layers) {
      DenseLayer<Scalar> d;
      d.weight = Mat<Scalar>::Zero(l.weight.rows(), l.weight.cols());
      d.bias = Mat<Scalar>::Zero(l.bias.rows(), 1);
      if (l.has_norm()) {
        d.gain = Mat<Scalar>::Zero(l.gain.rows(), 1);
        d.offset = Mat<Scalar>::Zero(l.offset.rows(), 1);
      }
      z.layers.push_back(std::move(d));
    }
    return z;
  }

  template <typename To>
  DecoderParams<To> cast() const {
    DecoderParams<To> out;
    out.shape = shape;
    out.seed = seed;
    for (const auto &l : layers) {
      DenseLayer<To> d;
      d.weight = l.weight.template cast<To>();
      d.bias = l.bias.template cast<To>();
      d.gain = l.gain.template cast<To>();
      d.offset = l.offset.template cast<To>();
      out.layers.push_back(std::move(d));
    }
    return out;
  }
};

template <typename Scalar>
DecoderParams<Scalar> init_decoder(const DecoderShape &shape, std::uint64_t seed) {
  require(shape.input_dim >= 1 && shape.output_size() >= 1, Errc::invalid_argument,
          "decoder dimensions must be positive");
  DecoderParams<Scalar> p;
  p.shape = shape;
  p.seed = seed;
  std::mt19937_64 rng(seed);
  std::size_t fan_in = shape.input_dim;
  auto make = [&](std::size_t out, bool norm) {
    DenseLayer<Scalar> l;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    l.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(fan_in));
    for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i) l.weight(i, j) = static_cast<Scalar>(u(rng));
    l.bias.resize(static_cast<Eigen::Index>(out), 1);
    for (Eigen::Index i = 0; i < l.bias.rows(); ++i) l.bias(i, 0) = static_cast<Scalar>(u(rng));
    if (norm) {
      l.gain = Mat<Scalar>::Ones(static_cast<Eigen::Index>(out), 1);
      l.offset = Mat<Scalar>::Zero(static_cast<Eigen::Index>(out), 1);
    }
    fan_in = out;
    return l;
  };
  for (std::size_t h : shape.hidden) p.layers.push_back(make(h, true));
  p.layers.push_back(make(shape.output_size(), false));
  return p;
}

struct DecodeMode {
  bool train = false;
  std::uint64_t dropout_seed = 0;
};

template <typename Scalar>
struct DecoderCache {
  const void *owner = nullptr;
  std::uint64_t version = 0;
  bool train = false;
  std::vector<Mat<Scalar>> inputs;     // input to each layer
  std::vector<Mat<Scalar>> normed;     // zhat per hidden layer
  std::vector<Mat<Scalar>> inv_std;    // [1, batch] per hidden layer
  std::vector<Mat<Scalar>> activated;  // gain*zhat+offset (GELU argument)
  std::vector<Mat<Scalar>> masks;      // dropout masks (scaled), train only
  Mat<Scalar> output;                  // sigmoid output [pixels, batch]
};

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;

template <typename Scalar>
Scalar gelu(Scalar x) {
  return static_cast<Scalar>(0.5) * x *
         (static_cast<Scalar>(1) + std::erf(x / static_cast<Scalar>(std::numbers::sqrt2)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar cdf = static_cast<Scalar>(0.5) *
                     (static_cast<Scalar>(1) + std::erf(x / static_cast<Scalar>(std::numbers::sqrt2)));
  const Scalar pdf = std::exp(static_cast<Scalar>(-0.5) * x * x) /
                     static_cast<Scalar>(std::sqrt(2.0 * std::numbers::pi));
  return cdf + x * pdf;
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return static_cast<Scalar>(1) / (static_cast<Scalar>(1) + std::exp(-x));
}

}  // namespace detail

// Batched forward pass; columns of `input` are pooled features. Returns
// [pixels, batch] in (0,1). Fills `cache` when given.
template <typename Scalar>
Mat<Scalar> decode_batch(const Mat<Scalar> &input, const DecoderParams<Scalar> &params,
                         DecodeMode mode = {}, DecoderCache<Scalar> *cache = nullptr) {
  require(static_cast<std::size_t>(input.rows()) == params.shape.input_dim,
          Errc::dimension_mismatch,
          "feature dimension " + std::to_string(input.rows()) + " vs decoder input " +
              std::to_string(params.shape.input_dim));
  const Eigen::Index batch = input.cols();
  if (cache) {
    *cache = {};
    cache->owner = &params;
    cache->version = params.version;
    cache->train = mode.train;
  }
  std::mt19937_64 rng(mode.dropout_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep = 1.0 - params.shape.dropout;

  Mat<Scalar> a = input;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const auto &layer = params.layers[li];
    if (cache) cache->inputs.push_back(a);
    Mat<Scalar> z = layer.weight * a;
    z.colwise() += layer.bias.col(0);
    if (!layer.has_norm()) {
      Mat<Scalar> out = z.unaryExpr([](Scalar v) { return detail::sigmoid(v); });
      if (cache) cache->output = out;
      return out;
    }
    const Scalar n = static_cast<Scalar>(z.rows());
    Mat<Scalar> mean = z.colwise().sum() / n;
    z.rowwise() -= mean.row(0);
    Mat<Scalar> inv = ((z.array().square().colwise().sum() / n) + static_cast<Scalar>(detail::kLayerNormEps))
                          .sqrt()
                          .inverse()
                          .matrix();
    Mat<Scalar> zhat = z.array().rowwise() * inv.row(0).array();
    Mat<Scalar> y = (zhat.array().colwise() * layer.gain.col(0).array()).colwise() +
                    layer.offset.col(0).array();
    a = y.unaryExpr([](Scalar v) { return detail::gelu(v); });
    if (mode.train && params.shape.dropout > 0.0) {
      Mat<Scalar> mask(a.rows(), batch);
      for (Eigen::Index j = 0; j < batch; ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
          mask(i, j) = u(rng) < keep ? static_cast<Scalar>(1.0 / keep) : Scalar(0);
      a = a.cwiseProduct(mask);
      if (cache) cache->masks.push_back(std::move(mask));
    } else if (cache) {
      cache->masks.emplace_back();
    }
    if (cache) {
      cache->normed.push_back(std::move(zhat));
      cache->inv_std.push_back(std::move(inv));
      cache->activated.push_back(std::move(y));
    }
  }
  fail(Errc::invalid_argument, "decoder has no output layer");
}

// Single pooled feature to an image in (0,1).
template <typename Scalar>
RealImage decode(const PooledFeature &feature, const DecoderParams<Scalar> &params,
                 DecodeMode mode = {}) {
  Mat<Scalar> in(static_cast<Eigen::Index>(feature.size()), 1);
  for (std::size_t i = 0; i < feature.size(); ++i) in(static_cast<Eigen::Index>(i), 0) = static_cast<Scalar>(feature[i]);
  Mat<Scalar> out = decode_batch(in, params, mode);
  RealImage img(params.shape.output);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(out(static_cast<Eigen::Index>(i), 0));
  return img;
}

template <typename Scalar>
struct DecoderGradients {
  DecoderParams<Scalar> params;
  Mat<Scalar> input;  // [input_dim, batch]
};

// Reverse-mode gradients of sum(upstream .* output) through the cached pass.
template <typename Scalar>
DecoderGradients<Scalar> decode_backward(const DecoderCache<Scalar> &cache,
                                         const DecoderParams<Scalar> &params,
                                         const Mat<Scalar> &upstream) {
  require(cache.owner == &params && cache.version == params.version && cache.output.size() > 0,
          Errc::stale_cache, "decoder cache does not belong to these parameters");
  require(upstream.rows() == cache.output.rows() && upstream.cols() == cache.output.cols(),
          Errc::shape_mismatch, "upstream gradient shape");
  DecoderGradients<Scalar> g{params.zeros_like(), {}};
  const std::size_t nl = params.layers.size();

  Mat<Scalar> delta = upstream.cwiseProduct(
      cache.output.cwiseProduct((Mat<Scalar>::Ones(cache.output.rows(), cache.output.cols()) - cache.output)));
  for (std::size_t k = nl; k-- > 0;) {
    const auto &layer = params.layers[k];
    auto &gl = g.params.layers[k];
    gl.weight.noalias() = delta * cache.inputs[k].transpose();
    gl.bias = delta.rowwise().sum();
    Mat<Scalar> da = layer.weight.transpose() * delta;
    if (k == 0) {
      g.input = std::move(da);
      break;
    }
    // Back through hidden block k-1: dropout, GELU, layer norm.
    const std::size_t h = k - 1;
    const auto &prev = params.layers[h];
    auto &gp = g.params.layers[h];
    if (cache.masks[h].size() > 0) da = da.cwiseProduct(cache.masks[h]);
    Mat<Scalar> dy = da.cwiseProduct(cache.activated[h].unaryExpr([](Scalar v) { return detail::gelu_grad(v); }));
    gp.gain = dy.cwiseProduct(cache.normed[h]).rowwise().sum();
    gp.offset = dy.rowwise().sum();
    Mat<Scalar> dzhat = dy.array().colwise() * prev.gain.col(0).array();
    const Scalar n = static_cast<Scalar>(dzhat.rows());
    Mat<Scalar> sum_d = dzhat.colwise().sum();
    Mat<Scalar> sum_dz = dzhat.cwiseProduct(cache.normed[h]).colwise().sum();
    Mat<Scalar> dz = (dzhat * n).rowwise() - sum_d.row(0);
    dz -= Mat<Scalar>(cache.normed[h].array().rowwise() * sum_dz.row(0).array());
    dz = dz.array().rowwise() * (cache.inv_std[h].row(0).array() / n);
    delta = std::move(dz);
  }
  return g;
}

}  // namespace sirem
