#pragma once

#include <cstdint>
#include <map>
#include <type_traits>
#include <optional>
#include <string>
#include <vector>

#include "cdpad/error.hpp"
#include "cdpad/ops.hpp"
#include "cdpad/param.hpp"
#include "cdpad/rng.hpp"
#include "cdpad/tensor.hpp"

namespace cdpad {

enum class TapId { Pool1 = 1, Pool2 = 2, Pool3 = 3, Pool4 = 4 };

inline const char* tap_name(TapId tap) {
  switch (tap) {
    case TapId::Pool1: return "pool1";
    case TapId::Pool2: return "pool2";
    case TapId::Pool3: return "pool3";
    case TapId::Pool4: return "pool4";
  }
  return "?";
}

inline TapId tap_from_string(const std::string& s) {
  if (s == "pool1") return TapId::Pool1;
  if (s == "pool2") return TapId::Pool2;
  if (s == "pool3") return TapId::Pool3;
  if (s == "pool4") return TapId::Pool4;
  fail(ErrorCode::Config, "unknown tap '" + s + "'");
}

/// Backbone geometry. The full preset is the 124x118 reference network;
/// the tiny preset shrinks the input to 32x32 and every stage width by
/// roughly 6x (rounded to a multiple of 8 so each pooling tap keeps a
/// channel count divisible by 4, which dense subnet insertion requires).
struct BackboneConfig {
  enum class Preset { Full, Tiny };
  Preset preset = Preset::Tiny;
  int input_height = 32;
  int input_width = 32;
  double width_multiplier = 1.0 / 6.0;

  static BackboneConfig full() {
    BackboneConfig c;
    c.preset = Preset::Full;
    c.input_height = 124;
    c.input_width = 118;
    c.width_multiplier = 1.0;
    return c;
  }

  static BackboneConfig tiny() { return BackboneConfig{}; }

  int stage_width(int full_width) const {
    const double scaled = full_width * width_multiplier;
    const long long w = 8 * std::max(1ll, std::llround(scaled / 8.0));
    return static_cast<int>(w);
  }

  const char* preset_name() const {
    return preset == Preset::Full ? "full" : "tiny";
  }
};

/// One backbone layer. Resblock entries describe a single residual
/// instance: two (conv 3x3 C->2C, MFM) pairs plus the identity skip.
template <class T>
struct BackboneLayer {
  enum class Kind { Conv, Mfm, Pool, Resblock, Flatten, Linear };
  Kind kind;
  std::string name;
  int kernel = 0, stride = 1, pad = 0;
  int in_ch = 0, out_ch = 0;
  int w_idx = -1, b_idx = -1;
  int w2_idx = -1, b2_idx = -1;  // second conv of a resblock
  std::optional<TapId> tap;      // set on pooling layers
};

template <class T>
struct BackboneModelT {
  BackboneConfig config;
  ParamSetT<T> params;
  std::vector<BackboneLayer<T>> layers;
  std::vector<std::vector<int>> out_shapes;  // per layer, single-sample HWC
  std::map<TapId, int> tap_layer;            // tap -> layer index
  int embedding_dim = 0;
  int flatten_dim = 0;

  int tap_index(TapId tap) const {
    auto it = tap_layer.find(tap);
    require(it != tap_layer.end(), ErrorCode::InvalidArgument,
            std::string("backbone has no tap ") + tap_name(tap));
    return it->second;
  }

  const std::vector<int>& tap_shape(TapId tap) const {
    return out_shapes[static_cast<std::size_t>(tap_index(tap))];
  }

  int tap_channels(TapId tap) const { return tap_shape(tap).back(); }
};

namespace detail {

template <class T>
int add_conv(BackboneModelT<T>& model, const std::string& name, int kernel,
             int pad, int in_ch, int out_ch, Rng& rng) {
  BackboneLayer<T> layer;
  layer.kind = BackboneLayer<T>::Kind::Conv;
  layer.name = name;
  layer.kernel = kernel;
  layer.stride = 1;
  layer.pad = pad;
  layer.in_ch = in_ch;
  layer.out_ch = out_ch;
  layer.w_idx = model.params.add(
      name + ".w",
      he_normal<T>({kernel, kernel, in_ch, out_ch},
                   static_cast<std::int64_t>(kernel) * kernel * in_ch, rng, 1.0));
  layer.b_idx = model.params.add(name + ".b", TensorT<T>::zeros({out_ch}));
  model.layers.push_back(std::move(layer));
  return static_cast<int>(model.layers.size()) - 1;
}

template <class T>
void add_mfm(BackboneModelT<T>& model, const std::string& name, int in_ch) {
  require(in_ch % 2 == 0, ErrorCode::ShapeMismatch,
          "mfm layer " + name + " needs an even channel count, got " +
              std::to_string(in_ch));
  BackboneLayer<T> layer;
  layer.kind = BackboneLayer<T>::Kind::Mfm;
  layer.name = name;
  layer.in_ch = in_ch;
  layer.out_ch = in_ch / 2;
  model.layers.push_back(std::move(layer));
}

template <class T>
void add_pool(BackboneModelT<T>& model, const std::string& name, TapId tap,
              int channels) {
  BackboneLayer<T> layer;
  layer.kind = BackboneLayer<T>::Kind::Pool;
  layer.name = name;
  layer.kernel = 2;
  layer.stride = 2;
  layer.in_ch = channels;
  layer.out_ch = channels;
  layer.tap = tap;
  model.layers.push_back(std::move(layer));
  model.tap_layer[tap] = static_cast<int>(model.layers.size()) - 1;
}

template <class T>
void add_resblock(BackboneModelT<T>& model, const std::string& name,
                  int channels, Rng& rng) {
  BackboneLayer<T> layer;
  layer.kind = BackboneLayer<T>::Kind::Resblock;
  layer.name = name;
  layer.kernel = 3;
  layer.pad = 1;
  layer.in_ch = channels;
  layer.out_ch = channels;
  const std::int64_t fan_in = 9ll * channels;
  layer.w_idx = model.params.add(
      name + ".conv1.w",
      he_normal<T>({3, 3, channels, 2 * channels}, fan_in, rng, 1.0));
  layer.b_idx = model.params.add(name + ".conv1.b", TensorT<T>::zeros({2 * channels}));
  layer.w2_idx = model.params.add(
      name + ".conv2.w",
      he_normal<T>({3, 3, channels, 2 * channels}, fan_in, rng, 0.09));
  layer.b2_idx = model.params.add(name + ".conv2.b", TensorT<T>::zeros({2 * channels}));
  model.layers.push_back(std::move(layer));
}

}  // namespace detail

/// Builds the backbone for a config. The layer sequence and, at the full
/// preset, every per-layer parameter count and output shape follow the
/// reference architecture ledger exactly.
template <class T>
BackboneModelT<T> build_backbone(const BackboneConfig& config, std::uint64_t seed) {
  BackboneModelT<T> model;
  model.config = config;
  Rng rng(derive_seed(seed, "backbone"));

  const int w1 = config.stage_width(96);
  const int w2a = config.stage_width(96);
  const int w2 = config.stage_width(192);
  const int w3a = config.stage_width(192);
  const int w3 = config.stage_width(384);
  const int w4a = config.stage_width(384);
  const int w4 = config.stage_width(256);
  const int w5a = config.stage_width(256);
  const int w5 = config.stage_width(256);
  const int wl = config.stage_width(512);
  for (int w : {w1, w2a, w2, w3a, w3, w4a, w4, w5a, w5, wl}) {
    require(w % 2 == 0, ErrorCode::ShapeMismatch,
            "derived stage width must be even, got " + std::to_string(w));
  }

  detail::add_conv(model, "conv1", 5, 2, 1, w1, rng);
  detail::add_mfm(model, "mfm1", w1);
  detail::add_pool(model, "pool1", TapId::Pool1, w1 / 2);
  detail::add_resblock(model, "resblock1_1", w1 / 2, rng);
  detail::add_conv(model, "conv2a", 1, 0, w1 / 2, w2a, rng);
  detail::add_mfm(model, "mfm2a", w2a);
  detail::add_conv(model, "conv2", 3, 1, w2a / 2, w2, rng);
  detail::add_mfm(model, "mfm2", w2);
  detail::add_pool(model, "pool2", TapId::Pool2, w2 / 2);
  for (int i = 1; i <= 2; ++i)
    detail::add_resblock(model, "resblock2_" + std::to_string(i), w2 / 2, rng);
  detail::add_conv(model, "conv3a", 1, 0, w2 / 2, w3a, rng);
  detail::add_mfm(model, "mfm3a", w3a);
  detail::add_conv(model, "conv3", 3, 1, w3a / 2, w3, rng);
  detail::add_mfm(model, "mfm3", w3);
  detail::add_pool(model, "pool3", TapId::Pool3, w3 / 2);
  for (int i = 1; i <= 3; ++i)
    detail::add_resblock(model, "resblock3_" + std::to_string(i), w3 / 2, rng);
  detail::add_conv(model, "conv4a", 1, 0, w3 / 2, w4a, rng);
  detail::add_mfm(model, "mfm4a", w4a);
  detail::add_conv(model, "conv4", 3, 1, w4a / 2, w4, rng);
  detail::add_mfm(model, "mfm4", w4);
  for (int i = 1; i <= 4; ++i)
    detail::add_resblock(model, "resblock4_" + std::to_string(i), w4 / 2, rng);
  detail::add_conv(model, "conv5a", 1, 0, w4 / 2, w5a, rng);
  detail::add_mfm(model, "mfm5a", w5a);
  detail::add_conv(model, "conv5", 3, 1, w5a / 2, w5, rng);
  detail::add_mfm(model, "mfm5", w5);
  detail::add_pool(model, "pool4", TapId::Pool4, w5 / 2);

  // spatial ledger up to pool4, then flatten + linear + mfm
  int h = config.input_height;
  int w = config.input_width;
  int c = 1;
  model.out_shapes.reserve(model.layers.size() + 3);
  for (const auto& layer : model.layers) {
    switch (layer.kind) {
      case BackboneLayer<T>::Kind::Conv:
        h = conv_out_dim(h, layer.kernel, 1, layer.pad);
        w = conv_out_dim(w, layer.kernel, 1, layer.pad);
        c = layer.out_ch;
        break;
      case BackboneLayer<T>::Kind::Mfm:
        c = layer.out_ch;
        break;
      case BackboneLayer<T>::Kind::Pool:
        h = pool_out_dim_ceil(h, 2, 2);
        w = pool_out_dim_ceil(w, 2, 2);
        break;
      case BackboneLayer<T>::Kind::Resblock:
        break;
      default:
        break;
    }
    model.out_shapes.push_back({h, w, c});
  }

  model.flatten_dim = h * w * c;
  {
    BackboneLayer<T> flat;
    flat.kind = BackboneLayer<T>::Kind::Flatten;
    flat.name = "flatten";
    flat.in_ch = c;
    flat.out_ch = model.flatten_dim;
    model.layers.push_back(std::move(flat));
    model.out_shapes.push_back({model.flatten_dim});
  }
  {
    BackboneLayer<T> lin;
    lin.kind = BackboneLayer<T>::Kind::Linear;
    lin.name = "linear";
    lin.in_ch = model.flatten_dim;
    lin.out_ch = wl;
    lin.w_idx = model.params.add(
        "linear.w",
        he_normal<T>({model.flatten_dim, wl}, model.flatten_dim, rng, 1.0));
    lin.b_idx = model.params.add("linear.b", TensorT<T>::zeros({wl}));
    model.layers.push_back(std::move(lin));
    model.out_shapes.push_back({wl});
  }
  detail::add_mfm(model, "mfm6", wl);
  model.out_shapes.push_back({wl / 2});
  model.embedding_dim = wl / 2;
  return model;
}

// ---------------------------------------------------------------------------
// forward / backward
// ---------------------------------------------------------------------------

template <class T>
struct BackboneLayerCache {
  TensorT<T> input;
  std::vector<std::int64_t> argmax;
  std::vector<std::uint8_t> winners;
  TensorT<T> rb_mid;
  std::vector<std::uint8_t> rb_winners1;
  std::vector<std::uint8_t> rb_winners2;
};

template <class T>
using BackboneCacheT = std::vector<BackboneLayerCache<T>>;

template <class T>
using TapMapT = std::map<TapId, TensorT<T>>;

namespace detail {

template <class T>
TensorT<T> resblock_apply(const BackboneModelT<T>& model,
                          const BackboneLayer<T>& layer, const TensorT<T>& x,
                          BackboneLayerCache<T>* cache) {
  const auto& w1 = model.params.at(layer.w_idx).value;
  const auto& b1 = model.params.at(layer.b_idx).value;
  const auto& w2 = model.params.at(layer.w2_idx).value;
  const auto& b2 = model.params.at(layer.b2_idx).value;
  TensorT<T> z1 = conv2d(x, w1, b1, 1, layer.pad);
  TensorT<T> m1 = mfm(z1, cache ? &cache->rb_winners1 : nullptr);
  TensorT<T> z2 = conv2d(m1, w2, b2, 1, layer.pad);
  TensorT<T> m2 = mfm(z2, cache ? &cache->rb_winners2 : nullptr);
  require(m2.same_shape(x), ErrorCode::ShapeMismatch,
          "resblock output shape must equal input shape");
  if (cache) cache->rb_mid = std::move(m1);
  TensorT<T> out = std::move(m2);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += x.data[i];
  return out;
}

}  // namespace detail

/// Runs layers [begin, end). The default spans the whole network. `cache`
/// (when training) records what each layer needs for the backward pass;
/// `taps` (when asked) receives a copy of each pooling output in the range.
template <class T>
TensorT<T> backbone_forward_range(const BackboneModelT<T>& model, TensorT<T> x,
                                  int begin, int end,
                                  std::type_identity_t<BackboneCacheT<T>>* cache = nullptr,
                                  std::type_identity_t<TapMapT<T>>* taps = nullptr) {
  if (cache && cache->size() != model.layers.size())
    cache->resize(model.layers.size());
  for (int i = begin; i < end; ++i) {
    const auto& layer = model.layers[static_cast<std::size_t>(i)];
    BackboneLayerCache<T>* lc =
        cache ? &(*cache)[static_cast<std::size_t>(i)] : nullptr;
    if (lc) lc->input = x;
    switch (layer.kind) {
      case BackboneLayer<T>::Kind::Conv: {
        const auto& w = model.params.at(layer.w_idx).value;
        const auto& b = model.params.at(layer.b_idx).value;
        x = conv2d(x, w, b, 1, layer.pad);
        break;
      }
      case BackboneLayer<T>::Kind::Mfm:
        x = mfm(x, lc ? &lc->winners : nullptr);
        break;
      case BackboneLayer<T>::Kind::Pool:
        x = maxpool2d_ceil(x, 2, 2, lc ? &lc->argmax : nullptr);
        if (taps && layer.tap) (*taps)[*layer.tap] = x;
        break;
      case BackboneLayer<T>::Kind::Resblock:
        x = detail::resblock_apply(model, layer, x, lc);
        break;
      case BackboneLayer<T>::Kind::Flatten: {
        const Nhwc d = as_nhwc(x);
        x.shape = d.batched ? std::vector<int>{d.n, d.h * d.w * d.c}
                            : std::vector<int>{d.h * d.w * d.c};
        break;
      }
      case BackboneLayer<T>::Kind::Linear: {
        const auto& w = model.params.at(layer.w_idx).value;
        const auto& b = model.params.at(layer.b_idx).value;
        x = linear(x, w, b);
        break;
      }
    }
  }
  return x;
}

/// Full forward pass: image (H,W,1) or batch (N,H,W,1) to the embedding.
template <class T>
TensorT<T> backbone_forward(const BackboneModelT<T>& model, const TensorT<T>& image,
                            std::type_identity_t<BackboneCacheT<T>>* cache = nullptr,
                            std::type_identity_t<TapMapT<T>>* taps = nullptr) {
  const Nhwc d = as_nhwc(image);
  require(d.h == model.config.input_height && d.w == model.config.input_width &&
              d.c == 1,
          ErrorCode::ShapeMismatch,
          "backbone expects " + std::to_string(model.config.input_height) + "x" +
              std::to_string(model.config.input_width) +
              "x1 input, got " + shape_string(image.shape));
  return backbone_forward_range(model, image, 0,
                                static_cast<int>(model.layers.size()), cache, taps);
}

namespace detail {

template <class T>
void accumulate_param_grad(ParamSetT<T>& params, int idx, const TensorT<T>& grad) {
  auto& entry = params.at(idx);
  if (!entry.trainable) return;
  entry.grad.add_scaled(grad, T(1));
  entry.grad_populated = true;
}

template <class T>
TensorT<T> conv_backward_into(ParamSetT<T>& params, int w_idx, int b_idx,
                              const TensorT<T>& input, int pad,
                              const TensorT<T>& grad_out, bool need_input_grad) {
  auto& wentry = params.at(w_idx);
  auto& bentry = params.at(b_idx);
  TensorT<T> grad_in;
  const bool want_w = wentry.trainable;
  conv2d_backward(input, wentry.value, 1, pad, grad_out,
                  need_input_grad ? &grad_in : nullptr,
                  want_w ? &wentry.grad : nullptr,
                  want_w ? &bentry.grad : nullptr);
  if (want_w) {
    wentry.grad_populated = true;
    bentry.grad_populated = true;
  }
  return grad_in;
}

}  // namespace detail

/// Backward over layers [begin, end): consumes the cache of a previous
/// forward over the same range, accumulates gradients for every trainable
/// parameter, and returns the gradient with respect to the range input
/// (unless `need_input_grad` is false).
template <class T>
TensorT<T> backbone_backward_range(BackboneModelT<T>& model,
                                   const BackboneCacheT<T>& cache, TensorT<T> grad,
                                   int begin, int end, bool need_input_grad = true) {
  for (int i = end - 1; i >= begin; --i) {
    const auto& layer = model.layers[static_cast<std::size_t>(i)];
    const auto& lc = cache[static_cast<std::size_t>(i)];
    const bool need_dx = (i > begin) || need_input_grad;
    switch (layer.kind) {
      case BackboneLayer<T>::Kind::Conv: {
        grad = detail::conv_backward_into(model.params, layer.w_idx, layer.b_idx,
                                          lc.input, layer.pad, grad, need_dx);
        break;
      }
      case BackboneLayer<T>::Kind::Mfm:
        grad = mfm_backward(lc.winners, lc.input.shape, grad);
        break;
      case BackboneLayer<T>::Kind::Pool:
        grad = maxpool2d_ceil_backward(lc.argmax, lc.input.shape, grad);
        break;
      case BackboneLayer<T>::Kind::Resblock: {
        // out = in + mfm(conv2(mfm(conv1(in)))); skip adds grad directly
        std::vector<int> z2_shape = lc.rb_mid.shape;
        z2_shape.back() *= 2;
        TensorT<T> dm2 = grad;  // gradient into the second mfm output
        TensorT<T> dz2 = mfm_backward(lc.rb_winners2, z2_shape, dm2);
        TensorT<T> dm1 = detail::conv_backward_into(
            model.params, layer.w2_idx, layer.b2_idx, lc.rb_mid, layer.pad, dz2, true);
        std::vector<int> z1_shape = lc.rb_mid.shape;
        z1_shape.back() *= 2;
        TensorT<T> dz1 = mfm_backward(lc.rb_winners1, z1_shape, dm1);
        TensorT<T> din = detail::conv_backward_into(
            model.params, layer.w_idx, layer.b_idx, lc.input, layer.pad, dz1, need_dx);
        if (need_dx) {
          din.add_scaled(grad, T(1));
          grad = std::move(din);
        }
        break;
      }
      case BackboneLayer<T>::Kind::Flatten:
        grad.shape = lc.input.shape;
        break;
      case BackboneLayer<T>::Kind::Linear: {
        auto& wentry = model.params.at(layer.w_idx);
        auto& bentry = model.params.at(layer.b_idx);
        TensorT<T> grad_in;
        const bool want_w = wentry.trainable;
        linear_backward(lc.input, wentry.value, grad,
                        need_dx ? &grad_in : nullptr,
                        want_w ? &wentry.grad : nullptr,
                        want_w ? &bentry.grad : nullptr);
        if (want_w) {
          wentry.grad_populated = true;
          bentry.grad_populated = true;
        }
        grad = std::move(grad_in);
        break;
      }
    }
  }
  return grad;
}

template <class T>
TensorT<T> backbone_backward(BackboneModelT<T>& model, const BackboneCacheT<T>& cache,
                             TensorT<T> grad_embedding, bool need_input_grad = false) {
  return backbone_backward_range(model, cache, std::move(grad_embedding), 0,
                                 static_cast<int>(model.layers.size()),
                                 need_input_grad);
}

// ---------------------------------------------------------------------------
// classification heads
// ---------------------------------------------------------------------------

enum class HeadKind { Pad, Domain };

/// PAD head: affine embedding->1 + sigmoid, output = probability of bonafide.
/// Domain head: affine->relu->affine + sigmoid, output = P(target domain).
template <class T>
struct HeadsT {
  ParamSetT<T> params;
  int embedding_dim = 0;
  int domain_hidden = 64;
  int pad_w = -1, pad_b = -1;
  int dom_w1 = -1, dom_b1 = -1, dom_w2 = -1, dom_b2 = -1;
};

template <class T>
HeadsT<T> build_heads(int embedding_dim, std::uint64_t seed, int domain_hidden = 64) {
  HeadsT<T> heads;
  heads.embedding_dim = embedding_dim;
  heads.domain_hidden = domain_hidden;
  Rng rng(derive_seed(seed, "heads"));
  heads.pad_w = heads.params.add(
      "pad.w", he_normal<T>({embedding_dim, 1}, embedding_dim, rng));
  heads.pad_b = heads.params.add("pad.b", TensorT<T>::zeros({1}));
  heads.dom_w1 = heads.params.add(
      "domain.w1", he_normal<T>({embedding_dim, domain_hidden}, embedding_dim, rng));
  heads.dom_b1 = heads.params.add("domain.b1", TensorT<T>::zeros({domain_hidden}));
  heads.dom_w2 = heads.params.add(
      "domain.w2", he_normal<T>({domain_hidden, 1}, domain_hidden, rng));
  heads.dom_b2 = heads.params.add("domain.b2", TensorT<T>::zeros({1}));
  return heads;
}

template <class T>
struct HeadsCacheT {
  TensorT<T> input;
  TensorT<T> hidden;  // post-relu (domain head)
  TensorT<T> prob;
};

/// Pre-sigmoid head outputs, shape (1) or (N). Evaluation paths convert
/// these to probabilities in double precision; a saturated head would
/// otherwise collapse distinct scores to exact 0/1 in float.
template <class T>
TensorT<T> heads_logits(const HeadsT<T>& heads, const TensorT<T>& embedding,
                        HeadKind kind) {
  const bool batched = embedding.rank() == 2;
  require(batched || embedding.rank() == 1, ErrorCode::ShapeMismatch,
          "heads_logits expects (E) or (N,E)");
  require(embedding.dim(batched ? 1 : 0) == heads.embedding_dim,
          ErrorCode::ShapeMismatch, "embedding dimension mismatch");
  TensorT<T> z;
  if (kind == HeadKind::Pad) {
    z = linear(embedding, heads.params.at(heads.pad_w).value,
               heads.params.at(heads.pad_b).value);
  } else {
    TensorT<T> z1 = linear(embedding, heads.params.at(heads.dom_w1).value,
                           heads.params.at(heads.dom_b1).value);
    TensorT<T> hidden = pointwise(z1, Pointwise::Relu);
    z = linear(hidden, heads.params.at(heads.dom_w2).value,
               heads.params.at(heads.dom_b2).value);
  }
  z.shape = batched ? std::vector<int>{embedding.dim(0)} : std::vector<int>{1};
  return z;
}

inline double sigmoid_double(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Embedding (E) or (N,E) -> probability (1) or (N).
template <class T>
TensorT<T> heads_forward(const HeadsT<T>& heads, const TensorT<T>& embedding,
                         HeadKind kind,
                         std::type_identity_t<HeadsCacheT<T>>* cache = nullptr) {
  const bool batched = embedding.rank() == 2;
  require(batched || embedding.rank() == 1, ErrorCode::ShapeMismatch,
          "heads_forward expects (E) or (N,E)");
  require(embedding.dim(batched ? 1 : 0) == heads.embedding_dim,
          ErrorCode::ShapeMismatch,
          "embedding dimension " + std::to_string(embedding.dim(batched ? 1 : 0)) +
              " does not match head input " + std::to_string(heads.embedding_dim));
  TensorT<T> prob;
  TensorT<T> hidden;
  if (kind == HeadKind::Pad) {
    TensorT<T> z = linear(embedding, heads.params.at(heads.pad_w).value,
                          heads.params.at(heads.pad_b).value);
    prob = pointwise(z, Pointwise::Sigmoid);
  } else {
    TensorT<T> z1 = linear(embedding, heads.params.at(heads.dom_w1).value,
                           heads.params.at(heads.dom_b1).value);
    hidden = pointwise(z1, Pointwise::Relu);
    TensorT<T> z2 = linear(hidden, heads.params.at(heads.dom_w2).value,
                           heads.params.at(heads.dom_b2).value);
    prob = pointwise(z2, Pointwise::Sigmoid);
  }
  prob.shape = batched ? std::vector<int>{embedding.dim(0)} : std::vector<int>{1};
  if (cache) {
    cache->input = embedding;
    cache->hidden = std::move(hidden);
    cache->prob = prob;
  }
  return prob;
}

/// Gradient of d(loss)/d(prob) back to d(loss)/d(embedding); trainable head
/// parameters accumulate their gradients.
template <class T>
TensorT<T> heads_backward(HeadsT<T>& heads, const HeadsCacheT<T>& cache,
                          HeadKind kind, const TensorT<T>& grad_prob) {
  const bool batched = cache.input.rank() == 2;
  const int batch = batched ? cache.input.dim(0) : 1;
  require(grad_prob.numel() == batch, ErrorCode::ShapeMismatch,
          "heads_backward grad size mismatch");

  // the sigmoid derivative is evaluated at the clamped probability so a
  // saturated head still receives a usable gradient (the same clamp the
  // BCE losses apply)
  TensorT<T> dz(batched ? std::vector<int>{batch, 1} : std::vector<int>{1});
  for (int i = 0; i < batch; ++i) {
    const T p = bce_clamp(cache.prob.data[static_cast<std::size_t>(i)]);
    dz.data[static_cast<std::size_t>(i)] =
        grad_prob.data[static_cast<std::size_t>(i)] * p * (T(1) - p);
  }

  auto backprop_linear = [&](int w_idx, int b_idx, const TensorT<T>& input,
                             const TensorT<T>& grad_out) {
    auto& wentry = heads.params.at(w_idx);
    auto& bentry = heads.params.at(b_idx);
    TensorT<T> grad_in;
    const bool want = wentry.trainable;
    linear_backward(input, wentry.value, grad_out, &grad_in,
                    want ? &wentry.grad : nullptr, want ? &bentry.grad : nullptr);
    if (want) {
      wentry.grad_populated = true;
      bentry.grad_populated = true;
    }
    return grad_in;
  };

  if (kind == HeadKind::Pad) {
    return backprop_linear(heads.pad_w, heads.pad_b, cache.input, dz);
  }
  TensorT<T> dh = backprop_linear(heads.dom_w2, heads.dom_b2, cache.hidden, dz);
  dh = pointwise_backward(cache.hidden, Pointwise::Relu, dh);
  return backprop_linear(heads.dom_w1, heads.dom_b1, cache.input, dh);
}

// ---------------------------------------------------------------------------
// parameter report
// ---------------------------------------------------------------------------

struct ParamReportRow {
  std::string name;
  std::string output_shape;
  std::int64_t count = 0;
};

struct ParamReport {
  std::vector<ParamReportRow> rows;
  std::int64_t total = 0;
};

template <class T>
ParamReport param_report(const BackboneModelT<T>& model) {
  ParamReport report;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& layer = model.layers[i];
    std::int64_t count = 0;
    switch (layer.kind) {
      case BackboneLayer<T>::Kind::Conv:
        count = conv2d_param_count(layer.kernel, layer.in_ch, layer.out_ch);
        break;
      case BackboneLayer<T>::Kind::Resblock:
        count = 2 * (9ll * layer.in_ch * 2 * layer.in_ch + 2ll * layer.in_ch);
        break;
      case BackboneLayer<T>::Kind::Linear:
        count = static_cast<std::int64_t>(layer.in_ch) * layer.out_ch + layer.out_ch;
        break;
      default:
        continue;
    }
    report.rows.push_back(
        {layer.name, shape_string(model.out_shapes[i]), count});
    report.total += count;
  }
  return report;
}

}  // namespace cdpad
