#pragma once

#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "cdpad/backbone.hpp"
#include "cdpad/error.hpp"
#include "cdpad/ops.hpp"
#include "cdpad/param.hpp"
#include "cdpad/tensor.hpp"

namespace cdpad {

enum class SubnetType { None, Dense, Residual };

inline const char* subnet_type_name(SubnetType t) {
  switch (t) {
    case SubnetType::None: return "none";
    case SubnetType::Dense: return "dense";
    case SubnetType::Residual: return "residual";
  }
  return "?";
}

inline SubnetType subnet_type_from_string(const std::string& s) {
  if (s == "none") return SubnetType::None;
  if (s == "dense") return SubnetType::Dense;
  if (s == "residual") return SubnetType::Residual;
  fail(ErrorCode::Config, "unknown subnet type '" + s + "'");
}

struct SubnetConfig {
  SubnetType type = SubnetType::Dense;
  TapId tap = TapId::Pool3;
  int in_channels = 0;  // channel count at the tap
  int growth = 0;       // dense growth; 0 derives in_channels / 4
};

/// Adaptation subnetwork inserted after a pooling tap of the source stream.
/// Dense: batchnorm, then four 3x3 convs with densely concatenated inputs;
/// the output is the concatenation of all four conv outputs (4g channels).
/// Residual: batchnorm -> conv3x3 -> relu -> conv3x3 with an identity skip;
/// the final conv starts at zero so insertion is initially transparent.
template <class T>
struct DdaSubnetworkT {
  SubnetConfig config;
  ParamSetT<T> params;
  int bn_scale = -1, bn_shift = -1, bn_mean = -1, bn_var = -1;
  int w_idx[4] = {-1, -1, -1, -1};
  int b_idx[4] = {-1, -1, -1, -1};
};

template <class T>
DdaSubnetworkT<T> build_dda(const SubnetConfig& config, std::uint64_t seed) {
  require(config.type != SubnetType::None, ErrorCode::InvalidArgument,
          "cannot build a subnet of type none");
  require(config.in_channels > 0, ErrorCode::InvalidArgument,
          "subnet needs the tap channel count");
  DdaSubnetworkT<T> subnet;
  subnet.config = config;
  const int c = config.in_channels;
  Rng rng(derive_seed(seed, "dda"));

  subnet.bn_scale = subnet.params.add("bn.scale", TensorT<T>::full({c}, T(1)));
  subnet.bn_shift = subnet.params.add("bn.shift", TensorT<T>::zeros({c}));
  subnet.bn_mean =
      subnet.params.add("bn.running_mean", TensorT<T>::zeros({c}), false, true);
  subnet.bn_var =
      subnet.params.add("bn.running_var", TensorT<T>::full({c}, T(1)), false, true);

  if (config.type == SubnetType::Dense) {
    int g = config.growth;
    if (g == 0) {
      require(c % 4 == 0, ErrorCode::ShapeMismatch,
              "dense subnet needs tap channels divisible by 4, got " +
                  std::to_string(c));
      g = c / 4;
    }
    require(4 * g == c, ErrorCode::ShapeMismatch,
            "dense subnet output 4*g = " + std::to_string(4 * g) +
                " must equal tap channels " + std::to_string(c));
    subnet.config.growth = g;
    const int in_ch[4] = {c, g, 2 * g, 3 * g};
    for (int i = 0; i < 4; ++i) {
      const std::string name = "conv" + std::to_string(i + 1);
      subnet.w_idx[i] = subnet.params.add(
          name + ".w", he_normal<T>({3, 3, in_ch[i], g}, 9ll * in_ch[i], rng));
      subnet.b_idx[i] = subnet.params.add(name + ".b", TensorT<T>::zeros({g}));
    }
  } else {
    subnet.config.growth = c;
    subnet.w_idx[0] = subnet.params.add(
        "conv1.w", he_normal<T>({3, 3, c, c}, 9ll * c, rng));
    subnet.b_idx[0] = subnet.params.add("conv1.b", TensorT<T>::zeros({c}));
    // zero final conv: the residual path starts as the identity map
    subnet.w_idx[1] = subnet.params.add("conv2.w", TensorT<T>::zeros({3, 3, c, c}));
    subnet.b_idx[1] = subnet.params.add("conv2.b", TensorT<T>::zeros({c}));
  }
  return subnet;
}

template <class T>
ParamReport dda_param_report(const DdaSubnetworkT<T>& subnet) {
  ParamReport report;
  const int c = subnet.config.in_channels;
  report.rows.push_back({"batchnorm", "", 2ll * c});
  report.total += 2ll * c;
  const int convs = subnet.config.type == SubnetType::Dense ? 4 : 2;
  for (int i = 0; i < convs; ++i) {
    const auto& w = subnet.params.at(subnet.w_idx[i]).value;
    const std::int64_t count = w.numel() + w.dim(3);
    report.rows.push_back({"conv" + std::to_string(i + 1), "", count});
    report.total += count;
  }
  return report;
}

template <class T>
struct DdaCacheT {
  BatchNormCache<T> bn;
  TensorT<T> bn_out;
  TensorT<T> stage[4];  // post-relu conv outputs (dense) / hidden (residual)
};

/// Applies the subnet to a tap activation; spatial dims are preserved and
/// the channel count equals the tap's. Train mode drives batch statistics.
template <class T>
TensorT<T> dda_forward(DdaSubnetworkT<T>& subnet, const TensorT<T>& input,
                       BatchNormMode mode,
                       std::type_identity_t<DdaCacheT<T>>* cache = nullptr) {
  const Nhwc d = as_nhwc(input);
  require(d.c == subnet.config.in_channels, ErrorCode::ShapeMismatch,
          "subnet expects " + std::to_string(subnet.config.in_channels) +
              " channels, got " + std::to_string(d.c));
  DdaCacheT<T> local;
  DdaCacheT<T>& cc = cache ? *cache : local;

  TensorT<T> u = batchnorm2d(input, subnet.params.at(subnet.bn_scale).value,
                             subnet.params.at(subnet.bn_shift).value, mode,
                             subnet.params.at(subnet.bn_mean).value,
                             subnet.params.at(subnet.bn_var).value, T(1e-5),
                             T(0.1), cache ? &cc.bn : nullptr);

  auto conv_relu = [&](int i, const TensorT<T>& x) {
    TensorT<T> z = conv2d(x, subnet.params.at(subnet.w_idx[i]).value,
                          subnet.params.at(subnet.b_idx[i]).value, 1, 1);
    return pointwise(z, Pointwise::Relu);
  };

  if (subnet.config.type == SubnetType::Dense) {
    cc.stage[0] = conv_relu(0, u);
    cc.stage[1] = conv_relu(1, cc.stage[0]);
    TensorT<T> cat12 = concat_channels<T>({&cc.stage[0], &cc.stage[1]});
    cc.stage[2] = conv_relu(2, cat12);
    TensorT<T> cat123 = concat_channels<T>({&cc.stage[0], &cc.stage[1], &cc.stage[2]});
    cc.stage[3] = conv_relu(3, cat123);
    TensorT<T> out = concat_channels<T>(
        {&cc.stage[0], &cc.stage[1], &cc.stage[2], &cc.stage[3]});
    if (cache) cc.bn_out = std::move(u);
    return out;
  }

  // residual: input + conv2(relu(conv1(bn(input))))
  cc.stage[0] = conv_relu(0, u);
  TensorT<T> r = conv2d(cc.stage[0], subnet.params.at(subnet.w_idx[1]).value,
                        subnet.params.at(subnet.b_idx[1]).value, 1, 1);
  require(r.same_shape(input), ErrorCode::ShapeMismatch,
          "residual subnet must preserve shape");
  for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] += input.data[i];
  if (cache) cc.bn_out = std::move(u);
  return r;
}

namespace detail {

template <class T>
TensorT<T> dda_conv_relu_backward(DdaSubnetworkT<T>& subnet, int i,
                                  const TensorT<T>& conv_input,
                                  const TensorT<T>& relu_out, const TensorT<T>& grad) {
  TensorT<T> dz = pointwise_backward(relu_out, Pointwise::Relu, grad);
  return conv_backward_into(subnet.params, subnet.w_idx[i], subnet.b_idx[i],
                            conv_input, 1, dz, true);
}

}  // namespace detail

/// Backward through the subnet; returns the gradient at the tap activation
/// and accumulates gradients on trainable subnet parameters.
template <class T>
TensorT<T> dda_backward(DdaSubnetworkT<T>& subnet, const DdaCacheT<T>& cache,
                        const TensorT<T>& grad_out) {
  TensorT<T> du;  // gradient at the batchnorm output
  if (subnet.config.type == SubnetType::Dense) {
    const std::vector<int>& block_shape = cache.stage[0].shape;
    std::vector<TensorT<T>> dblocks = concat_channels_backward(
        grad_out, {block_shape, block_shape, block_shape, block_shape});

    TensorT<T> cat123 =
        concat_channels<T>({&cache.stage[0], &cache.stage[1], &cache.stage[2]});
    TensorT<T> dcat123 = detail::dda_conv_relu_backward(
        subnet, 3, cat123, cache.stage[3], dblocks[3]);
    {
      auto split = concat_channels_backward(
          dcat123, {block_shape, block_shape, block_shape});
      for (int i = 0; i < 3; ++i) dblocks[static_cast<std::size_t>(i)].add_scaled(split[static_cast<std::size_t>(i)], T(1));
    }

    TensorT<T> cat12 = concat_channels<T>({&cache.stage[0], &cache.stage[1]});
    TensorT<T> dcat12 = detail::dda_conv_relu_backward(
        subnet, 2, cat12, cache.stage[2], dblocks[2]);
    {
      auto split = concat_channels_backward(dcat12, {block_shape, block_shape});
      for (int i = 0; i < 2; ++i) dblocks[static_cast<std::size_t>(i)].add_scaled(split[static_cast<std::size_t>(i)], T(1));
    }

    TensorT<T> dd1_from_2 = detail::dda_conv_relu_backward(
        subnet, 1, cache.stage[0], cache.stage[1], dblocks[1]);
    dblocks[0].add_scaled(dd1_from_2, T(1));

    du = detail::dda_conv_relu_backward(subnet, 0, cache.bn_out, cache.stage[0],
                                        dblocks[0]);
  } else {
    TensorT<T> dh = detail::conv_backward_into(subnet.params, subnet.w_idx[1],
                                               subnet.b_idx[1], cache.stage[0], 1,
                                               grad_out, true);
    dh = pointwise_backward(cache.stage[0], Pointwise::Relu, dh);
    du = detail::conv_backward_into(subnet.params, subnet.w_idx[0], subnet.b_idx[0],
                                    cache.bn_out, 1, dh, true);
  }

  auto& scale = subnet.params.at(subnet.bn_scale);
  auto& shift = subnet.params.at(subnet.bn_shift);
  TensorT<T> grad_in;
  const bool want = scale.trainable;
  batchnorm2d_backward(cache.bn, scale.value, du, &grad_in,
                       want ? &scale.grad : nullptr, want ? &shift.grad : nullptr);
  if (want) {
    scale.grad_populated = true;
    shift.grad_populated = true;
  }
  if (subnet.config.type == SubnetType::Residual) {
    grad_in.add_scaled(grad_out, T(1));  // identity skip
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// source stream: backbone with the subnet spliced in at a pooling tap
// ---------------------------------------------------------------------------

template <class T>
struct SourceStreamT {
  BackboneModelT<T>* backbone = nullptr;
  DdaSubnetworkT<T>* subnet = nullptr;  // null: plain backbone
  int tap_index = -1;
};

/// Splices the subnet into the backbone after its configured tap. Freezes
/// every backbone parameter and leaves exactly the subnet trainable.
template <class T>
SourceStreamT<T> insert_subnet(BackboneModelT<T>& backbone,
                               DdaSubnetworkT<T>* subnet) {
  SourceStreamT<T> stream;
  stream.backbone = &backbone;
  if (!subnet || subnet->config.type == SubnetType::None) {
    stream.subnet = nullptr;
    return stream;
  }
  const int tap_channels = backbone.tap_channels(subnet->config.tap);
  require(tap_channels == subnet->config.in_channels, ErrorCode::ShapeMismatch,
          "subnet built for " + std::to_string(subnet->config.in_channels) +
              " channels but tap " + tap_name(subnet->config.tap) + " has " +
              std::to_string(tap_channels));
  stream.subnet = subnet;
  stream.tap_index = backbone.tap_index(subnet->config.tap);
  backbone.params.set_all_trainable(false);
  subnet->params.set_all_trainable(true);
  return stream;
}

template <class T>
struct SourceCacheT {
  BackboneCacheT<T> backbone;
  DdaCacheT<T> subnet;
};

template <class T>
TensorT<T> source_forward(const SourceStreamT<T>& stream, const TensorT<T>& image,
                          BatchNormMode mode = BatchNormMode::Eval,
                          std::type_identity_t<SourceCacheT<T>>* cache = nullptr) {
  if (!stream.subnet) {
    return backbone_forward(*stream.backbone, image,
                            cache ? &cache->backbone : nullptr);
  }
  const int split = stream.tap_index + 1;
  const int total = static_cast<int>(stream.backbone->layers.size());
  TensorT<T> x = backbone_forward_range(*stream.backbone, image, 0, split,
                                        cache ? &cache->backbone : nullptr);
  x = dda_forward(*stream.subnet, x, mode, cache ? &cache->subnet : nullptr);
  return backbone_forward_range(*stream.backbone, std::move(x), split, total,
                                cache ? &cache->backbone : nullptr);
}

template <class T>
TensorT<T> source_backward(const SourceStreamT<T>& stream, const SourceCacheT<T>& cache,
                           TensorT<T> grad_embedding, bool need_input_grad = false) {
  const int total = static_cast<int>(stream.backbone->layers.size());
  if (!stream.subnet) {
    return backbone_backward_range(*stream.backbone, cache.backbone,
                                   std::move(grad_embedding), 0, total,
                                   need_input_grad);
  }
  const int split = stream.tap_index + 1;
  TensorT<T> g = backbone_backward_range(*stream.backbone, cache.backbone,
                                         std::move(grad_embedding), split, total,
                                         true);
  g = dda_backward(*stream.subnet, cache.subnet, g);
  const bool backbone_trainable = [&] {
    for (const auto& e : stream.backbone->params.entries)
      if (e.trainable) return true;
    return false;
  }();
  if (!need_input_grad && !backbone_trainable) return g;
  return backbone_backward_range(*stream.backbone, cache.backbone, std::move(g), 0,
                                 split, need_input_grad);
}

}  // namespace cdpad
