#include <benchmark/benchmark.h>

#include "cdpad/backbone.hpp"
#include "cdpad/ops.hpp"
#include "cdpad/regularizers.hpp"
#include "cdpad/rng.hpp"
#include "cdpad/synthdata.hpp"

using namespace cdpad;

namespace {

Tensor random_image(int h, int w, int c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({h, w, c});
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

void ConvForwardTiny(benchmark::State& state) {
  Rng rng(1);
  Tensor input = random_image(16, 16, 8, 2);
  Tensor weights({3, 3, 8, 16});
  for (auto& v : weights.data) v = static_cast<float>(rng.normal() * 0.1);
  Tensor bias({16});
  for (auto _ : state) {
    Tensor out = conv2d(input, weights, bias, 1, 1);
    benchmark::DoNotOptimize(out.data.data());
  }
}
BENCHMARK(ConvForwardTiny);

void ConvBackwardTiny(benchmark::State& state) {
  Rng rng(1);
  Tensor input = random_image(16, 16, 8, 2);
  Tensor weights({3, 3, 8, 16});
  for (auto& v : weights.data) v = static_cast<float>(rng.normal() * 0.1);
  Tensor bias({16});
  Tensor grad_out = conv2d(input, weights, bias, 1, 1);
  Tensor gin, gw(weights.shape), gb(bias.shape);
  for (auto _ : state) {
    gw.fill(0.0f);
    gb.fill(0.0f);
    conv2d_backward(input, weights, 1, 1, grad_out, &gin, &gw, &gb);
    benchmark::DoNotOptimize(gin.data.data());
  }
}
BENCHMARK(ConvBackwardTiny);

void MaxpoolCeil(benchmark::State& state) {
  Tensor input = random_image(31, 30, 96, 3);
  for (auto _ : state) {
    Tensor out = maxpool2d_ceil(input);
    benchmark::DoNotOptimize(out.data.data());
  }
}
BENCHMARK(MaxpoolCeil);

void TinyBackboneForward(benchmark::State& state) {
  auto model = build_backbone<float>(BackboneConfig::tiny(), 1);
  Tensor image = random_image(32, 32, 1, 4);
  for (auto _ : state) {
    Tensor emb = backbone_forward(model, image);
    benchmark::DoNotOptimize(emb.data.data());
  }
}
BENCHMARK(TinyBackboneForward);

void TinyBackboneTrainStep(benchmark::State& state) {
  auto model = build_backbone<float>(BackboneConfig::tiny(), 1);
  auto heads = build_heads<float>(model.embedding_dim, 1);
  Rng rng(5);
  Tensor batch({8, 32, 32, 1});
  for (auto& v : batch.data) v = static_cast<float>(rng.uniform());
  Tensor labels({8});
  for (int i = 0; i < 8; ++i) labels.data[static_cast<std::size_t>(i)] = i % 2 ? 1.0f : 0.0f;
  for (auto _ : state) {
    model.params.zero_grads();
    heads.params.zero_grads();
    BackboneCacheT<float> cache;
    Tensor emb = backbone_forward(model, batch, &cache);
    HeadsCacheT<float> hc;
    Tensor probs = heads_forward(heads, emb, HeadKind::Pad, &hc);
    Tensor dprobs = bce_loss_backward(probs, labels);
    Tensor demb = heads_backward(heads, hc, HeadKind::Pad, dprobs);
    backbone_backward(model, cache, std::move(demb), false);
    benchmark::DoNotOptimize(model.params.entries[0].grad.data.data());
  }
}
BENCHMARK(TinyBackboneTrainStep);

void MmdRbfMedian(benchmark::State& state) {
  Rng rng(6);
  TensorT<float> s({16, 44}), t({16, 44});
  for (auto& v : s.data) v = static_cast<float>(rng.normal());
  for (auto& v : t.data) v = static_cast<float>(rng.normal() + 0.5);
  TensorT<float> gs;
  for (auto _ : state) {
    const float v = mmd_squared(s, t, KernelSpec::rbf_median(), &gs, nullptr);
    benchmark::DoNotOptimize(v);
  }
}
BENCHMARK(MmdRbfMedian);

void RenderSample(benchmark::State& state) {
  SyntheticConfig config;
  std::uint64_t k = 0;
  for (auto _ : state) {
    Tensor img = render_sample(config, static_cast<int>(k % 8),
                               static_cast<int>(k / 8), PadClass::Bonafide,
                               AttackCategory::None, DomainTag::Target);
    benchmark::DoNotOptimize(img.data.data());
    ++k;
  }
}
BENCHMARK(RenderSample);

}  // namespace

BENCHMARK_MAIN();
