#include <doctest.h>

#include <map>

#include "cdpad/backbone.hpp"
#include "cdpad/gradcheck.hpp"
#include "cdpad/ops.hpp"
#include "cdpad/rng.hpp"

using namespace cdpad;

namespace {

/// Independent count-by-formula oracle over the derived stage widths.
std::int64_t backbone_param_oracle(const BackboneConfig& config) {
  auto sw = [&](int w) { return config.stage_width(w); };
  auto conv = [](int k, int cin, int cout) {
    return static_cast<std::int64_t>(k) * k * cin * cout + cout;
  };
  auto resblock = [](int c) { return 2 * (9ll * c * 2 * c + 2ll * c); };

  const int w1 = sw(96), w2a = sw(96), w2 = sw(192), w3a = sw(192), w3 = sw(384);
  const int w4a = sw(384), w4 = sw(256), w5a = sw(256), w5 = sw(256), wl = sw(512);

  std::int64_t total = 0;
  total += conv(5, 1, w1);
  total += 1 * resblock(w1 / 2);
  total += conv(1, w1 / 2, w2a) + conv(3, w2a / 2, w2);
  total += 2 * resblock(w2 / 2);
  total += conv(1, w2 / 2, w3a) + conv(3, w3a / 2, w3);
  total += 3 * resblock(w3 / 2);
  total += conv(1, w3 / 2, w4a) + conv(3, w4a / 2, w4);
  total += 4 * resblock(w4 / 2);
  total += conv(1, w4 / 2, w5a) + conv(3, w5a / 2, w5);

  // flattened spatial size after the four ceil-mode poolings
  int h = config.input_height, w = config.input_width;
  for (int i = 0; i < 4; ++i) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  total += static_cast<std::int64_t>(h) * w * (w5 / 2) * wl + wl;
  return total;
}

}  // namespace

TEST_SUITE_BEGIN("backbone");

TEST_CASE("full preset reproduces every reference parameter count") {
  auto model = build_backbone<float>(BackboneConfig::full(), 1);
  const ParamReport report = param_report(model);

  std::map<std::string, std::int64_t> expected{
      {"conv1", 2496},         {"resblock1_1", 83136},
      {"conv2a", 4704},        {"conv2", 83136},
      {"resblock2_1", 332160}, {"resblock2_2", 332160},
      {"conv3a", 18624},       {"conv3", 332160},
      {"resblock3_1", 1327872},{"resblock3_2", 1327872},
      {"resblock3_3", 1327872},{"conv4a", 74112},
      {"conv4", 442624},       {"resblock4_1", 590336},
      {"resblock4_2", 590336}, {"resblock4_3", 590336},
      {"resblock4_4", 590336}, {"conv5a", 33024},
      {"conv5", 295168},       {"linear", 4194816},
  };
  REQUIRE(report.rows.size() == expected.size());
  for (const auto& row : report.rows) {
    INFO("layer ", row.name);
    REQUIRE(expected.count(row.name) == 1);
    CHECK(row.count == expected[row.name]);
  }
  CHECK(report.total == backbone_param_oracle(BackboneConfig::full()));
}

TEST_CASE("full preset reproduces every reference output shape") {
  auto model = build_backbone<float>(BackboneConfig::full(), 1);
  std::map<std::string, std::vector<int>> expected{
      {"conv1", {124, 118, 96}},    {"mfm1", {124, 118, 48}},
      {"pool1", {62, 59, 48}},      {"resblock1_1", {62, 59, 48}},
      {"conv2a", {62, 59, 96}},     {"mfm2a", {62, 59, 48}},
      {"conv2", {62, 59, 192}},     {"mfm2", {62, 59, 96}},
      {"pool2", {31, 30, 96}},      {"resblock2_2", {31, 30, 96}},
      {"conv3a", {31, 30, 192}},    {"mfm3a", {31, 30, 96}},
      {"conv3", {31, 30, 384}},     {"mfm3", {31, 30, 192}},
      {"pool3", {16, 15, 192}},     {"resblock3_3", {16, 15, 192}},
      {"conv4a", {16, 15, 384}},    {"mfm4a", {16, 15, 192}},
      {"conv4", {16, 15, 256}},     {"mfm4", {16, 15, 128}},
      {"resblock4_4", {16, 15, 128}},{"conv5a", {16, 15, 256}},
      {"mfm5a", {16, 15, 128}},     {"conv5", {16, 15, 256}},
      {"mfm5", {16, 15, 128}},      {"pool4", {8, 8, 128}},
      {"linear", {512}},            {"mfm6", {256}},
  };
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto it = expected.find(model.layers[i].name);
    if (it == expected.end()) continue;
    INFO("layer ", model.layers[i].name);
    CHECK(model.out_shapes[i] == it->second);
  }
  CHECK(model.embedding_dim == 256);
  CHECK(model.flatten_dim == 8192);
}

TEST_CASE("full preset forward pass hits every ledger shape") {
  auto model = build_backbone<float>(BackboneConfig::full(), 3);
  Tensor image({124, 118, 1});
  Rng rng(4);
  for (auto& v : image.data) v = static_cast<float>(rng.uniform());
  TapMapT<float> taps;
  Tensor emb = backbone_forward(model, image, nullptr, &taps);
  CHECK(emb.shape == std::vector<int>{256});
  CHECK(taps[TapId::Pool1].shape == std::vector<int>{62, 59, 48});
  CHECK(taps[TapId::Pool2].shape == std::vector<int>{31, 30, 96});
  CHECK(taps[TapId::Pool3].shape == std::vector<int>{16, 15, 192});
  CHECK(taps[TapId::Pool4].shape == std::vector<int>{8, 8, 128});
  CHECK(emb.all_finite());
}

TEST_CASE("all-zero image produces a finite embedding") {
  auto model = build_backbone<float>(BackboneConfig::tiny(), 5);
  Tensor image({32, 32, 1}, 0.0f);
  Tensor emb = backbone_forward(model, image);
  CHECK(emb.all_finite());
  CHECK(emb.shape == std::vector<int>{model.embedding_dim});
}

TEST_CASE("tiny preset totals match the formula oracle") {
  auto model = build_backbone<float>(BackboneConfig::tiny(), 1);
  const ParamReport report = param_report(model);
  CHECK(report.total == backbone_param_oracle(BackboneConfig::tiny()));

  std::int64_t rows_sum = 0;
  for (const auto& r : report.rows) rows_sum += r.count;
  CHECK(rows_sum == report.total);

  std::int64_t learnable = model.params.learnable_count();
  CHECK(learnable == report.total);
}

TEST_CASE("tiny preset keeps every tap divisible by four") {
  auto model = build_backbone<float>(BackboneConfig::tiny(), 1);
  for (TapId tap : {TapId::Pool1, TapId::Pool2, TapId::Pool3, TapId::Pool4}) {
    CHECK(model.tap_channels(tap) % 4 == 0);
  }
  CHECK(model.tap_channels(TapId::Pool3) == 32);
}

TEST_CASE("mfm is idempotent under half-duplication") {
  Rng rng(12);
  Tensor h({3, 4, 6});
  for (auto& v : h.data) v = static_cast<float>(rng.normal());
  Tensor doubled = concat_channels<float>({&h, &h});
  Tensor out = mfm(doubled);
  CHECK(out.shape == h.shape);
  CHECK(out.data == h.data);
}

TEST_CASE("forward is shape-stable and deterministic") {
  auto model = build_backbone<float>(BackboneConfig::tiny(), 77);
  Rng rng(13);
  Tensor a({32, 32, 1}), b({32, 32, 1});
  for (auto& v : a.data) v = static_cast<float>(rng.uniform());
  for (auto& v : b.data) v = static_cast<float>(rng.uniform());
  Tensor ea1 = backbone_forward(model, a);
  Tensor ea2 = backbone_forward(model, a);
  Tensor eb = backbone_forward(model, b);
  CHECK(ea1.data == ea2.data);     // bit-identical
  CHECK(ea1.shape == eb.shape);    // values never change shapes
}

TEST_CASE("resblock with zero conv weights is the identity") {
  auto model = build_backbone<float>(BackboneConfig::tiny(), 9);
  for (auto& layer : model.layers) {
    if (layer.kind != BackboneLayer<float>::Kind::Resblock) continue;
    model.params.at(layer.w_idx).value.fill(0.0f);
    model.params.at(layer.b_idx).value.fill(0.0f);
    model.params.at(layer.w2_idx).value.fill(0.0f);
    model.params.at(layer.b2_idx).value.fill(0.0f);
  }
  // with zero weights each block's branch is mfm(0) = 0, so output == input
  const int rb_index = [&] {
    for (std::size_t i = 0; i < model.layers.size(); ++i)
      if (model.layers[i].kind == BackboneLayer<float>::Kind::Resblock)
        return static_cast<int>(i);
    return -1;
  }();
  REQUIRE(rb_index >= 0);
  Rng rng(14);
  const auto& shape_before = model.out_shapes[static_cast<std::size_t>(rb_index - 1)];
  Tensor x(shape_before);
  for (auto& v : x.data) v = static_cast<float>(rng.normal());
  Tensor y = backbone_forward_range(model, x, rb_index, rb_index + 1);
  CHECK(y.data == x.data);
}

TEST_CASE("heads produce calibrated probabilities") {
  auto heads = build_heads<float>(2, 1);
  SUBCASE("zero weights give 0.5") {
    heads.params.at(heads.pad_w).value.fill(0.0f);
    heads.params.at(heads.pad_b).value.fill(0.0f);
    Tensor emb({2}, std::vector<float>{3.0f, -1.0f});
    Tensor p = heads_forward(heads, emb, HeadKind::Pad);
    CHECK(p.data[0] == doctest::Approx(0.5f));
  }
  SUBCASE("hand-set two-dimensional head") {
    heads.params.at(heads.pad_w).value.data = {1.0f, -1.0f};
    heads.params.at(heads.pad_b).value.fill(0.0f);
    Tensor emb({2}, std::vector<float>{2.0f, 1.0f});
    Tensor p = heads_forward(heads, emb, HeadKind::Pad);
    CHECK(p.data[0] == doctest::Approx(0.7311).epsilon(1e-3));
  }
  SUBCASE("aligned large-norm weights saturate toward 1") {
    heads.params.at(heads.pad_w).value.data = {50.0f, 50.0f};
    heads.params.at(heads.pad_b).value.fill(0.0f);
    Tensor emb({2}, std::vector<float>{1.0f, 1.0f});
    Tensor p = heads_forward(heads, emb, HeadKind::Pad);
    CHECK(p.data[0] > 0.999f);
  }
  SUBCASE("domain head stays in (0,1)") {
    Tensor emb({2}, std::vector<float>{0.3f, -0.7f});
    Tensor p = heads_forward(heads, emb, HeadKind::Domain);
    CHECK(p.data[0] > 0.0f);
    CHECK(p.data[0] < 1.0f);
  }
  SUBCASE("dimension mismatch is rejected") {
    Tensor emb({3});
    CHECK_THROWS_AS(heads_forward(heads, emb, HeadKind::Pad), Error);
  }
}

TEST_CASE("end-to-end gradient check on a micro model") {
  // small enough to probe densely: 8x8 input, minimum widths
  BackboneConfig config;
  config.preset = BackboneConfig::Preset::Tiny;
  config.input_height = 8;
  config.input_width = 8;
  config.width_multiplier = 0.01;  // every stage width collapses to 8
  auto model = build_backbone<double>(config, 2);
  auto heads = build_heads<double>(model.embedding_dim, 2);

  Rng rng(15);
  TensorT<double> image({8, 8, 1});
  for (auto& v : image.data) v = rng.uniform();
  const TensorT<double> label({1}, 1.0);

  auto loss_fn = [&](const TensorT<double>& img) {
    auto emb = backbone_forward(model, img);
    auto prob = heads_forward(heads, emb, HeadKind::Pad);
    return bce_loss_batch(prob, label);
  };

  BackboneCacheT<double> cache;
  auto emb = backbone_forward(model, image, &cache);
  HeadsCacheT<double> hc;
  auto prob = heads_forward(heads, emb, HeadKind::Pad, &hc);
  auto dprob = bce_loss_backward(prob, label);
  auto demb = heads_backward(heads, hc, HeadKind::Pad, dprob);
  auto dimg = backbone_backward(model, cache, demb, true);

  auto result = finite_difference_check<double>(loss_fn, image, dimg, 1e-5, 1e-6, 48);
  INFO("max rel error ", result.max_rel_error);
  CHECK(result.pass);

  // and through a parameter tensor: the first conv weights
  const int w_idx = model.layers[0].w_idx;
  auto f_param = [&](const TensorT<double>& w) {
    auto saved = model.params.at(w_idx).value;
    model.params.at(w_idx).value = w;
    auto e = backbone_forward(model, image);
    auto p = heads_forward(heads, e, HeadKind::Pad);
    const double loss = bce_loss_batch(p, label);
    model.params.at(w_idx).value = saved;
    return loss;
  };
  auto wgrad = model.params.at(w_idx).grad;
  auto wresult = finite_difference_check<double>(
      f_param, model.params.at(w_idx).value, wgrad, 1e-5, 1e-6, 48);
  INFO("weight max rel error ", wresult.max_rel_error);
  CHECK(wresult.pass);
}

TEST_SUITE_END();
