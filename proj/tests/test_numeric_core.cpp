#include <doctest.h>

#include <cmath>

#include "cdpad/gradcheck.hpp"
#include "cdpad/ops.hpp"
#include "cdpad/param.hpp"
#include "cdpad/rng.hpp"
#include "cdpad/tensor.hpp"

using namespace cdpad;

namespace {

template <class T>
TensorT<T> random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  TensorT<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.normal() * scale);
  return t;
}

/// Direct-summation convolution oracle, independent of the conv2d loops.
template <class T>
TensorT<T> conv2d_oracle(const TensorT<T>& input, const TensorT<T>& weights,
                         const TensorT<T>& bias, int stride, int padding) {
  const Nhwc d = as_nhwc(input);
  const int k = weights.dim(0), cin = weights.dim(2), cout = weights.dim(3);
  const int oh = conv_out_dim(d.h, k, stride, padding);
  const int ow = conv_out_dim(d.w, k, stride, padding);
  Nhwc od = d;
  od.h = oh;
  od.w = ow;
  TensorT<T> out(nhwc_shape(od, cout));
  for (int n = 0; n < d.n; ++n)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int co = 0; co < cout; ++co) {
          double acc = bias.data[static_cast<std::size_t>(co)];
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx)
              for (int ci = 0; ci < cin; ++ci) {
                const int iy = oy * stride - padding + ky;
                const int ix = ox * stride - padding + kx;
                if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
                const std::int64_t in_idx =
                    ((static_cast<std::int64_t>(n) * d.h + iy) * d.w + ix) * cin + ci;
                const std::int64_t w_idx =
                    ((static_cast<std::int64_t>(ky) * k + kx) * cin + ci) * cout + co;
                acc += static_cast<double>(input.data[static_cast<std::size_t>(in_idx)]) *
                       static_cast<double>(weights.data[static_cast<std::size_t>(w_idx)]);
              }
          out.data[static_cast<std::size_t>(
              ((static_cast<std::int64_t>(n) * oh + oy) * ow + ox) * cout + co)] =
              static_cast<T>(acc);
        }
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("numeric_core");

TEST_CASE("tensor shape and data invariants") {
  Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.rank() == 3);
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>{1.0f}), Error);
  CHECK_THROWS_AS(Tensor({0, 3}), Error);
}

TEST_CASE("conv2d identity kernel") {
  Tensor input({1, 1, 1}, std::vector<float>{5.0f});
  Tensor w({1, 1, 1, 1}, std::vector<float>{1.0f});
  Tensor b({1}, std::vector<float>{0.0f});
  Tensor out = conv2d(input, w, b, 1, 0);
  CHECK(out.shape == std::vector<int>{1, 1, 1});
  CHECK(out.data[0] == doctest::Approx(5.0f));
}

TEST_CASE("conv2d all-ones kernel sums the window") {
  Tensor input({2, 2, 1}, std::vector<float>{1, 2, 3, 4});
  Tensor w({2, 2, 1, 1}, std::vector<float>{1, 1, 1, 1});
  Tensor b({1}, std::vector<float>{0.0f});
  Tensor out = conv2d(input, w, b, 1, 0);
  CHECK(out.shape == std::vector<int>{1, 1, 1});
  CHECK(out.data[0] == doctest::Approx(10.0f));
}

TEST_CASE("conv2d stem shape and parameter count") {
  // 124x118 single-channel through 96 5x5 filters at pad 2
  CHECK(conv_out_dim(124, 5, 1, 2) == 124);
  CHECK(conv_out_dim(118, 5, 1, 2) == 118);
  CHECK(conv2d_param_count(5, 1, 96) == 2496);
  CHECK(conv2d_param_count(3, 48, 192) == 83136);
}

TEST_CASE("conv2d matches the direct-summation oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 4; ++trial) {
    const int h = 3 + static_cast<int>(rng.uniform_int(4));
    const int w = 3 + static_cast<int>(rng.uniform_int(4));
    const int cin = 1 + static_cast<int>(rng.uniform_int(3));
    const int cout = 1 + static_cast<int>(rng.uniform_int(4));
    const int k = 1 + 2 * static_cast<int>(rng.uniform_int(2));  // 1 or 3
    const int pad = static_cast<int>(rng.uniform_int(2));
    const int stride = 1 + static_cast<int>(rng.uniform_int(2));
    auto input = random_tensor<double>({2, h, w, cin}, rng);
    auto weights = random_tensor<double>({k, k, cin, cout}, rng);
    auto bias = random_tensor<double>({cout}, rng);
    auto got = conv2d(input, weights, bias, stride, pad);
    auto want = conv2d_oracle(input, weights, bias, stride, pad);
    REQUIRE(got.shape == want.shape);
    for (std::int64_t i = 0; i < got.numel(); ++i)
      CHECK(got.data[static_cast<std::size_t>(i)] ==
            doctest::Approx(want.data[static_cast<std::size_t>(i)]).epsilon(1e-10));
  }
}

TEST_CASE("conv2d rejects channel mismatch") {
  Tensor input({4, 4, 3});
  Tensor w({3, 3, 2, 8});
  Tensor b({8});
  CHECK_THROWS_AS(conv2d(input, w, b, 1, 1), Error);
}

TEST_CASE("maxpool2d ceil-mode shapes") {
  CHECK(pool_out_dim_ceil(124, 2, 2) == 62);
  CHECK(pool_out_dim_ceil(31, 2, 2) == 16);
  CHECK(pool_out_dim_ceil(59, 2, 2) == 30);
  CHECK(pool_out_dim_ceil(15, 2, 2) == 8);
  Tensor t({31, 30, 192}, 1.0f);
  Tensor out = maxpool2d_ceil(t);
  CHECK(out.shape == std::vector<int>{16, 15, 192});
}

TEST_CASE("maxpool2d single window takes the max") {
  Tensor t({2, 2, 1}, std::vector<float>{1, 7, 3, 2});
  Tensor out = maxpool2d_ceil(t);
  CHECK(out.shape == std::vector<int>{1, 1, 1});
  CHECK(out.data[0] == 7.0f);
}

TEST_CASE("maxpool2d ceil row example") {
  Tensor t({1, 5, 1}, std::vector<float>{1, 3, 2, 5, 4});
  Tensor out = maxpool2d_ceil(t);
  CHECK(out.shape == std::vector<int>{1, 3, 1});
  CHECK(out.data[0] == 3.0f);
  CHECK(out.data[1] == 5.0f);
  CHECK(out.data[2] == 4.0f);
}

TEST_CASE("maxpool backward routes gradient to the argmax") {
  Tensor t({2, 2, 1}, std::vector<float>{1, 7, 3, 2});
  std::vector<std::int64_t> argmax;
  Tensor out = maxpool2d_ceil(t, 2, 2, &argmax);
  Tensor grad_out({1, 1, 1}, std::vector<float>{2.5f});
  Tensor grad_in = maxpool2d_ceil_backward(argmax, t.shape, grad_out);
  CHECK(grad_in.data[1] == 2.5f);
  CHECK(grad_in.data[0] == 0.0f);
  CHECK(grad_in.data[2] == 0.0f);
}

TEST_CASE("linear examples") {
  SUBCASE("identity weights") {
    Tensor x({3}, std::vector<float>{1, 2, 3});
    Tensor w({3, 3}, std::vector<float>{1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor b({3}, std::vector<float>{0, 0, 0});
    Tensor y = linear(x, w, b);
    for (int i = 0; i < 3; ++i) CHECK(y.data[static_cast<std::size_t>(i)] == x.data[static_cast<std::size_t>(i)]);
  }
  SUBCASE("hand matrix multiply") {
    Tensor x({2}, std::vector<float>{1, 2});
    Tensor w({2, 2}, std::vector<float>{1, 0, 0, 2});
    Tensor b({2}, std::vector<float>{0, 1});
    Tensor y = linear(x, w, b);
    CHECK(y.data[0] == doctest::Approx(1.0f));
    CHECK(y.data[1] == doctest::Approx(5.0f));
  }
  SUBCASE("parameter count 8192 -> 512") {
    CHECK(8192ll * 512 + 512 == 4194816);
  }
  SUBCASE("dimension mismatch") {
    Tensor x({3});
    Tensor w({2, 2});
    Tensor b({2});
    CHECK_THROWS_AS(linear(x, w, b), Error);
  }
}

TEST_CASE("batchnorm2d examples") {
  SUBCASE("constant input per channel yields the shift") {
    TensorT<double> x({2, 2, 2, 3});
    for (std::int64_t p = 0; p < 8; ++p)
      for (int c = 0; c < 3; ++c)
        x.data[static_cast<std::size_t>(p * 3 + c)] = 2.0 + c;
    TensorT<double> scale({3}, 1.0);
    TensorT<double> shift({3}, std::vector<double>{0.5, -1.0, 3.0});
    TensorT<double> rm({3}), rv({3}, 1.0);
    auto y = batchnorm2d(x, scale, shift, BatchNormMode::Train, rm, rv);
    for (std::int64_t p = 0; p < 8; ++p)
      for (int c = 0; c < 3; ++c)
        CHECK(y.data[static_cast<std::size_t>(p * 3 + c)] ==
              doctest::Approx(shift.data[static_cast<std::size_t>(c)]).epsilon(1e-9));
  }
  SUBCASE("192 channels give 384 learnable parameters") {
    CHECK(2 * 192 == 384);
  }
  SUBCASE("two-value batch normalizes to +/- 1") {
    Tensor x({2, 1, 1, 1}, std::vector<float>{1.0f, 3.0f});
    Tensor scale({1}, 1.0f), shift({1}, 0.0f), rm({1}), rv({1}, 1.0f);
    Tensor y = batchnorm2d(x, scale, shift, BatchNormMode::Train, rm, rv);
    CHECK(y.data[0] == doctest::Approx(-1.0).epsilon(1e-2));
    CHECK(y.data[1] == doctest::Approx(1.0).epsilon(1e-2));
  }
  SUBCASE("single-position train batch survives via epsilon") {
    Tensor x({1, 1, 1, 2}, std::vector<float>{4.0f, -4.0f});
    Tensor scale({2}, 1.0f), shift({2}, 0.0f), rm({2}), rv({2}, 1.0f);
    Tensor y = batchnorm2d(x, scale, shift, BatchNormMode::Train, rm, rv);
    CHECK(y.all_finite());
    CHECK(y.data[0] == doctest::Approx(0.0f));
  }
  SUBCASE("eval mode uses running statistics") {
    Tensor x({2, 1, 1, 1}, std::vector<float>{1.0f, 3.0f});
    Tensor scale({1}, 1.0f), shift({1}, 0.0f);
    Tensor rm({1}, 2.0f), rv({1}, 4.0f);
    Tensor y = batchnorm2d(x, scale, shift, BatchNormMode::Eval, rm, rv);
    CHECK(y.data[0] == doctest::Approx(-0.5).epsilon(1e-4));
    CHECK(y.data[1] == doctest::Approx(0.5).epsilon(1e-4));
  }
}

TEST_CASE("pointwise examples") {
  Tensor x({3}, std::vector<float>{-1, 0, 2});
  Tensor r = pointwise(x, Pointwise::Relu);
  CHECK(r.data[0] == 0.0f);
  CHECK(r.data[1] == 0.0f);
  CHECK(r.data[2] == 2.0f);

  Tensor z({2}, std::vector<float>{0.0f, std::log(3.0f)});
  Tensor s = pointwise(z, Pointwise::Sigmoid);
  CHECK(s.data[0] == doctest::Approx(0.5));
  CHECK(s.data[1] == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("concat_channels") {
  Tensor a({2, 2, 1}, 1.0f);
  Tensor b({2, 2, 2}, 2.0f);
  Tensor out = concat_channels<float>({&a, &b});
  CHECK(out.shape == std::vector<int>{2, 2, 3});
  CHECK(out.at(0, 0, 0) == 1.0f);
  CHECK(out.at(0, 0, 1) == 2.0f);
  CHECK(out.at(1, 1, 2) == 2.0f);

  SUBCASE("single input is the identity") {
    Tensor only = concat_channels<float>({&b});
    CHECK(only.shape == b.shape);
    CHECK(only.data == b.data);
  }
  SUBCASE("block structure and shape arithmetic") {
    CHECK(4 * 48 == 192);  // four equal blocks recombine to the tap width
  }
  SUBCASE("spatial mismatch is rejected") {
    Tensor c({3, 2, 1});
    CHECK_THROWS_AS(concat_channels<float>({&a, &c}), Error);
  }
  SUBCASE("backward splits by block") {
    Tensor grad({2, 2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    auto grads = concat_channels_backward(grad, {a.shape, b.shape});
    CHECK(grads[0].shape == a.shape);
    CHECK(grads[1].shape == b.shape);
    CHECK(grads[0].at(0, 0, 0) == 1.0f);
    CHECK(grads[1].at(0, 0, 0) == 2.0f);
    CHECK(grads[1].at(0, 0, 1) == 3.0f);
  }
}

TEST_CASE("mfm splits and maxes the trailing dimension") {
  Tensor x({1, 1, 2}, std::vector<float>{1, 4});
  Tensor y = mfm(x);
  CHECK(y.shape == std::vector<int>{1, 1, 1});
  CHECK(y.data[0] == 4.0f);

  SUBCASE("odd channel count is rejected") {
    Tensor odd({1, 1, 3});
    CHECK_THROWS_AS(mfm(odd), Error);
  }
  SUBCASE("vector form") {
    Tensor v({4}, std::vector<float>{1, 2, 5, 1});
    Tensor out = mfm(v);
    CHECK(out.shape == std::vector<int>{2});
    CHECK(out.data[0] == 5.0f);
    CHECK(out.data[1] == 2.0f);
  }
}

TEST_CASE("bce examples") {
  CHECK(bce_loss(1.0 - 1e-7, 1.0) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(bce_loss(0.5, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(bce_loss(0.5, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  // clamp keeps extreme predictions finite
  CHECK(std::isfinite(bce_loss(0.0, 1.0)));
  CHECK(std::isfinite(bce_loss(1.0, 0.0)));
}

TEST_CASE("adam behavior") {
  ParamSetT<float> params;
  params.add("w", Tensor({3}, std::vector<float>{1.0f, 2.0f, 3.0f}));
  params.add("frozen", Tensor({2}, std::vector<float>{5.0f, 6.0f}));
  params.by_name("frozen").trainable = false;
  AdamStateT<float> state;
  state.bind(params);

  SUBCASE("zero gradient is an exact no-op on values") {
    params.by_name("w").grad.fill(0.0f);
    params.by_name("w").grad_populated = true;
    adam_step(params, state);
    CHECK(params.by_name("w").value.data == std::vector<float>{1.0f, 2.0f, 3.0f});
    CHECK(state.step_count == 1);
  }
  SUBCASE("first step moves by about the learning rate") {
    params.by_name("w").grad.fill(1.0f);
    params.by_name("w").grad_populated = true;
    adam_step(params, state);
    // bias-corrected mhat/sqrt(vhat) = 1 on the first step
    CHECK(params.by_name("w").value.data[0] ==
          doctest::Approx(1.0f - 1e-4f).epsilon(1e-4));
  }
  SUBCASE("frozen entries are untouched even with gradients") {
    params.by_name("w").grad.fill(1.0f);
    params.by_name("w").grad_populated = true;
    params.by_name("frozen").grad.fill(100.0f);
    params.by_name("frozen").grad_populated = true;
    adam_step(params, state);
    CHECK(params.by_name("frozen").value.data == std::vector<float>{5.0f, 6.0f});
  }
  SUBCASE("missing gradient on a trainable entry is a structured error") {
    CHECK_THROWS_AS(adam_step(params, state), Error);
  }
  SUBCASE("step counter strictly increases") {
    for (int i = 1; i <= 3; ++i) {
      params.by_name("w").grad.fill(0.5f);
      params.by_name("w").grad_populated = true;
      adam_step(params, state);
      CHECK(state.step_count == i);
    }
  }
}

TEST_CASE("primitives are deterministic") {
  Rng rng(99);
  auto x = random_tensor<float>({2, 5, 5, 4}, rng);
  auto w = random_tensor<float>({3, 3, 4, 6}, rng);
  auto b = random_tensor<float>({6}, rng);
  Tensor y1 = conv2d(x, w, b, 1, 1);
  Tensor y2 = conv2d(x, w, b, 1, 1);
  CHECK(y1.data == y2.data);
  Tensor p1 = maxpool2d_ceil(y1);
  Tensor p2 = maxpool2d_ceil(y2);
  CHECK(p1.data == p2.data);
  CHECK(y1.all_finite());
}

// ---------------------------------------------------------------------------
// gradient checks (double instantiation of the same templated kernels)
// ---------------------------------------------------------------------------

TEST_CASE("gradient check: linear") {
  Rng rng(5);
  auto x = random_tensor<double>({7}, rng);
  auto w = random_tensor<double>({7, 4}, rng);
  auto b = random_tensor<double>({4}, rng);
  auto probe = random_tensor<double>({4}, rng);  // fixed projection to a scalar

  auto f = [&](const TensorT<double>& xi) {
    auto y = linear(xi, w, b);
    double s = 0;
    for (int i = 0; i < 4; ++i) s += y.data[static_cast<std::size_t>(i)] * probe.data[static_cast<std::size_t>(i)];
    return s;
  };
  TensorT<double> grad_out = probe;
  TensorT<double> grad_x;
  linear_backward(x, w, grad_out, &grad_x, nullptr, nullptr);
  auto result = finite_difference_check<double>(f, x, grad_x, 1e-6);
  CHECK(result.pass);
  CHECK(result.max_rel_error < 1e-6);

  // weight gradient
  auto fw = [&](const TensorT<double>& wi) {
    auto y = linear(x, wi, b);
    double s = 0;
    for (int i = 0; i < 4; ++i) s += y.data[static_cast<std::size_t>(i)] * probe.data[static_cast<std::size_t>(i)];
    return s;
  };
  TensorT<double> grad_w = TensorT<double>::zeros(w.shape);
  linear_backward(x, w, grad_out, nullptr, &grad_w, nullptr);
  CHECK(finite_difference_check<double>(fw, w, grad_w, 1e-6).pass);
}

TEST_CASE("gradient check: conv2d double precision") {
  Rng rng(6);
  auto x = random_tensor<double>({4, 4, 2}, rng);
  auto w = random_tensor<double>({3, 3, 2, 3}, rng);
  auto b = random_tensor<double>({3}, rng);
  auto y0 = conv2d(x, w, b, 1, 1);
  auto probe = random_tensor<double>(y0.shape, rng);

  auto scalarize = [&](const TensorT<double>& y) {
    double s = 0;
    for (std::int64_t i = 0; i < y.numel(); ++i)
      s += y.data[static_cast<std::size_t>(i)] * probe.data[static_cast<std::size_t>(i)];
    return s;
  };

  TensorT<double> gx, gw = TensorT<double>::zeros(w.shape), gb = TensorT<double>::zeros(b.shape);
  conv2d_backward(x, w, 1, 1, probe, &gx, &gw, &gb);

  auto fx = [&](const TensorT<double>& xi) { return scalarize(conv2d(xi, w, b, 1, 1)); };
  auto fw = [&](const TensorT<double>& wi) { return scalarize(conv2d(x, wi, b, 1, 1)); };
  auto fb = [&](const TensorT<double>& bi) { return scalarize(conv2d(x, w, bi, 1, 1)); };
  CHECK(finite_difference_check<double>(fx, x, gx, 1e-5).max_rel_error < 1e-5);
  CHECK(finite_difference_check<double>(fw, w, gw, 1e-5).max_rel_error < 1e-5);
  CHECK(finite_difference_check<double>(fb, b, gb, 1e-5).max_rel_error < 1e-5);
}

TEST_CASE("gradient check: batchnorm train mode") {
  Rng rng(7);
  auto x = random_tensor<double>({3, 2, 2, 2}, rng);
  auto scale = random_tensor<double>({2}, rng, 0.5);
  for (auto& v : scale.data) v += 1.0;
  auto shift = random_tensor<double>({2}, rng, 0.3);
  auto y_probe = random_tensor<double>(x.shape, rng);

  auto run = [&](const TensorT<double>& xi, const TensorT<double>& sc,
                 const TensorT<double>& sh, BatchNormCache<double>* cache) {
    TensorT<double> rm({2}), rv({2}, 1.0);
    return batchnorm2d(xi, sc, sh, BatchNormMode::Train, rm, rv, 1e-5, 0.1, cache);
  };
  auto scalarize = [&](const TensorT<double>& y) {
    double s = 0;
    for (std::int64_t i = 0; i < y.numel(); ++i)
      s += y.data[static_cast<std::size_t>(i)] * y_probe.data[static_cast<std::size_t>(i)];
    return s;
  };

  BatchNormCache<double> cache;
  run(x, scale, shift, &cache);
  TensorT<double> gx, gscale = TensorT<double>::zeros({2}), gshift = TensorT<double>::zeros({2});
  batchnorm2d_backward(cache, scale, y_probe, &gx, &gscale, &gshift);

  auto fx = [&](const TensorT<double>& xi) { return scalarize(run(xi, scale, shift, nullptr)); };
  auto fs = [&](const TensorT<double>& si) { return scalarize(run(x, si, shift, nullptr)); };
  auto fh = [&](const TensorT<double>& hi) { return scalarize(run(x, scale, hi, nullptr)); };
  CHECK(finite_difference_check<double>(fx, x, gx, 1e-5).max_rel_error < 1e-5);
  CHECK(finite_difference_check<double>(fs, scale, gscale, 1e-5).max_rel_error < 1e-5);
  CHECK(finite_difference_check<double>(fh, shift, gshift, 1e-5).max_rel_error < 1e-5);
}

TEST_CASE("gradient check: pointwise, mfm, concat, bce") {
  Rng rng(8);

  SUBCASE("sigmoid") {
    auto x = random_tensor<double>({6}, rng);
    auto probe = random_tensor<double>({6}, rng);
    auto y = pointwise(x, Pointwise::Sigmoid);
    auto g = pointwise_backward(y, Pointwise::Sigmoid, probe);
    auto f = [&](const TensorT<double>& xi) {
      auto yy = pointwise(xi, Pointwise::Sigmoid);
      double s = 0;
      for (int i = 0; i < 6; ++i) s += yy.data[static_cast<std::size_t>(i)] * probe.data[static_cast<std::size_t>(i)];
      return s;
    };
    CHECK(finite_difference_check<double>(f, x, g, 1e-5).pass);
  }

  SUBCASE("relu away from the kink") {
    auto x = random_tensor<double>({8}, rng);
    for (auto& v : x.data)
      if (std::abs(v) < 0.05) v = 0.1;  // keep clear of the nondifferentiable point
    auto probe = random_tensor<double>({8}, rng);
    auto y = pointwise(x, Pointwise::Relu);
    auto g = pointwise_backward(y, Pointwise::Relu, probe);
    auto f = [&](const TensorT<double>& xi) {
      auto yy = pointwise(xi, Pointwise::Relu);
      double s = 0;
      for (int i = 0; i < 8; ++i) s += yy.data[static_cast<std::size_t>(i)] * probe.data[static_cast<std::size_t>(i)];
      return s;
    };
    CHECK(finite_difference_check<double>(f, x, g, 1e-5).pass);
  }

  SUBCASE("mfm with separated halves") {
    auto x = random_tensor<double>({2, 2, 4}, rng);
    for (std::size_t i = 0; i < x.data.size(); ++i)
      x.data[i] += (i % 4 < 2) ? 0.5 : -0.5;  // avoid ties
    auto probe = random_tensor<double>({2, 2, 2}, rng);
    std::vector<std::uint8_t> winners;
    mfm(x, &winners);
    auto g = mfm_backward(winners, x.shape, probe);
    auto f = [&](const TensorT<double>& xi) {
      auto yy = mfm(xi);
      double s = 0;
      for (std::int64_t i = 0; i < yy.numel(); ++i)
        s += yy.data[static_cast<std::size_t>(i)] * probe.data[static_cast<std::size_t>(i)];
      return s;
    };
    CHECK(finite_difference_check<double>(f, x, g, 1e-5).pass);
  }

  SUBCASE("concat") {
    auto a = random_tensor<double>({2, 2, 2}, rng);
    auto b = random_tensor<double>({2, 2, 3}, rng);
    auto probe = random_tensor<double>({2, 2, 5}, rng);
    auto grads = concat_channels_backward(probe, {a.shape, b.shape});
    auto f = [&](const TensorT<double>& ai) {
      auto y = concat_channels<double>({&ai, &b});
      double s = 0;
      for (std::int64_t i = 0; i < y.numel(); ++i)
        s += y.data[static_cast<std::size_t>(i)] * probe.data[static_cast<std::size_t>(i)];
      return s;
    };
    CHECK(finite_difference_check<double>(f, a, grads[0], 1e-5).pass);
  }

  SUBCASE("bce batch") {
    TensorT<double> probs({5});
    TensorT<double> labels({5});
    Rng r2(21);
    for (int i = 0; i < 5; ++i) {
      probs.data[static_cast<std::size_t>(i)] = 0.1 + 0.8 * r2.uniform();
      labels.data[static_cast<std::size_t>(i)] = r2.uniform() < 0.5 ? 0.0 : 1.0;
    }
    auto g = bce_loss_backward(probs, labels);
    auto f = [&](const TensorT<double>& p) { return bce_loss_batch(p, labels); };
    CHECK(finite_difference_check<double>(f, probs, g, 1e-5).pass);
  }
}

TEST_SUITE_END();
