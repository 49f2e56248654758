// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "gscnn/losses.hpp"
#include "gscnn/streams.hpp"

using namespace gscnn;

TEST_CASE("attention map with zero weights is 0.5 everywhere") {
  ParameterStore ps;
  Rng rng(1);
  auto a = AttentionMap<float>::create(ps, "t.attn", 8, 8, StreamTag::kShape, rng);
  for (auto& [name, e] : ps.entries())
    if (name.find("conv") != std::string::npos)
      std::fill(e.tensor.data().begin(), e.tensor.data().end(), 0.0f);
  auto s = Tensor::randn({8, 5, 5}, rng);
  auto r = Tensor::randn({8, 5, 5}, rng);
  auto alpha = a.forward(s, r);
  CHECK(alpha.shape() == Shape{1, 5, 5});
  for (float v : alpha.data()) CHECK(v == doctest::Approx(0.5f));
}

TEST_CASE("attention map single pixel closed form") {
  // normalization off, s=1, r=1, weights [1,1], bias 0 -> sigma(2)
  ParameterStore ps;
  Rng rng(1);
  auto a = AttentionMap<float>::create(ps, "t.attn", 1, 1, StreamTag::kShape, rng);
  a.use_norm = false;
  auto& w = ps.get("t.attn.conv.w");
  w.data() = {1.0f, 1.0f};
  auto& b = ps.get("t.attn.conv.b");
  b.data() = {0.0f};
  auto s = Tensor::filled({1, 1, 1}, 1.0f);
  auto r = Tensor::filled({1, 1, 1}, 1.0f);
  CHECK(a.forward(s, r).item() == doctest::Approx(0.88079708f).epsilon(1e-5));
}

TEST_CASE("attention map rejects spatial mismatch") {
  ParameterStore ps;
  Rng rng(1);
  auto a = AttentionMap<float>::create(ps, "t.attn", 2, 2, StreamTag::kShape, rng);
  auto s = Tensor::filled({2, 8, 8}, 1.0f);
  auto r = Tensor::filled({2, 4, 4}, 1.0f);
  CHECK_THROWS_WITH_AS(a.forward(s, r),
                       doctest::Contains("upsample"), std::invalid_argument);
}

TEST_CASE("gated_conv limiting cases") {
  Rng rng(2);
  auto s = Tensor::randn({3, 4, 4}, rng);
  auto w = Tensor::randn({3, 3, 1, 1}, rng);

  auto a0 = Tensor::zeros({1, 4, 4});
  auto y0 = gated_conv(s, a0, w);
  auto want0 = conv2d<float>(s, w, nullptr, Conv2dSpec{});
  for (int64_t i = 0; i < y0.numel(); ++i)
    CHECK(y0.data()[i] == doctest::Approx(want0.data()[i]).epsilon(1e-6));

  auto a1 = Tensor::filled({1, 4, 4}, 1.0f);
  auto y1 = gated_conv(s, a1, w);
  auto want1 = conv2d<float>(scale(s, 2.0f), w, nullptr, Conv2dSpec{});
  for (int64_t i = 0; i < y1.numel(); ++i)
    CHECK(y1.data()[i] == doctest::Approx(want1.data()[i]).epsilon(1e-5));
}

TEST_CASE("gated_conv single pixel closed form") {
  auto s = Tensor::from_data({2, 1, 1}, {1, 2});
  auto a = Tensor::filled({1, 1, 1}, 0.5f);
  auto w = Tensor::from_data({2, 2, 1, 1}, {1, 0, 0, 1});  // identity channel mix
  auto y = gated_conv(s, a, w);
  CHECK(y.data()[0] == doctest::Approx(1.5f));
  CHECK(y.data()[1] == doctest::Approx(3.0f));
}

TEST_CASE("gate monotonicity: alpha scales the pre-conv activation by (1+alpha)") {
  Rng rng(8);
  auto s = Tensor::randn({2, 3, 3}, rng);
  auto w = Tensor::from_data({2, 2, 1, 1}, {1, 0, 0, 1});
  for (float av : {0.0f, 0.3f, 0.9f}) {
    auto a = Tensor::filled({1, 3, 3}, av);
    auto y = gated_conv(s, a, w);
    for (int64_t i = 0; i < s.numel(); ++i)
      CHECK(y.data()[i] == doctest::Approx((1.0f + av) * s.data()[i]).epsilon(1e-5));
  }
}

TEST_CASE("regular stream output shapes at 64x64") {
  ParameterStore ps;
  Rng rng(4);
  RegularStreamT<float> reg(ps, rng);
  auto x = Tensor::randn({3, 64, 64}, rng, 0.5f);
  auto out = reg.forward(x);
  CHECK(out.first_conv.shape() == Shape{16, 64, 64});
  CHECK(out.taps[0].shape() == Shape{64, 16, 16});
  CHECK(out.taps[1].shape() == Shape{128, 8, 8});
  CHECK(out.taps[2].shape() == Shape{128, 8, 8});
  CHECK(out.features.shape() == Shape{128, 8, 8});
  CHECK(out.features.all_finite());
}

TEST_CASE("regular stream rejects extents not divisible by 8") {
  ParameterStore ps;
  Rng rng(4);
  RegularStreamT<float> reg(ps, rng);
  auto x = Tensor::filled({3, 30, 32}, 0.1f);
  CHECK_THROWS_AS(reg.forward(x), std::invalid_argument);
}

TEST_CASE("shape stream output contract and gate liveness") {
  ParameterStore ps;
  Rng rng(6);
  RegularStreamT<float> reg(ps, rng);
  ShapeStreamT<float> shp(ps, rng);
  auto x = Tensor::randn({3, 32, 32}, rng, 0.5f);
  auto igrad = Tensor::zeros({1, 32, 32});
  auto bb = reg.forward(x);
  auto s = shp.forward(bb.first_conv, bb.taps, igrad);
  CHECK(s.shape() == Shape{1, 32, 32});
  for (float v : s.data()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }

  // perturbing a regular-stream tap must change s (the gates are live)
  auto taps = bb.taps;
  taps[0] = add_scalar(taps[0], 0.7f);
  auto s2 = shp.forward(bb.first_conv, taps, igrad);
  CHECK(s.data() != s2.data());
}

TEST_CASE("every shape-stream parameter receives gradient under BCE") {
  ParameterStore ps;
  Rng rng(9);
  RegularStreamT<float> reg(ps, rng);
  ShapeStreamT<float> shp(ps, rng);
  auto x = Tensor::randn({3, 16, 16}, rng, 0.5f);
  auto igrad = Tensor::zeros({1, 16, 16});
  auto gt = Tensor::zeros({1, 16, 16});
  for (int i = 0; i < 16; ++i) gt.data()[5 * 16 + i] = 1.0f;

  auto bb = reg.forward(x);
  auto s = shp.forward(bb.first_conv, bb.taps, igrad);
  backward(balanced_bce(s, gt));
  for (auto& [name, e] : ps.entries()) {
    if (e.tag != StreamTag::kShape) continue;
    REQUIRE_MESSAGE(e.tensor.has_grad(), name);
    bool any = false;
    for (float g : e.tensor.grad()) any = any || g != 0.0f;
    CHECK_MESSAGE(any, name);
  }
}
