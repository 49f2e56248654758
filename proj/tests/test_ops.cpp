// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "gscnn/ops.hpp"

using namespace gscnn;

namespace {

// Nested-loop cross-correlation, written independently of the im2col path.
template <typename S>
TensorT<S> conv2d_oracle(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>* b,
                         const Conv2dSpec& spec) {
  int Cin = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  int Cout = w.shape()[0], k = w.shape()[2];
  int Ho = conv_out_extent(H, k, spec.stride, spec.dilation, spec.padding);
  int Wo = conv_out_extent(W, k, spec.stride, spec.dilation, spec.padding);
  auto out = TensorT<S>::zeros({Cout, Ho, Wo});
  for (int co = 0; co < Cout; ++co)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        S acc = b ? b->data()[co] : S(0);
        for (int ci = 0; ci < Cin; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              int iy = oy * spec.stride + ky * spec.dilation - spec.padding;
              int ix = ox * spec.stride + kx * spec.dilation - spec.padding;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += x.data()[(int64_t(ci) * H + iy) * W + ix] *
                     w.data()[((int64_t(co) * Cin + ci) * k + ky) * k + kx];
            }
        out.data()[(int64_t(co) * Ho + oy) * Wo + ox] = acc;
      }
  return out;
}

// Dense 2D Gaussian convolution with reflect padding; no separability.
template <typename S>
TensorT<S> gaussian_oracle(const TensorT<S>& x, S sigma) {
  int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  int r = int(std::ceil(3.0 * double(sigma)));
  std::vector<double> k1(2 * r + 1);
  double s = 0;
  for (int i = -r; i <= r; ++i) {
    k1[i + r] = std::exp(-0.5 * double(i) * i / (double(sigma) * sigma));
    s += k1[i + r];
  }
  for (auto& v : k1) v /= s;
  auto out = TensorT<S>::zeros(x.shape());
  auto refl = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) {
        double acc = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            acc += k1[dy + r] * k1[dx + r] *
                   double(x.data()[(int64_t(c) * H + refl(y + dy, H)) * W +
                                   refl(xx + dx, W)]);
        out.data()[(int64_t(c) * H + y) * W + xx] = S(acc);
      }
  return out;
}

// Direct evaluation of the align-corners-false sampling formula.
double bilinear_oracle_at(const std::vector<double>& src, int h, int w, int th, int tw,
                          int oy, int ox) {
  auto sample = [&](double pos, int n) {
    double p = std::clamp(pos, 0.0, double(n - 1));
    int i0 = int(std::floor(p));
    int i1 = std::min(i0 + 1, n - 1);
    return std::tuple{i0, i1, p - i0};
  };
  auto [y0, y1, fy] = sample((oy + 0.5) * h / th - 0.5, h);
  auto [x0, x1, fx] = sample((ox + 0.5) * w / tw - 0.5, w);
  return (1 - fy) * ((1 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1]) +
         fy * ((1 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1]);
}

TensorT<double> rand_tensor(const Shape& s, Rng& rng, double lo = -2, double hi = 2) {
  auto t = TensorT<double>::zeros(s);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("conv2d scalar scaling") {
  auto x = Tensor::filled({1, 3, 3}, 1.0f);
  auto w = Tensor::filled({1, 1, 1, 1}, 2.0f);
  auto y = conv2d<float>(x, w, nullptr, Conv2dSpec{});
  CHECK(y.shape() == Shape{1, 3, 3});
  for (float v : y.data()) CHECK(v == doctest::Approx(2.0f));
}

TEST_CASE("conv2d 2x2 identity-diagonal kernel") {
  auto x = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
  auto w = Tensor::from_data({1, 1, 2, 2}, {1, 0, 0, 1});
  auto y = conv2d<float>(x, w, nullptr, Conv2dSpec{});
  CHECK(y.shape() == Shape{1, 1, 1});
  CHECK(y.item() == doctest::Approx(5.0f));
}

TEST_CASE("conv2d matches the nested-loop oracle on 200 random cases") {
  Rng rng(101);
  for (int t = 0; t < 200; ++t) {
    int cin = int(rng.uniform_int(1, 4));
    int cout = int(rng.uniform_int(1, 4));
    int k = int(rng.uniform_int(1, 4));
    int dil = int(rng.uniform_int(1, 2));
    int stride = int(rng.uniform_int(1, 2));
    int span = dil * (k - 1) + 1;
    int pad = int(rng.uniform_int(0, 2));
    int h = span + int(rng.uniform_int(0, 6));
    int w = span + int(rng.uniform_int(0, 6));
    Conv2dSpec spec{stride, dil, pad};
    auto x = rand_tensor({cin, h, w}, rng);
    auto wt = rand_tensor({cout, cin, k, k}, rng, -1, 1);
    bool with_bias = rng.uniform() < 0.5;
    auto b = rand_tensor({cout}, rng, -1, 1);
    auto got = conv2d<double>(x, wt, with_bias ? &b : nullptr, spec);
    auto want = conv2d_oracle<double>(x, wt, with_bias ? &b : nullptr, spec);
    REQUIRE(got.shape() == want.shape());
    for (int64_t i = 0; i < got.numel(); ++i)
      CHECK(std::abs(got.data()[i] - want.data()[i]) < 1e-6);
  }
}

TEST_CASE("conv2d rejects bad shapes") {
  auto x = Tensor::filled({2, 4, 4}, 1.0f);
  auto w3 = Tensor::filled({1, 3, 2, 2}, 1.0f);  // Cin mismatch
  CHECK_THROWS_AS(conv2d<float>(x, w3, nullptr, Conv2dSpec{}), std::invalid_argument);
  auto wbig = Tensor::filled({1, 2, 5, 5}, 1.0f);  // zero-sized output
  CHECK_THROWS_AS(conv2d<float>(x, wbig, nullptr, Conv2dSpec{}), std::invalid_argument);
}

TEST_CASE("softmax_channels basics") {
  auto z = Tensor::zeros({4, 2, 2});
  auto p = softmax_channels(z);
  for (float v : p.data()) CHECK(v == doctest::Approx(0.25f));

  Rng rng(7);
  auto x = Tensor::randn({3, 5, 5}, rng);
  auto p1 = softmax_channels(x);
  auto p2 = softmax_channels(add_scalar(x, 10.0f));  // shift invariance
  int64_t hw = 25;
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(p1.data()[i] == doctest::Approx(p2.data()[i]).epsilon(1e-5));
  for (int64_t i = 0; i < hw; ++i) {
    float s = 0;
    for (int k = 0; k < 3; ++k) s += p1.data()[k * hw + i];
    CHECK(s == doctest::Approx(1.0f).epsilon(1e-6));
  }
}

TEST_CASE("bilinear_upsample basics") {
  auto c = Tensor::filled({2, 3, 3}, 7.0f);
  auto up = bilinear_upsample(c, 8, 5);
  CHECK(up.shape() == Shape{2, 8, 5});
  for (float v : up.data()) CHECK(v == doctest::Approx(7.0f));

  auto same = bilinear_upsample(c, 3, 3);
  CHECK(same.data() == c.data());

  CHECK_THROWS_AS(bilinear_upsample(c, 2, 3), std::invalid_argument);  // downsample
}

TEST_CASE("bilinear_upsample matches the direct sampling formula") {
  auto x = TensorT<double>::from_data({1, 2, 2}, {0, 1, 0, 1});
  auto y = bilinear_upsample(x, 2, 4);
  std::vector<double> src{0, 1, 0, 1};
  for (int oy = 0; oy < 2; ++oy)
    for (int ox = 0; ox < 4; ++ox)
      CHECK(y.data()[oy * 4 + ox] ==
            doctest::Approx(bilinear_oracle_at(src, 2, 2, 2, 4, oy, ox)).epsilon(1e-12));

  Rng rng(55);
  for (int t = 0; t < 100; ++t) {
    int h = int(rng.uniform_int(1, 6)), w = int(rng.uniform_int(1, 6));
    int th = h + int(rng.uniform_int(0, 6)), tw = w + int(rng.uniform_int(0, 6));
    auto a = rand_tensor({1, h, w}, rng);
    auto up = bilinear_upsample(a, th, tw);
    for (int oy = 0; oy < th; ++oy)
      for (int ox = 0; ox < tw; ++ox) {
        double want = bilinear_oracle_at(a.data(), h, w, th, tw, oy, ox);
        CHECK(std::abs(up.data()[oy * tw + ox] - want) < 1e-6);
      }
  }
}

TEST_CASE("gaussian_blur preserves constants and mass") {
  auto c = Tensor::filled({1, 6, 6}, 3.0f);
  auto b = gaussian_blur(c, 1.0f);
  for (float v : b.data()) CHECK(v == doctest::Approx(3.0f).epsilon(1e-6));

  Rng rng(13);
  auto x = rand_tensor({2, 9, 9}, rng, 0, 1);
  auto y = gaussian_blur(x, 1.4);
  double sx = 0, sy = 0;
  for (auto v : x.data()) sx += v;
  for (auto v : y.data()) sy += v;
  CHECK(sx == doctest::Approx(sy).epsilon(1e-4));

  CHECK_THROWS_AS(gaussian_blur(c, 0.0f), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_blur(c, -1.0f), std::invalid_argument);
}

TEST_CASE("gaussian_blur impulse response equals the dense-kernel oracle") {
  auto x = TensorT<double>::zeros({1, 9, 9});
  x.data()[4 * 9 + 4] = 1.0;
  auto y = gaussian_blur(x, 1.0);
  auto want = gaussian_oracle(x, 1.0);
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(std::abs(y.data()[i] - want.data()[i]) < 1e-6);
  CHECK(y.data()[4 * 9 + 4] == doctest::Approx(want.data()[4 * 9 + 4]).epsilon(1e-9));
}

TEST_CASE("gaussian_blur matches the dense oracle on 100 random shapes") {
  Rng rng(23);
  for (int t = 0; t < 100; ++t) {
    int c = int(rng.uniform_int(1, 3));
    int h = int(rng.uniform_int(1, 10)), w = int(rng.uniform_int(1, 10));
    double sigma = rng.uniform(0.3, 2.0);
    auto x = rand_tensor({c, h, w}, rng);
    auto got = gaussian_blur(x, sigma);
    auto want = gaussian_oracle(x, sigma);
    for (int64_t i = 0; i < got.numel(); ++i)
      CHECK(std::abs(got.data()[i] - want.data()[i]) < 1e-6);
  }
}

TEST_CASE("sobel magnitude of a constant map is zero") {
  auto c = Tensor::filled({2, 5, 5}, 4.0f);
  auto m = sobel_gradient_magnitude(c);
  for (float v : m.data()) CHECK(v < 2e-6f);
  auto small = Tensor::filled({1, 2, 5}, 1.0f);
  CHECK_THROWS_AS(sobel_gradient_magnitude(small), std::invalid_argument);
}

TEST_CASE("sobel magnitude of a vertical unit step") {
  // left half 0, right half 1; with the 1/8-scaled kernels the two columns
  // adjacent to the step read 0.5 and everything else reads 0
  int H = 8, W = 8;
  auto x = TensorT<double>::zeros({1, H, W});
  for (int y = 0; y < H; ++y)
    for (int xx = W / 2; xx < W; ++xx) x.data()[y * W + xx] = 1.0;
  auto m = sobel_gradient_magnitude(x);
  for (int y = 1; y < H - 1; ++y)
    for (int xx = 1; xx < W - 1; ++xx) {
      double v = m.data()[y * W + xx];
      if (xx == W / 2 - 1 || xx == W / 2)
        CHECK(v == doctest::Approx(0.5).epsilon(1e-6));
      else
        CHECK(v < 1e-5);
    }
}

TEST_CASE("sobel magnitude is symmetric under 90-degree rotation") {
  Rng rng(31);
  int n = 7;
  auto x = rand_tensor({1, n, n}, rng);
  auto rot = TensorT<double>::zeros({1, n, n});
  for (int y = 0; y < n; ++y)
    for (int xx = 0; xx < n; ++xx) rot.data()[xx * n + (n - 1 - y)] = x.data()[y * n + xx];
  auto mx = sobel_gradient_magnitude(x);
  auto mr = sobel_gradient_magnitude(rot);
  for (int y = 0; y < n; ++y)
    for (int xx = 0; xx < n; ++xx)
      CHECK(mx.data()[y * n + xx] ==
            doctest::Approx(mr.data()[xx * n + (n - 1 - y)]).epsilon(1e-9));
}

TEST_CASE("group_norm normalizes each group") {
  Rng rng(17);
  auto x = rand_tensor({8, 4, 4}, rng);
  auto gamma = TensorT<double>::filled({8}, 1.0);
  auto beta = TensorT<double>::zeros({8});
  auto y = group_norm(x, gamma, beta, 4);
  int64_t group_elems = 2 * 16;
  for (int g = 0; g < 4; ++g) {
    double mu = 0, var = 0;
    for (int64_t i = 0; i < group_elems; ++i) mu += y.data()[g * group_elems + i];
    mu /= double(group_elems);
    for (int64_t i = 0; i < group_elems; ++i) {
      double d = y.data()[g * group_elems + i] - mu;
      var += d * d;
    }
    var /= double(group_elems);
    CHECK(mu == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("reflect padding index") {
  CHECK(reflect_index(0, 5) == 0);
  CHECK(reflect_index(-1, 5) == 0);
  CHECK(reflect_index(-2, 5) == 1);
  CHECK(reflect_index(5, 5) == 4);
  CHECK(reflect_index(6, 5) == 3);
}

TEST_CASE("gumbel_hard_softmax forward is exact argmax with ties to lowest channel") {
  auto z = Tensor::from_data({3, 1, 1}, {3, 1, 0});
  auto y = gumbel_hard_softmax(z, 1.0f, false, 0);
  CHECK(y.data() == std::vector<float>{1, 0, 0});

  auto tie = Tensor::from_data({3, 1, 1}, {2, 2, 1});
  auto yt = gumbel_hard_softmax(tie, 1.0f, false, 0);
  CHECK(yt.data() == std::vector<float>{1, 0, 0});

  CHECK_THROWS_AS(gumbel_hard_softmax(z, 0.0f, false, 0), std::invalid_argument);
}

TEST_CASE("gumbel soft mode concentrates at low temperature") {
  auto z = TensorT<double>::from_data({3, 1, 1}, {3, 1, 0});
  auto y = gumbel_hard_softmax(z, 0.1, false, 0, ArgmaxMode::kSoft);
  CHECK(y.data()[0] >= 0.999);
}

TEST_CASE("gumbel noise is seed-deterministic") {
  Rng rng(3);
  auto z = Tensor::randn({4, 6, 6}, rng);
  auto a = gumbel_hard_softmax(z, 1.0f, true, 99);
  auto b = gumbel_hard_softmax(z, 1.0f, true, 99);
  auto c = gumbel_hard_softmax(z, 1.0f, true, 100);
  CHECK(a.data() == b.data());
  CHECK(a.data() != c.data());
}
