// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "gscnn/losses.hpp"
#include "gscnn/model.hpp"

using namespace gscnn;

TEST_CASE("balanced bce closed-form 2x2 case") {
  auto gt = Tensor::from_data({1, 2, 2}, {1, 0, 0, 0});
  auto s = Tensor::from_data({1, 2, 2}, {0.9f, 0.1f, 0.1f, 0.1f});
  // beta = 3/4; loss = -1/4 [0.75 ln 0.9 + 3 * 0.25 ln 0.9] = -0.375 ln 0.9
  double want = -0.375 * std::log(0.9);
  CHECK(balanced_bce(s, gt).item() == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("balanced bce degenerate weighting with no positives") {
  // gt all zeros -> beta = 1, the non-boundary term has weight 0
  auto gt = Tensor::zeros({1, 3, 3});
  auto s = Tensor::filled({1, 3, 3}, 0.5f);
  CHECK(balanced_bce(s, gt).item() == doctest::Approx(0.0f));
}

TEST_CASE("balanced bce at the clamp limits is near zero for perfect prediction") {
  auto gt = Tensor::from_data({1, 2, 2}, {1, 0, 1, 0});
  auto s = Tensor::from_data({1, 2, 2}, {1.0f, 0.0f, 1.0f, 0.0f});
  CHECK(balanced_bce(s, gt).item() <= 1e-5f);
  CHECK_THROWS_AS(balanced_bce(s, Tensor::zeros({1, 2, 3})), std::invalid_argument);
}

TEST_CASE("cross entropy closed forms") {
  // uniform probs, K=4 -> ln 4
  auto logits = Tensor::zeros({4, 2, 2});
  CategoricalMap f{logits, softmax_channels(logits), 4};
  LabelMap labels(2, 2, 1);
  CHECK(cross_entropy(f, labels, kIgnoreLabel).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-5));

  // one-hot correct prediction -> ~0
  auto hot = Tensor::zeros({3, 2, 2});
  LabelMap l2(2, 2);
  l2.v = {0, 1, 2, 1};
  for (int i = 0; i < 4; ++i) hot.data()[l2.v[i] * 4 + i] = 50.0f;
  CategoricalMap f2{hot, softmax_channels(hot), 3};
  CHECK(cross_entropy(f2, l2, kIgnoreLabel).item() <= 1e-5f);
}

TEST_CASE("cross entropy ignores ignore_label pixels") {
  Rng rng(3);
  auto logits = Tensor::randn({3, 2, 2}, rng);
  CategoricalMap f{logits, softmax_channels(logits), 3};
  LabelMap a(2, 2);
  a.v = {0, 1, kIgnoreLabel, 2};
  LabelMap b = a;
  b.v[2] = kIgnoreLabel;  // same mask; flipping the ignored pixel's "would-be" class
  CHECK(cross_entropy(f, a, kIgnoreLabel).item() ==
        cross_entropy(f, b, kIgnoreLabel).item());

  LabelMap all_ignored(2, 2, kIgnoreLabel);
  CHECK_THROWS_AS(cross_entropy(f, all_ignored, kIgnoreLabel), std::invalid_argument);
}

TEST_CASE("boundary potential of a certain single-class map is zero") {
  auto logits = Tensor::zeros({3, 8, 8});
  for (int i = 0; i < 64; ++i) logits.data()[i] = 10.0f;  // class 0 everywhere
  LossConfig cfg;
  auto zeta = boundary_potential(logits, cfg, false, 0);
  for (float v : zeta.data()) CHECK(v < 2e-6f);
}

TEST_CASE("boundary potential peaks at a two-class divide") {
  // vertical half-plane on 16x16; with the 1/8 Sobel scaling each one-hot
  // channel contributes a 0.5 step response, so the 1/sqrt(2) reduction puts
  // the peak at 0.5 (before blurring spreads it)
  LabelMap labels(16, 16, 0);
  for (int y = 0; y < 16; ++y)
    for (int x = 8; x < 16; ++x) labels.at(y, x) = 1;
  LossConfig cfg;
  cfg.zeta_sigma = 0.2;  // near-delta blur
  auto zeta = gt_boundary_potential<float>(labels, 2, kIgnoreLabel, cfg);
  float peak = 0;
  for (float v : zeta.data()) peak = std::max(peak, v);
  CHECK(peak == doctest::Approx(0.5f).epsilon(1e-4));
  // and the peak sits on the columns adjacent to the divide
  CHECK(zeta.data()[5 * 16 + 7] == doctest::Approx(peak).epsilon(1e-4));
  CHECK(zeta.data()[5 * 16 + 8] == doctest::Approx(peak).epsilon(1e-4));
  for (float v : zeta.data()) CHECK(v <= 1.05f);
}

TEST_CASE("reg_loss_boundary closed forms and brute-force agreement") {
  LossConfig cfg;
  auto z = Tensor::from_data({1, 2, 2}, {0.4f, 0.0f, 0.6f, 0.0f});
  CHECK(reg_loss_boundary(z, z, cfg).item() == 0.0f);

  // zeta_hat = 0, n active pixels of value v -> mean over those pixels = v
  auto zh = Tensor::zeros({1, 2, 2});
  auto zv = Tensor::from_data({1, 2, 2}, {0.25f, 0.25f, 0.0f, 0.0f});
  CHECK(reg_loss_boundary(zv, zh, cfg).item() == doctest::Approx(0.25f));

  Rng rng(5);
  auto a = Tensor::zeros({1, 8, 8});
  auto b = Tensor::zeros({1, 8, 8});
  for (auto& v : a.data()) v = rng.uniform() < 0.4 ? float(rng.uniform(0, 1)) : 0.0f;
  for (auto& v : b.data()) v = rng.uniform() < 0.4 ? float(rng.uniform(0, 1)) : 0.0f;
  double sum = 0;
  int n = 0;
  for (int i = 0; i < 64; ++i) {
    if (a.data()[i] > cfg.zeta_eps || b.data()[i] > cfg.zeta_eps) {
      sum += std::abs(double(a.data()[i]) - b.data()[i]);
      ++n;
    }
  }
  CHECK(reg_loss_boundary(a, b, cfg).item() ==
        doctest::Approx(sum / n).epsilon(1e-5));
}

TEST_CASE("reg_loss_semantic masking behaviour") {
  Rng rng(6);
  auto logits = Tensor::randn({3, 4, 4}, rng);
  CategoricalMap f{logits, softmax_channels(logits), 3};
  LabelMap labels(4, 4);
  for (auto& v : labels.v) v = int(rng.uniform_int(0, 2));

  auto s0 = Tensor::zeros({1, 4, 4});
  CHECK(reg_loss_semantic(s0, f, labels, kIgnoreLabel, 0.8).item() == 0.0f);

  auto s1 = Tensor::filled({1, 4, 4}, 1.0f);
  CHECK(reg_loss_semantic(s1, f, labels, kIgnoreLabel, 0.8).item() ==
        doctest::Approx(cross_entropy(f, labels, kIgnoreLabel).item()).epsilon(1e-6));

  // brute-force masked CE on a mixed mask
  auto sm = Tensor::zeros({1, 4, 4});
  for (int i = 0; i < 16; ++i) sm.data()[i] = (i % 3 == 0) ? 0.95f : 0.1f;
  double sum = 0;
  int n = 0;
  for (int i = 0; i < 16; ++i) {
    if (!(sm.data()[i] > 0.8)) continue;
    double p = std::clamp(double(f.probs.data()[labels.v[i] * 16 + i]), kProbClamp,
                          1.0 - kProbClamp);
    sum += -std::log(p);
    ++n;
  }
  CHECK(reg_loss_semantic(sm, f, labels, kIgnoreLabel, 0.8).item() ==
        doctest::Approx(sum / n).epsilon(1e-5));

  // invariance to f at pixels below the threshold
  auto bumped = Tensor::from_data(logits.shape(), std::vector<float>(logits.data()));
  for (int i = 0; i < 16; ++i)
    if (!(sm.data()[i] > 0.8))
      for (int k = 0; k < 3; ++k) bumped.data()[k * 16 + i] += float(k);
  CategoricalMap fb{bumped, softmax_channels(bumped), 3};
  CHECK(reg_loss_semantic(sm, f, labels, kIgnoreLabel, 0.8).item() ==
        doctest::Approx(reg_loss_semantic(sm, fb, labels, kIgnoreLabel, 0.8).item())
            .epsilon(1e-6));
}

TEST_CASE("total loss composition and ablation switch") {
  Rng rng(8);
  LossConfig cfg;
  auto s = sigmoid(Tensor::randn({1, 8, 8}, rng));
  auto logits = Tensor::randn({3, 8, 8}, rng);
  CategoricalMap f{logits, softmax_channels(logits), 3};
  LabelMap labels(8, 8);
  for (auto& v : labels.v) v = int(rng.uniform_int(0, 2));
  auto gtb = Tensor::zeros({1, 8, 8});
  for (int i = 0; i < 8; ++i) gtb.data()[3 * 8 + i] = 1.0f;

  auto lb = total_loss(s, f, labels, gtb, cfg, kIgnoreLabel);
  double want = cfg.lambda1 * lb.bce.item() + cfg.lambda2 * lb.ce.item() +
                cfg.lambda3 * lb.reg_fwd.item() + cfg.lambda4 * lb.reg_bwd.item();
  CHECK(lb.total.item() == doctest::Approx(want).epsilon(1e-6));
  CHECK(lb.bce.item() >= 0.0f);
  CHECK(lb.ce.item() >= 0.0f);
  CHECK(lb.reg_fwd.item() >= 0.0f);
  CHECK(lb.reg_bwd.item() >= 0.0f);

  LossConfig off = cfg;
  off.lambda3 = 0;
  off.lambda4 = 0;
  auto lb2 = total_loss(s, f, labels, gtb, off, kIgnoreLabel);
  CHECK(lb2.total.item() ==
        doctest::Approx(off.lambda1 * lb2.bce.item() + off.lambda2 * lb2.ce.item())
            .epsilon(1e-6));
  CHECK(lb2.reg_fwd.item() == 0.0f);
  CHECK(lb2.reg_bwd.item() == 0.0f);
}

TEST_CASE("total loss vanishes for a certain, correct prediction") {
  LabelMap labels(12, 12, 0);
  for (int y = 0; y < 12; ++y)
    for (int x = 6; x < 12; ++x) labels.at(y, x) = 1;
  int K = 3;
  auto logits = Tensor::zeros({K, 12, 12});
  int64_t hw = 144;
  for (int64_t i = 0; i < hw; ++i)
    for (int k = 0; k < K; ++k)
      logits.data()[k * hw + i] = labels.v[i] == k ? 60.0f : -60.0f;
  CategoricalMap f{logits, softmax_channels(logits), K};

  LossConfig cfg;
  // prediction's boundary map equals the zeta pipeline's own GT boundary
  auto zeta_hat = gt_boundary_potential<float>(labels, K, kIgnoreLabel, cfg);
  auto s = Tensor::zeros({1, 12, 12});
  auto gtb = Tensor::zeros({1, 12, 12});
  for (int64_t i = 0; i < hw; ++i) {
    float v = zeta_hat.data()[i] > 0.5f ? 1.0f : 0.0f;
    s.data()[i] = v;
    gtb.data()[i] = v;
  }
  auto lb = total_loss(s, f, labels, gtb, cfg, kIgnoreLabel);
  CHECK(lb.total.item() <= 1e-4f);

  // Eq-5 self consistency: identical potentials give exactly zero
  auto zeta = boundary_potential(f.logits, cfg, false, 0);
  CHECK(reg_loss_boundary(zeta, zeta_hat, cfg).item() == 0.0f);
}

TEST_CASE("total loss backward reaches every parameter of the full model") {
  ModelConfig mc;
  mc.num_classes = 3;
  Gscnn model(mc, 13);
  Rng rng(13);
  auto image = Tensor::randn({3, 16, 16}, rng, 0.4f);
  auto igrad = Tensor::zeros({1, 16, 16});
  LabelMap labels(16, 16);
  for (auto& v : labels.v) v = int(rng.uniform_int(0, 2));
  auto gtb = Tensor::zeros({1, 16, 16});
  for (int i = 0; i < 16; ++i) gtb.data()[7 * 16 + i] = 1.0f;

  auto out = model.forward(image, igrad);
  LossConfig cfg;
  auto lb = total_loss(out.boundary, out.seg, labels, gtb, cfg, kIgnoreLabel);
  backward(lb.total);
  for (auto& [name, e] : model.params().entries())
    CHECK_MESSAGE(e.tensor.has_grad(), name);
}
