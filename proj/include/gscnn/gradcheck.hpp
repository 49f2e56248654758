// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of the backward pass. Runs on the
// 64-bit instantiation of the engine; 32-bit floats are too noisy for
// difference quotients.

#pragma once

#include <functional>
#include <iostream>

#include "gscnn/model.hpp"
#include "gscnn/synth_data.hpp"

namespace gscnn {

struct CheckResult {
  std::string name;
  double max_rel_err;
  double tolerance;
  bool passed() const { return max_rel_err < tolerance; }
};

inline TensorT<double> to_double(const Tensor& t) {
  std::vector<double> d(t.data().begin(), t.data().end());
  return TensorT<double>::from_data(t.shape(), std::move(d));
}

// Relative error with a small-denominator guard so near-zero gradients are
// compared absolutely at the 1e-3 scale.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-3);
}

// Compares backward() against central differences on up to
// `coords_per_leaf` randomly sampled coordinates of each leaf.
inline double finite_diff_max_rel_err(
    const std::function<TensorT<double>()>& make_loss,
    const std::vector<TensorT<double>*>& leaves, int coords_per_leaf, Rng& rng,
    double h = 1e-5) {
  for (auto* l : leaves) {
    l->set_requires_grad(true);
    l->drop_grad();
  }
  auto loss = make_loss();
  backward(loss);

  double worst = 0.0;
  for (auto* leaf : leaves) {
    std::vector<double> analytic = leaf->has_grad()
                                       ? leaf->grad()
                                       : std::vector<double>(leaf->numel(), 0.0);
    int64_t n = leaf->numel();
    int count = int(std::min<int64_t>(coords_per_leaf, n));
    for (int c = 0; c < count; ++c) {
      int64_t i = n <= coords_per_leaf ? c : int64_t(rng.uniform_int(0, n - 1));
      double orig = leaf->data()[i];
      double numeric;
      {
        NoGradGuard ng;
        leaf->data()[i] = orig + h;
        double up = make_loss().item();
        leaf->data()[i] = orig - h;
        double down = make_loss().item();
        leaf->data()[i] = orig;
        numeric = (up - down) / (2 * h);
      }
      worst = std::max(worst, rel_err(analytic[i], numeric));
    }
  }
  for (auto* l : leaves) l->drop_grad();
  return worst;
}

// ---------------------------------------------------------------------------
// the op suite
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> run_gradcheck_suite(uint64_t seed = 7,
                                                    int coords = 24) {
  using T = TensorT<double>;
  std::vector<CheckResult> results;
  Rng rng(seed);

  auto rand_t = [&rng](const Shape& s, double lo = -2.0, double hi = 2.0) {
    auto t = T::zeros(s);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
  };
  auto check = [&](const std::string& name, std::function<TensorT<double>()> f,
                   std::vector<T*> leaves, double tol = 1e-4) {
    results.push_back({name, finite_diff_max_rel_err(f, leaves, coords, rng), tol});
  };

  {
    auto x = rand_t({2, 7, 9});
    auto w = rand_t({3, 2, 3, 3}, -1, 1);
    auto b = rand_t({3}, -1, 1);
    Conv2dSpec spec{2, 2, 2};
    check("conv2d", [&] { return sum(mul(conv2d(x, w, b, spec), conv2d(x, w, b, spec))); },
          {&x, &w, &b});
  }
  {
    auto x = rand_t({1, 5, 6});
    check("sigmoid", [&] { return sum(mul(sigmoid(x), sigmoid(x))); }, {&x});
  }
  {
    auto x = rand_t({4, 5, 5});
    auto c = rand_t({4, 5, 5});
    c.set_requires_grad(false);
    check("softmax_channels", [&] { return sum(mul(softmax_channels(x), c)); }, {&x});
  }
  {
    auto x = rand_t({2, 4, 5});
    check("bilinear_upsample",
          [&] { auto y = bilinear_upsample(x, 9, 11); return sum(mul(y, y)); }, {&x});
  }
  {
    auto x = rand_t({2, 8, 8});
    check("gaussian_blur",
          [&] { auto y = gaussian_blur(x, 1.3); return sum(mul(y, y)); }, {&x});
  }
  {
    auto x = rand_t({2, 8, 8});
    check("sobel_gradient_magnitude",
          [&] { return sum(mul(sobel_gradient_magnitude(x), sobel_gradient_magnitude(x))); },
          {&x});
  }
  {
    auto x = rand_t({8, 6, 6});
    auto g = rand_t({8}, 0.5, 1.5);
    auto b = rand_t({8}, -0.5, 0.5);
    check("group_norm", [&] {
      auto y = group_norm(x, g, b, 4);
      return sum(mul(y, y));
    }, {&x, &g, &b});
  }
  {
    auto s = rand_t({3, 6, 6});
    auto r = rand_t({5, 6, 6});
    auto w = rand_t({1, 8, 1, 1}, -1, 1);
    auto wb = rand_t({1}, -0.2, 0.2);
    auto gw = rand_t({3, 3, 1, 1}, -1, 1);
    // attention_map ∘ gated_conv composition (3 ops deep)
    check("attention_gated_conv", [&] {
      auto alpha = sigmoid(conv2d(concat_channels<double>({s, r}), w, wb, Conv2dSpec{}));
      auto y = gated_conv(s, alpha, gw);
      return sum(mul(y, y));
    }, {&s, &r, &w, &wb, &gw});
  }
  {
    auto logits = rand_t({3, 5, 5});
    auto c = rand_t({3, 5, 5});
    c.set_requires_grad(false);
    // straight-through estimator vs differences of the temperature softmax
    check("gumbel_soft_path", [&] {
      return sum(mul(gumbel_hard_softmax(logits, 0.7, false, 0, ArgmaxMode::kSoft), c));
    }, {&logits});
  }
  {
    auto pre = rand_t({1, 6, 6});
    auto gt = T::zeros({1, 6, 6});
    for (auto& v : gt.data()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    check("balanced_bce", [&] { return balanced_bce(sigmoid(pre), gt); }, {&pre});
  }
  {
    auto logits = rand_t({3, 6, 6});
    LabelMap labels(6, 6);
    for (auto& v : labels.v) v = int(rng.uniform_int(0, 3));  // 3 == ignored here
    for (auto& v : labels.v)
      if (v == 3) v = kIgnoreLabel;
    check("cross_entropy", [&] {
      CategoricalMapT<double> f{logits, softmax_channels(logits), 3};
      return cross_entropy(f, labels, kIgnoreLabel);
    }, {&logits});
  }
  {
    LossConfig cfg;
    cfg.zeta_sigma = 1.0;
    auto logits = rand_t({3, 8, 8});
    LabelMap labels(8, 8);
    for (auto& v : labels.v) v = int(rng.uniform_int(0, 2));
    auto zeta_hat = gt_boundary_potential<double>(labels, 3, kIgnoreLabel, cfg);
    check("boundary_potential_reg", [&] {
      auto zeta = boundary_potential(logits, cfg, false, 0, ArgmaxMode::kSoft);
      return reg_loss_boundary(zeta, zeta_hat, cfg);
    }, {&logits}, 1e-4);
  }
  return results;
}

// Full-graph check: total_loss through the whole network on a small instance,
// with the soft shadow of the hard-argmax path (the straight-through backward
// is by construction the gradient of the soft forward).
inline CheckResult run_full_graph_gradcheck(uint64_t seed = 11, int coords = 3) {
  DatasetSpec dspec;
  dspec.seed = seed;
  dspec.count = 1;
  dspec.height = 16;
  dspec.width = 16;
  dspec.num_classes = 3;
  dspec.ignore_border = 1;
  auto sample = generate_dataset(dspec)[0];

  ModelConfig mc;
  mc.num_classes = 3;
  GscnnT<double> model(mc, seed);
  auto image = to_double(sample.image);
  auto igrad = to_double(sample.image_grad);
  auto gt_boundary = TensorT<double>::zeros(Shape{1, 16, 16});
  for (size_t i = 0; i < sample.gt_boundary.v.size(); ++i)
    gt_boundary.data()[i] = sample.gt_boundary.v[i];

  LossConfig lc;
  auto make_loss = [&]() {
    auto out = model.forward(image, igrad);
    auto lb = total_loss(out.boundary, out.seg, sample.labels, gt_boundary, lc,
                         kIgnoreLabel, false, 0, ArgmaxMode::kSoft);
    return lb.total;
  };
  std::vector<TensorT<double>*> leaves;
  for (auto& [name, e] : model.params().entries()) leaves.push_back(&e.tensor);
  Rng rng(seed);
  double err = finite_diff_max_rel_err(make_loss, leaves, coords, rng);
  return {"total_loss_full_graph", err, 1e-3};
}

}  // namespace gscnn
