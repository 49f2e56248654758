// SPDX-License-Identifier: Apache-2.0
//
// Training objective: beta-balanced BCE on the boundary map, cross-entropy on
// the categorical map, and the dual-task regularizer built on the boundary
// potential zeta with straight-through gradients.

#pragma once

#include "gscnn/fusion.hpp"
#include "gscnn/label_map.hpp"

namespace gscnn {

struct LossConfig {
  double lambda1 = 20.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  double lambda4 = 1.0;
  double tau = 1.0;          // Gumbel temperature
  double thrs = 0.8;         // confidence threshold on s
  double zeta_sigma = 1.0;   // Gaussian sigma (px) inside zeta
  double zeta_eps = 1e-3;    // nonzero-pixel cutoff for the boundary loss
  bool reg_union = true;     // active set = union of nonzero zeta/zeta_hat pixels
};

template <typename S>
struct LossBreakdownT {
  TensorT<S> bce;
  TensorT<S> ce;
  TensorT<S> reg_fwd;
  TensorT<S> reg_bwd;
  TensorT<S> total;
};

using LossBreakdown = LossBreakdownT<float>;

constexpr double kProbClamp = 1e-7;

// -mean[ beta * s_hat * log s + (1 - beta) * (1 - s_hat) * log(1 - s) ] with
// beta the non-boundary pixel fraction (HED-style class balancing).
template <typename S>
TensorT<S> balanced_bce(const TensorT<S>& s, const TensorT<S>& gt_boundary) {
  check_same_shape("balanced_bce", s, gt_boundary);
  if (s.numel() == 0) throw std::invalid_argument("balanced_bce: empty map");
  int64_t n = s.numel();
  int64_t positives = 0;
  for (S v : gt_boundary.data()) positives += v > S(0.5) ? 1 : 0;
  S beta = static_cast<S>(double(n - positives) / double(n));

  auto sc = clamp(s, S(kProbClamp), S(1.0 - kProbClamp));
  auto one_minus_sc = add_scalar(scale(sc, S(-1)), S(1));
  auto one_minus_gt = add_scalar(scale(gt_boundary, S(-1)), S(1));
  auto pos_term = scale(mul(gt_boundary, log_op(sc)), beta);
  auto neg_term = scale(mul(one_minus_gt, log_op(one_minus_sc)), S(1) - beta);
  return scale(mean(add(pos_term, neg_term)), S(-1));
}

// Constant one-hot mask of non-ignored labels, shaped like probs.
template <typename S>
TensorT<S> onehot_mask(const LabelMap& labels, int K, int ignore_label, int64_t* count) {
  auto m = TensorT<S>::zeros(Shape{K, labels.h, labels.w});
  int64_t hw = int64_t(labels.h) * labels.w;
  int64_t c = 0;
  for (int64_t i = 0; i < hw; ++i) {
    int l = labels.v[i];
    if (l == ignore_label) continue;
    if (l < 0 || l >= K)
      throw std::invalid_argument("labels: value " + std::to_string(l) +
                                  " outside [0," + std::to_string(K) + ")");
    m.data()[l * hw + i] = S(1);
    ++c;
  }
  if (count) *count = c;
  return m;
}

// -mean over non-ignored pixels of log probs[label].
template <typename S>
TensorT<S> cross_entropy(const CategoricalMapT<S>& f, const LabelMap& labels,
                         int ignore_label) {
  if (f.probs.shape()[1] != labels.h || f.probs.shape()[2] != labels.w)
    throw std::invalid_argument("cross_entropy: probs " + shape_str(f.probs.shape()) +
                                " vs labels " + std::to_string(labels.h) + "x" +
                                std::to_string(labels.w));
  int64_t count = 0;
  auto mask = onehot_mask<S>(labels, f.K, ignore_label, &count);
  if (count == 0) throw std::invalid_argument("cross_entropy: all pixels ignored");
  auto lp = log_op(clamp(f.probs, S(kProbClamp), S(1.0 - kProbClamp)));
  return scale(sum(mul(mask, lp)), S(-1) / static_cast<S>(count));
}

// zeta = (1/sqrt(2)) * ||grad(G * argmax_k p)||, Eq-style boundary potential.
// The hard assignment comes from the straight-through op, so zeta is
// differentiable w.r.t. the logits.
template <typename S>
TensorT<S> boundary_potential(const TensorT<S>& logits, const LossConfig& cfg,
                              bool noise, uint64_t seed,
                              ArgmaxMode mode = ArgmaxMode::kHard) {
  auto hard = gumbel_hard_softmax(logits, static_cast<S>(cfg.tau), noise, seed, mode);
  auto blurred = gaussian_blur(hard, static_cast<S>(cfg.zeta_sigma));
  auto mag = sobel_gradient_magnitude(blurred);
  auto sq = sum_channels(mul(mag, mag));
  return scale(sqrt_op(sq), static_cast<S>(1.0 / std::sqrt(2.0)));
}

// One-hot logits for the GT labels; ignore pixels fall back to class 0.
template <typename S>
TensorT<S> onehot_logits_from_labels(const LabelMap& labels, int K, int ignore_label) {
  auto t = TensorT<S>::zeros(Shape{K, labels.h, labels.w});
  int64_t hw = int64_t(labels.h) * labels.w;
  for (int64_t i = 0; i < hw; ++i) {
    int l = labels.v[i];
    if (l == ignore_label || l < 0 || l >= K) l = 0;
    t.data()[l * hw + i] = S(1);
  }
  return t;
}

// GT-side potential: the identical zeta pipeline on hard GT labels, noise off.
template <typename S>
TensorT<S> gt_boundary_potential(const LabelMap& labels, int K, int ignore_label,
                                 const LossConfig& cfg) {
  auto logits = onehot_logits_from_labels<S>(labels, K, ignore_label);
  return boundary_potential(logits, cfg, /*noise=*/false, /*seed=*/0);
}

// L1 over the active pixels (zeta or zeta_hat above the cutoff; intersection
// when cfg.reg_union is false). The active set is a hard mask.
template <typename S>
TensorT<S> reg_loss_boundary(const TensorT<S>& zeta, const TensorT<S>& zeta_hat,
                             const LossConfig& cfg) {
  check_same_shape("reg_loss_boundary", zeta, zeta_hat);
  auto mask = TensorT<S>::zeros(zeta.shape());
  int64_t active = 0;
  S eps = static_cast<S>(cfg.zeta_eps);
  for (int64_t i = 0; i < zeta.numel(); ++i) {
    bool a = zeta.data()[i] > eps;
    bool b = zeta_hat.data()[i] > eps;
    if (cfg.reg_union ? (a || b) : (a && b)) {
      mask.data()[i] = S(1);
      ++active;
    }
  }
  if (active == 0) return TensorT<S>::zeros(Shape{1});
  auto diff = abs_op(sub(zeta, zeta_hat));
  return scale(sum(mul(mask, diff)), S(1) / static_cast<S>(active));
}

// Cross-entropy restricted to confident boundary pixels (s > thrs). The
// indicator is a hard mask and passes no gradient to s.
template <typename S>
TensorT<S> reg_loss_semantic(const TensorT<S>& s, const CategoricalMapT<S>& f,
                             const LabelMap& labels, int ignore_label, double thrs) {
  if (s.shape()[1] != labels.h || s.shape()[2] != labels.w)
    throw std::invalid_argument("reg_loss_semantic: boundary map extent mismatch");
  int K = f.K;
  int64_t hw = int64_t(labels.h) * labels.w;
  auto mask = TensorT<S>::zeros(Shape{K, labels.h, labels.w});
  int64_t selected = 0;
  for (int64_t i = 0; i < hw; ++i) {
    int l = labels.v[i];
    if (l == ignore_label) continue;
    if (!(double(s.data()[i]) > thrs)) continue;
    mask.data()[l * hw + i] = S(1);
    ++selected;
  }
  if (selected == 0) return TensorT<S>::zeros(Shape{1});
  auto lp = log_op(clamp(f.probs, S(kProbClamp), S(1.0 - kProbClamp)));
  return scale(sum(mul(mask, lp)), S(-1) / static_cast<S>(selected));
}

// Joint objective; reg terms are evaluated only when their weights are live.
template <typename S>
LossBreakdownT<S> total_loss(const TensorT<S>& s, const CategoricalMapT<S>& f,
                             const LabelMap& labels, const TensorT<S>& gt_boundary,
                             const LossConfig& cfg, int ignore_label,
                             bool noise = false, uint64_t seed = 0,
                             ArgmaxMode mode = ArgmaxMode::kHard) {
  LossBreakdownT<S> lb;
  lb.bce = balanced_bce(s, gt_boundary);
  lb.ce = cross_entropy(f, labels, ignore_label);
  if (cfg.lambda3 > 0 || cfg.lambda4 > 0) {
    auto zeta = boundary_potential(f.logits, cfg, noise, seed, mode);
    auto zeta_hat = gt_boundary_potential<S>(labels, f.K, ignore_label, cfg);
    lb.reg_fwd = reg_loss_boundary(zeta, zeta_hat, cfg);
    lb.reg_bwd = reg_loss_semantic(s, f, labels, ignore_label, cfg.thrs);
  } else {
    lb.reg_fwd = TensorT<S>::zeros(Shape{1});
    lb.reg_bwd = TensorT<S>::zeros(Shape{1});
  }
  lb.total = add(add(scale(lb.bce, static_cast<S>(cfg.lambda1)),
                     scale(lb.ce, static_cast<S>(cfg.lambda2))),
                 add(scale(lb.reg_fwd, static_cast<S>(cfg.lambda3)),
                     scale(lb.reg_bwd, static_cast<S>(cfg.lambda4))));
  return lb;
}

}  // namespace gscnn
