// SPDX-License-Identifier: Apache-2.0
//
// Fusion module: atrous spatial pyramid pooling over the regular-stream
// features with the boundary map injected both at stride 8 (inside ASPP) and
// at full resolution before the logits.

#pragma once

#include <optional>

#include "gscnn/streams.hpp"

namespace gscnn {

template <typename S>
struct CategoricalMapT {
  TensorT<S> logits;  // K×H×W
  TensorT<S> probs;   // softmax of logits, per pixel
  int K = 0;
};

using CategoricalMap = CategoricalMapT<float>;

template <typename S>
class FusionAsppT {
 public:
  static constexpr int kBranchChannels = 64;
  static constexpr int kRefineChannels = 24;
  static constexpr std::array<int, 3> kDilations{2, 4, 8};

  // with_boundary/with_grad fix the input channel counts, so the flag set is
  // part of the parameter shapes (and of the checkpoint).
  FusionAsppT(ParameterStoreT<S>& ps, Rng& rng, int feature_channels, int num_classes,
              bool with_boundary, bool with_grad, int stem_channels = 0)
      : num_classes_(num_classes), with_boundary_(with_boundary), with_grad_(with_grad),
        stem_channels_(with_boundary ? stem_channels : 0) {
    if (num_classes < 2)
      throw std::invalid_argument("fusion: need at least 2 classes, got " +
                                  std::to_string(num_classes));
    const auto tag = StreamTag::kFusion;
    int cin = feature_channels + (with_boundary ? 1 : 0) + (with_grad ? 1 : 0);
    const int B = kBranchChannels;
    b1x1_ = ConvLayer<S>::create(ps, "fusion.aspp.b1x1", cin, B, 1, tag, rng);
    b1x1_norm_ = NormLayer<S>::create(ps, "fusion.aspp.b1x1_norm", B, tag);
    for (int i = 0; i < 3; ++i) {
      int d = kDilations[i];
      std::string name = "fusion.aspp.b3x3_d" + std::to_string(d);
      atrous_[i] = ConvLayer<S>::create(ps, name, cin, B, 3, tag, rng, Conv2dSpec{1, d, d});
      atrous_norm_[i] = NormLayer<S>::create(ps, name + "_norm", B, tag);
    }
    pool_ = ConvLayer<S>::create(ps, "fusion.aspp.pool", cin, B, 1, tag, rng);
    merge_ = ConvLayer<S>::create(ps, "fusion.merge", 5 * B, B, 1, tag, rng);
    merge_norm_ = NormLayer<S>::create(ps, "fusion.merge_norm", B, tag);
    logits_ = ConvLayer<S>::create(ps, "fusion.logits", B, num_classes, 1, tag, rng);
    if (with_boundary) {
      // Full-resolution refinement. The coarse decision can sit several
      // pixels off the true edge after the 8x upsample; three stacked 3x3
      // convs (the middle one dilated) give the head enough reach to snap
      // it onto the boundary map, and the stem features carry the low-level
      // detail the stride-8 path has lost.
      const int R = kRefineChannels;
      refine1_ = ConvLayer<S>::create(ps, "fusion.refine1", B + 1 + stem_channels_, R, 3,
                                      tag, rng, Conv2dSpec{1, 1, 1});
      refine2_ = ConvLayer<S>::create(ps, "fusion.refine2", R + 1, R, 3, tag, rng,
                                      Conv2dSpec{1, 2, 2});
      refine3_ = ConvLayer<S>::create(ps, "fusion.refine3", R + 1, num_classes, 3, tag,
                                      rng, Conv2dSpec{1, 1, 1});
    }
  }

  // features at stride 8; boundary, extra_grad and stem at full resolution.
  // The output is softmaxed at full resolution.
  CategoricalMapT<S> forward(const TensorT<S>& features, const TensorT<S>* boundary,
                             const TensorT<S>* extra_grad, const TensorT<S>* stem,
                             int out_h, int out_w) const {
    if (with_boundary_ != (boundary != nullptr))
      throw std::invalid_argument("fusion: boundary input does not match module configuration");
    if (with_grad_ != (extra_grad != nullptr))
      throw std::invalid_argument("fusion: gradient input does not match module configuration");
    if ((stem_channels_ > 0) != (stem != nullptr))
      throw std::invalid_argument("fusion: stem input does not match module configuration");
    int h = features.shape()[1], w = features.shape()[2];

    std::vector<TensorT<S>> in_parts{features};
    if (boundary) in_parts.push_back(bilinear_resize(*boundary, h, w));
    if (extra_grad) in_parts.push_back(bilinear_resize(*extra_grad, h, w));
    auto x = in_parts.size() == 1 ? in_parts[0] : concat_channels(in_parts);

    std::vector<TensorT<S>> branches;
    branches.push_back(relu(b1x1_norm_.forward(b1x1_.forward(x))));
    for (int i = 0; i < 3; ++i)
      branches.push_back(relu(atrous_norm_[i].forward(atrous_[i].forward(x))));
    branches.push_back(broadcast_spatial(relu(pool_.forward(global_avg_pool(x))), h, w));

    auto prelogit = relu(merge_norm_.forward(merge_.forward(concat_channels(branches))));
    auto logits = bilinear_upsample(logits_.forward(prelogit), out_h, out_w);
    if (boundary) {
      auto up = bilinear_upsample(prelogit, out_h, out_w);
      std::vector<TensorT<S>> r1{up, *boundary};
      if (stem) r1.push_back(*stem);
      auto r = relu(refine1_.forward(concat_channels<S>(r1)));
      r = relu(refine2_.forward(concat_channels<S>({r, *boundary})));
      auto refined = refine3_.forward(concat_channels<S>({r, *boundary}));
      logits = add(logits, refined);
    }
    CategoricalMapT<S> out;
    out.logits = logits;
    out.probs = softmax_channels(logits);
    out.K = num_classes_;
    return out;
  }

 private:
  int num_classes_;
  bool with_boundary_;
  bool with_grad_;
  int stem_channels_ = 0;
  ConvLayer<S> b1x1_;
  NormLayer<S> b1x1_norm_;
  std::array<ConvLayer<S>, 3> atrous_;
  std::array<NormLayer<S>, 3> atrous_norm_;
  ConvLayer<S> pool_;
  ConvLayer<S> merge_;
  NormLayer<S> merge_norm_;
  ConvLayer<S> logits_;
  ConvLayer<S> refine1_;
  ConvLayer<S> refine2_;
  ConvLayer<S> refine3_;
};

using FusionAspp = FusionAsppT<float>;

}  // namespace gscnn
