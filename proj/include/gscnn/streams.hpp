// SPDX-License-Identifier: Apache-2.0
//
// The two network streams: a small residual backbone (regular stream) and the
// full-resolution gated shape stream.

#pragma once

#include <array>

#include "gscnn/param_store.hpp"

namespace gscnn {

// ---------------------------------------------------------------------------
// layer building blocks
// ---------------------------------------------------------------------------

template <typename S>
struct ConvLayer {
  TensorT<S>* w = nullptr;
  TensorT<S>* b = nullptr;  // optional
  Conv2dSpec spec;

  static ConvLayer create(ParameterStoreT<S>& ps, const std::string& name, int cin,
                          int cout, int k, StreamTag tag, Rng& rng, Conv2dSpec spec = {},
                          bool bias = true) {
    ConvLayer l;
    l.w = &ps.add_conv_kernel(name + ".w", cout, cin, k, tag, rng);
    if (bias) l.b = &ps.add_zeros(name + ".b", Shape{cout}, tag);
    l.spec = spec;
    return l;
  }

  TensorT<S> forward(const TensorT<S>& x) const { return conv2d(x, *w, b, spec); }
};

template <typename S>
struct NormLayer {
  TensorT<S>* gamma = nullptr;
  TensorT<S>* beta = nullptr;
  int groups = 8;

  static NormLayer create(ParameterStoreT<S>& ps, const std::string& name, int c,
                          StreamTag tag, int groups = 8) {
    NormLayer l;
    l.gamma = &ps.add_ones(name + ".gamma", Shape{c}, tag);
    l.beta = &ps.add_zeros(name + ".beta", Shape{c}, tag);
    l.groups = groups;
    return l;
  }

  TensorT<S> forward(const TensorT<S>& x) const {
    return group_norm(x, *gamma, *beta, groups);
  }
};

// Two 3×3 convs with group norm, identity shortcut (1×1 projection when the
// channel count or stride changes).
template <typename S>
struct ResBlock {
  ConvLayer<S> conv1, conv2;
  NormLayer<S> norm1, norm2;
  bool has_proj = false;
  ConvLayer<S> proj;
  NormLayer<S> proj_norm;

  static ResBlock create(ParameterStoreT<S>& ps, const std::string& name, int cin,
                         int cout, int stride, int dilation, StreamTag tag, Rng& rng) {
    ResBlock b;
    Conv2dSpec s1{stride, dilation, dilation};
    Conv2dSpec s2{1, dilation, dilation};
    b.conv1 = ConvLayer<S>::create(ps, name + ".conv1", cin, cout, 3, tag, rng, s1);
    b.norm1 = NormLayer<S>::create(ps, name + ".norm1", cout, tag);
    b.conv2 = ConvLayer<S>::create(ps, name + ".conv2", cout, cout, 3, tag, rng, s2);
    b.norm2 = NormLayer<S>::create(ps, name + ".norm2", cout, tag);
    if (cin != cout || stride != 1) {
      b.has_proj = true;
      b.proj = ConvLayer<S>::create(ps, name + ".proj", cin, cout, 1, tag, rng,
                                    Conv2dSpec{stride, 1, 0}, /*bias=*/false);
      b.proj_norm = NormLayer<S>::create(ps, name + ".proj_norm", cout, tag);
    }
    return b;
  }

  TensorT<S> forward(const TensorT<S>& x) const {
    auto y = relu(norm1.forward(conv1.forward(x)));
    y = norm2.forward(conv2.forward(y));
    auto sc = has_proj ? proj_norm.forward(proj.forward(x)) : x;
    return relu(add(y, sc));
  }
};

// ---------------------------------------------------------------------------
// regular stream
// ---------------------------------------------------------------------------

template <typename S>
struct BackboneOutputT {
  TensorT<S> first_conv;               // stem output, stride 1
  std::array<TensorT<S>, 3> taps;      // stages 3, 4, 5
  TensorT<S> features;                 // == taps[2], output stride 8
};

using BackboneOutput = BackboneOutputT<float>;

// Stem 3×3 conv (16 channels) followed by five residual stages with channels
// 16,32,64,128,128 and strides 1,2,2,2,1; the final stage is dilated ×2 so the
// output stride stays 8.
template <typename S>
class RegularStreamT {
 public:
  static constexpr int kStemChannels = 16;
  static constexpr int kOutputStride = 8;
  static constexpr std::array<int, 3> kTapChannels{64, 128, 128};

  RegularStreamT(ParameterStoreT<S>& ps, Rng& rng) {
    const auto tag = StreamTag::kRegular;
    stem_ = ConvLayer<S>::create(ps, "regular.stem", 3, 16, 3, tag, rng, Conv2dSpec{1, 1, 1});
    stem_norm_ = NormLayer<S>::create(ps, "regular.stem_norm", 16, tag);
    const int chans[6] = {16, 16, 32, 64, 128, 128};
    const int strides[5] = {1, 2, 2, 2, 1};
    const int dils[5] = {1, 1, 1, 1, 2};
    for (int i = 0; i < 5; ++i)
      stages_[i] = ResBlock<S>::create(ps, "regular.stage" + std::to_string(i + 1),
                                       chans[i], chans[i + 1], strides[i], dils[i], tag, rng);
  }

  BackboneOutputT<S> forward(const TensorT<S>& image) const {
    const Shape& is = image.shape();
    if (is.size() != 3 || is[0] != 3)
      throw std::invalid_argument("backbone: image must be 3×H×W, got " + shape_str(is));
    if (is[1] % 8 != 0 || is[2] % 8 != 0)
      throw std::invalid_argument("backbone: H and W must be divisible by 8, got " +
                                  shape_str(is));
    BackboneOutputT<S> out;
    auto x = relu(stem_norm_.forward(stem_.forward(image)));
    out.first_conv = x;
    for (int i = 0; i < 5; ++i) {
      x = stages_[i].forward(x);
      if (i >= 2) out.taps[i - 2] = x;
    }
    out.features = out.taps[2];
    return out;
  }

 private:
  ConvLayer<S> stem_;
  NormLayer<S> stem_norm_;
  std::array<ResBlock<S>, 5> stages_;
};

using RegularStream = RegularStreamT<float>;

// ---------------------------------------------------------------------------
// shape stream with gated convolutional layers
// ---------------------------------------------------------------------------

// alpha = sigmoid(C_1x1(norm(s_t || r_t))); the 1×1 conv maps Cs+Cr -> 1.
template <typename S>
struct AttentionMap {
  NormLayer<S> norm;
  ConvLayer<S> conv;
  bool use_norm = true;

  static AttentionMap create(ParameterStoreT<S>& ps, const std::string& name, int cs,
                             int cr, StreamTag tag, Rng& rng) {
    AttentionMap a;
    a.norm = NormLayer<S>::create(ps, name + ".norm", cs + cr, tag);
    a.conv = ConvLayer<S>::create(ps, name + ".conv", cs + cr, 1, 1, tag, rng);
    return a;
  }

  TensorT<S> forward(const TensorT<S>& s_t, const TensorT<S>& r_t) const {
    if (s_t.shape()[1] != r_t.shape()[1] || s_t.shape()[2] != r_t.shape()[2])
      throw std::invalid_argument("attention_map: spatial mismatch " + shape_str(s_t.shape()) +
                                  " vs " + shape_str(r_t.shape()) +
                                  "; upsample the regular-stream tap first");
    auto cat = concat_channels<S>({s_t, r_t});
    if (use_norm) cat = norm.forward(cat);
    return sigmoid(conv.forward(cat));
  }
};

// s_hat = ((s ⊙ alpha) + s)^T w_t — elementwise gate, residual add, then a
// 1×1 channel-mixing conv.
template <typename S>
TensorT<S> gated_conv(const TensorT<S>& s_t, const TensorT<S>& alpha,
                      const TensorT<S>& w_t) {
  auto gated = add(mul_channel_broadcast(s_t, alpha), s_t);
  return conv2d<S>(gated, w_t, nullptr, Conv2dSpec{});
}

template <typename S>
class ShapeStreamT {
 public:
  static constexpr int kWidth = 16;

  ShapeStreamT(ParameterStoreT<S>& ps, Rng& rng, int first_conv_channels = 16) {
    const auto tag = StreamTag::kShape;
    entry_ = ConvLayer<S>::create(ps, "shape.entry", first_conv_channels, kWidth, 1, tag, rng);
    for (int t = 0; t < 3; ++t) {
      std::string base = "shape.gcl" + std::to_string(t + 1);
      blocks_[t] = ResBlock<S>::create(ps, base + ".res", kWidth, kWidth, 1, 1, tag, rng);
      attn_[t] = AttentionMap<S>::create(ps, base + ".attn", kWidth,
                                         RegularStreamT<S>::kTapChannels[t], tag, rng);
      gate_w_[t] = &ps.add_conv_kernel(base + ".gate.w", kWidth, kWidth, 1, tag, rng);
    }
    head_ = ConvLayer<S>::create(ps, "shape.head", kWidth, 1, 1, tag, rng);
    fuse_grad_ = ConvLayer<S>::create(ps, "shape.fuse_grad", 2, 1, 1, tag, rng);
  }

  // Returns the boundary map s as a 1×H×W tensor with values in (0, 1).
  TensorT<S> forward(const TensorT<S>& first_conv,
                     const std::array<TensorT<S>, 3>& taps,
                     const TensorT<S>& image_grad) const {
    int H = first_conv.shape()[1], W = first_conv.shape()[2];
    if (image_grad.shape() != Shape{1, H, W})
      throw std::invalid_argument("shape stream: image_grad must be 1×" + std::to_string(H) +
                                  "×" + std::to_string(W) + ", got " +
                                  shape_str(image_grad.shape()));
    auto x = entry_.forward(first_conv);
    for (int t = 0; t < 3; ++t) {
      x = blocks_[t].forward(x);
      auto r_t = bilinear_upsample(taps[t], H, W);
      auto alpha = attn_[t].forward(x, r_t);
      x = gated_conv(x, alpha, *gate_w_[t]);
    }
    auto pre = head_.forward(x);
    auto cat = concat_channels<S>({pre, image_grad});
    return sigmoid(fuse_grad_.forward(cat));
  }

 private:
  ConvLayer<S> entry_;
  std::array<ResBlock<S>, 3> blocks_;
  std::array<AttentionMap<S>, 3> attn_;
  std::array<TensorT<S>*, 3> gate_w_{};
  ConvLayer<S> head_;
  ConvLayer<S> fuse_grad_;
};

using ShapeStream = ShapeStreamT<float>;

}  // namespace gscnn
