// SPDX-License-Identifier: Apache-2.0
//
// The assembled two-stream network: regular stream, optional gated shape
// stream, and the ASPP fusion head.

#pragma once

#include <optional>

#include "gscnn/fusion.hpp"
#include "gscnn/losses.hpp"
#include "gscnn/serialize.hpp"
#include "gscnn/streams.hpp"

namespace gscnn {

struct ModelConfig {
  int num_classes = 5;
  bool shape_stream = true;     // off = baseline (regular stream + fusion only)
  bool gradients_input = true;  // feed the image gradient into the fusion module
};

template <typename S>
class GscnnT {
 public:
  GscnnT(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    // baseline mode has no shape stream and therefore no boundary/grad inputs
    if (!cfg_.shape_stream) cfg_.gradients_input = false;
    Rng rng(seed);
    regular_.emplace(params_, rng);
    if (cfg_.shape_stream) shape_.emplace(params_, rng);
    fusion_.emplace(params_, rng, RegularStreamT<S>::kTapChannels[2], cfg_.num_classes,
                    /*with_boundary=*/cfg_.shape_stream, /*with_grad=*/cfg_.gradients_input,
                    /*stem_channels=*/RegularStreamT<S>::kStemChannels);
  }

  struct Output {
    CategoricalMapT<S> seg;
    TensorT<S> boundary;  // undefined in baseline mode
  };

  Output forward(const TensorT<S>& image, const TensorT<S>& image_grad) const {
    int H = image.shape()[1], W = image.shape()[2];
    auto bb = regular_->forward(image);
    Output out;
    if (cfg_.shape_stream) {
      out.boundary = shape_->forward(bb.first_conv, bb.taps, image_grad);
      out.seg = fusion_->forward(bb.features, &out.boundary,
                                 cfg_.gradients_input ? &image_grad : nullptr,
                                 &bb.first_conv, H, W);
    } else {
      out.seg = fusion_->forward(bb.features, nullptr, nullptr, nullptr, H, W);
    }
    return out;
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStoreT<S>& params() { return params_; }
  const ParameterStoreT<S>& params() const { return params_; }
  const RegularStreamT<S>& regular() const { return *regular_; }

 private:
  ModelConfig cfg_;
  ParameterStoreT<S> params_;
  std::optional<RegularStreamT<S>> regular_;
  std::optional<ShapeStreamT<S>> shape_;
  std::optional<FusionAsppT<S>> fusion_;
};

using Gscnn = GscnnT<float>;

// Copies checkpoint tensors into the model parameters (names and shapes must
// match exactly).
inline void load_parameters(Gscnn& model, const std::map<std::string, Tensor>& tensors) {
  for (auto& [name, entry] : model.params().entries()) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw std::runtime_error("checkpoint is missing parameter: " + name);
    if (it->second.shape() != entry.tensor.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + name + ": " +
                               shape_str(it->second.shape()) + " vs " +
                               shape_str(entry.tensor.shape()));
    entry.tensor.data() = it->second.data();
  }
}

}  // namespace gscnn
