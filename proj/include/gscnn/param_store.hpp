// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "gscnn/ops.hpp"
#include "gscnn/tensor.hpp"

namespace gscnn {

// Parameters are tagged by the stream that owns them.
enum class StreamTag { kRegular, kShape, kFusion };

inline const char* tag_name(StreamTag t) {
  switch (t) {
    case StreamTag::kRegular: return "regular";
    case StreamTag::kShape: return "shape";
    case StreamTag::kFusion: return "fusion";
  }
  return "?";
}

// Named map of trainable tensors. Iteration order is the sorted name order,
// which keeps checkpoints and optimizer updates deterministic.
template <typename S>
class ParameterStoreT {
 public:
  struct Entry {
    TensorT<S> tensor;
    StreamTag tag;
  };

  TensorT<S>& add(const std::string& name, TensorT<S> t, StreamTag tag) {
    t.set_requires_grad(true);
    t.set_name(name);
    auto [it, inserted] = params_.emplace(name, Entry{std::move(t), tag});
    if (!inserted) throw std::invalid_argument("parameter already registered: " + name);
    return it->second.tensor;
  }

  TensorT<S>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no such parameter: " + name);
    return it->second.tensor;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  size_t size() const { return params_.size(); }

  std::map<std::string, Entry>& entries() { return params_; }
  const std::map<std::string, Entry>& entries() const { return params_; }

  void zero_grad() {
    for (auto& [name, e] : params_) e.tensor.zero_grad();
  }

  // He fan-in scaled normal init for conv kernels.
  TensorT<S>& add_conv_kernel(const std::string& name, int cout, int cin, int k,
                              StreamTag tag, Rng& rng) {
    int64_t fan_in = int64_t(cin) * k * k;
    S std = static_cast<S>(std::sqrt(2.0 / double(fan_in)));
    return add(name, TensorT<S>::randn(Shape{cout, cin, k, k}, rng, std), tag);
  }

  TensorT<S>& add_zeros(const std::string& name, const Shape& shape, StreamTag tag) {
    return add(name, TensorT<S>::zeros(shape), tag);
  }

  TensorT<S>& add_ones(const std::string& name, const Shape& shape, StreamTag tag) {
    return add(name, TensorT<S>::filled(shape, S(1)), tag);
  }

 private:
  std::map<std::string, Entry> params_;
};

using ParameterStore = ParameterStoreT<float>;

}  // namespace gscnn
