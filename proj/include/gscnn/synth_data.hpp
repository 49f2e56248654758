// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic segmentation data: layered colored shapes with
// mandatory thin structures, plus the Canny-style image gradient input.

#pragma once

#include <string>
#include <vector>

#include "gscnn/label_map.hpp"
#include "gscnn/tensor.hpp"

namespace gscnn {

struct SegSample {
  Tensor image;        // 3×H×W in [0,1]
  LabelMap labels;     // values in [0,K) ∪ {255}
  LabelMap gt_boundary;  // binary, supervision radius applied
  Tensor image_grad;   // 1×H×W in {0,1}
};

struct DatasetSpec {
  uint64_t seed = 1;
  int count = 100;
  int height = 64;
  int width = 64;
  int num_classes = 5;
  double noise_amplitude = 0.04;
  int ignore_border = 2;        // void ring at the image edge
  int supervision_radius = 2;   // boundary thickness for the BCE target
};

// Layered random shapes (rectangles, ellipses, 1-3 px thin bars, small
// blobs); later shapes occlude earlier ones. Every class 1..K-1 appears in
// every sample and at least one thin bar is always present.
std::vector<SegSample> generate_dataset(const DatasetSpec& spec);

// Canny-style edge input: grayscale, Gaussian sigma 1, Sobel magnitude,
// double-threshold hysteresis (0.2/0.1 of the max). Binary output, not
// differentiated.
Tensor image_gradient(const Tensor& image);

// Derived fields (boundary target, gradient input) for an image/label pair.
SegSample make_sample(Tensor image, LabelMap labels, int supervision_radius);

// Dataset directory layout: images/NNNN.ppm, labels/NNNN.pgm, manifest.txt.
void write_dataset(const std::string& dir, const DatasetSpec& spec,
                   const std::vector<SegSample>& samples);

struct Dataset {
  int num_classes = 0;
  int height = 0, width = 0;
  std::vector<SegSample> samples;
};

Dataset load_dataset(const std::string& dir, int supervision_radius = 2);

// Stable hash of the generation parameters, recorded in the manifest.
uint64_t spec_hash(const DatasetSpec& spec);

}  // namespace gscnn
