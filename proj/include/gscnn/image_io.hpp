// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "gscnn/label_map.hpp"
#include "gscnn/tensor.hpp"

namespace gscnn {

// 8-bit binary portable graymap (P5). Class index per pixel, ignore = 255.
void write_pgm(const std::string& path, const LabelMap& m);
LabelMap read_pgm(const std::string& path);

// 8-bit binary portable pixmap (P6) from a 3×H×W tensor in [0,1].
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// Grayscale map (values in [0,1], shape 1×H×W) as a PGM, values ×255.
void write_gray_pgm(const std::string& path, const Tensor& map);

}  // namespace gscnn
