// SPDX-License-Identifier: Apache-2.0
//
// Binary formats: "GSTN" tensor records and the "GSCK" checkpoint container.
// Everything is little-endian.

#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "gscnn/tensor.hpp"

namespace gscnn {

// GSTN: magic, u32 version, u32 rank, u64 extents, raw 32-bit floats.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// GSCK: magic, u32 version, config blob, u32 epoch, named GSTN records.
struct Checkpoint {
  std::string config_text;
  uint32_t epoch = 0;
  std::map<std::string, Tensor> tensors;  // parameters and optimizer state
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace gscnn
