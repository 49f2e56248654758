// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gscnn {

constexpr int kIgnoreLabel = 255;

// Integer label image, row major.
struct LabelMap {
  int h = 0;
  int w = 0;
  std::vector<int> v;

  LabelMap() = default;
  LabelMap(int h_, int w_, int fill = 0) : h(h_), w(w_), v(size_t(h_) * w_, fill) {}

  int& at(int y, int x) { return v[size_t(y) * w + x]; }
  int at(int y, int x) const { return v[size_t(y) * w + x]; }
  size_t size() const { return v.size(); }

  bool operator==(const LabelMap& o) const { return h == o.h && w == o.w && v == o.v; }
};

inline void check_same_extent(const char* op, const LabelMap& a, const LabelMap& b) {
  if (a.h != b.h || a.w != b.w)
    throw std::invalid_argument(std::string(op) + ": extent mismatch " +
                                std::to_string(a.h) + "x" + std::to_string(a.w) + " vs " +
                                std::to_string(b.h) + "x" + std::to_string(b.w));
}

}  // namespace gscnn
